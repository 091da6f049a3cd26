//! Pixel-space objectives: masked reconstruction, boundary, and path efficiency.

use crate::error::{Error, Result};
use crate::geometry::{PathSequence, BETA_OFFSET, PARAMS_PER_PATH};
use crate::raster::{RasterImage, RenderConfig, RenderMode, RenderTape};
use crate::superpixel::SuperpixelPatch;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_bound: f64,
    pub lambda_pe: f64,
    /// Initial weight of the path-alignment term; annealed during refinement.
    pub lambda_dpw: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_bound: 1.0,
            lambda_pe: 1e-3,
            lambda_dpw: 1e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_bound", self.lambda_bound),
            ("lambda_pe", self.lambda_pe),
            ("lambda_dpw", self.lambda_dpw),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// `Σ_p mask(p) · mean_c (x̂ - x)² / (w·h)` and its gradient with respect to
/// the rendered pixels.
pub fn recon_loss(rendered: &RasterImage, target: &SuperpixelPatch) -> Result<(f64, RasterImage)> {
    rendered.check_same_shape(&target.image)?;
    let (w, h) = (rendered.width, rendered.height);
    if (target.mask.width, target.mask.height) != (w, h) {
        return Err(Error::shape(
            format!("{w}x{h} mask"),
            format!("{}x{}", target.mask.width, target.mask.height),
        ));
    }
    let ch = rendered.channels;
    let norm = 1.0 / (w * h) as f64;
    let mut grad = RasterImage::new(w, h, ch);
    let mut loss = 0.0;
    for (i, &m) in target.mask.data.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        for c in 0..ch {
            let k = i * ch + c;
            let e = rendered.data[k] - target.image.data[k];
            loss += m * e * e / ch as f64;
            grad.data[k] = 2.0 * m * e * norm / ch as f64;
        }
    }
    Ok((loss * norm, grad))
}

/// Mean over all pixels of `render_binary(seq) · (1 - mask)` and its gradient
/// with respect to the path parameters.
pub fn boundary_loss(
    seq: &PathSequence,
    mask: &RasterImage,
    cfg: &RenderConfig,
) -> Result<(f64, Vec<f64>)> {
    if mask.channels != 1 {
        return Err(Error::shape(
            "1-channel mask",
            format!("{} channels", mask.channels),
        ));
    }
    if mask.data.iter().all(|&m| m == 1.0) {
        return Ok((0.0, vec![0.0; seq.param_count()]));
    }
    let tape = RenderTape::record(seq, mask.width, mask.height, cfg, RenderMode::Binary)?;
    let norm = 1.0 / mask.pixel_count() as f64;
    let outside = RasterImage {
        data: mask.data.iter().map(|m| (1.0 - m) * norm).collect(),
        ..mask.clone()
    };
    let value = tape
        .image()
        .data
        .iter()
        .zip(&outside.data)
        .map(|(a, b)| a * b)
        .sum();
    let grad = tape.backward(&outside)?;
    Ok((value, grad))
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `Σ_i Sign(β_i - 0.5)` with `Sign(0) = 0`, and the surrogate derivative
/// `Sig(β_i)(1 - Sig(β_i))` per path.
pub fn path_efficiency_loss(seq: &PathSequence) -> (f64, Vec<f64>) {
    let value = seq
        .iter()
        .map(|p| {
            let d = p.beta - 0.5;
            if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .sum();
    let grad = seq
        .iter()
        .map(|p| {
            let s = logistic(p.beta);
            s * (1.0 - s)
        })
        .collect();
    (value, grad)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveTerms {
    pub recon: f64,
    pub boundary: f64,
    pub efficiency: f64,
    pub total: f64,
}

/// `recon + λ_Bound·boundary + λ_PE·efficiency` with the gradient over all
/// path parameters. Also returns the rendered patch.
pub fn coarse_objective(
    seq: &PathSequence,
    patch: &SuperpixelPatch,
    weights: &LossWeights,
    cfg: &RenderConfig,
) -> Result<(ObjectiveTerms, Vec<f64>)> {
    weights.validate()?;
    let (w, h) = patch.size;
    let tape = RenderTape::record(seq, w, h, cfg, RenderMode::Color)?;
    let (recon, upstream) = recon_loss(tape.image(), patch)?;
    let mut grad = tape.backward(&upstream)?;
    let mut terms = ObjectiveTerms {
        recon,
        ..Default::default()
    };
    if weights.lambda_bound > 0.0 {
        let (b, bgrad) = boundary_loss(seq, &patch.mask, cfg)?;
        terms.boundary = b;
        for (g, bg) in grad.iter_mut().zip(&bgrad) {
            *g += weights.lambda_bound * bg;
        }
    }
    let (pe, pgrad) = path_efficiency_loss(seq);
    terms.efficiency = pe;
    if weights.lambda_pe > 0.0 {
        for (k, pg) in pgrad.iter().enumerate() {
            grad[k * PARAMS_PER_PATH + BETA_OFFSET] += weights.lambda_pe * pg;
        }
    }
    terms.total = recon + weights.lambda_bound * terms.boundary + weights.lambda_pe * pe;
    Ok((terms, grad))
}
