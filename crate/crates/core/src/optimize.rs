//! Direct parameter optimization of path sequences: coarse fitting, refinement
//! over a fixed canvas with optional path-space guidance, the full-image
//! pipeline, and the two alignment experiments.

use std::io::Write;
use std::path::Path as FsPath;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dpw::{alignment_loss, path_distance, AlignmentKind};
use crate::error::{Error, Result};
use crate::geometry::{
    ClosedPath, PathSequence, Point, BETA_OFFSET, COLOR_OFFSET, CONTROL_POINTS, PARAMS_PER_PATH,
};
use crate::losses::{boundary_loss, coarse_objective, recon_loss, LossWeights};
use crate::raster::{render, render_binary, RasterImage, RenderConfig, RenderMode, RenderTape};
use crate::superpixel::{extract_patch, SuperpixelConfig, SuperpixelMap, SuperpixelPatch};

/// Paths added per refinement round.
pub const REFINE_BATCH: usize = 8;

/// Initial beta of freshly placed paths.
pub const INIT_BETA: f64 = 0.8;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    /// Step size for coordinates and beta.
    pub learning_rate: f64,
    /// Step size for colors.
    pub color_learning_rate: f64,
    pub steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Learning rates decay linearly to this fraction of their start value.
    pub final_lr_fraction: f64,
    pub dpw_gamma: f64,
    /// Steps over which the path-alignment weight falls to zero.
    pub dpw_decay_steps: usize,
    pub seed: u64,
    /// Keep a copy of the paths every this many steps (0 keeps none).
    pub snapshot_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 2e-2,
            color_learning_rate: 5e-2,
            steps: 500,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            final_lr_fraction: 0.1,
            dpw_gamma: 0.1,
            dpw_decay_steps: 10_000,
            seed: 0,
            snapshot_every: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.learning_rate > 0.0 && self.color_learning_rate > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return bad(format!(
                "adam betas must lie in [0, 1), got {} and {}",
                self.adam_beta1, self.adam_beta2
            ));
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return bad(format!(
                "final_lr_fraction must lie in (0, 1], got {}",
                self.final_lr_fraction
            ));
        }
        if !(self.dpw_gamma >= 0.0) {
            return bad(format!(
                "dpw_gamma must be non-negative, got {}",
                self.dpw_gamma
            ));
        }
        Ok(())
    }

    fn lr_scale(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            return 1.0;
        }
        let t = step as f64 / (self.steps - 1) as f64;
        1.0 + (self.final_lr_fraction - 1.0) * t
    }
}

/// Adam with a per-parameter base step size.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(lr: Vec<f64>, beta1: f64, beta2: f64, eps: f64) -> Adam {
        let n = lr.len();
        Adam {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// Rates for `n_paths` paths: color entries get `color_lr`, the rest `lr`.
    pub fn for_paths(n_paths: usize, opt: &OptimizerConfig) -> Adam {
        let lr = (0..n_paths * PARAMS_PER_PATH)
            .map(|k| {
                let i = k % PARAMS_PER_PATH;
                if (COLOR_OFFSET..BETA_OFFSET).contains(&i) {
                    opt.color_learning_rate
                } else {
                    opt.learning_rate
                }
            })
            .collect();
        Adam::new(lr, opt.adam_beta1, opt.adam_beta2, opt.adam_eps)
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], scale: f64) {
        assert_eq!(params.len(), self.lr.len());
        assert_eq!(grad.len(), self.lr.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            params[k] -= scale * self.lr[k] * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageResult {
    pub paths: PathSequence,
    /// Objective value before each step.
    pub loss_history: Vec<f64>,
    pub visible_count: usize,
    /// `(step, paths before that step)`, plus the final paths.
    pub snapshots: Vec<(usize, PathSequence)>,
}

impl StageResult {
    fn new(paths: PathSequence, loss_history: Vec<f64>) -> StageResult {
        let visible_count = paths.visible_count();
        StageResult {
            paths,
            loss_history,
            visible_count,
            snapshots: Vec::new(),
        }
    }

    pub fn write_loss_csv(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "step,loss")?;
        for (i, l) in self.loss_history.iter().enumerate() {
            writeln!(f, "{i},{l}")?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Linear anneal from `lambda0` at step 0 to exactly 0 at `decay_steps`.
pub fn lambda_dpw_at(lambda0: f64, step: usize, decay_steps: usize) -> f64 {
    if step >= decay_steps {
        0.0
    } else {
        lambda0 * (1.0 - step as f64 / decay_steps as f64)
    }
}

/// Runs Adam on a path sequence. `objective(step, seq)` returns the loss and
/// its gradient. Stops early once `deadline` passes.
fn descend(
    stage: &'static str,
    init: PathSequence,
    opt: &OptimizerConfig,
    deadline: Option<Instant>,
    mut objective: impl FnMut(usize, &PathSequence) -> Result<(f64, Vec<f64>)>,
) -> Result<StageResult> {
    opt.validate()?;
    let mut seq = init;
    seq.clamp();
    let mut adam = Adam::for_paths(seq.len(), opt);
    let mut params = seq.params();
    let mut history = Vec::with_capacity(opt.steps);
    let mut snapshots = Vec::new();
    for step in 0..opt.steps {
        if opt.snapshot_every > 0 && step % opt.snapshot_every == 0 {
            snapshots.push((step, seq.clone()));
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            log::info!("{stage}: time budget reached after {step} steps");
            break;
        }
        let (loss, grad) = objective(step, &seq)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                stage,
                step,
                value: loss,
            });
        }
        history.push(loss);
        if step % 100 == 0 || step + 1 == opt.steps {
            log::debug!(
                "{{\"stage\":\"{stage}\",\"step\":{step},\"loss\":{loss:.6e},\"visible\":{}}}",
                seq.visible_count()
            );
        }
        adam.step(&mut params, &grad, opt.lr_scale(step));
        seq = PathSequence::from_params(&params)?;
        seq.clamp();
        params = seq.params();
    }
    if opt.snapshot_every > 0 {
        snapshots.push((history.len(), seq.clone()));
    }
    let mut result = StageResult::new(seq, history);
    result.snapshots = snapshots;
    Ok(result)
}

/// Places `n` small near-circular paths on the patch.
pub fn init_paths(patch: &SuperpixelPatch, n: usize, seed: u64) -> Result<PathSequence> {
    let residual = color_spread_residual(patch);
    init_from_residual(patch, &residual, n, seed)
}

/// Squared distance of each masked pixel to the mean masked color.
fn color_spread_residual(patch: &SuperpixelPatch) -> Vec<f64> {
    let area = patch.mask_area().max(1.0);
    let mut mean = [0.0; 3];
    for (i, &m) in patch.mask.data.iter().enumerate() {
        for c in 0..3 {
            mean[c] += m * patch.image.data[3 * i + c];
        }
    }
    let mean = mean.map(|v| v / area);
    patch
        .mask
        .data
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            m * (0..3)
                .map(|c| (patch.image.data[3 * i + c] - mean[c]).powi(2))
                .sum::<f64>()
        })
        .collect()
}

/// Squared error of `current` against the patch, per pixel, inside the mask.
fn error_residual(patch: &SuperpixelPatch, current: &RasterImage) -> Vec<f64> {
    patch
        .mask
        .data
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            m * (0..3)
                .map(|c| (patch.image.data[3 * i + c] - current.data[3 * i + c]).powi(2))
                .sum::<f64>()
        })
        .collect()
}

/// Greedy placement: each pick maximizes residual times distance to the
/// nearest earlier pick. Exact ties go to the pixel closest to the mask
/// centroid.
fn init_from_residual(
    patch: &SuperpixelPatch,
    residual: &[f64],
    n: usize,
    seed: u64,
) -> Result<PathSequence> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    let (w, h) = patch.size;
    let support: Vec<usize> = (0..w * h).filter(|&i| patch.mask.data[i] > 0.0).collect();
    if support.is_empty() {
        return Err(Error::InvalidArgument("patch mask is empty".into()));
    }
    let n = if n > support.len() {
        log::warn!(
            "{n} paths requested for a {}-pixel mask; using {}",
            support.len(),
            support.len()
        );
        support.len()
    } else {
        n
    };
    let pos = |i: usize| Point::new((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
    let centroid = support
        .iter()
        .fold(Point::default(), |acc, &i| acc + pos(i))
        * (1.0 / support.len() as f64);
    let rmax = support.iter().map(|&i| residual[i]).fold(0.0, f64::max);
    let floor = 0.05 * rmax + 1e-12;
    let mut nearest = vec![f64::INFINITY; support.len()];
    let mut centers = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best: Option<(f64, f64, usize)> = None;
        for (s, &i) in support.iter().enumerate() {
            let spread = if centers.is_empty() { 1.0 } else { nearest[s] };
            let score = (residual[i] + floor) * spread;
            let tie = pos(i).distance(centroid);
            let better = match best {
                None => true,
                Some((bs, bt, _)) => {
                    let rel = (score - bs) / bs.max(1e-300);
                    rel > 1e-9 || (rel.abs() <= 1e-9 && tie < bt)
                }
            };
            if better {
                best = Some((score, tie, s));
            }
        }
        let (_, _, s) = best.expect("support is non-empty");
        let c = pos(support[s]);
        centers.push(support[s]);
        for (k, &i) in support.iter().enumerate() {
            nearest[k] = nearest[k].min(pos(i).distance(c));
        }
    }
    let radius = ((patch.mask_area() / n as f64).sqrt() / 2.0).max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths = centers
        .iter()
        .map(|&i| {
            let c = pos(i);
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let mut control = [Point::default(); CONTROL_POINTS];
            for (k, p) in control.iter_mut().enumerate() {
                let a = phase
                    + std::f64::consts::TAU * k as f64 / CONTROL_POINTS as f64
                    + rng.gen_range(-0.05..0.05);
                let r = radius * rng.gen_range(0.95..1.05);
                *p = Point::new(
                    (c.x + r * a.cos()) / w as f64,
                    (c.y + r * a.sin()) / h as f64,
                );
            }
            let color = [0, 1, 2].map(|ch| patch.image.data[3 * i + ch]);
            let mut path = ClosedPath::new(control, color, INIT_BETA);
            path.clamp();
            path
        })
        .collect();
    Ok(paths)
}

fn check_patch(patch: &SuperpixelPatch) -> Result<()> {
    let (w, h) = patch.size;
    if (patch.image.width, patch.image.height, patch.image.channels) != (w, h, 3)
        || (patch.mask.width, patch.mask.height, patch.mask.channels) != (w, h, 1)
    {
        return Err(Error::shape(
            format!("{w}x{h} RGB image and 1-channel mask"),
            format!(
                "{}x{}x{} image, {}x{}x{} mask",
                patch.image.width,
                patch.image.height,
                patch.image.channels,
                patch.mask.width,
                patch.mask.height,
                patch.mask.channels
            ),
        ));
    }
    if patch.mask_area() <= 0.0 {
        return Err(Error::InvalidArgument("patch mask is empty".into()));
    }
    Ok(())
}

/// Fits `n_paths` fresh paths to the patch under reconstruction, boundary, and
/// path-efficiency terms.
pub fn coarse_fit(
    patch: &SuperpixelPatch,
    n_paths: usize,
    weights: &LossWeights,
    opt: &OptimizerConfig,
    cfg: &RenderConfig,
) -> Result<StageResult> {
    check_patch(patch)?;
    weights.validate()?;
    let init = init_paths(patch, n_paths, opt.seed)?;
    coarse_fit_from(patch, init, weights, opt, cfg)
}

/// [`coarse_fit`] from explicit starting paths.
pub fn coarse_fit_from(
    patch: &SuperpixelPatch,
    init: PathSequence,
    weights: &LossWeights,
    opt: &OptimizerConfig,
    cfg: &RenderConfig,
) -> Result<StageResult> {
    check_patch(patch)?;
    descend("coarse", init, opt, None, |_, seq| {
        let (terms, grad) = coarse_objective(seq, patch, weights, cfg)?;
        Ok((terms.total, grad))
    })
}

/// Order-preserving split into the first `k` paths and the rest.
pub fn split_sequence(seq: &PathSequence, k: usize) -> Result<(PathSequence, PathSequence)> {
    if k == 0 || k >= seq.len() {
        return Err(Error::InvalidArgument(format!(
            "split point {k} must lie in [1, {})",
            seq.len()
        )));
    }
    Ok((
        PathSequence::new(seq.paths[..k].to_vec()),
        PathSequence::new(seq.paths[k..].to_vec()),
    ))
}

/// Adds `m_new` paths over the fixed `canvas_paths`, placed on the largest
/// remaining errors.
pub fn refine_fit(
    patch: &SuperpixelPatch,
    canvas_paths: &PathSequence,
    m_new: usize,
    pseudo_gt: Option<&PathSequence>,
    weights: &LossWeights,
    opt: &OptimizerConfig,
    cfg: &RenderConfig,
) -> Result<StageResult> {
    check_patch(patch)?;
    if m_new == 0 {
        return Err(Error::InvalidArgument("m_new must be at least 1".into()));
    }
    let (w, h) = patch.size;
    let base = render(canvas_paths, w, h, cfg)?.image;
    let residual = error_residual(patch, &base);
    let init = init_from_residual(patch, &residual, m_new, opt.seed)?;
    refine_fit_from(patch, canvas_paths, init, pseudo_gt, weights, opt, cfg)
}

/// [`refine_fit`] from explicit starting paths for the new layer.
pub fn refine_fit_from(
    patch: &SuperpixelPatch,
    canvas_paths: &PathSequence,
    init: PathSequence,
    pseudo_gt: Option<&PathSequence>,
    weights: &LossWeights,
    opt: &OptimizerConfig,
    cfg: &RenderConfig,
) -> Result<StageResult> {
    check_patch(patch)?;
    weights.validate()?;
    if init.is_empty() {
        return Err(Error::InvalidArgument("no new paths to optimize".into()));
    }
    if pseudo_gt.is_none() && weights.lambda_dpw > 0.0 {
        return Err(Error::MissingPseudoGroundTruth(weights.lambda_dpw));
    }
    let (w, h) = patch.size;
    let base = render(canvas_paths, w, h, cfg)?.image;
    descend("refine", init, opt, None, |step, seq| {
        let tape = RenderTape::record_over(seq, &base, cfg)?;
        let (recon, upstream) = recon_loss(tape.image(), patch)?;
        let mut grad = tape.backward(&upstream)?;
        let mut total = recon;
        if weights.lambda_bound > 0.0 {
            let (b, bg) = boundary_loss(seq, &patch.mask, cfg)?;
            total += weights.lambda_bound * b;
            for (g, v) in grad.iter_mut().zip(bg) {
                *g += weights.lambda_bound * v;
            }
        }
        let lambda = lambda_dpw_at(weights.lambda_dpw, step, opt.dpw_decay_steps);
        if let (Some(gt), true) = (pseudo_gt, lambda > 0.0) {
            let (d, dg) = alignment_loss(AlignmentKind::Dpw, gt, seq, opt.dpw_gamma)?;
            total += lambda * d;
            for (g, v) in grad.iter_mut().zip(dg) {
                *g += lambda * v;
            }
        }
        Ok((total, grad))
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    /// 0 disables the pass.
    pub steps: usize,
    /// Wall-clock cap; `None` runs all steps.
    pub max_seconds: Option<f64>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            steps: 500,
            max_seconds: Some(10.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub superpixels: SuperpixelConfig,
    pub weights: LossWeights,
    pub coarse: OptimizerConfig,
    pub refine: OptimizerConfig,
    pub finetune: FinetuneConfig,
    pub render: RenderConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            superpixels: SuperpixelConfig::default(),
            weights: LossWeights::default(),
            coarse: OptimizerConfig::default(),
            refine: OptimizerConfig {
                steps: 300,
                ..OptimizerConfig::default()
            },
            finetune: FinetuneConfig::default(),
            render: RenderConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Vectorized {
    /// Full-image normalized coordinates, z-ordered.
    pub paths: PathSequence,
    /// Source superpixel of each path.
    pub labels: Vec<usize>,
    pub superpixels: SuperpixelMap,
    pub coarse_visible: usize,
    pub refine_rounds: usize,
    pub finetune_steps: usize,
    pub finetune_history: Vec<f64>,
}

/// Maps patch-local normalized coordinates to full-image ones.
pub fn to_image_coords(
    path: &ClosedPath,
    patch: &SuperpixelPatch,
    width: usize,
    height: usize,
) -> ClosedPath {
    let (ox, oy) = (patch.offset.0 as f64, patch.offset.1 as f64);
    let (pw, ph) = (patch.size.0 as f64, patch.size.1 as f64);
    path.map_points(|p| {
        Point::new(
            (ox + p.x * pw) / width as f64,
            (oy + p.y * ph) / height as f64,
        )
    })
}

/// Inverse of [`to_image_coords`].
pub fn to_patch_coords(
    path: &ClosedPath,
    patch: &SuperpixelPatch,
    width: usize,
    height: usize,
) -> ClosedPath {
    let (ox, oy) = (patch.offset.0 as f64, patch.offset.1 as f64);
    let (pw, ph) = (patch.size.0 as f64, patch.size.1 as f64);
    path.map_points(|p| {
        Point::new(
            (p.x * width as f64 - ox) / pw,
            (p.y * height as f64 - oy) / ph,
        )
    })
}

fn patch_error(paths: &PathSequence, patch: &SuperpixelPatch, cfg: &RenderConfig) -> Result<f64> {
    let (w, h) = patch.size;
    let img = render(paths, w, h, cfg)?.image;
    Ok(recon_loss(&img, patch)?.0 * (w * h) as f64)
}

/// Superpixel decomposition, per-superpixel coarse fits, residual-driven
/// refinement until the visible budget is used, and an optional joint
/// finetune on the full image.
pub fn vectorize_image(
    image: &RasterImage,
    total_paths: usize,
    pc: &PipelineConfig,
) -> Result<Vectorized> {
    let image = image.to_rgb();
    let (width, height) = (image.width, image.height);
    pc.weights.validate()?;
    pc.coarse.validate()?;
    pc.refine.validate()?;
    pc.render.validate()?;
    let n1 = pc.superpixels.count_for_budget(total_paths);
    if total_paths < n1 {
        return Err(Error::BudgetTooSmall {
            budget: total_paths,
            superpixels: n1,
        });
    }
    let map = pc.superpixels.decompose(&image, total_paths)?;
    if total_paths < map.num_labels {
        return Err(Error::BudgetTooSmall {
            budget: total_paths,
            superpixels: map.num_labels,
        });
    }
    let n1 = map.num_labels;
    log::info!("{n1} superpixels for {total_paths} paths");
    let patches = (0..n1)
        .map(|l| extract_patch(&image, &map, l))
        .collect::<Result<Vec<_>>>()?;
    let per_superpixel = (total_paths / (2 * n1)).max(1);
    let coarse_weights = LossWeights {
        lambda_dpw: 0.0,
        ..pc.weights
    };
    let mut local: Vec<PathSequence> = patches
        .par_iter()
        .enumerate()
        .map(|(l, patch)| {
            let opt = OptimizerConfig {
                seed: pc.coarse.seed.wrapping_add(l as u64),
                ..pc.coarse.clone()
            };
            let n = per_superpixel.min(patch.mask_area() as usize).max(1);
            let fit = coarse_fit(patch, n, &coarse_weights, &opt, &pc.render)?;
            Ok(fit
                .paths
                .iter()
                .filter(|p| p.is_visible())
                .cloned()
                .collect())
        })
        .collect::<Result<_>>()?;
    let coarse_visible: usize = local.iter().map(|s| s.len()).sum();
    log::info!("coarse stage kept {coarse_visible} visible paths");

    let mut visible = coarse_visible;
    let mut errors = patches
        .par_iter()
        .zip(&local)
        .map(|(p, s)| patch_error(s, p, &pc.render))
        .collect::<Result<Vec<f64>>>()?;
    let mut exhausted = vec![false; n1];
    let mut rounds = 0;
    while visible < total_paths {
        let Some(l) = (0..n1)
            .filter(|&l| !exhausted[l])
            .max_by(|&a, &b| errors[a].total_cmp(&errors[b]).then(b.cmp(&a)))
        else {
            log::info!("every superpixel stopped accepting paths; {visible} visible");
            break;
        };
        let m = REFINE_BATCH.min(total_paths - visible);
        let opt = OptimizerConfig {
            seed: pc.refine.seed.wrapping_add(1_000_003 * (rounds as u64 + 1)),
            ..pc.refine.clone()
        };
        let fit = refine_fit(
            &patches[l],
            &local[l],
            m,
            None,
            &coarse_weights,
            &opt,
            &pc.render,
        )?;
        rounds += 1;
        let added: Vec<ClosedPath> = fit
            .paths
            .iter()
            .filter(|p| p.is_visible())
            .cloned()
            .collect();
        if added.is_empty() {
            exhausted[l] = true;
            continue;
        }
        visible += added.len();
        local[l] = local[l].concat(&PathSequence::new(added));
        errors[l] = patch_error(&local[l], &patches[l], &pc.render)?;
        log::debug!("refinement round {rounds} on superpixel {l}: {visible} visible");
    }

    let mut paths = Vec::with_capacity(visible);
    let mut labels = Vec::with_capacity(visible);
    for (l, (seq, patch)) in local.iter().zip(&patches).enumerate() {
        for p in seq.iter() {
            let mut q = to_image_coords(p, patch, width, height);
            q.clamp();
            paths.push(q);
            labels.push(l);
        }
    }
    let mut paths = PathSequence::new(paths);
    let mut finetune_history = Vec::new();
    if pc.finetune.steps > 0 && !paths.is_empty() {
        let fit = finetune(&image, paths, &pc.finetune, &pc.refine, &pc.render)?;
        finetune_history = fit.loss_history;
        paths = fit.paths;
    }
    Ok(Vectorized {
        finetune_steps: finetune_history.len(),
        paths,
        labels,
        superpixels: map,
        coarse_visible,
        refine_rounds: rounds,
        finetune_history,
    })
}

/// Joint optimization of every path against the full image with the
/// reconstruction loss only.
pub fn finetune(
    image: &RasterImage,
    paths: PathSequence,
    ft: &FinetuneConfig,
    opt: &OptimizerConfig,
    cfg: &RenderConfig,
) -> Result<StageResult> {
    let patch = SuperpixelPatch::whole(image);
    let opt = OptimizerConfig {
        steps: ft.steps.max(1),
        ..opt.clone()
    };
    let deadline = ft
        .max_seconds
        .map(|s| Instant::now() + Duration::from_secs_f64(s.max(0.0)));
    let (w, h) = patch.size;
    descend("finetune", paths, &opt, deadline, |_, seq| {
        let tape = RenderTape::record(seq, w, h, cfg, RenderMode::Color)?;
        let (loss, upstream) = recon_loss(tape.image(), &patch)?;
        Ok((loss, tape.backward(&upstream)?))
    })
}

/// Smallest per-channel change that counts as visible: one 8-bit level.
pub const VISIBLE_CHANGE: f64 = 1.0 / 255.0;

/// Pixels where drawing `path` over `canvas` changes some channel by more
/// than [`VISIBLE_CHANGE`]. A path that fades out, shrinks away, or takes the
/// color of what lies beneath it all end at zero.
pub fn visible_area(
    canvas: &PathSequence,
    path: &ClosedPath,
    w: usize,
    h: usize,
    cfg: &RenderConfig,
) -> Result<f64> {
    let below = render(canvas, w, h, cfg)?.image;
    let above = render(
        &canvas.concat(&PathSequence::new(vec![path.clone()])),
        w,
        h,
        cfg,
    )?
    .image;
    let ch = below.channels;
    let count = below
        .data
        .chunks(ch)
        .zip(above.data.chunks(ch))
        .filter(|(a, b)| {
            a.iter()
                .zip(b.iter())
                .any(|(x, y)| (x - y).abs() > VISIBLE_CHANGE)
        })
        .count();
    Ok(count as f64)
}

/// Intersection over union of the two paths' 0.5-thresholded coverage masks.
pub fn iou(a: &ClosedPath, b: &ClosedPath, w: usize, h: usize, cfg: &RenderConfig) -> Result<f64> {
    let ma = render_binary(&PathSequence::new(vec![a.clone()]), w, h, cfg)?.image;
    let mb = render_binary(&PathSequence::new(vec![b.clone()]), w, h, cfg)?.image;
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in ma.data.iter().zip(&mb.data) {
        let (x, y) = (*x >= 0.5, *y >= 0.5);
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

#[derive(Clone, Debug)]
pub struct Fig4Outcome {
    pub stage: StageResult,
    pub target: ClosedPath,
    /// [`visible_area`] of the new path before and after optimization.
    pub initial_area: f64,
    pub final_area: f64,
    pub iou: f64,
}

impl Fig4Outcome {
    pub fn area_ratio(&self) -> f64 {
        self.final_area / self.initial_area
    }
}

/// Canvas plus one missing path. A new path starts over an area the canvas
/// already reproduces and is optimized with or without path-space guidance
/// toward the missing path.
pub fn fig4_experiment(
    guided: bool,
    opt: &OptimizerConfig,
    cfg: &RenderConfig,
) -> Result<Fig4Outcome> {
    let (size, canvas, target, start) = crate::scenes::fig4_scene();
    let image = render(
        &canvas.concat(&PathSequence::new(vec![target.clone()])),
        size,
        size,
        cfg,
    )?
    .image;
    let patch = SuperpixelPatch::whole(&image);
    let weights = LossWeights {
        lambda_bound: 0.0,
        lambda_pe: 0.0,
        lambda_dpw: if guided { FIG4_LAMBDA_DPW } else { 0.0 },
    };
    let gt = PathSequence::new(vec![target.clone()]);
    let init = PathSequence::new(vec![start.clone()]);
    let stage = refine_fit_from(
        &patch,
        &canvas,
        init,
        guided.then_some(&gt),
        &weights,
        opt,
        cfg,
    )?;
    let initial_area = visible_area(&canvas, &start, size, size, cfg)?;
    let final_area = visible_area(&canvas, &stage.paths.paths[0], size, size, cfg)?;
    let iou = iou(&stage.paths.paths[0], &target, size, size, cfg)?;
    Ok(Fig4Outcome {
        stage,
        target,
        initial_area,
        final_area,
        iou,
    })
}

/// Alignment weight of the guided branch in [`fig4_experiment`].
pub const FIG4_LAMBDA_DPW: f64 = 1e-3;

/// Optimizer settings of [`fig4_experiment`]: 500 steps, guidance fading out
/// by step 400.
pub fn fig4_optimizer() -> OptimizerConfig {
    OptimizerConfig {
        steps: 500,
        dpw_decay_steps: 400,
        ..OptimizerConfig::default()
    }
}

/// Optimizer settings of [`fig5_experiment`].
pub fn fig5_optimizer(seed: u64) -> OptimizerConfig {
    OptimizerConfig {
        steps: 1000,
        final_lr_fraction: 0.05,
        dpw_gamma: 0.1,
        seed,
        ..OptimizerConfig::default()
    }
}

#[derive(Clone, Debug)]
pub struct Fig5Outcome {
    pub stage: StageResult,
    pub recon: f64,
    /// Nearest target of each optimized path by `path_distance`.
    pub nearest: Vec<usize>,
    /// `(path, target a, target b)` where the path is closer to the mean of
    /// the two targets than to either of them.
    pub averaging: Vec<(usize, usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fig5Config {
    pub m: usize,
    pub kind: AlignmentKind,
    /// Canvas side in pixels.
    pub size: usize,
    /// Constant weight of the alignment term.
    pub lambda_align: f64,
    /// Generated path `j` starts as target `j mod n` with every control point
    /// moved by up to this much and colors by up to twice this much.
    pub init_jitter: f64,
}

impl Default for Fig5Config {
    fn default() -> Self {
        Fig5Config {
            m: 3,
            kind: AlignmentKind::Dpw,
            size: 64,
            lambda_align: 1e-2,
            init_jitter: 0.06,
        }
    }
}

/// Optimizes `m` fresh paths against the rendering of `targets` with the
/// reconstruction loss plus the chosen alignment loss.
pub fn fig5_experiment(
    targets: &PathSequence,
    f5: &Fig5Config,
    opt: &OptimizerConfig,
    cfg: &RenderConfig,
) -> Result<Fig5Outcome> {
    let (m, kind, size) = (f5.m, f5.kind, f5.size);
    if targets.is_empty() || m == 0 {
        return Err(Error::InvalidArgument(
            "need targets and at least one path".into(),
        ));
    }
    let image = render(targets, size, size, cfg)?.image;
    let patch = SuperpixelPatch::whole(&image);
    let init = jittered_copies(targets, m, f5.init_jitter, opt.seed);
    let lambda = f5.lambda_align;
    let stage = descend("fig5", init, opt, None, |_, seq| {
        let tape = RenderTape::record(seq, size, size, cfg, RenderMode::Color)?;
        let (recon, upstream) = recon_loss(tape.image(), &patch)?;
        let mut grad = tape.backward(&upstream)?;
        if lambda == 0.0 {
            return Ok((recon, grad));
        }
        let (a, ag) = alignment_loss(kind, targets, seq, opt.dpw_gamma)?;
        for (g, v) in grad.iter_mut().zip(ag) {
            *g += lambda * v;
        }
        Ok((recon + lambda * a, grad))
    })?;
    let rendered = render(&stage.paths, size, size, cfg)?.image;
    let recon = recon_loss(&rendered, &patch)?.0;
    let nearest = stage
        .paths
        .iter()
        .map(|p| {
            (0..targets.len())
                .min_by(|&a, &b| {
                    path_distance(p, &targets.paths[a])
                        .total_cmp(&path_distance(p, &targets.paths[b]))
                })
                .unwrap_or(0)
        })
        .collect();
    let averaging = averaging_events(&stage.paths, targets);
    Ok(Fig5Outcome {
        stage,
        recon,
        nearest,
        averaging,
    })
}

/// `m` perturbed copies of `targets`, cycling through them in order.
pub fn jittered_copies(targets: &PathSequence, m: usize, jitter: f64, seed: u64) -> PathSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jit = |scale: f64| {
        if scale > 0.0 {
            rng.gen_range(-scale..=scale)
        } else {
            0.0
        }
    };
    (0..m)
        .map(|j| {
            let t = &targets.paths[j % targets.len()];
            let control = t
                .control
                .map(|p| Point::new(p.x + jit(jitter), p.y + jit(jitter)));
            let color = t.color.map(|c| c + jit(2.0 * jitter));
            let mut p = ClosedPath::new(control, color, INIT_BETA);
            p.clamp();
            p
        })
        .collect()
}

/// Parameter-wise mean of two paths.
pub fn mean_path(a: &ClosedPath, b: &ClosedPath) -> ClosedPath {
    let (pa, pb) = (a.params(), b.params());
    let mid: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| 0.5 * (x + y)).collect();
    ClosedPath::from_params(&mid).expect("28 parameters")
}

/// Every `(path, a, b)` where mean(a, b) is strictly closer to the path than
/// any single target is.
pub fn averaging_events(
    paths: &PathSequence,
    targets: &PathSequence,
) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for (k, p) in paths.iter().enumerate() {
        let nearest = targets
            .iter()
            .map(|t| path_distance(p, t))
            .fold(f64::INFINITY, f64::min);
        for a in 0..targets.len() {
            for b in a + 1..targets.len() {
                let mean = mean_path(&targets.paths[a], &targets.paths[b]);
                if path_distance(p, &mean) < nearest {
                    out.push((k, a, b));
                }
            }
        }
    }
    out
}
