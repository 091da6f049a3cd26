//! Reconstruction quality: MSE, PSNR, and SSIM.

use crate::error::{Error, Result};
use crate::raster::RasterImage;

/// PSNR reported for identical images.
pub const PSNR_IDENTICAL: f64 = 999.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub mse: f64,
    /// Decibels with peak 1.0.
    pub psnr: f64,
    pub ssim: f64,
}

pub fn mse(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    a.check_same_shape(b)?;
    if a.data.is_empty() {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.data.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_IDENTICAL
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn psnr(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Normalized 1-D Gaussian taps.
fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable "valid" filtering of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|t| taps[t] * plane[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|t| taps[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM over all window positions that fit inside the image and over
/// channels. Images smaller than the window use the largest odd window that
/// fits.
pub fn ssim(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    a.check_same_shape(b)?;
    let (w, h, ch) = a.shape();
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    let mut size = SSIM_WINDOW.min(w).min(h);
    if size % 2 == 0 {
        size -= 1;
    }
    let taps = gaussian_taps(size, SSIM_SIGMA);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut total = 0.0;
    for c in 0..ch {
        let pa: Vec<f64> = (0..w * h).map(|i| a.data[i * ch + c]).collect();
        let pb: Vec<f64> = (0..w * h).map(|i| b.data[i * ch + c]).collect();
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            pa.iter().zip(&pb).map(|(&x, &y)| f(x, y)).collect()
        };
        let (mu_a, ow, oh) = filter_valid(&pa, w, h, &taps);
        let (mu_b, _, _) = filter_valid(&pb, w, h, &taps);
        let (saa, _, _) = filter_valid(&prod(&|x, _| x * x), w, h, &taps);
        let (sbb, _, _) = filter_valid(&prod(&|_, y| y * y), w, h, &taps);
        let (sab, _, _) = filter_valid(&prod(&|x, y| x * y), w, h, &taps);
        let mut acc = 0.0;
        for i in 0..ow * oh {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = saa[i] - ma * ma;
            let vb = sbb[i] - mb * mb;
            let cov = sab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / (ow * oh) as f64;
    }
    Ok(total / ch as f64)
}

pub fn evaluate(a: &RasterImage, b: &RasterImage) -> Result<MetricReport> {
    let mse = mse(a, b)?;
    Ok(MetricReport {
        mse,
        psnr: psnr_from_mse(mse),
        ssim: ssim(a, b)?,
    })
}
