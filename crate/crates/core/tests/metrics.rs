use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use supervec::metrics::*;
use supervec::raster::RasterImage;
use supervec::scenes::synthetic_photo;

/// Direct per-window SSIM: for every window position, weighted means,
/// variances, and covariance from a 2-D Gaussian kernel.
fn reference_ssim(a: &RasterImage, b: &RasterImage) -> f64 {
    let (w, h, ch) = a.shape();
    let k = 11usize;
    let sigma = 1.5f64;
    let mut kernel = vec![0.0; k * k];
    for y in 0..k {
        for x in 0..k {
            let dx = x as f64 - 5.0;
            let dy = y as f64 - 5.0;
            kernel[y * k + x] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (0.0001, 0.0009);
    let mut sum = 0.0;
    for c in 0..ch {
        let mut acc = 0.0;
        let mut count = 0;
        for oy in 0..=h - k {
            for ox in 0..=w - k {
                let (mut ma, mut mb) = (0.0, 0.0);
                for y in 0..k {
                    for x in 0..k {
                        let wgt = kernel[y * k + x];
                        ma += wgt * a.get(ox + x, oy + y, c);
                        mb += wgt * b.get(ox + x, oy + y, c);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for y in 0..k {
                    for x in 0..k {
                        let wgt = kernel[y * k + x];
                        let da = a.get(ox + x, oy + y, c) - ma;
                        let db = b.get(ox + x, oy + y, c) - mb;
                        va += wgt * da * da;
                        vb += wgt * db * db;
                        cov += wgt * da * db;
                    }
                }
                acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        sum += acc / count as f64;
    }
    sum / ch as f64
}

#[test]
fn identical_images() {
    let a = synthetic_photo(40, 30, 1);
    let r = evaluate(&a, &a).unwrap();
    assert_eq!(r.mse, 0.0);
    assert_eq!(r.psnr, PSNR_IDENTICAL);
    assert!((r.ssim - 1.0).abs() < 1e-9);
}

#[test]
fn constant_offset() {
    let a = RasterImage::from_fn(32, 32, 3, |x, y, c| {
        0.2 + 0.5 * ((x + 2 * y + c) % 7) as f64 / 7.0
    });
    let b = RasterImage {
        data: a.data.iter().map(|v| v + 0.1).collect(),
        ..a.clone()
    };
    let r = evaluate(&a, &b).unwrap();
    assert!((r.mse - 0.01).abs() < 1e-12);
    assert!((r.psnr - 20.0).abs() < 1e-9);
}

#[test]
fn ssim_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..3 {
        let a = RasterImage::from_fn(24, 20, 3, |_, _, _| rng.gen());
        let b = RasterImage {
            data: a
                .data
                .iter()
                .map(|v| (v + rng.gen_range(-0.2..0.2)).clamp(0.0, 1.0))
                .collect(),
            ..a.clone()
        };
        let (fast, slow) = (ssim(&a, &b).unwrap(), reference_ssim(&a, &b));
        assert!((fast - slow).abs() < 1e-4, "{fast} vs {slow}");
    }
}

#[test]
fn symmetric_and_bounded() {
    let a = synthetic_photo(33, 29, 3);
    let b = synthetic_photo(33, 29, 4);
    let ab = evaluate(&a, &b).unwrap();
    let ba = evaluate(&b, &a).unwrap();
    assert_eq!(ab.mse, ba.mse);
    assert!((ab.ssim - ba.ssim).abs() < 1e-12);
    assert!(ab.ssim < 1.0 && ab.ssim >= -1.0);
}

#[test]
fn shape_mismatch_is_an_error() {
    assert!(evaluate(&RasterImage::new(4, 4, 3), &RasterImage::new(4, 5, 3)).is_err());
}

#[test]
fn tiny_images_use_a_smaller_window() {
    let a = RasterImage::filled(5, 4, &[0.3, 0.3, 0.3]);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
}
