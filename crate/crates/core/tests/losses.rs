use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use supervec::geometry::{ClosedPath, PathSequence, Point};
use supervec::gradcheck::{central_differences, compare};
use supervec::losses::*;
use supervec::raster::{render, RasterImage, RenderConfig};
use supervec::scenes::random_scene;
use supervec::superpixel::SuperpixelPatch;

fn patch_with_mask(image: RasterImage, mask: RasterImage) -> SuperpixelPatch {
    let size = (image.width, image.height);
    SuperpixelPatch {
        image,
        mask,
        offset: (0, 0),
        size,
    }
}

#[test]
fn recon_identical_is_zero() {
    let img = supervec::scenes::synthetic_photo(16, 12, 0);
    let patch = SuperpixelPatch::whole(&img);
    let (l, g) = recon_loss(&img, &patch).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.data.iter().all(|&v| v == 0.0));
}

#[test]
fn recon_unit_error_full_mask_is_one() {
    let target = RasterImage::new(10, 10, 3);
    let rendered = RasterImage::filled(10, 10, &[1.0, 1.0, 1.0]);
    let (l, _) = recon_loss(&rendered, &SuperpixelPatch::whole(&target)).unwrap();
    assert!((l - 1.0).abs() < 1e-12);
}

#[test]
fn recon_half_mask_is_half() {
    let target = RasterImage::new(10, 10, 3);
    let mask = RasterImage::from_fn(10, 10, 1, |x, _, _| if x < 5 { 1.0 } else { 0.0 });
    let rendered = RasterImage::from_fn(10, 10, 3, |x, _, _| if x < 5 { 1.0 } else { 0.0 });
    let (l, _) = recon_loss(&rendered, &patch_with_mask(target, mask)).unwrap();
    assert!((l - 0.5).abs() < 1e-12);
}

#[test]
fn recon_shape_mismatch() {
    let patch = SuperpixelPatch::whole(&RasterImage::new(4, 4, 3));
    assert!(recon_loss(&RasterImage::new(4, 5, 3), &patch).is_err());
}

#[test]
fn recon_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let target = RasterImage::from_fn(6, 5, 3, |_, _, _| rng.gen());
    let mask = RasterImage::from_fn(6, 5, 1, |x, y, _| ((x + y) % 3 != 0) as u8 as f64);
    let patch = patch_with_mask(target, mask);
    let rendered = RasterImage::from_fn(6, 5, 3, |_, _, _| rng.gen());
    let (_, g) = recon_loss(&rendered, &patch).unwrap();
    let num = central_differences(
        |x| {
            let img = RasterImage {
                data: x.to_vec(),
                ..rendered.clone()
            };
            recon_loss(&img, &patch).unwrap().0
        },
        &rendered.data,
        1e-6,
    );
    let cmp = compare(&g.data, &num, 1e-6, 1e-9);
    assert_eq!(cmp.within, cmp.total);
}

#[test]
fn boundary_zero_for_all_ones_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seq = random_scene(&mut rng, 3);
    let mask = RasterImage::filled(32, 32, &[1.0]);
    let (l, g) = boundary_loss(&seq, &mask, &RenderConfig::default()).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn boundary_tiny_for_interior_paths() {
    // mask is the central 40x40 block of 64x64; the path stays >= 5 tau inside
    let mask = RasterImage::from_fn(64, 64, 1, |x, y, _| {
        ((12..52).contains(&x) && (12..52).contains(&y)) as u8 as f64
    });
    let path = ClosedPath::ellipse(Point::new(0.5, 0.5), 0.2, 0.2, [1.0, 0.0, 0.0], 1.0);
    let seq = PathSequence::new(vec![path.clone()]);
    let (l, _) = boundary_loss(&seq, &mask, &RenderConfig::default()).unwrap();
    assert!(l < 1e-4, "{l}");
    // a path well inside: translating it changes the value by < 1e-6
    let small = ClosedPath::ellipse(Point::new(0.5, 0.5), 0.1, 0.1, [1.0, 0.0, 0.0], 1.0);
    let (a, _) = boundary_loss(
        &PathSequence::new(vec![small.clone()]),
        &mask,
        &RenderConfig::default(),
    )
    .unwrap();
    let moved = small.map_points(|p| Point::new(p.x + 0.02, p.y - 0.01));
    let (b, _) = boundary_loss(
        &PathSequence::new(vec![moved]),
        &mask,
        &RenderConfig::default(),
    )
    .unwrap();
    assert!((a - b).abs() < 1e-6);
}

#[test]
fn boundary_half_outside_square() {
    // square of side 32 px straddling a left-half mask
    let mask = RasterImage::from_fn(64, 64, 1, |x, _, _| (x < 32) as u8 as f64);
    let path = ClosedPath::rect(0.25, 0.25, 0.75, 0.75, [1.0; 3], 1.0);
    let (l, _) = boundary_loss(
        &PathSequence::new(vec![path]),
        &mask,
        &RenderConfig::default(),
    )
    .unwrap();
    let expected = (32.0 * 32.0) / 2.0 / (64.0 * 64.0);
    assert!((l - expected).abs() / expected < 0.05, "{l} vs {expected}");
}

#[test]
fn efficiency_extremes_and_surrogate() {
    let mk = |b: f64| ClosedPath::ellipse(Point::new(0.5, 0.5), 0.1, 0.1, [0.5; 3], b);
    let ones: PathSequence = (0..5).map(|_| mk(1.0)).collect();
    let zeros: PathSequence = (0..5).map(|_| mk(0.0)).collect();
    assert_eq!(path_efficiency_loss(&ones).0, 5.0);
    assert_eq!(path_efficiency_loss(&zeros).0, -5.0);
    let (v, g) = path_efficiency_loss(&PathSequence::new(vec![mk(0.5)]));
    assert_eq!(v, 0.0);
    let s = 1.0 / (1.0 + (-0.5f64).exp());
    assert!((g[0] - s * (1.0 - s)).abs() < 1e-12);
    assert!((g[0] - 0.2350).abs() < 1e-4);
    // positive on (0, 1)
    let grads: Vec<f64> = (1..10)
        .map(|k| path_efficiency_loss(&PathSequence::new(vec![mk(k as f64 / 10.0)])).1[0])
        .collect();
    assert!(grads.iter().all(|&g| g > 0.0));
}

#[test]
fn objective_reduces_to_recon_without_extra_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let seq = random_scene(&mut rng, 2);
    let target = supervec::scenes::synthetic_photo(32, 32, 9);
    let patch = SuperpixelPatch::whole(&target);
    let cfg = RenderConfig::default();
    let w = LossWeights {
        lambda_bound: 0.0,
        lambda_pe: 0.0,
        lambda_dpw: 0.0,
    };
    let (terms, _) = coarse_objective(&seq, &patch, &w, &cfg).unwrap();
    let img = render(&seq, 32, 32, &cfg).unwrap().image;
    let (recon, _) = recon_loss(&img, &patch).unwrap();
    assert_eq!(terms.total, recon);
}

#[test]
fn objective_perfect_fit_with_hidden_paths() {
    let path = ClosedPath::ellipse(Point::new(0.5, 0.5), 0.2, 0.2, [0.3, 0.6, 0.9], 0.0);
    let seq = PathSequence::new(vec![path.clone(), path]);
    let cfg = RenderConfig::default();
    let target = render(&seq, 32, 32, &cfg).unwrap().image;
    let patch = SuperpixelPatch::whole(&target);
    let w = LossWeights::default();
    let (terms, _) = coarse_objective(&seq, &patch, &w, &cfg).unwrap();
    assert!((terms.total - (-w.lambda_pe * 2.0)).abs() < 1e-15);
}

#[test]
fn objective_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cfg = RenderConfig::default();
    let target = supervec::scenes::synthetic_photo(48, 48, 2);
    let mask = RasterImage::from_fn(48, 48, 1, |x, y, _| {
        ((x as i64 - 20).pow(2) + (y as i64 - 26).pow(2) < 400) as u8 as f64
    });
    let mut image = target.clone();
    for (i, m) in mask.data.iter().enumerate() {
        for c in 0..3 {
            image.data[3 * i + c] *= m;
        }
    }
    let patch = patch_with_mask(image, mask);
    let weights = LossWeights {
        lambda_pe: 0.0,
        ..LossWeights::default()
    };
    let (mut within, mut total) = (0, 0);
    for _ in 0..3 {
        let seq = random_scene(&mut rng, 2);
        let (_, g) = coarse_objective(&seq, &patch, &weights, &cfg).unwrap();
        let num = central_differences(
            |x| {
                coarse_objective(
                    &PathSequence::from_params(x).unwrap(),
                    &patch,
                    &weights,
                    &cfg,
                )
                .unwrap()
                .0
                .total
            },
            &seq.params(),
            1e-3,
        );
        let cmp = compare(&g, &num, 1e-2, 1e-6);
        within += cmp.within;
        total += cmp.total;
    }
    assert!(within as f64 >= 0.95 * total as f64, "{within}/{total}");
}

#[test]
fn negative_weight_rejected() {
    let w = LossWeights {
        lambda_bound: -1.0,
        ..LossWeights::default()
    };
    assert!(w.validate().is_err());
}
