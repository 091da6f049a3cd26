use supervec::dpw::path_distance;
use supervec::geometry::{ClosedPath, PathSequence, Point};
use supervec::losses::{boundary_loss, recon_loss, LossWeights};
use supervec::optimize::*;
use supervec::raster::{render, RasterImage, RenderConfig};
use supervec::scenes::four_region_image;
use supervec::superpixel::{extract_patch, SuperpixelConfig, SuperpixelPatch};
use supervec::Error;

fn patch_with_mask(image: RasterImage, mask: RasterImage) -> SuperpixelPatch {
    let size = (image.width, image.height);
    SuperpixelPatch {
        image,
        mask,
        offset: (0, 0),
        size,
    }
}

/// 40x40 crop whose mask is the centered 24x24 square, flat color inside.
fn flat_square_patch() -> SuperpixelPatch {
    let inside = |x: usize, y: usize| (8..32).contains(&x) && (8..32).contains(&y);
    let color = [0.8, 0.3, 0.2];
    let image = RasterImage::from_fn(
        40,
        40,
        3,
        |x, y, c| if inside(x, y) { color[c] } else { 0.0 },
    );
    let mask = RasterImage::from_fn(40, 40, 1, |x, y, _| if inside(x, y) { 1.0 } else { 0.0 });
    patch_with_mask(image, mask)
}

fn centroid_px(p: &ClosedPath, w: usize, h: usize) -> (f64, f64) {
    let c = p.centroid();
    (c.x * w as f64, c.y * h as f64)
}

#[test]
fn single_path_on_uniform_patch_sits_at_the_centroid() {
    let patch = SuperpixelPatch::whole(&RasterImage::filled(32, 24, &[0.4, 0.5, 0.6]));
    let seq = init_paths(&patch, 1, 7).unwrap();
    assert_eq!(seq.len(), 1);
    let (cx, cy) = centroid_px(&seq.paths[0], 32, 24);
    assert!((cx - 16.0).hypot(cy - 12.0) < 2.0, "({cx}, {cy})");
    assert_eq!(seq.paths[0].beta, INIT_BETA);
    assert_eq!(seq.paths[0].color, [0.4, 0.5, 0.6]);
}

#[test]
fn init_centers_lie_inside_the_mask() {
    // L-shaped mask.
    let inside = |x: usize, y: usize| x < 10 || y >= 20;
    let image = RasterImage::from_fn(30, 30, 3, |x, y, c| {
        if inside(x, y) {
            ((x * 7 + y * 3 + c * 11) % 13) as f64 / 13.0
        } else {
            0.0
        }
    });
    let mask = RasterImage::from_fn(30, 30, 1, |x, y, _| if inside(x, y) { 1.0 } else { 0.0 });
    let patch = patch_with_mask(image, mask);
    for seed in 0..3 {
        for p in init_paths(&patch, 6, seed).unwrap().iter() {
            let (cx, cy) = centroid_px(p, 30, 30);
            assert!(inside(cx as usize, cy as usize), "({cx}, {cy})");
        }
    }
}

#[test]
fn init_is_deterministic() {
    let patch = SuperpixelPatch::whole(&supervec::scenes::synthetic_photo(32, 32, 1));
    assert_eq!(
        init_paths(&patch, 5, 3).unwrap(),
        init_paths(&patch, 5, 3).unwrap()
    );
    assert_ne!(
        init_paths(&patch, 5, 3).unwrap(),
        init_paths(&patch, 5, 4).unwrap()
    );
}

#[test]
fn init_clamps_to_mask_size() {
    let mask = RasterImage::from_fn(8, 8, 1, |x, y, _| if y == 3 && x < 3 { 1.0 } else { 0.0 });
    let patch = patch_with_mask(RasterImage::filled(8, 8, &[0.5, 0.5, 0.5]), mask);
    assert_eq!(init_paths(&patch, 10, 0).unwrap().len(), 3);
    assert!(init_paths(&patch, 0, 0).is_err());
}

#[test]
fn flat_square_is_fit_by_one_path() {
    // Path coordinates are clamped to the patch, so the border ring is only
    // partly covered; a sharp edge keeps that ring thin.
    let patch = SuperpixelPatch::whole(&RasterImage::filled(32, 32, &[0.8, 0.3, 0.2]));
    let opt = OptimizerConfig {
        steps: 300,
        ..Default::default()
    };
    let cfg = RenderConfig::default().with_tau(0.25);
    let fit = coarse_fit(&patch, 1, &LossWeights::default(), &opt, &cfg).unwrap();
    assert_eq!(fit.loss_history.len(), 300);
    let img = render(&fit.paths, 32, 32, &cfg).unwrap().image;
    let (recon, _) = recon_loss(&img, &patch).unwrap();
    assert!(recon < 1e-3, "{recon}");
    assert_eq!(fit.visible_count, 1);
}

#[test]
fn strong_efficiency_pressure_switches_paths_off() {
    let patch = flat_square_patch();
    let weights = LossWeights {
        lambda_pe: 10.0,
        ..Default::default()
    };
    let opt = OptimizerConfig {
        steps: 200,
        ..Default::default()
    };
    let fit = coarse_fit(&patch, 8, &weights, &opt, &RenderConfig::default()).unwrap();
    assert!(fit.visible_count < 8, "{}", fit.visible_count);
    assert!(fit.visible_count <= fit.paths.len());
}

#[test]
fn smoothed_loss_does_not_increase() {
    let patch = SuperpixelPatch::whole(&four_region_image(48));
    let opt = OptimizerConfig {
        steps: 400,
        ..Default::default()
    };
    let fit = coarse_fit(
        &patch,
        4,
        &LossWeights::default(),
        &opt,
        &RenderConfig::default(),
    )
    .unwrap();
    let means: Vec<f64> = fit
        .loss_history
        .chunks(50)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    for w in means.windows(2) {
        assert!(w[1] <= w[0], "{means:?}");
    }
}

#[test]
fn fits_are_bitwise_reproducible_and_clamped() {
    let patch = SuperpixelPatch::whole(&supervec::scenes::synthetic_photo(24, 24, 5));
    let opt = OptimizerConfig {
        steps: 60,
        learning_rate: 0.2,
        seed: 9,
        ..Default::default()
    };
    let run = || {
        coarse_fit(
            &patch,
            3,
            &LossWeights::default(),
            &opt,
            &RenderConfig::default(),
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.loss_history, b.loss_history);
    assert_eq!(a.paths, b.paths);
    assert!(a.paths.params().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn snapshots_do_not_change_the_fit() {
    let patch = SuperpixelPatch::whole(&supervec::scenes::synthetic_photo(24, 24, 5));
    let opt = OptimizerConfig {
        steps: 25,
        seed: 3,
        ..Default::default()
    };
    let w = LossWeights::default();
    let cfg = RenderConfig::default();
    let plain = coarse_fit(&patch, 2, &w, &opt, &cfg).unwrap();
    let snap = coarse_fit(
        &patch,
        2,
        &w,
        &OptimizerConfig {
            snapshot_every: 10,
            ..opt.clone()
        },
        &cfg,
    )
    .unwrap();
    assert!(plain.snapshots.is_empty());
    assert_eq!(snap.paths, plain.paths);
    let steps: Vec<usize> = snap.snapshots.iter().map(|s| s.0).collect();
    assert_eq!(steps, [0, 10, 20, 25]);
    assert_eq!(snap.snapshots.last().unwrap().1, snap.paths);
    assert!(snap.snapshots[0].1 != snap.paths);
}

#[test]
fn non_finite_loss_aborts_with_the_step() {
    let mut image = RasterImage::filled(8, 8, &[0.5, 0.5, 0.5]);
    image.data[5] = f64::NAN;
    let patch = SuperpixelPatch::whole(&image);
    let opt = OptimizerConfig {
        steps: 10,
        ..Default::default()
    };
    match coarse_fit(
        &patch,
        1,
        &LossWeights::default(),
        &opt,
        &RenderConfig::default(),
    ) {
        Err(Error::NonFiniteLoss { stage, step, .. }) => {
            assert_eq!(stage, "coarse");
            assert_eq!(step, 0);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn invalid_optimizer_settings_are_rejected() {
    for opt in [
        OptimizerConfig {
            learning_rate: 0.0,
            ..Default::default()
        },
        OptimizerConfig {
            steps: 0,
            ..Default::default()
        },
        OptimizerConfig {
            adam_beta2: 1.0,
            ..Default::default()
        },
    ] {
        assert!(opt.validate().is_err(), "{opt:?}");
    }
}

fn four_paths() -> PathSequence {
    PathSequence::new(vec![
        ClosedPath::rect(0.0, 0.0, 1.0, 1.0, [0.9, 0.9, 0.9], 1.0),
        ClosedPath::ellipse(Point::new(0.3, 0.3), 0.2, 0.15, [0.8, 0.1, 0.1], 0.9),
        ClosedPath::ellipse(Point::new(0.6, 0.5), 0.25, 0.2, [0.1, 0.6, 0.2], 0.7),
        ClosedPath::rect(0.5, 0.6, 0.9, 0.9, [0.1, 0.2, 0.8], 0.8),
    ])
}

#[test]
fn split_sequence_examples() {
    let s = four_paths();
    let (a, b) = split_sequence(&s, 2).unwrap();
    assert_eq!((a.len(), b.len()), (2, 2));
    assert_eq!(a.concat(&b), s);
    let (_, last) = split_sequence(&s, 3).unwrap();
    assert_eq!(last.len(), 1);
    assert!(split_sequence(&s, 0).is_err());
    assert!(split_sequence(&s, 4).is_err());

    let cfg = RenderConfig::default();
    let whole = render(&s, 40, 40, &cfg).unwrap().image;
    let joined = render(&a.concat(&b), 40, 40, &cfg).unwrap().image;
    assert_eq!(whole.data, joined.data);
}

#[test]
fn refinement_requires_a_target_when_guided() {
    let patch = SuperpixelPatch::whole(&RasterImage::filled(16, 16, &[0.2, 0.2, 0.2]));
    let opt = OptimizerConfig {
        steps: 5,
        ..Default::default()
    };
    let err = refine_fit(
        &patch,
        &PathSequence::default(),
        2,
        None,
        &LossWeights::default(),
        &opt,
        &RenderConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::MissingPseudoGroundTruth(_)), "{err}");
}

#[test]
fn refinement_started_at_the_target_stays_there() {
    let s = four_paths();
    let (canvas, gt) = split_sequence(&s, 2).unwrap();
    let cfg = RenderConfig::default();
    let patch = SuperpixelPatch::whole(&render(&s, 40, 40, &cfg).unwrap().image);
    let weights = LossWeights {
        lambda_bound: 0.0,
        lambda_pe: 0.0,
        lambda_dpw: 1e-3,
    };
    let opt = OptimizerConfig {
        steps: 50,
        dpw_gamma: 0.01,
        ..Default::default()
    };
    let canvas_before = canvas.clone();
    let fit =
        refine_fit_from(&patch, &canvas, gt.clone(), Some(&gt), &weights, &opt, &cfg).unwrap();
    assert_eq!(canvas, canvas_before);
    assert_eq!(fit.paths.len(), gt.len());
    assert!(fit.loss_history[0].abs() < 1e-9, "{}", fit.loss_history[0]);
    for (p, t) in fit.paths.iter().zip(gt.iter()) {
        assert!(path_distance(p, t) < 1e-6, "{}", path_distance(p, t));
    }
}

#[test]
fn refinement_adds_requested_paths_over_the_canvas() {
    let image = four_region_image(32);
    let patch = SuperpixelPatch::whole(&image);
    let canvas = PathSequence::new(vec![ClosedPath::rect(
        0.0,
        0.0,
        1.0,
        1.0,
        [0.5, 0.5, 0.5],
        1.0,
    )]);
    let weights = LossWeights {
        lambda_dpw: 0.0,
        ..Default::default()
    };
    let opt = OptimizerConfig {
        steps: 100,
        ..Default::default()
    };
    let cfg = RenderConfig::default();
    let fit = refine_fit(&patch, &canvas, 4, None, &weights, &opt, &cfg).unwrap();
    assert_eq!(fit.paths.len(), 4);
    let before = recon_loss(&render(&canvas, 32, 32, &cfg).unwrap().image, &patch)
        .unwrap()
        .0;
    let after = recon_loss(
        &render(&canvas.concat(&fit.paths), 32, 32, &cfg)
            .unwrap()
            .image,
        &patch,
    )
    .unwrap()
    .0;
    assert!(after < 0.5 * before, "{before} -> {after}");
}

#[test]
fn anneal_is_linear_and_reaches_zero() {
    assert_eq!(lambda_dpw_at(1e-3, 0, 100), 1e-3);
    assert!((lambda_dpw_at(1e-3, 50, 100) - 5e-4).abs() < 1e-15);
    let mut prev = f64::INFINITY;
    for t in 0..150 {
        let l = lambda_dpw_at(1e-3, t, 100);
        assert!(l <= prev);
        if t >= 100 {
            assert_eq!(l, 0.0);
        }
        prev = l;
    }
}

#[test]
fn averaging_detector_examples() {
    let targets = four_paths();
    let (a, b) = (&targets.paths[1], &targets.paths[2]);
    let mean = mean_path(a, b);
    assert!((path_distance(&mean, a) - path_distance(&mean, b)).abs() < 1e-12);
    let on_mean = PathSequence::new(vec![mean]);
    assert!(averaging_events(&on_mean, &targets).contains(&(0, 1, 2)));
    assert!(averaging_events(&targets, &targets).is_empty());

    let copies = jittered_copies(&targets, 6, 0.0, 0);
    assert_eq!(copies.len(), 6);
    assert_eq!(copies.paths[5].control, targets.paths[1].control);
    assert!(copies.iter().all(|p| p.beta == INIT_BETA));
}

#[test]
fn budget_smaller_than_superpixels_is_an_error() {
    let pc = PipelineConfig {
        superpixels: SuperpixelConfig {
            n_superpixels: Some(4),
            ..Default::default()
        },
        ..Default::default()
    };
    let err = vectorize_image(&four_region_image(32), 3, &pc).unwrap_err();
    assert!(
        matches!(err, Error::BudgetTooSmall { budget: 3, .. }),
        "{err}"
    );
}

#[test]
fn pipeline_keeps_paths_inside_their_superpixels() {
    let (w, h) = (128, 128);
    let image = four_region_image(w);
    let pc = PipelineConfig {
        superpixels: SuperpixelConfig {
            n_superpixels: Some(4),
            ..Default::default()
        },
        coarse: OptimizerConfig {
            steps: 300,
            ..Default::default()
        },
        refine: OptimizerConfig {
            steps: 150,
            ..Default::default()
        },
        finetune: FinetuneConfig {
            steps: 0,
            max_seconds: None,
        },
        render: RenderConfig::default().with_tau(0.25),
        ..Default::default()
    };
    let v = vectorize_image(&image, 64, &pc).unwrap();
    assert!(v.superpixels.num_labels >= 2);
    assert!(v.paths.visible_count() <= 64);
    assert_eq!(v.paths.len(), v.labels.len());
    for (p, &l) in v.paths.iter().zip(&v.labels) {
        let patch = extract_patch(&image, &v.superpixels, l).unwrap();
        let local = to_patch_coords(p, &patch, w, h);
        let (b, _) =
            boundary_loss(&PathSequence::new(vec![local]), &patch.mask, &pc.render).unwrap();
        assert!(b < 1e-3, "path in superpixel {l}: {b}");
    }
}

#[test]
fn coordinate_maps_are_inverse() {
    let image = four_region_image(64);
    let map = SuperpixelConfig {
        n_superpixels: Some(4),
        ..Default::default()
    }
    .decompose(&image, 64)
    .unwrap();
    let patch = extract_patch(&image, &map, 1).unwrap();
    let p = ClosedPath::ellipse(Point::new(0.4, 0.6), 0.2, 0.1, [0.1, 0.2, 0.3], 0.9);
    let back = to_patch_coords(&to_image_coords(&p, &patch, 64, 64), &patch, 64, 64);
    assert!(path_distance(&p, &back) < 1e-20);
}

#[test]
fn visible_area_ignores_camouflaged_paths() {
    let cfg = RenderConfig::default();
    let canvas = PathSequence::new(vec![ClosedPath::rect(
        0.0,
        0.0,
        1.0,
        1.0,
        [0.3, 0.6, 0.2],
        1.0,
    )]);
    let spot = |color: [f64; 3], beta: f64| ClosedPath::rect(0.25, 0.25, 0.75, 0.75, color, beta);
    let shown = visible_area(&canvas, &spot([0.9, 0.1, 0.1], 1.0), 40, 40, &cfg).unwrap();
    // the 20x20 square plus the few pixels of soft edge that still show
    assert!((400.0..=32.0 * 32.0).contains(&shown), "{shown}");
    assert_eq!(
        visible_area(&canvas, &spot([0.3, 0.6, 0.2], 1.0), 40, 40, &cfg).unwrap(),
        0.0
    );
    assert_eq!(
        visible_area(&canvas, &spot([0.9, 0.1, 0.1], 0.0), 40, 40, &cfg).unwrap(),
        0.0
    );
}
