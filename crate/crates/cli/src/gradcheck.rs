use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use supervec::dpw::{
    alignment_loss, dpw_backward, dpw_forward, softdtw_backward, softdtw_forward, AlignmentKind,
    Matrix,
};
use supervec::geometry::PathSequence;
use supervec::gradcheck::{central_differences, compare, GradComparison};
use supervec::losses::{boundary_loss, recon_loss};
use supervec::raster::{render, render_with_grad, RasterImage, RenderConfig};
use supervec::scenes::{random_scene, random_upstream};
use supervec::superpixel::SuperpixelPatch;

use crate::report::{Report, Row};
use crate::{CmdResult, Common, OrStatus, Status};

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Soft-min temperature for the alignment checks.
    #[arg(long, default_value_t = 0.1, value_parser = non_negative)]
    pub gamma: f64,
    /// Random instances per check.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub instances: u64,
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a non-negative number, got {s:?}")),
    }
}

const RENDER_SIZE: usize = 64;
const RENDER_STEP: f64 = 1e-3;
const RENDER_TOL: f64 = 1e-2;
const RENDER_FRACTION: f64 = 0.95;
const EXACT_TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

#[derive(Default)]
struct Pool(Option<GradComparison>);

impl Pool {
    fn add(&mut self, c: GradComparison) {
        self.0 = Some(match self.0.take() {
            None => c,
            Some(p) => GradComparison {
                total: p.total + c.total,
                within: p.within + c.within,
                max_rel_error: p.max_rel_error.max(c.max_rel_error),
            },
        });
    }

    fn fraction_row(self, name: &str) -> Row {
        let f = self.0.map_or(1.0, |c| c.fraction_within());
        Row::check(name, Some(f), RENDER_FRACTION, f >= RENDER_FRACTION)
    }

    fn max_error_row(self, name: &str) -> Row {
        let e = self.0.map_or(0.0, |c| c.max_rel_error);
        Row::check(name, Some(e), EXACT_TOL, e < EXACT_TOL)
    }
}

fn dot(a: &RasterImage, b: &RasterImage) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
}

fn square_mask(rng: &mut impl Rng, n: usize) -> RasterImage {
    let (x0, y0) = (rng.gen_range(0..n / 2), rng.gen_range(0..n / 2));
    let (x1, y1) = (rng.gen_range(x0 + 4..n), rng.gen_range(y0 + 4..n));
    RasterImage::from_fn(n, n, 1, |x, y, _| {
        if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
            1.0
        } else {
            0.0
        }
    })
}

/// Runs one DPW or SoftDTW check; a temperature the backward pass rejects
/// becomes a failed row carrying the error.
fn alignment_row(
    name: &str,
    rng: &mut ChaCha8Rng,
    instances: u64,
    gamma: f64,
    value: impl Fn(&Matrix) -> f64,
    grad: impl Fn(&Matrix) -> supervec::Result<Matrix>,
) -> Row {
    let mut pool = Pool::default();
    for _ in 0..instances {
        let d = Matrix::from_fn(4, 4, |_, _| rng.gen());
        let analytic = match grad(&d) {
            Ok(g) => g,
            Err(e) => {
                eprintln!("{name}: {e}");
                return Row::check(name, None, EXACT_TOL, false);
            }
        };
        let numeric = central_differences(
            |x| value(&Matrix::from_fn(4, 4, |i, j| x[i * 4 + j])),
            &d.data,
            1e-5,
        );
        pool.add(compare(&analytic.data, &numeric, EXACT_TOL, FLOOR));
    }
    log::info!("{name}: {instances} matrices at gamma {gamma}");
    pool.max_error_row(name)
}

pub fn run(args: &GradcheckArgs, common: &Common) -> CmdResult {
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
    let cfg = RenderConfig::default();
    let n = RENDER_SIZE;
    let mut report = Report::default();

    let (mut render_pool, mut bound_pool) = (Pool::default(), Pool::default());
    for _ in 0..args.instances {
        let scene = random_scene(&mut rng, 3);
        let up = random_upstream(&mut rng, n, n, 3);
        let analytic = render_with_grad(&scene, n, n, &cfg, &up)
            .or_status(Status::Pipeline, || "renderer".into())?;
        let numeric = central_differences(
            |x| {
                let seq = PathSequence::from_params(x).expect("parameter count is preserved");
                dot(&render(&seq, n, n, &cfg).expect("valid render").image, &up)
            },
            &scene.params(),
            RENDER_STEP,
        );
        render_pool.add(compare(&analytic, &numeric, RENDER_TOL, FLOOR));

        let mask = square_mask(&mut rng, n);
        let (_, analytic) = boundary_loss(&scene, &mask, &cfg)
            .or_status(Status::Pipeline, || "boundary loss".into())?;
        let numeric = central_differences(
            |x| {
                let seq = PathSequence::from_params(x).expect("parameter count is preserved");
                boundary_loss(&seq, &mask, &cfg).expect("valid mask").0
            },
            &scene.params(),
            RENDER_STEP,
        );
        bound_pool.add(compare(&analytic, &numeric, RENDER_TOL, FLOOR));
    }
    report.push(render_pool.fraction_row("render.fraction_within"));
    report.push(bound_pool.fraction_row("boundary.fraction_within"));

    let mut recon_pool = Pool::default();
    for _ in 0..args.instances {
        let m = 12;
        let image = RasterImage::from_fn(m, m, 3, |_, _, _| rng.gen());
        let mask =
            RasterImage::from_fn(m, m, 1, |_, _, _| if rng.gen_bool(0.7) { 1.0 } else { 0.0 });
        let patch = SuperpixelPatch {
            mask,
            ..SuperpixelPatch::whole(&image)
        };
        let rendered = RasterImage::from_fn(m, m, 3, |_, _, _| rng.gen());
        let (_, analytic) =
            recon_loss(&rendered, &patch).or_status(Status::Pipeline, || "recon loss".into())?;
        let numeric = central_differences(
            |x| {
                let r = RasterImage {
                    data: x.to_vec(),
                    ..rendered.clone()
                };
                recon_loss(&r, &patch).expect("matching shapes").0
            },
            &rendered.data,
            1e-6,
        );
        recon_pool.add(compare(&analytic.data, &numeric, EXACT_TOL, FLOOR));
    }
    report.push(recon_pool.max_error_row("recon.max_rel_error"));

    let g = args.gamma;
    report.push(alignment_row(
        "dpw.max_rel_error",
        &mut rng,
        args.instances,
        g,
        |d| dpw_forward(d, g).map_or(f64::NAN, |r| r.0),
        |d| dpw_forward(d, g).and_then(|(_, t)| dpw_backward(&t, d)),
    ));
    report.push(alignment_row(
        "softdtw.max_rel_error",
        &mut rng,
        args.instances,
        g,
        |d| softdtw_forward(d, g).unwrap_or(f64::NAN),
        |d| softdtw_backward(d, g).map(|r| r.1),
    ));

    let mut path_pool = Pool::default();
    let mut path_error = None;
    for _ in 0..args.instances {
        let targets = random_scene(&mut rng, 3);
        let generated = random_scene(&mut rng, 4);
        match alignment_loss(AlignmentKind::Dpw, &targets, &generated, g) {
            Ok((_, analytic)) => {
                let numeric = central_differences(
                    |x| {
                        let seq =
                            PathSequence::from_params(x).expect("parameter count is preserved");
                        alignment_loss(AlignmentKind::Dpw, &targets, &seq, g)
                            .map_or(f64::NAN, |r| r.0)
                    },
                    &generated.params(),
                    1e-6,
                );
                path_pool.add(compare(&analytic, &numeric, EXACT_TOL, FLOOR));
            }
            Err(e) => {
                path_error = Some(e);
                break;
            }
        }
    }
    report.push(match path_error {
        None => path_pool.max_error_row("alignment.max_rel_error"),
        Some(e) => {
            eprintln!("alignment.max_rel_error: {e}");
            Row::check("alignment.max_rel_error", None, EXACT_TOL, false)
        }
    });

    report
        .emit(common.report_format, common.report.as_deref())
        .or_status(Status::Output, || "cannot write the report".into())?;
    Ok(if report.all_pass() {
        Status::Ok
    } else {
        Status::CheckFailed
    })
}
