use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::anyhow;
use clap::Args;
use supervec::metrics::evaluate;
use supervec::optimize::{vectorize_image, FinetuneConfig, OptimizerConfig, PipelineConfig};
use supervec::raster::{render, RasterImage, RenderConfig};
use supervec::superpixel::SuperpixelConfig;
use supervec::svgio::to_svg_visible;

use crate::report::{Report, Row};
use crate::{CmdResult, Common, Failure, OrStatus, Status};

#[derive(Debug, Args)]
pub struct VectorizeArgs {
    /// Input image (PNG or JPEG).
    pub input: PathBuf,
    /// Output SVG. Defaults to the input path with an .svg extension.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Upper bound on visible paths.
    #[arg(long = "paths", default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_paths: u64,
    /// Superpixel count; derived from the path budget when omitted.
    #[arg(long = "superpixels", value_parser = clap::value_parser!(u64).range(1..))]
    pub n_superpixels: Option<u64>,
    #[arg(long, default_value_t = 30.0, value_parser = positive)]
    pub compactness: f64,
    /// Wall-clock cap of the joint finetune; 0 disables it.
    #[arg(long, default_value_t = 10.0, value_parser = non_negative)]
    pub finetune_seconds: f64,
    #[arg(long, default_value_t = 500)]
    pub finetune_steps: usize,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    pub coarse_steps: u64,
    #[arg(long, default_value_t = 300, value_parser = clap::value_parser!(u64).range(1..))]
    pub refine_steps: u64,
    /// Edge smoothing width in pixels, within [0.25, 4].
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    /// Also write `<output>.preview.png` and report image metrics.
    #[arg(long)]
    pub preview: bool,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a non-negative number, got {s:?}")),
    }
}

pub fn preview_path(output: &Path) -> PathBuf {
    output.with_extension("preview.png")
}

impl VectorizeArgs {
    pub fn pipeline(&self, seed: u64) -> PipelineConfig {
        let finetune_on = self.finetune_seconds > 0.0 && self.finetune_steps > 0;
        PipelineConfig {
            superpixels: SuperpixelConfig {
                n_superpixels: self.n_superpixels.map(|n| n as usize),
                compactness: self.compactness,
                ..SuperpixelConfig::default()
            },
            coarse: OptimizerConfig {
                steps: self.coarse_steps as usize,
                seed,
                ..OptimizerConfig::default()
            },
            refine: OptimizerConfig {
                steps: self.refine_steps as usize,
                seed,
                ..OptimizerConfig::default()
            },
            finetune: FinetuneConfig {
                steps: if finetune_on { self.finetune_steps } else { 0 },
                max_seconds: Some(self.finetune_seconds),
            },
            render: RenderConfig::default().with_tau(self.tau),
            ..PipelineConfig::default()
        }
    }
}

fn pipeline_status(e: &supervec::Error) -> Status {
    match e {
        supervec::Error::BudgetTooSmall { .. } | supervec::Error::TooManySuperpixels { .. } => {
            Status::Budget
        }
        supervec::Error::InvalidArgument(_) => Status::Usage,
        _ => Status::Pipeline,
    }
}

fn check_writable(path: &Path) -> Result<(), Failure> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        return Err(anyhow!("directory {} does not exist", parent.display()))
            .or_status(Status::Output, || {
                format!("cannot write {}", path.display())
            });
    }
    if path.is_dir() {
        return Err(anyhow!("it is a directory")).or_status(Status::Output, || {
            format!("cannot write {}", path.display())
        });
    }
    Ok(())
}

pub fn run(args: &VectorizeArgs, common: &Common) -> CmdResult {
    let output = args
        .output
        .clone()
        .unwrap_or_else(|| args.input.with_extension("svg"));
    check_writable(&output)?;
    let preview = args.preview.then(|| preview_path(&output));
    if let Some(p) = &preview {
        check_writable(p)?;
    }
    let image = RasterImage::load(&args.input).or_status(Status::Input, || {
        format!("cannot read {}", args.input.display())
    })?;
    let (w, h) = (image.width, image.height);
    log::info!("loaded {} ({w}x{h})", args.input.display());

    let pc = args.pipeline(common.seed);
    let start = Instant::now();
    let v = vectorize_image(&image, args.n_paths as usize, &pc).map_err(|e| Failure {
        status: pipeline_status(&e),
        error: anyhow::Error::new(e).context(format!("vectorizing {}", args.input.display())),
    })?;
    let seconds = start.elapsed().as_secs_f64();

    let doc = to_svg_visible(&v.paths, w, h);
    doc.save(&output).or_status(Status::Output, || {
        format!("cannot write {}", output.display())
    })?;

    let mut report = Report::default();
    report.push(Row::measure(
        "vectorize.superpixels",
        v.superpixels.num_labels as f64,
    ));
    let emitted = doc.elements.len();
    report.push(Row::check(
        "vectorize.visible_paths",
        Some(emitted as f64),
        args.n_paths as f64,
        emitted as u64 <= args.n_paths,
    ));
    report.push(Row::measure(
        "vectorize.refine_rounds",
        v.refine_rounds as f64,
    ));
    report.push(Row::measure(
        "vectorize.finetune_steps",
        v.finetune_steps as f64,
    ));
    report.push(Row::measure("vectorize.seconds", seconds));

    if let Some(p) = &preview {
        let rgb = image.to_rgb();
        let shown = render(&v.paths, w, h, &pc.render)
            .or_status(Status::Pipeline, || "rendering the preview".into())?
            .image;
        shown
            .save_png(p)
            .or_status(Status::Output, || format!("cannot write {}", p.display()))?;
        let m = evaluate(&shown, &rgb)
            .or_status(Status::Pipeline, || "measuring the preview".into())?;
        report.push(Row::measure("preview.mse", m.mse));
        report.push(Row::measure("preview.psnr", m.psnr));
        report.push(Row::measure("preview.ssim", m.ssim));
    }
    report
        .emit(common.report_format, common.report.as_deref())
        .or_status(Status::Output, || "cannot write the report".into())?;
    Ok(if report.all_pass() {
        Status::Ok
    } else {
        Status::CheckFailed
    })
}
