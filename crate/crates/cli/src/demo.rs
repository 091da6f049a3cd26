use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use supervec::dpw::AlignmentKind;
use supervec::geometry::PathSequence;
use supervec::optimize::{
    fig4_experiment, fig4_optimizer, fig5_experiment, fig5_optimizer, Fig4Outcome, Fig5Config,
    Fig5Outcome, StageResult,
};
use supervec::raster::{render, RenderConfig};
use supervec::scenes::{emoji_targets, fig4_scene};

use crate::report::{Report, Row};
use crate::{CmdResult, Common, Failure, OrStatus, Status};

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Directory for snapshots, loss curves and the summary.
    #[arg(long, default_value = "dpw-demo")]
    pub out_dir: PathBuf,
    /// Steps between snapshots.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub snapshot_every: u64,
    /// Side of the snapshot images in pixels.
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u64).range(16..=4096))]
    pub snapshot_size: u64,
}

fn write_snapshots(
    dir: &Path,
    stage: &StageResult,
    backdrop: &PathSequence,
    size: usize,
    cfg: &RenderConfig,
) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).or_status(Status::Output, || {
        format!("cannot create {}", dir.display())
    })?;
    for (step, paths) in &stage.snapshots {
        let file = dir.join(format!("step_{step:05}.png"));
        render(&backdrop.concat(paths), size, size, cfg)
            .and_then(|r| r.image.save_png(&file))
            .or_status(Status::Output, || {
                format!("cannot write {}", file.display())
            })?;
    }
    let csv = dir.join("loss.csv");
    stage
        .write_loss_csv(&csv)
        .or_status(Status::Output, || format!("cannot write {}", csv.display()))
}

fn fig4_line(name: &str, o: &Fig4Outcome) -> String {
    format!(
        "{name}: visible area {:.0} -> {:.0} px (ratio {:.4}), IoU with missing path {:.3}",
        o.initial_area,
        o.final_area,
        o.area_ratio(),
        o.iou
    )
}

fn fig5_line(name: &str, o: &Fig5Outcome) -> String {
    format!(
        "{name}: nearest targets {:?}, averaging events (path, target, target) {:?}, recon {:.3e}",
        o.nearest, o.averaging, o.recon
    )
}

pub fn run(args: &DemoArgs, common: &Common) -> CmdResult {
    let cfg = RenderConfig::default();
    let size = args.snapshot_size as usize;
    let out = &args.out_dir;
    std::fs::create_dir_all(out).or_status(Status::Output, || {
        format!("cannot create {}", out.display())
    })?;
    let mut report = Report::default();
    let mut summary = String::new();

    let (_, canvas, _, _) = fig4_scene();
    let opt = supervec::optimize::OptimizerConfig {
        seed: common.seed,
        snapshot_every: args.snapshot_every as usize,
        ..fig4_optimizer()
    };
    for (guided, tag) in [(false, "l2"), (true, "dpw")] {
        let o = fig4_experiment(guided, &opt, &cfg)
            .or_status(Status::Pipeline, || format!("fig4 {tag} branch"))?;
        write_snapshots(
            &out.join(format!("fig4_{tag}")),
            &o.stage,
            &canvas,
            size,
            &cfg,
        )?;
        writeln!(summary, "{}", fig4_line(&format!("fig4 {tag}"), &o)).unwrap();
        if guided {
            report.push(Row::check("fig4.dpw.iou", Some(o.iou), 0.5, o.iou > 0.5));
        } else {
            report.push(Row::check(
                "fig4.l2.area_ratio",
                Some(o.area_ratio()),
                0.01,
                o.area_ratio() < 0.01,
            ));
        }
    }

    let targets = emoji_targets();
    let opt = supervec::optimize::OptimizerConfig {
        snapshot_every: args.snapshot_every as usize,
        ..fig5_optimizer(common.seed)
    };
    for (kind, tag) in [
        (AlignmentKind::SoftDtw, "softdtw"),
        (AlignmentKind::Dpw, "dpw"),
    ] {
        let f5 = Fig5Config {
            kind,
            ..Fig5Config::default()
        };
        let o = fig5_experiment(&targets, &f5, &opt, &cfg)
            .or_status(Status::Pipeline, || format!("fig5 {tag} branch"))?;
        write_snapshots(
            &out.join(format!("fig5_{tag}")),
            &o.stage,
            &PathSequence::default(),
            size,
            &cfg,
        )?;
        writeln!(summary, "{}", fig5_line(&format!("fig5 {tag}"), &o)).unwrap();
        let events = o.averaging.len() as f64;
        match kind {
            AlignmentKind::SoftDtw => report.push(Row::check(
                "fig5.softdtw.averaging_events",
                Some(events),
                1.0,
                events >= 1.0,
            )),
            AlignmentKind::Dpw => report.push(Row::check(
                "fig5.dpw.averaging_events",
                Some(events),
                0.0,
                events == 0.0,
            )),
        }
    }

    let file = out.join("summary.txt");
    std::fs::write(&file, &summary).or_status(Status::Output, || {
        format!("cannot write {}", file.display())
    })?;
    eprint!("{summary}");
    report
        .emit(common.report_format, common.report.as_deref())
        .or_status(Status::Output, || "cannot write the report".into())?;
    Ok(if report.all_pass() {
        Status::Ok
    } else {
        Status::CheckFailed
    })
}
