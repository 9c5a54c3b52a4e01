use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use centroid_vote::centroid::{
    accumulate_depth_errors, fit_height_prior, DepthErrorAccumulator, HeightPrior, DEFAULT_GRID,
};
use centroid_vote::evaluation::{
    evaluate, mce_curve, report_csv, report_table, ApMode, Difficulty, DifficultyRegime,
    EvalConfig, EvalRow, Metric, DEFAULT_BIN_WIDTH, DEFAULT_MAX_DISTANCE,
};
use centroid_vote::fitting::{
    fit_gaussian_kl, fit_gaussian_mle, fit_linear_head, head_mse, mean_head, offsets_from_csv,
    KlDescentConfig, DEFAULT_RIDGE,
};
use centroid_vote::geometry::Box2D;
use centroid_vote::kitti_io::{
    read_calib_dir, read_detection_dir, read_label_dir, read_roi_dir, read_text,
    write_detection_file, CalibOptions, FrameId, ObjectClass,
};
use centroid_vote::pipeline::{infer_frame, locate, InferenceConfig};
use centroid_vote::synth::{generate_corpus, write_atomic, write_corpus, SceneConfig};
use centroid_vote::voting::{
    read_attention_dir, GaussianOffsetModel, LinearHead, OffsetUnits, VotingHead,
};
use centroid_vote::Error;

/// Monocular 3D centroid reasoning and KITTI-style evaluation.
#[derive(Parser)]
#[command(name = "centroid-vote", version)]
struct Cli {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Projection-matrix key read from calibration files.
    #[arg(long, global = true, default_value = "P2")]
    camera_key: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GpdMethod {
    Mle,
    Kl,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadKind {
    Mean,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum Units {
    /// Offsets divided by RoI width and height.
    Roi,
    Pixels,
}

impl From<Units> for OffsetUnits {
    fn from(u: Units) -> Self {
        match u {
            Units::Roi => OffsetUnits::RoiNormalized,
            Units::Pixels => OffsetUnits::Pixels,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Depth-error statistics of the height-prior depth estimate.
    Stats {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long, default_value = "Car")]
        class: String,
        /// Height prior file; fitted from the labels when absent.
        #[arg(long)]
        prior: Option<PathBuf>,
        /// Use detected 2D boxes (KITTI result or label files), matched to
        /// ground truth at 2D IoU >= 0.5, instead of the labelled boxes.
        #[arg(long)]
        det_boxes: Option<PathBuf>,
        /// Histogram CSV destination (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-class mean dimensions from label files.
    FitPrior {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Classes that must be present.
        #[arg(long, value_delimiter = ',', default_value = "Car")]
        require: Vec<String>,
    },
    /// Fit the projection-offset Gaussian from an offsets CSV.
    FitGpd {
        #[arg(long)]
        offsets: PathBuf,
        #[arg(long, value_enum, default_value = "mle")]
        method: GpdMethod,
        #[arg(long)]
        out: PathBuf,
        /// Learning rate for the KL descent.
        #[arg(long, default_value_t = KlDescentConfig::default().learning_rate)]
        lr: f64,
        #[arg(long, default_value_t = KlDescentConfig::default().max_iters)]
        max_iters: usize,
    },
    /// Fit the linear voting head against ground-truth centroids.
    FitHead {
        #[arg(long)]
        boxes2d: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        gpd: PathBuf,
        #[arg(long)]
        aam: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
        #[arg(long, value_enum, default_value = "roi")]
        units: Units,
        #[arg(long, default_value_t = DEFAULT_RIDGE)]
        lambda: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// 3D detections from 2D boxes.
    Infer {
        #[arg(long)]
        boxes2d: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        gpd: PathBuf,
        /// Attention maps, one `<frame>.csv` or `<frame>.bin` per frame;
        /// uniform 0.5 when absent.
        #[arg(long)]
        aam: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "mean")]
        head: HeadKind,
        #[arg(long, required_if_eq("head", "linear"))]
        head_params: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
        #[arg(long, value_enum, default_value = "roi")]
        units: Units,
        #[arg(long)]
        out: PathBuf,
    },
    /// BEV or 3D average precision.
    Eval {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        gts: PathBuf,
        #[arg(long, default_value = "3d")]
        metric: Metric,
        #[arg(long, default_value_t = 0.7)]
        iou: f64,
        /// All three regimes when absent.
        #[arg(long)]
        regime: Option<Difficulty>,
        #[arg(long, default_value = "11")]
        ap: ApMode,
        #[arg(long, default_value = "Car")]
        class: String,
        /// CSV destination (appended to stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean centroid error against distance.
    Mce {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        gts: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
        bin: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_DISTANCE)]
        max_distance: f64,
        /// Restrict to one class.
        #[arg(long)]
        class: Option<String>,
        /// CSV destination (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Plot data destination.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Synthetic KITTI-style corpus.
    Synth {
        /// TOML scene description; defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Format { .. } | Error::Parse { .. } => 3,
        Error::Validation(_)
        | Error::DegenerateBox { .. }
        | Error::Domain(_)
        | Error::Shape { .. }
        | Error::MissingClass(_)
        | Error::BehindCamera { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let calib_opts = CalibOptions {
        key: cli.camera_key,
        ..CalibOptions::default()
    };
    match run(cli.command, &calib_opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn write_out(path: &Path, text: &str) -> centroid_vote::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    write_atomic(path, text.as_bytes())
}

fn emit(path: Option<&Path>, text: &str) -> centroid_vote::Result<()> {
    match path {
        Some(p) => write_out(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_prior(path: &Path) -> centroid_vote::Result<HeightPrior> {
    HeightPrior::from_text(&read_text(path)?).map_err(|e| e.in_file(path))
}

fn load_gpd(path: &Path) -> centroid_vote::Result<GaussianOffsetModel> {
    GaussianOffsetModel::from_text(&read_text(path)?).map_err(|e| e.in_file(path))
}

/// Best-overlapping box of the same class at 2D IoU >= 0.5.
fn best_match<'a>(
    class: &ObjectClass,
    target: &Box2D,
    candidates: impl IntoIterator<Item = (&'a ObjectClass, &'a Box2D)>,
) -> Option<Box2D> {
    candidates
        .into_iter()
        .filter(|(c, _)| *c == class)
        .map(|(_, b)| (target.iou(b), *b))
        .filter(|(iou, _)| *iou >= 0.5)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, b)| b)
}

fn run(cmd: Command, calib_opts: &CalibOptions) -> centroid_vote::Result<()> {
    match cmd {
        Command::Stats {
            labels,
            calib,
            class,
            prior,
            det_boxes,
            out,
        } => {
            let class = ObjectClass::from(class.as_str());
            let gts = read_label_dir(&labels)?;
            let cams = read_calib_dir(&calib, calib_opts)?;
            let prior = match prior {
                Some(p) => load_prior(&p)?,
                None => fit_height_prior(gts.values().flatten(), std::slice::from_ref(&class))?,
            };
            let dets = det_boxes.map(|d| read_roi_dir(&d)).transpose()?;
            let mut acc = DepthErrorAccumulator::default();
            for (id, objects) in &gts {
                let cam = cams.get(id).ok_or_else(|| {
                    Error::Validation(format!(
                        "no calibration for frame {id} in {}",
                        calib.display()
                    ))
                })?;
                match dets.as_ref() {
                    None => accumulate_depth_errors(&mut acc, cam, objects, &prior, &class, |o| {
                        Some(o.box2d)
                    })?,
                    Some(d) => {
                        let regions = d.get(id).map(Vec::as_slice).unwrap_or(&[]);
                        accumulate_depth_errors(&mut acc, cam, objects, &prior, &class, |o| {
                            best_match(
                                &o.class,
                                &o.box2d,
                                regions.iter().map(|r| (&r.class, &r.box2d)),
                            )
                        })?
                    }
                }
            }
            let stats = acc.finish()?;
            emit(out.as_deref(), &stats.to_csv())?;
            eprintln!(
                "{class}: n = {}, mean dZ = {:.4} m, std dZ = {:.4} m",
                stats.n, stats.mean, stats.std
            );
        }
        Command::FitPrior {
            labels,
            out,
            require,
        } => {
            let gts = read_label_dir(&labels)?;
            let required: Vec<ObjectClass> = require
                .iter()
                .map(|c| ObjectClass::from(c.as_str()))
                .collect();
            let prior = fit_height_prior(gts.values().flatten(), &required)?;
            write_out(&out, &prior.to_text())?;
        }
        Command::FitGpd {
            offsets,
            method,
            out,
            lr,
            max_iters,
        } => {
            let samples =
                offsets_from_csv(&read_text(&offsets)?).map_err(|e| e.in_file(&offsets))?;
            let pts: Vec<[f64; 2]> = samples.iter().map(|s| s.offset).collect();
            let model = match method {
                GpdMethod::Mle => fit_gaussian_mle(&pts)?,
                GpdMethod::Kl => {
                    let init = GaussianOffsetModel::new([0.0, 0.0], [1.0, 1.0])?;
                    let cfg = KlDescentConfig {
                        learning_rate: lr,
                        max_iters,
                        ..KlDescentConfig::default()
                    };
                    let fit = fit_gaussian_kl(&pts, &init, &cfg)?;
                    log::info!("KL descent: {} iterations", fit.iterations);
                    fit.model
                }
            };
            write_out(&out, &model.to_text())?;
        }
        Command::FitHead {
            boxes2d,
            labels,
            calib,
            prior,
            gpd,
            aam,
            grid,
            units,
            lambda,
            out,
        } => {
            let rois = read_roi_dir(&boxes2d)?;
            let gts = read_label_dir(&labels)?;
            let cams = read_calib_dir(&calib, calib_opts)?;
            let prior = load_prior(&prior)?;
            let gpd = load_gpd(&gpd)?;
            let maps = aam.map(|d| read_attention_dir(&d, grid)).transpose()?;
            let cfg = InferenceConfig {
                grid,
                units: units.into(),
                head: VotingHead::Mean,
            };
            let mut inputs = Vec::new();
            let mut targets = Vec::new();
            for (id, regions) in &rois {
                let (Some(cam), Some(objects)) = (cams.get(id), gts.get(id)) else {
                    continue;
                };
                let frame_maps = maps.as_ref().and_then(|m| m.get(id));
                for (i, r) in regions.iter().enumerate() {
                    let Ok(h) = prior.height(&r.class) else {
                        continue;
                    };
                    let Some(matched) = best_match(
                        &r.class,
                        &r.box2d,
                        objects.iter().map(|o| (&o.class, &o.box2d)),
                    ) else {
                        continue;
                    };
                    let Some(gt) = objects
                        .iter()
                        .find(|o| o.class == r.class && o.box2d == matched)
                    else {
                        continue;
                    };
                    let located = locate(cam, &r.box2d, h, &gpd, frame_maps.map(|m| &m[i]), &cfg)?;
                    inputs.push(located.features());
                    targets.push(gt.box3d.center);
                }
            }
            let head = fit_linear_head(grid, &inputs, &targets, lambda)?;
            let mse_lin = head_mse(|x| head.apply(x), &inputs, &targets)?;
            let mse_mean = head_mse(mean_head, &inputs, &targets)?;
            eprintln!(
                "{} samples: training MSE linear {mse_lin:.4}, mean {mse_mean:.4}",
                inputs.len()
            );
            write_out(&out, &head.to_text()?)?;
        }
        Command::Infer {
            boxes2d,
            calib,
            prior,
            gpd,
            aam,
            head,
            head_params,
            grid,
            units,
            out,
        } => {
            let rois = read_roi_dir(&boxes2d)?;
            let cams = read_calib_dir(&calib, calib_opts)?;
            let prior = load_prior(&prior)?;
            let gpd = load_gpd(&gpd)?;
            let maps = aam.map(|d| read_attention_dir(&d, grid)).transpose()?;
            let head = match (head, head_params) {
                (HeadKind::Mean, _) => VotingHead::Mean,
                (HeadKind::Linear, Some(p)) => {
                    let h = LinearHead::from_text(&read_text(&p)?).map_err(|e| e.in_file(&p))?;
                    if h.side() != grid {
                        return Err(Error::Validation(format!(
                            "{}: head was fitted for grid {}, not {grid}",
                            p.display(),
                            h.side()
                        )));
                    }
                    VotingHead::Linear(h)
                }
                (HeadKind::Linear, None) => return Err(Error::UninitializedHead),
            };
            let cfg = InferenceConfig {
                grid,
                units: units.into(),
                head,
            };
            fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            let frames: Vec<(&FrameId, &Vec<_>)> = rois.iter().collect();
            frames.par_iter().try_for_each(|(id, regions)| {
                let cam = cams.get(id).ok_or_else(|| {
                    Error::Validation(format!(
                        "no calibration for frame {id} in {}",
                        calib.display()
                    ))
                })?;
                let frame_maps = maps.as_ref().and_then(|m| m.get(id)).map(Vec::as_slice);
                let dets = infer_frame(cam, regions, frame_maps, &prior, &gpd, &cfg)
                    .map_err(|e| e.in_file(boxes2d.join(format!("{id}.txt"))))?;
                write_out(&out.join(format!("{id}.txt")), &write_detection_file(&dets))
            })?;
        }
        Command::Eval {
            dets,
            gts,
            metric,
            iou,
            regime,
            ap,
            class,
            out,
        } => {
            let gt = read_label_dir(&gts)?;
            let det = read_detection_dir(&dets)?;
            let class = ObjectClass::from(class.as_str());
            let cfg = EvalConfig::new(class.clone(), metric, iou, ap)?;
            let regimes = match regime {
                Some(r) => vec![r],
                None => vec![Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard],
            };
            let rows: Vec<EvalRow> = regimes
                .into_iter()
                .map(|r| EvalRow {
                    class: class.clone(),
                    regime: r,
                    metric,
                    iou_threshold: iou,
                    ap: evaluate(&gt, &det, &cfg, &DifficultyRegime::from(r)),
                })
                .collect();
            print!("{}", report_table(&rows));
            match out {
                Some(p) => write_out(&p, &report_csv(&rows))?,
                None => print!("\n{}", report_csv(&rows)),
            }
        }
        Command::Mce {
            dets,
            gts,
            bin,
            max_distance,
            class,
            out,
            plot,
        } => {
            if !(bin > 0.0 && max_distance > 0.0) {
                return Err(Error::Validation(
                    "bin width and maximum distance must be positive".into(),
                ));
            }
            let gt = read_label_dir(&gts)?;
            let det = read_detection_dir(&dets)?;
            let class = class.map(|c| ObjectClass::from(c.as_str()));
            let empty = Vec::new();
            let frames = gt
                .iter()
                .map(|(id, g)| (det.get(id).unwrap_or(&empty).as_slice(), g.as_slice()));
            let curve = mce_curve(frames, class.as_ref(), bin, max_distance);
            if curve.skipped_frames > 0 {
                log::warn!(
                    "{} frames had ground truth but no detections",
                    curve.skipped_frames
                );
            }
            emit(out.as_deref(), &curve.to_csv())?;
            match plot {
                Some(p) => write_out(&p, &curve.to_plot_data())?,
                None if out.is_some() => print!("{}", curve.to_plot_data()),
                None => {}
            }
        }
        Command::Synth { config, out } => {
            let cfg = match config {
                Some(p) => SceneConfig::from_toml(&read_text(&p)?).map_err(|e| e.in_file(&p))?,
                None => SceneConfig::default(),
            };
            let scenes = generate_corpus(&cfg)?;
            write_corpus(&out, &scenes)?;
            let n: usize = scenes.iter().map(|s| s.objects.len()).sum();
            eprintln!(
                "wrote {} frames, {n} objects to {}",
                scenes.len(),
                out.display()
            );
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(
            exit_code(&Error::Format {
                line: 3,
                message: "bad".into()
            }),
            3
        );
        assert_eq!(
            exit_code(
                &Error::Format {
                    line: 3,
                    message: "bad".into()
                }
                .in_file("a.txt")
            ),
            3
        );
        assert_eq!(exit_code(&Error::Validation("x".into())), 4);
        assert_eq!(exit_code(&Error::ZeroMass), 1);
    }
}
