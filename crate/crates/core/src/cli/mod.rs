//! The `hdrf` command line. [`run`] parses arguments, dispatches to a
//! subcommand and maps the outcome to an exit code: 0 on success, 1 on a
//! usage error, 2 on a runtime error.

use crate::calib::{compare_crf, discrete_from_csv, discrete_to_csv, sample_sites, solve_crf, ExposureStack};
use crate::io::{atomic_write, load_dataset, write_image, DatasetBundle, MetaJson, META_FILE};
use crate::metrics::{evaluate, BundlePredictor, EvalProtocol};
use crate::model::{crf_curve_export, read_checkpoint, CrfCurve};
use crate::render::{render_image, CameraView, Pose, RenderMode};
use crate::synth::{make_dataset, GroundTruthCrf, SceneSpec};
use crate::train::{train, TrainConfig, TrainOutput};
use crate::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "HDRF_THREADS";

#[derive(Parser, Debug)]
#[command(name = "hdrf", version, about = "HDR radiance fields from multi-exposure LDR views")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic scene into a dataset directory.
    MakeDataset {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model; writes model.hdrf and loss.csv into the output directory.
    Train(TrainArgs),
    /// Render one view from a checkpoint.
    Render(RenderArgs),
    /// Score a checkpoint on a dataset's test views and write a metrics CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover the response curve classically from one pose's exposure stack.
    CalibrateCrf {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pose: usize,
        #[arg(long)]
        out: PathBuf,
        /// Pixel sites fed to the solver.
        #[arg(long, default_value_t = 400)]
        sites: usize,
        #[arg(long, default_value_t = crate::calib::DEFAULT_SMOOTHNESS)]
        smoothness: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sample the learned tone mapper on a log-exposure grid.
    ExportCrf {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = -12.0, allow_hyphen_values = true)]
        grid_min: f64,
        #[arg(long, default_value_t = 12.0, allow_hyphen_values = true)]
        grid_max: f64,
        #[arg(long, default_value_t = 961)]
        grid_points: usize,
    },
    /// Compare an exported curve with a classical table and/or the dataset's
    /// ground-truth response, printing RMSE and max deviation per channel.
    CompareCrf {
        #[arg(long)]
        learned: PathBuf,
        #[arg(long)]
        classical: Option<PathBuf>,
        /// Dataset whose recorded response serves as ground truth.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON file with training settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_rays: Option<usize>,
    #[arg(long)]
    coarse_samples: Option<usize>,
    #[arg(long)]
    fine_samples: Option<usize>,
    #[arg(long)]
    lr_start: Option<f64>,
    #[arg(long)]
    lr_end: Option<f64>,
    #[arg(long)]
    lambda_u: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Pose index (the n-th distinct camera in the dataset's meta.json) or
    /// a JSON file holding a 4x4 row-major camera-to-world matrix.
    #[arg(long)]
    pose: String,
    #[arg(long, conflicts_with = "hdr", required_unless_present = "hdr")]
    exposure: Option<f64>,
    #[arg(long)]
    hdr: bool,
    #[arg(long)]
    out: PathBuf,
    /// Dataset directory for pose indices; defaults to the one recorded in
    /// the checkpoint.
    #[arg(long)]
    data: Option<PathBuf>,
}

/// Pose file contents: a bare 16-float array or `{"c2w": [...]}`.
#[derive(Deserialize)]
#[serde(untagged)]
enum PoseFile {
    Bare(Vec<f64>),
    Wrapped { c2w: Vec<f64> },
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => {
                eprintln!("error: {THREADS_ENV} must be a positive integer, got {v:?}");
                return EXIT_USAGE;
            }
        },
        Err(_) => None,
    };
    let result = match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(Error::Input(format!("cannot start {n} worker threads: {e}"))),
        },
        None => dispatch(cli.command),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::MakeDataset { scene, out, seed } => {
            let spec: SceneSpec = read_json(&scene)?;
            let report = make_dataset(&spec, &out, seed)?;
            println!("wrote {} views to {}", report.meta.views.len(), out.display());
            if !report.unconverged.is_empty() {
                println!("ground truth did not converge for poses {:?}", report.unconverged);
            }
            Ok(())
        }
        Command::Train(args) => run_train(args),
        Command::Render(args) => run_render(args),
        Command::Eval { ckpt, data, out } => {
            let (meta, bundle) = read_checkpoint(&ckpt)?;
            let data = load_dataset(&data)?;
            let predictor = BundlePredictor {
                bundle: &bundle,
                frame: data.frame,
                settings: meta.render,
            };
            let report = evaluate(&predictor, &data, &EvalProtocol::for_dataset(&data))?;
            let csv = report.to_csv();
            atomic_write(&out, csv.as_bytes())?;
            print!("{csv}");
            Ok(())
        }
        Command::CalibrateCrf {
            data,
            pose,
            out,
            sites,
            smoothness,
            seed,
        } => {
            let data = load_dataset(&data)?;
            let stack = pose_stack(&data, pose)?;
            let images: Vec<_> = stack.iter().map(|(img, _)| *img).collect();
            let dts: Vec<f64> = stack.iter().map(|(_, dt)| *dt).collect();
            let chosen = sample_sites(&images, sites, seed)?;
            let tables = solve_crf(&ExposureStack::from_images(&images, &dts, &chosen)?, smoothness)?;
            atomic_write(&out, discrete_to_csv(&tables).as_bytes())
        }
        Command::ExportCrf {
            ckpt,
            out,
            grid_min,
            grid_max,
            grid_points,
        } => {
            if grid_points < 2 || !(grid_max > grid_min) {
                return Err(Error::Input("the grid needs at least 2 points and grid_max > grid_min".into()));
            }
            let (_, bundle) = read_checkpoint(&ckpt)?;
            let grid: Vec<f64> = (0..grid_points)
                .map(|i| grid_min + (grid_max - grid_min) * i as f64 / (grid_points - 1) as f64)
                .collect();
            let curve = crf_curve_export(&bundle.tone, &grid)?;
            atomic_write(&out, curve.to_csv().as_bytes())
        }
        Command::CompareCrf { learned, classical, data } => {
            let curve = CrfCurve::from_csv(&read_text(&learned)?)?;
            let classical = classical.map(|p| discrete_from_csv(&read_text(&p)?)).transpose()?;
            let gt = match data {
                Some(d) => {
                    let meta: MetaJson = read_json(&d.join(META_FILE))?;
                    Some(
                        meta.crf
                            .map(GroundTruthCrf::from)
                            .ok_or_else(|| Error::Input(format!("{} records no response curve", d.display())))?,
                    )
                }
                None => None,
            };
            if classical.is_none() && gt.is_none() {
                return Err(Error::Input("nothing to compare against: pass --classical and/or --data".into()));
            }
            let report = compare_crf(&curve, classical.as_ref(), gt.as_ref())?;
            println!("reference,channel,rmse,max_abs,points");
            let rows = [("classical", report.vs_classical), ("ground_truth", report.vs_ground_truth)];
            for (name, dev) in rows {
                if let Some(d) = dev {
                    for (c, ch) in d.channels.iter().enumerate() {
                        println!("{name},{c},{:.6},{:.6},{}", ch.rmse, ch.max_abs, ch.points);
                    }
                }
            }
            Ok(())
        }
    }
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut config: TrainConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => {$(
            if let Some(v) = args.$f {
                config.$f = v;
            }
        )*};
    }
    set!(iterations, batch_rays, coarse_samples, fine_samples, lr_start, lr_end, lambda_u, checkpoint_every, seed);
    config.validate()?;
    let data = load_dataset(&args.data)?;
    std::fs::create_dir_all(&args.out).map_err(|source| Error::Io {
        path: args.out.clone(),
        source,
    })?;
    let outcome = train(&data, &config, Some(&TrainOutput { dir: args.out.clone() }))?;
    if let Some(last) = outcome.history.last() {
        println!(
            "trained {} steps, final loss {:.6}; checkpoint in {}",
            outcome.meta.step,
            last.total,
            args.out.display()
        );
    }
    Ok(())
}

fn run_render(args: RenderArgs) -> Result<()> {
    let (meta, bundle) = read_checkpoint(&args.ckpt)?;
    let pose = match resolve_pose_file(&args.pose)? {
        Some(p) => p,
        None => {
            let index: usize = args.pose.parse().map_err(|_| {
                Error::Input(format!("--pose {:?} is neither an index nor an existing file", args.pose))
            })?;
            let dir = match args.data.or(meta.data_dir.as_ref().map(PathBuf::from)) {
                Some(d) => d,
                None => {
                    return Err(Error::Input(
                        "the checkpoint records no dataset; pass --data to resolve pose indices".into(),
                    ))
                }
            };
            let meta_json: MetaJson = read_json(&dir.join(META_FILE))?;
            let poses = distinct_poses(&meta_json);
            let c2w = poses.get(index).ok_or_else(|| {
                Error::Input(format!("pose {index} out of range, {} has {} poses", dir.display(), poses.len()))
            })?;
            Pose::from_c2w(c2w)?
        }
    };
    let (mode, dt) = match args.exposure {
        Some(t) if !(t > 0.0 && t.is_finite()) => {
            return Err(Error::Input(format!("exposure time must be positive, got {t}")))
        }
        Some(t) => (RenderMode::Ldr { exposure_time: t }, t),
        None => (RenderMode::Hdr, 1.0),
    };
    let is_pfm = args.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm"));
    if args.hdr && !is_pfm {
        return Err(Error::Input("HDR renders must be written as .pfm".into()));
    }
    let view = CameraView {
        pose,
        intrinsics: meta.frame.intrinsics,
        exposure_time: dt,
    };
    let img = render_image(&view, &meta.frame, &bundle, mode, &meta.render)?;
    write_image(&args.out, &img)
}

/// Reads a pose JSON file if `arg` names one that exists.
fn resolve_pose_file(arg: &str) -> Result<Option<Pose>> {
    let path = Path::new(arg);
    if !path.is_file() {
        return Ok(None);
    }
    let c2w = match read_json::<PoseFile>(path)? {
        PoseFile::Bare(v) | PoseFile::Wrapped { c2w: v } => v,
    };
    Pose::from_c2w(&c2w).map(Some)
}

/// Distinct camera matrices in view order.
fn distinct_poses(meta: &MetaJson) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in &meta.views {
        if !out.contains(&v.c2w) {
            out.push(v.c2w.clone());
        }
    }
    out
}

/// Every image of pose `index` with its exposure time, sorted by exposure.
fn pose_stack(data: &DatasetBundle, index: usize) -> Result<Vec<(&crate::io::ImageBuffer, f64)>> {
    let poses = distinct_poses(&data.to_meta());
    let c2w = poses.get(index).ok_or_else(|| {
        Error::Input(format!("pose {index} out of range, the dataset has {} poses", poses.len()))
    })?;
    let target = Pose::from_c2w(c2w)?;
    let mut stack: Vec<_> = data
        .views
        .iter()
        .filter(|v| v.view.pose == target)
        .map(|v| (&v.image, v.view.exposure_time))
        .collect();
    stack.sort_by(|a, b| a.1.total_cmp(&b.1));
    stack.dedup_by(|a, b| a.1 == b.1);
    if stack.len() < 2 {
        return Err(Error::Input(format!(
            "pose {index} has {} distinct exposure(s); calibration needs at least 2",
            stack.len()
        )));
    }
    Ok(stack)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
