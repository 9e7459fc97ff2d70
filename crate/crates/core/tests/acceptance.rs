//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Trained models and datasets are cached under the work directory
//! (`HDRF_ACCEPTANCE_WORKDIR`, default `<target>/tmp/acceptance`) and keyed
//! by their full configuration, so only the first run pays for training.
//! The process exits non-zero on a failed criterion only when
//! `HDRF_ACCEPTANCE_STRICT=1`. `HDRF_ACCEPTANCE_ONLY=1,2,9` restricts the
//! run to the listed criteria.

use hdrf_core::autodiff::finite_diff_check;
use hdrf_core::calib::{compare_crf, hat_weight, sample_sites, solve_crf, ExposureStack, GAUGE_CODE};
use hdrf_core::io::{load_dataset, DatasetBundle, ImageBuffer, Split};
use hdrf_core::metrics::{evaluate, mu_law_value, psnr, ssim, BundlePredictor, EvalProtocol, EvalReport, MU};
use hdrf_core::model::{crf_curve_export, read_checkpoint, FieldConfig, ModelBundle, ModelConfig, BundleVars};
use hdrf_core::render::{composite_deltas, Aabb, Ray, RenderSettings};
use hdrf_core::synth::{ldr_from_hdr, make_dataset, GroundTruthCrf, SceneSpec};
use hdrf_core::train::{record_total_loss, train, RayBatch, TrainConfig, TrainOutput, CHECKPOINT_FILE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

/// Bump when a code change invalidates cached datasets or models.
const CACHE_VERSION: u32 = 2;
const TRAIN_BUDGET_S: f64 = 45.0 * 60.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

type Check = hdrf_core::Result<Verdict>;

fn workdir() -> PathBuf {
    std::env::var_os("HDRF_ACCEPTANCE_WORKDIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

// ---------------------------------------------------------------- 1

fn gradient_check() -> Check {
    let t = Instant::now();
    let config = ModelConfig {
        field: FieldConfig {
            trunk_depth: 2,
            trunk_width: 8,
            head_width: 8,
        },
        tone_hidden: 4,
        ..Default::default()
    };
    let bundle = ModelBundle::init(config, 11)?;
    let bbox = Aabb {
        min: [-1.0; 3],
        max: [1.0; 3],
    };
    let tilt = {
        let d = [0.1f64, -0.05, -1.0];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        [d[0] / n, d[1] / n, d[2] / n]
    };
    let batch = RayBatch {
        rays: vec![
            Ray::new([0.0, 0.0, 3.0], [0.0, 0.0, -1.0], 2.0, 4.0)?,
            Ray::new([-0.2, 0.3, 3.0], tilt, 2.0, 4.0)?,
        ],
        ln_dt: vec![0.25f64.ln(), 1.0f64.ln()],
        targets: vec![[0.2, 0.5, 0.7], [0.9, 0.4, 0.1]],
    };
    let settings = RenderSettings {
        coarse_samples: 4,
        fine_samples: 4,
        ..Default::default()
    };
    let fixed = vec![vec![2.3, 2.8, 3.1, 3.6], vec![2.1, 2.6, 3.3, 3.9]];
    let report = finite_diff_check(
        |tape, p| {
            let vars = BundleVars::from_handles(&config, p)?;
            let (total, ..) = record_total_loss::<ChaCha8Rng>(
                tape,
                &vars,
                &config,
                &bbox,
                &batch,
                &settings,
                [0.5; 3],
                0.5,
                Some(&fixed),
                None,
            )?;
            Ok(total)
        },
        &bundle.to_tensors(),
        1e-6,
        1e-4,
    )?;
    let secs = t.elapsed().as_secs_f64();
    Ok(verdict(
        report.passed && secs < 10.0,
        format!(
            "{} parameters, max relative error {:.2e} (tol 1e-4), {secs:.1} s (limit 10 s)",
            report.coordinates, report.max_rel_error
        ),
    ))
}

// ---------------------------------------------------------------- 2

fn compositing_invariants() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_sum, mut worst_insert) = (0.0f64, 0.0f64);
    let mut monotone = true;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=64);
        let sigmas: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..50.0) })
            .collect();
        let mut deltas: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.5)).collect();
        if rng.gen_bool(0.5) {
            deltas[n - 1] = hdrf_core::render::TERMINAL_DELTA;
        }
        let values: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let out = composite_deltas(&sigmas, &values, &deltas)?;
        let total: f64 = out.weights.iter().sum::<f64>() + out.final_transmittance;
        worst_sum = worst_sum.max((total - 1.0).abs());
        let mut ts = out.transmittance.clone();
        ts.push(out.final_transmittance);
        monotone &= ts.windows(2).all(|w| w[1] <= w[0]);

        let at = rng.gen_range(0..=n);
        let (mut s2, mut d2, mut v2) = (sigmas.clone(), deltas.clone(), values.clone());
        s2.insert(at, 0.0);
        d2.insert(at, rng.gen_range(0.0..0.5));
        v2.insert(at, [rng.gen(), rng.gen(), rng.gen()]);
        let other = composite_deltas(&s2, &v2, &d2)?;
        for c in 0..3 {
            worst_insert = worst_insert.max((other.value[c] - out.value[c]).abs());
        }
        worst_insert = worst_insert.max((other.final_transmittance - out.final_transmittance).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    Ok(verdict(
        worst_sum <= 1e-9 && monotone && worst_insert <= 1e-12 && secs < 5.0,
        format!(
            "1000 rays: |sum w + T - 1| <= {worst_sum:.1e} (tol 1e-9), T non-increasing: {monotone}, \
             zero-density insertion moves output by {worst_insert:.1e} (tol 1e-12), {secs:.2} s (limit 5 s)"
        ),
    ))
}

// ---------------------------------------------------------------- shared desk runs

#[derive(Serialize, Deserialize, PartialEq)]
struct DataKey {
    version: u32,
    scene: SceneSpec,
    seed: u64,
}

#[derive(Serialize, Deserialize, PartialEq)]
struct RunKey {
    version: u32,
    data: String,
    config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct RunRecord {
    key: RunKey,
    train_seconds: f64,
}

fn two_exposure_scene() -> SceneSpec {
    SceneSpec {
        train_exposures: vec![0, 4],
        ..SceneSpec::default()
    }
}

/// Settings of the desk runs; sized for a single-core budget.
fn desk_config(lambda_u: f64) -> TrainConfig {
    TrainConfig {
        batch_rays: 64,
        iterations: 20_000,
        coarse_samples: 32,
        fine_samples: 32,
        lambda_u,
        checkpoint_every: 5000,
        model: ModelConfig {
            monotone_tone_mapper: true,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn cached_dataset(root: &Path, name: &str, scene: &SceneSpec) -> hdrf_core::Result<DatasetBundle> {
    let dir = root.join("data").join(name);
    let key_path = root.join("data").join(format!("{name}.key.json"));
    let key = DataKey {
        version: CACHE_VERSION,
        scene: scene.clone(),
        seed: 0,
    };
    let fresh = std::fs::read_to_string(&key_path)
        .ok()
        .and_then(|s| serde_json::from_str::<DataKey>(&s).ok())
        .is_some_and(|k| k == key);
    if !fresh {
        let _ = std::fs::remove_dir_all(&dir);
        let t = Instant::now();
        let report = make_dataset(scene, &dir, key.seed)?;
        eprintln!(
            "  generated {name}: {} views in {:.0} s, unconverged poses {:?}",
            report.meta.views.len(),
            t.elapsed().as_secs_f64(),
            report.unconverged
        );
        write_json(&key_path, &key);
    }
    load_dataset(&dir)
}

struct Run {
    bundle: ModelBundle,
    seconds: f64,
    report: EvalReport,
    c0: f64,
}

fn cached_run(root: &Path, name: &str, data: &DatasetBundle, config: TrainConfig) -> hdrf_core::Result<Run> {
    let dir = root.join("runs").join(name);
    let record_path = dir.join("run.json");
    let key = RunKey {
        version: CACHE_VERSION,
        data: data.root.display().to_string(),
        config,
    };
    let cached = std::fs::read_to_string(&record_path)
        .ok()
        .and_then(|s| serde_json::from_str::<RunRecord>(&s).ok())
        .filter(|r| r.key == key && dir.join(CHECKPOINT_FILE).is_file());
    let seconds = match cached {
        Some(r) => r.train_seconds,
        None => {
            let _ = std::fs::remove_dir_all(&dir);
            std::fs::create_dir_all(&dir).map_err(|source| hdrf_core::Error::Io {
                path: dir.clone(),
                source,
            })?;
            eprintln!("  training {name} ({} iterations)...", config.iterations);
            let t = Instant::now();
            train(data, &config, Some(&TrainOutput { dir: dir.clone() }))?;
            let train_seconds = t.elapsed().as_secs_f64();
            eprintln!("  trained {name} in {train_seconds:.0} s");
            write_json(&record_path, &RunRecord { key, train_seconds });
            train_seconds
        }
    };
    let (meta, bundle) = read_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    let predictor = BundlePredictor {
        bundle: &bundle,
        frame: data.frame,
        settings: meta.render,
    };
    let report = evaluate(&predictor, data, &EvalProtocol::for_dataset(data))?;
    let c0 = data.c0_gt.unwrap_or(0.5);
    Ok(Run {
        bundle,
        seconds,
        report,
        c0,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) {
    if let Some(p) = path.parent() {
        let _ = std::fs::create_dir_all(p);
    }
    std::fs::write(path, serde_json::to_string_pretty(value).expect("serializable")).expect("cache write");
}

fn metric(run: &Run, split: &str, m: &str) -> f64 {
    run.report.get(split, m).unwrap_or(f64::NAN)
}

// ---------------------------------------------------------------- 3

fn desk_end_to_end(run: &Run, data: &DatasetBundle) -> Check {
    let (oe, ne) = (metric(run, "ldr_oe", "psnr"), metric(run, "ldr_ne", "psnr"));
    let (oe_s, ne_s) = (metric(run, "ldr_oe", "ssim"), metric(run, "ldr_ne", "ssim"));
    let train_views = data.split(Split::Train).count();
    let mut test_poses = Vec::new();
    for v in data.split(Split::Test) {
        if !test_poses.contains(&v.view.pose) {
            test_poses.push(v.view.pose);
        }
    }
    let test_poses = test_poses.len();
    let pass = oe >= 28.0 && ne >= 25.0 && oe_s >= 0.85 && ne_s >= 0.85 && oe >= ne && run.seconds <= TRAIN_BUDGET_S;
    Ok(verdict(
        pass,
        format!(
            "{train_views} train views, {test_poses} test poses; LDR-OE {oe:.2} dB / SSIM {oe_s:.3} (>= 28, 0.85), \
             LDR-NE {ne:.2} dB / SSIM {ne_s:.3} (>= 25, 0.85), training {:.1} min on {} thread(s) (limit 45)",
            run.seconds / 60.0,
            rayon::current_num_threads()
        ),
    ))
}

// ---------------------------------------------------------------- 4

/// Classical solve over every test pose, tiled into one image per exposure.
fn classical_oracle(data: &DatasetBundle) -> hdrf_core::Result<[hdrf_core::calib::DiscreteCrf; 3]> {
    let test: Vec<_> = data.split(Split::Test).collect();
    let times = data.exposure_times();
    let mut poses = Vec::new();
    for v in &test {
        if !poses.contains(&v.view.pose) {
            poses.push(v.view.pose);
        }
    }
    let (w, h) = (data.frame.intrinsics.width, data.frame.intrinsics.height);
    let mut mosaics = Vec::new();
    let mut dts = Vec::new();
    for &t in &times {
        let tiles: Vec<_> = poses
            .iter()
            .filter_map(|p| test.iter().find(|v| v.view.pose == *p && v.view.exposure_time == t))
            .collect();
        if tiles.len() != poses.len() {
            continue;
        }
        let data: Vec<f64> = tiles.iter().flat_map(|v| v.image.data.iter().copied()).collect();
        mosaics.push(ImageBuffer::new(w, h * tiles.len(), data)?);
        dts.push(t);
    }
    let refs: Vec<&ImageBuffer> = mosaics.iter().collect();
    let sites = sample_sites(&refs, 1000, 0)?;
    solve_crf(&ExposureStack::from_images(&refs, &dts, &sites)?, hdrf_core::calib::DEFAULT_SMOOTHNESS)
}

fn crf_recovery(run: &Run, data: &DatasetBundle) -> Check {
    let grid: Vec<f64> = (0..=960).map(|i| -12.0 + 24.0 * i as f64 / 960.0).collect();
    let curve = crf_curve_export(&run.bundle.tone, &grid)?;
    let monotone = (0..3).all(|c| curve.channel(c).windows(2).all(|w| w[1] >= w[0]));
    let gt = data.crf.map(GroundTruthCrf::from);
    let oracle = classical_oracle(data)?;
    let report = compare_crf(&curve, Some(&oracle), gt.as_ref())?;
    let gt_rmse = report
        .vs_ground_truth
        .as_ref()
        .map(|d| d.channels.iter().map(|c| c.rmse).fold(0.0, f64::max))
        .unwrap_or(f64::NAN);
    let dm_max = report.vs_classical.as_ref().map(|d| d.max_abs()).unwrap_or(f64::NAN);
    Ok(verdict(
        gt_rmse <= 0.05 && dm_max <= 0.1 && monotone,
        format!(
            "RMSE vs ground truth {gt_rmse:.4} (<= 0.05, worst channel), max |dev| vs classical solve {dm_max:.4} \
             (<= 0.1), monotone on 961-point grid: {monotone}"
        ),
    ))
}

// ---------------------------------------------------------------- 5

fn hdr_accuracy(run: &Run) -> Check {
    let (p, s) = (metric(run, "hdr", "psnr"), metric(run, "hdr", "ssim"));
    Ok(verdict(
        p >= 25.0 && s >= 0.85,
        format!("scale-aligned mu-law (mu = {MU}) HDR PSNR {p:.2} dB (>= 25), SSIM {s:.3} (>= 0.85)"),
    ))
}

// ---------------------------------------------------------------- 6

fn unit_loss_ablation(with: &Run, without: &Run) -> Check {
    let g0: Vec<f64> = (0..3).map(|c| with.bundle.tone.eval_channel(c, 0.0)).collect();
    let anchor = g0.iter().map(|g| (g - with.c0).abs()).fold(0.0, f64::max);
    let hdr_ok = metric(with, "hdr", "psnr") >= 25.0 && metric(with, "hdr", "ssim") >= 0.85;
    let d_oe = (metric(without, "ldr_oe", "psnr") - metric(with, "ldr_oe", "psnr")).abs();
    let d_ne = (metric(without, "ldr_ne", "psnr") - metric(with, "ldr_ne", "psnr")).abs();
    let (u_with, u_without) = (metric(with, "hdr_unaligned", "psnr"), metric(without, "hdr_unaligned", "psnr"));
    let g0_free: Vec<f64> = (0..3).map(|c| without.bundle.tone.eval_channel(c, 0.0)).collect();
    Ok(verdict(
        anchor <= 1e-2 && hdr_ok && d_oe <= 2.0 && d_ne <= 2.0 && u_with - u_without >= 5.0,
        format!(
            "with L_u: max |g(0) - C0| {anchor:.2e} (<= 1e-2), HDR as in 5: {hdr_ok}; without L_u: LDR-OE moves \
             {d_oe:.2} dB, LDR-NE {d_ne:.2} dB (<= 2), unaligned HDR {u_with:.2} -> {u_without:.2} dB (drop >= 5), \
             g(0) = [{:.3}, {:.3}, {:.3}]",
            g0_free[0], g0_free[1], g0_free[2]
        ),
    ))
}

// ---------------------------------------------------------------- 7

fn exposure_count_ablation(three: &Run, two: &Run) -> Check {
    let (a, b) = (metric(three, "ldr_ne", "psnr"), metric(two, "ldr_ne", "psnr"));
    Ok(verdict(
        a - b >= 1.0,
        format!("LDR-NE with 3 exposures {a:.2} dB, with 2 exposures {b:.2} dB (gap {:.2}, >= 1)", a - b),
    ))
}

// ---------------------------------------------------------------- 8

fn classical_self_test() -> Check {
    let t = Instant::now();
    // gamma curve: a graded scene photographed at five exposures
    let crf = GroundTruthCrf::default();
    let (w, h) = (64, 32);
    let hdr: Vec<f64> = (0..w * h)
        .flat_map(|i| {
            let e = (i as f64 / (w * h - 1) as f64 * 11.0 - 6.0).exp();
            [e, e * 0.7, e * 1.4]
        })
        .collect();
    let hdr = ImageBuffer::new(w, h, hdr)?;
    let dts = [1.0 / 64.0, 1.0 / 16.0, 0.25, 1.0, 4.0];
    let imgs = dts.iter().map(|&dt| ldr_from_hdr(&hdr, dt, &crf)).collect::<hdrf_core::Result<Vec<_>>>()?;
    let refs: Vec<&ImageBuffer> = imgs.iter().collect();
    let sites = sample_sites(&refs, 400, 8)?;
    let d = solve_crf(&ExposureStack::from_images(&refs, &dts, &sites)?, hdrf_core::calib::DEFAULT_SMOOTHNESS)?;
    let truth = |z: usize| ((z as f64 / 255.0).powf(crf.gamma) / crf.gain).ln();
    let rmse = d
        .iter()
        .map(|ch| {
            let off = truth(GAUGE_CODE) - ch.g[GAUGE_CODE];
            let se: f64 = (10..=245).map(|z| (ch.g[z] + off - truth(z)).powi(2)).sum();
            (se / 236.0).sqrt()
        })
        .fold(0.0, f64::max);

    // linear sensor: each site's code doubles exactly between the pair,
    // over the same code range as above
    let linear = GroundTruthCrf { gamma: 1.0, gain: 1.0 };
    let codes: Vec<usize> = (10..=122).collect();
    let pair = [1.0, 2.0];
    let rows = 2;
    let make = |dt: f64| -> hdrf_core::Result<ImageBuffer> {
        let px: Vec<f64> = (0..rows)
            .flat_map(|_| codes.iter().flat_map(|&z| [z as f64 / 255.0; 3]))
            .collect();
        ldr_from_hdr(&ImageBuffer::new(codes.len(), rows, px)?, dt, &linear)
    };
    let pimgs = [make(pair[0])?, make(pair[1])?];
    let prefs: Vec<&ImageBuffer> = pimgs.iter().collect();
    let psites: Vec<(usize, usize)> = (0..rows).flat_map(|r| (0..codes.len()).map(move |c| (r, c))).collect();
    let pd = solve_crf(&ExposureStack::from_images(&prefs, &pair, &psites)?, 0.1)?;
    let gap = codes
        .iter()
        .filter(|&&z| hat_weight(z as u8) > 0.0 && hat_weight((2 * z) as u8) > 0.0)
        .map(|&z| (pd[0].g[2 * z] - pd[0].g[z] - 2f64.ln()).abs())
        .fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    Ok(verdict(
        rmse <= 0.02 && gap <= 1e-3 && secs < 30.0,
        format!(
            "gamma 2.2 stack: RMSE on codes 10-245 {rmse:.4} (<= 0.02); 2x pair: max |gap - ln 2| {gap:.1e} \
             (<= 1e-3); {secs:.2} s (limit 30 s)"
        ),
    ))
}

// ---------------------------------------------------------------- 9

fn metric_units() -> Check {
    let img = |w: usize, h: usize, v: &dyn Fn(usize) -> f64| ImageBuffer::new(w, h, (0..w * h * 3).map(v).collect());
    let ends = mu_law_value(0.0, MU) == 0.0 && mu_law_value(1.0, MU) == 1.0;
    let m = (mu_law_value(0.1, MU) - 501f64.ln() / 5001f64.ln()).abs();
    let closed = (2.0 * 0.25 * 0.75 + 1e-4) / (0.25f64.powi(2) + 0.75f64.powi(2) + 1e-4);
    let s = ssim(&img(16, 16, &|_| 0.25)?, &img(16, 16, &|_| 0.75)?, 1.0)?;
    let a = img(8, 8, &|i| (i % 5) as f64 / 10.0)?;
    let b = img(8, 8, &|i| (i % 5) as f64 / 10.0 + 0.1)?;
    let p = psnr(&a, &b, 1.0)?;
    Ok(verdict(
        ends && m <= 1e-12 && (s - closed).abs() <= 1e-6 && (p - 20.0).abs() <= 1e-9,
        format!(
            "mu-law endpoints exact: {ends}; |M(0.1) - ln501/ln5001| {m:.1e}; constant-image SSIM {s:.6} vs closed form \
             {closed:.6}; PSNR {p:.12} dB (20 within 1e-9)"
        ),
    ))
}

// ---------------------------------------------------------------- 10

fn cli(args: &[&str]) -> hdrf_core::Result<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_hdrf"))
        .args(args)
        .env("HDRF_THREADS", "2")
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| hdrf_core::Error::Input(format!("cannot run hdrf: {e}")))?;
    if !out.status.success() {
        return Err(hdrf_core::Error::Input(format!(
            "hdrf {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )));
    }
    Ok(())
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap_or_default()));
            }
        }
    }
    out.sort();
    out
}

fn determinism(root: &Path) -> Check {
    let t = Instant::now();
    let dir = root.join("determinism");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).map_err(|source| hdrf_core::Error::Io {
        path: dir.clone(),
        source,
    })?;
    let s = |p: &Path| p.display().to_string();
    let scene = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenes/desk.json");
    let config = dir.join("train.json");
    write_json(&config, &TrainConfig { iterations: 500, checkpoint_every: 250, ..desk_config(0.5) });

    let (da, db) = (dir.join("data_a"), dir.join("data_b"));
    for d in [&da, &db] {
        cli(&["make-dataset", "--scene", &s(&scene), "--out", &s(d), "--seed", "0"])?;
    }
    let data_same = tree_bytes(&da) == tree_bytes(&db);

    let (ra, rb) = (dir.join("run_a"), dir.join("run_b"));
    for r in [&ra, &rb] {
        cli(&["train", "--data", &s(&da), "--out", &s(r), "--config", &s(&config)])?;
        let ckpt = r.join(CHECKPOINT_FILE);
        cli(&["render", "--ckpt", &s(&ckpt), "--pose", "0", "--exposure", "0.25", "--out", &s(&r.join("ldr.png"))])?;
        cli(&["render", "--ckpt", &s(&ckpt), "--pose", "0", "--hdr", "--out", &s(&r.join("hdr.pfm"))])?;
    }
    let run_same = tree_bytes(&ra) == tree_bytes(&rb);
    let files = tree_bytes(&ra).len();
    let secs = t.elapsed().as_secs_f64();
    Ok(verdict(
        data_same && run_same,
        format!(
            "make-dataset identical: {data_same}; 500-step train + LDR/HDR render identical over {files} files: \
             {run_same} ({secs:.0} s, HDRF_THREADS=2)"
        ),
    ))
}

// ---------------------------------------------------------------- driver

struct Tally {
    only: Option<Vec<u32>>,
    failures: u32,
    run: u32,
}

impl Tally {
    fn wants(&self, id: u32) -> bool {
        self.only.as_ref().is_none_or(|o| o.contains(&id))
    }

    fn report(&mut self, id: u32, name: &str, check: impl FnOnce() -> Check) {
        if !self.wants(id) {
            println!("SKIP {id:>2} {name}");
            return;
        }
        let (tag, detail) = match check() {
            Ok(v) => (if v.pass { "PASS" } else { "FAIL" }, v.detail),
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        self.run += 1;
        if tag == "FAIL" {
            self.failures += 1;
        }
        println!("{tag} {id:>2} {name}: {detail}");
    }
}

fn main() {
    let root = workdir();
    let started = Instant::now();
    let only = std::env::var("HDRF_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut tally = Tally {
        only,
        failures: 0,
        run: 0,
    };
    println!("acceptance work directory: {}", root.display());

    tally.report(1, "gradient check", gradient_check);
    tally.report(2, "compositing invariants", compositing_invariants);

    let trained = (3..=7).any(|id| tally.wants(id));
    let (three, two) = if trained {
        (
            cached_dataset(&root, "desk", &SceneSpec::default()),
            cached_dataset(&root, "desk_two_exposures", &two_exposure_scene()),
        )
    } else {
        let skipped = || Err(hdrf_core::Error::Input("not requested".into()));
        (skipped(), skipped())
    };
    let run = |name: &str, data: &hdrf_core::Result<DatasetBundle>, lambda_u: f64| match data {
        Ok(d) => cached_run(&root, name, d, desk_config(lambda_u)),
        Err(e) => Err(hdrf_core::Error::Input(format!("dataset unavailable: {e}"))),
    };
    let base = run("baseline", &three, 0.5);
    let no_unit = if tally.wants(6) { run("no_unit_loss", &three, 0.0) } else { not_requested() };
    let fewer = if tally.wants(7) { run("two_exposures", &two, 0.5) } else { not_requested() };

    let with_base = |f: &dyn Fn(&Run, &DatasetBundle) -> Check| -> Check {
        match (&base, &three) {
            (Ok(r), Ok(d)) => f(r, d),
            (Err(e), _) | (_, Err(e)) => Err(hdrf_core::Error::Input(format!("baseline run unavailable: {e}"))),
        }
    };
    let pair = |a: &hdrf_core::Result<Run>, b: &hdrf_core::Result<Run>, f: fn(&Run, &Run) -> Check| match (a, b) {
        (Ok(a), Ok(b)) => f(a, b),
        (Err(e), _) | (_, Err(e)) => Err(hdrf_core::Error::Input(format!("run unavailable: {e}"))),
    };
    tally.report(3, "desk-scale end-to-end", || with_base(&desk_end_to_end));
    tally.report(4, "response curve recovery", || with_base(&crf_recovery));
    tally.report(5, "HDR accuracy up to scale", || with_base(&|r, _| hdr_accuracy(r)));
    tally.report(6, "unit-exposure loss ablation", || pair(&base, &no_unit, unit_loss_ablation));
    tally.report(7, "exposure-count ablation", || pair(&base, &fewer, exposure_count_ablation));
    tally.report(8, "classical response self-test", classical_self_test);
    tally.report(9, "metric unit checks", metric_units);
    tally.report(10, "determinism", || determinism(&root));

    println!(
        "acceptance: {} of {} criteria pass ({:.0} s)",
        tally.run - tally.failures,
        tally.run,
        started.elapsed().as_secs_f64()
    );
    let strict = std::env::var("HDRF_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && tally.failures > 0 {
        std::process::exit(1);
    }
}

fn not_requested() -> hdrf_core::Result<Run> {
    Err(hdrf_core::Error::Input("not requested".into()))
}
