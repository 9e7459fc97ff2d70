//! Losses, learning-rate schedule and the optimization loop.

use crate::autodiff::{Adam, AdamConfig, Tape, Tensor, Var};
use crate::io::{atomic_write, DatasetBundle, Split};
use crate::model::{write_checkpoint, BundleVars, CheckpointMeta, ModelBundle, ModelConfig, ToneMapperParams};
use crate::render::{
    generate_rays, render_on_tape, Aabb, Ray, RenderSettings, Shading, Stage, TapeRenderOptions,
};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const LOSS_CSV_HEADER: &str = "step,lr,loss_total,loss_color_coarse,loss_color_fine,loss_unit";
pub const CHECKPOINT_FILE: &str = "model.hdrf";
pub const LAST_GOOD_FILE: &str = "last_good.hdrf";
pub const LOSS_FILE: &str = "loss.csv";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_rays: usize,
    pub iterations: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Weight of the unit-exposure loss.
    pub lambda_u: f64,
    /// Target color at unit exposure. When absent, the dataset's recorded
    /// value is used, else 0.5 per channel.
    pub c0: Option<[f64; 3]>,
    pub seed: u64,
    pub coarse_samples: usize,
    pub fine_samples: usize,
    pub importance_floor: f64,
    /// Steps between checkpoint writes; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Rays per independently recorded tape. Gradients of the shards are
    /// summed in shard order, so results do not depend on thread count.
    pub shard_rays: usize,
    pub model: ModelConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_rays: 1024,
            iterations: 20_000,
            lr_start: 5e-4,
            lr_end: 5e-5,
            lambda_u: 0.5,
            c0: None,
            seed: 0,
            coarse_samples: 32,
            fine_samples: 32,
            importance_floor: 1e-5,
            checkpoint_every: 5000,
            shard_rays: 256,
            model: ModelConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.render_settings().validate()?;
        if self.batch_rays == 0 || self.iterations == 0 || self.shard_rays == 0 {
            return Err(Error::Input("batch_rays, iterations and shard_rays must be positive".into()));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return Err(Error::Input(format!(
                "learning rates must satisfy lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        if !(self.lambda_u >= 0.0 && self.lambda_u.is_finite()) {
            return Err(Error::Input("lambda_u must be non-negative".into()));
        }
        if let Some(c) = self.c0 {
            if c.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
                return Err(Error::Input(format!("c0 must lie in (0, 1), got {c:?}")));
            }
        }
        Ok(())
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            coarse_samples: self.coarse_samples,
            fine_samples: self.fine_samples,
            importance_floor: self.importance_floor,
            jitter: true,
            seed: self.seed,
        }
    }
}

/// Loss terms of one step. `total = color_coarse + color_fine + lambda_u * unit`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub color_coarse: f64,
    pub color_fine: f64,
    pub unit: f64,
}

impl LossReport {
    pub fn color(&self) -> f64 {
        self.color_coarse + self.color_fine
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e}",
            self.step, self.lr, self.total, self.color_coarse, self.color_fine, self.unit
        )
    }
}

fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|c| (a[c] - b[c]).powi(2)).sum()
}

/// Batch mean of `|C_coarse - C|^2 + |C_fine - C|^2`, squared norms over RGB.
pub fn color_loss(coarse: &[[f64; 3]], fine: &[[f64; 3]], target: &[[f64; 3]]) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::Input("color loss of an empty batch".into()));
    }
    if coarse.len() != target.len() || fine.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} coarse, {} fine and {} target colors",
            coarse.len(),
            fine.len(),
            target.len()
        )));
    }
    let s: f64 = target
        .iter()
        .zip(coarse.iter().zip(fine))
        .map(|(t, (c, f))| sq_dist(c, t) + sq_dist(f, t))
        .sum();
    Ok(s / target.len() as f64)
}

/// `|g(0) - C0|^2` summed over channels.
pub fn unit_exposure_loss(tone: &ToneMapperParams, c0: [f64; 3]) -> f64 {
    (0..3).map(|c| (tone.eval_channel(c, 0.0) - c0[c]).powi(2)).sum()
}

pub fn total_loss(color: f64, unit: f64, lambda_u: f64) -> f64 {
    color + lambda_u * unit
}

/// Exponential decay from `lr_start` at step 0 to `lr_end` at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, lr_start: f64, lr_end: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Input("learning-rate schedule needs total_steps > 0".into()));
    }
    if step > total_steps {
        return Err(Error::Input(format!("step {step} beyond {total_steps}")));
    }
    Ok(lr_start * (lr_end / lr_start).powf(step as f64 / total_steps as f64))
}

/// Rays with their log exposure times and target colors.
#[derive(Clone, Debug, PartialEq)]
pub struct RayBatch {
    pub rays: Vec<Ray>,
    pub ln_dt: Vec<f64>,
    pub targets: Vec<[f64; 3]>,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    fn slice(&self, r: std::ops::Range<usize>) -> RayBatch {
        RayBatch {
            rays: self.rays[r.clone()].to_vec(),
            ln_dt: self.ln_dt[r.clone()].to_vec(),
            targets: self.targets[r].to_vec(),
        }
    }
}

/// Tape handles of the loss terms recorded by [`record_color_loss`].
pub struct ColorLossVars {
    pub coarse: Var,
    pub fine: Var,
    /// Fine depths used, one list per ray.
    pub fine_depths: Vec<Vec<f64>>,
}

/// Records both color terms for `batch`, each scaled by `weight`, i.e. the
/// contribution of this batch to a mean over `len / weight` rays.
#[allow(clippy::too_many_arguments)]
pub fn record_color_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &BundleVars,
    config: &ModelConfig,
    bbox: &Aabb,
    batch: &RayBatch,
    settings: &RenderSettings,
    weight: f64,
    fixed_fine_depths: Option<&[Vec<f64>]>,
    rng: Option<&mut R>,
) -> Result<ColorLossVars> {
    if batch.is_empty() {
        return Err(Error::Input("color loss of an empty batch".into()));
    }
    let opts = TapeRenderOptions {
        stage: Stage::Fine,
        keep_coarse: true,
        fixed_fine_depths,
    };
    let out = render_on_tape(
        tape,
        vars,
        config,
        bbox,
        &batch.rays,
        Shading::Ldr(&batch.ln_dt),
        settings,
        &opts,
        rng,
    )?;
    let target = tape.constant(Tensor::matrix(
        batch.len(),
        3,
        batch.targets.iter().flatten().copied().collect(),
    )?)?;
    // mean_sq_err averages over 3 channels too
    let mut term = |pred: Var| -> Result<Var> {
        let m = tape.mean_sq_err(pred, target)?;
        tape.scale(m, 3.0 * weight)
    };
    let coarse = term(out.coarse.expect("kept"))?;
    let fine = term(out.fine.expect("fine stage"))?;
    Ok(ColorLossVars {
        coarse,
        fine,
        fine_depths: out.fine_depths,
    })
}

/// Records `|g(0) - C0|^2` on the tape.
pub fn record_unit_loss(tape: &mut Tape, vars: &BundleVars, c0: [f64; 3]) -> Result<Var> {
    let zero = tape.constant(Tensor::zeros(&[1, 3]))?;
    let g0 = vars.tone.forward(tape, zero)?;
    let target = tape.constant(Tensor::matrix(1, 3, c0.to_vec())?)?;
    let m = tape.mean_sq_err(g0, target)?;
    tape.scale(m, 3.0)
}

/// Records the full objective for one batch; returns `(total, color_coarse,
/// color_fine, unit)`.
#[allow(clippy::too_many_arguments)]
pub fn record_total_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &BundleVars,
    config: &ModelConfig,
    bbox: &Aabb,
    batch: &RayBatch,
    settings: &RenderSettings,
    c0: [f64; 3],
    lambda_u: f64,
    fixed_fine_depths: Option<&[Vec<f64>]>,
    rng: Option<&mut R>,
) -> Result<(Var, Var, Var, Var)> {
    let c = record_color_loss(tape, vars, config, bbox, batch, settings, 1.0, fixed_fine_depths, rng)?;
    let u = record_unit_loss(tape, vars, c0)?;
    let lc = tape.add(c.coarse, c.fine)?;
    let wu = tape.scale(u, lambda_u)?;
    let total = tape.add(lc, wu)?;
    Ok((total, c.coarse, c.fine, u))
}

/// Uniform `(view, pixel)` draws with replacement over the training views.
pub fn sample_batch(data: &DatasetBundle, n: usize, rng: &mut impl Rng) -> Result<RayBatch> {
    let train: Vec<_> = data.split(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::Input("dataset has no training views".into()));
    }
    let k = &data.frame.intrinsics;
    let mut batch = RayBatch {
        rays: Vec::with_capacity(n),
        ln_dt: Vec::with_capacity(n),
        targets: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let v = train[rng.gen_range(0..train.len())];
        let row = rng.gen_range(0..k.height);
        let col = rng.gen_range(0..k.width);
        batch
            .rays
            .extend(generate_rays(&v.view, &[(row, col)], data.frame.near, data.frame.far)?);
        batch.ln_dt.push(v.view.exposure_time.ln());
        batch.targets.push(v.image.pixel(row, col));
    }
    Ok(batch)
}

/// Where [`train`] writes its artifacts.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub dir: PathBuf,
}

/// Result of a completed run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub meta: CheckpointMeta,
    pub history: Vec<LossReport>,
}

/// The C0 a run anchors to.
pub fn resolve_c0(config: &TrainConfig, data: &DatasetBundle) -> [f64; 3] {
    config
        .c0
        .or(data.c0_gt.map(|c| [c; 3]))
        .unwrap_or([0.5; 3])
}

fn shard_rng(seed: u64, step: usize, shard: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_5a4d);
    rng.set_stream(((step as u64) << 20) | shard as u64);
    rng
}

/// One optimization step's loss and gradients, in [`ModelBundle::tensors`] order.
fn step_gradients(
    bundle: &ModelBundle,
    bbox: &Aabb,
    batch: &RayBatch,
    config: &TrainConfig,
    c0: [f64; 3],
    step: usize,
) -> Result<(LossReport, Vec<Tensor>)> {
    let settings = config.render_settings();
    let n = batch.len();
    let shards: Vec<_> = (0..n).step_by(config.shard_rays).collect();
    let results = shards
        .par_iter()
        .enumerate()
        .map(|(i, &start)| {
            let part = batch.slice(start..(start + config.shard_rays).min(n));
            let mut tape = Tape::new();
            let vars = bundle.register(&mut tape, true)?;
            let mut rng = shard_rng(config.seed, step, i);
            let c = record_color_loss(
                &mut tape,
                &vars,
                &bundle.config,
                bbox,
                &part,
                &settings,
                part.len() as f64 / n as f64,
                None,
                Some(&mut rng),
            )?;
            let lc = tape.value(c.coarse).item()?;
            let lf = tape.value(c.fine).item()?;
            let sum = tape.add(c.coarse, c.fine)?;
            let mut g = tape.backward(sum)?;
            let grads: Vec<Tensor> = vars
                .all
                .iter()
                .map(|&v| g.take(v).expect("parameter gradient"))
                .collect();
            Ok((lc, lf, grads))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut tape = Tape::new();
    let vars = bundle.register(&mut tape, true)?;
    let u = record_unit_loss(&mut tape, &vars, c0)?;
    let unit = tape.value(u).item()?;
    let wu = tape.scale(u, config.lambda_u)?;
    let mut g = tape.backward(wu)?;
    let mut grads: Vec<Tensor> = vars.all.iter().map(|&v| g.take(v).expect("parameter gradient")).collect();

    let (mut lc, mut lf) = (0.0, 0.0);
    for (c, f, sg) in results {
        lc += c;
        lf += f;
        for (acc, s) in grads.iter_mut().zip(sg) {
            for (a, b) in acc.data_mut().iter_mut().zip(s.data()) {
                *a += b;
            }
        }
    }
    let report = LossReport {
        step,
        lr: 0.0,
        total: total_loss(lc + lf, unit, config.lambda_u),
        color_coarse: lc,
        color_fine: lf,
        unit,
    };
    if !report.total.is_finite() || grads.iter().any(|g| !g.all_finite()) {
        return Err(Error::numeric("training loss"));
    }
    Ok((report, grads))
}

fn write_history(path: &Path, history: &[LossReport]) -> Result<()> {
    let mut s = String::with_capacity(64 * (history.len() + 1));
    s.push_str(LOSS_CSV_HEADER);
    s.push('\n');
    for r in history {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    atomic_write(path, s.as_bytes())
}

/// Optimizes a freshly initialized bundle on the training views of `data`.
///
/// With an output directory, the checkpoint `model.hdrf` and `loss.csv`
/// are rewritten every `checkpoint_every` steps and at the end. A
/// non-finite loss or gradient aborts the run with a numeric error after
/// saving the last good parameters as `last_good.hdrf`.
pub fn train(
    data: &DatasetBundle,
    config: &TrainConfig,
    output: Option<&TrainOutput>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let c0 = resolve_c0(config, data);
    let mut bundle = ModelBundle::init(config.model, config.seed)?;
    let mut meta = CheckpointMeta {
        model: config.model,
        frame: data.frame,
        render: RenderSettings {
            jitter: false,
            ..config.render_settings()
        },
        step: 0,
        seed: config.seed,
        data_dir: Some(data.root.display().to_string()),
    };
    let mut adam = Adam::new(&bundle.to_tensors(), config.adam);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::with_capacity(config.iterations);
    let save = |bundle: &ModelBundle, meta: &CheckpointMeta, history: &[LossReport], name: &str| -> Result<()> {
        if let Some(out) = output {
            write_checkpoint(&out.dir.join(name), meta, bundle)?;
            write_history(&out.dir.join(LOSS_FILE), history)?;
        }
        Ok(())
    };

    for step in 0..config.iterations {
        let lr = lr_schedule(step, config.iterations, config.lr_start, config.lr_end)?;
        let batch = sample_batch(data, config.batch_rays, &mut batch_rng)?;
        let (mut report, grads) = match step_gradients(&bundle, &data.frame.bbox, &batch, config, c0, step) {
            Ok(r) => r,
            Err(e @ Error::Numeric { .. }) => {
                log::error!("non-finite loss at step {step}, saving last good parameters");
                save(&bundle, &meta, &history, LAST_GOOD_FILE)?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        report.lr = lr;
        history.push(report);

        let mut params = bundle.to_tensors();
        adam.step(&mut params, &grads, lr)?;
        bundle.set_tensors(params)?;
        if config.model.monotone_tone_mapper {
            bundle.tone.project_monotone();
        }
        meta.step = step as u64 + 1;

        if step % 100 == 0 || step + 1 == config.iterations {
            log::info!(
                "step {step} lr {lr:.3e} loss {:.5} (coarse {:.5}, fine {:.5}, unit {:.2e})",
                report.total,
                report.color_coarse,
                report.color_fine,
                report.unit
            );
        }
        if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 {
            save(&bundle, &meta, &history, CHECKPOINT_FILE)?;
        }
    }
    save(&bundle, &meta, &history, CHECKPOINT_FILE)?;
    Ok(TrainOutcome {
        bundle,
        meta,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ToneMapperParams;

    #[test]
    fn color_loss_examples() {
        let t = [[0.3, 0.4, 0.5]];
        assert_eq!(color_loss(&t, &t, &t).unwrap(), 0.0);
        let c = [[0.4, 0.4, 0.5]];
        assert!((color_loss(&c, &t, &t).unwrap() - 0.01).abs() < 1e-15);
        let c2 = [c[0], c[0]];
        let t2 = [t[0], t[0]];
        assert_eq!(color_loss(&c2, &t2, &t2).unwrap(), color_loss(&c, &t, &t).unwrap());
        assert!(matches!(color_loss(&[], &[], &[]), Err(Error::Input(_))));
    }

    #[test]
    fn unit_loss_examples() {
        let g = ToneMapperParams::sigmoid_construction();
        assert_eq!(unit_exposure_loss(&g, [0.5; 3]), 0.0);
        assert!((unit_exposure_loss(&g, [0.6, 0.5, 0.5]) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn total_loss_examples() {
        assert!((total_loss(1.0, 0.02, 0.5) - 1.01).abs() < 1e-15);
        assert_eq!(total_loss(0.7, 0.3, 0.0), 0.7);
        assert_eq!(total_loss(0.0, 0.0, 0.5), 0.0);
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_schedule(0, 100, 5e-4, 5e-5).unwrap(), 5e-4);
        assert!((lr_schedule(100, 100, 5e-4, 5e-5).unwrap() - 5e-5).abs() < 1e-18);
        let mid = lr_schedule(50, 100, 5e-4, 5e-5).unwrap();
        assert!((mid - (5e-4f64 * 5e-5).sqrt()).abs() < 1e-15);
        assert!((mid - 1.5811e-4).abs() < 1e-8);
        assert!(matches!(lr_schedule(0, 0, 5e-4, 5e-5), Err(Error::Input(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            lr_end: 1e-3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lambda_u: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let parsed: TrainConfig = serde_json::from_str(r#"{"iterations": 7, "lambda_u": 0.0}"#).unwrap();
        assert_eq!(parsed.iterations, 7);
        assert_eq!(parsed.batch_rays, 1024);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"iters": 7}"#).is_err());
    }
}
