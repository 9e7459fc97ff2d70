//! Image quality metrics, mu-law tone mapping, scale alignment and
//! test-split evaluation.

use crate::io::{read_pfm, test_hdr_path, DatasetBundle, ImageBuffer, Split};
use crate::model::ModelBundle;
use crate::render::{render_image, RenderMode, RenderSettings};
use crate::{Error, Result};
use std::collections::BTreeMap;

pub const MU: f64 = 5000.0;
pub const ALIGN_EPS: f64 = 1e-6;
pub const METRICS_CSV_HEADER: &str = "split,metric,value";

fn same_shape(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Shape(format!(
            "images are {}x{} and {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; identical images give `+inf`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, peak: f64) -> Result<f64> {
    same_shape(a, b)?;
    if !(peak > 0.0) {
        return Err(Error::Input("psnr peak must be positive".into()));
    }
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over the valid region of one channel plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut horiz = vec![0.0; ow * h];
    for r in 0..h {
        for c in 0..ow {
            horiz[r * ow + c] = (0..n).map(|i| k[i] * plane[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|i| k[i] * horiz[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), `k1 = 0.01`,
/// `k2 = 0.03`, over valid windows only, averaged over channels.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer, peak: f64) -> Result<f64> {
    same_shape(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::Input(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.width, a.height
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::Input("ssim peak must be positive".into()));
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let k = gaussian_window();
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = a.data.iter().skip(ch).step_by(3).copied().collect();
        let y: Vec<f64> = b.data.iter().skip(ch).step_by(3).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, w, h, &k);
        let my = filter_valid(&y, w, h, &k);
        let sxx = filter_valid(&xx, w, h, &k);
        let syy = filter_valid(&yy, w, h, &k);
        let sxy = filter_valid(&xy, w, h, &k);
        let mut s = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            s += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += s / mx.len() as f64;
    }
    Ok(total / 3.0)
}

/// `ln(1 + mu x) / ln(1 + mu)` for `x` in `[0, 1]`.
pub fn mu_law_value(x: f64, mu: f64) -> f64 {
    (mu * x).ln_1p() / mu.ln_1p()
}

pub fn mu_law(img: &ImageBuffer, mu: f64) -> Result<ImageBuffer> {
    if let Some(v) = img.data.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
        return Err(Error::Input(format!("mu-law input must lie in [0, 1], found {v}")));
    }
    ImageBuffer::new(img.width, img.height, img.data.iter().map(|&x| mu_law_value(x, mu)).collect())
}

/// Per-channel `alpha = exp(mean(ln gt - ln pred))` over pixels where both
/// exceed [`ALIGN_EPS`], and `alpha * pred`.
pub fn align_scale(pred: &ImageBuffer, gt: &ImageBuffer) -> Result<([f64; 3], ImageBuffer)> {
    same_shape(pred, gt)?;
    let mut alpha = [1.0; 3];
    for (c, a) in alpha.iter_mut().enumerate() {
        let (s, n) = pred
            .data
            .iter()
            .skip(c)
            .step_by(3)
            .zip(gt.data.iter().skip(c).step_by(3))
            .filter(|(p, g)| **p > ALIGN_EPS && **g > ALIGN_EPS)
            .fold((0.0, 0usize), |(s, n), (p, g)| (s + g.ln() - p.ln(), n + 1));
        if n == 0 {
            return Err(Error::Input(format!("no valid pixels to align channel {c}")));
        }
        *a = (s / n as f64).exp();
    }
    let data = pred.data.iter().enumerate().map(|(i, v)| v * alpha[i % 3]).collect();
    Ok((alpha, ImageBuffer::new(pred.width, pred.height, data)?))
}

/// Both images divided by the ground truth's maximum, clamped to `[0, 1]`,
/// then mu-law mapped.
pub fn mu_law_pair(pred: &ImageBuffer, gt: &ImageBuffer) -> Result<(ImageBuffer, ImageBuffer)> {
    same_shape(pred, gt)?;
    let max = gt.data.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::Input("ground-truth HDR image is all zero".into()));
    }
    let scale = |img: &ImageBuffer| {
        ImageBuffer::new(
            img.width,
            img.height,
            img.data.iter().map(|v| (v / max).clamp(0.0, 1.0)).collect(),
        )
    };
    Ok((mu_law(&scale(pred)?, MU)?, mu_law(&scale(gt)?, MU)?))
}

/// PSNR and SSIM of an HDR prediction in the mu-law domain, optionally
/// after per-channel scale alignment.
pub fn hdr_scores(pred: &ImageBuffer, gt: &ImageBuffer, align: bool) -> Result<(f64, f64)> {
    let aligned;
    let pred = if align {
        aligned = align_scale(pred, gt)?.1;
        &aligned
    } else {
        pred
    };
    let (p, g) = mu_law_pair(pred, gt)?;
    Ok((psnr(&p, &g, 1.0)?, ssim(&p, &g, 1.0)?))
}

/// Exposure times used for the two LDR rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalProtocol {
    pub original: Vec<f64>,
    pub novel: Vec<f64>,
}

impl EvalProtocol {
    /// Original exposures are test exposures that also occur in training,
    /// novel ones are test exposures never trained on. With five or more
    /// distinct times the rows narrow to the third time (when trained) and
    /// the fourth (when held out), matching the usual desk protocol.
    pub fn for_dataset(data: &DatasetBundle) -> Self {
        let all = data.exposure_times();
        let train: Vec<f64> = data.split(Split::Train).map(|v| v.view.exposure_time).collect();
        let (mut original, mut novel) = (Vec::new(), Vec::new());
        for v in data.split(Split::Test) {
            let t = v.view.exposure_time;
            let bucket = if train.contains(&t) { &mut original } else { &mut novel };
            if !bucket.contains(&t) {
                bucket.push(t);
            }
        }
        original.sort_by(f64::total_cmp);
        novel.sort_by(f64::total_cmp);
        if all.len() >= 5 {
            if original.contains(&all[2]) {
                original = vec![all[2]];
            }
            if novel.contains(&all[3]) {
                novel = vec![all[3]];
            }
        }
        EvalProtocol { original, novel }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub split: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
}

pub fn format_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

impl EvalReport {
    pub fn get(&self, split: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.split == split && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{METRICS_CSV_HEADER}\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.split, r.metric, format_value(r.value)));
        }
        s
    }

    fn push_mean(&mut self, split: &str, scores: &[(f64, f64)]) {
        if scores.is_empty() {
            return;
        }
        let n = scores.len() as f64;
        let mean = |f: fn(&(f64, f64)) -> f64| scores.iter().map(f).sum::<f64>() / n;
        self.rows.push(MetricRow {
            split: split.into(),
            metric: "psnr".into(),
            value: mean(|s| s.0),
        });
        self.rows.push(MetricRow {
            split: split.into(),
            metric: "ssim".into(),
            value: mean(|s| s.1),
        });
    }
}

/// Source of predicted test images.
pub trait Predictor: Sync {
    fn ldr(&self, view: &crate::render::CameraView) -> Result<ImageBuffer>;
    fn hdr(&self, view: &crate::render::CameraView) -> Result<ImageBuffer>;
}

/// Predictions rendered from a trained bundle with the fine model.
pub struct BundlePredictor<'a> {
    pub bundle: &'a ModelBundle,
    pub frame: crate::render::SceneFrame,
    pub settings: RenderSettings,
}

impl Predictor for BundlePredictor<'_> {
    fn ldr(&self, view: &crate::render::CameraView) -> Result<ImageBuffer> {
        let mode = RenderMode::Ldr {
            exposure_time: view.exposure_time,
        };
        render_image(view, &self.frame, self.bundle, mode, &self.settings)
    }

    fn hdr(&self, view: &crate::render::CameraView) -> Result<ImageBuffer> {
        render_image(view, &self.frame, self.bundle, RenderMode::Hdr, &self.settings)
    }
}

/// Scores test views: `ldr_oe` and `ldr_ne` rows compare LDR renders with
/// the test images, `hdr` compares scale-aligned mu-law HDR renders with the
/// ground truth, `hdr_unaligned` skips the alignment. PSNR and SSIM are
/// averaged over views. Poses without a ground-truth HDR file are skipped
/// with a warning.
pub fn evaluate(predictor: &dyn Predictor, data: &DatasetBundle, protocol: &EvalProtocol) -> Result<EvalReport> {
    let test: Vec<_> = data.split(Split::Test).collect();
    if test.is_empty() {
        return Err(Error::Input("dataset has no test views".into()));
    }
    let mut report = EvalReport::default();
    for (name, times) in [("ldr_oe", &protocol.original), ("ldr_ne", &protocol.novel)] {
        let mut scores = Vec::new();
        for v in test.iter().filter(|v| times.contains(&v.view.exposure_time)) {
            let pred = predictor.ldr(&v.view)?;
            scores.push((psnr(&pred, &v.image, 1.0)?, ssim(&pred, &v.image, 1.0)?));
        }
        report.push_mean(name, &scores);
    }
    // one HDR comparison per distinct test pose
    let mut poses: BTreeMap<String, &crate::io::DatasetView> = BTreeMap::new();
    for v in &test {
        let p = test_hdr_path(&data.root, &v.file);
        poses.entry(p.display().to_string()).or_insert(v);
    }
    let (mut aligned, mut raw) = (Vec::new(), Vec::new());
    for (path, v) in poses {
        let path = std::path::PathBuf::from(path);
        if !path.is_file() {
            log::warn!("no ground-truth HDR at {}, skipping", path.display());
            continue;
        }
        let gt = read_pfm(&path)?;
        let pred = predictor.hdr(&v.view)?;
        aligned.push(hdr_scores(&pred, &gt, true)?);
        raw.push(hdr_scores(&pred, &gt, false)?);
    }
    report.push_mean("hdr", &aligned);
    report.push_mean("hdr_unaligned", &raw);
    Ok(report)
}
