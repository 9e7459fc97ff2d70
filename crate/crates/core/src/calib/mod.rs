//! Classical response-curve recovery from an exposure stack (Debevec and
//! Malik least squares), and gauge-aligned curve comparison.

use crate::io::ImageBuffer;
use crate::model::CrfCurve;
use crate::synth::GroundTruthCrf;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const CODES: usize = 256;
/// Code pinned to zero log exposure by the solver.
pub const GAUGE_CODE: usize = 128;
pub const DEFAULT_SMOOTHNESS: f64 = 50.0;
/// Color range over which curves are compared.
pub const COMPARE_RANGE: (f64, f64) = (0.05, 0.95);

/// Triangle weight peaking mid-range and zero at both ends.
pub fn hat_weight(z: u8) -> f64 {
    if z <= 127 {
        z as f64
    } else {
        255.0 - z as f64
    }
}

/// 8-bit codes of `P` pixel sites seen at `J` exposure times.
#[derive(Clone, Debug, PartialEq)]
pub struct ExposureStack {
    /// `codes[i][j]` is site `i` at exposure `j`.
    pub codes: Vec<Vec<[u8; 3]>>,
    pub ln_dt: Vec<f64>,
}

fn to_code(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

impl ExposureStack {
    /// Gathers `sites` from images of one pose at exposure times `dts`.
    pub fn from_images(images: &[&ImageBuffer], dts: &[f64], sites: &[(usize, usize)]) -> Result<Self> {
        if images.len() != dts.len() {
            return Err(Error::Shape(format!("{} images for {} exposure times", images.len(), dts.len())));
        }
        if dts.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Input("exposure times must be positive".into()));
        }
        let codes = sites
            .iter()
            .map(|&(r, c)| {
                images
                    .iter()
                    .map(|img| {
                        if r >= img.height || c >= img.width {
                            return Err(Error::Input(format!("site ({r}, {c}) outside image")));
                        }
                        Ok(img.pixel(r, c).map(to_code))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExposureStack {
            codes,
            ln_dt: dts.iter().map(|t| t.ln()).collect(),
        })
    }

    pub fn exposures(&self) -> usize {
        self.ln_dt.len()
    }
}

/// Inverse log-response per code: `g[z] = ln(E dt)` up to the gauge `g[128] = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteCrf {
    pub g: Vec<f64>,
    pub smoothness: f64,
    /// Per-site log irradiance solved alongside `g`; NaN for sites whose
    /// codes all carry zero weight in this channel.
    pub ln_irradiance: Vec<f64>,
    /// Codes that appeared with non-zero weight in the data.
    pub observed: Vec<bool>,
}

impl DiscreteCrf {
    /// `(log exposure, color)` points for codes inside the comparison range,
    /// optionally restricted to codes seen in the data.
    pub fn points(&self, observed_only: bool) -> Vec<(f64, f64)> {
        (0..CODES)
            .filter(|&z| !observed_only || self.observed[z])
            .map(|z| (self.g[z], z as f64 / 255.0))
            .filter(|&(_, c)| c >= COMPARE_RANGE.0 && c <= COMPARE_RANGE.1)
            .collect()
    }

    /// Log exposure at color 0.5, between the two middle codes.
    pub fn half_point(&self) -> f64 {
        let (a, b) = (self.g[127], self.g[128]);
        let t = (0.5 * 255.0 - 127.0) / 1.0;
        a + t * (b - a)
    }
}

/// Solves one channel of the stack.
fn solve_channel(stack: &ExposureStack, channel: usize, smoothness: f64) -> Result<DiscreteCrf> {
    // sites without a single weighted code would add empty columns
    let sites: Vec<usize> = (0..stack.codes.len())
        .filter(|&i| stack.codes[i].iter().any(|z| hat_weight(z[channel]) > 0.0))
        .collect();
    let p = sites.len();
    let j = stack.exposures();
    let n = CODES + p;
    let rows = p * j + 1 + (CODES - 2);
    let mut a = DMatrix::<f64>::zeros(rows, n);
    let mut b = DVector::<f64>::zeros(rows);
    let mut observed = vec![false; CODES];
    let mut k = 0;
    for (col, &i) in sites.iter().enumerate() {
        for (jj, z) in stack.codes[i].iter().enumerate() {
            let z = z[channel];
            let w = hat_weight(z);
            if w > 0.0 {
                observed[z as usize] = true;
            }
            a[(k, z as usize)] = w;
            a[(k, CODES + col)] = -w;
            b[k] = w * stack.ln_dt[jj];
            k += 1;
        }
    }
    a[(k, GAUGE_CODE)] = 1.0;
    k += 1;
    for z in 1..CODES - 1 {
        let w = smoothness * hat_weight(z as u8);
        a[(k, z - 1)] = w;
        a[(k, z)] = -2.0 * w;
        a[(k, z + 1)] = w;
        k += 1;
    }
    let coverage = || {
        let mut hist = [0usize; 8];
        for (z, seen) in observed.iter().enumerate() {
            if *seen {
                hist[z / 32] += 1;
            }
        }
        hist
    };
    if p == 0 {
        return Err(Error::Solve(format!(
            "no usable sites in channel {channel}; observed codes per 32-code bin: {:?}",
            coverage()
        )));
    }
    // Householder QR; a vanishing diagonal entry of R flags a direction
    // the data and smoothness rows leave undetermined
    let qr = a.qr();
    let r = qr.r();
    let diag = r.diagonal().map(f64::abs);
    let (dmax, dmin) = (diag.max(), diag.min());
    if !(dmin > dmax * 1e-10) {
        return Err(Error::Solve(format!(
            "rank-deficient response system (channel {channel}, |R| diagonal ratio {:.3e}); observed codes per 32-code bin: {:?}",
            dmax / dmin,
            coverage()
        )));
    }
    let mut qtb = b;
    qr.q_tr_mul(&mut qtb);
    let x = r
        .solve_upper_triangular(&qtb.rows(0, n).into_owned())
        .ok_or_else(|| Error::Solve("least squares failed: singular triangular factor".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solve("least-squares solution is not finite".into()));
    }
    // shifting g and every ln E together leaves all other residuals
    // unchanged, so the gauge can be made exact after the solve
    let shift = x[GAUGE_CODE];
    let mut ln_irradiance = vec![f64::NAN; stack.codes.len()];
    for (col, &i) in sites.iter().enumerate() {
        ln_irradiance[i] = x[CODES + col] - shift;
    }
    Ok(DiscreteCrf {
        g: x.rows(0, CODES).iter().map(|v| v - shift).collect(),
        smoothness,
        ln_irradiance,
        observed,
    })
}

/// Recovers the inverse log-response of each channel.
pub fn solve_crf(stack: &ExposureStack, smoothness: f64) -> Result<[DiscreteCrf; 3]> {
    if stack.exposures() < 2 {
        return Err(Error::Solve(format!(
            "response recovery needs at least two exposures, got {}",
            stack.exposures()
        )));
    }
    if !(smoothness > 0.0) {
        return Err(Error::Input("smoothness weight must be positive".into()));
    }
    if stack.codes.is_empty() || stack.codes.iter().any(|s| s.len() != stack.exposures()) {
        return Err(Error::Shape("every site needs one code per exposure".into()));
    }
    Ok([
        solve_channel(stack, 0, smoothness)?,
        solve_channel(stack, 1, smoothness)?,
        solve_channel(stack, 2, smoothness)?,
    ])
}

/// Chooses pixel sites covering the code range: pixels are bucketed by the
/// mean code of the middle exposure and drawn round-robin across buckets.
/// Pixels clipped (0 or 255 in every channel) at every exposure are skipped.
pub fn sample_sites(images: &[&ImageBuffer], n_sites: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let j = images.len();
    if j < 2 {
        return Err(Error::Input("site sampling needs at least two exposures".into()));
    }
    let (w, h) = (images[0].width, images[0].height);
    if images.iter().any(|im| im.width != w || im.height != h) {
        return Err(Error::Shape("stack images differ in size".into()));
    }
    let minimum = CODES.div_ceil(j - 1);
    if n_sites < minimum {
        return Err(Error::Input(format!(
            "{n_sites} sites requested, at least {minimum} are needed for {j} exposures"
        )));
    }
    let mid = images[j / 2];
    let mut buckets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); CODES];
    let mut usable = 0;
    for r in 0..h {
        for c in 0..w {
            let clipped = images.iter().all(|im| {
                im.pixel(r, c)
                    .iter()
                    .all(|&v| matches!(to_code(v), 0 | 255))
            });
            if clipped {
                continue;
            }
            let px = mid.pixel(r, c);
            let code = to_code((px[0] + px[1] + px[2]) / 3.0);
            buckets[code as usize].push((r, c));
            usable += 1;
        }
    }
    if usable < minimum {
        return Err(Error::Input(format!(
            "only {usable} unclipped pixels, at least {minimum} are needed"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in &mut buckets {
        b.shuffle(&mut rng);
    }
    let mut out = Vec::with_capacity(n_sites.min(usable));
    let mut depth = 0;
    while out.len() < n_sites.min(usable) {
        for b in &buckets {
            if let Some(&s) = b.get(depth) {
                out.push(s);
                if out.len() == n_sites {
                    break;
                }
            }
        }
        depth += 1;
    }
    Ok(out)
}

/// Deviation of a curve from a reference after gauge alignment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveDeviation {
    pub rmse: f64,
    pub max_abs: f64,
    /// Reference points that fell inside the curve's sampled domain.
    pub points: usize,
}

/// Per-channel deviations and their pooled summary.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelDeviations {
    pub channels: [CurveDeviation; 3],
}

impl ChannelDeviations {
    pub fn rmse(&self) -> f64 {
        let (s, n) = self.channels.iter().fold((0.0, 0usize), |(s, n), d| {
            (s + d.rmse * d.rmse * d.points as f64, n + d.points)
        });
        (s / n as f64).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.channels.iter().map(|d| d.max_abs).fold(0.0, f64::max)
    }
}

/// Result of [`compare_crf`].
#[derive(Clone, Debug, PartialEq)]
pub struct CrfReport {
    pub vs_classical: Option<ChannelDeviations>,
    pub vs_ground_truth: Option<ChannelDeviations>,
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    if xs.is_empty() || x < xs[0] || x > xs[xs.len() - 1] {
        return None;
    }
    let k = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
    let (x0, x1) = (xs[k - 1], xs[k]);
    let t = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
    Some(ys[k - 1] + t * (ys[k] - ys[k - 1]))
}

/// First log exposure at which a sampled curve crosses color 0.5.
fn half_point(xs: &[f64], ys: &[f64]) -> Option<f64> {
    (1..xs.len()).find_map(|k| {
        let (a, b) = (ys[k - 1] - 0.5, ys[k] - 0.5);
        if a == 0.0 {
            Some(xs[k - 1])
        } else if a * b <= 0.0 && b != a {
            Some(xs[k - 1] + (xs[k] - xs[k - 1]) * a / (a - b))
        } else {
            None
        }
    })
}

/// Compares one sampled channel against reference `(log exposure, color)`
/// points whose own half point is `ref_half`. Both are shifted so that color
/// 0.5 sits at log exposure 0.
pub fn compare_channel(
    xs: &[f64],
    ys: &[f64],
    reference: &[(f64, f64)],
    ref_half: f64,
) -> Result<CurveDeviation> {
    let half = half_point(xs, ys)
        .ok_or_else(|| Error::Input("curve never crosses color 0.5".into()))?;
    let shifted: Vec<f64> = xs.iter().map(|x| x - half).collect();
    let mut sq = 0.0;
    let mut max_abs = 0.0f64;
    let mut points = 0;
    for &(x, c) in reference {
        if let Some(v) = interp(&shifted, ys, x - ref_half) {
            let d = v - c;
            sq += d * d;
            max_abs = max_abs.max(d.abs());
            points += 1;
        }
    }
    if points == 0 {
        return Err(Error::Input("curves do not overlap after gauge alignment".into()));
    }
    Ok(CurveDeviation {
        rmse: (sq / points as f64).sqrt(),
        max_abs,
        points,
    })
}

/// Reference points of the analytic response on colors in the comparison range.
pub fn ground_truth_points(crf: &GroundTruthCrf, n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let c = COMPARE_RANGE.0 + (COMPARE_RANGE.1 - COMPARE_RANGE.0) * i as f64 / (n - 1).max(1) as f64;
            ((c.powf(crf.gamma) / crf.gain).ln(), c)
        })
        .collect()
}

/// Log exposure at which the analytic response reaches 0.5.
pub fn ground_truth_half(crf: &GroundTruthCrf) -> f64 {
    (0.5f64.powf(crf.gamma) / crf.gain).ln()
}

/// Compares a learned curve with the classical solution and/or the analytic
/// response, after aligning every curve to color 0.5 at log exposure 0.
pub fn compare_crf(
    learned: &CrfCurve,
    classical: Option<&[DiscreteCrf; 3]>,
    gt: Option<&GroundTruthCrf>,
) -> Result<CrfReport> {
    let xs = &learned.log_exposure;
    if xs.windows(2).any(|w| w[1] <= w[0]) || xs.len() < 2 {
        return Err(Error::Input("learned curve grid must be strictly increasing".into()));
    }
    let vs_classical = classical
        .map(|d| -> Result<ChannelDeviations> {
            let ch = |c: usize| compare_channel(xs, &learned.channel(c), &d[c].points(true), d[c].half_point());
            Ok(ChannelDeviations {
                channels: [ch(0)?, ch(1)?, ch(2)?],
            })
        })
        .transpose()?;
    let vs_ground_truth = gt
        .map(|g| -> Result<ChannelDeviations> {
            let pts = ground_truth_points(g, 181);
            let half = ground_truth_half(g);
            let ch = |c: usize| compare_channel(xs, &learned.channel(c), &pts, half);
            Ok(ChannelDeviations {
                channels: [ch(0)?, ch(1)?, ch(2)?],
            })
        })
        .transpose()?;
    Ok(CrfReport {
        vs_classical,
        vs_ground_truth,
    })
}

/// The classical solution as a curve on its own codes' log exposures.
pub fn discrete_to_curve(d: &[DiscreteCrf; 3]) -> Result<CrfCurve> {
    // a shared grid is required; use the mean log exposure per code
    let mut rows: Vec<(f64, [f64; 3])> = (0..CODES)
        .map(|z| {
            let x = (d[0].g[z] + d[1].g[z] + d[2].g[z]) / 3.0;
            (x, [z as f64 / 255.0; 3])
        })
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    rows.dedup_by(|a, b| a.0 == b.0);
    Ok(CrfCurve {
        log_exposure: rows.iter().map(|r| r.0).collect(),
        colors: rows.iter().map(|r| r.1).collect(),
    })
}

pub const DISCRETE_CSV_HEADER: &str = "code,red,green,blue,seen_red,seen_green,seen_blue";

/// Per-channel inverse table as CSV rows of log exposure per code, followed
/// by 0/1 flags marking the codes observed in the data.
pub fn discrete_to_csv(d: &[DiscreteCrf; 3]) -> String {
    let mut s = format!("{DISCRETE_CSV_HEADER}\n");
    for z in 0..CODES {
        let seen = |c: usize| u8::from(d[c].observed[z]);
        s.push_str(&format!(
            "{z},{:e},{:e},{:e},{},{},{}\n",
            d[0].g[z],
            d[1].g[z],
            d[2].g[z],
            seen(0),
            seen(1),
            seen(2)
        ));
    }
    s
}

/// Parses [`discrete_to_csv`] output. Site irradiances are not stored, so
/// they come back empty, and the smoothness weight comes back as NaN.
pub fn discrete_from_csv(text: &str) -> Result<[DiscreteCrf; 3]> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some(DISCRETE_CSV_HEADER) {
        return Err(Error::Format(format!("expected header `{DISCRETE_CSV_HEADER}`")));
    }
    let mut out: [DiscreteCrf; 3] = std::array::from_fn(|_| DiscreteCrf {
        g: vec![0.0; CODES],
        smoothness: f64::NAN,
        ln_irradiance: Vec::new(),
        observed: vec![false; CODES],
    });
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::Format(format!("row {}: expected code, three values and three flags", i + 2));
        if f.len() != 7 {
            return Err(bad());
        }
        let z: usize = f[0].parse().map_err(|_| bad())?;
        if z != i {
            return Err(Error::Format(format!("row {}: codes must run 0..255 in order", i + 2)));
        }
        for c in 0..3 {
            out[c].g[z] = f[1 + c].parse().map_err(|_| bad())?;
            out[c].observed[z] = match f[4 + c] {
                "0" => false,
                "1" => true,
                _ => return Err(bad()),
            };
        }
        rows += 1;
    }
    if rows != CODES {
        return Err(Error::Format(format!("expected {CODES} code rows, found {rows}")));
    }
    Ok(out)
}
