use super::Ray;
use crate::{Error, Result};
use rand::Rng;

/// One depth per equal-width bin of `[near, far]`: uniformly jittered inside
/// the bin when an rng is given, the bin midpoint otherwise.
pub fn stratified_sample<R: Rng + ?Sized>(ray: &Ray, n: usize, rng: Option<&mut R>) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Input("stratified sampling needs n >= 1".into()));
    }
    ray.validate()?;
    let width = (ray.far - ray.near) / n as f64;
    let mut out = Vec::with_capacity(n);
    match rng {
        Some(rng) => {
            for i in 0..n {
                let u: f64 = rng.gen();
                out.push(ray.near + (i as f64 + u) * width);
            }
        }
        None => {
            for i in 0..n {
                out.push(ray.near + (i as f64 + 0.5) * width);
            }
        }
    }
    Ok(out)
}

/// Bin edges around sorted sample depths: `near`, the midpoints between
/// neighbours, then `far`. One bin per sample.
pub fn bin_edges(depths: &[f64], near: f64, far: f64) -> Vec<f64> {
    let mut edges = Vec::with_capacity(depths.len() + 1);
    edges.push(near);
    for w in depths.windows(2) {
        edges.push(0.5 * (w[0] + w[1]));
    }
    edges.push(far);
    edges
}

/// Inverse-CDF sampling of the piecewise-constant density proportional to
/// `weights + floor` over the bins delimited by `edges`.
///
/// With an rng the uniform variates are random; without one they are the
/// stratum centers `(i + 0.5) / n`. Output is sorted ascending.
pub fn hierarchical_sample<R: Rng + ?Sized>(
    edges: &[f64],
    weights: &[f64],
    n: usize,
    floor: f64,
    rng: Option<&mut R>,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Input("importance sampling needs n >= 1".into()));
    }
    if edges.len() != weights.len() + 1 || weights.is_empty() {
        return Err(Error::Shape(format!(
            "{} edges for {} weights",
            edges.len(),
            weights.len()
        )));
    }
    if edges.windows(2).any(|e| e[1] < e[0]) {
        return Err(Error::Input("bin edges must be sorted".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || !(floor >= 0.0) {
        return Err(Error::Input("weights and floor must be non-negative".into()));
    }
    let mass: Vec<f64> = weights.iter().map(|w| w + floor).collect();
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("all bin weights are zero".into()));
    }
    let mut cdf = Vec::with_capacity(mass.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for m in &mass {
        acc += m / total;
        cdf.push(acc);
    }

    let us: Vec<f64> = match rng {
        Some(rng) => (0..n).map(|_| rng.gen::<f64>()).collect(),
        None => (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect(),
    };
    let mut out: Vec<f64> = us
        .into_iter()
        .map(|u| {
            // last bin k with cdf[k] <= u and non-zero mass
            let mut k = cdf.partition_point(|&c| c <= u).saturating_sub(1).min(mass.len() - 1);
            while mass[k] == 0.0 && k > 0 {
                k -= 1;
            }
            while mass[k] == 0.0 && k + 1 < mass.len() {
                k += 1;
            }
            let p = cdf[k + 1] - cdf[k];
            let t = if p > 0.0 { ((u - cdf[k]) / p).clamp(0.0, 1.0) } else { 0.5 };
            edges[k] + t * (edges[k + 1] - edges[k])
        })
        .collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Merges two ascending sequences.
pub fn merge_sorted(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}
