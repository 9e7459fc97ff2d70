use crate::autodiff::{CustomOp, Tape, Tensor, Var};
use crate::{Error, Result};

/// Distance assigned to the last sample of a ray, so that it absorbs the
/// remaining transmittance.
pub const TERMINAL_DELTA: f64 = 1e10;

/// Quadrature result for one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeOutput {
    pub weights: Vec<f64>,
    /// Transmittance reaching each sample, `T_i`.
    pub transmittance: Vec<f64>,
    /// Transmittance left after the last sample.
    pub final_transmittance: f64,
    pub value: [f64; 3],
    pub opacity: f64,
    pub depth: f64,
}

/// Sample spacings `s_{i+1} - s_i`, with [`TERMINAL_DELTA`] for the last sample.
pub fn deltas(depths: &[f64]) -> Result<Vec<f64>> {
    if depths.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::Input("sample depths must be sorted ascending".into()));
    }
    let mut d: Vec<f64> = depths.windows(2).map(|w| w[1] - w[0]).collect();
    if !depths.is_empty() {
        d.push(TERMINAL_DELTA);
    }
    Ok(d)
}

/// Per-sample `(T_i, w_i)` and the final transmittance for one ray.
fn weights_for(sigmas: &[f64], deltas: &[f64], t: &mut [f64], w: &mut [f64]) -> f64 {
    let mut optical = 0.0;
    let mut trans = 1.0;
    for i in 0..sigmas.len() {
        t[i] = trans;
        let tau = sigmas[i] * deltas[i];
        optical += tau;
        let next = (-optical).exp();
        // T_i * (1 - exp(-tau)) computed as a difference telescopes exactly
        w[i] = (trans * -(-tau).exp_m1()).min(trans);
        trans = next;
    }
    trans
}

/// Discrete volume-rendering quadrature of one ray:
/// `alpha_i = 1 - exp(-sigma_i delta_i)`, `T_i = prod_{j<i} (1 - alpha_j)`,
/// `w_i = T_i alpha_i`, value `= sum_i w_i values_i`.
pub fn composite(sigmas: &[f64], values: &[[f64; 3]], depths: &[f64]) -> Result<CompositeOutput> {
    if depths.len() != sigmas.len() {
        return Err(Error::Shape(format!("{} sigmas, {} depths", sigmas.len(), depths.len())));
    }
    let mut out = composite_deltas(sigmas, values, &deltas(depths)?)?;
    out.depth = out.weights.iter().zip(depths).map(|(w, s)| w * s).sum();
    Ok(out)
}

/// [`composite`] parameterised by the sample spacings directly. The
/// returned `depth` is measured from the first sample.
pub fn composite_deltas(
    sigmas: &[f64],
    values: &[[f64; 3]],
    deltas: &[f64],
) -> Result<CompositeOutput> {
    if sigmas.len() != values.len() || sigmas.len() != deltas.len() {
        return Err(Error::Shape(format!(
            "{} sigmas, {} values, {} deltas",
            sigmas.len(),
            values.len(),
            deltas.len()
        )));
    }
    if sigmas.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Input("densities must be non-negative".into()));
    }
    if deltas.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::Input("sample spacings must be non-negative".into()));
    }
    let n = sigmas.len();
    let mut t = vec![0.0; n];
    let mut w = vec![0.0; n];
    let final_transmittance = weights_for(sigmas, deltas, &mut t, &mut w);
    let mut value = [0.0; 3];
    let mut depth = 0.0;
    let mut s = 0.0;
    for i in 0..n {
        for c in 0..3 {
            value[c] += w[i] * values[i][c];
        }
        depth += w[i] * s;
        s += deltas[i];
    }
    Ok(CompositeOutput {
        opacity: w.iter().sum(),
        weights: w,
        transmittance: t,
        final_transmittance,
        value,
        depth,
    })
}

/// Quadrature weights for a batch of rays with `samples` samples each.
pub fn batch_weights(sigmas: &[f64], deltas: &[f64], samples: usize) -> Vec<f64> {
    let mut t = vec![0.0; sigmas.len()];
    let mut w = vec![0.0; sigmas.len()];
    for ((s, d), (tt, ww)) in sigmas
        .chunks_exact(samples)
        .zip(deltas.chunks_exact(samples))
        .zip(t.chunks_exact_mut(samples).zip(w.chunks_exact_mut(samples)))
    {
        weights_for(s, d, tt, ww);
    }
    w
}

struct CompositeBackward {
    samples: usize,
    deltas: Vec<f64>,
    weights: Vec<f64>,
    /// Transmittance after each sample, `T_{i+1}`.
    trans_after: Vec<f64>,
}

impl CustomOp for CompositeBackward {
    fn name(&self) -> &'static str {
        "composite"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        g: &[f64],
        needs: &[bool],
    ) -> Result<Vec<Option<Vec<f64>>>> {
        let values = inputs[1].data();
        let n = self.weights.len();
        let s = self.samples;
        let mut d_sigma = needs[0].then(|| vec![0.0; n]);
        let mut d_values = needs[1].then(|| vec![0.0; n * 3]);
        for r in 0..n / s {
            let gr = &g[r * 3..r * 3 + 3];
            if let Some(dv) = d_values.as_mut() {
                for i in r * s..(r + 1) * s {
                    for c in 0..3 {
                        dv[i * 3 + c] = self.weights[i] * gr[c];
                    }
                }
            }
            if let Some(ds) = d_sigma.as_mut() {
                // dC/dsigma_k = delta_k (T_{k+1} c_k - sum_{i>k} w_i c_i)
                let mut suffix = 0.0;
                for i in (r * s..(r + 1) * s).rev() {
                    let gc: f64 = (0..3).map(|c| gr[c] * values[i * 3 + c]).sum();
                    let tail = self.trans_after[i] * gc;
                    ds[i] = self.deltas[i] * (tail - suffix);
                    suffix += self.weights[i] * gc;
                }
            }
        }
        Ok(vec![d_sigma, d_values])
    }
}

/// Records the quadrature of `R` rays with `samples` samples each.
///
/// `sigma` is `[R*S, 1]`, `values` is `[R*S, 3]`; returns the `[R, 3]`
/// composited values and the quadrature weights.
pub fn composite_on_tape(
    tape: &mut Tape,
    sigma: Var,
    values: Var,
    deltas: &[f64],
    samples: usize,
) -> Result<(Var, Vec<f64>)> {
    let sig = tape.value(sigma);
    let val = tape.value(values);
    let n = sig.len();
    if samples == 0 || n % samples != 0 || val.shape() != [n, 3] || deltas.len() != n {
        return Err(Error::Shape(format!(
            "composite: sigma {:?}, values {:?}, {} deltas, {} samples per ray",
            sig.shape(),
            val.shape(),
            deltas.len(),
            samples
        )));
    }
    if sig.data().iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Input("densities must be non-negative".into()));
    }
    let rays = n / samples;
    let mut t = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut out = vec![0.0; rays * 3];
    for r in 0..rays {
        let range = r * samples..(r + 1) * samples;
        weights_for(
            &sig.data()[range.clone()],
            &deltas[range.clone()],
            &mut t[range.clone()],
            &mut w[range.clone()],
        );
        for i in range {
            for c in 0..3 {
                out[r * 3 + c] += w[i] * val.data()[i * 3 + c];
            }
        }
    }
    let trans_after: Vec<f64> = (0..n)
        .map(|i| {
            if (i + 1) % samples == 0 {
                t[i] - w[i]
            } else {
                t[i + 1]
            }
        })
        .map(|v: f64| v.max(0.0))
        .collect();
    let op = CompositeBackward {
        samples,
        deltas: deltas.to_vec(),
        weights: w.clone(),
        trans_after,
    };
    let var = tape.apply_custom(Box::new(op), &[sigma, values], Tensor::matrix(rays, 3, out)?)?;
    Ok((var, w))
}
