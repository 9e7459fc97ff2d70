use super::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Outcome of comparing tape gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, element index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
    pub coordinates: usize,
    pub passed: bool,
}

/// Gradients smaller than this are compared in absolute terms.
const REL_FLOOR: f64 = 1e-6;

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.constant(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    tape.value(loss).item()
}

/// Checks the tape gradient of a scalar function against central differences
/// `(f(p+h) - f(p-h)) / 2h`, coordinate by coordinate.
///
/// The relative error of a coordinate is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], h: f64, rel_tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Input(format!("step h must be positive, got {h}")));
    }

    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    let base = tape.value(loss).item()?;
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|v| grads.take(*v).expect("parameter leaves always receive a gradient"))
        .collect();

    let again = evaluate(&f, params)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::Determinism(format!(
            "two evaluations at the same point gave {base} and {again}"
        )));
    }

    let mut work = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut max_rel_error: f64 = 0.0;
    let mut worst = (0, 0);
    let mut coordinates = 0;
    for pi in 0..params.len() {
        let mut num = Tensor::zeros(params[pi].shape());
        for j in 0..params[pi].len() {
            let orig = params[pi].data()[j];
            work[pi].data_mut()[j] = orig + h;
            let plus = evaluate(&f, &work)?;
            work[pi].data_mut()[j] = orig - h;
            let minus = evaluate(&f, &work)?;
            work[pi].data_mut()[j] = orig;

            let n = (plus - minus) / (2.0 * h);
            num.data_mut()[j] = n;
            let a = analytic[pi].data()[j];
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR);
            if rel > max_rel_error {
                max_rel_error = rel;
                worst = (pi, j);
            }
            coordinates += 1;
        }
        numeric.push(num);
    }

    Ok(GradCheckReport {
        max_rel_error,
        worst,
        analytic,
        numeric,
        coordinates,
        passed: max_rel_error <= rel_tol,
    })
}
