use super::Tensor;
use crate::{Error, Result};

/// Built-in differentiable operations.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul,
    Add,
    Mul,
    Exp,
    Log,
    Relu,
    Softplus,
    Sigmoid,
    /// Sum of all elements, a scalar.
    Sum,
    /// Mean of squared differences over all elements, a scalar.
    MeanSqErr,
    /// Column-wise concatenation of matrices with equal row counts.
    Concat,
    /// Repeats a `[1,n]` row into `[rows,n]`.
    Broadcast { rows: usize },
    Scale(f64),
    /// Column slice `[:, start..start+len]`.
    Columns { start: usize, len: usize },
    Reshape(Vec<usize>),
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Relu => "relu",
            OpKind::Softplus => "softplus",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Sum => "sum",
            OpKind::MeanSqErr => "mean_sq_err",
            OpKind::Concat => "concat",
            OpKind::Broadcast { .. } => "broadcast",
            OpKind::Scale(_) => "scale",
            OpKind::Columns { .. } => "columns",
            OpKind::Reshape(_) => "reshape",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::MatMul | OpKind::Add | OpKind::Mul | OpKind::MeanSqErr => Some(2),
            OpKind::Concat => None,
            _ => Some(1),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Row-major `c (+)= op(a) * op(b)` where `op` optionally transposes.
///
/// `a` is stored as `[m,k]` (or `[k,m]` when `ta`), `b` as `[k,n]` (or `[n,k]`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths are checked above and the strides describe
    // in-bounds row-major layouts of those slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn same_shape(kind: &OpKind, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{}: shapes {:?} and {:?} differ",
            kind.name(),
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
        .expect("shape preserved")
}

pub(crate) fn forward(kind: &OpKind, inputs: &[&Tensor]) -> Result<Tensor> {
    if let Some(arity) = kind.arity() {
        if inputs.len() != arity {
            return Err(Error::Shape(format!(
                "{} takes {} inputs, got {}",
                kind.name(),
                arity,
                inputs.len()
            )));
        }
    }
    match kind {
        OpKind::MatMul => {
            let (m, k) = inputs[0].dims2()?;
            let (k2, n) = inputs[1].dims2()?;
            if k != k2 {
                return Err(Error::Shape(format!(
                    "matmul: [{m},{k}] x [{k2},{n}] inner dimensions differ"
                )));
            }
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, inputs[0].data(), false, inputs[1].data(), false, &mut c, false);
            Tensor::matrix(m, n, c)
        }
        OpKind::Add | OpKind::Mul => {
            same_shape(kind, inputs[0], inputs[1])?;
            let a = inputs[0].data();
            let b = inputs[1].data();
            let data = if *kind == OpKind::Add {
                a.iter().zip(b).map(|(x, y)| x + y).collect()
            } else {
                a.iter().zip(b).map(|(x, y)| x * y).collect()
            };
            Tensor::new(inputs[0].shape().to_vec(), data)
        }
        OpKind::Exp => Ok(map(inputs[0], f64::exp)),
        OpKind::Log => {
            if let Some(bad) = inputs[0].data().iter().find(|&&x| x <= 0.0) {
                return Err(Error::Domain(format!("log of non-positive value {bad}")));
            }
            Ok(map(inputs[0], f64::ln))
        }
        OpKind::Relu => Ok(map(inputs[0], |x| x.max(0.0))),
        OpKind::Softplus => Ok(map(inputs[0], softplus)),
        OpKind::Sigmoid => Ok(map(inputs[0], sigmoid)),
        OpKind::Sum => Ok(Tensor::scalar(inputs[0].data().iter().sum())),
        OpKind::MeanSqErr => {
            same_shape(kind, inputs[0], inputs[1])?;
            let n = inputs[0].len();
            if n == 0 {
                return Err(Error::Shape("mean_sq_err of empty tensors".into()));
            }
            let s: f64 = inputs[0]
                .data()
                .iter()
                .zip(inputs[1].data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            Ok(Tensor::scalar(s / n as f64))
        }
        OpKind::Concat => {
            if inputs.is_empty() {
                return Err(Error::Shape("concat of zero tensors".into()));
            }
            let rows = inputs[0].dims2()?.0;
            let mut widths = Vec::with_capacity(inputs.len());
            for t in inputs {
                let (r, c) = t.dims2()?;
                if r != rows {
                    return Err(Error::Shape(format!(
                        "concat: row counts {rows} and {r} differ"
                    )));
                }
                widths.push(c);
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (t, &w) in inputs.iter().zip(&widths) {
                    data.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
                }
            }
            Tensor::matrix(rows, total, data)
        }
        OpKind::Broadcast { rows } => {
            let (r, n) = inputs[0].dims2()?;
            if r != 1 {
                return Err(Error::Shape(format!("broadcast needs a [1,n] row, got [{r},{n}]")));
            }
            let mut data = Vec::with_capacity(rows * n);
            for _ in 0..*rows {
                data.extend_from_slice(inputs[0].data());
            }
            Tensor::matrix(*rows, n, data)
        }
        OpKind::Scale(f) => Ok(map(inputs[0], |x| x * f)),
        OpKind::Columns { start, len } => {
            let (r, c) = inputs[0].dims2()?;
            if start + len > c {
                return Err(Error::Shape(format!(
                    "columns {start}..{} out of range for width {c}",
                    start + len
                )));
            }
            let mut data = Vec::with_capacity(r * len);
            for row in inputs[0].data().chunks_exact(c) {
                data.extend_from_slice(&row[*start..start + len]);
            }
            Tensor::matrix(r, *len, data)
        }
        OpKind::Reshape(shape) => inputs[0].reshape(shape.clone()),
    }
}

pub(crate) fn backward(
    kind: &OpKind,
    inputs: &[&Tensor],
    output: &Tensor,
    g: &[f64],
    needs: &[bool],
) -> Result<Vec<Option<Vec<f64>>>> {
    let elementwise = |f: &dyn Fn(usize) -> f64| -> Vec<Option<Vec<f64>>> {
        vec![Some((0..g.len()).map(f).collect())]
    };
    let grads = match kind {
        OpKind::MatMul => {
            let (m, k) = inputs[0].dims2()?;
            let n = inputs[1].dims2()?.1;
            let da = needs[0].then(|| {
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, g, false, inputs[1].data(), true, &mut da, false);
                da
            });
            let db = needs[1].then(|| {
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, inputs[0].data(), true, g, false, &mut db, false);
                db
            });
            vec![da, db]
        }
        OpKind::Add => vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())],
        OpKind::Mul => {
            let a = inputs[0].data();
            let b = inputs[1].data();
            vec![
                needs[0].then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
                needs[1].then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
            ]
        }
        OpKind::Exp => {
            let y = output.data();
            elementwise(&|i| g[i] * y[i])
        }
        OpKind::Log => {
            let x = inputs[0].data();
            elementwise(&|i| g[i] / x[i])
        }
        OpKind::Relu => {
            let x = inputs[0].data();
            elementwise(&|i| if x[i] > 0.0 { g[i] } else { 0.0 })
        }
        OpKind::Softplus => {
            let x = inputs[0].data();
            elementwise(&|i| g[i] * sigmoid(x[i]))
        }
        OpKind::Sigmoid => {
            let y = output.data();
            elementwise(&|i| g[i] * y[i] * (1.0 - y[i]))
        }
        OpKind::Sum => vec![Some(vec![g[0]; inputs[0].len()])],
        OpKind::MeanSqErr => {
            let a = inputs[0].data();
            let b = inputs[1].data();
            let c = 2.0 * g[0] / a.len() as f64;
            let da: Vec<f64> = a.iter().zip(b).map(|(a, b)| c * (a - b)).collect();
            let db = needs[1].then(|| da.iter().map(|v| -v).collect());
            vec![needs[0].then_some(da), db]
        }
        OpKind::Concat => {
            let rows = output.dims2()?.0;
            let total = output.dims2()?.1;
            let mut offset = 0;
            let mut out = Vec::with_capacity(inputs.len());
            for (t, &need) in inputs.iter().zip(needs) {
                let w = t.dims2()?.1;
                if need {
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    out.push(Some(d));
                } else {
                    out.push(None);
                }
                offset += w;
            }
            out
        }
        OpKind::Broadcast { .. } => {
            let n = inputs[0].len();
            let mut d = vec![0.0; n];
            for row in g.chunks_exact(n) {
                d.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            vec![Some(d)]
        }
        OpKind::Scale(f) => elementwise(&|i| g[i] * f),
        OpKind::Columns { start, len } => {
            let (r, c) = inputs[0].dims2()?;
            let mut d = vec![0.0; r * c];
            for (row, grow) in d.chunks_exact_mut(c).zip(g.chunks_exact(*len)) {
                row[*start..start + len].copy_from_slice(grow);
            }
            vec![Some(d)]
        }
        OpKind::Reshape(_) => vec![Some(g.to_vec())],
    };
    Ok(grads)
}
