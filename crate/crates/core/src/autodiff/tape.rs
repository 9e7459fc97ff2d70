use super::ops::{self, OpKind};
use super::Tensor;
use crate::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation with a hand-written backward rule that lives outside this module.
///
/// `backward` receives the upstream gradient of the output and returns one
/// gradient per input; entries for inputs whose `needs` flag is false may be
/// `None`.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &[f64],
        needs: &[bool],
    ) -> Result<Vec<Option<Vec<f64>>>>;
}

enum Op {
    Leaf,
    Builtin(OpKind),
    Custom(Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
    inputs: Vec<Var>,
    requires_grad: bool,
}

/// Define-by-run operation record.
///
/// Nodes are appended in evaluation order, so every input of a node was
/// recorded before it. [`Tape::backward`] walks the record once in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by one backward pass, keyed by leaf handle.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf created with `requires_grad`.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::numeric("leaf"));
        }
        Ok(self.push(value, Op::Leaf, Vec::new(), requires_grad))
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: Vec<Var>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_inputs(&self, inputs: &[Var]) -> Result<()> {
        for v in inputs {
            if v.0 >= self.nodes.len() {
                return Err(Error::Input(format!("unknown tape handle {}", v.0)));
            }
        }
        Ok(())
    }

    /// Applies a built-in operation and records it.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.check_inputs(inputs)?;
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = ops::forward(&kind, &values)?;
        if !out.all_finite() {
            return Err(Error::numeric(kind.name()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(out, Op::Builtin(kind), inputs.to_vec(), requires_grad))
    }

    /// Records the output of a custom operation whose forward value was
    /// computed by the caller.
    pub fn apply_custom(
        &mut self,
        op: Box<dyn CustomOp>,
        inputs: &[Var],
        output: Tensor,
    ) -> Result<Var> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.check_inputs(inputs)?;
        if !output.all_finite() {
            return Err(Error::numeric(op.name()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(output, Op::Custom(op), inputs.to_vec(), requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Log, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Relu, &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Softplus, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sigmoid, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sum, &[a])
    }

    pub fn mean_sq_err(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MeanSqErr, &[a, b])
    }

    /// Concatenates matrices along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(OpKind::Concat, parts)
    }

    /// Repeats a `1 x n` row `rows` times.
    pub fn broadcast(&mut self, a: Var, rows: usize) -> Result<Var> {
        self.apply(OpKind::Broadcast { rows }, &[a])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.apply(OpKind::Scale(factor), &[a])
    }

    pub fn columns(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.apply(OpKind::Columns { start, len }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.apply(OpKind::Reshape(shape), &[a])
    }

    /// `x · w + b` with `b` a `1 x out` row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        let rows = self.value(xw).dims2()?.0;
        let bb = self.broadcast(b, rows)?;
        self.add(xw, bb)
    }

    /// Runs the backward pass from a scalar `loss`.
    ///
    /// Every leaf created with `requires_grad` receives a gradient, zero if the
    /// loss does not depend on it. A tape can be differentiated only once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.check_inputs(&[loss])?;
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut out: Vec<Option<Tensor>> = vec![None; n];
        pending[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = pending[i].take() else {
                continue;
            };
            let input_grads = match &node.op {
                Op::Leaf => {
                    out[i] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                    continue;
                }
                Op::Builtin(kind) => {
                    let values: Vec<&Tensor> =
                        node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                    let needs: Vec<bool> = node
                        .inputs
                        .iter()
                        .map(|v| self.nodes[v.0].requires_grad)
                        .collect();
                    ops::backward(kind, &values, &node.value, &g, &needs)?
                }
                Op::Custom(op) => {
                    let values: Vec<&Tensor> =
                        node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                    let needs: Vec<bool> = node
                        .inputs
                        .iter()
                        .map(|v| self.nodes[v.0].requires_grad)
                        .collect();
                    op.backward(&values, &node.value, &g, &needs)?
                }
            };
            for (input, grad) in node.inputs.iter().zip(input_grads) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                let Some(grad) = grad else { continue };
                if grad.len() != self.nodes[input.0].value.len() {
                    return Err(Error::Shape(format!(
                        "backward rule produced {} values for an input of {}",
                        grad.len(),
                        self.nodes[input.0].value.len()
                    )));
                }
                match &mut pending[input.0] {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(grad),
                }
            }
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && out[i].is_none() {
                out[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads: out })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_and_softplus_at_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0)).unwrap();
        let s = tape.sigmoid(x).unwrap();
        let sp = tape.softplus(x).unwrap();
        assert_eq!(tape.value(s).item().unwrap(), 0.5);
        assert!((tape.value(sp).item().unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn matmul_of_ones_gives_row_sums() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::full(&[2, 3], 1.0)).unwrap();
        let b = tape.constant(Tensor::full(&[3, 1], 1.0)).unwrap();
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &t(&[2, 1], &[3.0, 3.0]));
    }

    #[test]
    fn shape_and_domain_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape(_))));
        let c = tape.constant(Tensor::zeros(&[3, 2])).unwrap();
        assert!(matches!(tape.add(a, c), Err(Error::Shape(_))));
        assert!(matches!(tape.log(a), Err(Error::Domain(_))));
    }

    #[test]
    fn overflow_is_a_numeric_error() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(1000.0)).unwrap();
        assert!(matches!(tape.exp(a), Err(Error::Numeric { .. })));
        assert!(matches!(
            tape.constant(Tensor::scalar(f64::NAN)),
            Err(Error::Numeric { .. })
        ));
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(0.0)).unwrap();
        let y = tape.sigmoid(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), 0.25);
    }

    #[test]
    fn sum_gradient_is_all_ones_and_unused_is_zero() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::full(&[2, 2], 0.7)).unwrap();
        let unused = tape.param(Tensor::full(&[3], 1.0)).unwrap();
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
        assert!(g.get(unused).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0)).unwrap();
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::TapeConsumed)));
        assert!(matches!(tape.exp(x), Err(Error::TapeConsumed)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(&[2])).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn chain_rule_on_scalar_chain() {
        // d/dx exp(sigmoid(x)) = exp(s) * s * (1 - s)
        let x0 = 0.37;
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(x0)).unwrap();
        let s = tape.sigmoid(x).unwrap();
        let y = tape.exp(s).unwrap();
        let g = tape.backward(y).unwrap();
        let sv = 1.0 / (1.0 + (-x0 as f64).exp());
        let expected = sv.exp() * sv * (1.0 - sv);
        assert!((g.get(x).unwrap().item().unwrap() - expected).abs() < 1e-14);
    }

    /// Every op kind against central differences at 10 random points.
    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        type Builder = fn(&mut Tape, &[Var]) -> Result<Var>;
        let cases: Vec<(&str, Vec<Vec<usize>>, bool, Builder)> = vec![
            ("matmul", vec![vec![2, 3], vec![3, 2]], false, |t, p| {
                let y = t.matmul(p[0], p[1])?;
                t.sum(y)
            }),
            ("add", vec![vec![2, 2], vec![2, 2]], false, |t, p| {
                let y = t.add(p[0], p[1])?;
                let y = t.mul(y, y)?;
                t.sum(y)
            }),
            ("mul", vec![vec![3], vec![3]], false, |t, p| {
                let y = t.mul(p[0], p[1])?;
                t.sum(y)
            }),
            ("exp", vec![vec![4]], false, |t, p| {
                let y = t.exp(p[0])?;
                t.sum(y)
            }),
            ("log", vec![vec![4]], true, |t, p| {
                let y = t.log(p[0])?;
                t.sum(y)
            }),
            ("relu", vec![vec![5]], false, |t, p| {
                let y = t.relu(p[0])?;
                let y = t.mul(y, y)?;
                t.sum(y)
            }),
            ("softplus", vec![vec![4]], false, |t, p| {
                let y = t.softplus(p[0])?;
                t.sum(y)
            }),
            ("sigmoid", vec![vec![4]], false, |t, p| {
                let y = t.sigmoid(p[0])?;
                t.sum(y)
            }),
            ("sum", vec![vec![2, 3]], false, |t, p| {
                let y = t.mul(p[0], p[0])?;
                t.sum(y)
            }),
            ("mean_sq_err", vec![vec![2, 3], vec![2, 3]], false, |t, p| t.mean_sq_err(p[0], p[1])),
            ("concat", vec![vec![2, 1], vec![2, 2]], false, |t, p| {
                let c = t.concat(&[p[0], p[1]])?;
                let w = t.constant(Tensor::new(vec![3, 1], vec![1.0, -2.0, 0.5])?)?;
                let y = t.matmul(c, w)?;
                let y = t.mul(y, y)?;
                t.sum(y)
            }),
            ("broadcast", vec![vec![1, 3]], false, |t, p| {
                let b = t.broadcast(p[0], 4)?;
                let y = t.mul(b, b)?;
                t.sum(y)
            }),
            ("scale+columns", vec![vec![3, 4]], false, |t, p| {
                let c = t.columns(p[0], 1, 2)?;
                let s = t.scale(c, -1.5)?;
                let y = t.mul(s, c)?;
                t.sum(y)
            }),
        ];
        for (name, shapes, positive, build) in cases {
            for _ in 0..10 {
                let params: Vec<Tensor> = shapes
                    .iter()
                    .map(|s| {
                        let n: usize = s.iter().product();
                        let data = (0..n)
                            .map(|_| {
                                if positive {
                                    rng.gen_range(0.2..3.0)
                                } else {
                                    rng.gen_range(-2.0..2.0)
                                }
                            })
                            .collect();
                        Tensor::new(s.clone(), data).unwrap()
                    })
                    .collect();
                let r = finite_diff_check(build, &params, 1e-6, 1e-5).unwrap();
                assert!(r.passed, "{name}: max rel error {}", r.max_rel_error);
            }
        }
    }
}
