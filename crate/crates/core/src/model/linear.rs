use crate::autodiff::{Tape, Tensor, Var};
use crate::{Error, Result};
use rand::Rng;

/// Dense layer `y = x W + b` with `W: [in, out]` and `b: [1, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Glorot-uniform weights in `±sqrt(6 / (in + out))`, zero bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = (0..inputs * outputs)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Linear {
            weight: Tensor::matrix(inputs, outputs, w).expect("sized"),
            bias: Tensor::zeros(&[1, outputs]),
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (i, o) = weight.dims2()?;
        if bias.shape() != [1, o] {
            return Err(Error::Shape(format!(
                "bias {:?} does not match weight [{i},{o}]",
                bias.shape()
            )));
        }
        Ok(Linear { weight, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Result<(Var, Var)> {
        Ok((
            tape.leaf(self.weight.clone(), trainable)?,
            tape.leaf(self.bias.clone(), trainable)?,
        ))
    }
}
