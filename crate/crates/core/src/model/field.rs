use super::{Linear, ModelConfig};
use crate::autodiff::{Tape, Tensor, Var};
use crate::encoding::{encode_into, EncodingConfig};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub trunk_depth: usize,
    pub trunk_width: usize,
    /// Width of the hidden layer of the radiance head.
    pub head_width: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            trunk_depth: 4,
            trunk_width: 64,
            head_width: 32,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trunk_depth == 0 || self.trunk_width == 0 || self.head_width == 0 {
            return Err(Error::Input(format!("degenerate field architecture {self:?}")));
        }
        Ok(())
    }
}

/// Radiance field MLP.
///
/// Layer order: `trunk_depth` relu trunk layers on the encoded position, a
/// density head (softplus), then a radiance head that reads the trunk
/// features concatenated with the encoded direction and emits log-radiance.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams {
    pub layers: Vec<Linear>,
}

pub struct FieldVars {
    layers: Vec<(Var, Var)>,
}

impl FieldVars {
    pub(crate) fn from_pairs(layers: Vec<(Var, Var)>) -> Self {
        FieldVars { layers }
    }

    pub fn handles(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

/// Per-sample outputs: `ln_e` is `[N, 3]`, `sigma` is `[N, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct FieldOutput {
    pub ln_e: Var,
    pub sigma: Var,
}

impl FieldParams {
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let layers = Self::layer_shapes(config)
            .into_iter()
            .map(|(i, o)| Linear::init(i, o, rng))
            .collect();
        FieldParams { layers }
    }

    /// `(inputs, outputs)` of every layer in order.
    pub fn layer_shapes(config: &ModelConfig) -> Vec<(usize, usize)> {
        let f = config.field;
        let mut shapes = Vec::with_capacity(f.trunk_depth + 3);
        let mut width = config.encoding.position_width();
        for _ in 0..f.trunk_depth {
            shapes.push((width, f.trunk_width));
            width = f.trunk_width;
        }
        shapes.push((f.trunk_width, 1));
        shapes.push((f.trunk_width + config.encoding.direction_width(), f.head_width));
        shapes.push((f.head_width, 3));
        shapes
    }

    pub fn tensor_count(config: &ModelConfig) -> usize {
        2 * (config.field.trunk_depth + 3)
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != Self::tensor_count(config) {
            return Err(Error::Shape(format!(
                "field needs {} tensors, got {}",
                Self::tensor_count(config),
                tensors.len()
            )));
        }
        let mut layers = Vec::with_capacity(tensors.len() / 2);
        let mut it = tensors.into_iter();
        while let (Some(w), Some(b)) = (it.next(), it.next()) {
            layers.push(Linear::from_parts(w, b)?);
        }
        for (l, (i, o)) in layers.iter().zip(Self::layer_shapes(config)) {
            if l.weight.shape() != [i, o] {
                return Err(Error::Shape(format!(
                    "field layer {:?} does not match configured [{i},{o}]",
                    l.weight.shape()
                )));
            }
        }
        Ok(FieldParams { layers })
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Result<FieldVars> {
        let layers = self
            .layers
            .iter()
            .map(|l| l.register(tape, trainable))
            .collect::<Result<_>>()?;
        Ok(FieldVars { layers })
    }

    fn density_layer(&self) -> usize {
        self.layers.len() - 3
    }

    /// Zeroes the radiance-head weights that read the encoded direction.
    pub fn zero_direction_weights(&mut self) {
        let idx = self.layers.len() - 2;
        let trunk_width = self.layers[self.density_layer()].inputs();
        let layer = &mut self.layers[idx];
        let cols = layer.outputs();
        for (i, row) in layer.weight.data_mut().chunks_exact_mut(cols).enumerate() {
            if i >= trunk_width {
                row.iter_mut().for_each(|w| *w = 0.0);
            }
        }
    }

    /// Sets density-head weights and bias to zero, so `sigma = softplus(0)`.
    pub fn zero_density_head(&mut self) {
        let idx = self.density_layer();
        self.layers[idx].weight.data_mut().fill(0.0);
        self.layers[idx].bias.data_mut().fill(0.0);
    }
}

impl FieldVars {
    /// Evaluates the field on encoded positions `[N, P]` and directions `[N, D]`.
    pub fn forward(&self, tape: &mut Tape, pos_enc: Var, dir_enc: Var) -> Result<FieldOutput> {
        let trunk_depth = self.layers.len() - 3;
        let mut h = pos_enc;
        for &(w, b) in &self.layers[..trunk_depth] {
            let z = tape.linear(h, w, b)?;
            h = tape.relu(z)?;
        }
        let (dw, db) = self.layers[trunk_depth];
        let pre = tape.linear(h, dw, db)?;
        let sigma = tape.softplus(pre)?;

        let (hw, hb) = self.layers[trunk_depth + 1];
        let feat = tape.concat(&[h, dir_enc])?;
        let z = tape.linear(feat, hw, hb)?;
        let z = tape.relu(z)?;
        let (ow, ob) = self.layers[trunk_depth + 2];
        let ln_e = tape.linear(z, ow, ob)?;
        Ok(FieldOutput { ln_e, sigma })
    }
}

/// Encodes normalized positions and unit directions into `[N, P]` and `[N, D]`.
pub fn encode_samples(
    encoding: &EncodingConfig,
    positions: &[[f64; 3]],
    directions: &[[f64; 3]],
) -> Result<(Tensor, Tensor)> {
    if positions.len() != directions.len() {
        return Err(Error::Shape(format!(
            "{} positions vs {} directions",
            positions.len(),
            directions.len()
        )));
    }
    let n = positions.len();
    let mut p = Vec::with_capacity(n * encoding.position_width());
    let mut d = Vec::with_capacity(n * encoding.direction_width());
    for (pos, dir) in positions.iter().zip(directions) {
        encode_into(pos, encoding.levels_position, encoding.include_input, &mut p)?;
        encode_into(dir, encoding.levels_direction, encoding.include_input, &mut d)?;
    }
    Ok((
        Tensor::matrix(n, encoding.position_width(), p)?,
        Tensor::matrix(n, encoding.direction_width(), d)?,
    ))
}

/// Evaluates one sample: normalized `position` and unit `direction`.
pub fn field_eval(
    params: &FieldParams,
    config: &ModelConfig,
    position: [f64; 3],
    direction: [f64; 3],
) -> Result<([f64; 3], f64)> {
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::Input(format!("direction must be unit length, |d| = {norm}")));
    }
    let (pe, de) = encode_samples(&config.encoding, &[position], &[direction])?;
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false)?;
    let pe = tape.constant(pe)?;
    let de = tape.constant(de)?;
    let out = vars.forward(&mut tape, pe, de)?;
    let l = tape.value(out.ln_e).data();
    Ok(([l[0], l[1], l[2]], tape.value(out.sigma).data()[0]))
}
