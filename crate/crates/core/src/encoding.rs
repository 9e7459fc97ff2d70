//! Sinusoidal positional encoding of sample positions and view directions.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub levels_position: usize,
    pub levels_direction: usize,
    pub include_input: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            levels_position: 10,
            levels_direction: 4,
            include_input: true,
        }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels_position == 0 || self.levels_direction == 0 {
            return Err(Error::Input("encoding levels must be at least 1".into()));
        }
        Ok(())
    }

    pub fn position_width(&self) -> usize {
        encoded_len(3, self.levels_position, self.include_input)
    }

    pub fn direction_width(&self) -> usize {
        encoded_len(3, self.levels_direction, self.include_input)
    }
}

/// Output length of [`positional_encode`] for a `dim`-vector.
pub fn encoded_len(dim: usize, levels: usize, include_input: bool) -> usize {
    dim * (2 * levels + usize::from(include_input))
}

/// Encodes each component `p` as `(p, sin(2^0 pi p), cos(2^0 pi p), ...,
/// sin(2^(L-1) pi p), cos(2^(L-1) pi p))`, the leading `p` only when
/// `include_input` is set.
pub fn positional_encode(x: &[f64], levels: usize, include_input: bool) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(encoded_len(x.len(), levels, include_input));
    encode_into(x, levels, include_input, &mut out)?;
    Ok(out)
}

/// Appends the encoding of `x` to `out`.
pub fn encode_into(x: &[f64], levels: usize, include_input: bool, out: &mut Vec<f64>) -> Result<()> {
    if levels == 0 {
        return Err(Error::Input("encoding needs at least one frequency level".into()));
    }
    for &p in x {
        if !p.is_finite() {
            return Err(Error::numeric("positional_encode"));
        }
        if include_input {
            out.push(p);
        }
        let mut freq = PI;
        for _ in 0..levels {
            let (s, c) = (freq * p).sin_cos();
            out.push(s);
            out.push(c);
            freq *= 2.0;
        }
    }
    Ok(())
}
