//! The two learned functions: a radiance field mapping encoded samples to
//! log-radiance and density, and a per-channel tone mapper mapping
//! log-exposure to LDR color.

mod checkpoint;
mod field;
mod linear;
mod tone;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointMeta,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use field::{encode_samples, field_eval, FieldConfig, FieldOutput, FieldParams, FieldVars};
pub use linear::Linear;
pub use tone::{crf_curve_export, CrfCurve, ToneMapperParams, ToneVars};

use crate::autodiff::{Tape, Tensor, Var};
use crate::encoding::EncodingConfig;
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub field: FieldConfig,
    pub tone_hidden: usize,
    pub encoding: EncodingConfig,
    /// Clamp tone-mapper weights to be non-negative after every update,
    /// which makes each channel monotone non-decreasing.
    pub monotone_tone_mapper: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            field: FieldConfig::default(),
            tone_hidden: 32,
            encoding: EncodingConfig::default(),
            monotone_tone_mapper: false,
        }
    }
}

impl ModelConfig {
    /// The original full-size network: 8x256 trunk, 128-wide tone mappers.
    pub fn full_scale() -> Self {
        ModelConfig {
            field: FieldConfig {
                trunk_depth: 8,
                trunk_width: 256,
                head_width: 128,
            },
            tone_hidden: 128,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoding.validate()?;
        self.field.validate()?;
        if self.tone_hidden == 0 {
            return Err(Error::Input("tone mapper hidden width must be positive".into()));
        }
        Ok(())
    }
}

/// Coarse field, fine field and the tone mapper they share.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub coarse: FieldParams,
    pub fine: FieldParams,
    pub tone: ToneMapperParams,
}

/// Tape handles for every parameter of a [`ModelBundle`].
pub struct BundleVars {
    pub coarse: FieldVars,
    pub fine: FieldVars,
    pub tone: ToneVars,
    /// All handles in [`ModelBundle::tensors`] order.
    pub all: Vec<Var>,
}

impl BundleVars {
    /// Rebuilds the handle structure from a flat list in
    /// [`ModelBundle::tensors`] order, e.g. leaves created by a caller.
    pub fn from_handles(config: &ModelConfig, handles: &[Var]) -> Result<Self> {
        let field_len = FieldParams::tensor_count(config);
        if handles.len() != 2 * field_len + ToneMapperParams::TENSOR_COUNT {
            return Err(Error::Shape(format!("{} handles for the bundle", handles.len())));
        }
        let pairs = |h: &[Var]| h.chunks_exact(2).map(|p| (p[0], p[1])).collect::<Vec<_>>();
        let tone: Vec<(Var, Var, Var, Var)> = handles[2 * field_len..]
            .chunks_exact(4)
            .map(|c| (c[0], c[1], c[2], c[3]))
            .collect();
        Ok(BundleVars {
            coarse: FieldVars::from_pairs(pairs(&handles[..field_len])),
            fine: FieldVars::from_pairs(pairs(&handles[field_len..2 * field_len])),
            tone: ToneVars::from_channels([tone[0], tone[1], tone[2]]),
            all: handles.to_vec(),
        })
    }
}

impl ModelBundle {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coarse = FieldParams::init(&config, &mut rng);
        let fine = FieldParams::init(&config, &mut rng);
        let tone = ToneMapperParams::init(config.tone_hidden, config.monotone_tone_mapper, &mut rng);
        Ok(ModelBundle {
            config,
            coarse,
            fine,
            tone,
        })
    }

    /// Parameter tensors in checkpoint order: coarse field, fine field, tone mapper.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = self.coarse.tensors();
        out.extend(self.fine.tensors());
        out.extend(self.tone.tensors());
        out
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        self.tensors().into_iter().cloned().collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Rebuilds a bundle from tensors in [`ModelBundle::tensors`] order.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let field_len = FieldParams::tensor_count(&config);
        let tone_len = ToneMapperParams::TENSOR_COUNT;
        if tensors.len() != 2 * field_len + tone_len {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                2 * field_len + tone_len,
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let coarse = FieldParams::from_tensors(&config, it.by_ref().take(field_len).collect())?;
        let fine = FieldParams::from_tensors(&config, it.by_ref().take(field_len).collect())?;
        let tone = ToneMapperParams::from_tensors(config.tone_hidden, it.collect())?;
        Ok(ModelBundle {
            config,
            coarse,
            fine,
            tone,
        })
    }

    /// Overwrites all parameters with `tensors` (same order and shapes).
    pub fn set_tensors(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        *self = ModelBundle::from_tensors(self.config, tensors)?;
        Ok(())
    }

    /// Records every parameter as a leaf; `trainable` selects gradient tracking.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Result<BundleVars> {
        let coarse = self.coarse.register(tape, trainable)?;
        let fine = self.fine.register(tape, trainable)?;
        let tone = self.tone.register(tape, trainable)?;
        let mut all = coarse.handles();
        all.extend(fine.handles());
        all.extend(tone.handles());
        Ok(BundleVars {
            coarse,
            fine,
            tone,
            all,
        })
    }
}
