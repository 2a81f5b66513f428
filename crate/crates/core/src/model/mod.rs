//! A small transformer encoder trained with an attention-guiding loss.
//!
//! Everything is `f64` and differentiated by hand; [`gradient_check`]
//! compares the analytic gradients against central finite differences.

mod checkpoint;
mod encoder;
mod gradcheck;
mod loss;
mod masking;
mod params;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::CodeUnit;
use crate::patterns::{build_pattern, HeadAssignment, PatternMatrix};
use crate::subtok::AlignedSequence;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::{positional_encoding, softmax_in_place, AttentionMatrix, ForwardTrace};
pub use gradcheck::{gradient_check, GradCheck};
pub use loss::{ag_loss, bce_with_logit, mlm_loss, sag_loss, total_loss, LossParts};
pub use masking::{apply_mlm_mask, mask_source_token, MaskedInput};
pub use params::{Adam, LayerSlots, ParamLayout, Slot};
pub use train::{train, LogRow, TrainHyper, TrainItem, TrainLog};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at step {step} (task {task}, sag {sag})")]
    NonFiniteLoss { step: usize, task: f64, sag: f64 },
    #[error("attention matrix is {h}x{h}, pattern is {p}x{p}")]
    DimMismatch { h: usize, p: usize },
    #[error("input of length {len} exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Pattern(#[from] crate::patterns::PatternError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    #[serde(default = "default_mask_rate")]
    pub mask_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_mask_rate() -> f64 {
    0.15
}

impl ModelConfig {
    /// Desk-scale defaults; `vocab_size` is filled in once the vocabulary is
    /// known.
    pub fn toy(vocab_size: usize, seed: u64) -> Self {
        Self {
            num_layers: 4,
            heads: 4,
            model_dim: 64,
            ffn_dim: 128,
            vocab_size,
            max_len: 64,
            mask_rate: 0.15,
            seed,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.num_layers == 0 || self.heads == 0 || self.model_dim == 0 || self.ffn_dim == 0 {
            return bad("layer, head and width counts must be positive".into());
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            ));
        }
        if self.vocab_size <= crate::subtok::NUM_SPECIALS {
            return bad(format!("vocab_size {} leaves no room for pieces", self.vocab_size));
        }
        if self.max_len < 3 {
            return bad("max_len must be at least 3".into());
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad(format!("mask_rate {} is outside (0, 1)", self.mask_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Cloze,
    Clone,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// `(position, original id)` for every masked position.
    Mlm(Vec<(usize, u32)>),
    Clone(bool),
}

/// One model input with its supervision and its per-head guiding targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub ids: Vec<u32>,
    pub real_len: usize,
    pub target: Target,
    /// Indexed by head; shared by every layer.
    pub patterns: Vec<Option<PatternMatrix>>,
}

impl Example {
    pub fn new(
        ids: Vec<u32>,
        seq: &AlignedSequence,
        unit: &CodeUnit,
        target: Target,
        guiding: &HeadAssignment,
    ) -> Result<Self, ModelError> {
        let patterns = guiding
            .per_head()
            .iter()
            .map(|spec| spec.map(|s| build_pattern(seq, unit, s)).transpose())
            .collect::<Result<_, _>>()?;
        Ok(Self {
            ids,
            real_len: seq.real_len,
            target,
            patterns,
        })
    }
}

/// Linear decay of the guiding weight: `alpha(t) = alpha0 * (1 - t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    pub alpha0: f64,
    pub total_steps: u64,
    pub step: u64,
}

impl AlphaSchedule {
    pub fn new(alpha0: f64, total_steps: u64) -> Self {
        Self {
            alpha0,
            total_steps,
            step: 0,
        }
    }

    pub fn at(alpha0: f64, progress: f64) -> f64 {
        alpha0 * (1.0 - progress)
    }

    pub fn progress(&self) -> f64 {
        if self.total_steps == 0 {
            1.0
        } else {
            (self.step as f64 / self.total_steps as f64).min(1.0)
        }
    }

    pub fn alpha(&self) -> f64 {
        Self::at(self.alpha0, self.progress())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidedModel {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub params: Vec<f64>,
    pub guiding: HeadAssignment,
    pub schedule: AlphaSchedule,
}

impl GuidedModel {
    pub fn new(config: ModelConfig, guiding: HeadAssignment, alpha0: f64) -> Result<Self, ModelError> {
        config.validate()?;
        if guiding.num_layers != config.num_layers || guiding.heads_per_layer != config.heads {
            return Err(ModelError::InvalidConfig(format!(
                "guiding map is {}x{}, model is {}x{}",
                guiding.num_layers, guiding.heads_per_layer, config.num_layers, config.heads
            )));
        }
        let layout = ParamLayout::new(&config);
        let params = params::init_params(&config, &layout);
        Ok(Self {
            config,
            layout,
            params,
            guiding,
            schedule: AlphaSchedule::new(alpha0, 0),
        })
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }
}
