//! Autoregressive language models: a decoder-only transformer with manual
//! backprop, an interpolated absolute-discounting n-gram backend, training
//! schedules, and the shared evaluation contract.

mod checkpoint;
mod gradcheck;
mod ngram;
mod schedule;
mod train;
mod transformer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{gradient_check, GradCheckReport};
#[doc(hidden)]
pub use gradcheck::gradient_check_with_fault;
pub use ngram::{train_ngram, NgramModel};
pub use schedule::{
    compute_steps, epochs_for_budget, peak_lr, TrainingSchedule, REFERENCE_BATCH, REFERENCE_EPOCH_POLICY, REFERENCE_SEQ_LEN,
};
pub use train::{interleave_blocks, train, write_loss_csv, BlockStream, LossRecord};
pub use transformer::{Fault, Layout, Scalar, Transformer};

use crate::tokenize::BOS;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),
    #[error("evaluation set is empty")]
    EmptyEval,
    #[error("n-gram order must be 2 or 3, got {0}")]
    InvalidOrder(usize),
    #[error("discount must be in (0, 1), got {0}")]
    InvalidDiscount(f64),
    #[error("token id {id} is outside the vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("training stream is empty")]
    EmptyStream,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub intermediate_dim: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub preset_name: String,
}

/// Transformer presets: (layers, embed, heads, intermediate).
const PRESETS: [(&str, usize, usize, usize, usize); 4] = [
    ("micro", 2, 32, 2, 128),
    ("tiny", 2, 128, 2, 512),
    ("mini", 4, 256, 4, 1024),
    ("small", 4, 512, 8, 2048),
];

impl ModelConfig {
    pub fn preset(name: &str, vocab_size: usize, max_seq_len: usize) -> Result<Self, ModelError> {
        let &(_, layers, embed_dim, heads, intermediate_dim) = PRESETS
            .iter()
            .find(|p| p.0 == name)
            .ok_or_else(|| ModelError::UnknownPreset(name.to_string()))?;
        Ok(Self {
            layers,
            embed_dim,
            heads,
            intermediate_dim,
            max_seq_len,
            vocab_size,
            dropout: 0.1,
            preset_name: name.to_string(),
        })
    }

    pub fn is_transformer_preset(name: &str) -> bool {
        PRESETS.iter().any(|p| p.0 == name)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.layers == 0 || self.embed_dim == 0 || self.heads == 0 || self.intermediate_dim == 0 {
            return bad("dimensions must be positive");
        }
        if self.embed_dim % self.heads != 0 {
            return bad("embed_dim must be divisible by heads");
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be positive");
        }
        if self.vocab_size <= BOS as usize {
            return bad("vocab_size must include the special tokens");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        Ok(())
    }

    pub fn head_size(&self) -> usize {
        self.embed_dim / self.heads
    }

    /// Parameter count with tied input/output embeddings.
    pub fn num_params(&self) -> usize {
        Layout::new(self).total
    }

    /// Parameter count if the output projection had its own matrix.
    pub fn num_params_untied(&self) -> usize {
        self.num_params() + self.vocab_size * self.embed_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Mean log2 probability per scored token (bits, non-positive).
    pub mean_log2_prob: f64,
    pub token_count: usize,
    pub tokenizer_id: String,
}

/// Anything that can score a window of tokens given a BOS-prefixed context.
pub trait LanguageModel {
    /// Longest window `score_window` accepts.
    fn context_len(&self) -> usize;

    /// `log2 P(window[i] | BOS, window[..i])` for every position.
    fn score_window(&self, window: &[u32]) -> Vec<f64>;
}

/// Scores consecutive non-overlapping windows of `context_len` tokens, each
/// conditioned on a fresh BOS, and averages the log2 probabilities.
pub fn evaluate(
    model: &dyn LanguageModel,
    eval_tokens: &[u32],
    tokenizer_id: &str,
) -> Result<EvalResult, ModelError> {
    if eval_tokens.is_empty() {
        return Err(ModelError::EmptyEval);
    }
    let mut sum = 0.0;
    for window in eval_tokens.chunks(model.context_len()) {
        sum += model.score_window(window).iter().sum::<f64>();
    }
    Ok(EvalResult {
        mean_log2_prob: sum / eval_tokens.len() as f64,
        token_count: eval_tokens.len(),
        tokenizer_id: tokenizer_id.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_and_validation() {
        let c = ModelConfig::preset("micro", 100, 16).unwrap();
        assert_eq!((c.layers, c.embed_dim, c.heads, c.intermediate_dim), (2, 32, 2, 128));
        assert!(ModelConfig::preset("huge", 100, 16).is_err());
        let mut bad = c.clone();
        bad.heads = 3;
        assert!(matches!(bad.validate(), Err(ModelError::InvalidConfig(_))));
        for name in ["tiny", "mini", "small"] {
            let c = ModelConfig::preset(name, 100, 128).unwrap();
            assert_eq!(c.intermediate_dim, 4 * c.embed_dim);
            assert_eq!(c.head_size(), 64);
        }
    }

    #[test]
    fn tiny_parameter_count() {
        let c = ModelConfig::preset("tiny", 32768, 128).unwrap();
        // hand count: embeddings, positions, 2 blocks, final norm
        let d = 128;
        let block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * 4 * d + 4 * d) + (4 * d * d + d);
        let expected = 32768 * d + 128 * d + 2 * block + 2 * d;
        assert_eq!(c.num_params(), expected);
        let rel = (c.num_params() as f64 - 4.6e6).abs() / 4.6e6;
        assert!(rel < 0.05, "tiny has {} params", c.num_params());
    }

    struct Oracle;
    impl LanguageModel for Oracle {
        fn context_len(&self) -> usize {
            4
        }
        fn score_window(&self, window: &[u32]) -> Vec<f64> {
            vec![0.0; window.len()]
        }
    }

    #[test]
    fn perfect_model_scores_zero() {
        let r = evaluate(&Oracle, &[5, 6, 7, 8, 9, 10, 11], "x").unwrap();
        assert_eq!(r.mean_log2_prob, 0.0);
        assert_eq!(r.token_count, 7);
        assert!(matches!(evaluate(&Oracle, &[], "x"), Err(ModelError::EmptyEval)));
    }
}
