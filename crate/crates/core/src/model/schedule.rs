use serde::{Deserialize, Serialize};

use super::ModelError;

pub const REFERENCE_BATCH: usize = 128;
pub const REFERENCE_SEQ_LEN: usize = 128;

/// `(max mono tokens, epochs)`; the last entry covers everything larger.
pub const REFERENCE_EPOCH_POLICY: [(usize, usize); 3] = [(10_000_000, 20), (100_000_000, 10), (usize::MAX, 2)];

/// Published step counts for the reference batch shape (128 x 128), keyed by
/// (mono tokens, multi tokens).
const REFERENCE_STEPS: [(usize, usize, usize); 14] = [
    (1_000_000, 0, 1250),
    (1_000_000, 10_000_000, 1875),
    (1_000_000, 100_000_000, 7500),
    (1_000_000, 1_000_000_000, 63750),
    (10_000_000, 0, 12500),
    (10_000_000, 10_000_000, 13125),
    (10_000_000, 100_000_000, 18750),
    (10_000_000, 1_000_000_000, 75000),
    (100_000_000, 0, 62500),
    (100_000_000, 100_000_000, 68750),
    (100_000_000, 1_000_000_000, 125000),
    (1_000_000_000, 0, 125000),
    (1_000_000_000, 100_000_000, 131250),
    (1_000_000_000, 1_000_000_000, 187500),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub steps: usize,
    pub batch_sequences: usize,
    pub seq_len: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Steps between loss-trace records; 0 records only the final step.
    pub eval_interval: usize,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            steps: 0,
            batch_sequences: REFERENCE_BATCH,
            seq_len: REFERENCE_SEQ_LEN,
            peak_lr: 1e-3,
            warmup_fraction: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-6,
            dropout: 0.1,
            seed: 0,
            grad_clip: Some(1.0),
            eval_interval: 0,
        }
    }
}

impl TrainingSchedule {
    pub fn warmup_steps(&self) -> usize {
        (self.warmup_fraction * self.steps as f64).ceil() as usize
    }

    /// Linear warmup to `peak_lr`, then linear decay reaching 0 after the
    /// last step.
    pub fn lr_at(&self, step: usize) -> f64 {
        let warm = self.warmup_steps();
        if step < warm {
            self.peak_lr * (step + 1) as f64 / warm as f64
        } else {
            let rest = (self.steps - warm).max(1);
            self.peak_lr * (self.steps.saturating_sub(step)) as f64 / rest as f64
        }
    }

    pub fn tokens_per_step(&self) -> usize {
        self.batch_sequences * self.seq_len
    }
}

/// Peak learning rate per preset; mini and small are halved in the
/// low-resource scenario.
pub fn peak_lr(preset: &str, low_resource: bool) -> Result<f64, ModelError> {
    Ok(match (preset, low_resource) {
        ("micro", _) => 3e-3,
        ("tiny", _) => 1e-3,
        ("mini", false) => 7e-4,
        ("mini", true) => 4e-4,
        ("small", false) => 5e-4,
        ("small", true) => 2e-4,
        _ => return Err(ModelError::UnknownPreset(preset.to_string())),
    })
}

/// Epochs over the monolingual data for a budget under a threshold policy.
pub fn epochs_for_budget(mono_tokens: usize, policy: &[(usize, usize)]) -> usize {
    policy
        .iter()
        .find(|&&(max, _)| mono_tokens <= max)
        .or(policy.last())
        .map_or(1, |&(_, e)| e)
}

/// Published table values for the reference batch shape; otherwise
/// `ceil((epochs * mono + multi) / (batch * seq_len))`.
pub fn compute_steps(mono_tokens: usize, epochs: usize, multi_tokens: usize, sched: &TrainingSchedule) -> usize {
    if sched.batch_sequences == REFERENCE_BATCH && sched.seq_len == REFERENCE_SEQ_LEN {
        if let Some(&(_, _, steps)) = REFERENCE_STEPS
            .iter()
            .find(|&&(m, x, _)| m == mono_tokens && x == multi_tokens)
        {
            return steps;
        }
    }
    let total = epochs * mono_tokens + multi_tokens;
    total.div_ceil(sched.tokens_per_step().max(1))
}
