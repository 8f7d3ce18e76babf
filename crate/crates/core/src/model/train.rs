use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::transformer::{Fault, Scalar, Transformer};
use super::{evaluate, ModelError, TrainingSchedule};
use crate::tokenize::BOS;

/// Fixed-length training blocks served in order, cycling when exhausted.
#[derive(Debug, Clone)]
pub struct BlockStream {
    blocks: Vec<Vec<u32>>,
    pos: usize,
}

impl BlockStream {
    pub fn new(blocks: Vec<Vec<u32>>) -> Self {
        Self {
            blocks: blocks.into_iter().filter(|b| !b.is_empty()).collect(),
            pos: 0,
        }
    }

    /// Cuts a flat token sequence into `seq_len` blocks; the last may be short.
    pub fn from_tokens(tokens: &[u32], seq_len: usize) -> Self {
        Self::new(tokens.chunks(seq_len.max(1)).map(<[u32]>::to_vec).collect())
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn total_tokens(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn blocks(&self) -> &[Vec<u32>] {
        &self.blocks
    }

    fn next_block(&mut self) -> Option<&[u32]> {
        if self.blocks.is_empty() {
            return None;
        }
        let i = self.pos % self.blocks.len();
        self.pos += 1;
        Some(&self.blocks[i])
    }
}

/// `epochs` passes over the monolingual blocks (each pass freshly shuffled)
/// with the added-language blocks spread uniformly at random among them.
/// Each source keeps its own internal order.
pub fn interleave_blocks(mono: &[u32], epochs: usize, added: &[u32], seq_len: usize, seed: u64) -> BlockStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq_len = seq_len.max(1);
    let mono_blocks: Vec<&[u32]> = mono.chunks(seq_len).collect();
    let mut mono_order = Vec::with_capacity(mono_blocks.len() * epochs);
    for _ in 0..epochs {
        let mut idx: Vec<usize> = (0..mono_blocks.len()).collect();
        idx.shuffle(&mut rng);
        mono_order.extend(idx);
    }
    let added_blocks: Vec<&[u32]> = added.chunks(seq_len).collect();
    let mut slots: Vec<bool> = vec![false; mono_order.len()];
    slots.extend(std::iter::repeat(true).take(added_blocks.len()));
    slots.shuffle(&mut rng);
    let (mut mi, mut ai) = (0, 0);
    let blocks = slots
        .into_iter()
        .map(|is_added| {
            if is_added {
                ai += 1;
                added_blocks[ai - 1].to_vec()
            } else {
                mi += 1;
                mono_blocks[mono_order[mi - 1]].to_vec()
            }
        })
        .collect();
    BlockStream::new(blocks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    /// Mean training cross entropy (nats per token) since the last record.
    pub train_loss: f64,
    /// Cross entropy on the eval tokens, nats per token.
    pub eval_loss: Option<f64>,
}

/// Adam on next-token cross entropy for exactly `sched.steps` steps. Each
/// sequence is `[BOS, b0 .. b(n-2)]` predicting `b0 .. b(n-1)`.
pub fn train<F: Scalar>(
    model: &mut Transformer<F>,
    stream: &mut BlockStream,
    sched: &TrainingSchedule,
    eval_tokens: Option<&[u32]>,
) -> Result<Vec<LossRecord>, ModelError> {
    let mut trace = Vec::new();
    if sched.steps == 0 {
        return Ok(trace);
    }
    if stream.num_blocks() == 0 {
        return Err(ModelError::EmptyStream);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
    let n = model.num_params();
    let mut grads = vec![F::zero(); n];
    let mut m = vec![F::zero(); n];
    let mut v = vec![F::zero(); n];
    let (b1, b2) = (sched.adam_beta1, sched.adam_beta2);
    let dropout = sched.dropout;
    let mut interval_loss = 0.0;
    let mut interval_steps = 0;
    let mut input = Vec::with_capacity(sched.seq_len);

    for step in 0..sched.steps {
        grads.iter_mut().for_each(|g| *g = F::zero());
        let batch: Vec<Vec<u32>> = (0..sched.batch_sequences)
            .map(|_| {
                let b = stream.next_block().expect("stream is non-empty");
                b[..b.len().min(sched.seq_len)].to_vec()
            })
            .collect();
        let tokens: usize = batch.iter().map(Vec::len).sum();
        let scale = F::from_f64(1.0 / tokens as f64).expect("finite");
        let mut nll = 0.0;
        for block in &batch {
            input.clear();
            input.push(BOS);
            input.extend_from_slice(&block[..block.len() - 1]);
            let mut r = Some(&mut rng);
            let s = model.accumulate_grads(&input, block, dropout, &mut r, &mut grads, scale, Fault::None)?;
            nll += s.to_f64().unwrap_or(f64::NAN);
        }
        let loss = nll / tokens as f64;
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss(step));
        }

        if let Some(clip) = sched.grad_clip {
            let norm = grads
                .iter()
                .map(|g| {
                    let g = g.to_f64().unwrap_or(0.0);
                    g * g
                })
                .sum::<f64>()
                .sqrt();
            if norm > clip {
                let c = F::from_f64(clip / norm).expect("finite");
                grads.iter_mut().for_each(|g| *g *= c);
            }
        }

        let lr = sched.lr_at(step);
        let t = (step + 1) as i32;
        let step_size = F::from_f64(lr * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t))).expect("finite");
        let eps = F::from_f64(sched.adam_eps * (1.0 - b2.powi(t)).sqrt()).expect("finite");
        let (fb1, fb2) = (F::from_f64(b1).unwrap(), F::from_f64(b2).unwrap());
        let (one_b1, one_b2) = (F::one() - fb1, F::one() - fb2);
        for (((p, &g), mi), vi) in model.params_mut().iter_mut().zip(&grads).zip(&mut m).zip(&mut v) {
            *mi = fb1 * *mi + one_b1 * g;
            *vi = fb2 * *vi + one_b2 * g * g;
            *p -= step_size * *mi / (vi.sqrt() + eps);
        }

        interval_loss += loss;
        interval_steps += 1;
        let last = step + 1 == sched.steps;
        let due = sched.eval_interval > 0 && (step + 1) % sched.eval_interval == 0;
        if due || last {
            let eval_loss = match eval_tokens {
                Some(tokens) if !tokens.is_empty() => {
                    Some(-evaluate(&*model, tokens, "")?.mean_log2_prob * std::f64::consts::LN_2)
                }
                _ => None,
            };
            trace.push(LossRecord {
                step: step + 1,
                lr,
                train_loss: interval_loss / interval_steps as f64,
                eval_loss,
            });
            interval_loss = 0.0;
            interval_steps = 0;
        }
    }
    Ok(trace)
}

/// CSV with header `step,lr,train_loss,eval_loss`.
pub fn write_loss_csv(path: &Path, trace: &[LossRecord]) -> Result<(), ModelError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ModelError::Io(e.into()))?;
    for r in trace {
        w.serialize(r).map_err(|e| ModelError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}
