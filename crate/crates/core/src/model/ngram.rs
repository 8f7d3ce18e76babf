use std::collections::HashMap;

use super::{BlockStream, LanguageModel, ModelError};
use crate::tokenize::BOS;

/// Interpolated absolute-discounting n-gram model. The unigram level is
/// itself discounted and interpolated with a uniform distribution over the
/// vocabulary, so unseen tokens keep non-zero probability.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    order: usize,
    discount: f64,
    vocab_size: usize,
    context_len: usize,
    unigram: Vec<u64>,
    unigram_total: u64,
    unigram_types: u64,
    bigram: HashMap<(u32, u32), u64>,
    bigram_ctx: HashMap<u32, (u64, u64)>,
    trigram: HashMap<(u32, u32, u32), u64>,
    trigram_ctx: HashMap<(u32, u32), (u64, u64)>,
}

/// Counts every block as `[BOS, block..]`, mirroring how windows are scored.
pub fn train_ngram(
    stream: &BlockStream,
    order: usize,
    discount: f64,
    vocab_size: usize,
    context_len: usize,
) -> Result<NgramModel, ModelError> {
    if !(2..=3).contains(&order) {
        return Err(ModelError::InvalidOrder(order));
    }
    if !(discount > 0.0 && discount < 1.0) {
        return Err(ModelError::InvalidDiscount(discount));
    }
    let mut m = NgramModel {
        order,
        discount,
        vocab_size,
        context_len: context_len.max(1),
        unigram: vec![0; vocab_size],
        unigram_total: 0,
        unigram_types: 0,
        bigram: HashMap::new(),
        bigram_ctx: HashMap::new(),
        trigram: HashMap::new(),
        trigram_ctx: HashMap::new(),
    };
    for block in stream.blocks() {
        let mut prev2 = None;
        let mut prev = BOS;
        for &w in block {
            if w as usize >= vocab_size {
                return Err(ModelError::TokenOutOfRange { id: w, vocab: vocab_size });
            }
            m.unigram[w as usize] += 1;
            m.unigram_total += 1;
            let c = m.bigram.entry((prev, w)).or_default();
            *c += 1;
            let ctx = m.bigram_ctx.entry(prev).or_default();
            ctx.0 += 1;
            if *c == 1 {
                ctx.1 += 1;
            }
            if order == 3 {
                if let Some(p2) = prev2 {
                    let c = m.trigram.entry((p2, prev, w)).or_default();
                    *c += 1;
                    let ctx = m.trigram_ctx.entry((p2, prev)).or_default();
                    ctx.0 += 1;
                    if *c == 1 {
                        ctx.1 += 1;
                    }
                }
            }
            prev2 = Some(prev);
            prev = w;
        }
    }
    m.unigram_types = m.unigram.iter().filter(|&&c| c > 0).count() as u64;
    Ok(m)
}

impl NgramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn p_unigram(&self, w: u32) -> f64 {
        let uniform = 1.0 / self.vocab_size as f64;
        if self.unigram_total == 0 {
            return uniform;
        }
        let n = self.unigram_total as f64;
        let c = self.unigram.get(w as usize).copied().unwrap_or(0) as f64;
        let d = self.discount;
        (c - d).max(0.0) / n + d * self.unigram_types as f64 / n * uniform
    }

    fn p_bigram(&self, prev: u32, w: u32) -> f64 {
        let lower = self.p_unigram(w);
        match self.bigram_ctx.get(&prev) {
            None => lower,
            Some(&(total, types)) => {
                let c = self.bigram.get(&(prev, w)).copied().unwrap_or(0) as f64;
                let (t, d) = (total as f64, self.discount);
                (c - d).max(0.0) / t + d * types as f64 / t * lower
            }
        }
    }

    /// `P(w | prev2, prev)`; `prev2` is `None` right after BOS.
    pub fn prob(&self, prev2: Option<u32>, prev: u32, w: u32) -> f64 {
        let lower = self.p_bigram(prev, w);
        if self.order < 3 {
            return lower;
        }
        let Some(p2) = prev2 else { return lower };
        match self.trigram_ctx.get(&(p2, prev)) {
            None => lower,
            Some(&(total, types)) => {
                let c = self.trigram.get(&(p2, prev, w)).copied().unwrap_or(0) as f64;
                let (t, d) = (total as f64, self.discount);
                (c - d).max(0.0) / t + d * types as f64 / t * lower
            }
        }
    }
}

impl LanguageModel for NgramModel {
    fn context_len(&self) -> usize {
        self.context_len
    }

    fn score_window(&self, window: &[u32]) -> Vec<f64> {
        let mut prev2 = None;
        let mut prev = BOS;
        window
            .iter()
            .map(|&w| {
                let p = self.prob(prev2, prev, w);
                prev2 = Some(prev);
                prev = w;
                p.log2()
            })
            .collect()
    }
}
