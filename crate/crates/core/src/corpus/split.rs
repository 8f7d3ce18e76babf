use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError};
use crate::tokenize::{Tokenizer, EOS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudgetSplit {
    pub train_tokens: Vec<u32>,
    pub eval_tokens: Vec<u32>,
    pub budget: usize,
    pub eval_size: usize,
    pub seed: u64,
}

/// Concatenates token lines, each followed by EOS, and cuts the stream into
/// `block_len` blocks. The last block may be short.
pub fn pack_blocks<L: AsRef<[u32]>>(lines: &[L], block_len: usize) -> Result<Vec<Vec<u32>>, CorpusError> {
    if block_len == 0 {
        return Err(CorpusError::ZeroBlockLength);
    }
    let mut stream = Vec::new();
    for line in lines {
        stream.extend_from_slice(line.as_ref());
        stream.push(EOS);
    }
    Ok(stream.chunks(block_len).map(<[u32]>::to_vec).collect())
}

/// Packed blocks in shuffled order, flattened. Taking a prefix for eval and
/// the following span for training keeps eval fixed for every budget.
#[derive(Debug, Clone)]
pub struct TokenPool {
    tokens: Vec<u32>,
    seed: u64,
}

impl TokenPool {
    pub fn new<L: AsRef<[u32]>>(lines: &[L], block_len: usize, seed: u64) -> Result<Self, CorpusError> {
        let mut blocks = pack_blocks(lines, block_len)?;
        blocks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self {
            tokens: blocks.concat(),
            seed,
        })
    }

    pub fn from_corpus(corpus: &Corpus, tok: &Tokenizer, block_len: usize, seed: u64) -> Result<Self, CorpusError> {
        Self::new(&tok.encode_lines(corpus.lines()), block_len, seed)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn split(&self, budget: usize, eval_size: usize) -> Result<TokenBudgetSplit, CorpusError> {
        let requested = budget + eval_size;
        if requested > self.tokens.len() {
            return Err(CorpusError::InsufficientTokens {
                available: self.tokens.len(),
                requested,
            });
        }
        Ok(TokenBudgetSplit {
            eval_tokens: self.tokens[..eval_size].to_vec(),
            train_tokens: self.tokens[eval_size..requested].to_vec(),
            budget,
            eval_size,
            seed: self.seed,
        })
    }
}

/// Tokenizes, packs into `block_len` blocks, shuffles with `seed`, then takes
/// the first `eval_size` tokens as eval and the next `budget` as train.
pub fn budget_tokens(
    corpus: &Corpus,
    tok: &Tokenizer,
    budget: usize,
    eval_size: usize,
    block_len: usize,
    seed: u64,
) -> Result<TokenBudgetSplit, CorpusError> {
    TokenPool::from_corpus(corpus, tok, block_len, seed)?.split(budget, eval_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LanguageId;
    use crate::tokenize::train_tokenizer;

    fn fixture() -> (Corpus, Tokenizer) {
        let lines: Vec<String> = (0..300).map(|i| format!("line {i} has some words {}", i * 31 % 97)).collect();
        let tok = train_tokenizer(&lines, 320).unwrap();
        let c = Corpus::new(LanguageId::new("xx", "Latn").unwrap(), lines, "t").unwrap();
        (c, tok)
    }

    #[test]
    fn packing_appends_eos() {
        let blocks = pack_blocks(&[vec![5u32, 6], vec![7]], 2).unwrap();
        assert_eq!(blocks, vec![vec![5, 6], vec![EOS, 7], vec![EOS]]);
        assert!(pack_blocks(&[vec![1u32]], 0).is_err());
    }

    #[test]
    fn exact_budget_consumes_everything() {
        let (c, tok) = fixture();
        let pool = TokenPool::from_corpus(&c, &tok, 16, 1).unwrap();
        let n = pool.len();
        let s = pool.split(n - 100, 100).unwrap();
        assert_eq!(s.train_tokens.len() + s.eval_tokens.len(), n);
        let mut all = s.eval_tokens.clone();
        all.extend(&s.train_tokens);
        assert_eq!(all, pool.tokens());
    }

    #[test]
    fn eval_span_is_budget_invariant() {
        let (c, tok) = fixture();
        let a = budget_tokens(&c, &tok, 1000, 500, 16, 9).unwrap();
        let b = budget_tokens(&c, &tok, 1900, 500, 16, 9).unwrap();
        assert_eq!(a.eval_tokens, b.eval_tokens);
        assert_eq!(a.train_tokens[..], b.train_tokens[..1000]);
        let other = budget_tokens(&c, &tok, 1000, 500, 16, 10).unwrap();
        assert_ne!(a.eval_tokens, other.eval_tokens);
    }

    #[test]
    fn insufficient_tokens() {
        let (c, tok) = fixture();
        let n = TokenPool::from_corpus(&c, &tok, 16, 0).unwrap().len();
        match budget_tokens(&c, &tok, n, 1, 16, 0) {
            Err(CorpusError::InsufficientTokens { available, requested }) => {
                assert_eq!((available, requested), (n, n + 1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
