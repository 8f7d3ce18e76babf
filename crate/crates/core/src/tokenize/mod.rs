//! Byte-level pair-merge tokenizers, merged target+multilingual tokenizers,
//! and vocabulary overlap measures.
//!
//! ID layout: 0 = PAD, 1 = BOS, 2 = EOS, then the 256 single-byte tokens,
//! then learned merges in training order. Specials have no byte string and
//! are excluded from every count of "token strings" (`vocab_size`,
//! `vocab_overlap`, merged sizes); `num_ids` includes them.

mod file;
mod merge;
mod train;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use merge::{encode_routed, merge_tokenizers, MergedTokenizer};
pub use train::{train_multilingual_tokenizer, train_tokenizer};

use crate::corpus::Corpus;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const NUM_SPECIALS: u32 = 3;
pub const BYTE_OFFSET: u32 = NUM_SPECIALS;
pub const FIRST_MERGE_ID: u32 = BYTE_OFFSET + 256;
pub const MIN_VOCAB: usize = 300;
pub const SPECIAL_NAMES: [&str; 3] = ["PAD", "BOS", "EOS"];

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error("max_vocab {got} is below the minimum of {min}")]
    VocabTooSmall { got: usize, min: usize },
    #[error("training text is empty")]
    EmptyTrainingText,
    #[error("no languages supplied")]
    NoLanguages,
    #[error("top_k {top_k} exceeds the {available} reference tokens")]
    TopKTooLarge { top_k: usize, available: usize },
    #[error("vocabulary file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A trained tokenizer. Immutable; `encode`/`decode` take `&self`.
#[derive(Clone, PartialEq, Eq)]
pub struct Tokenizer {
    /// Byte string per id; empty for specials.
    tokens: Vec<Vec<u8>>,
    /// `merges[k]` built id `FIRST_MERGE_ID + k`.
    merges: Vec<(u32, u32)>,
    max_vocab: usize,
    lookup: HashMap<Vec<u8>, u32>,
    merge_ids: HashMap<(u32, u32), u32>,
}

impl fmt::Debug for Tokenizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tokenizer")
            .field("num_ids", &self.num_ids())
            .field("merges", &self.merges.len())
            .field("max_vocab", &self.max_vocab)
            .finish()
    }
}

impl Tokenizer {
    /// Specials and byte fallback only.
    pub(crate) fn base(max_vocab: usize) -> Self {
        let mut tokens = vec![Vec::new(); NUM_SPECIALS as usize];
        let mut lookup = HashMap::new();
        for b in 0..=255u8 {
            lookup.insert(vec![b], BYTE_OFFSET + b as u32);
            tokens.push(vec![b]);
        }
        Self {
            tokens,
            merges: Vec::new(),
            max_vocab,
            lookup,
            merge_ids: HashMap::new(),
        }
    }

    pub(crate) fn push_merge(&mut self, left: u32, right: u32) -> u32 {
        let id = self.tokens.len() as u32;
        let mut bytes = self.tokens[left as usize].clone();
        bytes.extend_from_slice(&self.tokens[right as usize]);
        self.lookup.insert(bytes.clone(), id);
        self.tokens.push(bytes);
        self.merges.push((left, right));
        self.merge_ids.insert((left, right), id);
        id
    }

    /// Total ids including specials; this is the embedding table size.
    pub fn num_ids(&self) -> usize {
        self.tokens.len()
    }

    /// Number of token byte strings (specials excluded).
    pub fn vocab_size(&self) -> usize {
        self.tokens.len() - NUM_SPECIALS as usize
    }

    pub fn max_vocab(&self) -> usize {
        self.max_vocab
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// `None` for specials and out-of-range ids.
    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        if id < NUM_SPECIALS {
            return None;
        }
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    pub fn id_of(&self, bytes: &[u8]) -> Option<u32> {
        self.lookup.get(bytes).copied()
    }

    /// `(id, bytes)` for every non-special token, in id order.
    pub fn token_strings(&self) -> impl Iterator<Item = (u32, &[u8])> {
        self.tokens
            .iter()
            .enumerate()
            .skip(NUM_SPECIALS as usize)
            .map(|(i, t)| (i as u32, t.as_slice()))
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for chunk in pretokenize(text) {
            self.encode_chunk(chunk.as_bytes(), &mut out);
        }
        out
    }

    /// Encodes many lines, memoizing chunk segmentations across them.
    pub fn encode_lines<S: AsRef<str>>(&self, lines: &[S]) -> Vec<Vec<u32>> {
        let mut cache: HashMap<&str, Vec<u32>> = HashMap::new();
        lines
            .iter()
            .map(|line| {
                let mut out = Vec::new();
                for chunk in pretokenize(line.as_ref()) {
                    let ids = cache.entry(chunk).or_insert_with(|| {
                        let mut v = Vec::new();
                        self.encode_chunk(chunk.as_bytes(), &mut v);
                        v
                    });
                    out.extend_from_slice(ids);
                }
                out
            })
            .collect()
    }

    fn encode_chunk(&self, chunk: &[u8], out: &mut Vec<u32>) {
        let mut syms: Vec<u32> = chunk.iter().map(|&b| BYTE_OFFSET + b as u32).collect();
        while syms.len() > 1 {
            let best = syms
                .windows(2)
                .filter_map(|w| self.merge_ids.get(&(w[0], w[1])).copied())
                .min();
            let Some(id) = best else { break };
            let pair = self.merges[(id - FIRST_MERGE_ID) as usize];
            apply_merge(&mut syms, pair, id);
        }
        out.extend_from_slice(&syms);
    }

    /// Concatenated bytes; specials and unknown ids contribute nothing.
    pub fn decode_bytes(&self, ids: &[u32]) -> Vec<u8> {
        let mut out = Vec::new();
        for &id in ids {
            if let Some(b) = self.token_bytes(id) {
                out.extend_from_slice(b);
            }
        }
        out
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        String::from_utf8_lossy(&self.decode_bytes(ids)).into_owned()
    }

    /// Text form of the vocabulary file; byte-stable for equal tokenizers.
    pub fn to_vocab_string(&self) -> String {
        file::write_vocab(self)
    }

    pub fn from_vocab_str(text: &str) -> Result<Self, TokenizeError> {
        file::parse_vocab(text, 0)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizeError> {
        std::fs::write(path, self.to_vocab_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizeError> {
        Self::from_vocab_str(&std::fs::read_to_string(path)?)
    }

    /// First 128 bits of SHA-256 over the vocabulary file, hex encoded.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_vocab_string().as_bytes());
        hash[..16].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Replaces every non-overlapping occurrence of `pair`, scanning left to right.
pub(crate) fn apply_merge(syms: &mut Vec<u32>, pair: (u32, u32), id: u32) {
    let mut read = 0;
    let mut write = 0;
    while read < syms.len() {
        if read + 1 < syms.len() && syms[read] == pair.0 && syms[read + 1] == pair.1 {
            syms[write] = id;
            read += 2;
        } else {
            syms[write] = syms[read];
            read += 1;
        }
        write += 1;
    }
    syms.truncate(write);
}

/// Splits text into chunks of leading whitespace plus a non-whitespace run.
/// Chunks tile the input exactly.
pub fn pretokenize(text: &str) -> impl Iterator<Item = &str> {
    let mut rest = text;
    std::iter::from_fn(move || {
        if rest.is_empty() {
            return None;
        }
        let mut seen_word = false;
        let mut end = rest.len();
        for (i, c) in rest.char_indices() {
            if c.is_whitespace() {
                if seen_word {
                    end = i;
                    break;
                }
            } else {
                seen_word = true;
            }
        }
        let (chunk, tail) = rest.split_at(end);
        rest = tail;
        Some(chunk)
    })
}

/// Number of token strings present in both vocabularies, byte tokens
/// included.
pub fn vocab_overlap(a: &Tokenizer, b: &Tokenizer) -> usize {
    let (small, large) = if a.num_ids() <= b.num_ids() { (a, b) } else { (b, a) };
    small
        .token_strings()
        .filter(|(_, bytes)| large.id_of(bytes).is_some())
        .count()
}

/// Share of the `top_k` most frequent reference tokens on `ref_corpus` that
/// also exist in `tok`. Frequency ties rank by reference id.
pub fn reference_coverage(
    tok: &Tokenizer,
    reference: &Tokenizer,
    ref_corpus: &Corpus,
    top_k: usize,
) -> Result<f64, TokenizeError> {
    if top_k > reference.vocab_size() {
        return Err(TokenizeError::TopKTooLarge {
            top_k,
            available: reference.vocab_size(),
        });
    }
    if top_k == 0 {
        return Ok(1.0);
    }
    let mut freq = vec![0u64; reference.num_ids()];
    for ids in reference.encode_lines(ref_corpus.lines()) {
        for id in ids {
            freq[id as usize] += 1;
        }
    }
    let mut ranked: Vec<u32> = (NUM_SPECIALS..reference.num_ids() as u32).collect();
    ranked.sort_by(|&x, &y| freq[y as usize].cmp(&freq[x as usize]).then(x.cmp(&y)));
    let hits = ranked[..top_k]
        .iter()
        .filter(|&&id| tok.id_of(reference.token_bytes(id).unwrap_or_default()).is_some())
        .count();
    Ok(hits as f64 / top_k as f64)
}
