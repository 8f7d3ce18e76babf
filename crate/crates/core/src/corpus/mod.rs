//! Raw per-language text: identity, loading, cleaning, deduplication and
//! deterministic train/eval token budgets.

mod clean;
mod dedup;
mod split;

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use clean::{clean_lines, is_repetitive, CleaningConfig, LinePredicate};
pub use dedup::{dedup_sequences, DEFAULT_MIN_BYTES, DOCUMENT_SEPARATOR, MIN_DEDUP_BYTES};
pub use split::{budget_tokens, pack_blocks, TokenBudgetSplit, TokenPool};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid language code {0:?}: expected 2-3 lowercase ASCII letters")]
    InvalidCode(String),
    #[error("invalid script {0:?}: expected 4 title-case ASCII letters")]
    InvalidScript(String),
    #[error("invalid language id {0:?}: expected <code>_<Script>")]
    InvalidLanguageId(String),
    #[error("line {0} contains a newline")]
    EmbeddedNewline(usize),
    #[error("min_bytes must be at least {min}, got {got}")]
    MinBytesTooSmall { got: usize, min: usize },
    #[error("insufficient tokens: {available} available, {requested} requested")]
    InsufficientTokens { available: usize, requested: usize },
    #[error("block length must be positive")]
    ZeroBlockLength,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("corpus exceeds the 2 GiB dedup limit ({0} bytes)")]
    TooLarge(usize),
    #[error("suffix array construction failed: {0}")]
    SuffixArray(String),
    #[error("corpus file is not valid UTF-8: {0}")]
    Utf8(#[from] std::string::FromUtf8Error),
    #[error("manifest: {0}")]
    Manifest(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// ISO-639-3 code plus ISO-15924 script. The pair is the identity key: the
/// same language written in two scripts is two languages here.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct LanguageId {
    code: String,
    script: String,
}

impl LanguageId {
    pub fn new(code: &str, script: &str) -> Result<Self, CorpusError> {
        let code_ok = (2..=3).contains(&code.len()) && code.bytes().all(|b| b.is_ascii_lowercase());
        if !code_ok {
            return Err(CorpusError::InvalidCode(code.to_string()));
        }
        let mut chars = script.chars();
        let script_ok = script.len() == 4
            && chars.next().is_some_and(|c| c.is_ascii_uppercase())
            && chars.all(|c| c.is_ascii_lowercase());
        if !script_ok {
            return Err(CorpusError::InvalidScript(script.to_string()));
        }
        Ok(Self {
            code: code.to_string(),
            script: script.to_string(),
        })
    }

    pub fn code(&self) -> &str {
        &self.code
    }

    pub fn script(&self) -> &str {
        &self.script
    }
}

impl Ord for LanguageId {
    fn cmp(&self, other: &Self) -> Ordering {
        (&self.code, &self.script).cmp(&(&other.code, &other.script))
    }
}

impl PartialOrd for LanguageId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for LanguageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.code, self.script)
    }
}

impl fmt::Debug for LanguageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for LanguageId {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (code, script) = s
            .split_once('_')
            .ok_or_else(|| CorpusError::InvalidLanguageId(s.to_string()))?;
        Self::new(code, script)
    }
}

impl Serialize for LanguageId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LanguageId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ordered lines of text for one language. Lines never contain `\n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    language: LanguageId,
    lines: Vec<String>,
    provenance: String,
}

impl Corpus {
    pub fn new(
        language: LanguageId,
        lines: Vec<String>,
        provenance: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        if let Some(i) = lines.iter().position(|l| l.contains('\n')) {
            return Err(CorpusError::EmbeddedNewline(i));
        }
        Ok(Self {
            language,
            lines,
            provenance: provenance.into(),
        })
    }

    /// Caller guarantees no line contains `\n`.
    pub(crate) fn from_trusted(language: LanguageId, lines: Vec<String>, provenance: String) -> Self {
        debug_assert!(lines.iter().all(|l| !l.contains('\n')));
        Self {
            language,
            lines,
            provenance,
        }
    }

    /// Reads an LF-terminated UTF-8 file. A trailing newline does not produce
    /// an empty final line.
    pub fn read(path: &Path, language: LanguageId) -> Result<Self, CorpusError> {
        let text = String::from_utf8(fs::read(path)?)?;
        let mut lines: Vec<String> = text.split('\n').map(str::to_string).collect();
        if text.ends_with('\n') || text.is_empty() {
            lines.pop();
        }
        Ok(Self::from_trusted(
            language,
            lines,
            path.display().to_string(),
        ))
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        for line in &self.lines {
            out.write_all(line.as_bytes())?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn language(&self) -> &LanguageId {
        &self.language
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn byte_len(&self) -> usize {
        self.lines.iter().map(String::len).sum()
    }

    pub fn into_lines(self) -> Vec<String> {
        self.lines
    }

    pub fn with_lines(&self, lines: Vec<String>) -> Corpus {
        Self::from_trusted(self.language.clone(), lines, self.provenance.clone())
    }

    pub fn manifest_entry(&self) -> ManifestEntry {
        ManifestEntry {
            code: self.language.code.clone(),
            script: self.language.script.clone(),
            lines: self.lines.len() as u64,
            bytes: self.byte_len() as u64,
        }
    }
}

/// Uniform sample of `min(n, |corpus|)` lines without replacement, in sampled
/// order.
pub fn sample_lines(corpus: &Corpus, n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amount = n.min(corpus.len());
    rand::seq::index::sample(&mut rng, corpus.len(), amount)
        .into_iter()
        .map(|i| corpus.lines[i].clone())
        .collect()
}

/// One row of the corpus manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub code: String,
    pub script: String,
    pub lines: u64,
    pub bytes: u64,
}

impl ManifestEntry {
    pub fn language(&self) -> Result<LanguageId, CorpusError> {
        LanguageId::new(&self.code, &self.script)
    }
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_path(path)?;
    for e in entries {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, CorpusError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
