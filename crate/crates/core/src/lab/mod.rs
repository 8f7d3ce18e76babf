//! Experiment grids: planning, execution against a results store, and
//! report tables.

mod execute;
mod report;
mod store;

pub use execute::{execute, similarity_matrix, ExecuteOptions, ExecuteSummary};
pub use report::{
    report, write_report, ConditionRow, CorrelationRow, ReferenceRow, Report, RunRow, SimilarityRow,
};
pub use store::{ResultStore, SCHEMA_VERSION};

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{CorpusError, LanguageId};
use crate::model::{ModelConfig, ModelError};
use crate::scaling::ScalingError;
use crate::stats::StatsError;
use crate::tokenize::TokenizeError;
use crate::typology::{SelectMode, TypologyError};

#[derive(Debug, Error)]
pub enum LabError {
    #[error("spec field {field}: {message}")]
    Spec { field: String, message: String },
    #[error("store line {line}: {message}")]
    Store { line: usize, message: String },
    #[error("no monolingual baseline for {target} with preset {preset}")]
    MissingBaseline { target: LanguageId, preset: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Typology(#[from] TypologyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scaling(#[from] ScalingError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

fn spec_err(field: impl Into<String>, message: impl Into<String>) -> LabError {
    LabError::Spec {
        field: field.into(),
        message: message.into(),
    }
}

/// What kind of added data a run receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Monolingual,
    Similar,
    Dissimilar,
}

impl Condition {
    pub fn select_mode(self) -> Option<SelectMode> {
        match self {
            Condition::Monolingual => None,
            Condition::Similar => Some(SelectMode::Most),
            Condition::Dissimilar => Some(SelectMode::Least),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Monolingual => "monolingual",
            Condition::Similar => "similar",
            Condition::Dissimilar => "dissimilar",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    /// Holds one `<code>_<Script>.txt` corpus per language.
    pub corpus_dir: PathBuf,
    /// Typological feature CSV.
    pub features: PathBuf,
    /// Monolingual tokenizers (`<code>_<Script>.vocab`), trained on demand
    /// when missing.
    pub tokenizer_dir: PathBuf,
}

impl DataPaths {
    pub fn corpus(&self, lang: &LanguageId) -> PathBuf {
        self.corpus_dir.join(format!("{lang}.txt"))
    }

    pub fn tokenizer(&self, lang: &LanguageId) -> PathBuf {
        self.tokenizer_dir.join(format!("{lang}.vocab"))
    }
}

/// Drops the smallest positive added budget for every monolingual budget at
/// least `ratio` times larger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmissionRule {
    pub enabled: bool,
    pub ratio: usize,
}

impl Default for OmissionRule {
    fn default() -> Self {
        Self { enabled: true, ratio: 10 }
    }
}

/// The monolingual cell whose seed-averaged score is the zero point of
/// relative log-likelihood for each target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub preset: String,
    pub mono_tokens: usize,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerSettings {
    pub max_vocab: usize,
    /// Lines sampled per language for tokenizer training.
    pub sample_lines: usize,
}

impl Default for TokenizerSettings {
    fn default() -> Self {
        Self {
            max_vocab: 4000,
            sample_lines: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSettings {
    pub batch_sequences: usize,
    pub seq_len: usize,
    /// `(max mono tokens, epochs)` thresholds; the last entry covers the rest.
    pub epoch_policy: Vec<(usize, usize)>,
    /// Defaults to the preset's peak rate.
    pub peak_lr: Option<f64>,
    pub warmup_fraction: f64,
    pub dropout: f64,
    pub grad_clip: Option<f64>,
    /// Absolute discount of the n-gram presets.
    pub ngram_discount: f64,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        Self {
            batch_sequences: 16,
            seq_len: 64,
            // the 20/10/2 epoch policy with thresholds scaled down 50x
            epoch_policy: vec![(200_000, 20), (2_000_000, 10), (usize::MAX, 2)],
            peak_lr: None,
            warmup_fraction: 0.1,
            dropout: 0.1,
            grad_clip: Some(1.0),
            ngram_discount: 0.75,
        }
    }
}

fn default_k() -> usize {
    10
}

fn default_conditions() -> Vec<Condition> {
    vec![Condition::Similar, Condition::Dissimilar]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub pool: Vec<LanguageId>,
    pub target_languages: Vec<LanguageId>,
    pub mono_budgets: Vec<usize>,
    /// 0 is the monolingual control.
    pub multi_budgets: Vec<usize>,
    #[serde(default = "default_conditions")]
    pub conditions: Vec<Condition>,
    #[serde(default = "default_k")]
    pub k_added: usize,
    pub model_presets: Vec<String>,
    pub seeds: Vec<u64>,
    pub eval_size: usize,
    pub paths: DataPaths,
    #[serde(default)]
    pub omission: OmissionRule,
    /// Defaults to the first preset at the smallest monolingual budget over
    /// all seeds.
    #[serde(default)]
    pub baseline: Option<BaselineSpec>,
    #[serde(default)]
    pub tokenizer: TokenizerSettings,
    #[serde(default)]
    pub training: TrainingSettings,
    /// Seeds corpus shuffling and tokenizer sampling; shared by all runs so
    /// every run of a target sees the same eval tokens.
    #[serde(default)]
    pub data_seed: u64,
}

pub fn is_known_preset(name: &str) -> bool {
    ModelConfig::is_transformer_preset(name) || ngram_order(name).is_some()
}

pub(crate) fn ngram_order(preset: &str) -> Option<usize> {
    match preset {
        "ngram2" => Some(2),
        "ngram3" => Some(3),
        _ => None,
    }
}

impl ExperimentSpec {
    /// Reads a JSON spec; relative data paths resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path)?;
        let mut spec: ExperimentSpec = serde_json::from_str(&text).map_err(|e| spec_err("<document>", e.to_string()))?;
        if let Some(dir) = path.parent() {
            for p in [
                &mut spec.paths.corpus_dir,
                &mut spec.paths.features,
                &mut spec.paths.tokenizer_dir,
            ] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), LabError> {
        if self.pool.is_empty() {
            return Err(spec_err("pool", "empty"));
        }
        let pool: BTreeSet<&LanguageId> = self.pool.iter().collect();
        if self.target_languages.is_empty() {
            return Err(spec_err("target_languages", "empty"));
        }
        for (i, t) in self.target_languages.iter().enumerate() {
            if !pool.contains(t) {
                return Err(spec_err(format!("target_languages[{i}]"), format!("{t} is not in the pool")));
            }
        }
        if self.mono_budgets.is_empty() {
            return Err(spec_err("mono_budgets", "empty"));
        }
        if let Some(i) = self.mono_budgets.iter().position(|&b| b == 0) {
            return Err(spec_err(format!("mono_budgets[{i}]"), "must be positive"));
        }
        if self.multi_budgets.is_empty() {
            return Err(spec_err("multi_budgets", "empty (use [0] for monolingual only)"));
        }
        if self.k_added == 0 {
            return Err(spec_err("k_added", "must be at least 1"));
        }
        if self.multi_budgets.iter().any(|&m| m > 0) {
            if self.conditions.is_empty() {
                return Err(spec_err("conditions", "empty while added budgets are positive"));
            }
            if pool.len() <= self.k_added {
                return Err(spec_err("k_added", format!("pool of {} cannot supply {} added languages", pool.len(), self.k_added)));
            }
        }
        if let Some(i) = self.conditions.iter().position(|&c| c == Condition::Monolingual) {
            return Err(spec_err(format!("conditions[{i}]"), "only similar and dissimilar are allowed"));
        }
        if self.model_presets.is_empty() {
            return Err(spec_err("model_presets", "empty"));
        }
        for (i, p) in self.model_presets.iter().enumerate() {
            if !is_known_preset(p) {
                return Err(spec_err(format!("model_presets[{i}]"), format!("unknown preset {p:?}")));
            }
        }
        if self.seeds.is_empty() {
            return Err(spec_err("seeds", "empty"));
        }
        if self.eval_size == 0 {
            return Err(spec_err("eval_size", "must be positive"));
        }
        if self.omission.ratio == 0 {
            return Err(spec_err("omission.ratio", "must be positive"));
        }
        if let Some(b) = &self.baseline {
            if !is_known_preset(&b.preset) {
                return Err(spec_err("baseline.preset", format!("unknown preset {:?}", b.preset)));
            }
            if b.mono_tokens == 0 {
                return Err(spec_err("baseline.mono_tokens", "must be positive"));
            }
            if b.seeds.is_empty() {
                return Err(spec_err("baseline.seeds", "empty"));
            }
        }
        let t = &self.training;
        if t.batch_sequences == 0 || t.seq_len == 0 {
            return Err(spec_err("training", "batch_sequences and seq_len must be positive"));
        }
        if t.epoch_policy.is_empty() || t.epoch_policy.iter().any(|&(_, e)| e == 0) {
            return Err(spec_err("training.epoch_policy", "needs at least one entry with positive epochs"));
        }
        if !(0.0..1.0).contains(&t.dropout) {
            return Err(spec_err("training.dropout", "must be in [0, 1)"));
        }
        if !(t.ngram_discount > 0.0 && t.ngram_discount < 1.0) {
            return Err(spec_err("training.ngram_discount", "must be in (0, 1)"));
        }
        if self.tokenizer.sample_lines == 0 {
            return Err(spec_err("tokenizer.sample_lines", "must be positive"));
        }
        Ok(())
    }

    pub fn resolved_baseline(&self) -> BaselineSpec {
        self.baseline.clone().unwrap_or_else(|| BaselineSpec {
            preset: self.model_presets[0].clone(),
            mono_tokens: *self.mono_budgets.iter().min().expect("validated"),
            seeds: self.seeds.clone(),
        })
    }

    fn omitted(&self, mono: usize, multi: usize) -> bool {
        if !self.omission.enabled || multi == 0 {
            return false;
        }
        let smallest = self.multi_budgets.iter().copied().filter(|&m| m > 0).min();
        smallest == Some(multi) && mono >= self.omission.ratio.saturating_mul(multi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Pending,
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub target: LanguageId,
    pub mono_tokens: usize,
    pub multi_tokens: usize,
    pub condition: Condition,
    pub preset: String,
    pub seed: u64,
    pub added_languages: Vec<LanguageId>,
    pub eval_ll_bits: Option<f64>,
    pub relative_ll: Option<f64>,
    pub est_log10_tokens: Option<f64>,
    pub steps: usize,
    pub wall_seconds: f64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub tokenizer_id: Option<String>,
}

impl RunRecord {
    fn skeleton(spec: &ExperimentSpec, key: RunKey) -> Self {
        Self {
            run_id: run_id(spec, &key),
            target: key.target,
            mono_tokens: key.mono_tokens,
            multi_tokens: key.multi_tokens,
            condition: key.condition,
            preset: key.preset,
            seed: key.seed,
            added_languages: Vec::new(),
            eval_ll_bits: None,
            relative_ll: None,
            est_log10_tokens: None,
            steps: 0,
            wall_seconds: 0.0,
            status: RunStatus::Pending,
            error: None,
            tokenizer_id: None,
        }
    }

    pub fn is_baseline_of(&self, b: &BaselineSpec) -> bool {
        self.condition == Condition::Monolingual
            && self.multi_tokens == 0
            && self.preset == b.preset
            && self.mono_tokens == b.mono_tokens
            && b.seeds.contains(&self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct RunKey {
    target: LanguageId,
    mono_tokens: usize,
    multi_tokens: usize,
    condition: Condition,
    preset: String,
    seed: u64,
}

/// Everything besides the grid coordinates that changes a run's outcome.
#[derive(Serialize)]
struct RunContext<'a> {
    eval_size: usize,
    k_added: usize,
    data_seed: u64,
    tokenizer: &'a TokenizerSettings,
    training: &'a TrainingSettings,
}

/// 128-bit hex digest of the run-defining fields in a fixed field order.
fn run_id(spec: &ExperimentSpec, key: &RunKey) -> String {
    let ctx = RunContext {
        eval_size: spec.eval_size,
        k_added: spec.k_added,
        data_seed: spec.data_seed,
        tokenizer: &spec.tokenizer,
        training: &spec.training,
    };
    let canonical = serde_json::to_string(&("lingolab-run/1", key, ctx)).expect("plain data serializes");
    let hash = Sha256::digest(canonical.as_bytes());
    hash[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// Grid order: target, preset, mono budget, added budget, condition, seed.
/// Baseline cells missing from the grid come first.
pub fn plan_runs(spec: &ExperimentSpec) -> Result<Vec<RunRecord>, LabError> {
    spec.validate()?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut push = |key: RunKey, out: &mut Vec<RunRecord>| {
        let rec = RunRecord::skeleton(spec, key);
        if seen.insert(rec.run_id.clone()) {
            out.push(rec);
        }
    };
    let base = spec.resolved_baseline();
    let mut grid = Vec::new();
    for target in &spec.target_languages {
        for preset in &spec.model_presets {
            for &mono in &spec.mono_budgets {
                for &multi in &spec.multi_budgets {
                    if spec.omitted(mono, multi) {
                        continue;
                    }
                    let conditions: &[Condition] = if multi == 0 {
                        &[Condition::Monolingual]
                    } else {
                        &spec.conditions
                    };
                    for &condition in conditions {
                        for &seed in &spec.seeds {
                            grid.push(RunKey {
                                target: target.clone(),
                                mono_tokens: mono,
                                multi_tokens: multi,
                                condition,
                                preset: preset.clone(),
                                seed,
                            });
                        }
                    }
                }
            }
        }
    }
    for target in &spec.target_languages {
        for &seed in &base.seeds {
            let key = RunKey {
                target: target.clone(),
                mono_tokens: base.mono_tokens,
                multi_tokens: 0,
                condition: Condition::Monolingual,
                preset: base.preset.clone(),
                seed,
            };
            if !grid.contains(&key) {
                push(key, &mut out);
            }
        }
    }
    for key in grid {
        push(key, &mut out);
    }
    Ok(out)
}
