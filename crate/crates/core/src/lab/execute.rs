use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use super::{ngram_order, plan_runs, Condition, ExperimentSpec, LabError, ResultStore, RunRecord, RunStatus};
use crate::corpus::{sample_lines, Corpus, LanguageId, TokenPool};
use crate::model::{
    compute_steps, epochs_for_budget, evaluate, interleave_blocks, peak_lr, train, train_ngram, EvalResult,
    ModelConfig, TrainingSchedule, Transformer,
};
use crate::stats::{baseline_ll, relative_ll};
use crate::tokenize::{encode_routed, merge_tokenizers, train_multilingual_tokenizer, train_tokenizer, Tokenizer};
use crate::typology::{build_similarity_matrix, load_feature_vectors, select_languages, SimilarityMatrix};

const STREAM_SALT: u64 = 0x5eed_0f_b10c;

#[derive(Debug, Clone)]
pub struct ExecuteOptions {
    /// Runs trained concurrently.
    pub jobs: usize,
    /// Start at most this many runs, then return as if interrupted.
    pub stop_after: Option<usize>,
}

impl Default for ExecuteOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            stop_after: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecuteSummary {
    pub planned: usize,
    pub already_done: usize,
    pub completed: usize,
    pub failed: usize,
    /// Pending runs left untouched because of `stop_after`.
    pub not_started: usize,
}

struct TargetData {
    tokenizer: Arc<Tokenizer>,
    pool: TokenPool,
}

/// Added-language material for one (target, condition).
struct AddedData {
    languages: Vec<LanguageId>,
    /// Receives the remainder of an uneven split.
    most_similar: usize,
    vocab_size: usize,
    pools: Vec<TokenPool>,
}

struct Workspace {
    targets: BTreeMap<LanguageId, TargetData>,
    added: BTreeMap<(LanguageId, Condition), Result<AddedData, String>>,
}

impl Workspace {
    fn prepare(spec: &ExperimentSpec, pending: &[RunRecord]) -> Result<Self, LabError> {
        let targets_needed: BTreeSet<&LanguageId> = pending.iter().map(|r| &r.target).collect();
        let added_needed: BTreeSet<(LanguageId, Condition)> = pending
            .iter()
            .filter(|r| r.multi_tokens > 0)
            .map(|r| (r.target.clone(), r.condition))
            .collect();
        let langs: Vec<&LanguageId> = if added_needed.is_empty() {
            targets_needed.iter().copied().collect()
        } else {
            spec.pool.iter().collect()
        };

        let mut corpora = BTreeMap::new();
        let mut tokenizers = BTreeMap::new();
        for &lang in &langs {
            let corpus = Corpus::read(&spec.paths.corpus(lang), lang.clone())?;
            let tok = monolingual_tokenizer(spec, &corpus)?;
            corpora.insert(lang.clone(), corpus);
            tokenizers.insert(lang.clone(), Arc::new(tok));
        }

        let mut targets = BTreeMap::new();
        for &t in &targets_needed {
            let tok = tokenizers[t].clone();
            let pool = TokenPool::from_corpus(&corpora[t], &tok, spec.training.seq_len, spec.data_seed)?;
            targets.insert(t.clone(), TargetData { tokenizer: tok, pool });
        }

        let mut added = BTreeMap::new();
        if !added_needed.is_empty() {
            let plain: BTreeMap<LanguageId, Tokenizer> =
                tokenizers.iter().map(|(l, t)| (l.clone(), (**t).clone())).collect();
            let matrix = build_similarity_matrix(&spec.pool, &load_feature_vectors(&spec.paths.features)?, &plain)?;
            for (target, condition) in added_needed {
                let data = added_data(spec, &matrix, &corpora, &targets[&target].tokenizer, &target, condition)
                    .map_err(|e| e.to_string());
                if let Err(e) = &data {
                    log::warn!("added data for {target}/{condition}: {e}");
                }
                added.insert((target, condition), data);
            }
        }
        Ok(Self { targets, added })
    }
}

/// Similarity over the experiment's pool, training any missing tokenizers.
pub fn similarity_matrix(spec: &ExperimentSpec) -> Result<SimilarityMatrix, LabError> {
    let mut tokenizers = BTreeMap::new();
    for lang in &spec.pool {
        let path = spec.paths.tokenizer(lang);
        let tok = if path.exists() {
            Tokenizer::load(&path)?
        } else {
            monolingual_tokenizer(spec, &Corpus::read(&spec.paths.corpus(lang), lang.clone())?)?
        };
        tokenizers.insert(lang.clone(), tok);
    }
    Ok(build_similarity_matrix(&spec.pool, &load_feature_vectors(&spec.paths.features)?, &tokenizers)?)
}

/// Loads `<tokenizer_dir>/<lang>.vocab`, or trains and saves it.
fn monolingual_tokenizer(spec: &ExperimentSpec, corpus: &Corpus) -> Result<Tokenizer, LabError> {
    let path = spec.paths.tokenizer(corpus.language());
    if path.exists() {
        return Ok(Tokenizer::load(&path)?);
    }
    let sample = sample_lines(corpus, spec.tokenizer.sample_lines, spec.data_seed);
    let tok = train_tokenizer(&sample, spec.tokenizer.max_vocab)?;
    std::fs::create_dir_all(&spec.paths.tokenizer_dir)?;
    tok.save(&path)?;
    log::info!("trained tokenizer {} ({} ids)", path.display(), tok.num_ids());
    Ok(tok)
}

fn added_data(
    spec: &ExperimentSpec,
    matrix: &SimilarityMatrix,
    corpora: &BTreeMap<LanguageId, Corpus>,
    target_tok: &Tokenizer,
    target: &LanguageId,
    condition: Condition,
) -> Result<AddedData, LabError> {
    let mode = condition.select_mode().expect("added data needs a multilingual condition");
    let eligible: BTreeSet<LanguageId> = spec.pool.iter().filter(|l| *l != target).cloned().collect();
    let languages = select_languages(target, matrix, spec.k_added, mode, &eligible)?;
    let most_similar = (0..languages.len())
        .max_by(|&i, &j| {
            let s = |k: usize| matrix.combined_between(target, &languages[k]).unwrap_or(f64::NEG_INFINITY);
            // ties go to the smaller id, which comes first
            s(i).total_cmp(&s(j)).then_with(|| languages[j].cmp(&languages[i]))
        })
        .expect("k_added >= 1");

    let samples: BTreeMap<LanguageId, Vec<String>> = languages
        .iter()
        .map(|l| (l.clone(), sample_lines(&corpora[l], spec.tokenizer.sample_lines, spec.data_seed)))
        .collect();
    let multi = train_multilingual_tokenizer(&samples, spec.tokenizer.max_vocab)?;
    let merged = merge_tokenizers(target_tok, &multi);
    let mut pools = Vec::with_capacity(languages.len());
    for l in &languages {
        let lines: Vec<Vec<u32>> = corpora[l].lines().iter().map(|s| encode_routed(&merged, s, false)).collect();
        pools.push(TokenPool::new(&lines, spec.training.seq_len, spec.data_seed)?);
    }
    Ok(AddedData {
        languages,
        most_similar,
        vocab_size: merged.num_ids(),
        pools,
    })
}

struct Outcome {
    eval: EvalResult,
    steps: usize,
    added: Vec<LanguageId>,
}

fn train_and_eval(spec: &ExperimentSpec, ws: &Workspace, rec: &RunRecord) -> Result<Outcome, LabError> {
    let target = &ws.targets[&rec.target];
    let split = target.pool.split(rec.mono_tokens, spec.eval_size)?;
    let tokenizer_id = target.tokenizer.digest();
    let t = &spec.training;

    let (added_tokens, added, vocab) = if rec.multi_tokens > 0 {
        let data = ws.added[&(rec.target.clone(), rec.condition)]
            .as_ref()
            .map_err(|e| LabError::Spec {
                field: "pool".into(),
                message: e.clone(),
            })?;
        let k = data.languages.len();
        let share = rec.multi_tokens / k;
        let mut tokens = Vec::with_capacity(rec.multi_tokens);
        for (i, pool) in data.pools.iter().enumerate() {
            let n = share + if i == data.most_similar { rec.multi_tokens % k } else { 0 };
            tokens.extend(pool.split(n, 0)?.train_tokens);
        }
        (tokens, data.languages.clone(), data.vocab_size)
    } else {
        (Vec::new(), Vec::new(), target.tokenizer.num_ids())
    };

    let epochs = epochs_for_budget(rec.mono_tokens, &t.epoch_policy);
    let mut stream = interleave_blocks(&split.train_tokens, epochs, &added_tokens, t.seq_len, rec.seed ^ STREAM_SALT);

    let (eval, steps) = if let Some(order) = ngram_order(&rec.preset) {
        let model = train_ngram(&stream, order, t.ngram_discount, vocab, t.seq_len)?;
        (evaluate(&model, &split.eval_tokens, &tokenizer_id)?, 0)
    } else {
        let mut sched = TrainingSchedule {
            batch_sequences: t.batch_sequences,
            seq_len: t.seq_len,
            peak_lr: match t.peak_lr {
                Some(lr) => lr,
                None => peak_lr(&rec.preset, false)?,
            },
            warmup_fraction: t.warmup_fraction,
            dropout: t.dropout,
            seed: rec.seed,
            grad_clip: t.grad_clip,
            ..TrainingSchedule::default()
        };
        sched.steps = compute_steps(rec.mono_tokens, epochs, rec.multi_tokens, &sched);
        let mut config = ModelConfig::preset(&rec.preset, vocab, t.seq_len)?;
        config.dropout = t.dropout;
        let mut model = Transformer::<f32>::new(config, rec.seed)?;
        train(&mut model, &mut stream, &sched, None)?;
        (evaluate(&model, &split.eval_tokens, &tokenizer_id)?, sched.steps)
    };
    Ok(Outcome { eval, steps, added })
}

fn run_one(spec: &ExperimentSpec, ws: &Workspace, rec: &RunRecord) -> RunRecord {
    let start = Instant::now();
    let mut out = rec.clone();
    match train_and_eval(spec, ws, rec) {
        Ok(o) => {
            out.status = RunStatus::Ok;
            out.eval_ll_bits = Some(o.eval.mean_log2_prob);
            out.tokenizer_id = Some(o.eval.tokenizer_id);
            out.steps = o.steps;
            out.added_languages = o.added;
        }
        Err(e) => {
            out.status = RunStatus::Failed;
            out.error = Some(e.to_string());
        }
    }
    out.wall_seconds = start.elapsed().as_secs_f64();
    let result = match (out.eval_ll_bits, &out.error) {
        (Some(bits), _) => format!("{bits:.4} bits"),
        (None, e) => format!("failed: {}", e.as_deref().unwrap_or("")),
    };
    log::info!(
        "{} {} {} mono={} multi={} {} seed={} -> {} ({:.1}s)",
        out.run_id,
        out.target,
        out.preset,
        out.mono_tokens,
        out.multi_tokens,
        out.condition,
        out.seed,
        result,
        out.wall_seconds
    );
    out
}

pub(crate) fn eval_of(rec: &RunRecord, eval_size: usize) -> Option<EvalResult> {
    match (rec.status, rec.eval_ll_bits, &rec.tokenizer_id) {
        (RunStatus::Ok, Some(bits), Some(id)) => Some(EvalResult {
            mean_log2_prob: bits,
            token_count: eval_size,
            tokenizer_id: id.clone(),
        }),
        _ => None,
    }
}

/// Seed-averaged baseline evaluation per (target); `None` when any baseline
/// seed is missing or failed.
pub(crate) fn baselines<'a>(
    spec: &ExperimentSpec,
    records: impl Iterator<Item = &'a RunRecord>,
) -> BTreeMap<LanguageId, Option<EvalResult>> {
    let base = spec.resolved_baseline();
    let mut by_target: BTreeMap<LanguageId, BTreeMap<u64, Option<EvalResult>>> = BTreeMap::new();
    for r in records.filter(|r| r.is_baseline_of(&base)) {
        by_target
            .entry(r.target.clone())
            .or_default()
            .insert(r.seed, eval_of(r, spec.eval_size));
    }
    by_target
        .into_iter()
        .map(|(t, seeds)| {
            let evals: Option<Vec<EvalResult>> = if seeds.len() == base.seeds.len() {
                seeds.into_values().collect()
            } else {
                None
            };
            (t, evals.and_then(|e| baseline_ll(&e).ok()))
        })
        .collect()
}

fn with_relative_ll(mut rec: RunRecord, base: Option<&EvalResult>, eval_size: usize) -> RunRecord {
    if let (Some(b), Some(e)) = (base, eval_of(&rec, eval_size)) {
        rec.relative_ll = relative_ll(&e, b).ok().map(|r| r.value);
    }
    rec
}

/// Trains every planned run missing from the store. Baseline runs go first,
/// appended per target once all of that target's baseline seeds are done.
pub fn execute(spec: &ExperimentSpec, store: &ResultStore, opts: &ExecuteOptions) -> Result<ExecuteSummary, LabError> {
    let plan = plan_runs(spec)?;
    let done = store.latest()?;
    let pending: Vec<RunRecord> = plan.iter().filter(|r| !done.contains_key(&r.run_id)).cloned().collect();
    let n_pending = pending.len();
    let mut summary = ExecuteSummary {
        planned: plan.len(),
        already_done: plan.len() - pending.len(),
        ..Default::default()
    };
    if pending.is_empty() {
        return Ok(summary);
    }
    let ws = Workspace::prepare(spec, &pending)?;
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    let started = AtomicUsize::new(0);
    let may_start = || match opts.stop_after {
        Some(limit) => started.fetch_add(1, Ordering::SeqCst) < limit,
        None => true,
    };

    let base_spec = spec.resolved_baseline();
    let (base_runs, rest): (Vec<RunRecord>, Vec<RunRecord>) =
        pending.into_iter().partition(|r| r.is_baseline_of(&base_spec));

    let mut by_target: BTreeMap<LanguageId, Vec<RunRecord>> = BTreeMap::new();
    for r in base_runs {
        by_target.entry(r.target.clone()).or_default().push(r);
    }
    for (target, group) in by_target {
        let results: Vec<Option<RunRecord>> = threads.install(|| {
            group
                .par_iter()
                .map(|r| may_start().then(|| run_one(spec, &ws, r)))
                .collect()
        });
        let finished: Option<Vec<RunRecord>> = results.iter().cloned().collect();
        let Some(finished) = finished else {
            log::info!("stopping before the baseline group of {target} is complete");
            continue;
        };
        let all = store.latest()?;
        let base = baselines(spec, all.values().chain(finished.iter()));
        let b = base.get(&target).and_then(Option::as_ref);
        let finished: Vec<RunRecord> = finished.into_iter().map(|r| with_relative_ll(r, b, spec.eval_size)).collect();
        store.append_all(&finished)?;
        summary.completed += finished.iter().filter(|r| r.status == RunStatus::Ok).count();
        summary.failed += finished.iter().filter(|r| r.status == RunStatus::Failed).count();
    }

    let base = baselines(spec, store.latest()?.values());
    let results: Vec<Result<Option<RunStatus>, LabError>> = threads.install(|| {
        rest.par_iter()
            .map(|r| {
                if !may_start() {
                    return Ok(None);
                }
                let b = base.get(&r.target).and_then(Option::as_ref);
                let rec = with_relative_ll(run_one(spec, &ws, r), b, spec.eval_size);
                store.append(&rec)?;
                Ok(Some(rec.status))
            })
            .collect()
    });
    for r in results {
        match r? {
            Some(RunStatus::Ok) => summary.completed += 1,
            Some(_) => summary.failed += 1,
            None => {}
        }
    }
    // includes runs of a baseline group that was cut short
    summary.not_started = n_pending - summary.completed - summary.failed;
    Ok(summary)
}
