use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use lingolab::corpus::{clean_lines, dedup_sequences, sample_lines, CleaningConfig, Corpus, LanguageId, TokenPool};
use lingolab::lab::{
    execute, plan_runs, report, similarity_matrix, write_report, ExecuteOptions, ExperimentSpec, ResultStore,
    RunStatus, TrainingSettings,
};
use lingolab::model::{
    compute_steps, epochs_for_budget, evaluate, interleave_blocks, load_checkpoint, peak_lr, save_checkpoint, train,
    write_loss_csv, ModelConfig, TrainingSchedule, Transformer,
};
use lingolab::scaling::{compute_priors, fit_power_law, read_csv, write_csv, CurvePoint, FitRow, PointRow, PriorSet, Tier};
use lingolab::synthlang::{family_feature_vectors, generate_corpus, generate_family, write_genomes, FamilySpec};
use lingolab::tokenize::{train_tokenizer, Tokenizer};
use lingolab::typology::{select_languages, write_feature_vectors, SelectMode};

#[derive(Parser)]
#[command(name = "lingolab", version, about = "Desk-scale multilingual language modeling experiments")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Results store; defaults to results.jsonl next to the config.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean and deduplicate a raw one-line-per-document corpus.
    Prep {
        input: PathBuf,
        output: PathBuf,
        /// Language id such as `eng_Latn`.
        #[arg(long)]
        lang: String,
        #[arg(long, default_value_t = lingolab::corpus::DEFAULT_MIN_BYTES)]
        min_bytes: usize,
        #[arg(long)]
        no_dedup: bool,
    },
    /// Train a byte-level BPE tokenizer on a sample of a corpus.
    Tokenize {
        corpus: PathBuf,
        output: PathBuf,
        #[arg(long)]
        lang: String,
        #[arg(long, default_value_t = 4000)]
        max_vocab: usize,
        #[arg(long, default_value_t = 10_000)]
        sample_lines: usize,
    },
    /// Generate a synthetic language family: corpora, features.csv and genomes.jsonl.
    Synth {
        out_dir: PathBuf,
        /// Whitespace tokens per language.
        #[arg(long, default_value_t = 300_000)]
        words: usize,
        #[arg(long, default_value_t = 1000)]
        vocab: usize,
        #[arg(long, default_value_t = 10)]
        similar: usize,
        #[arg(long, default_value_t = 10)]
        dissimilar: usize,
        #[arg(long, default_value_t = 0.3)]
        mutation: f64,
    },
    /// Print the added languages chosen for a target.
    Select {
        target: String,
        #[arg(long, value_enum, default_value_t = Mode::Most)]
        mode: Mode,
        /// Defaults to the config's k_added.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train one monolingual model and save a checkpoint.
    Train {
        corpus: PathBuf,
        #[arg(long)]
        lang: String,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long, default_value = "micro")]
        preset: String,
        #[arg(long)]
        mono_tokens: usize,
        #[arg(long, default_value_t = 10_000)]
        eval_size: usize,
        /// Overrides the default epoch policy.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score a checkpoint on a corpus's eval split and print the result as JSON.
    Eval {
        checkpoint: PathBuf,
        corpus: PathBuf,
        #[arg(long)]
        lang: String,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        mono_tokens: usize,
        #[arg(long, default_value_t = 10_000)]
        eval_size: usize,
    },
    /// Fit power-law curves to a points CSV.
    Fit {
        points: PathBuf,
        output: PathBuf,
        /// Priors JSON; computed from free fits of 4+ point curves when absent.
        #[arg(long)]
        priors: Option<PathBuf>,
        #[arg(long)]
        priors_out: Option<PathBuf>,
    },
    /// Train every planned run missing from the store.
    RunGrid {
        /// Start at most this many runs.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Write report tables from the store.
    Report {
        out_dir: PathBuf,
        #[arg(long)]
        priors: Option<PathBuf>,
        /// Skip similarity tables (they need every pool tokenizer).
        #[arg(long)]
        no_similarity: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Most,
    Least,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn parse_lang(s: &str) -> Result<LanguageId> {
    let (code, script) = s.split_once('_').with_context(|| format!("language id {s:?} is not <code>_<Script>"))?;
    Ok(LanguageId::new(code, script)?)
}

fn load_spec(cli: &Cli) -> Result<(ExperimentSpec, PathBuf)> {
    let path = cli.config.as_deref().context("--config is required")?;
    let mut spec = ExperimentSpec::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        spec.data_seed = seed;
    }
    spec.validate()?;
    let store = match &cli.store {
        Some(s) => s.clone(),
        None => path.parent().unwrap_or(Path::new(".")).join("results.jsonl"),
    };
    Ok((spec, store))
}

fn load_priors(path: &Path) -> Result<PriorSet> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Prep {
            input,
            output,
            lang,
            min_bytes,
            no_dedup,
        } => {
            let corpus = Corpus::read(input, parse_lang(lang)?)?;
            let before = (corpus.len(), corpus.byte_len());
            let mut out = clean_lines(&corpus, &CleaningConfig::default());
            if !no_dedup {
                out = dedup_sequences(&out, *min_bytes)?;
            }
            out.write(output)?;
            println!("{} -> {} lines, {} -> {} bytes", before.0, out.len(), before.1, out.byte_len());
        }
        Command::Tokenize {
            corpus,
            output,
            lang,
            max_vocab,
            sample_lines: n,
        } => {
            let corpus = Corpus::read(corpus, parse_lang(lang)?)?;
            let tok = train_tokenizer(&sample_lines(&corpus, *n, seed), *max_vocab)?;
            tok.save(output)?;
            println!("{} ids, digest {}", tok.num_ids(), tok.digest());
        }
        Command::Synth {
            out_dir,
            words,
            vocab,
            similar,
            dissimilar,
            mutation,
        } => {
            let spec = FamilySpec {
                vocab_size: *vocab,
                n_similar: *similar,
                n_dissimilar: *dissimilar,
                similar_mutation: *mutation,
                dissimilar_mutation: *mutation,
                ..FamilySpec::default()
            };
            let family = generate_family(&spec, seed)?;
            let corpora = out_dir.join("corpora");
            fs::create_dir_all(&corpora)?;
            for (i, rec) in family.iter().enumerate() {
                let corpus = generate_corpus(rec.language.clone(), &rec.genome, *words, seed.wrapping_add(i as u64))?;
                corpus.write(&corpora.join(format!("{}.txt", rec.language)))?;
            }
            write_feature_vectors(&out_dir.join("features.csv"), &family_feature_vectors(&family))?;
            write_genomes(&out_dir.join("genomes.jsonl"), &family)?;
            println!("{} languages in {}", family.len(), out_dir.display());
        }
        Command::Select { target, mode, k } => {
            let (spec, _) = load_spec(&cli)?;
            let target = parse_lang(target)?;
            let matrix = similarity_matrix(&spec)?;
            let eligible: BTreeSet<LanguageId> = spec.pool.iter().filter(|l| **l != target).cloned().collect();
            let mode = match mode {
                Mode::Most => SelectMode::Most,
                Mode::Least => SelectMode::Least,
            };
            for l in select_languages(&target, &matrix, k.unwrap_or(spec.k_added), mode, &eligible)? {
                let s = matrix.combined_between(&target, &l).unwrap_or(f64::NAN);
                println!("{l}\t{s:.4}");
            }
        }
        Command::Train {
            corpus,
            lang,
            tokenizer,
            preset,
            mono_tokens,
            eval_size,
            epochs,
            output,
        } => {
            let t = TrainingSettings::default();
            let tok = Tokenizer::load(tokenizer)?;
            let corpus = Corpus::read(corpus, parse_lang(lang)?)?;
            let split = TokenPool::from_corpus(&corpus, &tok, t.seq_len, seed)?.split(*mono_tokens, *eval_size)?;
            let epochs = epochs.unwrap_or_else(|| epochs_for_budget(*mono_tokens, &t.epoch_policy));
            let mut sched = TrainingSchedule {
                batch_sequences: t.batch_sequences,
                seq_len: t.seq_len,
                peak_lr: peak_lr(preset, false)?,
                warmup_fraction: t.warmup_fraction,
                dropout: t.dropout,
                seed,
                grad_clip: t.grad_clip,
                ..TrainingSchedule::default()
            };
            sched.steps = compute_steps(*mono_tokens, epochs, 0, &sched);
            sched.eval_interval = (sched.steps / 20).max(1);
            let mut config = ModelConfig::preset(preset, tok.num_ids(), t.seq_len)?;
            config.dropout = t.dropout;
            let mut model = Transformer::<f32>::new(config, seed)?;
            let mut stream = interleave_blocks(&split.train_tokens, epochs, &[], t.seq_len, seed);
            let trace = train(&mut model, &mut stream, &sched, Some(&split.eval_tokens))?;
            save_checkpoint(output, &model, Some(&sched), seed)?;
            write_loss_csv(&output.with_extension("loss.csv"), &trace)?;
            let eval = evaluate(&model, &split.eval_tokens, &tok.digest())?;
            println!("{}", serde_json::to_string_pretty(&eval)?);
        }
        Command::Eval {
            checkpoint,
            corpus,
            lang,
            tokenizer,
            mono_tokens,
            eval_size,
        } => {
            let ckpt = load_checkpoint(checkpoint)?;
            let tok = Tokenizer::load(tokenizer)?;
            let seq_len = ckpt.model.config().max_seq_len;
            // the split must match the one used in training
            let data_seed = cli.seed.unwrap_or(ckpt.seed);
            let corpus = Corpus::read(corpus, parse_lang(lang)?)?;
            let split = TokenPool::from_corpus(&corpus, &tok, seq_len, data_seed)?.split(*mono_tokens, *eval_size)?;
            let eval = evaluate(&ckpt.model, &split.eval_tokens, &tok.digest())?;
            println!("{}", serde_json::to_string_pretty(&eval)?);
        }
        Command::Fit {
            points,
            output,
            priors,
            priors_out,
        } => {
            let rows: Vec<PointRow> = read_csv(points)?;
            let mut curves: BTreeMap<(LanguageId, String), Vec<CurvePoint>> = BTreeMap::new();
            for r in rows {
                curves
                    .entry((r.language, r.model_preset))
                    .or_default()
                    .push(CurvePoint::new(r.log10_tokens, r.relative_ll));
            }
            let priors = match priors {
                Some(p) => Some(load_priors(p)?),
                None => {
                    let free: Vec<_> = curves
                        .values()
                        .filter(|c| c.len() >= 4)
                        .filter_map(|c| fit_power_law(c, None).ok())
                        .filter(|f| f.tier == Tier::Free)
                        .collect();
                    compute_priors(&free).ok()
                }
            };
            if let (Some(p), Some(path)) = (&priors, priors_out) {
                fs::write(path, serde_json::to_string_pretty(p)?)?;
            }
            let mut fits = Vec::new();
            for ((lang, preset), pts) in &curves {
                match fit_power_law(pts, priors.as_ref()) {
                    Ok(f) => fits.push(FitRow::new(lang.clone(), preset, &f)),
                    Err(e) => log::warn!("{lang}/{preset}: {e}"),
                }
            }
            write_csv(output, &fits)?;
            println!("{} of {} curves fitted", fits.len(), curves.len());
        }
        Command::RunGrid { stop_after } => {
            let (spec, store_path) = load_spec(&cli)?;
            let store = ResultStore::open(&store_path)?;
            let opts = ExecuteOptions {
                jobs: cli.jobs.max(1),
                stop_after: *stop_after,
            };
            let s = execute(&spec, &store, &opts)?;
            println!(
                "planned {}, already done {}, completed {}, failed {}, not started {}",
                s.planned, s.already_done, s.completed, s.failed, s.not_started
            );
            // earlier failures count too; they are final
            let latest = store.latest()?;
            let failed = plan_runs(&spec)?
                .iter()
                .filter(|r| latest.get(&r.run_id).is_some_and(|x| x.status == RunStatus::Failed))
                .count();
            if failed > 0 {
                eprintln!("{failed} runs failed; see {}", store_path.display());
                return Ok(ExitCode::from(2));
            }
        }
        Command::Report {
            out_dir,
            priors,
            no_similarity,
        } => {
            let (spec, store_path) = load_spec(&cli)?;
            if !store_path.exists() {
                bail!("no store at {}", store_path.display());
            }
            let records = ResultStore::open(&store_path)?.load()?;
            let priors = priors.as_deref().map(load_priors).transpose()?;
            let matrix = if *no_similarity { None } else { Some(similarity_matrix(&spec)?) };
            let rep = report(&spec, &records, priors.as_ref(), matrix.as_ref())?;
            write_report(out_dir, &rep)?;
            println!(
                "{} reference rows, {} runs, {} condition rows -> {}",
                rep.references.len(),
                rep.runs.len(),
                rep.conditions.len(),
                out_dir.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
