//! Synthetic-family workspaces shared by the integration tests.

#![allow(dead_code)]

use std::path::Path;

use lingolab::corpus::LanguageId;
use lingolab::lab::{DataPaths, ExperimentSpec, OmissionRule, TokenizerSettings, TrainingSettings};
use lingolab::synthlang::{family_feature_vectors, generate_corpus, generate_family, FamilySpec, GenomeRecord};
use lingolab::typology::write_feature_vectors;

/// Writes one corpus per family member plus the feature file under `dir`.
pub fn synth_workspace(dir: &Path, family: &FamilySpec, words: usize, seed: u64) -> Vec<GenomeRecord> {
    let records = generate_family(family, seed).unwrap();
    let corpus_dir = dir.join("corpora");
    std::fs::create_dir_all(&corpus_dir).unwrap();
    for (i, r) in records.iter().enumerate() {
        let c = generate_corpus(r.language.clone(), &r.genome, words, seed.wrapping_add(100 + i as u64)).unwrap();
        c.write(&corpus_dir.join(format!("{}.txt", r.language))).unwrap();
    }
    write_feature_vectors(&dir.join("features.csv"), &family_feature_vectors(&records)).unwrap();
    records
}

pub fn paths(dir: &Path) -> DataPaths {
    DataPaths {
        corpus_dir: dir.join("corpora"),
        features: dir.join("features.csv"),
        tokenizer_dir: dir.join("tokenizers"),
    }
}

/// Spec over the whole family with the first member as the only target.
pub fn base_spec(dir: &Path, records: &[GenomeRecord]) -> ExperimentSpec {
    let pool: Vec<LanguageId> = records.iter().map(|r| r.language.clone()).collect();
    ExperimentSpec {
        target_languages: vec![pool[0].clone()],
        pool,
        mono_budgets: vec![2_000, 4_000, 8_000, 16_000],
        multi_budgets: vec![0, 6_000],
        conditions: vec![lingolab::lab::Condition::Similar, lingolab::lab::Condition::Dissimilar],
        k_added: 3,
        model_presets: vec!["ngram2".into()],
        seeds: vec![0, 1, 2],
        eval_size: 2_000,
        paths: paths(dir),
        omission: OmissionRule::default(),
        baseline: None,
        tokenizer: TokenizerSettings {
            max_vocab: 500,
            sample_lines: 2_000,
        },
        training: TrainingSettings::default(),
        data_seed: 0,
    }
}

pub fn small_family() -> FamilySpec {
    FamilySpec {
        vocab_size: 200,
        n_similar: 3,
        n_dissimilar: 3,
        ..FamilySpec::default()
    }
}
