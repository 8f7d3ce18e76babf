//! Pairwise language similarity from typological feature vectors and
//! tokenizer vocabularies, Z-score combination, and added-language
//! selection.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LanguageId;
use crate::tokenize::{vocab_overlap, Tokenizer};

/// Header prefixes that assign a feature column to a family.
pub const SYNTACTIC_PREFIX: &str = "syn_";
pub const GEOGRAPHIC_PREFIX: &str = "geo_";

#[derive(Debug, Error)]
pub enum TypologyError {
    #[error("feature file schema: {0}")]
    Schema(String),
    #[error("unknown language {0}")]
    UnknownLanguage(String),
    #[error("cosine similarity of a zero vector")]
    ZeroVector,
    #[error("vectors have different lengths ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("pool has {0} languages; at least 3 are needed")]
    PoolTooSmall(usize),
    #[error("only {available} eligible languages, {requested} requested")]
    NotEnoughEligible { available: usize, requested: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVectors {
    pub syntactic: BTreeMap<LanguageId, Vec<f64>>,
    pub geographic: BTreeMap<LanguageId, Vec<f64>>,
}

/// Reads `code,script,syn_*..,geo_*..` rows. Empty cells are replaced by
/// the mean of their column over the languages that have a value.
pub fn load_feature_vectors(path: &Path) -> Result<FeatureVectors, TypologyError> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
    let header = reader.headers()?.clone();
    if header.len() < 3 || &header[0] != "code" || &header[1] != "script" {
        return Err(TypologyError::Schema("header must start with code,script".into()));
    }
    let mut family = Vec::new();
    for name in header.iter().skip(2) {
        if name.starts_with(SYNTACTIC_PREFIX) {
            family.push(true);
        } else if name.starts_with(GEOGRAPHIC_PREFIX) {
            family.push(false);
        } else {
            return Err(TypologyError::Schema(format!("column {name:?} is neither syn_ nor geo_")));
        }
    }

    let mut rows: Vec<(LanguageId, Vec<Option<f64>>)> = Vec::new();
    let mut seen = BTreeSet::new();
    for record in reader.records() {
        let record = record?;
        let id = LanguageId::new(&record[0], &record[1])
            .map_err(|_| TypologyError::UnknownLanguage(format!("{}_{}", &record[0], &record[1])))?;
        if !seen.insert(id.clone()) {
            return Err(TypologyError::Schema(format!("duplicate row for {id}")));
        }
        let values = record
            .iter()
            .skip(2)
            .map(|cell| match cell.trim() {
                "" => Ok(None),
                v => v
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .map(Some)
                    .ok_or_else(|| TypologyError::Schema(format!("bad value {v:?} for {id}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((id, values));
    }

    let dims = family.len();
    let mut means = vec![0.0; dims];
    for (j, mean) in means.iter_mut().enumerate() {
        let present: Vec<f64> = rows.iter().filter_map(|(_, v)| v[j]).collect();
        if present.is_empty() {
            return Err(TypologyError::Schema(format!("column {:?} has no values", &header[j + 2])));
        }
        *mean = present.iter().sum::<f64>() / present.len() as f64;
    }
    let mut out = FeatureVectors::default();
    for (id, values) in rows {
        let filled: Vec<(bool, f64)> = values
            .iter()
            .zip(&family)
            .zip(&means)
            .map(|((v, &syn), &m)| (syn, v.unwrap_or(m)))
            .collect();
        out.syntactic
            .insert(id.clone(), filled.iter().filter(|(s, _)| *s).map(|(_, v)| *v).collect());
        out.geographic
            .insert(id, filled.iter().filter(|(s, _)| !*s).map(|(_, v)| *v).collect());
    }
    Ok(out)
}

/// Writes the format [`load_feature_vectors`] reads. Every language needs
/// both vectors, all of the same lengths.
pub fn write_feature_vectors(path: &Path, vectors: &FeatureVectors) -> Result<(), TypologyError> {
    let first = vectors.syntactic.keys().next();
    let dims = |m: &BTreeMap<LanguageId, Vec<f64>>| first.and_then(|l| m.get(l)).map_or(0, Vec::len);
    let (n_syn, n_geo) = (dims(&vectors.syntactic), dims(&vectors.geographic));
    if vectors.syntactic.len() != vectors.geographic.len() {
        return Err(TypologyError::Schema("syntactic and geographic languages differ".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["code".to_string(), "script".to_string()];
    header.extend((0..n_syn).map(|i| format!("{SYNTACTIC_PREFIX}{i}")));
    header.extend((0..n_geo).map(|i| format!("{GEOGRAPHIC_PREFIX}{i}")));
    w.write_record(&header)?;
    for (id, syn) in &vectors.syntactic {
        let geo = vectors
            .geographic
            .get(id)
            .ok_or_else(|| TypologyError::UnknownLanguage(id.to_string()))?;
        if syn.len() != n_syn || geo.len() != n_geo {
            return Err(TypologyError::Schema(format!("vector lengths differ for {id}")));
        }
        let mut row = vec![id.code().to_string(), id.script().to_string()];
        row.extend(syn.iter().chain(geo).map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, TypologyError> {
    if u.len() != v.len() {
        return Err(TypologyError::DimensionMismatch(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let (nu, nv) = (u.iter().map(|a| a * a).sum::<f64>().sqrt(), v.iter().map(|b| b * b).sum::<f64>().sqrt());
    if nu == 0.0 || nv == 0.0 {
        return Err(TypologyError::ZeroVector);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// `ln(1 + shared token count)`.
pub fn lexical_similarity(a: &Tokenizer, b: &Tokenizer) -> f64 {
    (vocab_overlap(a, b) as f64).ln_1p()
}

/// Square matrices indexed by position in `pool`. Z-scored and combined
/// matrices carry 0 on the diagonal, which never enters any statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub pool: Vec<LanguageId>,
    pub syn: Vec<Vec<f64>>,
    pub geo: Vec<Vec<f64>>,
    pub lex: Vec<Vec<f64>>,
    pub syn_z: Vec<Vec<f64>>,
    pub geo_z: Vec<Vec<f64>>,
    pub lex_z: Vec<Vec<f64>>,
    pub combined: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn index_of(&self, lang: &LanguageId) -> Option<usize> {
        self.pool.binary_search(lang).ok()
    }

    pub fn combined_between(&self, a: &LanguageId, b: &LanguageId) -> Option<f64> {
        Some(self.combined[self.index_of(a)?][self.index_of(b)?])
    }
}

/// Z-scores the strict upper triangle (population SD) and mirrors it. A
/// constant metric carries no information and maps to all zeros.
pub fn z_score_pairs(raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = raw.len();
    let pairs: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| raw[i][j]).collect();
    let m = pairs.len() as f64;
    let mean = pairs.iter().sum::<f64>() / m;
    let sd = (pairs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m).sqrt();
    let mut z = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = if sd > 0.0 { (raw[i][j] - mean) / sd } else { 0.0 };
            z[i][j] = v;
            z[j][i] = v;
        }
    }
    z
}

fn pairwise(n: usize, mut f: impl FnMut(usize, usize) -> Result<f64, TypologyError>) -> Result<Vec<Vec<f64>>, TypologyError> {
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = f(i, j)?;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    Ok(m)
}

/// The pool is deduplicated and sorted, so the result does not depend on
/// input order.
pub fn build_similarity_matrix(
    pool: &[LanguageId],
    vectors: &FeatureVectors,
    tokenizers: &BTreeMap<LanguageId, Tokenizer>,
) -> Result<SimilarityMatrix, TypologyError> {
    let pool: Vec<LanguageId> = pool.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if pool.len() < 3 {
        return Err(TypologyError::PoolTooSmall(pool.len()));
    }
    let lookup = |map: &BTreeMap<LanguageId, Vec<f64>>| -> Result<Vec<Vec<f64>>, TypologyError> {
        pool.iter()
            .map(|l| map.get(l).cloned().ok_or_else(|| TypologyError::UnknownLanguage(l.to_string())))
            .collect()
    };
    let (syn_v, geo_v) = (lookup(&vectors.syntactic)?, lookup(&vectors.geographic)?);
    let toks: Vec<&Tokenizer> = pool
        .iter()
        .map(|l| tokenizers.get(l).ok_or_else(|| TypologyError::UnknownLanguage(l.to_string())))
        .collect::<Result<_, _>>()?;

    let n = pool.len();
    let syn = pairwise(n, |i, j| cosine_similarity(&syn_v[i], &syn_v[j]))?;
    let geo = pairwise(n, |i, j| cosine_similarity(&geo_v[i], &geo_v[j]))?;
    let lex = pairwise(n, |i, j| Ok(lexical_similarity(toks[i], toks[j])))?;
    Ok(from_raw(pool, syn, geo, lex))
}

/// Builds the Z-scored and combined matrices from precomputed raw ones.
pub fn from_raw(pool: Vec<LanguageId>, syn: Vec<Vec<f64>>, geo: Vec<Vec<f64>>, lex: Vec<Vec<f64>>) -> SimilarityMatrix {
    let (syn_z, geo_z, lex_z) = (z_score_pairs(&syn), z_score_pairs(&geo), z_score_pairs(&lex));
    let n = pool.len();
    let combined = (0..n)
        .map(|i| (0..n).map(|j| (syn_z[i][j] + geo_z[i][j] + lex_z[i][j]) / 3.0).collect())
        .collect();
    SimilarityMatrix {
        pool,
        syn,
        geo,
        lex,
        syn_z,
        geo_z,
        lex_z,
        combined,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectMode {
    Most,
    Least,
}

/// The `k` eligible languages most (or least) similar to `target` by
/// combined similarity; ties go to the smaller LanguageId.
pub fn select_languages(
    target: &LanguageId,
    m: &SimilarityMatrix,
    k: usize,
    mode: SelectMode,
    eligible: &BTreeSet<LanguageId>,
) -> Result<Vec<LanguageId>, TypologyError> {
    let t = m.index_of(target).ok_or_else(|| TypologyError::UnknownLanguage(target.to_string()))?;
    let mut ranked: Vec<(f64, &LanguageId)> = eligible
        .iter()
        .filter(|l| *l != target)
        .filter_map(|l| m.index_of(l).map(|i| (m.combined[t][i], l)))
        .collect();
    if ranked.len() < k {
        return Err(TypologyError::NotEnoughEligible {
            available: ranked.len(),
            requested: k,
        });
    }
    ranked.sort_by(|(sa, la), (sb, lb)| {
        let by_score = match mode {
            SelectMode::Most => sb.total_cmp(sa),
            SelectMode::Least => sa.total_cmp(sb),
        };
        by_score.then_with(|| la.cmp(lb))
    });
    Ok(ranked.into_iter().take(k).map(|(_, l)| l.clone()).collect())
}
