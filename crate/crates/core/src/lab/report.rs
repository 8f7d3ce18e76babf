use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::execute::{baselines, eval_of};
use super::{Condition, ExperimentSpec, LabError, RunRecord};
use crate::corpus::LanguageId;
use crate::scaling::{compute_priors, fit_anchored, fit_power_law, CurvePoint, PowerLawFit, PriorSet, Tier};
use crate::stats::{mean_ci, pearson, relative_ll, variance_partition, write_partition_table, VariancePartition};
use crate::typology::SimilarityMatrix;

/// A monolingual reference: the seed mean at one budget and the curve
/// anchored through it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub target: LanguageId,
    pub preset: String,
    pub mono_tokens: usize,
    pub log10_tokens: f64,
    pub relative_ll: f64,
    pub n_seeds: usize,
    pub est_log10_tokens: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub tier: Option<Tier>,
    pub fit_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run_id: String,
    pub target: LanguageId,
    pub preset: String,
    pub mono_tokens: usize,
    pub multi_tokens: usize,
    pub condition: Condition,
    pub seed: u64,
    pub relative_ll: f64,
    pub est_log10_tokens: Option<f64>,
    /// `est_log10_tokens - log10(mono_tokens)`.
    pub gain_log10: Option<f64>,
}

/// Mean estimated monolingual size per grid cell with a 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub target: LanguageId,
    pub preset: String,
    pub mono_tokens: usize,
    pub multi_tokens: usize,
    pub condition: Condition,
    pub n: usize,
    pub mean: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    /// Runs scoring at or above the fitted asymptote, left out of the mean.
    pub n_above_asymptote: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub run_id: String,
    pub target: LanguageId,
    pub preset: String,
    pub mono_tokens: usize,
    pub multi_tokens: usize,
    pub condition: Condition,
    pub seed: u64,
    /// Means over the added languages of the Z-scored similarities.
    pub syntactic: f64,
    pub geographic: f64,
    pub lexical: f64,
    pub combined: f64,
    pub gain_log10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub metric: String,
    pub n: usize,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub references: Vec<ReferenceRow>,
    pub runs: Vec<RunRow>,
    pub conditions: Vec<ConditionRow>,
    pub similarity: Vec<SimilarityRow>,
    pub correlations: Vec<CorrelationRow>,
    pub partition: Option<VariancePartition>,
    /// Analyses that could not be computed, with the reason.
    pub notes: Vec<String>,
}

type CurveKey = (LanguageId, String);

/// Converts every successful run to an estimated monolingual token count
/// through curves anchored at the matching monolingual reference. Without
/// `priors`, they are estimated from free fits of curves with at least four
/// budgets.
pub fn report(
    spec: &ExperimentSpec,
    records: &[RunRecord],
    priors: Option<&PriorSet>,
    matrix: Option<&SimilarityMatrix>,
) -> Result<Report, LabError> {
    let latest: BTreeMap<&str, &RunRecord> = records.iter().map(|r| (r.run_id.as_str(), r)).collect();
    let ok: Vec<&RunRecord> = latest.values().copied().filter(|r| eval_of(r, spec.eval_size).is_some()).collect();
    let base = baselines(spec, ok.iter().copied());
    let base_preset = spec.resolved_baseline().preset;

    // relative log-likelihood recomputed from the stored evaluations
    let mut scored: Vec<(&RunRecord, f64)> = Vec::with_capacity(ok.len());
    for r in &ok {
        let b = base
            .get(&r.target)
            .and_then(Option::as_ref)
            .ok_or_else(|| LabError::MissingBaseline {
                target: r.target.clone(),
                preset: base_preset.clone(),
            })?;
        let e = eval_of(r, spec.eval_size).expect("filtered above");
        scored.push((r, relative_ll(&e, b)?.value));
    }

    let mut mono: BTreeMap<CurveKey, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for (r, y) in &scored {
        if r.multi_tokens == 0 {
            mono.entry((r.target.clone(), r.preset.clone()))
                .or_default()
                .entry(r.mono_tokens)
                .or_default()
                .push(*y);
        }
    }
    for (r, _) in &scored {
        if !mono.contains_key(&(r.target.clone(), r.preset.clone())) {
            return Err(LabError::MissingBaseline {
                target: r.target.clone(),
                preset: r.preset.clone(),
            });
        }
    }
    let curves: BTreeMap<&CurveKey, Vec<CurvePoint>> = mono
        .iter()
        .map(|(k, by_budget)| {
            let pts = by_budget
                .iter()
                .map(|(&b, ys)| CurvePoint::new((b as f64).log10(), mean(ys)))
                .collect();
            (k, pts)
        })
        .collect();

    let mut notes = Vec::new();
    let derived;
    let priors = match priors {
        Some(p) => Some(p),
        None => {
            let free: Vec<PowerLawFit> = curves
                .values()
                .filter(|pts| pts.len() >= 4)
                .filter_map(|pts| fit_power_law(pts, None).ok())
                .filter(|f| f.tier == Tier::Free)
                .collect();
            derived = compute_priors(&free).ok();
            if derived.is_none() {
                notes.push("no priors: no curve with four budgets fitted freely".into());
            }
            derived.as_ref()
        }
    };

    let mut fits: BTreeMap<(CurveKey, usize), PowerLawFit> = BTreeMap::new();
    let mut references = Vec::new();
    for ((key, by_budget), pts) in mono.iter().zip(curves.values()) {
        for (&budget, ys) in by_budget {
            let anchor = CurvePoint::new((budget as f64).log10(), mean(ys));
            let mut row = ReferenceRow {
                target: key.0.clone(),
                preset: key.1.clone(),
                mono_tokens: budget,
                log10_tokens: anchor.x,
                relative_ll: anchor.y,
                n_seeds: ys.len(),
                est_log10_tokens: None,
                a: None,
                b: None,
                c: None,
                tier: None,
                fit_error: None,
            };
            match fit_anchored(pts, anchor, priors) {
                Ok(fit) => {
                    row.est_log10_tokens = fit.estimate_tokens(anchor.y).ok();
                    (row.a, row.b, row.c, row.tier) = (Some(fit.a), Some(fit.b), Some(fit.c), Some(fit.tier));
                    fits.insert((key.clone(), budget), fit);
                }
                Err(e) => row.fit_error = Some(e.to_string()),
            }
            references.push(row);
        }
    }

    let mut runs = Vec::with_capacity(scored.len());
    for (r, y) in &scored {
        let est = fits
            .get(&((r.target.clone(), r.preset.clone()), r.mono_tokens))
            .and_then(|f| f.estimate_tokens(*y).ok());
        runs.push(RunRow {
            run_id: r.run_id.clone(),
            target: r.target.clone(),
            preset: r.preset.clone(),
            mono_tokens: r.mono_tokens,
            multi_tokens: r.multi_tokens,
            condition: r.condition,
            seed: r.seed,
            relative_ll: *y,
            est_log10_tokens: est,
            gain_log10: est.map(|e| e - (r.mono_tokens as f64).log10()),
        });
    }
    runs.sort_by(|a, b| {
        (&a.target, &a.preset, a.mono_tokens, a.multi_tokens, a.condition, a.seed)
            .cmp(&(&b.target, &b.preset, b.mono_tokens, b.multi_tokens, b.condition, b.seed))
    });

    let mut cells: BTreeMap<(LanguageId, String, usize, usize, Condition), (Vec<f64>, usize)> = BTreeMap::new();
    for r in &runs {
        let cell = cells
            .entry((r.target.clone(), r.preset.clone(), r.mono_tokens, r.multi_tokens, r.condition))
            .or_default();
        match r.est_log10_tokens {
            Some(e) => cell.0.push(e),
            None => cell.1 += 1,
        }
    }
    let conditions = cells
        .into_iter()
        .map(|((target, preset, mono_tokens, multi_tokens, condition), (xs, above))| {
            let (mean, ci_lo, ci_hi) = match xs.len() {
                0 => (None, None, None),
                1 => (Some(xs[0]), Some(xs[0]), Some(xs[0])),
                _ => {
                    let ci = mean_ci(&xs, 0.95).expect("two or more values");
                    (Some(ci.mean), Some(ci.lo), Some(ci.hi))
                }
            };
            ConditionRow {
                target,
                preset,
                mono_tokens,
                multi_tokens,
                condition,
                n: xs.len() + above,
                mean,
                ci_lo,
                ci_hi,
                n_above_asymptote: above,
            }
        })
        .collect();

    let mut out = Report {
        references,
        runs,
        conditions,
        notes,
        ..Default::default()
    };
    match matrix {
        Some(m) => {
            let added: BTreeMap<&str, &[LanguageId]> =
                ok.iter().map(|r| (r.run_id.as_str(), r.added_languages.as_slice())).collect();
            similarity_tables(m, &added, &mut out)
        }
        None => out.notes.push("no similarity matrix: similarity tables skipped".into()),
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn similarity_tables(m: &SimilarityMatrix, added: &BTreeMap<&str, &[LanguageId]>, out: &mut Report) {
    for r in &out.runs {
        let Some(gain) = r.gain_log10 else { continue };
        if r.multi_tokens == 0 {
            continue;
        }
        let Some(t) = m.index_of(&r.target) else { continue };
        let langs = added.get(r.run_id.as_str()).copied().unwrap_or_default();
        let Some(idx) = langs.iter().map(|l| m.index_of(l)).collect::<Option<Vec<usize>>>() else {
            continue;
        };
        if idx.is_empty() {
            continue;
        }
        let avg = |z: &Vec<Vec<f64>>| idx.iter().map(|&j| z[t][j]).sum::<f64>() / idx.len() as f64;
        out.similarity.push(SimilarityRow {
            run_id: r.run_id.clone(),
            target: r.target.clone(),
            preset: r.preset.clone(),
            mono_tokens: r.mono_tokens,
            multi_tokens: r.multi_tokens,
            condition: r.condition,
            seed: r.seed,
            syntactic: avg(&m.syn_z),
            geographic: avg(&m.geo_z),
            lexical: avg(&m.lex_z),
            combined: avg(&m.combined),
            gain_log10: gain,
        });
    }
    let rows = &out.similarity;
    let gains: Vec<f64> = rows.iter().map(|r| r.gain_log10).collect();
    let cols: [(&str, Vec<f64>); 4] = [
        ("syntactic", rows.iter().map(|r| r.syntactic).collect()),
        ("geographic", rows.iter().map(|r| r.geographic).collect()),
        ("lexical", rows.iter().map(|r| r.lexical).collect()),
        ("combined", rows.iter().map(|r| r.combined).collect()),
    ];
    for (name, xs) in &cols {
        match pearson(xs, &gains) {
            Ok(r) => out.correlations.push(CorrelationRow {
                metric: name.to_string(),
                n: xs.len(),
                r,
            }),
            Err(e) => out.notes.push(format!("correlation {name}: {e}")),
        }
    }
    match variance_partition(&gains, [&cols[0].1, &cols[1].1, &cols[2].1], ["syntactic", "geographic", "lexical"]) {
        Ok(p) => out.partition = Some(p),
        Err(e) => out.notes.push(format!("variance partition: {e}")),
    }
}

/// Writes `references.csv`, `runs.csv`, `conditions.csv`, `similarity.csv`,
/// `correlations.csv`, `notes.txt` and, when computed, `partition.csv`.
pub fn write_report(dir: &Path, report: &Report) -> Result<(), LabError> {
    std::fs::create_dir_all(dir)?;
    fn table<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), LabError> {
        let mut w = csv::WriterBuilder::new().has_headers(!rows.is_empty()).from_path(path)?;
        if rows.is_empty() {
            w.write_record(header)?;
        }
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
    table(&dir.join("references.csv"), &report.references, &[
        "target", "preset", "mono_tokens", "log10_tokens", "relative_ll", "n_seeds", "est_log10_tokens", "a", "b",
        "c", "tier", "fit_error",
    ])?;
    table(&dir.join("runs.csv"), &report.runs, &[
        "run_id", "target", "preset", "mono_tokens", "multi_tokens", "condition", "seed", "relative_ll",
        "est_log10_tokens", "gain_log10",
    ])?;
    table(&dir.join("conditions.csv"), &report.conditions, &[
        "target", "preset", "mono_tokens", "multi_tokens", "condition", "n", "mean", "ci_lo", "ci_hi",
        "n_above_asymptote",
    ])?;
    table(&dir.join("similarity.csv"), &report.similarity, &[
        "run_id", "target", "preset", "mono_tokens", "multi_tokens", "condition", "seed", "syntactic", "geographic",
        "lexical", "combined", "gain_log10",
    ])?;
    table(&dir.join("correlations.csv"), &report.correlations, &["metric", "n", "r"])?;
    if let Some(p) = &report.partition {
        write_partition_table(&dir.join("partition.csv"), p)?;
    }
    std::fs::write(dir.join("notes.txt"), report.notes.join("\n"))?;
    Ok(())
}
