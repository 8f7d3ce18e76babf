//! Relative log-likelihood, correlation, commonality analysis, paired
//! t-tests and confidence intervals.

pub mod special;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::EvalResult;

pub use special::{t_cdf, t_quantile, t_two_sided_p};

/// Designs whose scaled normal matrix is worse conditioned than this are
/// rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("tokenizer mismatch: {0} vs {1}")]
    TokenizerMismatch(String, String),
    #[error("eval sets differ: {0} vs {1} tokens")]
    EvalSetMismatch(usize, usize),
    #[error("no evaluations given")]
    NoEvals,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("design matrix is singular (condition number {0:.3e})")]
    SingularDesign(f64),
    #[error("differences have zero variance")]
    ZeroVariance,
    #[error("paired t-test needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("confidence interval needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("confidence level {0} outside (0, 1)")]
    InvalidLevel(f64),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeLL {
    /// Bits per token; the model assigns `2^value` times the baseline
    /// likelihood.
    pub value: f64,
    pub model_eval: EvalResult,
    pub baseline_eval: EvalResult,
}

fn check_compatible(a: &EvalResult, b: &EvalResult) -> Result<(), StatsError> {
    if a.tokenizer_id != b.tokenizer_id {
        return Err(StatsError::TokenizerMismatch(
            a.tokenizer_id.clone(),
            b.tokenizer_id.clone(),
        ));
    }
    if a.token_count != b.token_count {
        return Err(StatsError::EvalSetMismatch(a.token_count, b.token_count));
    }
    Ok(())
}

pub fn relative_ll(model_eval: &EvalResult, baseline_eval: &EvalResult) -> Result<RelativeLL, StatsError> {
    check_compatible(model_eval, baseline_eval)?;
    Ok(RelativeLL {
        value: model_eval.mean_log2_prob - baseline_eval.mean_log2_prob,
        model_eval: model_eval.clone(),
        baseline_eval: baseline_eval.clone(),
    })
}

/// Averages several baseline runs into one reference evaluation.
pub fn baseline_ll(evals: &[EvalResult]) -> Result<EvalResult, StatsError> {
    let first = evals.first().ok_or(StatsError::NoEvals)?;
    for e in &evals[1..] {
        check_compatible(first, e)?;
    }
    let mean = evals.iter().map(|e| e.mean_log2_prob).sum::<f64>() / evals.len() as f64;
    Ok(EvalResult { mean_log2_prob: mean, ..first.clone() })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn centered(xs: &[f64]) -> Vec<f64> {
    let m = mean(xs);
    xs.iter().map(|x| x - m).collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::DegenerateInput(format!("lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(StatsError::DegenerateInput(format!("{} points, need 3", x.len())));
    }
    let (dx, dy) = (centered(x), centered(y));
    let sxx: f64 = dx.iter().map(|v| v * v).sum();
    let syy: f64 = dy.iter().map(|v| v * v).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateInput("zero variance".into()));
    }
    let sxy: f64 = dx.iter().zip(&dy).map(|(a, b)| a * b).sum();
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// One named component of a commonality analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariancePartition {
    pub r2_full: f64,
    /// Variance explained only by each predictor, in `labels` order.
    pub unique: Vec<f64>,
    /// Pairwise then three-way shared components.
    pub common: Vec<Component>,
    pub labels: Vec<String>,
    /// Set when some component is negative (a suppression effect).
    pub has_negative: bool,
}

impl VariancePartition {
    /// Every component followed by the full-model R², as `(component, value)` rows.
    pub fn table(&self) -> Vec<Component> {
        let mut rows: Vec<Component> = self
            .labels
            .iter()
            .zip(&self.unique)
            .map(|(l, &v)| Component { name: format!("unique:{l}"), value: v })
            .collect();
        rows.extend(self.common.iter().cloned());
        rows.push(Component { name: "r2_full".into(), value: self.r2_full });
        rows
    }
}

/// Unadjusted R² of an OLS fit with intercept. Inputs are already centered.
fn r_squared(y: &[f64], cols: &[&[f64]]) -> Result<f64, StatsError> {
    let n = y.len();
    let k = cols.len();
    // Unit-norm columns so the condition number reflects collinearity
    // rather than units.
    let mut x = DMatrix::<f64>::zeros(n, k);
    for (j, col) in cols.iter().enumerate() {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..n {
            x[(i, j)] = col[i] / norm;
        }
    }
    let yv = DVector::from_column_slice(y);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &yv;
    let sv = xtx.singular_values();
    let cond = sv.max() / sv.min();
    if !(cond <= MAX_CONDITION) {
        return Err(StatsError::SingularDesign(cond));
    }
    let beta = match xtx.clone().cholesky() {
        Some(ch) => ch.solve(&xty),
        None => xtx
            .pseudo_inverse(f64::EPSILON)
            .map_err(|e| StatsError::DegenerateInput(e.to_string()))?
            * xty,
    };
    let resid = yv.clone() - x * beta;
    Ok(1.0 - resid.norm_squared() / yv.norm_squared())
}

/// Commonality analysis of three predictors.
pub fn variance_partition(y: &[f64], x: [&[f64]; 3], labels: [&str; 3]) -> Result<VariancePartition, StatsError> {
    let n = y.len();
    if n < 5 {
        return Err(StatsError::DegenerateInput(format!("{n} observations, need 5")));
    }
    if x.iter().any(|c| c.len() != n) {
        return Err(StatsError::DegenerateInput("predictor length differs from response".into()));
    }
    let yc = centered(y);
    if yc.iter().all(|&v| v == 0.0) {
        return Err(StatsError::DegenerateInput("response is constant".into()));
    }
    let xc: Vec<Vec<f64>> = x.iter().map(|c| centered(c)).collect();
    for (c, l) in xc.iter().zip(labels) {
        if c.iter().all(|&v| v == 0.0) {
            return Err(StatsError::DegenerateInput(format!("predictor {l} is constant")));
        }
    }
    let r2 = |set: &[usize]| -> Result<f64, StatsError> {
        let cols: Vec<&[f64]> = set.iter().map(|&i| xc[i].as_slice()).collect();
        r_squared(&yc, &cols)
    };
    let (r1, r2_, r3) = (r2(&[0])?, r2(&[1])?, r2(&[2])?);
    let (r12, r13, r23) = (r2(&[0, 1])?, r2(&[0, 2])?, r2(&[1, 2])?);
    let r123 = r2(&[0, 1, 2])?;

    let unique = vec![r123 - r23, r123 - r13, r123 - r12];
    let c12 = r13 + r23 - r3 - r123;
    let c13 = r12 + r23 - r2_ - r123;
    let c23 = r12 + r13 - r1 - r123;
    let c123 = r1 + r2_ + r3 - r12 - r13 - r23 + r123;
    let [a, b, c] = labels;
    let common = vec![
        Component { name: format!("common:{a}+{b}"), value: c12 },
        Component { name: format!("common:{a}+{c}"), value: c13 },
        Component { name: format!("common:{b}+{c}"), value: c23 },
        Component { name: format!("common:{a}+{b}+{c}"), value: c123 },
    ];
    let has_negative = unique.iter().chain(common.iter().map(|c| &c.value)).any(|&v| v < 0.0);
    Ok(VariancePartition {
        r2_full: r123,
        unique,
        common,
        labels: labels.iter().map(|s| s.to_string()).collect(),
        has_negative,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    pub df: usize,
}

/// One-sample t-test of paired differences against zero.
pub fn paired_t_test(diffs: &[f64]) -> Result<TTest, StatsError> {
    let n = diffs.len();
    if n < 2 {
        return Err(StatsError::TooFewPairs(n));
    }
    let m = mean(diffs);
    let var = diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let t = m / (var.sqrt() / (n as f64).sqrt());
    let df = n - 1;
    Ok(TTest { t, p: t_two_sided_p(t, df as f64), df })
}

pub fn bonferroni(p: f64, m: usize) -> f64 {
    assert!(m >= 1, "bonferroni needs m >= 1");
    (p * m as f64).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Two-sided t interval for the mean at confidence `level`.
pub fn mean_ci(xs: &[f64], level: f64) -> Result<MeanCi, StatsError> {
    let n = xs.len();
    if n < 2 {
        return Err(StatsError::TooFewPoints(n));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::InvalidLevel(level));
    }
    let m = mean(xs);
    let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let half = t_quantile(0.5 + level / 2.0, (n - 1) as f64) * sd / (n as f64).sqrt();
    Ok(MeanCi { mean: m, lo: m - half, hi: m + half })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiRow {
    pub condition: String,
    pub n: usize,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl CiRow {
    /// 95% row; a single observation gets a degenerate interval.
    pub fn from_values(condition: &str, xs: &[f64]) -> Option<CiRow> {
        let (mean, ci_lo, ci_hi) = match xs.len() {
            0 => return None,
            1 => (xs[0], xs[0], xs[0]),
            _ => {
                let ci = mean_ci(xs, 0.95).ok()?;
                (ci.mean, ci.lo, ci.hi)
            }
        };
        Some(CiRow { condition: condition.to_string(), n: xs.len(), mean, ci_lo, ci_hi })
    }
}

pub fn write_ci_table(path: &Path, rows: &[CiRow]) -> Result<(), StatsError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_partition_table(path: &Path, partition: &VariancePartition) -> Result<(), StatsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["component", "value"])?;
    for c in partition.table() {
        w.write_record([c.name, c.value.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
