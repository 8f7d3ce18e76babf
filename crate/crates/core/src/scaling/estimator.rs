use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{compute_priors, fit_power_law, CurvePoint, PowerLawFit, ScalingError};
use crate::corpus::LanguageId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HoldoutPolicy {
    /// Every point is held out once.
    LeaveOneOut,
    /// Only the largest-x point of each language is held out.
    HoldOutLargest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutEstimate {
    pub language: LanguageId,
    pub true_x: f64,
    /// `None` when the held-out score is at or above the fitted asymptote.
    pub estimated_x: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    /// Root-mean-square error in log10 tokens over the scored estimates.
    pub rmse: f64,
    pub estimates: Vec<HeldOutEstimate>,
    pub above_asymptote: usize,
}

/// Held-out accuracy of token-count estimation. Each held-out point is
/// estimated from a cascade fit to the language's remaining points, with
/// priors from the free fits of every *other* language that has at least
/// four points.
pub fn evaluate_estimator(
    all_points: &BTreeMap<LanguageId, Vec<CurvePoint>>,
    policy: HoldoutPolicy,
) -> Result<EstimatorReport, ScalingError> {
    if let Some((lang, _)) = all_points.iter().find(|(_, pts)| pts.len() < 2) {
        return Err(ScalingError::InsufficientPoints(format!("{lang} has fewer than two points")));
    }
    let full_fits: BTreeMap<&LanguageId, PowerLawFit> = all_points
        .iter()
        .filter(|(_, pts)| pts.len() >= 4)
        .filter_map(|(lang, pts)| fit_power_law(pts, None).ok().map(|f| (lang, f)))
        .collect();

    let mut estimates = Vec::new();
    for (lang, pts) in all_points {
        let others: Vec<PowerLawFit> =
            full_fits.iter().filter(|(l, _)| **l != lang).map(|(_, f)| f.clone()).collect();
        let priors = compute_priors(&others).ok();
        let held: Vec<usize> = match policy {
            HoldoutPolicy::LeaveOneOut => (0..pts.len()).collect(),
            HoldoutPolicy::HoldOutLargest => {
                let i = (0..pts.len()).max_by(|&i, &j| pts[i].x.total_cmp(&pts[j].x));
                i.into_iter().collect()
            }
        };
        for h in held {
            let rest: Vec<CurvePoint> = pts.iter().enumerate().filter(|(i, _)| *i != h).map(|(_, p)| *p).collect();
            let fit = fit_power_law(&rest, priors.as_ref())?;
            estimates.push(HeldOutEstimate {
                language: lang.clone(),
                true_x: pts[h].x,
                estimated_x: fit.estimate_tokens(pts[h].y).ok(),
            });
        }
    }
    let errors: Vec<f64> = estimates
        .iter()
        .filter_map(|e| e.estimated_x.map(|x| x - e.true_x))
        .collect();
    if errors.is_empty() {
        return Err(ScalingError::InsufficientPoints("no held-out point could be estimated".into()));
    }
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
    let above_asymptote = estimates.len() - errors.len();
    Ok(EstimatorReport {
        rmse,
        estimates,
        above_asymptote,
    })
}
