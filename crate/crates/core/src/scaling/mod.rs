//! Relative log-likelihood as a function of log10 dataset size: the
//! `-a x^-b + c` curve, its constrained fitting cascade, inversion to
//! monolingual token estimates, and held-out estimator evaluation.

mod estimator;
mod fit;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LanguageId;

pub use estimator::{evaluate_estimator, EstimatorReport, HeldOutEstimate, HoldoutPolicy};
pub use fit::{fit_anchored, fit_power_law, GRAD_TOLERANCE, MAX_ITERATIONS, SD_LEVELS};

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error("no points to fit")]
    NoPoints,
    #[error("priors are required to fit fewer than four points")]
    MissingPriors,
    #[error("no fits to derive priors from")]
    EmptyInput,
    #[error("priors must come from unconstrained fits, got tier {0}")]
    NonFreeFit(Tier),
    #[error("invalid curve point ({x}, {y}): x must be positive and both finite")]
    InvalidPoint { x: f64, y: f64 },
    #[error("unconstrained fit did not converge")]
    Diverged,
    #[error("score {y} is at or above the asymptote {c}")]
    AboveAsymptote { y: f64, c: f64 },
    #[error("insufficient points: {0}")]
    InsufficientPoints(String),
    #[error("unknown fit tier {0:?}")]
    UnknownTier(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// log10 training tokens.
    pub x: f64,
    /// Relative log-likelihood in bits.
    pub y: f64,
}

impl CurvePoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn validate(&self) -> Result<(), ScalingError> {
        if self.x.is_finite() && self.y.is_finite() && self.x > 0.0 {
            Ok(())
        } else {
            Err(ScalingError::InvalidPoint { x: self.x, y: self.y })
        }
    }
}

/// Cascade level at which a fit converged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tier {
    Free,
    Sd2_5,
    Sd5,
    Sd7_5,
    Sd10,
    FixA,
    FixAb,
}

impl Tier {
    pub const ALL: [Tier; 7] = [
        Tier::Free,
        Tier::Sd2_5,
        Tier::Sd5,
        Tier::Sd7_5,
        Tier::Sd10,
        Tier::FixA,
        Tier::FixAb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Free => "free",
            Tier::Sd2_5 => "sd2.5",
            Tier::Sd5 => "sd5",
            Tier::Sd7_5 => "sd7.5",
            Tier::Sd10 => "sd10",
            Tier::FixA => "fix_a",
            Tier::FixAb => "fix_ab",
        }
    }

    fn for_sd(k: f64) -> Tier {
        match k {
            k if k <= 2.5 => Tier::Sd2_5,
            k if k <= 5.0 => Tier::Sd5,
            k if k <= 7.5 => Tier::Sd7_5,
            _ => Tier::Sd10,
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = ScalingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Tier::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| ScalingError::UnknownTier(s.to_string()))
    }
}

impl Serialize for Tier {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Tier {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub tier: Tier,
    pub anchored_at: Option<CurvePoint>,
    pub sse: f64,
}

impl PowerLawFit {
    pub fn predict(&self, x: f64) -> f64 {
        -self.a * x.powf(-self.b) + self.c
    }

    /// Inverse of [`predict`](Self::predict): the log10 token count whose
    /// predicted score is `y`.
    pub fn estimate_tokens(&self, y: f64) -> Result<f64, ScalingError> {
        estimate_tokens(self, y)
    }
}

pub fn estimate_tokens(fit: &PowerLawFit, y: f64) -> Result<f64, ScalingError> {
    if !(y < fit.c) {
        return Err(ScalingError::AboveAsymptote { y, c: fit.c });
    }
    Ok((fit.a / (fit.c - y)).powf(1.0 / fit.b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSet {
    pub median_a: f64,
    pub median_b: f64,
    pub median_c: f64,
    pub sd_a: f64,
    pub sd_b: f64,
    pub sd_c: f64,
    pub n_source_languages: usize,
}

/// Element-wise medians and population standard deviations of free fits.
pub fn compute_priors(fits: &[PowerLawFit]) -> Result<PriorSet, ScalingError> {
    if fits.is_empty() {
        return Err(ScalingError::EmptyInput);
    }
    if let Some(f) = fits.iter().find(|f| f.tier != Tier::Free) {
        return Err(ScalingError::NonFreeFit(f.tier));
    }
    let col = |get: fn(&PowerLawFit) -> f64| fits.iter().map(get).collect::<Vec<_>>();
    let (a, b, c) = (col(|f| f.a), col(|f| f.b), col(|f| f.c));
    Ok(PriorSet {
        median_a: median(&a),
        median_b: median(&b),
        median_c: median(&c),
        sd_a: population_sd(&a),
        sd_b: population_sd(&b),
        sd_c: population_sd(&c),
        n_source_languages: fits.len(),
    })
}

/// Mean of the two middle values for even lengths.
fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn population_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// One row of a points file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRow {
    pub language: LanguageId,
    pub model_preset: String,
    pub log10_tokens: f64,
    pub relative_ll: f64,
}

/// One row of a fits file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub language: LanguageId,
    pub preset: String,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub tier: Tier,
    pub sse: f64,
}

impl FitRow {
    pub fn new(language: LanguageId, preset: &str, fit: &PowerLawFit) -> Self {
        Self {
            language,
            preset: preset.to_string(),
            a: fit.a,
            b: fit.b,
            c: fit.c,
            tier: fit.tier,
            sse: fit.sse,
        }
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ScalingError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ScalingError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(ScalingError::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn free(a: f64, b: f64, c: f64) -> PowerLawFit {
        PowerLawFit {
            a,
            b,
            c,
            tier: Tier::Free,
            anchored_at: None,
            sse: 0.0,
        }
    }

    #[test]
    fn single_fit_priors() {
        let p = compute_priors(&[free(5.0, 0.4, 2.0)]).unwrap();
        assert_eq!((p.median_a, p.median_b, p.median_c), (5.0, 0.4, 2.0));
        assert_eq!((p.sd_a, p.sd_b, p.sd_c), (0.0, 0.0, 0.0));
        assert_eq!(p.n_source_languages, 1);
    }

    #[test]
    fn median_of_three() {
        let fits = [free(9.0, 0.1, 0.0), free(1.0, 0.2, 1.0), free(2.0, 0.3, 2.0)];
        assert_eq!(compute_priors(&fits).unwrap().median_a, 2.0);
    }

    #[test]
    fn sds_match_two_pass() {
        let fits: Vec<_> = (0..7)
            .map(|i| free(1.0 + i as f64 * 1.3, 0.1 + (i * i) as f64 * 0.01, (i as f64).sin()))
            .collect();
        let p = compute_priors(&fits).unwrap();
        // two-pass: mean first, then squared deviations
        let two_pass = |v: Vec<f64>| {
            let mut mean = 0.0;
            for x in &v {
                mean += x;
            }
            mean /= v.len() as f64;
            let mut ss = 0.0;
            for x in &v {
                ss += (x - mean).powi(2);
            }
            (ss / v.len() as f64).sqrt()
        };
        assert!((p.sd_a - two_pass(fits.iter().map(|f| f.a).collect())).abs() < 1e-12);
        assert!((p.sd_b - two_pass(fits.iter().map(|f| f.b).collect())).abs() < 1e-12);
        assert!((p.sd_c - two_pass(fits.iter().map(|f| f.c).collect())).abs() < 1e-12);
    }

    #[test]
    fn priors_reject_bad_input() {
        assert!(matches!(compute_priors(&[]), Err(ScalingError::EmptyInput)));
        let mut f = free(1.0, 1.0, 1.0);
        f.tier = Tier::FixA;
        assert!(matches!(compute_priors(&[f]), Err(ScalingError::NonFreeFit(Tier::FixA))));
    }

    #[test]
    fn inversion_examples() {
        let f = free(5.0, 0.4, 2.0);
        assert!((f.estimate_tokens(f.predict(7.0)).unwrap() - 7.0).abs() < 1e-9);
        assert!(matches!(f.estimate_tokens(2.0), Err(ScalingError::AboveAsymptote { .. })));
        assert!(f.estimate_tokens(2.5).is_err());
    }

    #[test]
    fn tier_names_round_trip() {
        for t in Tier::ALL {
            assert_eq!(t.as_str().parse::<Tier>().unwrap(), t);
        }
        assert!("sd3".parse::<Tier>().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let lang: LanguageId = "eng_Latn".parse().unwrap();
        let pts = vec![PointRow {
            language: lang.clone(),
            model_preset: "micro".into(),
            log10_tokens: 6.0,
            relative_ll: -0.25,
        }];
        let p = dir.path().join("points.csv");
        write_csv(&p, &pts).unwrap();
        assert_eq!(read_csv::<PointRow>(&p).unwrap(), pts);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("language,model_preset,log10_tokens,relative_ll\n"));

        let fits = vec![FitRow::new(lang, "micro", &free(5.0, 0.4, 2.0))];
        let p = dir.path().join("fits.csv");
        write_csv(&p, &fits).unwrap();
        assert_eq!(read_csv::<FitRow>(&p).unwrap(), fits);
        assert!(std::fs::read_to_string(&p).unwrap().contains(",free,"));
    }

    proptest! {
        #[test]
        fn inversion_is_monotone(a in 0.1f64..10.0, b in 0.05f64..2.0, c in -3.0f64..5.0,
                                 mut ys in proptest::collection::vec(-20.0f64..0.0, 2..40)) {
            let f = free(a, b, c);
            for y in ys.iter_mut() { *y += c - 1e-3; }
            ys.sort_by(f64::total_cmp);
            ys.dedup();
            let xs: Vec<f64> = ys.iter().map(|&y| f.estimate_tokens(y).unwrap()).collect();
            prop_assert!(xs.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
