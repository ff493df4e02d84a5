//! Bootstrap intervals, contrasts against the abstract-only baseline,
//! DerSimonian–Laird random-effects pooling and SESOI classification.

pub mod bootstrap;
pub mod forest;
pub mod quantile;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bootstrap::{
    bootstrap_accuracy, bootstrap_paired_difference, bootstrap_statistic, BootstrapCI,
    DEFAULT_LEVEL, DEFAULT_REPLICATES, MIN_REPLICATES,
};

use crate::corpus::VariantTag;
use crate::scalar::Real;

/// Smallest effect size of interest in percentage points.
pub const DEFAULT_SESOI: f64 = 2.0;

/// Lower bound applied to contrast variances. A unit whose paired
/// differences never vary would otherwise get infinite weight.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetaError {
    #[error("no observations")]
    Empty,
    #[error("at least {MIN_REPLICATES} bootstrap replicates required, got {0}")]
    TooFewReplicates(usize),
    #[error("confidence level must be in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("paired vectors differ in length ({reference} vs {variant})")]
    Unpaired { reference: usize, variant: usize },
    #[error("unit {0} has no Variant A reference")]
    MissingReference(String),
    #[error("no effects to pool")]
    NoEffects,
    #[error("effect for unit {unit_id} has non-positive variance {variance}")]
    NonPositiveVariance { unit_id: String, variance: f64 },
    #[error("effects mix contrasts {0} and {1}")]
    MixedContrasts(VariantTag, VariantTag),
}

/// One unit's contrast of a variant against Variant A, in percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate<T> {
    pub unit_id: String,
    pub contrast: VariantTag,
    pub effect: T,
    pub variance: T,
    pub ci_lower: T,
    pub ci_upper: T,
}

impl<T: Real> EffectEstimate<T> {
    /// Effect whose variance is recovered from a 95% interval.
    pub fn from_interval(unit_id: &str, contrast: VariantTag, effect: T, lower: T, upper: T) -> Self {
        Self {
            unit_id: unit_id.to_string(),
            contrast,
            effect,
            variance: variance_from_ci(lower, upper, 0.95),
            ci_lower: lower,
            ci_upper: upper,
        }
    }
}

/// `((upper - lower) / (2 z))^2` for a symmetric normal interval.
pub fn variance_from_ci<T: Real>(lower: T, upper: T, level: f64) -> T {
    let z = T::of(quantile::normal_quantile(0.5 + level / 2.0));
    let se = (upper - lower) / (T::of(2.0) * z);
    se * se
}

/// Paired contrasts of every non-A variant against A for one unit.
///
/// `correctness` maps each variant to per-study correctness over the same
/// studies in the same order.
pub fn build_contrasts<T: Real>(
    unit_id: &str,
    correctness: &BTreeMap<VariantTag, Vec<T>>,
    replicates: usize,
    seed: u64,
    level: f64,
) -> Result<Vec<EffectEstimate<T>>, MetaError> {
    let reference = correctness
        .get(&VariantTag::A)
        .ok_or_else(|| MetaError::MissingReference(unit_id.to_string()))?;
    let floor = T::of(VARIANCE_FLOOR);
    correctness
        .iter()
        .filter(|(tag, _)| **tag != VariantTag::A)
        .map(|(&tag, values)| {
            let ci = bootstrap_paired_difference(reference, values, replicates, seed, level)?;
            Ok(EffectEstimate {
                unit_id: unit_id.to_string(),
                contrast: tag,
                effect: ci.point,
                variance: variance_from_ci(ci.lower, ci.upper, level).max(floor),
                ci_lower: ci.lower,
                ci_upper: ci.upper,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SesoiVerdict {
    PracticallyEquivalent,
    MeaningfulGain,
    MeaningfulLoss,
    Inconclusive,
}

impl SesoiVerdict {
    pub fn mirrored(self) -> Self {
        match self {
            SesoiVerdict::MeaningfulGain => SesoiVerdict::MeaningfulLoss,
            SesoiVerdict::MeaningfulLoss => SesoiVerdict::MeaningfulGain,
            v => v,
        }
    }
}

impl std::fmt::Display for SesoiVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SesoiVerdict::PracticallyEquivalent => "practically equivalent",
            SesoiVerdict::MeaningfulGain => "meaningful gain",
            SesoiVerdict::MeaningfulLoss => "meaningful loss",
            SesoiVerdict::Inconclusive => "inconclusive",
        })
    }
}

/// Equivalent when the interval sits inside `[-sesoi, sesoi]`; a gain or loss
/// when the estimate is beyond the bound and the interval excludes zero.
pub fn classify_sesoi<T: Real>(estimate: T, ci_lower: T, ci_upper: T, sesoi: T) -> SesoiVerdict {
    let zero = T::zero();
    if ci_lower >= -sesoi && ci_upper <= sesoi {
        SesoiVerdict::PracticallyEquivalent
    } else if estimate > sesoi && ci_lower > zero {
        SesoiVerdict::MeaningfulGain
    } else if estimate < -sesoi && ci_upper < zero {
        SesoiVerdict::MeaningfulLoss
    } else {
        SesoiVerdict::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledEffect<T> {
    pub contrast: Option<VariantTag>,
    pub estimate: T,
    pub se: T,
    pub ci_lower: T,
    pub ci_upper: T,
    pub tau2: T,
    pub i2: T,
    pub q_stat: T,
    pub k: usize,
    /// Present only for `k >= 3`.
    pub prediction_lower: Option<T>,
    pub prediction_upper: Option<T>,
    /// Random-effects weights as percentages, in input order.
    pub weights: Vec<T>,
    pub sesoi: T,
    pub verdict: SesoiVerdict,
}

impl<T: Real> PooledEffect<T> {
    pub fn has_prediction_interval(&self) -> bool {
        self.prediction_lower.is_some()
    }

    pub fn reclassify(&mut self, sesoi: T) {
        self.sesoi = sesoi;
        self.verdict = classify_sesoi(self.estimate, self.ci_lower, self.ci_upper, sesoi);
    }
}

pub fn pool_dl<T: Real>(effects: &[EffectEstimate<T>]) -> Result<PooledEffect<T>, MetaError> {
    pool_dl_with_sesoi(effects, T::of(DEFAULT_SESOI))
}

pub fn pool_dl_with_sesoi<T: Real>(
    effects: &[EffectEstimate<T>],
    sesoi: T,
) -> Result<PooledEffect<T>, MetaError> {
    let first = effects.first().ok_or(MetaError::NoEffects)?;
    for e in effects {
        if e.contrast != first.contrast {
            return Err(MetaError::MixedContrasts(first.contrast, e.contrast));
        }
        if !(e.variance > T::zero()) {
            return Err(MetaError::NonPositiveVariance {
                unit_id: e.unit_id.clone(),
                variance: e.variance.as_f64(),
            });
        }
    }
    let y: Vec<T> = effects.iter().map(|e| e.effect).collect();
    let v: Vec<T> = effects.iter().map(|e| e.variance).collect();
    let mut pooled = pool_dl_raw(&y, &v, sesoi)?;
    pooled.contrast = Some(first.contrast);
    Ok(pooled)
}

/// Pooling on bare effect and variance vectors.
pub fn pool_dl_raw<T: Real>(y: &[T], v: &[T], sesoi: T) -> Result<PooledEffect<T>, MetaError> {
    if y.is_empty() {
        return Err(MetaError::NoEffects);
    }
    if y.len() != v.len() {
        return Err(MetaError::Unpaired {
            reference: y.len(),
            variant: v.len(),
        });
    }
    if let Some((i, &bad)) = v.iter().enumerate().find(|(_, x)| !(**x > T::zero())) {
        return Err(MetaError::NonPositiveVariance {
            unit_id: i.to_string(),
            variance: bad.as_f64(),
        });
    }
    let k = y.len();
    let zero = T::zero();
    let one = T::one();
    let w: Vec<T> = v.iter().map(|&x| one / x).collect();
    let sw: T = w.iter().copied().sum();
    let sw2: T = w.iter().map(|&x| x * x).sum();
    let ybar = w.iter().zip(y).map(|(&wi, &yi)| wi * yi).sum::<T>() / sw;
    let q = w
        .iter()
        .zip(y)
        .map(|(&wi, &yi)| wi * (yi - ybar) * (yi - ybar))
        .sum::<T>();
    let df = T::of_usize(k - 1);
    let c = sw - sw2 / sw;
    let tau2 = if k > 1 && c > zero {
        ((q - df) / c).max(zero)
    } else {
        zero
    };
    let ws: Vec<T> = v.iter().map(|&x| one / (x + tau2)).collect();
    let sws: T = ws.iter().copied().sum();
    let estimate = ws.iter().zip(y).map(|(&wi, &yi)| wi * yi).sum::<T>() / sws;
    let se = one / sws.sqrt();
    let z = T::of(quantile::normal_quantile(0.975));
    let i2 = if k > 1 && q > df {
        (q - df) / q * T::of(100.0)
    } else {
        zero
    };
    let (prediction_lower, prediction_upper) = if k >= 3 {
        let t = T::of(quantile::student_t_quantile(0.975, (k - 2) as f64));
        let half = t * (tau2 + se * se).sqrt();
        (Some(estimate - half), Some(estimate + half))
    } else {
        (None, None)
    };
    let ci_lower = estimate - z * se;
    let ci_upper = estimate + z * se;
    let hundred = T::of(100.0);
    Ok(PooledEffect {
        contrast: None,
        estimate,
        se,
        ci_lower,
        ci_upper,
        tau2,
        i2,
        q_stat: q,
        k,
        prediction_lower,
        prediction_upper,
        weights: ws.iter().map(|&x| hundred * x / sws).collect(),
        sesoi,
        verdict: classify_sesoi(estimate, ci_lower, ci_upper, sesoi),
    })
}

/// Pools each contrast separately across all units.
pub fn pool_by_contrast<T: Real>(
    effects: &[EffectEstimate<T>],
    sesoi: T,
) -> Result<BTreeMap<VariantTag, PooledEffect<T>>, MetaError> {
    let mut groups: BTreeMap<VariantTag, Vec<EffectEstimate<T>>> = BTreeMap::new();
    for e in effects {
        groups.entry(e.contrast).or_default().push(e.clone());
    }
    groups
        .into_iter()
        .map(|(tag, group)| Ok((tag, pool_dl_with_sesoi(&group, sesoi)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eff(unit: &str, y: f64, v: f64) -> EffectEstimate<f64> {
        EffectEstimate {
            unit_id: unit.into(),
            contrast: VariantTag::B,
            effect: y,
            variance: v,
            ci_lower: y - 1.96 * v.sqrt(),
            ci_upper: y + 1.96 * v.sqrt(),
        }
    }

    #[test]
    fn single_unit_is_passthrough() {
        let p = pool_dl(&[eff("u", 1.5, 0.25)]).unwrap();
        assert_eq!(p.estimate, 1.5);
        assert_eq!((p.tau2, p.i2, p.q_stat), (0.0, 0.0, 0.0));
        assert!((p.se - 0.5).abs() < 1e-15);
        assert!(!p.has_prediction_interval());
        assert_eq!(p.weights, vec![100.0]);
    }

    #[test]
    fn homogeneous_pair() {
        let p = pool_dl(&[eff("a", 2.0, 1.0), eff("b", 2.0, 1.0)]).unwrap();
        assert_eq!((p.estimate, p.q_stat, p.tau2, p.i2), (2.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(pool_dl::<f64>(&[]), Err(MetaError::NoEffects));
        assert!(matches!(
            pool_dl(&[eff("a", 1.0, 0.0)]),
            Err(MetaError::NonPositiveVariance { .. })
        ));
        let mut other = eff("b", 1.0, 1.0);
        other.contrast = VariantTag::C;
        assert!(matches!(
            pool_dl(&[eff("a", 1.0, 1.0), other]),
            Err(MetaError::MixedContrasts(..))
        ));
    }

    #[test]
    fn sesoi_cases() {
        use SesoiVerdict::*;
        assert_eq!(classify_sesoi(0.28, -1.0, 1.5, 2.0), PracticallyEquivalent);
        assert_eq!(classify_sesoi(-5.55, -9.94, -1.16, 2.0), MeaningfulLoss);
        assert_eq!(classify_sesoi(5.55, 1.16, 9.94, 2.0), MeaningfulGain);
        assert_eq!(classify_sesoi(1.0, -3.0, 5.0, 2.0), Inconclusive);
        assert_eq!(classify_sesoi(-2.5, -4.0, 0.5, 2.0), Inconclusive);
    }

    #[test]
    fn identical_variants_give_zero_effect() {
        let v = vec![1.0, 0.0, 1.0, 1.0, 0.6];
        let mut m = BTreeMap::new();
        m.insert(VariantTag::A, v.clone());
        m.insert(VariantTag::D, v);
        let c = build_contrasts("u", &m, 200, 1, 0.95).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].effect, 0.0);
        assert_eq!(c[0].variance, VARIANCE_FLOOR);
    }

    #[test]
    fn extreme_contrast() {
        let mut m = BTreeMap::new();
        m.insert(VariantTag::A, vec![1.0f64; 10]);
        m.insert(VariantTag::E, vec![0.0f64; 10]);
        let c = build_contrasts("u", &m, 200, 1, 0.95).unwrap();
        assert_eq!(c[0].effect, -100.0);
        assert_eq!(c[0].contrast, VariantTag::E);
    }

    #[test]
    fn missing_reference() {
        let mut m = BTreeMap::new();
        m.insert(VariantTag::B, vec![1.0f64]);
        assert_eq!(
            build_contrasts("u", &m, 200, 1, 0.95),
            Err(MetaError::MissingReference("u".into()))
        );
    }

    #[test]
    fn variance_from_interval_roundtrip() {
        let v = variance_from_ci(-1.959963984540054, 1.959963984540054, 0.95);
        assert!((v - 1.0f64).abs() < 1e-12);
    }
}
