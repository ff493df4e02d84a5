//! Percentile bootstrap with counter-based replicate seeding.
//!
//! Replicate `b` always draws from the ChaCha stream `b` of the run seed, so
//! results do not depend on how replicates are scheduled across threads and
//! two statistics bootstrapped with the same seed see the same resamples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MetaError;
use crate::scalar::Real;

pub const DEFAULT_REPLICATES: usize = 2000;
pub const MIN_REPLICATES: usize = 100;
pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI<T> {
    pub point: T,
    pub lower: T,
    pub upper: T,
    pub level: T,
    pub replicates: usize,
    pub seed: u64,
}

impl<T: Real> BootstrapCI<T> {
    pub fn width(&self) -> T {
        self.upper - self.lower
    }

    pub fn contains(&self, x: T) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Resample indices `0..n` with replacement for replicate `b`.
pub fn resample_indices(n: usize, seed: u64, b: usize, out: &mut Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    out.clear();
    out.extend((0..n).map(|_| rng.random_range(0..n)));
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile_sorted<T: Real>(sorted: &[T], q: f64) -> T {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = T::of(h - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn check(n: usize, replicates: usize, level: f64) -> Result<(), MetaError> {
    if n == 0 {
        return Err(MetaError::Empty);
    }
    if replicates < MIN_REPLICATES {
        return Err(MetaError::TooFewReplicates(replicates));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(MetaError::InvalidLevel(level));
    }
    Ok(())
}

/// Bootstrap distribution of `stat` over resamples of `n` units.
pub fn replicate<T, F>(n: usize, replicates: usize, seed: u64, stat: F) -> Vec<T>
where
    T: Real,
    F: Fn(&[usize]) -> T + Sync,
{
    (0..replicates)
        .into_par_iter()
        .map_init(Vec::new, |buf, b| {
            resample_indices(n, seed, b, buf);
            stat(buf)
        })
        .collect()
}

/// Percentile interval of `stat`, widened if needed so it holds `point`.
pub fn bootstrap_statistic<T, F>(
    n: usize,
    replicates: usize,
    seed: u64,
    level: f64,
    point: T,
    stat: F,
) -> Result<BootstrapCI<T>, MetaError>
where
    T: Real,
    F: Fn(&[usize]) -> T + Sync,
{
    check(n, replicates, level)?;
    let mut dist = replicate(n, replicates, seed, stat);
    dist.sort_by(|a, b| a.partial_cmp(b).expect("finite statistic"));
    let alpha = (1.0 - level) / 2.0;
    let lower = quantile_sorted(&dist, alpha);
    let upper = quantile_sorted(&dist, 1.0 - alpha);
    Ok(BootstrapCI {
        point,
        lower: lower.min(point),
        upper: upper.max(point),
        level: T::of(level),
        replicates,
        seed,
    })
}

fn mean_at<T: Real>(values: &[T], idx: &[usize]) -> T {
    idx.iter().map(|&i| values[i]).sum::<T>() / T::of_usize(idx.len())
}

/// CI for mean per-study correctness, resampling studies with replacement.
/// Entries are 0/1 outcomes or per-study fractions of correct rounds.
pub fn bootstrap_accuracy<T: Real>(
    correctness: &[T],
    replicates: usize,
    seed: u64,
    level: f64,
) -> Result<BootstrapCI<T>, MetaError> {
    check(correctness.len(), replicates, level)?;
    let all: Vec<usize> = (0..correctness.len()).collect();
    let point = mean_at(correctness, &all);
    bootstrap_statistic(correctness.len(), replicates, seed, level, point, |idx| {
        mean_at(correctness, idx)
    })
}

/// Paired CI for `100 * (mean(variant) - mean(reference))` in percentage
/// points, resampling studies jointly for both vectors.
pub fn bootstrap_paired_difference<T: Real>(
    reference: &[T],
    variant: &[T],
    replicates: usize,
    seed: u64,
    level: f64,
) -> Result<BootstrapCI<T>, MetaError> {
    if reference.len() != variant.len() {
        return Err(MetaError::Unpaired {
            reference: reference.len(),
            variant: variant.len(),
        });
    }
    check(reference.len(), replicates, level)?;
    let hundred = T::of(100.0);
    let all: Vec<usize> = (0..reference.len()).collect();
    let point = hundred * (mean_at(variant, &all) - mean_at(reference, &all));
    bootstrap_statistic(reference.len(), replicates, seed, level, point, |idx| {
        hundred * (mean_at(variant, idx) - mean_at(reference, idx))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_correct_is_degenerate_interval() {
        let ci = bootstrap_accuracy(&[1.0f64; 30], 500, 3, 0.95).unwrap();
        assert_eq!((ci.point, ci.lower, ci.upper), (1.0, 1.0, 1.0));
    }

    #[test]
    fn deterministic_in_seed() {
        let v: Vec<f64> = (0..40).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect();
        let a = bootstrap_accuracy(&v, 1000, 11, 0.95).unwrap();
        let b = bootstrap_accuracy(&v, 1000, 11, 0.95).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_accuracy(&v, 1000, 12, 0.95).unwrap();
        assert!(a.lower <= a.point && a.point <= a.upper);
        assert!(c.contains(c.point));
    }

    #[test]
    fn replicate_seeding_is_scheduling_independent() {
        let mut serial = Vec::new();
        let mut buf = Vec::new();
        for b in 0..50 {
            resample_indices(10, 9, b, &mut buf);
            serial.push(buf.iter().sum::<usize>() as f64);
        }
        let parallel = replicate(10, 50, 9, |idx| idx.iter().sum::<usize>() as f64);
        assert_eq!(serial, parallel);
    }

    #[test]
    fn errors() {
        assert_eq!(bootstrap_accuracy::<f64>(&[], 200, 1, 0.95), Err(MetaError::Empty));
        assert_eq!(
            bootstrap_accuracy(&[1.0f64], 99, 1, 0.95),
            Err(MetaError::TooFewReplicates(99))
        );
        assert!(matches!(
            bootstrap_paired_difference(&[1.0f64], &[1.0, 0.0], 200, 1, 0.95),
            Err(MetaError::Unpaired { .. })
        ));
    }

    #[test]
    fn quantile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile_sorted(&s, 0.5), 1.5);
        assert_eq!(quantile_sorted(&s, 0.0), 0.0);
        assert_eq!(quantile_sorted(&s, 1.0), 3.0);
    }
}
