//! Pointwise statistics of function-valued samples on mesh nodes.
//!
//! `variance_function` normalises by `1/m` while `covariance_function`
//! normalises by `1/(m-1)`, so lag 0 of the covariance equals the variance
//! times `m/(m-1)`.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::Real;

/// One-pass (Welford) accumulator of nodal mean and variance.
#[derive(Debug, Clone)]
pub struct RunningMoments<T: Real> {
    count: usize,
    mean: DVector<T>,
    m2: DVector<T>,
}

impl<T: Real> RunningMoments<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: DVector::zeros(dim),
            m2: DVector::zeros(dim),
        }
    }

    pub fn push(&mut self, x: &DVector<T>) {
        self.count += 1;
        let n = T::from_count(self.count);
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    /// Population variance (`1/count`); zero before any sample.
    pub fn variance(&self) -> DVector<T> {
        if self.count == 0 {
            return DVector::zeros(self.mean.len());
        }
        let n = T::from_count(self.count);
        self.m2.map(|v| v.max(T::zero()) / n)
    }
}

fn check_samples<T: Real>(samples: &[DVector<T>]) -> Result<usize> {
    if samples.len() < 2 {
        return invalid(format!("at least two samples are required, got {}", samples.len()));
    }
    let n = samples[0].len();
    if samples.iter().any(|s| s.len() != n) {
        return invalid("samples have different lengths");
    }
    Ok(n)
}

pub fn mean_function<T: Real>(samples: &[DVector<T>]) -> Result<DVector<T>> {
    if samples.is_empty() {
        return invalid("no samples");
    }
    let n = samples[0].len();
    if samples.iter().any(|s| s.len() != n) {
        return invalid("samples have different lengths");
    }
    let mut acc = DVector::zeros(n);
    for s in samples {
        acc += s;
    }
    Ok(acc / T::from_count(samples.len()))
}

/// `var(x) = (1/m) sum_i (u_i(x) - mean(x))^2` at every node.
pub fn variance_function<T: Real>(samples: &[DVector<T>]) -> Result<DVector<T>> {
    let n = check_samples(samples)?;
    let mut acc = RunningMoments::new(n);
    for s in samples {
        acc.push(s);
    }
    Ok(acc.variance())
}

/// `cov(x_k, x_{k+lag}) = (1/(m-1)) sum_i (u_i(x_k) - mean)(u_i(x_{k+lag}) - mean)`
/// for `k = 0 .. n - lag`.
pub fn covariance_function<T: Real>(samples: &[DVector<T>], lag: usize) -> Result<DVector<T>> {
    let n = check_samples(samples)?;
    if lag >= n {
        return invalid(format!("lag {lag} out of range for {n} nodes"));
    }
    let mean = mean_function(samples)?;
    let mut out = DVector::zeros(n - lag);
    for s in samples {
        for k in 0..n - lag {
            out[k] += (s[k] - mean[k]) * (s[k + lag] - mean[k + lag]);
        }
    }
    Ok(out / T::from_count(samples.len() - 1))
}

/// `||a - b||_2`.
pub fn l2_discrepancy<T: Real>(a: &DVector<T>, b: &DVector<T>) -> Result<T> {
    if a.len() != b.len() {
        return invalid(format!("length mismatch: {} vs {}", a.len(), b.len()));
    }
    Ok((a - b).norm())
}

#[derive(Debug, Clone)]
pub struct StatsSummary<T: Real> {
    pub mean: DVector<T>,
    pub variance: DVector<T>,
    pub covariance: BTreeMap<usize, DVector<T>>,
}

impl<T: Real> StatsSummary<T> {
    pub fn from_samples(samples: &[DVector<T>], lags: &[usize]) -> Result<Self> {
        let covariance = lags
            .iter()
            .map(|&k| covariance_function(samples, k).map(|c| (k, c)))
            .collect::<Result<_>>()?;
        Ok(Self {
            mean: mean_function(samples)?,
            variance: variance_function(samples)?,
            covariance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn samples(m: usize, n: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m).map(|_| DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0))).collect()
    }

    fn two_pass(s: &[DVector<f64>]) -> DVector<f64> {
        let m = s.len() as f64;
        let n = s[0].len();
        DVector::from_fn(n, |k, _| {
            let mu = s.iter().map(|v| v[k]).sum::<f64>() / m;
            s.iter().map(|v| (v[k] - mu).powi(2)).sum::<f64>() / m
        })
    }

    #[test]
    fn simple_cases() {
        let same = vec![DVector::from_element(3, 1.5); 4];
        assert_eq!(variance_function(&same).unwrap().amax(), 0.0);
        assert_eq!(mean_function(&same).unwrap(), DVector::from_element(3, 1.5));
        let pm = vec![DVector::from_element(1, 2.0), DVector::from_element(1, -2.0)];
        assert_eq!(variance_function(&pm).unwrap()[0], 4.0);
        assert!(variance_function(&pm[..1]).is_err());
        assert!(covariance_function(&pm, 1).is_err());
    }

    #[test]
    fn matches_two_pass() {
        let s = samples(37, 20, 1);
        assert!((variance_function(&s).unwrap() - two_pass(&s)).amax() < 1e-12);
    }

    #[test]
    fn lag_zero_normalisation() {
        let s = samples(10, 6, 2);
        let v = variance_function(&s).unwrap();
        let c = covariance_function(&s, 0).unwrap();
        assert!((c - v * (10.0 / 9.0)).amax() < 1e-12);
    }

    #[test]
    fn correlated_and_independent_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 20000;
        let flips: Vec<DVector<f64>> = (0..m)
            .map(|_| {
                let a = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let b = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                DVector::from_vec(vec![a, 0.0, 0.0, b, 2.0 * a])
            })
            .collect();
        let c = covariance_function(&flips, 3).unwrap();
        assert!(c[0].abs() < 3.0 / (m as f64).sqrt());
        // nodes 0 and 4 are perfectly correlated
        let v = variance_function(&flips).unwrap();
        let c4 = covariance_function(&flips, 4).unwrap()[0];
        let expect = (v[0] * v[4]).sqrt() * m as f64 / (m as f64 - 1.0);
        assert!((c4 - expect).abs() < 1e-10);
    }

    #[test]
    fn lag_pairs_match_direct() {
        let s = samples(15, 8, 4);
        let mu = mean_function(&s).unwrap();
        for lag in 0..8 {
            let c = covariance_function(&s, lag).unwrap();
            assert_eq!(c.len(), 8 - lag);
            for k in 0..8 - lag {
                let direct = s.iter().map(|v| (v[k] - mu[k]) * (v[k + lag] - mu[k + lag])).sum::<f64>() / 14.0;
                assert!((c[k] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn discrepancy() {
        let a = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let mut b = a.clone();
        assert_eq!(l2_discrepancy(&a, &b).unwrap(), 0.0);
        b[1] += 1.0;
        assert_eq!(l2_discrepancy(&a, &b).unwrap(), 1.0);
        assert_eq!(l2_discrepancy(&b, &a).unwrap(), 1.0);
        assert!(l2_discrepancy(&a, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn summary_collects_lags() {
        let s = samples(5, 4, 5);
        let sum = StatsSummary::from_samples(&s, &[0, 2]).unwrap();
        assert_eq!(sum.covariance.len(), 2);
        assert_eq!(sum.covariance[&2].len(), 2);
        assert!(sum.variance.iter().all(|&v| v >= 0.0));
    }

    proptest! {
        #[test]
        fn permutation_and_shift_invariance(seed in 0u64..1000, shift in -50.0f64..50.0, rot in 1usize..9) {
            let s = samples(9, 5, seed);
            let v = variance_function(&s).unwrap();
            let mut p = s.clone();
            p.rotate_left(rot % 9);
            prop_assert!((variance_function(&p).unwrap() - &v).amax() < 1e-12);
            let shifted: Vec<_> = s.iter().map(|x| x.add_scalar(shift)).collect();
            prop_assert!((variance_function(&shifted).unwrap() - &v).amax() < 1e-12 * (1.0 + shift * shift));
            let c = covariance_function(&s, 1).unwrap();
            prop_assert!((covariance_function(&shifted, 1).unwrap() - c).amax() < 1e-12 * (1.0 + shift * shift));
        }

        #[test]
        fn running_moments_nonnegative(seed in 0u64..1000, m in 1usize..40) {
            let s = samples(m, 3, seed);
            let mut acc = RunningMoments::new(3);
            for x in &s { acc.push(x); }
            prop_assert_eq!(acc.count(), m);
            prop_assert!(acc.variance().iter().all(|&v| v >= 0.0));
        }
    }
}
