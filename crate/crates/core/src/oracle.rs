//! Exact laws for small instances: product-Poisson cell counts, binomial
//! edge counts and Poisson tails.

use std::sync::{Arc, OnceLock};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{reference_measure, BinnedMeasure, Partition};
use crate::model::ScalingRegime;

/// Independent Poisson cell counts with the given means.
#[derive(Debug, Clone)]
pub struct CellLaw {
    partition: Arc<Partition>,
    means: Vec<f64>,
    lambda: f64,
}

impl CellLaw {
    pub fn new(partition: Arc<Partition>, means: Vec<f64>, lambda: f64) -> Result<Self> {
        if means.len() != partition.len() {
            return Err(Error::InvalidArgument(format!(
                "{} means for {} cells",
                means.len(),
                partition.len()
            )));
        }
        if means.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::InvalidArgument("cell means must be finite and nonnegative".into()));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
        }
        Ok(Self { partition, means, lambda })
    }

    /// Means `λ (μ⊗Q)(A_j)` of the canonical regime.
    pub fn from_regime(regime: &ScalingRegime, partition: &Arc<Partition>) -> Result<Self> {
        let reference = reference_measure(regime, partition)?;
        Self::from_reference(&reference, regime.lambda())
    }

    pub fn from_reference(reference: &BinnedMeasure, lambda: f64) -> Result<Self> {
        let means = reference.masses().iter().map(|m| lambda * m).collect();
        Self::new(reference.partition().clone(), means, lambda)
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

const EXACT_FACTORIAL_LIMIT: u64 = 100_000;

fn factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(EXACT_FACTORIAL_LIMIT as usize);
        let mut acc = 0.0f64;
        t.push(0.0);
        for k in 1..EXACT_FACTORIAL_LIMIT {
            acc += (k as f64).ln();
            t.push(acc);
        }
        t
    })
}

/// `ln n!`, summed exactly below 10⁵ and by Stirling's series above.
pub fn log_factorial(n: u64) -> f64 {
    if n < EXACT_FACTORIAL_LIMIT {
        return factorial_table()[n as usize];
    }
    let x = n as f64;
    // truncation error is below 1/(1260 n^5)
    x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + 1.0 / (12.0 * x)
        - 1.0 / (360.0 * x * x * x)
}

/// `ln P(N = k)` for `N ~ Poisson(mean)`.
pub fn poisson_log_pmf(k: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -mean + k as f64 * mean.ln() - log_factorial(k)
}

/// Cell counts `λ η(A_j)`, which must be (numerically) integral.
pub fn cell_counts(eta: &BinnedMeasure, lambda: f64) -> Result<Vec<u64>> {
    eta.masses()
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let x = lambda * m;
            let k = x.round();
            if (x - k).abs() > 1e-6 * x.abs().max(1.0) || k < 0.0 {
                Err(Error::InvalidArgument(format!(
                    "cell {j}: lambda * eta = {x} is not an integer count"
                )))
            } else {
                Ok(k as u64)
            }
        })
        .collect()
}

fn check_partition(eta: &BinnedMeasure, law: &CellLaw) -> Result<()> {
    if eta.partition().as_ref() != law.partition.as_ref() {
        return Err(Error::IncompatiblePartitions(
            "measure and cell law use different partitions".into(),
        ));
    }
    Ok(())
}

/// `ln P(L1 = η)` under the product-Poisson cell law.
pub fn poisson_cell_log_prob(eta: &BinnedMeasure, law: &CellLaw) -> Result<f64> {
    check_partition(eta, law)?;
    let counts = cell_counts(eta, law.lambda)?;
    Ok(counts
        .iter()
        .zip(&law.means)
        .map(|(&k, &m)| poisson_log_pmf(k, m))
        .sum())
}

/// Lower and upper log-probabilities with every cell mean shifted by `∓ε`
/// inside both the exponential and the power.
pub fn sandwich_bounds(eta: &BinnedMeasure, law: &CellLaw, epsilon: f64) -> Result<(f64, f64)> {
    check_partition(eta, law)?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    let min_mean = law.means.iter().copied().fold(f64::INFINITY, f64::min);
    if epsilon > 0.0 && epsilon >= min_mean {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} must stay below the smallest cell mean {min_mean}"
        )));
    }
    let counts = cell_counts(eta, law.lambda)?;
    let (mut lower, mut upper) = (0.0, 0.0);
    for (&k, &m) in counts.iter().zip(&law.means) {
        let kf = k as f64;
        let lf = log_factorial(k);
        if epsilon == 0.0 {
            let v = poisson_log_pmf(k, m);
            lower += v;
            upper += v;
        } else {
            lower += -m - epsilon + kf * (m - epsilon).ln() - lf;
            upper += -m + epsilon + kf * (m + epsilon).ln() - lf;
        }
    }
    Ok((lower, upper))
}

/// `P(Bin(n_pairs, p) = k)`, evaluated in log space.
pub fn binomial_edge_pmf(k: u64, n_pairs: u64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("p must lie in [0, 1], got {p}")));
    }
    if k > n_pairs {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds n_pairs = {n_pairs}")));
    }
    if p == 0.0 {
        return Ok(if k == 0 { 1.0 } else { 0.0 });
    }
    if p == 1.0 {
        return Ok(if k == n_pairs { 1.0 } else { 0.0 });
    }
    let log_choose = log_factorial(n_pairs) - log_factorial(k) - log_factorial(n_pairs - k);
    Ok((log_choose + k as f64 * p.ln() + (n_pairs - k) as f64 * (-p).ln_1p()).exp())
}

/// `P(N > threshold)` for `N ~ Poisson(mean)`.
pub fn poisson_tail(mean: f64, threshold: i64) -> Result<f64> {
    if !(mean >= 0.0 && mean.is_finite()) {
        return Err(Error::InvalidArgument(format!("mean must be nonnegative, got {mean}")));
    }
    if threshold < 0 {
        return Ok(1.0);
    }
    if mean == 0.0 {
        return Ok(0.0);
    }
    let t = threshold as u64;
    if (t as f64) < mean {
        // complement of a short lower sum
        let cdf: f64 = (0..=t).map(|k| poisson_log_pmf(k, mean).exp()).sum();
        return Ok((1.0 - cdf).max(0.0));
    }
    // upper terms decrease geometrically once k exceeds the mean
    let mut k = t + 1;
    let mut term = poisson_log_pmf(k, mean).exp();
    let mut sum = 0.0;
    while term > 0.0 {
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
        k += 1;
        term *= mean / k as f64;
    }
    Ok(sum.min(1.0))
}

/// `Φ_B(u) = (1 + u) ln(1 + u) − u`.
pub fn bennett_phi(u: f64) -> f64 {
    (1.0 + u) * u.ln_1p() - u
}

/// Bennett's bound `exp(−(λ/a²) Φ_B(a))` on `P(|I| − λ > aλ)`; `a = 1` covers `|I| > 2λ`.
pub fn bennett_bound(lambda: f64, a: f64) -> Result<f64> {
    if !(lambda >= 0.0 && a > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bennett bound needs lambda >= 0 and a > 0, got {lambda}, {a}"
        )));
    }
    Ok((-(lambda / (a * a)) * bennett_phi(a)).exp())
}

#[derive(Debug, Clone, Serialize)]
pub struct TailReport {
    pub lambda: f64,
    pub threshold: i64,
    pub exact_tail: f64,
    pub bennett_bound: f64,
}

/// Exact `P(|I| > 2λ)` alongside the Bennett bound with `a = 1`.
pub fn point_count_tail(lambda: f64) -> Result<TailReport> {
    let threshold = (2.0 * lambda).floor() as i64;
    Ok(TailReport {
        lambda,
        threshold,
        exact_tail: poisson_tail(lambda, threshold)?,
        bennett_bound: bennett_bound(lambda, 1.0)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_cells() -> Arc<Partition> {
        Arc::new(Partition::interval(2).unwrap())
    }

    #[test]
    fn log_factorial_exact_and_stirling_agree() {
        assert_eq!(log_factorial(0), 0.0);
        assert_relative_eq!(log_factorial(5), 120f64.ln(), max_relative = 1e-15);
        // continuity at the switch point
        let below: f64 = log_factorial(EXACT_FACTORIAL_LIMIT - 1) + (EXACT_FACTORIAL_LIMIT as f64).ln();
        assert_relative_eq!(below, log_factorial(EXACT_FACTORIAL_LIMIT), max_relative = 1e-14);
    }

    #[test]
    fn poisson_cell_examples() {
        let part = Arc::new(Partition::interval(1).unwrap());
        let law = CellLaw::new(part.clone(), vec![2.0], 1.0).unwrap();
        let eta = BinnedMeasure::from_masses(part.clone(), vec![3.0]).unwrap();
        assert_relative_eq!(poisson_cell_log_prob(&eta, &law).unwrap(), 0.180447f64.ln(), epsilon = 1e-5);
        let zero = BinnedMeasure::zeros(part);
        assert_relative_eq!(poisson_cell_log_prob(&zero, &law).unwrap(), -2.0);

        let law2 = CellLaw::new(two_cells(), vec![1.5, 2.5], 1.0).unwrap();
        assert_relative_eq!(poisson_cell_log_prob(&BinnedMeasure::zeros(two_cells()), &law2).unwrap(), -4.0);
    }

    #[test]
    fn joint_is_sum_of_marginals() {
        let law = CellLaw::new(two_cells(), vec![1.5, 2.5], 10.0).unwrap();
        let eta = BinnedMeasure::from_masses(two_cells(), vec![0.3, 0.1]).unwrap();
        let joint = poisson_cell_log_prob(&eta, &law).unwrap();
        assert_relative_eq!(joint, poisson_log_pmf(3, 1.5) + poisson_log_pmf(1, 2.5), max_relative = 1e-14);
    }

    #[test]
    fn non_integer_counts_rejected() {
        let law = CellLaw::new(two_cells(), vec![1.0, 1.0], 10.0).unwrap();
        let eta = BinnedMeasure::from_masses(two_cells(), vec![0.25, 0.1]).unwrap();
        assert!(poisson_cell_log_prob(&eta, &law).is_err());
    }

    #[test]
    fn sandwich_examples() {
        let part = Arc::new(Partition::interval(1).unwrap());
        let law = CellLaw::new(part.clone(), vec![2.0], 1.0).unwrap();
        let eta = BinnedMeasure::from_masses(part, vec![3.0]).unwrap();
        let exact = poisson_cell_log_prob(&eta, &law).unwrap();
        assert_eq!(sandwich_bounds(&eta, &law, 0.0).unwrap(), (exact, exact));
        let (lo, hi) = sandwich_bounds(&eta, &law, 0.1).unwrap();
        assert!(lo <= exact && exact <= hi);
        assert_relative_eq!(lo, -2.1 + 3.0 * 1.9f64.ln() - 6f64.ln(), max_relative = 1e-14);
        assert!(sandwich_bounds(&eta, &law, 2.0).is_err());
    }

    #[test]
    fn binomial_examples() {
        assert_relative_eq!(binomial_edge_pmf(5, 10, 0.5).unwrap(), 0.24609375, max_relative = 1e-13);
        assert_relative_eq!(binomial_edge_pmf(0, 7, 0.2).unwrap(), 0.8f64.powi(7), max_relative = 1e-13);
        for (n, p) in [(45u64, 0.3), (1000, 0.01), (3, 0.0), (3, 1.0)] {
            let total: f64 = (0..=n).map(|k| binomial_edge_pmf(k, n, p).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-12, "n {n} p {p}: {total}");
        }
        assert!(binomial_edge_pmf(4, 3, 0.5).is_err());
        assert!(binomial_edge_pmf(1, 3, 1.5).is_err());
    }

    #[test]
    fn poisson_tail_examples() {
        assert_eq!(poisson_tail(3.0, -1).unwrap(), 1.0);
        assert_relative_eq!(poisson_tail(2.0, 4).unwrap(), 0.052653, epsilon = 1e-6);
        let direct = 1.0 - (-2.0f64).exp() * (1.0 + 2.0 + 2.0 + 4.0 / 3.0 + 2.0 / 3.0);
        assert_relative_eq!(poisson_tail(2.0, 4).unwrap(), direct, max_relative = 1e-12);
        assert_eq!(poisson_tail(0.0, 0).unwrap(), 0.0);
        for lambda in [1.0, 5.0, 30.0, 200.0] {
            let r = point_count_tail(lambda).unwrap();
            assert!(r.exact_tail <= r.bennett_bound, "{r:?}");
        }
    }

    #[test]
    fn poisson_pmf_normalizes() {
        for mean in [0.5, 10.0, 80.0] {
            let total: f64 = (0..1000).map(|k| poisson_log_pmf(k, mean).exp()).sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
        // both tail branches agree with 1 - cdf
        for t in [5i64, 10, 15] {
            let cdf: f64 = (0..=t as u64).map(|k| poisson_log_pmf(k, 10.0).exp()).sum();
            assert_relative_eq!(poisson_tail(10.0, t).unwrap(), 1.0 - cdf, max_relative = 1e-9);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sandwich_orders_for_any_epsilon(m in 0.5..20.0f64, k in 0u64..40, frac in 0.0..0.99f64) {
                let part = Arc::new(Partition::interval(1).unwrap());
                let law = CellLaw::new(part.clone(), vec![m], 1.0).unwrap();
                let eta = BinnedMeasure::from_masses(part, vec![k as f64]).unwrap();
                let exact = poisson_cell_log_prob(&eta, &law).unwrap();
                let (lo, hi) = sandwich_bounds(&eta, &law, frac * m).unwrap();
                prop_assert!(lo <= exact + 1e-12 && exact <= hi + 1e-12);
            }

            #[test]
            fn tail_is_monotone_in_threshold(mean in 0.1..50.0f64, t in 0i64..100) {
                prop_assert!(poisson_tail(mean, t + 1).unwrap() <= poisson_tail(mean, t).unwrap() + 1e-15);
            }
        }
    }
}
