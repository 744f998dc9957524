//! Relative entropies and the rate functions of the joint large-deviation
//! principle, in closed form and through the Legendre transform of the
//! limiting log-MGF.
//!
//! All logarithms are natural.

use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::measures::{BinnedMeasure, BinnedPairMeasure, Partition};
use crate::model::{KernelSpec, ScalingRegime};

/// Tolerance of the `‖ω‖ = 1` gate of the mark rate.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Largest `|g|` accepted by the log-MGF evaluations.
pub const MAX_TILT: f64 = 700.0;

/// A rate-function value with its additive decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct RateValue {
    pub value: f64,
    pub terms: Vec<(String, f64)>,
}

impl RateValue {
    fn new(value: f64, terms: Vec<(&str, f64)>) -> Self {
        Self {
            value,
            terms: terms.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn is_infinite(&self) -> bool {
        self.value.is_infinite()
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    /// `{inputs_digest, value, decomposition}`; infinite values are written as `"inf"`.
    pub fn to_json(&self, inputs_digest: Option<&str>) -> Value {
        let mut decomposition = serde_json::Map::new();
        for (k, v) in &self.terms {
            decomposition.insert(k.clone(), extended(*v));
        }
        json!({
            "inputs_digest": inputs_digest,
            "value": extended(self.value),
            "decomposition": decomposition,
        })
    }
}

impl Serialize for RateValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json(None).serialize(s)
    }
}

fn extended(v: f64) -> Value {
    if v == f64::INFINITY {
        json!("inf")
    } else if v == f64::NEG_INFINITY {
        json!("-inf")
    } else {
        json!(v)
    }
}

/// `p ln(p/q)` with `0 ln(0/q) = 0` and `+∞` when `q = 0 < p`.
fn entropy_term(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else if q == 0.0 {
        f64::INFINITY
    } else {
        p * (p / q).ln()
    }
}

fn check_masses(masses: &[f64]) -> Result<()> {
    if let Some(m) = masses.iter().find(|m| !(**m >= 0.0 && m.is_finite())) {
        return Err(Error::InvalidMeasure(format!("mass {m} is not finite and nonnegative")));
    }
    Ok(())
}

fn same_partition(a: &Arc<Partition>, b: &Arc<Partition>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a.as_ref() == b.as_ref() {
        Ok(())
    } else {
        Err(Error::IncompatiblePartitions(
            "measures live on different partitions".into(),
        ))
    }
}

/// `H(p‖q) = Σ p ln(p/q)`.
pub fn relative_entropy(p: &BinnedMeasure, q: &BinnedMeasure) -> Result<f64> {
    same_partition(p.partition(), q.partition())?;
    check_masses(p.masses())?;
    check_masses(q.masses())?;
    Ok(p.masses()
        .iter()
        .zip(q.masses())
        .map(|(&a, &b)| entropy_term(a, b))
        .sum())
}

/// `I₁(ω) = H(ω‖ref)` when `‖ω‖ = 1`, `+∞` otherwise.
pub fn mark_rate(omega: &BinnedMeasure, reference: &BinnedMeasure) -> Result<RateValue> {
    let h = relative_entropy(omega, reference)?;
    if (omega.total() - 1.0).abs() > MASS_TOLERANCE {
        return Ok(RateValue::new(f64::INFINITY, vec![("entropy", h), ("mass", omega.total())]));
    }
    Ok(RateValue::new(h, vec![("entropy", h), ("mass", omega.total())]))
}

/// How the kernel is averaged over a cell pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum KernelAveraging {
    #[default]
    Midpoint,
    /// Gauss–Legendre with `nodes` points per axis, radii weighted by the mark law.
    Quadrature { nodes: usize },
}

/// Cell-averaged kernel `Ψ̄(a, b)` on a partition.
#[derive(Debug, Clone)]
pub struct CellKernel {
    partition: Arc<Partition>,
    values: Vec<f64>,
    averaging: KernelAveraging,
}

impl CellKernel {
    pub fn from_values(partition: Arc<Partition>, values: Vec<f64>) -> Result<Self> {
        let n = partition.len();
        if values.len() != n * n {
            return Err(Error::InvalidKernel(format!("{} values for {n} cells", values.len())));
        }
        for a in 0..n {
            for b in 0..n {
                let v = values[a * n + b];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidKernel(format!("value {v} at ({a}, {b})")));
                }
                if v != values[b * n + a] {
                    return Err(Error::InvalidKernel(format!("not symmetric at ({a}, {b})")));
                }
            }
        }
        Ok(Self {
            partition,
            values,
            averaging: KernelAveraging::Midpoint,
        })
    }

    pub fn from_regime(
        regime: &ScalingRegime,
        partition: &Arc<Partition>,
        averaging: KernelAveraging,
    ) -> Result<Self> {
        let n = partition.len();
        if let KernelSpec::Table { partition: p, values } = regime.kernel() {
            if p.as_ref() == partition.as_ref() {
                let mut k = Self::from_values(partition.clone(), values.clone())?;
                k.averaging = averaging;
                return Ok(k);
            }
        }
        let samples: Vec<Vec<(Vec<f64>, f64, f64)>> = (0..n)
            .map(|c| cell_nodes(regime, partition, c, averaging))
            .collect();
        let mut values = vec![0.0; n * n];
        for a in 0..n {
            for b in a..n {
                let mut acc = 0.0;
                for (x, rx, wx) in &samples[a] {
                    for (y, ry, wy) in &samples[b] {
                        acc += wx * wy * regime.kernel().eval(x, *rx, y, *ry)?;
                    }
                }
                values[a * n + b] = acc;
                values[b * n + a] = acc;
            }
        }
        Ok(Self {
            partition: partition.clone(),
            values,
            averaging,
        })
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.partition.len() + b]
    }

    pub fn averaging(&self) -> KernelAveraging {
        self.averaging
    }

    /// `Ψ̄ ω⊗ω`.
    pub fn pair_reference(&self, omega: &BinnedMeasure) -> Result<BinnedPairMeasure> {
        same_partition(&self.partition, omega.partition())?;
        let n = self.partition.len();
        let w = omega.masses();
        let masses = (0..n * n)
            .map(|i| self.values[i] * w[i / n] * w[i % n])
            .collect();
        BinnedPairMeasure::from_masses(self.partition.clone(), masses)
    }

    /// `I_ω(π) = ½[H(π‖K) + ‖K‖ − ‖π‖]` with `K = Ψ̄ ω⊗ω`.
    pub fn conditional_rate(&self, pi: &BinnedPairMeasure, omega: &BinnedMeasure) -> Result<RateValue> {
        let k = self.pair_reference(omega)?;
        same_partition(pi.partition(), k.partition())?;
        pi.check_symmetric()?;
        check_masses(pi.masses())?;
        let mut entropy = 0.0;
        let mut value = 0.0;
        for (&p, &q) in pi.masses().iter().zip(k.masses()) {
            let h = entropy_term(p, q);
            entropy += h;
            // each summand p ln(p/q) + q − p is nonnegative
            value += if h.is_infinite() { h } else { (h + q - p).max(0.0) };
        }
        Ok(RateValue::new(
            0.5 * value,
            vec![("entropy", entropy), ("reference_mass", k.total()), ("pair_mass", pi.total())],
        ))
    }

    fn check_tilt(&self, g: &[f64]) -> Result<()> {
        let n = self.partition.len();
        if g.len() != n * n {
            return Err(Error::InvalidArgument(format!("tilt has {} entries for {n} cells", g.len())));
        }
        for a in 0..n {
            for b in 0..n {
                let v = g[a * n + b];
                if !(v.abs() <= MAX_TILT) {
                    return Err(Error::Numerical(format!("|g| = {} exceeds {MAX_TILT}", v.abs())));
                }
                if v != g[b * n + a] {
                    return Err(Error::InvalidArgument(format!("tilt not symmetric at ({a}, {b})")));
                }
            }
        }
        Ok(())
    }

    /// `Φ(g) = −½ Σ (1 − e^g) Ψ̄ ω⊗ω` over ordered cell pairs.
    pub fn log_mgf_limit(&self, g: &[f64], omega: &BinnedMeasure) -> Result<f64> {
        self.check_tilt(g)?;
        let k = self.pair_reference(omega)?;
        Ok(0.5 * g.iter().zip(k.masses()).map(|(&t, &q)| t.exp_m1() * q).sum::<f64>())
    }

    /// `(λ²/2) Σ ω(a)ω(b) ln(1 − p(1 − e^g))` with `p = min(1, Ψ̄/λ)`.
    pub fn finite_lambda_log_mgf(&self, g: &[f64], omega: &BinnedMeasure, lambda: f64) -> Result<f64> {
        self.check_tilt(g)?;
        same_partition(&self.partition, omega.partition())?;
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        let n = self.partition.len();
        let w = omega.masses();
        let mut acc = 0.0;
        for i in 0..n * n {
            let p = (self.values[i] / lambda).min(1.0);
            let weight = w[i / n] * w[i % n];
            if weight == 0.0 || p == 0.0 {
                continue;
            }
            let arg = p * g[i].exp_m1();
            if arg <= -1.0 {
                return Err(Error::Numerical(format!(
                    "log of nonpositive argument at pair ({}, {})",
                    i / n,
                    i % n
                )));
            }
            acc += weight * arg.ln_1p();
        }
        Ok(0.5 * lambda * lambda * acc)
    }

    /// `I_ω(π) = sup_g {½⟨g, π⟩ − Φ(g)}`, maximized numerically pair by pair.
    ///
    /// Equivalently `½ sup_g {⟨g, π⟩ − 2Φ(g)}`. This is the placement of the
    /// factor ½ under which the supremum equals [`CellKernel::conditional_rate`].
    pub fn legendre_conditional_rate(&self, pi: &BinnedPairMeasure, omega: &BinnedMeasure) -> Result<RateValue> {
        let k = self.pair_reference(omega)?;
        same_partition(pi.partition(), k.partition())?;
        pi.check_symmetric()?;
        check_masses(pi.masses())?;
        let n = self.partition.len();
        let mut g = vec![0.0; n * n];
        for a in 0..n {
            for b in a..n {
                let i = a * n + b;
                match maximize_pair(pi.masses()[i], k.masses()[i])? {
                    Some(t) => {
                        g[i] = t;
                        g[b * n + a] = t;
                    }
                    None => {
                        return Ok(RateValue::new(f64::INFINITY, vec![("supremum", f64::INFINITY)]));
                    }
                }
            }
        }
        let pairing: f64 = g.iter().zip(pi.masses()).map(|(t, p)| t * p).sum();
        let phi = self.log_mgf_limit(&g, omega)?;
        let value = 0.5 * pairing - phi;
        Ok(RateValue::new(value.max(0.0), vec![("pairing", 0.5 * pairing), ("log_mgf", phi)]))
    }
}

/// Maximizer of `j(g) = ½ g π + ½ (1 − e^g) K` on `[−700, 700]`, or `None`
/// when `j` increases without bound.
fn maximize_pair(pi: f64, k: f64) -> Result<Option<f64>> {
    if pi == 0.0 {
        return Ok(Some(if k == 0.0 { 0.0 } else { -MAX_TILT }));
    }
    if k == 0.0 {
        return Ok(None);
    }
    // j'(g) = ½(π − e^g K) is decreasing; safeguarded Newton on its root
    let slope = |g: f64| pi - g.exp() * k;
    let (mut lo, mut hi) = (-MAX_TILT, MAX_TILT);
    if slope(hi) > 0.0 {
        return Ok(None);
    }
    if slope(lo) < 0.0 {
        return Ok(Some(lo));
    }
    let mut g = 0.0f64;
    let mut last_step = hi - lo;
    for _ in 0..500 {
        let s = slope(g);
        if s > 0.0 {
            lo = g;
        } else {
            hi = g;
        }
        let curvature = g.exp() * k;
        let mut next = g + s / curvature;
        // fall back to bisection when Newton leaves the bracket or stalls
        if !(next > lo && next < hi) || (next - g).abs() > 0.5 * last_step {
            next = 0.5 * (lo + hi);
        }
        last_step = (next - g).abs();
        if last_step <= 1e-15 * g.abs().max(1.0) || hi - lo <= 1e-15 * g.abs().max(1.0) {
            return Ok(Some(next));
        }
        g = next;
    }
    Err(Error::NoConvergence(format!("tilt search for pi = {pi}, K = {k}")))
}

fn cell_nodes(
    regime: &ScalingRegime,
    part: &Partition,
    cell: usize,
    averaging: KernelAveraging,
) -> Vec<(Vec<f64>, f64, f64)> {
    let (mid_x, mid_r) = part.cell_midpoint(cell);
    let nodes = match averaging {
        KernelAveraging::Midpoint => return vec![(mid_x, mid_r, 1.0)],
        KernelAveraging::Quadrature { nodes } => nodes.max(1),
    };
    let b = part.cell_bounds(cell);
    let mut radii = regime.mark_law().quadrature(b.r_lo, b.r_hi, b.r_hi_closed, nodes);
    let total: f64 = radii.iter().map(|(_, w)| w).sum();
    if radii.is_empty() || total <= 0.0 {
        radii = vec![(mid_r, 1.0)];
    } else {
        for (_, w) in radii.iter_mut() {
            *w /= total;
        }
    }
    let positions: Vec<(Vec<f64>, f64)> = if regime.kernel().radius_only() {
        vec![(mid_x, 1.0)]
    } else {
        let mut pts = vec![(Vec::new(), 1.0)];
        for (lo, hi) in b.lower.iter().zip(&b.upper) {
            let rule = crate::quadrature::gauss_legendre_on(*lo, *hi, nodes);
            let len = hi - lo;
            pts = pts
                .into_iter()
                .flat_map(|(x, w): (Vec<f64>, f64)| {
                    rule.iter().map(move |(t, wt)| {
                        let mut y = x.clone();
                        y.push(*t);
                        (y, w * wt / len)
                    })
                })
                .collect();
        }
        pts
    };
    positions
        .iter()
        .flat_map(|(x, wx)| radii.iter().map(move |(r, wr)| (x.clone(), *r, wx * wr)))
        .collect()
}

/// `Ψ̄ ω⊗ω` with the kernel taken at cell midpoints.
pub fn pair_reference(omega: &BinnedMeasure, regime: &ScalingRegime) -> Result<BinnedPairMeasure> {
    CellKernel::from_regime(regime, omega.partition(), KernelAveraging::Midpoint)?.pair_reference(omega)
}

pub fn conditional_rate(
    pi: &BinnedPairMeasure,
    omega: &BinnedMeasure,
    regime: &ScalingRegime,
) -> Result<RateValue> {
    CellKernel::from_regime(regime, omega.partition(), KernelAveraging::Midpoint)?.conditional_rate(pi, omega)
}

pub fn legendre_conditional_rate(
    pi: &BinnedPairMeasure,
    omega: &BinnedMeasure,
    regime: &ScalingRegime,
) -> Result<RateValue> {
    CellKernel::from_regime(regime, omega.partition(), KernelAveraging::Midpoint)?
        .legendre_conditional_rate(pi, omega)
}

pub fn log_mgf_limit(g: &[f64], omega: &BinnedMeasure, regime: &ScalingRegime) -> Result<f64> {
    CellKernel::from_regime(regime, omega.partition(), KernelAveraging::Midpoint)?.log_mgf_limit(g, omega)
}

pub fn finite_lambda_log_mgf(
    g: &[f64],
    omega: &BinnedMeasure,
    regime: &ScalingRegime,
    lambda: f64,
) -> Result<f64> {
    CellKernel::from_regime(regime, omega.partition(), KernelAveraging::Midpoint)?
        .finite_lambda_log_mgf(g, omega, lambda)
}

/// `I(ω, π) = I₁(ω) + I_ω(π)`.
pub fn joint_rate_with(
    omega: &BinnedMeasure,
    pi: &BinnedPairMeasure,
    reference: &BinnedMeasure,
    kernel: &CellKernel,
) -> Result<RateValue> {
    let mark = mark_rate(omega, reference)?;
    let cond = kernel.conditional_rate(pi, omega)?;
    Ok(RateValue::new(
        mark.value + cond.value,
        vec![("mark", mark.value), ("conditional", cond.value)],
    ))
}

pub fn joint_rate(
    omega: &BinnedMeasure,
    pi: &BinnedPairMeasure,
    reference: &BinnedMeasure,
    regime: &ScalingRegime,
) -> Result<RateValue> {
    let kernel = CellKernel::from_regime(regime, omega.partition(), KernelAveraging::Midpoint)?;
    joint_rate_with(omega, pi, reference, &kernel)
}

/// Half-space constraints for [`infimize_rate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// `ω(cells) ≥ threshold`. With `normalized` the infimum runs over
    /// probability vectors and the functional is `H(ω‖ref)`; otherwise it
    /// runs over nonnegative vectors and the functional is the Poisson
    /// count rate `Σ [ω ln(ω/ref) − ω + ref]`.
    MarkMass {
        cells: Vec<usize>,
        threshold: f64,
        normalized: bool,
    },
    /// `‖π‖ ≥ threshold` for the conditional rate against `K`.
    PairMass { threshold: f64 },
}

/// References an infimum is taken against.
#[derive(Debug, Clone, Copy)]
pub enum RateReference<'a> {
    Mark(&'a BinnedMeasure),
    Pair(&'a BinnedPairMeasure),
}

/// `inf { I : constraint }`, found by a one-parameter exponential tilt of the
/// reference (the minimizer of a convex functional over a half-space lies on
/// its boundary as a tilt of the reference).
pub fn infimize_rate(constraint: &Constraint, reference: RateReference<'_>) -> Result<RateValue> {
    match (constraint, reference) {
        (Constraint::MarkMass { cells, threshold, normalized }, RateReference::Mark(rho)) => {
            infimize_mark(cells, *threshold, *normalized, rho)
        }
        (Constraint::PairMass { threshold }, RateReference::Pair(k)) => infimize_pair(*threshold, k),
        _ => Err(Error::InvalidArgument(
            "constraint and reference kinds do not match".into(),
        )),
    }
}

fn check_threshold(c: f64) -> Result<()> {
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::Infeasible(format!("threshold {c} must be finite and nonnegative")));
    }
    Ok(())
}

/// Finds `θ ≥ 0` with `mass(θ) = target` for an increasing `mass`.
fn solve_tilt(target: f64, mass: impl Fn(f64) -> f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while mass(hi) < target {
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::NoConvergence(format!("no tilt reaches mass {target}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn infimize_mark(cells: &[usize], c: f64, normalized: bool, rho: &BinnedMeasure) -> Result<RateValue> {
    check_threshold(c)?;
    let n = rho.len();
    if cells.is_empty() || cells.iter().any(|&j| j >= n) {
        return Err(Error::InvalidArgument(format!("constraint cells {cells:?} invalid for {n} cells")));
    }
    let mut inside = vec![false; n];
    for &j in cells {
        inside[j] = true;
    }
    let m: f64 = (0..n).filter(|&j| inside[j]).map(|j| rho.mass(j)).sum();
    let total = rho.total();
    if normalized {
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Infeasible("normalized constraint needs a probability reference".into()));
        }
        if c > 1.0 + MASS_TOLERANCE {
            return Err(Error::Infeasible(format!("a probability cannot put mass {c} on a set")));
        }
    }
    if m >= c {
        return Ok(RateValue::new(0.0, vec![("reference_mass", m), ("tilt", 0.0)]));
    }
    if m == 0.0 {
        return Ok(RateValue::new(f64::INFINITY, vec![("reference_mass", 0.0)]));
    }
    let tilted = |theta: f64| -> Vec<f64> {
        let raw: Vec<f64> = (0..n)
            .map(|j| if inside[j] { rho.mass(j) * theta.exp() } else { rho.mass(j) })
            .collect();
        if normalized {
            let z: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / z).collect()
        } else {
            raw
        }
    };
    if normalized && (c - 1.0).abs() <= MASS_TOLERANCE {
        // the boundary is the reference conditioned on the set
        let h = -m.ln();
        return Ok(RateValue::new(h, vec![("reference_mass", m), ("tilt", f64::INFINITY)]));
    }
    let theta = solve_tilt(c, |t| (0..n).filter(|&j| inside[j]).map(|j| tilted(t)[j]).sum())?;
    let omega = tilted(theta);
    let value: f64 = omega
        .iter()
        .zip(rho.masses())
        .map(|(&w, &r)| {
            let h = entropy_term(w, r);
            if normalized {
                h
            } else {
                h - w + r
            }
        })
        .sum();
    Ok(RateValue::new(value.max(0.0), vec![("reference_mass", m), ("tilt", theta)]))
}

fn infimize_pair(c: f64, k: &BinnedPairMeasure) -> Result<RateValue> {
    check_threshold(c)?;
    let total = k.total();
    if total >= c {
        return Ok(RateValue::new(0.0, vec![("reference_mass", total), ("tilt", 0.0)]));
    }
    if total == 0.0 {
        return Ok(RateValue::new(f64::INFINITY, vec![("reference_mass", 0.0)]));
    }
    let theta = solve_tilt(c, |t| total * t.exp())?;
    let value: f64 = k
        .masses()
        .iter()
        .map(|&q| {
            let p = q * theta.exp();
            entropy_term(p, q) + q - p
        })
        .sum();
    Ok(RateValue::new(0.5 * value.max(0.0), vec![("reference_mass", total), ("tilt", theta)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn part(n: usize) -> Arc<Partition> {
        Arc::new(Partition::interval(n).unwrap())
    }

    fn measure(masses: &[f64]) -> BinnedMeasure {
        BinnedMeasure::from_masses(part(masses.len()), masses.to_vec()).unwrap()
    }

    fn pairs(n: usize, masses: &[f64]) -> BinnedPairMeasure {
        BinnedPairMeasure::from_masses(part(n), masses.to_vec()).unwrap()
    }

    fn unit_kernel(n: usize, value: f64) -> CellKernel {
        CellKernel::from_values(part(n), vec![value; n * n]).unwrap()
    }

    #[test]
    fn relative_entropy_examples() {
        let q = measure(&[0.25, 0.75]);
        assert_eq!(relative_entropy(&q, &q).unwrap(), 0.0);
        let p = measure(&[0.5, 0.5]);
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert_relative_eq!(relative_entropy(&p, &q).unwrap(), expected, max_relative = 1e-14);
        assert_relative_eq!(expected, 0.14384, epsilon = 1e-5);
        assert_eq!(relative_entropy(&measure(&[1.0, 0.0]), &measure(&[0.0, 1.0])).unwrap(), f64::INFINITY);
    }

    #[test]
    fn mark_rate_examples() {
        let q = measure(&[0.25, 0.75]);
        assert_eq!(mark_rate(&q, &q).unwrap().value, 0.0);
        assert!(mark_rate(&measure(&[1.0, 1.0]), &q).unwrap().is_infinite());
        assert_relative_eq!(mark_rate(&measure(&[0.5, 0.5]), &q).unwrap().value, 0.14384, epsilon = 1e-5);
    }

    #[test]
    fn pair_reference_examples() {
        let k = CellKernel::from_values(part(2), vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        let pr = k.pair_reference(&measure(&[0.3, 0.7])).unwrap();
        for (got, want) in pr.masses().iter().zip([0.09, 0.42, 0.42, 1.96]) {
            assert_relative_eq!(*got, want, max_relative = 1e-14);
        }
        assert_eq!(k.pair_reference(&measure(&[0.0, 0.0])).unwrap().total(), 0.0);
        let c = unit_kernel(3, 2.5).pair_reference(&measure(&[0.2, 0.3, 0.5])).unwrap();
        assert_relative_eq!(c.total(), 2.5, max_relative = 1e-14);
    }

    #[test]
    fn conditional_rate_examples() {
        let k = unit_kernel(1, 2.0);
        let omega = measure(&[1.0]);
        let r = k.conditional_rate(&pairs(1, &[4.0]), &omega).unwrap();
        assert_relative_eq!(r.value, 0.5 * (4.0 * 2f64.ln() + 2.0 - 4.0), max_relative = 1e-14);
        assert_relative_eq!(r.value, 0.38629, epsilon = 1e-5);
        let at_ref = k.conditional_rate(&pairs(1, &[2.0]), &omega).unwrap();
        assert_eq!(at_ref.value, 0.0);

        let k2 = CellKernel::from_values(part(2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let off = pairs(2, &[0.5, 0.1, 0.1, 0.5]);
        assert!(k2.conditional_rate(&off, &measure(&[0.5, 0.5])).unwrap().is_infinite());

        let skew = pairs(2, &[0.5, 0.1, 0.2, 0.5]);
        assert!(matches!(
            k2.conditional_rate(&skew, &measure(&[0.5, 0.5])),
            Err(Error::Asymmetric { .. })
        ));
    }

    #[test]
    fn joint_rate_examples() {
        let k = unit_kernel(2, 2.0);
        let reference = measure(&[0.25, 0.75]);
        let pi_ref = k.pair_reference(&reference).unwrap();
        assert_eq!(joint_rate_with(&reference, &pi_ref, &reference, &k).unwrap().value, 0.0);

        // mark part 0.14384 with ω = (0.5, 0.5); pair part 0.38629 with ‖K‖ = 2, π = 2K
        let omega = measure(&[0.5, 0.5]);
        let pi = pairs(2, &[1.0, 1.0, 1.0, 1.0]);
        let j = joint_rate_with(&omega, &pi, &reference, &k).unwrap();
        assert_relative_eq!(j.value, 0.14384 + 0.38629, epsilon = 2e-5);
        assert_eq!(j.value, j.term("mark").unwrap() + j.term("conditional").unwrap());
    }

    #[test]
    fn log_mgf_examples() {
        let k = unit_kernel(1, 2.0);
        let omega = measure(&[1.0]);
        assert_eq!(k.log_mgf_limit(&[0.0], &omega).unwrap(), 0.0);
        assert_relative_eq!(k.log_mgf_limit(&[2f64.ln()], &omega).unwrap(), 1.0, max_relative = 1e-14);
        let c = -0.7;
        assert_relative_eq!(
            k.log_mgf_limit(&[c], &omega).unwrap(),
            -0.5 * (1.0 - f64::exp(c)) * 2.0,
            max_relative = 1e-14
        );
        assert!(k.log_mgf_limit(&[701.0], &omega).is_err());
    }

    #[test]
    fn finite_lambda_log_mgf_examples() {
        let omega = measure(&[1.0]);
        let lambda = 10.0;
        let half = unit_kernel(1, 5.0);
        let got = half.finite_lambda_log_mgf(&[2f64.ln()], &omega, lambda).unwrap();
        assert_relative_eq!(got, 0.5 * lambda * lambda * 1.5f64.ln(), max_relative = 1e-14);
        assert_eq!(half.finite_lambda_log_mgf(&[0.0], &omega, lambda).unwrap(), 0.0);

        let k = CellKernel::from_values(part(2), vec![1.0, 3.0, 3.0, 0.5]).unwrap();
        let omega = measure(&[0.4, 0.6]);
        let g = [0.3, -0.2, -0.2, 0.8];
        let limit = k.log_mgf_limit(&g, &omega).unwrap();
        let scaled = k.finite_lambda_log_mgf(&g, &omega, 1e3).unwrap() / 1e3;
        assert!(((scaled - limit) / limit).abs() < 0.01);
    }

    #[test]
    fn legendre_matches_closed_form() {
        let k = unit_kernel(1, 2.0);
        let omega = measure(&[1.0]);
        let pi = pairs(1, &[4.0]);
        let l = k.legendre_conditional_rate(&pi, &omega).unwrap();
        assert_relative_eq!(l.value, 0.38629436111989, epsilon = 1e-6);
        let at_ref = k.legendre_conditional_rate(&pairs(1, &[2.0]), &omega).unwrap();
        assert!(at_ref.value.abs() < 1e-12);
        let k2 = CellKernel::from_values(part(2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let off = pairs(2, &[0.5, 0.1, 0.1, 0.5]);
        assert!(k2.legendre_conditional_rate(&off, &measure(&[0.5, 0.5])).unwrap().is_infinite());
    }

    #[test]
    fn other_half_placements_do_not_reproduce_closed_form() {
        // single cell, K = 2, ‖π‖ = 4; the closed form is 0.386294
        let (pi, k) = (4.0f64, 2.0f64);
        let closed = 0.5 * (pi * (pi / k).ln() + k - pi);
        let phi = |g: f64| -0.5 * (1.0 - g.exp()) * k;
        let sup = |f: &dyn Fn(f64) -> f64| {
            (-20000..20000).map(|i| f(i as f64 * 1e-3)).fold(f64::NEG_INFINITY, f64::max)
        };
        let literal = 0.5 * sup(&|g| g * pi - phi(g));
        let no_outer = sup(&|g| g * pi - phi(g));
        let chosen = sup(&|g| 0.5 * g * pi - phi(g));
        assert!((literal - closed).abs() > 0.1, "literal {literal}");
        assert!((no_outer - closed).abs() > 0.1, "no_outer {no_outer}");
        assert!((chosen - closed).abs() < 1e-6, "chosen {chosen}");
    }

    #[test]
    fn cramer_infimum() {
        let rho = measure(&[0.4, 0.6]);
        let r = infimize_rate(
            &Constraint::MarkMass { cells: vec![0], threshold: 0.8, normalized: false },
            RateReference::Mark(&rho),
        )
        .unwrap();
        assert_relative_eq!(r.value, 0.4 - 0.8 + 0.8 * 2f64.ln(), max_relative = 1e-9);
        assert_relative_eq!(r.value, 0.15452, epsilon = 1e-5);

        // brute grid search over the cell value
        let grid = (0..=40_000)
            .map(|i| 0.8 + i as f64 * 1e-4)
            .map(|x| x * (x / 0.4).ln() - x + 0.4)
            .fold(f64::INFINITY, f64::min);
        assert!((grid - r.value).abs() < 1e-9);

        let norm = infimize_rate(
            &Constraint::MarkMass { cells: vec![0], threshold: 0.8, normalized: true },
            RateReference::Mark(&rho),
        )
        .unwrap();
        let expected = 0.8 * 2f64.ln() + 0.2 * (0.2f64 / 0.6).ln();
        assert_relative_eq!(norm.value, expected, max_relative = 1e-9);

        let satisfied = infimize_rate(
            &Constraint::MarkMass { cells: vec![1], threshold: 0.5, normalized: true },
            RateReference::Mark(&rho),
        )
        .unwrap();
        assert_eq!(satisfied.value, 0.0);
        assert!(infimize_rate(
            &Constraint::MarkMass { cells: vec![0], threshold: 1.5, normalized: true },
            RateReference::Mark(&rho),
        )
        .is_err());
    }

    #[test]
    fn pair_infimum_matches_single_cell_closed_form() {
        let k = pairs(1, &[1.0]);
        let c = 1.325;
        let r = infimize_rate(&Constraint::PairMass { threshold: c }, RateReference::Pair(&k)).unwrap();
        assert_relative_eq!(r.value, 0.5 * (c * c.ln() + 1.0 - c), max_relative = 1e-9);
        let two = pairs(2, &[0.3, 0.2, 0.2, 0.3]);
        let r2 = infimize_rate(&Constraint::PairMass { threshold: 2.0 }, RateReference::Pair(&two)).unwrap();
        assert_relative_eq!(r2.value, 0.5 * (2.0 * 2f64.ln() + 1.0 - 2.0), max_relative = 1e-9);
    }

    #[test]
    fn infimum_is_monotone_in_threshold() {
        let rho = measure(&[0.4, 0.6]);
        let mut last = 0.0;
        for c in [0.3, 0.5, 0.7, 0.9, 1.2, 2.0] {
            let r = infimize_rate(
                &Constraint::MarkMass { cells: vec![0], threshold: c, normalized: false },
                RateReference::Mark(&rho),
            )
            .unwrap();
            assert!(r.value >= last);
            last = r.value;
        }
    }

    #[test]
    fn lower_semicontinuity_probes() {
        let k = CellKernel::from_values(part(2), vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let omega = measure(&[1.0, 1.0]);
        let limit = pairs(2, &[1.5, 0.0, 0.0, 0.5]);
        let at_limit = k.conditional_rate(&limit, &omega).unwrap().value;
        for step in 1..200 {
            let e = 1.0 / step as f64;
            // support-shrinking: mass on the forbidden pair vanishes in the limit
            let leaking = pairs(2, &[1.5, e, e, 0.5]);
            assert!(k.conditional_rate(&leaking, &omega).unwrap().value >= at_limit);
            // mass on an allowed pair vanishes
            let fading = pairs(2, &[1.5, 0.0, 0.0, 0.5 * e]);
            let faded = k.conditional_rate(&fading, &omega).unwrap().value;
            let zero = k.conditional_rate(&pairs(2, &[1.5, 0.0, 0.0, 0.0]), &omega).unwrap().value;
            if step > 150 {
                assert!((faded - zero).abs() < 0.02);
            }
        }
    }

    #[test]
    fn rate_json_writes_infinity_as_text() {
        let r = RateValue::new(f64::INFINITY, vec![("entropy", 1.0)]);
        let v = r.to_json(Some("abc"));
        assert_eq!(v["value"], "inf");
        assert_eq!(v["inputs_digest"], "abc");
    }

    #[test]
    fn quadrature_kernel_averages_over_radius() {
        use crate::model::{MarkLaw, PositionLaw};
        let regime = ScalingRegime::new(
            100.0,
            PositionLaw::Uniform,
            MarkLaw::Uniform { r_min: 0.0, r_max: 1.0 },
            KernelSpec::User(Arc::new(|_: &[f64], rx: f64, _: &[f64], ry: f64| rx * ry)),
            None,
        )
        .unwrap();
        let p = Arc::new(Partition::new(vec![vec![0.0, 1.0]], vec![0.0, 1.0]).unwrap());
        let mid = CellKernel::from_regime(&regime, &p, KernelAveraging::Midpoint).unwrap();
        let quad = CellKernel::from_regime(&regime, &p, KernelAveraging::Quadrature { nodes: 4 }).unwrap();
        assert_relative_eq!(mid.value(0, 0), 0.25);
        assert_relative_eq!(quad.value(0, 0), 0.25, max_relative = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn probability(n: usize) -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(0.0..1.0f64, n).prop_filter_map("positive total", |v| {
                let t: f64 = v.iter().sum();
                (t > 1e-6).then(|| v.iter().map(|x| x / t).collect())
            })
        }

        fn symmetric(n: usize) -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(0.0..3.0f64, n * n).prop_map(move |mut v| {
                for a in 0..n {
                    for b in 0..a {
                        v[a * n + b] = v[b * n + a];
                    }
                }
                v
            })
        }

        fn instance() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
            (1usize..=4).prop_flat_map(|n| (Just(n), symmetric(n), prop::collection::vec(0.05..1.0f64, n), symmetric(n)))
        }

        proptest! {
            #[test]
            fn entropy_is_nonnegative_and_zero_on_diagonal(p in probability(5), q in probability(5)) {
                let (p, q) = (measure(&p), measure(&q));
                let h = relative_entropy(&p, &q).unwrap();
                prop_assert!(h >= -1e-12);
                prop_assert!(relative_entropy(&p, &p).unwrap().abs() < 1e-15);
            }

            #[test]
            fn entropy_is_permutation_invariant(p in probability(4), q in probability(4), rot in 0usize..4) {
                let perm = |v: &[f64]| (0..4).map(|i| v[(i + rot) % 4]).collect::<Vec<_>>();
                let h = relative_entropy(&measure(&p), &measure(&q)).unwrap();
                let hp = relative_entropy(&measure(&perm(&p)), &measure(&perm(&q))).unwrap();
                prop_assert!((h - hp).abs() <= 1e-12 * h.abs().max(1.0));
            }

            #[test]
            fn legendre_equals_closed_form((n, kv, w, pv) in instance()) {
                let kernel = CellKernel::from_values(part(n), kv).unwrap();
                let omega = measure(&w);
                let pi = pairs(n, &pv);
                let closed = kernel.conditional_rate(&pi, &omega).unwrap();
                let leg = kernel.legendre_conditional_rate(&pi, &omega).unwrap();
                if closed.is_infinite() {
                    prop_assert!(leg.is_infinite());
                } else {
                    prop_assert!((closed.value - leg.value).abs() <= 1e-6, "{} vs {}", closed.value, leg.value);
                }
            }

            #[test]
            fn conditional_rate_nonnegative_zero_at_reference((n, kv, w, pv) in instance()) {
                let kernel = CellKernel::from_values(part(n), kv).unwrap();
                let omega = measure(&w);
                prop_assert!(kernel.conditional_rate(&pairs(n, &pv), &omega).unwrap().value >= 0.0);
                let k = kernel.pair_reference(&omega).unwrap();
                prop_assert_eq!(kernel.conditional_rate(&k, &omega).unwrap().value, 0.0);
            }

            #[test]
            fn joint_is_sum((n, kv, w, pv) in instance(), r in probability(4)) {
                let kernel = CellKernel::from_values(part(n), kv).unwrap();
                let omega = measure(&w);
                let reference = if n == 4 { measure(&r) } else { measure(&vec![1.0 / n as f64; n]) };
                let pi = pairs(n, &pv);
                let j = joint_rate_with(&omega, &pi, &reference, &kernel).unwrap();
                let m = mark_rate(&omega, &reference).unwrap().value;
                let c = kernel.conditional_rate(&pi, &omega).unwrap().value;
                prop_assert_eq!(j.value, m + c);
            }
        }
    }
}
