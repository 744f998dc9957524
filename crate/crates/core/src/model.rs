//! Scaling regimes, the finite-λ connection probability and the limiting
//! connection kernel Ψ.
//!
//! The canonical regime draws Poisson(λ) devices from `position_law ⊗ mark_law`
//! and connects a pair with probability `Ψ/λ + O(1/λ²)`. The optional
//! [`PaperScaling`] keeps the split bookkeeping `μ_λ = λ^3 μ`, `Q_λ = λ^-2 Q`
//! whose product reproduces the same `Ψ/λ` exponent.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ball_volume, minkowski_diff_volume, Ball, Domain};
use crate::measures::Partition;
use crate::quadrature::gauss_legendre_on;

/// Probability law of the coverage radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum MarkLaw {
    Uniform { r_min: f64, r_max: f64 },
    /// Every device has the same radius.
    Degenerate { radius: f64 },
    /// Density proportional to `r^exponent` on `[r_min, r_max]`.
    Power { r_min: f64, r_max: f64, exponent: f64 },
}

impl MarkLaw {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.support();
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi < lo {
            return Err(Error::EmptyMarkSupport { r_min: lo, r_max: hi });
        }
        match *self {
            MarkLaw::Uniform { r_min, r_max } if r_max == r_min => {
                Err(Error::EmptyMarkSupport { r_min, r_max })
            }
            MarkLaw::Power { r_min, r_max, exponent } => {
                if r_max == r_min {
                    return Err(Error::EmptyMarkSupport { r_min, r_max });
                }
                if !exponent.is_finite() || exponent <= -1.0 {
                    return Err(Error::InvalidRegime(format!(
                        "power mark law needs exponent > -1, got {exponent}"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match *self {
            MarkLaw::Uniform { r_min, r_max } | MarkLaw::Power { r_min, r_max, .. } => {
                (r_min, r_max)
            }
            MarkLaw::Degenerate { radius } => (radius, radius),
        }
    }

    fn exponent(&self) -> f64 {
        match *self {
            MarkLaw::Power { exponent, .. } => exponent,
            _ => 0.0,
        }
    }

    /// `P(R <= r)` for the continuous laws.
    fn cdf(&self, r: f64) -> f64 {
        let (lo, hi) = self.support();
        if r <= lo {
            return 0.0;
        }
        if r >= hi {
            return 1.0;
        }
        let k = self.exponent() + 1.0;
        (r.powf(k) - lo.powf(k)) / (hi.powf(k) - lo.powf(k))
    }

    fn quantile(&self, u: f64) -> f64 {
        let (lo, hi) = self.support();
        match self {
            MarkLaw::Degenerate { radius } => *radius,
            _ => {
                let k = self.exponent() + 1.0;
                let v = lo.powf(k) + u * (hi.powf(k) - lo.powf(k));
                v.powf(1.0 / k).clamp(lo, hi)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            MarkLaw::Degenerate { radius } => *radius,
            _ => self.quantile(rng.random::<f64>()),
        }
    }

    /// Draws from the law conditioned on `[lo, hi]`, which must carry mass.
    pub fn sample_within<R: Rng + ?Sized>(&self, lo: f64, hi: f64, rng: &mut R) -> f64 {
        match self {
            MarkLaw::Degenerate { radius } => *radius,
            _ => {
                let (a, b) = (self.cdf(lo), self.cdf(hi));
                self.quantile(a + (b - a) * rng.random::<f64>()).clamp(lo, hi)
            }
        }
    }

    /// Law mass of `[lo, hi)`, or of `[lo, hi]` when `hi_closed`.
    pub fn interval_mass(&self, lo: f64, hi: f64, hi_closed: bool) -> f64 {
        match *self {
            MarkLaw::Degenerate { radius } => {
                let inside = radius >= lo && (radius < hi || (hi_closed && radius == hi));
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            _ => (self.cdf(hi) - self.cdf(lo)).max(0.0),
        }
    }

    /// Quadrature nodes `(r, weight)` for integrating against the law
    /// restricted to `[lo, hi]`; weights sum to the law mass there.
    pub fn quadrature(&self, lo: f64, hi: f64, hi_closed: bool, nodes: usize) -> Vec<(f64, f64)> {
        match *self {
            MarkLaw::Degenerate { radius } => {
                if self.interval_mass(lo, hi, hi_closed) > 0.0 {
                    vec![(radius, 1.0)]
                } else {
                    vec![]
                }
            }
            _ => {
                let (s_lo, s_hi) = self.support();
                let (a, b) = (lo.max(s_lo), hi.min(s_hi));
                if b <= a {
                    return vec![];
                }
                let k = self.exponent();
                let norm = (k + 1.0) / (s_hi.powf(k + 1.0) - s_lo.powf(k + 1.0));
                gauss_legendre_on(a, b, nodes)
                    .into_iter()
                    .map(|(r, w)| (r, w * norm * r.powf(k)))
                    .collect()
            }
        }
    }
}

/// Probability law of device positions on the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum PositionLaw {
    #[default]
    Uniform,
    /// Piecewise-constant density on a product grid; `weights` are cell
    /// probabilities in row-major order and need not be normalized.
    Histogram {
        edges: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
}

impl PositionLaw {
    pub fn validate(&self, dom: &Domain) -> Result<()> {
        match self {
            PositionLaw::Uniform => Ok(()),
            PositionLaw::Histogram { edges, weights } => {
                dom.check_dimension(edges.len())?;
                let mut cells = 1usize;
                for (a, e) in edges.iter().enumerate() {
                    if e.len() < 2 || e.windows(2).any(|w| w[1] <= w[0]) {
                        return Err(Error::InvalidRegime(format!(
                            "histogram axis {a} edges must be strictly increasing"
                        )));
                    }
                    if e[0] < dom.lower()[a] || e[e.len() - 1] > dom.upper()[a] {
                        return Err(Error::InvalidRegime(format!(
                            "histogram axis {a} extends beyond the domain"
                        )));
                    }
                    cells *= e.len() - 1;
                }
                if weights.len() != cells {
                    return Err(Error::InvalidRegime(format!(
                        "histogram has {} weights for {cells} cells",
                        weights.len()
                    )));
                }
                let total: f64 = weights.iter().sum();
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || total <= 0.0 {
                    return Err(Error::InvalidRegime(
                        "histogram weights must be nonnegative with positive sum".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, dom: &Domain, rng: &mut R) -> Vec<f64> {
        match self {
            PositionLaw::Uniform => (0..dom.dimension())
                .map(|a| dom.lower()[a] + dom.side(a) * rng.random::<f64>())
                .collect(),
            PositionLaw::Histogram { edges, weights } => {
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                let mut cell = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if u < *w {
                        cell = i;
                        break;
                    }
                    u -= w;
                }
                let mut idx = vec![0; edges.len()];
                let mut rest = cell;
                for a in (0..edges.len()).rev() {
                    let n = edges[a].len() - 1;
                    idx[a] = rest % n;
                    rest /= n;
                }
                idx.iter()
                    .zip(edges)
                    .map(|(&i, e)| e[i] + (e[i + 1] - e[i]) * rng.random::<f64>())
                    .collect()
            }
        }
    }

    /// Law mass of the box `[lower, upper]`; the uniform law spreads its mass
    /// over the box `[extent_lower, extent_upper]` (the domain).
    pub fn box_mass(
        &self,
        lower: &[f64],
        upper: &[f64],
        extent_lower: &[f64],
        extent_upper: &[f64],
    ) -> Result<f64> {
        if upper.len() != lower.len() || extent_lower.len() != lower.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: extent_lower.len(),
            });
        }
        match self {
            PositionLaw::Uniform => Ok((0..lower.len())
                .map(|a| {
                    overlap(lower[a], upper[a], extent_lower[a], extent_upper[a])
                        / (extent_upper[a] - extent_lower[a])
                })
                .product()),
            PositionLaw::Histogram { edges, weights } => {
                if edges.len() != lower.len() {
                    return Err(Error::DimensionMismatch {
                        expected: edges.len(),
                        got: lower.len(),
                    });
                }
                let total: f64 = weights.iter().sum();
                let mut mass = 0.0;
                for (cell, w) in weights.iter().enumerate() {
                    if *w == 0.0 {
                        continue;
                    }
                    let mut rest = cell;
                    let mut frac = 1.0;
                    for a in (0..edges.len()).rev() {
                        let n = edges[a].len() - 1;
                        let i = rest % n;
                        rest /= n;
                        let (lo, hi) = (edges[a][i], edges[a][i + 1]);
                        frac *= overlap(lower[a], upper[a], lo, hi) / (hi - lo);
                    }
                    mass += w / total * frac;
                }
                Ok(mass)
            }
        }
    }
}

fn overlap(a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64) -> f64 {
    (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0)
}

pub type KernelFn = dyn Fn(&[f64], f64, &[f64], f64) -> f64 + Send + Sync;

/// The limiting connection kernel `Ψ(b_x, b_y)`.
#[derive(Clone)]
pub enum KernelSpec {
    /// `(16/9) π² r_x³ r_y³ Vol(b_x − b_y) / Vol(D)²` in three dimensions.
    Corollary { vol_d: f64 },
    Constant { value: f64 },
    /// One value per ordered cell pair of a partition (row-major, symmetric).
    Table {
        partition: Arc<Partition>,
        values: Vec<f64>,
    },
    /// Caller-supplied `Ψ(x, r_x, y, r_y)`; must be symmetric and nonnegative.
    User(Arc<KernelFn>),
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Corollary { vol_d } => f.debug_struct("Corollary").field("vol_d", vol_d).finish(),
            KernelSpec::Constant { value } => f.debug_struct("Constant").field("value", value).finish(),
            KernelSpec::Table { values, .. } => f.debug_struct("Table").field("values", values).finish(),
            KernelSpec::User(_) => f.write_str("User(..)"),
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Corollary { vol_d } => {
                if !(vol_d.is_finite() && *vol_d > 0.0) {
                    return Err(Error::InvalidKernel(format!("vol_d must be positive, got {vol_d}")));
                }
            }
            KernelSpec::Constant { value } => {
                if !(value.is_finite() && *value >= 0.0) {
                    return Err(Error::InvalidKernel(format!(
                        "constant kernel must be finite and nonnegative, got {value}"
                    )));
                }
            }
            KernelSpec::Table { partition, values } => {
                let n = partition.len();
                if values.len() != n * n {
                    return Err(Error::InvalidKernel(format!(
                        "table has {} values for {n} cells",
                        values.len()
                    )));
                }
                for a in 0..n {
                    for b in 0..n {
                        let v = values[a * n + b];
                        if !(v.is_finite() && v >= 0.0) {
                            return Err(Error::InvalidKernel(format!("value {v} at ({a}, {b})")));
                        }
                        if v != values[b * n + a] {
                            return Err(Error::InvalidKernel(format!("table not symmetric at ({a}, {b})")));
                        }
                    }
                }
            }
            KernelSpec::User(_) => {}
        }
        Ok(())
    }

    /// `Ψ` between two marked points.
    pub fn eval(&self, x: &[f64], rx: f64, y: &[f64], ry: f64) -> Result<f64> {
        match self {
            KernelSpec::Corollary { vol_d } => {
                if x.len() != 3 || y.len() != 3 {
                    return Err(Error::InvalidKernel(format!(
                        "corollary kernel is defined in dimension 3, got {}",
                        x.len()
                    )));
                }
                Ok(corollary_psi(rx, ry, *vol_d))
            }
            KernelSpec::Constant { value } => Ok(*value),
            KernelSpec::Table { partition, values } => {
                let a = partition.cell_of(x, rx)?;
                let b = partition.cell_of(y, ry)?;
                Ok(values[a * partition.len() + b])
            }
            KernelSpec::User(f) => {
                let v = f(x, rx, y, ry);
                if v.is_finite() && v >= 0.0 {
                    Ok(v)
                } else {
                    Err(Error::InvalidKernel(format!("user kernel returned {v}")))
                }
            }
        }
    }

    /// True when `Ψ` depends on the radii only.
    pub fn radius_only(&self) -> bool {
        matches!(self, KernelSpec::Corollary { .. } | KernelSpec::Constant { .. })
    }

    /// An upper bound of `Ψ` over radii in `[0, r_max]`, when one is known
    /// without scanning pairs.
    pub fn sup_for_radius(&self, r_max: f64) -> Option<f64> {
        match self {
            KernelSpec::Corollary { vol_d } => Some(corollary_psi(r_max, r_max, *vol_d)),
            KernelSpec::Constant { value } => Some(*value),
            KernelSpec::Table { values, .. } => Some(values.iter().copied().fold(0.0, f64::max)),
            KernelSpec::User(_) => None,
        }
    }
}

fn corollary_psi(rx: f64, ry: f64, vol_d: f64) -> f64 {
    16.0 / 9.0 * PI * PI * rx.powi(3) * ry.powi(3) * ball_volume(3, rx + ry) / (vol_d * vol_d)
}

/// Exponents of the split scaling `μ_λ = λ^intensity μ` and `Q_λ = λ^mark Q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaperScaling {
    pub intensity_exponent: f64,
    pub mark_exponent: f64,
}

impl Default for PaperScaling {
    fn default() -> Self {
        Self {
            intensity_exponent: 3.0,
            mark_exponent: -2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScalingRegime {
    lambda: f64,
    position_law: PositionLaw,
    mark_law: MarkLaw,
    kernel: KernelSpec,
    paper_scaling: Option<PaperScaling>,
}

impl ScalingRegime {
    pub fn new(
        lambda: f64,
        position_law: PositionLaw,
        mark_law: MarkLaw,
        kernel: KernelSpec,
        paper_scaling: Option<PaperScaling>,
    ) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidRegime(format!(
                "lambda must be finite and nonnegative, got {lambda}"
            )));
        }
        mark_law.validate()?;
        kernel.validate()?;
        Ok(Self {
            lambda,
            position_law,
            mark_law,
            kernel,
            paper_scaling,
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidRegime(format!(
                "lambda must be finite and nonnegative, got {lambda}"
            )));
        }
        let mut r = self.clone();
        r.lambda = lambda;
        Ok(r)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn position_law(&self) -> &PositionLaw {
        &self.position_law
    }

    pub fn mark_law(&self) -> &MarkLaw {
        &self.mark_law
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn paper_scaling(&self) -> Option<PaperScaling> {
        self.paper_scaling
    }

    /// Exponent `E` in `p_λ = 1 − exp(−E)`.
    pub fn connection_exponent(&self, b1: &Ball, b2: &Ball) -> Result<f64> {
        let lambda = self.lambda;
        if lambda <= 0.0 {
            return Ok(0.0);
        }
        let e = match (self.paper_scaling, &self.kernel) {
            (Some(s), KernelSpec::Corollary { vol_d }) => {
                if b1.dimension() != 3 || b2.dimension() != 3 {
                    return Err(Error::InvalidKernel(
                        "corollary kernel is defined in dimension 3".into(),
                    ));
                }
                let intensity = lambda.powf(s.intensity_exponent) * minkowski_diff_volume(b1, b2);
                let weight = |r: f64| lambda.powf(s.mark_exponent) * ball_volume(3, r) / vol_d;
                intensity * (weight(b1.radius) * weight(b2.radius))
            }
            (Some(s), k) => {
                lambda.powf(s.intensity_exponent + 2.0 * s.mark_exponent)
                    * k.eval(&b1.center, b1.radius, &b2.center, b2.radius)?
            }
            (None, k) => k.eval(&b1.center, b1.radius, &b2.center, b2.radius)? / lambda,
        };
        if !(e >= 0.0) {
            return Err(Error::InvalidRegime(format!(
                "connection exponent must be nonnegative, got {e}"
            )));
        }
        Ok(e)
    }
}

/// `1 − exp(−E)` for an exponent `E ≥ 0`.
pub fn probability_from_exponent(e: f64) -> Result<f64> {
    if !(e >= 0.0) {
        return Err(Error::InvalidRegime(format!(
            "connection exponent must be nonnegative, got {e}"
        )));
    }
    Ok(-(-e).exp_m1())
}

/// Finite-λ probability that two devices with these balls are connected.
pub fn connection_probability(b1: &Ball, b2: &Ball, regime: &ScalingRegime) -> Result<f64> {
    probability_from_exponent(regime.connection_exponent(b1, b2)?)
}

/// `Ψ(b1, b2)`, the limit of `λ p_λ`.
pub fn kernel_limit(b1: &Ball, b2: &Ball, regime: &ScalingRegime) -> Result<f64> {
    regime
        .kernel
        .eval(&b1.center, b1.radius, &b2.center, b2.radius)
}

/// Soft-rule edge probability `min(1, Ψ/λ)`.
pub fn edge_probability_at_lambda(psi: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if !(psi >= 0.0) {
        return Err(Error::InvalidArgument(format!("psi must be nonnegative, got {psi}")));
    }
    Ok((psi / lambda).min(1.0))
}
