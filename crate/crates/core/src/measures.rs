//! Finite partitions of position × radius space and the binned measures that
//! live on them: the empirical mark measure, the empirical connectivity
//! measure, and reference measures of a regime.
//!
//! Cells are half-open boxes `[lo, hi)` along every axis, except that the last
//! bin of each axis is closed so every point of the support lands in exactly
//! one cell. Cell ids are row-major over the position axes, with the radius
//! bin varying fastest.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::model::ScalingRegime;
use crate::network::BooleanNetwork;

const EDGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    position_edges: Vec<Vec<f64>>,
    radius_edges: Vec<f64>,
}

impl Partition {
    pub fn new(position_edges: Vec<Vec<f64>>, radius_edges: Vec<f64>) -> Result<Self> {
        if position_edges.is_empty() {
            return Err(Error::InvalidPartition("no position axes".into()));
        }
        for (axis, edges) in position_edges.iter().enumerate() {
            if edges.len() < 2 {
                return Err(Error::InvalidPartition(format!(
                    "axis {axis} needs at least two edges"
                )));
            }
            if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidPartition(format!(
                    "axis {axis} edges must be finite and strictly increasing"
                )));
            }
        }
        if radius_edges.len() < 2 || radius_edges.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(Error::InvalidPartition(
                "radius edges must be at least two finite nonnegative values".into(),
            ));
        }
        let degenerate = radius_edges.len() == 2 && radius_edges[0] == radius_edges[1];
        if !degenerate && radius_edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidPartition(
                "radius edges must be strictly increasing (a single [r, r] bin is allowed)".into(),
            ));
        }
        Ok(Self {
            position_edges,
            radius_edges,
        })
    }

    /// Equal-width bins over the domain and over `[r_min, r_max]`.
    pub fn uniform(
        dom: &Domain,
        bins_per_axis: &[usize],
        r_min: f64,
        r_max: f64,
        radius_bins: usize,
    ) -> Result<Self> {
        dom.check_dimension(bins_per_axis.len())?;
        if bins_per_axis.contains(&0) || radius_bins == 0 {
            return Err(Error::InvalidPartition("bin counts must be positive".into()));
        }
        if r_max < r_min {
            return Err(Error::InvalidPartition(format!(
                "r_max {r_max} below r_min {r_min}"
            )));
        }
        let position_edges = bins_per_axis
            .iter()
            .enumerate()
            .map(|(a, &b)| linspace(dom.lower()[a], dom.upper()[a], b))
            .collect();
        let radius_edges = if r_max == r_min {
            if radius_bins != 1 {
                return Err(Error::InvalidPartition(
                    "a degenerate radius range admits exactly one bin".into(),
                ));
            }
            vec![r_min, r_max]
        } else {
            linspace(r_min, r_max, radius_bins)
        };
        Self::new(position_edges, radius_edges)
    }

    /// `n` labelled cells on the unit interval with a single degenerate radius
    /// bin at zero. Handy when only the cell structure matters.
    pub fn interval(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidPartition("need at least one cell".into()));
        }
        Self::new(vec![linspace(0.0, 1.0, n)], vec![0.0, 0.0])
    }

    pub fn position_edges(&self) -> &[Vec<f64>] {
        &self.position_edges
    }

    pub fn radius_edges(&self) -> &[f64] {
        &self.radius_edges
    }

    pub fn dimension(&self) -> usize {
        self.position_edges.len()
    }

    pub fn radius_bins(&self) -> usize {
        self.radius_edges.len() - 1
    }

    pub fn position_cells(&self) -> usize {
        self.position_edges.iter().map(|e| e.len() - 1).product()
    }

    pub fn len(&self) -> usize {
        self.position_cells() * self.radius_bins()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_of(&self, position: &[f64], radius: f64) -> Result<usize> {
        let outside = || Error::OutsidePartition {
            position: position.to_vec(),
            radius,
        };
        if position.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                got: position.len(),
            });
        }
        let mut pos_index = 0usize;
        for (edges, &x) in self.position_edges.iter().zip(position) {
            let bin = bin_of(edges, x).ok_or_else(outside)?;
            pos_index = pos_index * (edges.len() - 1) + bin;
        }
        let rbin = bin_of(&self.radius_edges, radius).ok_or_else(outside)?;
        Ok(pos_index * self.radius_bins() + rbin)
    }

    /// Position bins per axis and the radius bin of a cell.
    pub fn cell_indices(&self, cell: usize) -> (Vec<usize>, usize) {
        let rbin = cell % self.radius_bins();
        let mut rest = cell / self.radius_bins();
        let mut idx = vec![0; self.dimension()];
        for axis in (0..self.dimension()).rev() {
            let n = self.position_edges[axis].len() - 1;
            idx[axis] = rest % n;
            rest /= n;
        }
        (idx, rbin)
    }

    pub fn cell_bounds(&self, cell: usize) -> CellBounds {
        let (idx, rbin) = self.cell_indices(cell);
        CellBounds {
            lower: idx
                .iter()
                .zip(&self.position_edges)
                .map(|(&i, e)| e[i])
                .collect(),
            upper: idx
                .iter()
                .zip(&self.position_edges)
                .map(|(&i, e)| e[i + 1])
                .collect(),
            r_lo: self.radius_edges[rbin],
            r_hi: self.radius_edges[rbin + 1],
            r_hi_closed: rbin + 1 == self.radius_bins(),
        }
    }

    pub fn cell_midpoint(&self, cell: usize) -> (Vec<f64>, f64) {
        let b = self.cell_bounds(cell);
        let x = b
            .lower
            .iter()
            .zip(&b.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect();
        (x, 0.5 * (b.r_lo + b.r_hi))
    }

    /// For each fine cell, the coarse cell containing it. Fails unless every
    /// coarse edge is also a fine edge and the outer bounds agree.
    pub fn coarsening_map(&self, coarse: &Partition) -> Result<Vec<usize>> {
        if coarse.dimension() != self.dimension() {
            return Err(Error::IncompatiblePartitions(format!(
                "dimension {} vs {}",
                self.dimension(),
                coarse.dimension()
            )));
        }
        let axes = self
            .position_edges
            .iter()
            .zip(&coarse.position_edges)
            .chain(std::iter::once((&self.radius_edges, &coarse.radius_edges)));
        for (axis, (fine, coarse_edges)) in axes.enumerate() {
            if !edges_refine(fine, coarse_edges) {
                return Err(Error::IncompatiblePartitions(format!(
                    "axis {axis}: coarse edges are not a subset of the fine edges"
                )));
            }
        }
        (0..self.len())
            .map(|c| {
                let (x, r) = self.cell_midpoint(c);
                coarse.cell_of(&x, r)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub r_lo: f64,
    pub r_hi: f64,
    pub r_hi_closed: bool,
}

fn linspace(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..=bins)
        .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
        .collect();
    v[bins] = hi;
    v
}

fn bin_of(edges: &[f64], x: f64) -> Option<usize> {
    let last = edges.len() - 1;
    if !(x >= edges[0] && x <= edges[last]) {
        return None;
    }
    if x == edges[last] {
        return Some(last - 1);
    }
    Some(edges.partition_point(|e| *e <= x) - 1)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= EDGE_TOL * (1.0 + a.abs().max(b.abs()))
}

fn edges_refine(fine: &[f64], coarse: &[f64]) -> bool {
    close(fine[0], coarse[0])
        && close(fine[fine.len() - 1], coarse[coarse.len() - 1])
        && coarse.iter().all(|c| fine.iter().any(|f| close(*f, *c)))
}

/// Nonnegative mass per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedMeasure {
    partition: Arc<Partition>,
    masses: Vec<f64>,
}

impl BinnedMeasure {
    pub fn zeros(partition: Arc<Partition>) -> Self {
        let n = partition.len();
        Self {
            partition,
            masses: vec![0.0; n],
        }
    }

    pub fn from_masses(partition: Arc<Partition>, masses: Vec<f64>) -> Result<Self> {
        if masses.len() != partition.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} masses for {} cells",
                masses.len(),
                partition.len()
            )));
        }
        if let Some((c, m)) = masses
            .iter()
            .enumerate()
            .find(|(_, m)| !(m.is_finite() && **m >= 0.0))
        {
            return Err(Error::InvalidMeasure(format!(
                "cell {c} has invalid mass {m}"
            )));
        }
        Ok(Self { partition, masses })
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mass(&self, cell: usize) -> f64 {
        self.masses[cell]
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn to_json(&self, config_digest: Option<&str>) -> Result<String> {
        let file = MeasureFile {
            config_digest: config_digest.map(str::to_owned),
            partition: (*self.partition).clone(),
            masses: self.masses.iter().copied().enumerate().collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Reads the JSON layout written by [`BinnedMeasure::to_json`]; cells that
    /// are absent carry zero mass.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: MeasureFile = serde_json::from_str(text)?;
        let partition = Arc::new(Partition::new(
            file.partition.position_edges,
            file.partition.radius_edges,
        )?);
        let mut masses = vec![0.0; partition.len()];
        for (cell, mass) in file.masses {
            let slot = masses.get_mut(cell).ok_or_else(|| {
                Error::InvalidMeasure(format!("cell id {cell} out of range"))
            })?;
            *slot = mass;
        }
        Self::from_masses(partition, masses)
    }
}

#[derive(Serialize, Deserialize)]
struct MeasureFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_digest: Option<String>,
    partition: Partition,
    masses: BTreeMap<usize, f64>,
}

/// Nonnegative mass per ordered cell pair, stored densely row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedPairMeasure {
    partition: Arc<Partition>,
    masses: Vec<f64>,
}

impl BinnedPairMeasure {
    pub fn zeros(partition: Arc<Partition>) -> Self {
        let n = partition.len();
        Self {
            partition,
            masses: vec![0.0; n * n],
        }
    }

    /// Row-major `n × n` masses. Symmetry is not enforced here; see
    /// [`BinnedPairMeasure::check_symmetric`].
    pub fn from_masses(partition: Arc<Partition>, masses: Vec<f64>) -> Result<Self> {
        let n = partition.len();
        if masses.len() != n * n {
            return Err(Error::InvalidMeasure(format!(
                "{} pair masses for {n} cells",
                masses.len()
            )));
        }
        if let Some((i, m)) = masses
            .iter()
            .enumerate()
            .find(|(_, m)| !(m.is_finite() && **m >= 0.0))
        {
            return Err(Error::InvalidMeasure(format!(
                "pair ({}, {}) has invalid mass {m}",
                i / n,
                i % n
            )));
        }
        Ok(Self { partition, masses })
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    pub fn cells(&self) -> usize {
        self.partition.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mass(&self, a: usize, b: usize) -> f64 {
        self.masses[a * self.cells() + b]
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn check_symmetric(&self) -> Result<()> {
        let n = self.cells();
        for a in 0..n {
            for b in (a + 1)..n {
                let (l, r) = (self.mass(a, b), self.mass(b, a));
                if (l - r).abs() > 1e-12 * (1.0 + l.abs().max(r.abs())) {
                    return Err(Error::Asymmetric {
                        a,
                        b,
                        left: l,
                        right: r,
                    });
                }
            }
        }
        Ok(())
    }

    /// Sparse `cell_a,cell_b,mass` triples, nonzero entries only.
    pub fn write_csv<W: Write>(&self, mut out: W, config_digest: Option<&str>) -> Result<()> {
        if let Some(d) = config_digest {
            writeln!(out, "# config_digest={d}")?;
        }
        writeln!(out, "cell_a,cell_b,mass")?;
        let n = self.cells();
        for (i, m) in self.masses.iter().enumerate() {
            if *m != 0.0 {
                writeln!(out, "{},{},{}", i / n, i % n, m)?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, partition: Arc<Partition>) -> Result<Self> {
        let n = partition.len();
        let mut masses = vec![0.0; n * n];
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') || t.starts_with("cell_a") {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: lineno + 1,
                message,
            };
            let fields: Vec<&str> = t.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(parse_err(format!("expected 3 fields, got {}", fields.len())));
            }
            let a: usize = fields[0].parse().map_err(|e| parse_err(format!("{e}")))?;
            let b: usize = fields[1].parse().map_err(|e| parse_err(format!("{e}")))?;
            let m: f64 = fields[2].parse().map_err(|e| parse_err(format!("{e}")))?;
            if a >= n || b >= n {
                return Err(parse_err(format!("cell pair ({a}, {b}) out of range")));
            }
            masses[a * n + b] += m;
        }
        Self::from_masses(partition, masses)
    }
}

/// `L1(A) = #{i : (X_i, R_i) in A} / lambda`.
pub fn empirical_mark_measure(
    net: &BooleanNetwork,
    part: &Arc<Partition>,
) -> Result<BinnedMeasure> {
    let config = net.config();
    let counts = config
        .points
        .par_iter()
        .try_fold(
            || vec![0u64; part.len()],
            |mut acc, p| {
                acc[part.cell_of(&p.position, p.radius)?] += 1;
                Ok::<_, Error>(acc)
            },
        )
        .try_reduce(|| vec![0u64; part.len()], |a, b| Ok(merge_counts(a, b)))?;
    counts_to_measure(part, &counts, config.lambda)
}

/// Binned mark measure from raw cell counts at scale `lambda`.
pub fn counts_to_measure(
    part: &Arc<Partition>,
    counts: &[u64],
    lambda: f64,
) -> Result<BinnedMeasure> {
    let masses = counts.iter().map(|&c| scaled(c, lambda)).collect::<Result<_>>()?;
    BinnedMeasure::from_masses(part.clone(), masses)
}

fn scaled(count: u64, lambda: f64) -> Result<f64> {
    if count == 0 {
        Ok(0.0)
    } else if lambda > 0.0 {
        Ok(count as f64 / lambda)
    } else {
        Err(Error::InvalidArgument(
            "nonempty configuration at lambda = 0".into(),
        ))
    }
}

fn merge_counts(mut a: Vec<u64>, b: Vec<u64>) -> Vec<u64> {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

/// `L2 = (1/lambda) sum over edges of (delta_(i,j) + delta_(j,i))`.
pub fn empirical_connectivity_measure(
    net: &BooleanNetwork,
    part: &Arc<Partition>,
) -> Result<BinnedPairMeasure> {
    let config = net.config();
    let cells: Vec<usize> = config
        .points
        .iter()
        .map(|p| part.cell_of(&p.position, p.radius))
        .collect::<Result<_>>()?;
    let n = part.len();
    let counts = net
        .edges()
        .par_iter()
        .fold(
            || vec![0u64; n * n],
            |mut acc, &(i, j)| {
                acc[cells[i] * n + cells[j]] += 1;
                acc[cells[j] * n + cells[i]] += 1;
                acc
            },
        )
        .reduce(|| vec![0u64; n * n], merge_counts);
    let masses = counts
        .iter()
        .map(|&c| scaled(c, config.lambda))
        .collect::<Result<_>>()?;
    BinnedPairMeasure::from_masses(part.clone(), masses)
}

/// Pushes a measure forward onto a coarser partition by summing cell masses.
pub fn coarsen(m: &BinnedMeasure, coarse: &Arc<Partition>) -> Result<BinnedMeasure> {
    let map = m.partition.coarsening_map(coarse)?;
    let mut masses = vec![0.0; coarse.len()];
    for (fine, &c) in map.iter().enumerate() {
        masses[c] += m.masses[fine];
    }
    BinnedMeasure::from_masses(coarse.clone(), masses)
}

pub fn coarsen_pairs(m: &BinnedPairMeasure, coarse: &Arc<Partition>) -> Result<BinnedPairMeasure> {
    let map = m.partition.coarsening_map(coarse)?;
    let (nf, nc) = (m.cells(), coarse.len());
    let mut masses = vec![0.0; nc * nc];
    for a in 0..nf {
        for b in 0..nf {
            masses[map[a] * nc + map[b]] += m.masses[a * nf + b];
        }
    }
    BinnedPairMeasure::from_masses(coarse.clone(), masses)
}

/// Cell masses of the sampling law: `integral over the cell of position_law(dx) mark_law(dr)`.
pub fn reference_measure(regime: &ScalingRegime, part: &Arc<Partition>) -> Result<BinnedMeasure> {
    let extent_lo: Vec<f64> = part.position_edges().iter().map(|e| e[0]).collect();
    let extent_hi: Vec<f64> = part.position_edges().iter().map(|e| e[e.len() - 1]).collect();
    let masses = (0..part.len())
        .map(|c| {
            let b = part.cell_bounds(c);
            let pos = regime
                .position_law()
                .box_mass(&b.lower, &b.upper, &extent_lo, &extent_hi)?;
            let marks = regime.mark_law().interval_mass(b.r_lo, b.r_hi, b.r_hi_closed);
            Ok(pos * marks)
        })
        .collect::<Result<Vec<f64>>>()?;
    BinnedMeasure::from_masses(part.clone(), masses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Topology;
    use crate::model::{KernelSpec, MarkLaw, PositionLaw};
    use crate::network::build_hard;
    use crate::sampler::{sample_marked_ppp, MarkedConfiguration, MarkedPoint};
    use approx::assert_relative_eq;

    fn square() -> Domain {
        Domain::cube(2, 1.0, Topology::Bounded).unwrap()
    }

    fn grid(bins: usize, rbins: usize) -> Arc<Partition> {
        Arc::new(Partition::uniform(&square(), &[bins, bins], 0.0, 0.1, rbins).unwrap())
    }

    fn config(points: Vec<(f64, f64, f64)>, lambda: f64) -> MarkedConfiguration {
        MarkedConfiguration {
            points: points
                .into_iter()
                .map(|(x, y, r)| MarkedPoint::new(vec![x, y], r))
                .collect(),
            lambda,
            seed: 0,
        }
    }

    #[test]
    fn cell_lookup_uses_half_open_bins_with_closed_last_bin() {
        let p = Partition::new(vec![vec![0.0, 0.5, 1.0]], vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(p.cell_of(&[0.0], 0.0).unwrap(), 0);
        assert_eq!(p.cell_of(&[0.5], 0.0).unwrap(), 2);
        assert_eq!(p.cell_of(&[1.0], 2.0).unwrap(), 3);
        assert_eq!(p.cell_of(&[0.2], 1.0).unwrap(), 1);
        assert!(matches!(p.cell_of(&[0.2], 2.5), Err(Error::OutsidePartition { .. })));
        assert!(p.cell_of(&[1.01], 0.5).is_err());
    }

    #[test]
    fn cell_indices_round_trip() {
        let p = Partition::new(
            vec![vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 2.0]],
            vec![0.0, 1.0, 2.0],
        )
        .unwrap();
        for c in 0..p.len() {
            let (x, r) = p.cell_midpoint(c);
            assert_eq!(p.cell_of(&x, r).unwrap(), c);
        }
    }

    #[test]
    fn empty_network_gives_zero_measures() {
        let part = grid(2, 1);
        let net = build_hard(&config(vec![], 10.0), &square()).unwrap();
        let l1 = empirical_mark_measure(&net, &part).unwrap();
        let l2 = empirical_connectivity_measure(&net, &part).unwrap();
        assert_eq!(l1.total(), 0.0);
        assert_eq!(l2.total(), 0.0);
    }

    #[test]
    fn single_point_mass() {
        let part = grid(2, 1);
        let net = build_hard(&config(vec![(0.7, 0.2, 0.05)], 10.0), &square()).unwrap();
        let l1 = empirical_mark_measure(&net, &part).unwrap();
        let cell = part.cell_of(&[0.7, 0.2], 0.05).unwrap();
        for c in 0..part.len() {
            let expected = if c == cell { 0.1 } else { 0.0 };
            assert_eq!(l1.mass(c), expected);
        }
    }

    #[test]
    fn connectivity_mass_across_and_within_cells() {
        let part = grid(2, 1);
        // across: (0.45, 0.2) and (0.55, 0.2) sit in different x bins
        let across = build_hard(
            &config(vec![(0.45, 0.2, 0.06), (0.55, 0.2, 0.06)], 10.0),
            &square(),
        )
        .unwrap();
        assert_eq!(across.edges(), &[(0, 1)]);
        let l2 = empirical_connectivity_measure(&across, &part).unwrap();
        let a = part.cell_of(&[0.45, 0.2], 0.06).unwrap();
        let b = part.cell_of(&[0.55, 0.2], 0.06).unwrap();
        assert_ne!(a, b);
        assert_relative_eq!(l2.mass(a, b), 0.1);
        assert_relative_eq!(l2.mass(b, a), 0.1);
        assert_relative_eq!(l2.total(), 0.2);

        let within = build_hard(
            &config(vec![(0.1, 0.1, 0.06), (0.2, 0.1, 0.06)], 10.0),
            &square(),
        )
        .unwrap();
        let l2 = empirical_connectivity_measure(&within, &part).unwrap();
        let a = part.cell_of(&[0.1, 0.1], 0.06).unwrap();
        assert_relative_eq!(l2.mass(a, a), 0.2);
        assert_relative_eq!(l2.total(), 0.2);
    }

    #[test]
    fn sampled_mark_measure_matches_recount() {
        let regime = crate::model::ScalingRegime::new(
            100.0,
            PositionLaw::Uniform,
            MarkLaw::Uniform { r_min: 0.0, r_max: 0.1 },
            KernelSpec::Constant { value: 1.0 },
            None,
        )
        .unwrap();
        let part = grid(3, 2);
        // pick a seed whose configuration has exactly 200 points is not
        // needed: verify the recount identity for whatever was drawn, and
        // separately for a hand-built 200-point configuration.
        let cfg = sample_marked_ppp(&regime, &square(), 5).unwrap();
        let net = build_hard(&cfg, &square()).unwrap();
        let l1 = empirical_mark_measure(&net, &part).unwrap();
        let mut manual = vec![0usize; part.len()];
        for p in &cfg.points {
            manual[part.cell_of(&p.position, p.radius).unwrap()] += 1;
        }
        for (c, &count) in manual.iter().enumerate() {
            assert_eq!(l1.mass(c), count as f64 / 100.0);
        }

        let pts: Vec<_> = (0..200)
            .map(|i| ((i % 20) as f64 / 20.0, (i / 20) as f64 / 10.0, 0.0005 * (i % 200) as f64))
            .collect();
        let net = build_hard(&config(pts, 100.0), &square()).unwrap();
        let l1 = empirical_mark_measure(&net, &part).unwrap();
        assert_relative_eq!(l1.total(), 2.0, max_relative = 1e-15);
    }

    #[test]
    fn coarsen_examples() {
        let fine = Arc::new(Partition::new(vec![crate::measures::linspace(0.0, 1.0, 8)], vec![0.0, 0.0]).unwrap());
        let mid = Arc::new(Partition::new(vec![crate::measures::linspace(0.0, 1.0, 4)], vec![0.0, 0.0]).unwrap());
        let coarse = Arc::new(Partition::new(vec![vec![0.0, 0.5, 1.0]], vec![0.0, 0.0]).unwrap());
        let single = Arc::new(Partition::interval(1).unwrap());

        let masses = vec![0.3, 1.2, 0.0, 0.7, 2.5, 0.1, 0.9, 0.4];
        let m = BinnedMeasure::from_masses(fine.clone(), masses.clone()).unwrap();

        let c = coarsen(&m, &coarse).unwrap();
        assert_relative_eq!(c.mass(0), 0.3 + 1.2 + 0.0 + 0.7);
        assert_relative_eq!(c.mass(1), 2.5 + 0.1 + 0.9 + 0.4);

        let total = coarsen(&m, &single).unwrap();
        assert_relative_eq!(total.mass(0), m.total());

        let twice = coarsen(&coarsen(&m, &mid).unwrap(), &coarse).unwrap();
        assert_relative_eq!(twice.mass(0), c.mass(0), max_relative = 1e-15);
        assert_relative_eq!(twice.mass(1), c.mass(1), max_relative = 1e-15);
    }

    #[test]
    fn coarsen_rejects_incompatible_partitions() {
        let fine = Arc::new(Partition::interval(4).unwrap());
        let odd = Arc::new(Partition::interval(3).unwrap());
        let m = BinnedMeasure::from_masses(fine, vec![1.0; 4]).unwrap();
        assert!(matches!(coarsen(&m, &odd), Err(Error::IncompatiblePartitions(_))));
    }

    #[test]
    fn reference_measure_examples() {
        let uniform = crate::model::ScalingRegime::new(
            10.0,
            PositionLaw::Uniform,
            MarkLaw::Uniform { r_min: 0.0, r_max: 0.1 },
            KernelSpec::Constant { value: 1.0 },
            None,
        )
        .unwrap();
        let part = grid(2, 2);
        let r = reference_measure(&uniform, &part).unwrap();
        for c in 0..part.len() {
            assert_relative_eq!(r.mass(c), 0.125, max_relative = 1e-14);
        }
        assert_relative_eq!(r.total(), 1.0, max_relative = 1e-14);

        let coarse = grid(1, 1);
        let back = coarsen(&r, &coarse).unwrap();
        assert_relative_eq!(back.mass(0), reference_measure(&uniform, &coarse).unwrap().mass(0), max_relative = 1e-14);

        let cubic = crate::model::ScalingRegime::new(
            10.0,
            PositionLaw::Uniform,
            MarkLaw::Power { r_min: 0.0, r_max: 1.0, exponent: 3.0 },
            KernelSpec::Constant { value: 1.0 },
            None,
        )
        .unwrap();
        let part = Arc::new(Partition::uniform(&square(), &[1, 1], 0.0, 1.0, 2).unwrap());
        let r = reference_measure(&cubic, &part).unwrap();
        assert_relative_eq!(r.mass(0), 1.0 / 16.0, max_relative = 1e-14);
        assert_relative_eq!(r.mass(1), 15.0 / 16.0, max_relative = 1e-14);
    }

    #[test]
    fn measure_json_round_trip() {
        let part = Arc::new(Partition::interval(3).unwrap());
        let m = BinnedMeasure::from_masses(part, vec![0.25, 0.0, 0.75]).unwrap();
        let text = m.to_json(Some("abc")).unwrap();
        assert!(text.contains("\"config_digest\": \"abc\""));
        assert_eq!(BinnedMeasure::from_json(&text).unwrap(), m);
    }

    #[test]
    fn pair_csv_round_trip() {
        let part = Arc::new(Partition::interval(2).unwrap());
        let pm = BinnedPairMeasure::from_masses(part.clone(), vec![0.2, 0.1, 0.1, 0.0]).unwrap();
        let mut buf = Vec::new();
        pm.write_csv(&mut buf, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "cell_a,cell_b,mass\n0,0,0.2\n0,1,0.1\n1,0,0.1\n");
        assert_eq!(BinnedPairMeasure::read_csv(text.as_bytes(), part).unwrap(), pm);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_config() -> impl Strategy<Value = MarkedConfiguration> {
            prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64, 0.0..=0.1f64), 0..60)
                .prop_map(|pts| config(pts, 25.0))
        }

        proptest! {
            #[test]
            fn measure_identities_hold(cfg in random_config()) {
                let part = grid(3, 2);
                let net = build_hard(&cfg, &square()).unwrap();
                let l1 = empirical_mark_measure(&net, &part).unwrap();
                let l2 = empirical_connectivity_measure(&net, &part).unwrap();
                let n = cfg.points.len() as f64;
                prop_assert!((l1.total() - n / 25.0).abs() <= 1e-12);
                prop_assert!((l2.total() - 2.0 * net.edges().len() as f64 / 25.0).abs() <= 1e-12);
                prop_assert!(l2.check_symmetric().is_ok());
            }

            #[test]
            fn coarsening_commutes_with_construction(cfg in random_config()) {
                let fine = grid(4, 2);
                let coarse = grid(2, 1);
                let net = build_hard(&cfg, &square()).unwrap();
                let direct = empirical_mark_measure(&net, &coarse).unwrap();
                let via = coarsen(&empirical_mark_measure(&net, &fine).unwrap(), &coarse).unwrap();
                for c in 0..coarse.len() {
                    prop_assert!((direct.mass(c) - via.mass(c)).abs() <= 1e-12);
                }
                let d2 = empirical_connectivity_measure(&net, &coarse).unwrap();
                let v2 = coarsen_pairs(&empirical_connectivity_measure(&net, &fine).unwrap(), &coarse).unwrap();
                for (a, b) in d2.masses().iter().zip(v2.masses()) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }
}
