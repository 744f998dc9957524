//! Boolean connectivity graphs.
//!
//! Hard mode connects two devices when their closed balls intersect and
//! prunes pairs with a uniform spatial hash grid. Soft mode keeps each pair
//! independently with probability `min(1, Ψ/λ)`.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Domain, Topology};
use crate::model::{edge_probability_at_lambda, ScalingRegime};
use crate::sampler::{rng_from_seed, MarkedConfiguration};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Hard,
    Soft,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Mode::Hard),
            "soft" => Ok(Mode::Soft),
            other => Err(Error::InvalidArgument(format!(
                "mode must be hard or soft, got {other:?}"
            ))),
        }
    }
}

/// A configuration together with its edge list. Edges are `(i, j)` with
/// `i < j`, sorted and free of duplicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BooleanNetwork {
    config: MarkedConfiguration,
    edges: Vec<(usize, usize)>,
    mode: Mode,
}

impl BooleanNetwork {
    /// Canonicalizes `edges` and checks the graph invariants.
    pub fn from_parts(
        config: MarkedConfiguration,
        mut edges: Vec<(usize, usize)>,
        mode: Mode,
    ) -> Result<Self> {
        let n = config.len();
        for e in edges.iter_mut() {
            if e.0 == e.1 || e.0 >= n || e.1 >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({}, {}) invalid for {n} points",
                    e.0, e.1
                )));
            }
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(Self { config, edges, mode })
    }

    pub fn config(&self) -> &MarkedConfiguration {
        &self.config
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.config.len()];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn write_edges_csv<W: Write>(&self, mut out: W, config_digest: Option<&str>) -> Result<()> {
        if let Some(d) = config_digest {
            writeln!(out, "# config_digest={d}")?;
        }
        writeln!(out, "i,j")?;
        for (i, j) in &self.edges {
            writeln!(out, "{i},{j}")?;
        }
        Ok(())
    }
}

/// Reads an `i,j` edge list written by [`BooleanNetwork::write_edges_csv`].
pub fn read_edges_csv<R: BufRead>(input: R) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t == "i,j" {
            continue;
        }
        let parse = |s: Option<&str>| {
            s.and_then(|v| v.trim().parse::<usize>().ok())
                .ok_or_else(|| Error::Parse {
                    line: lineno + 1,
                    message: format!("expected i,j but found {t:?}"),
                })
        };
        let mut it = t.split(',');
        edges.push((parse(it.next())?, parse(it.next())?));
    }
    Ok(edges)
}

const MAX_CELLS_PER_AXIS: usize = 1024;

/// Uniform hash grid over the domain with cells at least `2 r_max` wide,
/// so intersecting balls always sit in the same or adjacent cells.
#[derive(Debug, Clone)]
pub struct SpatialGrid {
    cells_per_axis: Vec<usize>,
    lower: Vec<f64>,
    side: Vec<f64>,
    /// Point indices grouped by cell; cell `c` owns `order[start[c]..start[c + 1]]`.
    order: Vec<usize>,
    start: Vec<usize>,
    periodic: bool,
}

impl SpatialGrid {
    pub fn new(config: &MarkedConfiguration, dom: &Domain) -> Result<Self> {
        let d = dom.dimension();
        let r_max = config.max_radius();
        let periodic = dom.topology() == Topology::Periodic;
        // Keep the total cell count near the point count so sparse grids stay cheap.
        let budget = (config.len().max(1) as f64 * 4.0).powf(1.0 / d as f64).ceil() as usize;
        let mut cells_per_axis = Vec::with_capacity(d);
        for a in 0..d {
            let side = dom.side(a);
            if !(side.is_finite() && side > 0.0) {
                return Err(Error::InvalidDomain(format!("axis {a} has side {side}")));
            }
            let mut k = if r_max > 0.0 {
                (side / (2.0 * r_max * (1.0 + 1e-9))).floor() as usize
            } else {
                MAX_CELLS_PER_AXIS
            };
            k = k.clamp(1, MAX_CELLS_PER_AXIS.min(budget.max(1)));
            // On a torus fewer than three cells would make the stencil revisit
            // the same neighbour through both faces.
            if periodic && k < 3 {
                k = 1;
            }
            cells_per_axis.push(k);
        }
        let mut grid = Self {
            cells_per_axis,
            lower: dom.lower().to_vec(),
            side: (0..d).map(|a| dom.side(a)).collect(),
            order: Vec::new(),
            start: Vec::new(),
            periodic,
        };
        let total: usize = grid.cells_per_axis.iter().product();
        let mut cell_of = Vec::with_capacity(config.len());
        for p in &config.points {
            dom.check_dimension(p.position.len())?;
            cell_of.push(grid.linear_cell(&p.position));
        }
        let mut start = vec![0usize; total + 1];
        for &c in &cell_of {
            start[c + 1] += 1;
        }
        for c in 0..total {
            start[c + 1] += start[c];
        }
        let mut fill = start.clone();
        let mut order = vec![0; config.len()];
        for (i, &c) in cell_of.iter().enumerate() {
            order[fill[c]] = i;
            fill[c] += 1;
        }
        grid.order = order;
        grid.start = start;
        Ok(grid)
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells_per_axis
    }

    pub fn cell_count(&self) -> usize {
        self.start.len() - 1
    }

    fn axis_index(&self, a: usize, x: f64) -> usize {
        let k = self.cells_per_axis[a];
        let mut u = (x - self.lower[a]) / self.side[a];
        if self.periodic {
            u -= u.floor();
        }
        ((u * k as f64).floor().max(0.0) as usize).min(k - 1)
    }

    fn linear_cell(&self, x: &[f64]) -> usize {
        let mut c = 0;
        for (a, &k) in self.cells_per_axis.iter().enumerate() {
            c = c * k + self.axis_index(a, x[a]);
        }
        c
    }

    fn members(&self, cell: usize) -> &[usize] {
        &self.order[self.start[cell]..self.start[cell + 1]]
    }

    /// Neighbouring cells with a larger linear index, each listed once.
    fn upper_neighbours(&self, cell: usize) -> Vec<usize> {
        let d = self.cells_per_axis.len();
        let mut coords = vec![0usize; d];
        let mut rest = cell;
        for a in (0..d).rev() {
            coords[a] = rest % self.cells_per_axis[a];
            rest /= self.cells_per_axis[a];
        }
        let mut out = Vec::new();
        let mut offset = vec![-1i64; d];
        loop {
            let mut lin = 0usize;
            let mut valid = true;
            for a in 0..d {
                let k = self.cells_per_axis[a] as i64;
                if k == 1 && offset[a] != 0 {
                    valid = false;
                    break;
                }
                let mut c = coords[a] as i64 + offset[a];
                if self.periodic {
                    c = c.rem_euclid(k);
                } else if c < 0 || c >= k {
                    valid = false;
                    break;
                }
                lin = lin * k as usize + c as usize;
            }
            if valid && lin > cell {
                out.push(lin);
            }
            let mut a = 0;
            while a < d {
                offset[a] += 1;
                if offset[a] <= 1 {
                    break;
                }
                offset[a] = -1;
                a += 1;
            }
            if a == d {
                break;
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Candidate pairs `(i, j)`, `i < j`, whose anchor cell is `cell`.
    fn pairs_from(&self, cell: usize, mut visit: impl FnMut(usize, usize)) {
        let own = self.members(cell);
        for (s, &i) in own.iter().enumerate() {
            for &j in &own[s + 1..] {
                visit(i.min(j), i.max(j));
            }
        }
        for nb in self.upper_neighbours(cell) {
            for &i in own {
                for &j in self.members(nb) {
                    visit(i.min(j), i.max(j));
                }
            }
        }
    }
}

/// Every pair that could intersect, each at most once.
pub fn candidate_pairs(config: &MarkedConfiguration, dom: &Domain) -> Result<Vec<(usize, usize)>> {
    let grid = SpatialGrid::new(config, dom)?;
    let mut out = Vec::new();
    for cell in 0..grid.cell_count() {
        grid.pairs_from(cell, |i, j| out.push((i, j)));
    }
    Ok(out)
}

fn intersects(config: &MarkedConfiguration, dom: &Domain, i: usize, j: usize) -> bool {
    let (a, b) = (&config.points[i], &config.points[j]);
    let reach = a.radius + b.radius;
    let d2: f64 = (0..a.position.len())
        .map(|ax| {
            let t = dom.axis_delta(ax, a.position[ax], b.position[ax]);
            t * t
        })
        .sum();
    d2 <= reach * reach
}

/// Hard rule: an edge for every pair of intersecting closed balls.
pub fn build_hard(config: &MarkedConfiguration, dom: &Domain) -> Result<BooleanNetwork> {
    let grid = SpatialGrid::new(config, dom)?;
    let mut edges: Vec<(usize, usize)> = (0..grid.cell_count())
        .into_par_iter()
        .flat_map_iter(|cell| {
            let mut found = Vec::new();
            grid.pairs_from(cell, |i, j| {
                if intersects(config, dom, i, j) {
                    found.push((i, j));
                }
            });
            found
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    Ok(BooleanNetwork {
        config: config.clone(),
        edges,
        mode: Mode::Hard,
    })
}

/// All-pairs reference implementation of [`build_hard`].
pub fn build_hard_brute(config: &MarkedConfiguration, dom: &Domain) -> Result<BooleanNetwork> {
    for p in &config.points {
        dom.check_dimension(p.position.len())?;
    }
    let n = config.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if intersects(config, dom, i, j) {
                edges.push((i, j));
            }
        }
    }
    Ok(BooleanNetwork {
        config: config.clone(),
        edges,
        mode: Mode::Hard,
    })
}

/// Soft rule: each unordered pair is kept independently with probability
/// `min(1, Ψ(B_i, B_j)/λ)` at the regime's λ.
///
/// Pairs are visited in lexicographic order. When a bound `p_max` on the
/// edge probability is known the sampler jumps between candidate pairs with
/// geometric skips and thins each candidate by `p/p_max`, which is exact.
pub fn build_soft(
    config: &MarkedConfiguration,
    regime: &ScalingRegime,
    seed: u64,
) -> Result<BooleanNetwork> {
    let n = config.len();
    let mut edges = Vec::new();
    if n >= 2 {
        let lambda = regime.lambda();
        let kernel = regime.kernel();
        let prob = |i: usize, j: usize| -> Result<f64> {
            let (a, b) = (&config.points[i], &config.points[j]);
            edge_probability_at_lambda(kernel.eval(&a.position, a.radius, &b.position, b.radius)?, lambda)
        };
        let p_max = match kernel.sup_for_radius(config.max_radius()) {
            Some(sup) => edge_probability_at_lambda(sup, lambda)?,
            None => 1.0,
        };
        let mut rng = rng_from_seed(seed);
        if p_max > 0.5 {
            for i in 0..n {
                for j in i + 1..n {
                    let p = prob(i, j)?;
                    if p > 0.0 && rng.random::<f64>() < p {
                        edges.push((i, j));
                    }
                }
            }
        } else if p_max > 0.0 {
            let skip = Geometric::new(p_max)
                .map_err(|e| Error::Numerical(format!("geometric skip with p = {p_max}: {e}")))?;
            let (mut i, mut j) = (0usize, 0usize);
            loop {
                // advance (i, j) by skip + 1 positions in the pair order
                let mut step = skip.sample(&mut rng).saturating_add(1);
                while step > 0 {
                    let row_left = (n - 1 - j) as u64;
                    if step <= row_left {
                        j += step as usize;
                        step = 0;
                    } else {
                        step -= row_left;
                        i += 1;
                        if i >= n - 1 {
                            break;
                        }
                        j = i;
                    }
                }
                if i >= n - 1 {
                    break;
                }
                let p = prob(i, j)?;
                if p >= p_max || rng.random::<f64>() * p_max < p {
                    edges.push((i, j));
                }
            }
        }
    }
    Ok(BooleanNetwork {
        config: config.clone(),
        edges,
        mode: Mode::Soft,
    })
}
