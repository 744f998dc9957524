//! Reproducible sampling of marked Poisson point processes.
//!
//! A configuration is drawn by counting then placing: `N ~ Poisson(λ)`, then
//! `N` independent marked points from `position_law ⊗ mark_law`. Every
//! draw comes from a ChaCha8 stream keyed by a 64-bit seed, so a
//! `(regime, domain, seed)` triple always yields the same configuration.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ball, Domain};
use crate::measures::Partition;
use crate::model::{PositionLaw, ScalingRegime};

/// A device: its position and coverage radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedPoint {
    pub position: Vec<f64>,
    pub radius: f64,
}

impl MarkedPoint {
    pub fn new(position: Vec<f64>, radius: f64) -> Self {
        Self { position, radius }
    }

    pub fn ball(&self) -> Ball {
        Ball {
            center: self.position.clone(),
            radius: self.radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedConfiguration {
    pub points: Vec<MarkedPoint>,
    pub lambda: f64,
    pub seed: u64,
}

impl MarkedConfiguration {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_radius(&self) -> f64 {
        self.points.iter().map(|p| p.radius).fold(0.0, f64::max)
    }

    /// One point per line: the coordinates then the radius, whitespace
    /// separated. Lines starting with `#` are comments.
    pub fn write_text<W: Write>(&self, mut out: W, config_digest: Option<&str>) -> Result<()> {
        if let Some(d) = config_digest {
            writeln!(out, "# config_digest={d}")?;
        }
        writeln!(out, "# lambda={} seed={}", self.lambda, self.seed)?;
        for p in &self.points {
            for x in &p.position {
                write!(out, "{x} ")?;
            }
            writeln!(out, "{}", p.radius)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R, lambda: f64, seed: u64) -> Result<Self> {
        let mut points = Vec::new();
        let mut dim = None;
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let values = t
                .split_whitespace()
                .map(|v| {
                    v.parse::<f64>().map_err(|e| Error::Parse {
                        line: lineno + 1,
                        message: format!("{v:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() < 2 || dim.is_some_and(|d| d != values.len()) {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("unexpected field count {}", values.len()),
                });
            }
            dim = Some(values.len());
            let (radius, position) = values.split_last().expect("at least two fields");
            points.push(MarkedPoint::new(position.to_vec(), *radius));
        }
        Ok(Self {
            points,
            lambda,
            seed,
        })
    }
}

/// SplitMix64 finalizer applied to `(master, index)`.
pub fn replica_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn poisson_draw<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean)
        .map_err(|e| Error::InvalidArgument(format!("poisson mean {mean}: {e}")))?;
    Ok(dist.sample(rng) as u64)
}

/// Number of devices `|I|` of the configuration that `sample_marked_ppp`
/// would draw for the same seed.
pub fn sample_point_count(lambda: f64, seed: u64) -> Result<u64> {
    poisson_draw(lambda, &mut rng_from_seed(seed))
}

pub fn sample_marked_ppp(
    regime: &ScalingRegime,
    dom: &Domain,
    seed: u64,
) -> Result<MarkedConfiguration> {
    regime.mark_law().validate()?;
    regime.position_law().validate(dom)?;
    let mut rng = rng_from_seed(seed);
    let n = poisson_draw(regime.lambda(), &mut rng)?;
    let points = (0..n)
        .map(|_| {
            let position = regime.position_law().sample(dom, &mut rng);
            let radius = regime.mark_law().sample(&mut rng);
            MarkedPoint::new(position, radius)
        })
        .collect();
    Ok(MarkedConfiguration {
        points,
        lambda: regime.lambda(),
        seed,
    })
}

/// A configuration with exactly `counts[c]` points in cell `c`, each drawn
/// from the sampling law conditioned on its cell. Used for experiments that
/// condition on the empirical mark measure.
pub fn sample_with_cell_counts(
    regime: &ScalingRegime,
    part: &Arc<Partition>,
    counts: &[u64],
    seed: u64,
) -> Result<MarkedConfiguration> {
    if counts.len() != part.len() {
        return Err(Error::InvalidArgument(format!(
            "{} counts for {} cells",
            counts.len(),
            part.len()
        )));
    }
    if !matches!(regime.position_law(), PositionLaw::Uniform) {
        return Err(Error::InvalidArgument(
            "cell-conditioned sampling supports the uniform position law".into(),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let mut points = Vec::with_capacity(counts.iter().sum::<u64>() as usize);
    for (cell, &k) in counts.iter().enumerate() {
        if k == 0 {
            continue;
        }
        let b = part.cell_bounds(cell);
        if regime.mark_law().interval_mass(b.r_lo, b.r_hi, b.r_hi_closed) == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "cell {cell} carries no mark-law mass"
            )));
        }
        for _ in 0..k {
            let position = b
                .lower
                .iter()
                .zip(&b.upper)
                .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                .collect();
            let radius = regime.mark_law().sample_within(b.r_lo, b.r_hi, &mut rng);
            points.push(MarkedPoint::new(position, radius));
        }
    }
    Ok(MarkedConfiguration {
        points,
        lambda: regime.lambda(),
        seed,
    })
}
