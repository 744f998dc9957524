//! Boolean-model connectivity networks built on marked Poisson point
//! processes: sampling, empirical mark and connectivity measures, the rate
//! functions of their joint large-deviation principle, exact oracles, and
//! Monte-Carlo sweeps that check one against the other.

// `!(x >= 0.0)` is used deliberately so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod harness;
pub mod measures;
pub mod model;
pub mod network;
pub mod oracle;
pub mod quadrature;
pub mod rates;
pub mod sampler;

pub use error::{Error, Result};
pub use geometry::{Ball, Domain, Topology};
pub use measures::{BinnedMeasure, BinnedPairMeasure, Partition};
pub use model::{KernelSpec, MarkLaw, PaperScaling, PositionLaw, ScalingRegime};
pub use network::{BooleanNetwork, Mode};
pub use rates::RateValue;
pub use sampler::{MarkedConfiguration, MarkedPoint};
