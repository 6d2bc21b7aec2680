//! Percolation lace-expansion toolkit: lattices, finite-graph events, exact
//! enumeration, Monte Carlo, lattice diagrams, power counting and analysis.

pub mod analysis;
pub mod diagrams;
pub mod events;
pub mod lattice;
pub mod mc;
pub mod oracle;
pub mod powercount;
pub mod quadrature;
pub mod scalar;

pub use events::{BondSiteConfig, FiniteGraph, SiteSet};
pub use lattice::{LatticeKind, LatticeSpec, TorusIndexer};
pub use scalar::{Real, Weight};

/// Exact weights for identity checks.
pub type Exact = num_rational::BigRational;
/// Exact value in floating point.
pub type ExactValueF64 = oracle::ExactValue<f64>;
/// Exact value as a rational.
pub type ExactValueQ = oracle::ExactValue<Exact>;
/// Wave vector in double precision.
pub type WaveVec = lattice::WaveVector<f64>;
