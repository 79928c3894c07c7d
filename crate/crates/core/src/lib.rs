//! Numerical tractor calculus on analytic pseudo-Riemannian charts.
//!
//! The crate integrates distinguished curves (geodesics, null geodesics,
//! conformal circles), builds the parallel tractors that characterise them,
//! and evaluates the associated overdetermined-equation residuals and
//! first integrals.
//!
//! Everything is chart-based: a manifold is a single coordinate chart with a
//! metric given either by a catalog entry or by expression components, and
//! all derivative information is produced by truncated Taylor (jet)
//! arithmetic seeded per coordinate direction. Weighted objects are always
//! represented by their trivialisation in the scale of the active metric.

pub mod tensor;
pub mod geometry;
pub mod tractor;
pub mod curves;
pub mod bgg;
pub mod integrals;

pub use geometry::{curvature_at, ChartDomain, Geometry, Metric};
pub use tensor::{DenseTensor, Valence};
