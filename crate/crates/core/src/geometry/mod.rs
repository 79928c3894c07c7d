//! Charts, metrics and curvature.
//!
//! Submodules: [`jet`] for truncated Taylor arithmetic, [`expr`] for the
//! scalar expression language, [`metric`] for chart and metric
//! specification, [`curvature`] for the derived curvature snapshots,
//! [`catalog`] for ready-made named charts.

pub mod catalog;
pub mod curvature;
pub mod expr;
pub mod jet;
pub mod metric;

pub use catalog::{catalog, catalog_metric, CatalogEntry};
pub use curvature::{
    christoffel_at, connection_at, curvature_at, ChristoffelData, ConformalPack, Connection,
    Geometry, ProjectivePack,
};
pub use expr::{Expr, Func, ParseError, Scalar};
pub use jet::{point_derivatives, Jet, PointDerivatives};
pub use metric::{ChartDomain, Metric, MetricDerivatives, MetricError, MetricMatrices};
