//! Named chart catalog: ready-made metrics with domains and descriptions.
//!
//! The catalog collects the charts used throughout the test suite and the
//! command-line front end: flat models in both signatures, the round sphere
//! and hyperbolic space as curved conformally flat examples, a generic bumpy
//! Riemannian chart with nonzero Cotton tensor, and a vacuum plane wave
//! whose Weyl tensor is nonzero. Entries are looked up by name.

use super::metric::{ChartDomain, Metric, MetricError};

/// One named chart with display metadata.
#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub dim: usize,
    /// Signature as (positive, negative) counts.
    pub signature: (usize, usize),
    pub metric: Metric,
}

fn bumpy3() -> Result<Metric, MetricError> {
    // Diagonally dominant on the box, hence positive definite, with
    // generic curvature: nonzero Cotton tensor in three dimensions.
    let m = Metric::expression_matrix_from_strs(
        3,
        &[
            "1 + 0.3*x2^2",
            "0.1*x3",
            "0",
            "0.1*x3",
            "1 + 0.2*x1^2",
            "0.05*x2",
            "0",
            "0.05*x2",
            "1 + 0.05*x1*x2",
        ],
        vec![1, 1, 1],
    )?;
    Ok(m.with_domain(ChartDomain::Box(vec![[-3.0, 3.0], [-3.0, 3.0], [-3.0, 3.0]])))
}

fn plane_wave4() -> Result<Metric, MetricError> {
    // pp-wave in Brinkmann form with harmonic profile: Ricci flat, so the
    // Schouten tensors vanish while the Weyl tensor does not.
    Metric::expression_matrix_from_strs(
        4,
        &[
            "(x3^2 - x4^2)*sin(x1)",
            "1",
            "0",
            "0",
            "1",
            "0",
            "0",
            "0",
            "0",
            "0",
            "1",
            "0",
            "0",
            "0",
            "0",
            "1",
        ],
        vec![1, 1, 1, -1],
    )
}

/// Every catalog entry, in stable order.
pub fn catalog() -> Vec<CatalogEntry> {
    let build = || -> Result<Vec<CatalogEntry>, MetricError> {
        Ok(vec![
            CatalogEntry {
                name: "euclidean2",
                description: "flat Euclidean plane",
                dim: 2,
                signature: (2, 0),
                metric: Metric::euclidean(2)?,
            },
            CatalogEntry {
                name: "euclidean3",
                description: "flat Euclidean 3-space",
                dim: 3,
                signature: (3, 0),
                metric: Metric::euclidean(3)?,
            },
            CatalogEntry {
                name: "minkowski12",
                description: "flat Lorentzian 3-space, signature (1,2)",
                dim: 3,
                signature: (1, 2),
                metric: Metric::minkowski(1, 2)?,
            },
            CatalogEntry {
                name: "sphere3",
                description: "round unit 3-sphere, stereographic chart",
                dim: 3,
                signature: (3, 0),
                metric: Metric::sphere_stereographic(3, 1.0)?,
            },
            CatalogEntry {
                name: "hyperbolic3",
                description: "hyperbolic 3-space, Poincare ball chart",
                dim: 3,
                signature: (3, 0),
                metric: Metric::poincare_ball(3)?,
            },
            CatalogEntry {
                name: "bumpy3",
                description: "generic bumpy Riemannian chart on a box",
                dim: 3,
                signature: (3, 0),
                metric: bumpy3()?,
            },
            CatalogEntry {
                name: "plane_wave4",
                description: "vacuum plane wave in Brinkmann coordinates",
                dim: 4,
                signature: (3, 1),
                metric: plane_wave4()?,
            },
        ])
    };
    build().expect("catalog entries are statically valid")
}

/// Look up a catalog metric by name.
pub fn catalog_metric(name: &str) -> Option<Metric> {
    catalog().into_iter().find(|e| e.name == name).map(|e| e.metric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::christoffel_at;

    // Every entry evaluates at an interior point and its declared signature
    // matches the eigenvalue signs of the evaluated matrix.
    #[test]
    fn entries_evaluate_and_match_signature() {
        let entries = catalog();
        assert!(entries.len() >= 5);
        for entry in &entries {
            let x = vec![0.11; entry.dim];
            let chr = christoffel_at(&entry.metric, &x).unwrap();
            let gm = nalgebra::DMatrix::from_fn(entry.dim, entry.dim, |i, j| {
                chr.g[i * entry.dim + j]
            });
            let eig = gm.symmetric_eigen();
            let pos = eig.eigenvalues.iter().filter(|v| **v > 0.0).count();
            assert_eq!(
                (pos, entry.dim - pos),
                entry.signature,
                "signature mismatch for {}",
                entry.name
            );
        }
        assert!(catalog_metric("sphere3").is_some());
        assert!(catalog_metric("no_such_chart").is_none());
    }
}
