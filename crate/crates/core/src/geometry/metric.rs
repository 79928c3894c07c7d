//! Metric specifications and pointwise derivative packages.
//!
//! A manifold is one coordinate chart carrying an analytic metric. The
//! catalog entries (flat spaces, round spheres in stereographic
//! coordinates, the Poincare ball) have native evaluators; arbitrary
//! analytic metrics come in as a matrix of parsed expressions. Every
//! evaluator works over jets, so one code path produces the metric and its
//! partial derivatives to third order, which is exactly the order the
//! curvature, Cotton and splitting-operator formulas consume.

use thiserror::Error;

use super::expr::{Expr, ParseError, Scalar};
use super::jet::point_derivatives;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("chart dimension {0} unsupported (need 2..=6)")]
    BadDimension(usize),
    #[error("expression matrix needs {want} components, got {got}")]
    BadComponentCount { want: usize, got: usize },
    #[error("component ({a},{b}) mentions coordinate x{coord} beyond dimension {dim}")]
    CoordinateOutOfRange { a: usize, b: usize, coord: usize, dim: usize },
    #[error("signature must list +1/-1 per dimension")]
    BadSignature,
    #[error("signature split {p}+{q} does not match dimension {dim}")]
    BadSplit { p: usize, q: usize, dim: usize },
    #[error("metric is not symmetric at the evaluation point: |g[{a}][{b}] - g[{b}][{a}]| = {diff:.3e}")]
    NonSymmetric { a: usize, b: usize, diff: f64 },
    #[error("metric evaluation produced a non-finite value at {x:?}")]
    NonFinite { x: Vec<f64> },
    #[error("metric degenerate at {x:?}: |det g| = {det:.3e} below 1e-12")]
    Degenerate { x: Vec<f64>, det: f64 },
    #[error("metric signature at {x:?} is ({pos},{neg}), declared ({dpos},{dneg})")]
    SignatureMismatch { x: Vec<f64>, pos: usize, neg: usize, dpos: usize, dneg: usize },
    #[error("point {x:?} lies outside the chart domain")]
    OutsideChart { x: Vec<f64> },
    #[error("sphere radius must be positive, got {0}")]
    BadRadius(f64),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Region of the chart on which evaluation is trusted.
#[derive(Debug, Clone)]
pub enum ChartDomain {
    /// Whole coordinate space.
    All,
    /// Open Euclidean ball of the given radius about the origin.
    Ball { radius: f64 },
    /// Axis-aligned open box, one `[lo, hi]` pair per coordinate.
    Box(Vec<[f64; 2]>),
}

impl ChartDomain {
    /// Whether a point lies inside the domain.
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            ChartDomain::All => true,
            ChartDomain::Ball { radius } => {
                x.iter().map(|v| v * v).sum::<f64>() < radius * radius
            }
            ChartDomain::Box(ranges) => x
                .iter()
                .zip(ranges)
                .all(|(v, r)| *v > r[0] && *v < r[1]),
        }
    }
}

#[derive(Debug, Clone)]
enum MetricKind {
    Euclidean,
    Minkowski { p: usize },
    SphereStereographic { radius: f64 },
    PoincareBall,
    ExpressionMatrix { components: Vec<Expr> },
    Rescaled { base: Box<MetricKind>, phi: Expr },
}

/// An analytic metric on a single chart.
#[derive(Debug, Clone)]
pub struct Metric {
    dim: usize,
    kind: MetricKind,
    signature: Vec<i8>,
    domain: ChartDomain,
}

impl Metric {
    /// Flat Euclidean metric on R^n.
    pub fn euclidean(dim: usize) -> Result<Metric, MetricError> {
        check_dim(dim)?;
        Ok(Metric {
            dim,
            kind: MetricKind::Euclidean,
            signature: vec![1; dim],
            domain: ChartDomain::All,
        })
    }

    /// Flat metric of signature (p, q), the first p coordinates spacelike.
    pub fn minkowski(p: usize, q: usize) -> Result<Metric, MetricError> {
        let dim = p + q;
        check_dim(dim)?;
        if p == 0 || q == 0 {
            return Err(MetricError::BadSplit { p, q, dim });
        }
        let mut signature = vec![1i8; p];
        signature.extend(std::iter::repeat(-1).take(q));
        Ok(Metric { dim, kind: MetricKind::Minkowski { p }, signature, domain: ChartDomain::All })
    }

    /// Round sphere of the given radius in stereographic coordinates,
    /// g = (2 R^2 / (R^2 + |x|^2))^2 delta.
    pub fn sphere_stereographic(dim: usize, radius: f64) -> Result<Metric, MetricError> {
        check_dim(dim)?;
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(MetricError::BadRadius(radius));
        }
        Ok(Metric {
            dim,
            kind: MetricKind::SphereStereographic { radius },
            signature: vec![1; dim],
            // The chart covers the sphere minus a point; stay where the
            // conformal factor is comfortably away from underflow.
            domain: ChartDomain::Ball { radius: 8.0 * radius },
        })
    }

    /// Hyperbolic space as the unit Poincare ball, g = 4 delta / (1 - |x|^2)^2.
    pub fn poincare_ball(dim: usize) -> Result<Metric, MetricError> {
        check_dim(dim)?;
        Ok(Metric {
            dim,
            kind: MetricKind::PoincareBall,
            signature: vec![1; dim],
            domain: ChartDomain::Ball { radius: 1.0 },
        })
    }

    /// Metric from an n x n matrix of expressions (row-major).
    pub fn expression_matrix(
        dim: usize,
        components: Vec<Expr>,
        signature: Vec<i8>,
    ) -> Result<Metric, MetricError> {
        check_dim(dim)?;
        if components.len() != dim * dim {
            return Err(MetricError::BadComponentCount { want: dim * dim, got: components.len() });
        }
        if signature.len() != dim || signature.iter().any(|s| *s != 1 && *s != -1) {
            return Err(MetricError::BadSignature);
        }
        for (i, comp) in components.iter().enumerate() {
            if let Some(c) = comp.max_coord() {
                if c >= dim {
                    return Err(MetricError::CoordinateOutOfRange {
                        a: i / dim,
                        b: i % dim,
                        coord: c + 1,
                        dim,
                    });
                }
            }
        }
        Ok(Metric {
            dim,
            kind: MetricKind::ExpressionMatrix { components },
            signature,
            domain: ChartDomain::All,
        })
    }

    /// Parse a row-major list of component strings.
    pub fn expression_matrix_from_strs(
        dim: usize,
        components: &[&str],
        signature: Vec<i8>,
    ) -> Result<Metric, MetricError> {
        let parsed = components
            .iter()
            .map(|s| Expr::parse(s))
            .collect::<Result<Vec<_>, _>>()?;
        Metric::expression_matrix(dim, parsed, signature)
    }

    /// Same metric restricted to a custom chart domain.
    pub fn with_domain(mut self, domain: ChartDomain) -> Metric {
        self.domain = domain;
        self
    }

    /// Conformally related metric e^{2 phi} g for an expression phi.
    pub fn conformal_rescale(&self, phi: Expr) -> Result<Metric, MetricError> {
        if let Some(c) = phi.max_coord() {
            if c >= self.dim {
                return Err(MetricError::CoordinateOutOfRange {
                    a: 0,
                    b: 0,
                    coord: c + 1,
                    dim: self.dim,
                });
            }
        }
        Ok(Metric {
            dim: self.dim,
            kind: MetricKind::Rescaled { base: Box::new(self.kind.clone()), phi },
            signature: self.signature.clone(),
            domain: self.domain.clone(),
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn signature(&self) -> &[i8] {
        &self.signature
    }

    #[inline]
    pub fn domain(&self) -> &ChartDomain {
        &self.domain
    }

    /// Count of positive/negative directions in the declared signature.
    pub fn signature_counts(&self) -> (usize, usize) {
        let pos = self.signature.iter().filter(|s| **s > 0).count();
        (pos, self.dim - pos)
    }

    /// Error unless the point lies inside the chart domain.
    pub fn require_in_domain(&self, x: &[f64]) -> Result<(), MetricError> {
        if self.domain.contains(x) {
            Ok(())
        } else {
            Err(MetricError::OutsideChart { x: x.to_vec() })
        }
    }

    /// Evaluate the component matrix over any scalar type.
    pub fn eval_components<T: Scalar>(&self, x: &[T], out: &mut [T]) {
        eval_kind(&self.kind, self.dim, x, out);
    }

    /// Metric matrix, inverse and determinant at a point.
    pub fn matrix_at(&self, x: &[f64]) -> Result<MetricMatrices, MetricError> {
        let n = self.dim;
        let mut comps = vec![0.0; n * n];
        self.eval_components(x, &mut comps);
        self.finish_matrices(x, comps)
    }

    fn finish_matrices(&self, x: &[f64], comps: Vec<f64>) -> Result<MetricMatrices, MetricError> {
        let n = self.dim;
        if comps.iter().any(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite { x: x.to_vec() });
        }
        for a in 0..n {
            for b in (a + 1)..n {
                let diff = (comps[a * n + b] - comps[b * n + a]).abs();
                let scale = comps.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                if diff > 1e-9 * scale {
                    return Err(MetricError::NonSymmetric { a, b, diff });
                }
            }
        }
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| comps[i * n + j]);
        let det = m.determinant();
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(MetricError::Degenerate { x: x.to_vec(), det: det.abs() });
        }
        let inv = m
            .clone()
            .try_inverse()
            .ok_or(MetricError::Degenerate { x: x.to_vec(), det: det.abs() })?;
        let mut g_inv = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                g_inv[i * n + j] = inv[(i, j)];
            }
        }
        Ok(MetricMatrices { dim: n, g: comps, g_inv, det })
    }

    /// Check the pointwise eigenvalue signs against the declared signature.
    pub fn check_signature_at(&self, x: &[f64]) -> Result<(), MetricError> {
        let n = self.dim;
        let mats = self.matrix_at(x)?;
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| mats.g[i * n + j]);
        let eig = nalgebra::SymmetricEigen::new(m);
        let pos = eig.eigenvalues.iter().filter(|v| **v > 0.0).count();
        let neg = n - pos;
        let (dpos, dneg) = self.signature_counts();
        if pos != dpos || neg != dneg {
            return Err(MetricError::SignatureMismatch { x: x.to_vec(), pos, neg, dpos, dneg });
        }
        Ok(())
    }

    /// Metric with partial derivatives up to `order` at a point.
    pub fn derivatives_at(&self, x: &[f64], order: usize) -> Result<MetricDerivatives, MetricError> {
        let n = self.dim;
        self.require_in_domain(x)?;
        let pd = point_derivatives(n, n * n, order, x, |seeds, out| {
            self.eval_components(seeds, out);
        });
        if pd.value.iter().any(|v| !v.is_finite())
            || pd.grad.iter().any(|v| !v.is_finite())
            || pd.hess.iter().any(|v| !v.is_finite())
            || pd.third.iter().any(|v| !v.is_finite())
        {
            return Err(MetricError::NonFinite { x: x.to_vec() });
        }
        let mats = self.finish_matrices(x, pd.value.clone())?;

        // Reorder the per-output derivative arrays into derivative-first
        // layout: dg[c][a][b], d2g[c][d][a][b], d3g[c][d][e][a][b].
        let mut dg = vec![0.0; if order >= 1 { n * n * n } else { 0 }];
        let mut d2g = vec![0.0; if order >= 2 { n * n * n * n } else { 0 }];
        let mut d3g = vec![0.0; if order >= 3 { n * n * n * n * n } else { 0 }];
        for a in 0..n {
            for b in 0..n {
                let o = a * n + b;
                for c in 0..n {
                    if order >= 1 {
                        dg[(c * n + a) * n + b] = pd.grad_of(o, c);
                    }
                    for d in 0..n {
                        if order >= 2 {
                            d2g[((c * n + d) * n + a) * n + b] = pd.hess_of(o, c, d);
                        }
                        if order >= 3 {
                            for e in 0..n {
                                d3g[(((c * n + d) * n + e) * n + a) * n + b] =
                                    pd.third_of(o, c, d, e);
                            }
                        }
                    }
                }
            }
        }
        Ok(MetricDerivatives { dim: n, order, mats, dg, d2g, d3g })
    }
}

fn check_dim(dim: usize) -> Result<(), MetricError> {
    if (2..=6).contains(&dim) {
        Ok(())
    } else {
        Err(MetricError::BadDimension(dim))
    }
}

fn eval_kind<T: Scalar>(kind: &MetricKind, n: usize, x: &[T], out: &mut [T]) {
    let zero = T::from_f64(0.0);
    match kind {
        MetricKind::Euclidean => {
            for a in 0..n {
                for b in 0..n {
                    out[a * n + b] = T::from_f64(if a == b { 1.0 } else { 0.0 });
                }
            }
        }
        MetricKind::Minkowski { p } => {
            for a in 0..n {
                for b in 0..n {
                    let v = if a == b {
                        if a < *p {
                            1.0
                        } else {
                            -1.0
                        }
                    } else {
                        0.0
                    };
                    out[a * n + b] = T::from_f64(v);
                }
            }
        }
        MetricKind::SphereStereographic { radius } => {
            let r2 = T::from_f64(radius * radius);
            let mut s = zero;
            for v in x {
                s = s.add(v.mul(*v));
            }
            let f = T::from_f64(2.0 * radius * radius).div(r2.add(s));
            let f2 = f.mul(f);
            for a in 0..n {
                for b in 0..n {
                    out[a * n + b] = if a == b { f2 } else { zero };
                }
            }
        }
        MetricKind::PoincareBall => {
            let mut s = zero;
            for v in x {
                s = s.add(v.mul(*v));
            }
            let f = T::from_f64(2.0).div(T::from_f64(1.0).sub(s));
            let f2 = f.mul(f);
            for a in 0..n {
                for b in 0..n {
                    out[a * n + b] = if a == b { f2 } else { zero };
                }
            }
        }
        MetricKind::ExpressionMatrix { components } => {
            for (o, comp) in components.iter().enumerate() {
                out[o] = comp.eval(x);
            }
        }
        MetricKind::Rescaled { base, phi } => {
            eval_kind(base, n, x, out);
            let p = phi.eval(x);
            let factor = p.add(p).exp();
            for o in out.iter_mut() {
                *o = o.mul(factor);
            }
        }
    }
}

/// Metric matrix with inverse at one point.
#[derive(Debug, Clone)]
pub struct MetricMatrices {
    pub dim: usize,
    /// g_ab row-major.
    pub g: Vec<f64>,
    /// g^ab row-major.
    pub g_inv: Vec<f64>,
    pub det: f64,
}

impl MetricMatrices {
    /// g(u, v).
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let n = self.dim;
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                s += self.g[a * n + b] * u[a] * v[b];
            }
        }
        s
    }

    /// Lower an index: u_a = g_ab u^b.
    pub fn lower(&self, u: &[f64]) -> Vec<f64> {
        let n = self.dim;
        (0..n)
            .map(|a| (0..n).map(|b| self.g[a * n + b] * u[b]).sum())
            .collect()
    }

    /// Raise an index: w^a = g^ab w_b.
    pub fn raise(&self, w: &[f64]) -> Vec<f64> {
        let n = self.dim;
        (0..n)
            .map(|a| (0..n).map(|b| self.g_inv[a * n + b] * w[b]).sum())
            .collect()
    }
}

/// Metric with partials in derivative-first layout.
#[derive(Debug, Clone)]
pub struct MetricDerivatives {
    pub dim: usize,
    pub order: usize,
    pub mats: MetricMatrices,
    /// dg[c][a][b] = d_c g_ab.
    pub dg: Vec<f64>,
    /// d2g[c][d][a][b].
    pub d2g: Vec<f64>,
    /// d3g[c][d][e][a][b].
    pub d3g: Vec<f64>,
}
