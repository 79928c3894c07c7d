//! Tractor bundles: connection matrices, transport, curvature.
//!
//! The projective tractor bundle over an n-chart has fibre dimension n + 1,
//! the conformal one n + 2. Components are stored in the splitting induced
//! by the active metric, with slot layout
//!
//! * projective, standard tractor (nu^b, rho): nu in slots 0..n, rho in
//!   slot n;
//! * conformal, standard tractor (sigma, mu^b, rho): sigma in slot 0, mu in
//!   slots 1..=n, rho in slot n + 1.
//!
//! Cotractor components are coordinates in the dual basis, so pairing an
//! upper with a lower tractor is a plain slotwise contraction.
//!
//! The connection enters through per-direction matrices C_a with
//! (nabla_a V)^I = d_a V^I + C_a[I][J] V^J on upper slots and the negative
//! transpose action on lower slots. Parallel transport solves
//! dT/dt = -(u^a C_a) * T slotwise along a sampled curve.

use thiserror::Error;

use crate::geometry::curvature::{connection_at, i2, i3, i4, Connection, Geometry};
use crate::geometry::{Metric, MetricError};
use crate::tensor::{DenseTensor, TensorError, Valence};

#[derive(Debug, Error)]
pub enum TractorError {
    #[error("conformal tractors need dimension >= 3, chart has {0}")]
    NeedsDimension3(usize),
    #[error("transport supports tractor rank 1..=4, got {0}")]
    UnsupportedRank(usize),
    #[error("tensor has tractor dimension {got}, structure needs {want}")]
    WrongTractorDim { want: usize, got: usize },
    #[error("path needs at least {want} samples, got {got}")]
    PathTooShort { want: usize, got: usize },
    #[error("path samples must be uniformly spaced in t (step {0:.3e} vs {1:.3e})")]
    NonUniformStep(f64, f64),
    #[error("path sample {0} has mismatched chart dimension")]
    BadSampleDim(usize),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Which parabolic geometry the tractor bundle belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    Projective,
    Conformal,
}

impl Structure {
    /// Fibre dimension of the standard tractor bundle over an n-chart.
    #[inline]
    pub fn tractor_dim(self, n: usize) -> usize {
        match self {
            Structure::Projective => n + 1,
            Structure::Conformal => n + 2,
        }
    }
}

/// Connection matrices C_a at one point, laid out [a][I][J].
#[derive(Debug, Clone)]
pub struct ConnectionMatrices {
    pub dim: usize,
    pub tractor_dim: usize,
    pub structure: Structure,
    mats: Vec<f64>,
}

impl ConnectionMatrices {
    /// Build the matrices from a connection-level snapshot.
    pub fn new(conn: &Connection, structure: Structure) -> Result<Self, TractorError> {
        let n = conn.dim();
        let nt = structure.tractor_dim(n);
        let g = &conn.chr.g;
        let gamma = &conn.chr.gamma;
        let mut mats = vec![0.0; n * nt * nt];
        match structure {
            Structure::Projective => {
                // nabla_a (nu^b, rho) = (nabla_a nu^b + rho delta^b_a,
                //                        nabla_a rho - P_ab nu^b).
                let p = &conn.proj_schouten;
                for a in 0..n {
                    let m = &mut mats[a * nt * nt..(a + 1) * nt * nt];
                    for b in 0..n {
                        for c in 0..n {
                            m[i2(nt, b, c)] = gamma[i3(n, b, a, c)];
                        }
                        m[i2(nt, b, n)] = if a == b { 1.0 } else { 0.0 };
                        m[i2(nt, n, b)] = -p[i2(n, a, b)];
                    }
                }
            }
            Structure::Conformal => {
                // nabla_a (sigma, mu^b, rho) = (nabla_a sigma - mu_a,
                //   nabla_a mu^b + sigma P_a^b + rho delta^b_a,
                //   nabla_a rho - P_ab mu^b).
                let p = conn
                    .conf_schouten
                    .as_deref()
                    .ok_or(TractorError::NeedsDimension3(n))?;
                let g_inv = &conn.chr.g_inv;
                for a in 0..n {
                    let m = &mut mats[a * nt * nt..(a + 1) * nt * nt];
                    for b in 0..n {
                        m[i2(nt, 0, 1 + b)] = -g[i2(n, a, b)];
                        let mut praised = 0.0;
                        for c in 0..n {
                            m[i2(nt, 1 + b, 1 + c)] = gamma[i3(n, b, a, c)];
                            praised += p[i2(n, a, c)] * g_inv[i2(n, c, b)];
                        }
                        m[i2(nt, 1 + b, 0)] = praised;
                        m[i2(nt, 1 + b, n + 1)] = if a == b { 1.0 } else { 0.0 };
                        m[i2(nt, n + 1, 1 + b)] = -p[i2(n, a, b)];
                    }
                }
            }
        }
        Ok(ConnectionMatrices { dim: n, tractor_dim: nt, structure, mats })
    }

    /// The matrix C_a.
    #[inline]
    pub fn matrix(&self, a: usize) -> &[f64] {
        let nt = self.tractor_dim;
        &self.mats[a * nt * nt..(a + 1) * nt * nt]
    }

    /// A = u^a C_a contracted against a chart vector.
    pub fn contracted(&self, u: &[f64]) -> Vec<f64> {
        let nt = self.tractor_dim;
        let mut out = vec![0.0; nt * nt];
        for a in 0..self.dim {
            let m = self.matrix(a);
            for k in 0..nt * nt {
                out[k] += u[a] * m[k];
            }
        }
        out
    }
}

/// Tractor metric h_AB of the conformal structure, with inverse.
/// h(Y-slot, X-slot) = 1, h on the Z-block equals g.
pub fn tractor_metric(conn: &Connection) -> Result<(Vec<f64>, Vec<f64>), TractorError> {
    let n = conn.dim();
    if conn.conf_schouten.is_none() {
        return Err(TractorError::NeedsDimension3(n));
    }
    let nt = n + 2;
    let mut h = vec![0.0; nt * nt];
    let mut h_inv = vec![0.0; nt * nt];
    h[i2(nt, 0, n + 1)] = 1.0;
    h[i2(nt, n + 1, 0)] = 1.0;
    h_inv[i2(nt, 0, n + 1)] = 1.0;
    h_inv[i2(nt, n + 1, 0)] = 1.0;
    for a in 0..n {
        for b in 0..n {
            h[i2(nt, 1 + a, 1 + b)] = conn.chr.g[i2(n, a, b)];
            h_inv[i2(nt, 1 + a, 1 + b)] = conn.chr.g_inv[i2(n, a, b)];
        }
    }
    Ok((h, h_inv))
}

/// Tractor curvature Omega_ab[I][J] acting on upper tractors, [a][b][I][J].
pub fn tractor_curvature(geom: &Geometry, structure: Structure) -> Result<Vec<f64>, TractorError> {
    let n = geom.dim();
    let nt = structure.tractor_dim(n);
    let mut omega = vec![0.0; n * n * nt * nt];
    match structure {
        Structure::Projective => {
            let weyl = &geom.proj.weyl;
            let cotton = &geom.proj.cotton;
            for a in 0..n {
                for b in 0..n {
                    let m = &mut omega[(a * n + b) * nt * nt..(a * n + b + 1) * nt * nt];
                    for c in 0..n {
                        for d in 0..n {
                            m[i2(nt, c, d)] = weyl[i4(n, a, b, c, d)];
                        }
                        m[i2(nt, n, c)] = -cotton[i3(n, a, b, c)];
                    }
                }
            }
        }
        Structure::Conformal => {
            let conf = geom.conf()?;
            let g_inv = &geom.conn.chr.g_inv;
            for a in 0..n {
                for b in 0..n {
                    let m = &mut omega[(a * n + b) * nt * nt..(a * n + b + 1) * nt * nt];
                    for c in 0..n {
                        for d in 0..n {
                            m[i2(nt, 1 + c, 1 + d)] = conf.weyl[i4(n, a, b, c, d)];
                        }
                        // sigma feeds the mu row through the raised Cotton
                        // tensor, mu feeds the rho row through minus Cotton.
                        let mut praised = 0.0;
                        for e in 0..n {
                            praised += g_inv[i2(n, c, e)] * conf.cotton[i3(n, e, a, b)];
                        }
                        m[i2(nt, 1 + c, 0)] = praised;
                        m[i2(nt, n + 1, 1 + c)] = -conf.cotton[i3(n, c, a, b)];
                    }
                }
            }
        }
    }
    Ok(omega)
}

/// Connection matrices together with their coordinate derivatives,
/// dC[b][a][I][J] = d_b C_a[I][J]. Used to cross-check the curvature
/// against the commutator d_a C_b - d_b C_a + [C_a, C_b].
pub fn connection_matrices_with_derivatives(
    geom: &Geometry,
    structure: Structure,
) -> Result<(ConnectionMatrices, Vec<f64>), TractorError> {
    let n = geom.dim();
    let nt = structure.tractor_dim(n);
    let cm = ConnectionMatrices::new(&geom.conn, structure)?;
    let mut dmats = vec![0.0; n * n * nt * nt];
    match structure {
        Structure::Projective => {
            for b in 0..n {
                for a in 0..n {
                    let m = &mut dmats[(b * n + a) * nt * nt..(b * n + a + 1) * nt * nt];
                    for c in 0..n {
                        for d in 0..n {
                            m[i2(nt, c, d)] = geom.dgamma_entry(b, c, a, d);
                        }
                        m[i2(nt, n, c)] = -geom.proj.dschouten[i3(n, b, a, c)];
                    }
                }
            }
        }
        Structure::Conformal => {
            let conf = geom.conf()?;
            let g_inv = &geom.conn.chr.g_inv;
            for b in 0..n {
                for a in 0..n {
                    let m = &mut dmats[(b * n + a) * nt * nt..(b * n + a + 1) * nt * nt];
                    for c in 0..n {
                        m[i2(nt, 0, 1 + c)] = -geom.dg[i3(n, b, a, c)];
                        for d in 0..n {
                            m[i2(nt, 1 + c, 1 + d)] = geom.dgamma_entry(b, c, a, d);
                        }
                        let mut dpraised = 0.0;
                        for e in 0..n {
                            dpraised += conf.dschouten[i3(n, b, a, e)] * g_inv[i2(n, e, c)]
                                + conf.schouten[i2(n, a, e)] * geom.dg_inv[i3(n, b, e, c)];
                        }
                        m[i2(nt, 1 + c, 0)] = dpraised;
                        m[i2(nt, n + 1, 1 + c)] = -conf.dschouten[i3(n, b, a, c)];
                    }
                }
            }
        }
    }
    Ok((cm, dmats))
}

impl Geometry {
    /// d_b Gamma^c_{a d} read from the first-derivative table.
    #[inline]
    fn dgamma_entry(&self, b: usize, c: usize, a: usize, d: usize) -> f64 {
        let n = self.dim();
        self.conn.dgamma[i4(n, b, c, a, d)]
    }
}

/// One sample of a chart curve: parameter, position, velocity.
#[derive(Debug, Clone)]
pub struct PathSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

fn check_path(n: usize, path: &[PathSample], min_len: usize) -> Result<f64, TractorError> {
    if path.len() < min_len {
        return Err(TractorError::PathTooShort { want: min_len, got: path.len() });
    }
    for (k, s) in path.iter().enumerate() {
        if s.x.len() != n || s.u.len() != n {
            return Err(TractorError::BadSampleDim(k));
        }
    }
    let h = path[1].t - path[0].t;
    for w in path.windows(2) {
        let step = w[1].t - w[0].t;
        if (step - h).abs() > 1e-9 * h.abs().max(1e-12) {
            return Err(TractorError::NonUniformStep(h, step));
        }
    }
    Ok(h)
}

fn check_tensor(nt: usize, t: &DenseTensor) -> Result<(), TractorError> {
    if t.dim() != nt {
        return Err(TractorError::WrongTractorDim { want: nt, got: t.dim() });
    }
    if t.rank() == 0 || t.rank() > 4 {
        return Err(TractorError::UnsupportedRank(t.rank()));
    }
    Ok(())
}

/// Covariant-derivative action of the matrix A = u^a C_a on every slot:
/// plus A on upper slots, minus the transpose action on lower slots.
pub fn slotwise_action(a_mat: &[f64], t: &DenseTensor) -> DenseTensor {
    let nt = t.dim();
    let rank = t.rank();
    let mut out = DenseTensor::zeros(nt, t.valence()).expect("same shape as input");
    let src = t.data();
    let dst = out.data_mut();
    for s in 0..rank {
        let stride = nt.pow((rank - 1 - s) as u32);
        let up = t.valence()[s] == Valence::Up;
        for flat in 0..src.len() {
            let i_s = (flat / stride) % nt;
            let base = flat - i_s * stride;
            let mut acc = 0.0;
            for j in 0..nt {
                let c = if up {
                    a_mat[i2(nt, i_s, j)]
                } else {
                    -a_mat[i2(nt, j, i_s)]
                };
                acc += c * src[base + j * stride];
            }
            dst[flat] += acc;
        }
    }
    out
}

/// Cubic Hermite midpoint of a path segment: position and velocity.
fn hermite_midpoint(s0: &PathSample, s1: &PathSample, h: f64) -> (Vec<f64>, Vec<f64>) {
    let n = s0.x.len();
    let mut x = vec![0.0; n];
    let mut u = vec![0.0; n];
    for i in 0..n {
        x[i] = 0.5 * (s0.x[i] + s1.x[i]) + 0.125 * h * (s0.u[i] - s1.u[i]);
        u[i] = 1.5 * (s1.x[i] - s0.x[i]) / h - 0.25 * (s0.u[i] + s1.u[i]);
    }
    (x, u)
}

/// Parallel-transport a tractor tensor along a sampled curve.
///
/// Returns the transported tensor at every sample, starting with `init`
/// itself. Fourth-order Runge-Kutta in the curve parameter; segment
/// midpoints are filled in by cubic Hermite interpolation of the samples.
pub fn transport(
    metric: &Metric,
    structure: Structure,
    path: &[PathSample],
    init: &DenseTensor,
) -> Result<Vec<DenseTensor>, TractorError> {
    let n = metric.dim();
    let nt = structure.tractor_dim(n);
    let h = check_path(n, path, 2)?;
    check_tensor(nt, init)?;

    let a_at = |x: &[f64], u: &[f64]| -> Result<Vec<f64>, TractorError> {
        let conn = connection_at(metric, x)?;
        Ok(ConnectionMatrices::new(&conn, structure)?.contracted(u))
    };

    let mut out = Vec::with_capacity(path.len());
    out.push(init.clone());
    let mut cur = init.clone();
    let mut a0 = a_at(&path[0].x, &path[0].u)?;
    for k in 0..path.len() - 1 {
        let s0 = &path[k];
        let s1 = &path[k + 1];
        let (xm, um) = hermite_midpoint(s0, s1, h);
        let am = a_at(&xm, &um)?;
        let a1 = a_at(&s1.x, &s1.u)?;

        let f = |a: &[f64], t: &DenseTensor| slotwise_action(a, t).scaled(-1.0);
        let k1 = f(&a0, &cur);
        let k2 = f(&am, &cur.add(&k1.scaled(0.5 * h))?);
        let k3 = f(&am, &cur.add(&k2.scaled(0.5 * h))?);
        let k4 = f(&a1, &cur.add(&k3.scaled(h))?);
        let mut step = k1;
        step = step.add(&k2.scaled(2.0))?;
        step = step.add(&k3.scaled(2.0))?;
        step = step.add(&k4)?;
        cur = cur.add(&step.scaled(h / 6.0))?;
        out.push(cur.clone());
        a0 = a1;
    }
    Ok(out)
}

/// Residual of the parallel equation for a tractor field given along a
/// curve: nabla_u T at each interior sample, by fourth-order central
/// differencing of the samples plus the connection action.
///
/// `fields[k]` is the tensor at `path[k]`. The result has one norm per
/// interior sample, aligned with `path[2..len - 2]`.
pub fn parallel_residual(
    metric: &Metric,
    structure: Structure,
    path: &[PathSample],
    fields: &[DenseTensor],
) -> Result<Vec<f64>, TractorError> {
    let n = metric.dim();
    let nt = structure.tractor_dim(n);
    let h = check_path(n, path, 5)?;
    if fields.len() != path.len() {
        return Err(TractorError::PathTooShort { want: path.len(), got: fields.len() });
    }
    for t in fields {
        check_tensor(nt, t)?;
    }
    let mut out = Vec::with_capacity(path.len() - 4);
    for k in 2..path.len() - 2 {
        let mut ddt = fields[k - 2].sub(&fields[k + 2])?;
        ddt = ddt.add(&fields[k + 1].sub(&fields[k - 1])?.scaled(8.0))?;
        ddt = ddt.scaled(1.0 / (12.0 * h));
        let conn = connection_at(metric, &path[k].x)?;
        let a = ConnectionMatrices::new(&conn, structure)?.contracted(&path[k].u);
        let residual = ddt.add(&slotwise_action(&a, &fields[k]))?;
        out.push(residual.max_abs());
    }
    Ok(out)
}

/// Component change of an upper conformal tractor of weight `w` under the
/// rescaling g -> e^{2 phi} g, as a matrix acting on stored components.
/// `ups` holds Upsilon_a = d_a phi at the point.
pub fn conformal_change_matrix(
    conn: &Connection,
    phi: f64,
    ups: &[f64],
    w: f64,
) -> Result<Vec<f64>, TractorError> {
    let n = conn.dim();
    if conn.conf_schouten.is_none() {
        return Err(TractorError::NeedsDimension3(n));
    }
    let nt = n + 2;
    let g_inv = &conn.chr.g_inv;
    let mut ups_up = vec![0.0; n];
    let mut ups2 = 0.0;
    for a in 0..n {
        for b in 0..n {
            ups_up[a] += g_inv[i2(n, a, b)] * ups[b];
        }
    }
    for a in 0..n {
        ups2 += ups_up[a] * ups[a];
    }
    let ew = (w * phi).exp();
    let mut m = vec![0.0; nt * nt];
    m[i2(nt, 0, 0)] = ew * phi.exp();
    let em = ew * (-phi).exp();
    for a in 0..n {
        m[i2(nt, 1 + a, 1 + a)] = em;
        m[i2(nt, 1 + a, 0)] = em * ups_up[a];
        m[i2(nt, n + 1, 1 + a)] = -em * ups[a];
    }
    m[i2(nt, n + 1, n + 1)] = em;
    m[i2(nt, n + 1, 0)] = -0.5 * em * ups2;
    Ok(m)
}

/// Closed-form parallel transport of an upper conformal tractor in a flat
/// metric, as a matrix for the displacement `delta` (path independent).
pub fn flat_conformal_transport(g: &[f64], n: usize, delta: &[f64]) -> Vec<f64> {
    let nt = n + 2;
    let mut delta_low = vec![0.0; n];
    let mut d2 = 0.0;
    for a in 0..n {
        for b in 0..n {
            delta_low[a] += g[i2(n, a, b)] * delta[b];
        }
        d2 += delta_low[a] * delta[a];
    }
    let mut m = vec![0.0; nt * nt];
    m[i2(nt, 0, 0)] = 1.0;
    m[i2(nt, n + 1, n + 1)] = 1.0;
    for a in 0..n {
        m[i2(nt, 1 + a, 1 + a)] = 1.0;
        m[i2(nt, 0, 1 + a)] = delta_low[a];
        m[i2(nt, 1 + a, n + 1)] = -delta[a];
    }
    m[i2(nt, 0, n + 1)] = -0.5 * d2;
    m
}

/// Apply an N x N matrix to every slot of a tractor tensor, transforming
/// upper slots by the matrix and lower slots by the inverse transpose.
pub fn apply_matrix_slotwise(
    m: &[f64],
    m_inv: Option<&[f64]>,
    t: &DenseTensor,
) -> Result<DenseTensor, TractorError> {
    let nt = t.dim();
    let rank = t.rank();
    let needs_inverse = t.valence().iter().any(|v| *v == Valence::Down);
    let inv_owned;
    let inv: &[f64] = if needs_inverse {
        match m_inv {
            Some(mi) => mi,
            None => {
                let dm = nalgebra::DMatrix::from_fn(nt, nt, |i, j| m[i2(nt, i, j)]);
                let det = dm.determinant();
                let im = dm
                    .try_inverse()
                    .ok_or(TensorError::DegenerateMetric(det))?;
                inv_owned = (0..nt * nt)
                    .map(|k| im[(k / nt, k % nt)])
                    .collect::<Vec<f64>>();
                &inv_owned
            }
        }
    } else {
        &[]
    };

    let mut cur = t.clone();
    for s in 0..rank {
        let stride = nt.pow((rank - 1 - s) as u32);
        let up = t.valence()[s] == Valence::Up;
        let mut next = DenseTensor::zeros(nt, t.valence())?;
        let src = cur.data();
        let dst = next.data_mut();
        for flat in 0..src.len() {
            let i_s = (flat / stride) % nt;
            let base = flat - i_s * stride;
            let mut acc = 0.0;
            for j in 0..nt {
                let c = if up { m[i2(nt, i_s, j)] } else { inv[i2(nt, j, i_s)] };
                acc += c * src[base + j * stride];
            }
            dst[flat] = acc;
        }
        cur = next;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::curvature::curvature_at;
    use approx::assert_relative_eq;

    fn mat_mul(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += a[i2(n, i, k)] * b[i2(n, k, j)];
                }
                out[i2(n, i, j)] = s;
            }
        }
        out
    }

    /// The curvature tables must agree with the raw commutator of the
    /// connection matrices, d_a C_b - d_b C_a + [C_a, C_b].
    fn check_curvature_commutator(m: &Metric, structure: Structure, x: &[f64]) {
        let geom = curvature_at(m, x).unwrap();
        let n = geom.dim();
        let nt = structure.tractor_dim(n);
        let omega = tractor_curvature(&geom, structure).unwrap();
        let (cm, dc) = connection_matrices_with_derivatives(&geom, structure).unwrap();
        for a in 0..n {
            for b in 0..n {
                let da_cb = &dc[(a * n + b) * nt * nt..(a * n + b + 1) * nt * nt];
                let db_ca = &dc[(b * n + a) * nt * nt..(b * n + a + 1) * nt * nt];
                let comm = mat_mul(nt, cm.matrix(a), cm.matrix(b));
                let comm2 = mat_mul(nt, cm.matrix(b), cm.matrix(a));
                let om = &omega[(a * n + b) * nt * nt..(a * n + b + 1) * nt * nt];
                for k in 0..nt * nt {
                    let lhs = da_cb[k] - db_ca[k] + comm[k] - comm2[k];
                    assert_relative_eq!(lhs, om[k], epsilon = 1e-7, max_relative = 1e-7);
                }
            }
        }
    }

    #[test]
    fn projective_curvature_matches_commutator() {
        let m = Metric::expression_matrix_from_strs(
            2,
            &["1 + x2^2/4", "x1*x2/5", "x1*x2/5", "1 + x1^2/3"],
            vec![1, 1],
        )
        .unwrap();
        check_curvature_commutator(&m, Structure::Projective, &[0.3, -0.4]);
    }

    #[test]
    fn conformal_curvature_matches_commutator() {
        let m = Metric::expression_matrix_from_strs(
            3,
            &[
                "1 + x2^2/4",
                "x1*x3/5",
                "0",
                "x1*x3/5",
                "1 + x1^2/3",
                "x2/7",
                "0",
                "x2/7",
                "1 + x3^2/2",
            ],
            vec![1, 1, 1],
        )
        .unwrap();
        check_curvature_commutator(&m, Structure::Conformal, &[0.2, -0.3, 0.4]);
    }

    #[test]
    fn sphere_tractor_curvature_vanishes() {
        // The round sphere induces the flat model tractor connection.
        let m = Metric::sphere_stereographic(3, 1.0).unwrap();
        let geom = curvature_at(&m, &[0.2, 0.5, -0.1]).unwrap();
        let om = tractor_curvature(&geom, Structure::Conformal).unwrap();
        assert!(om.iter().all(|v| v.abs() < 1e-7));
        let omp = tractor_curvature(&geom, Structure::Projective).unwrap();
        assert!(omp.iter().all(|v| v.abs() < 1e-7));
    }

    #[test]
    fn flat_transport_matrix_matches_ode() {
        // Transport a conformal tractor along a straight segment in flat
        // space and compare against the closed form.
        let m = Metric::euclidean(3).unwrap();
        let steps = 200;
        let h = 1.0 / steps as f64;
        let dir = [0.3, -0.7, 0.5];
        let path: Vec<PathSample> = (0..=steps)
            .map(|k| {
                let t = k as f64 * h;
                PathSample {
                    t,
                    x: dir.iter().map(|d| d * t).collect(),
                    u: dir.to_vec(),
                }
            })
            .collect();
        let init = DenseTensor::from_vec(5, &[Valence::Up], vec![0.4, 1.0, -2.0, 0.3, 0.8])
            .unwrap();
        let got = transport(&m, Structure::Conformal, &path, &init).unwrap();
        let g = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let mm = flat_conformal_transport(&g, 3, &dir);
        for i in 0..5 {
            let mut want = 0.0;
            for j in 0..5 {
                want += mm[i2(5, i, j)] * init.data()[j];
            }
            assert_relative_eq!(got.last().unwrap().data()[i], want, epsilon = 1e-10);
        }
    }

    #[test]
    fn transport_preserves_tractor_pairing() {
        // An upper and a lower tractor transported together keep their
        // pairing; the tractor metric pairing of two uppers is constant too.
        let m = Metric::sphere_stereographic(3, 1.0).unwrap();
        let steps = 400;
        let h = 0.8 / steps as f64;
        // Latitude-style coordinate circle, not a geodesic; transport is
        // defined along any curve.
        let path: Vec<PathSample> = (0..=steps)
            .map(|k| {
                let t = k as f64 * h;
                let (s, c) = (4.0 * t).sin_cos();
                PathSample {
                    t,
                    x: vec![0.5 * c, 0.5 * s, 0.3],
                    u: vec![-2.0 * s, 2.0 * c, 0.0],
                }
            })
            .collect();
        let up = DenseTensor::from_vec(5, &[Valence::Up], vec![0.7, -0.2, 1.1, 0.4, -0.9])
            .unwrap();
        let down = DenseTensor::from_vec(5, &[Valence::Down], vec![0.3, 0.8, -0.5, 0.2, 0.6])
            .unwrap();
        let ups = transport(&m, Structure::Conformal, &path, &up).unwrap();
        let downs = transport(&m, Structure::Conformal, &path, &down).unwrap();
        let pair0 = ups[0].pair_full(&downs[0]).unwrap();
        let pair1 = ups.last().unwrap().pair_full(downs.last().unwrap()).unwrap();
        assert_relative_eq!(pair0, pair1, epsilon = 1e-9);

        let conn0 = connection_at(&m, &path[0].x).unwrap();
        let connl = connection_at(&m, &path.last().unwrap().x).unwrap();
        let (h0, _) = tractor_metric(&conn0).unwrap();
        let (hl, _) = tractor_metric(&connl).unwrap();
        let quad = |hm: &[f64], v: &[f64]| {
            let mut s = 0.0;
            for i in 0..5 {
                for j in 0..5 {
                    s += hm[i2(5, i, j)] * v[i] * v[j];
                }
            }
            s
        };
        let q0 = quad(&h0, ups[0].data());
        let q1 = quad(&hl, ups.last().unwrap().data());
        assert_relative_eq!(q0, q1, epsilon = 1e-8);
    }

    #[test]
    fn conformal_change_is_isometry_of_tractor_metric() {
        // Components in the rescaled scale must give the same pairing
        // against the rescaled tractor metric.
        let base = Metric::sphere_stereographic(3, 1.0).unwrap();
        let phi = crate::geometry::Expr::parse("x1/2 - x3/4").unwrap();
        let hat = base.conformal_rescale(phi).unwrap();
        let x = [0.3, -0.2, 0.6];
        let conn = connection_at(&base, &x).unwrap();
        let conn_hat = connection_at(&hat, &x).unwrap();
        let phi_v = x[0] / 2.0 - x[2] / 4.0;
        let ups = [0.5, 0.0, -0.25];
        let b = conformal_change_matrix(&conn, phi_v, &ups, 0.0).unwrap();
        let (h, _) = tractor_metric(&conn).unwrap();
        let (h_hat, _) = tractor_metric(&conn_hat).unwrap();
        let v = [0.7, -0.2, 1.1, 0.4, -0.9];
        let w = [0.1, 0.9, -0.3, 0.2, 0.5];
        let pair = |hm: &[f64], a: &[f64], bb: &[f64]| {
            let mut s = 0.0;
            for i in 0..5 {
                for j in 0..5 {
                    s += hm[i2(5, i, j)] * a[i] * bb[j];
                }
            }
            s
        };
        let tv: Vec<f64> = (0..5)
            .map(|i| (0..5).map(|j| b[i2(5, i, j)] * v[j]).sum())
            .collect();
        let tw: Vec<f64> = (0..5)
            .map(|i| (0..5).map(|j| b[i2(5, i, j)] * w[j]).sum())
            .collect();
        assert_relative_eq!(pair(&h, &v, &w), pair(&h_hat, &tv, &tw), epsilon = 1e-10);
    }
}
