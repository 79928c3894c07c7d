//! Curvature data assembled from metric jets.
//!
//! Everything downstream consumes one of three snapshots at a point:
//!
//! * [`ChristoffelData`]: metric, inverse, Levi-Civita symbols. Enough for
//!   geodesic right-hand sides.
//! * [`Connection`]: adds first derivatives of the symbols, the curvature
//!   tensor, Ricci, scalar curvature and the Schouten tensors. Enough for
//!   distinguished-curve right-hand sides and tractor transport.
//! * [`Geometry`]: adds second derivatives of the symbols, derivatives of
//!   curvature, covariant Schouten derivatives, Cotton and Weyl tensors.
//!   This is what the splitting operators and curvature machinery use.
//!
//! Index conventions, all arrays row-major with the stated slot order:
//! gamma[c][a][b] = Gamma^c_ab, riemann[a][b][c][d] = R_ab^c_d with
//! [nabla_a, nabla_b] v^c = R_ab^c_d v^d, ricci[b][d] = R_cb^c_d.

use super::metric::{Metric, MetricDerivatives, MetricError};

#[inline]
pub(crate) fn i2(n: usize, a: usize, b: usize) -> usize {
    a * n + b
}

#[inline]
pub(crate) fn i3(n: usize, a: usize, b: usize, c: usize) -> usize {
    (a * n + b) * n + c
}

#[inline]
pub(crate) fn i4(n: usize, a: usize, b: usize, c: usize, d: usize) -> usize {
    ((a * n + b) * n + c) * n + d
}

#[inline]
pub(crate) fn i5(n: usize, a: usize, b: usize, c: usize, d: usize, e: usize) -> usize {
    (((a * n + b) * n + c) * n + d) * n + e
}

/// Metric and Levi-Civita symbols at a point.
#[derive(Debug, Clone)]
pub struct ChristoffelData {
    pub dim: usize,
    pub x: Vec<f64>,
    /// g_ab.
    pub g: Vec<f64>,
    /// g^ab.
    pub g_inv: Vec<f64>,
    pub det: f64,
    /// gamma[c][a][b] = Gamma^c_ab.
    pub gamma: Vec<f64>,
}

impl ChristoffelData {
    /// g(u, v).
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let n = self.dim;
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                s += self.g[i2(n, a, b)] * u[a] * v[b];
            }
        }
        s
    }

    /// (Gamma(u, v))^c = Gamma^c_ab u^a v^b.
    pub fn gamma_bilinear(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n];
        for c in 0..n {
            let mut s = 0.0;
            for a in 0..n {
                for b in 0..n {
                    s += self.gamma[i3(n, c, a, b)] * u[a] * v[b];
                }
            }
            out[c] = s;
        }
        out
    }
}

/// Data for curve right-hand sides and tractor transport.
#[derive(Debug, Clone)]
pub struct Connection {
    pub chr: ChristoffelData,
    /// dgamma[d][c][a][b] = d_d Gamma^c_ab.
    pub dgamma: Vec<f64>,
    /// riemann[a][b][c][d] = R_ab^c_d.
    pub riemann: Vec<f64>,
    /// ricci[b][d] = R_cb^c_d.
    pub ricci: Vec<f64>,
    pub scal: f64,
    /// Ricci / (n - 1).
    pub proj_schouten: Vec<f64>,
    /// (Ricci - J g) / (n - 2); absent in dimension 2.
    pub conf_schouten: Option<Vec<f64>>,
    /// J = Scal / (2 (n - 1)).
    pub conf_j: Option<f64>,
}

impl Connection {
    #[inline]
    pub fn dim(&self) -> usize {
        self.chr.dim
    }

    /// Schouten with second slot raised, p[a][b] = P_a^b, for either flavour.
    pub fn schouten_raised(&self, conformal: bool) -> Option<Vec<f64>> {
        let n = self.dim();
        let p = if conformal {
            self.conf_schouten.as_deref()?
        } else {
            &self.proj_schouten
        };
        let mut out = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                let mut s = 0.0;
                for c in 0..n {
                    s += p[i2(n, a, c)] * self.chr.g_inv[i2(n, c, b)];
                }
                out[i2(n, a, b)] = s;
            }
        }
        Some(out)
    }
}

/// Projective curvature quantities.
#[derive(Debug, Clone)]
pub struct ProjectivePack {
    /// P_ab = Ricci_ab / (n - 1).
    pub schouten: Vec<f64>,
    /// dschouten[c][a][b] = d_c P_ab.
    pub dschouten: Vec<f64>,
    /// cov_schouten[c][a][b] = nabla_c P_ab.
    pub cov_schouten: Vec<f64>,
    /// cotton[a][b][c] = nabla_a P_bc - nabla_b P_ac.
    pub cotton: Vec<f64>,
    /// weyl[a][b][c][d] = R_ab^c_d - delta^c_a P_bd + delta^c_b P_ad.
    pub weyl: Vec<f64>,
}

/// Conformal curvature quantities (dimension >= 3).
#[derive(Debug, Clone)]
pub struct ConformalPack {
    /// P_ab = (Ricci_ab - J g_ab) / (n - 2).
    pub schouten: Vec<f64>,
    /// dschouten[c][a][b] = d_c P_ab.
    pub dschouten: Vec<f64>,
    /// cov_schouten[c][a][b] = nabla_c P_ab.
    pub cov_schouten: Vec<f64>,
    /// J = Scal / (2 (n - 1)) = g^ab P_ab.
    pub j: f64,
    /// dj[e] = d_e J.
    pub dj: Vec<f64>,
    /// cotton[a][b][c] = nabla_b P_ca - nabla_c P_ba.
    pub cotton: Vec<f64>,
    /// weyl_lowered[a][b][c][d] = W_abcd, all indices down.
    pub weyl_lowered: Vec<f64>,
    /// weyl[a][b][c][d] = W_ab^c_d.
    pub weyl: Vec<f64>,
}

/// Full curvature snapshot at a point.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub conn: Connection,
    /// d2gamma[e][d][c][a][b] = d_e d_d Gamma^c_ab.
    pub d2gamma: Vec<f64>,
    /// driemann[e][a][b][c][d] = d_e R_ab^c_d.
    pub driemann: Vec<f64>,
    /// dricci[e][b][d].
    pub dricci: Vec<f64>,
    /// dscal[e].
    pub dscal: Vec<f64>,
    /// dg[c][a][b] = d_c g_ab.
    pub dg: Vec<f64>,
    /// dg_inv[c][a][b] = d_c g^ab.
    pub dg_inv: Vec<f64>,
    pub proj: ProjectivePack,
    pub conf: Option<ConformalPack>,
}

impl Geometry {
    #[inline]
    pub fn dim(&self) -> usize {
        self.conn.chr.dim
    }

    #[inline]
    pub fn x(&self) -> &[f64] {
        &self.conn.chr.x
    }

    /// The conformal pack, or an error in dimension 2 where it is absent.
    pub fn conf(&self) -> Result<&ConformalPack, MetricError> {
        self.conf
            .as_ref()
            .ok_or(MetricError::BadDimension(self.dim()))
    }
}

/// Covariant derivative of a rank-2 all-lower tensor from its partials.
/// dt[c][a][b] = d_c t_ab in, nabla_c t_ab out.
fn cov_rank2_lower(n: usize, gamma: &[f64], t: &[f64], dt: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * n * n];
    for c in 0..n {
        for a in 0..n {
            for b in 0..n {
                let mut s = dt[i3(n, c, a, b)];
                for e in 0..n {
                    s -= gamma[i3(n, e, c, a)] * t[i2(n, e, b)];
                    s -= gamma[i3(n, e, c, b)] * t[i2(n, a, e)];
                }
                out[i3(n, c, a, b)] = s;
            }
        }
    }
    out
}

/// Levi-Civita symbols from metric derivatives of order >= 1.
fn christoffel_from(md: &MetricDerivatives) -> ChristoffelData {
    let n = md.dim;
    let g = md.mats.g.clone();
    let g_inv = md.mats.g_inv.clone();
    let mut gamma = vec![0.0; n * n * n];
    for c in 0..n {
        for a in 0..n {
            for b in 0..n {
                let mut s = 0.0;
                for d in 0..n {
                    let term = md.dg[i3(n, a, d, b)] + md.dg[i3(n, b, d, a)]
                        - md.dg[i3(n, d, a, b)];
                    s += 0.5 * g_inv[i2(n, c, d)] * term;
                }
                gamma[i3(n, c, a, b)] = s;
            }
        }
    }
    ChristoffelData { dim: n, x: Vec::new(), g, g_inv, det: md.mats.det, gamma }
}

/// Levi-Civita symbols at a point.
pub fn christoffel_at(m: &Metric, x: &[f64]) -> Result<ChristoffelData, MetricError> {
    let md = m.derivatives_at(x, 1)?;
    let mut chr = christoffel_from(&md);
    chr.x = x.to_vec();
    Ok(chr)
}

fn connection_from(md: &MetricDerivatives, x: &[f64]) -> (Connection, Vec<f64>, Vec<f64>) {
    let n = md.dim;
    let mut chr = christoffel_from(md);
    chr.x = x.to_vec();

    // d_c g^ab = -g^am g^bn d_c g_mn.
    let mut dg_inv = vec![0.0; n * n * n];
    for c in 0..n {
        for a in 0..n {
            for b in 0..n {
                let mut s = 0.0;
                for m_ in 0..n {
                    for nn in 0..n {
                        s -= chr.g_inv[i2(n, a, m_)]
                            * chr.g_inv[i2(n, b, nn)]
                            * md.dg[i3(n, c, m_, nn)];
                    }
                }
                dg_inv[i3(n, c, a, b)] = s;
            }
        }
    }

    // d_d Gamma^c_ab via the product rule on 1/2 g^ce (d_a g_eb + d_b g_ea - d_e g_ab).
    let mut dgamma = vec![0.0; n * n * n * n];
    for d in 0..n {
        for c in 0..n {
            for a in 0..n {
                for b in 0..n {
                    let mut s = 0.0;
                    for e in 0..n {
                        let base = md.dg[i3(n, a, e, b)] + md.dg[i3(n, b, e, a)]
                            - md.dg[i3(n, e, a, b)];
                        let dbase = md.d2g[i4(n, d, a, e, b)] + md.d2g[i4(n, d, b, e, a)]
                            - md.d2g[i4(n, d, e, a, b)];
                        s += 0.5 * dg_inv[i3(n, d, c, e)] * base;
                        s += 0.5 * chr.g_inv[i2(n, c, e)] * dbase;
                    }
                    dgamma[i4(n, d, c, a, b)] = s;
                }
            }
        }
    }

    // R_ab^c_d = d_a Gamma^c_bd - d_b Gamma^c_ad + Gamma^c_ae Gamma^e_bd - Gamma^c_be Gamma^e_ad.
    let mut riemann = vec![0.0; n * n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let mut s = dgamma[i4(n, a, c, b, d)] - dgamma[i4(n, b, c, a, d)];
                    for e in 0..n {
                        s += chr.gamma[i3(n, c, a, e)] * chr.gamma[i3(n, e, b, d)];
                        s -= chr.gamma[i3(n, c, b, e)] * chr.gamma[i3(n, e, a, d)];
                    }
                    riemann[i4(n, a, b, c, d)] = s;
                }
            }
        }
    }

    let mut ricci = vec![0.0; n * n];
    for b in 0..n {
        for d in 0..n {
            let mut s = 0.0;
            for c in 0..n {
                s += riemann[i4(n, c, b, c, d)];
            }
            ricci[i2(n, b, d)] = s;
        }
    }

    let mut scal = 0.0;
    for b in 0..n {
        for d in 0..n {
            scal += chr.g_inv[i2(n, b, d)] * ricci[i2(n, b, d)];
        }
    }

    let proj_schouten: Vec<f64> = ricci.iter().map(|r| r / (n as f64 - 1.0)).collect();

    let (conf_schouten, conf_j) = if n >= 3 {
        let j = scal / (2.0 * (n as f64 - 1.0));
        let p: Vec<f64> = (0..n * n)
            .map(|i| (ricci[i] - j * chr.g[i]) / (n as f64 - 2.0))
            .collect();
        (Some(p), Some(j))
    } else {
        (None, None)
    };

    let conn = Connection {
        chr,
        dgamma,
        riemann,
        ricci,
        scal,
        proj_schouten,
        conf_schouten,
        conf_j,
    };
    (conn, dg_inv, md.dg.clone())
}

/// Connection-level snapshot (order-2 metric derivatives).
pub fn connection_at(m: &Metric, x: &[f64]) -> Result<Connection, MetricError> {
    let md = m.derivatives_at(x, 2)?;
    Ok(connection_from(&md, x).0)
}

/// Full curvature snapshot (order-3 metric derivatives).
pub fn curvature_at(m: &Metric, x: &[f64]) -> Result<Geometry, MetricError> {
    let md = m.derivatives_at(x, 3)?;
    let n = md.dim;
    let (conn, dg_inv, dg) = connection_from(&md, x);
    let g = &conn.chr.g;
    let g_inv = &conn.chr.g_inv;
    let gamma = &conn.chr.gamma;
    let dgamma = &conn.dgamma;

    // d_f d_c g^ab by differentiating dg_inv once more.
    let mut d2g_inv = vec![0.0; n * n * n * n];
    for f in 0..n {
        for c in 0..n {
            for a in 0..n {
                for b in 0..n {
                    let mut s = 0.0;
                    for m_ in 0..n {
                        for nn in 0..n {
                            s -= dg_inv[i3(n, f, a, m_)]
                                * g_inv[i2(n, b, nn)]
                                * md.dg[i3(n, c, m_, nn)];
                            s -= g_inv[i2(n, a, m_)]
                                * dg_inv[i3(n, f, b, nn)]
                                * md.dg[i3(n, c, m_, nn)];
                            s -= g_inv[i2(n, a, m_)]
                                * g_inv[i2(n, b, nn)]
                                * md.d2g[i4(n, f, c, m_, nn)];
                        }
                    }
                    d2g_inv[i4(n, f, c, a, b)] = s;
                }
            }
        }
    }

    // d_e d_d Gamma^c_ab.
    let mut d2gamma = vec![0.0; n * n * n * n * n];
    for e in 0..n {
        for d in 0..n {
            for c in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        let mut s = 0.0;
                        for f in 0..n {
                            let base = md.dg[i3(n, a, f, b)] + md.dg[i3(n, b, f, a)]
                                - md.dg[i3(n, f, a, b)];
                            let d_d = md.d2g[i4(n, d, a, f, b)] + md.d2g[i4(n, d, b, f, a)]
                                - md.d2g[i4(n, d, f, a, b)];
                            let d_e = md.d2g[i4(n, e, a, f, b)] + md.d2g[i4(n, e, b, f, a)]
                                - md.d2g[i4(n, e, f, a, b)];
                            let d_ed = md.d3g[i5(n, e, d, a, f, b)]
                                + md.d3g[i5(n, e, d, b, f, a)]
                                - md.d3g[i5(n, e, d, f, a, b)];
                            s += 0.5 * d2g_inv[i4(n, e, d, c, f)] * base;
                            s += 0.5 * dg_inv[i3(n, d, c, f)] * d_e;
                            s += 0.5 * dg_inv[i3(n, e, c, f)] * d_d;
                            s += 0.5 * g_inv[i2(n, c, f)] * d_ed;
                        }
                        d2gamma[i5(n, e, d, c, a, b)] = s;
                    }
                }
            }
        }
    }

    // d_e R_ab^c_d.
    let mut driemann = vec![0.0; n * n * n * n * n];
    for e in 0..n {
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let mut s = d2gamma[i5(n, e, a, c, b, d)]
                            - d2gamma[i5(n, e, b, c, a, d)];
                        for f in 0..n {
                            s += dgamma[i4(n, e, c, a, f)] * gamma[i3(n, f, b, d)];
                            s += gamma[i3(n, c, a, f)] * dgamma[i4(n, e, f, b, d)];
                            s -= dgamma[i4(n, e, c, b, f)] * gamma[i3(n, f, a, d)];
                            s -= gamma[i3(n, c, b, f)] * dgamma[i4(n, e, f, a, d)];
                        }
                        driemann[i5(n, e, a, b, c, d)] = s;
                    }
                }
            }
        }
    }

    let mut dricci = vec![0.0; n * n * n];
    for e in 0..n {
        for b in 0..n {
            for d in 0..n {
                let mut s = 0.0;
                for c in 0..n {
                    s += driemann[i5(n, e, c, b, c, d)];
                }
                dricci[i3(n, e, b, d)] = s;
            }
        }
    }

    let mut dscal = vec![0.0; n];
    for e in 0..n {
        let mut s = 0.0;
        for b in 0..n {
            for d in 0..n {
                s += dg_inv[i3(n, e, b, d)] * conn.ricci[i2(n, b, d)]
                    + g_inv[i2(n, b, d)] * dricci[i3(n, e, b, d)];
            }
        }
        dscal[e] = s;
    }

    // Projective pack.
    let nm1 = n as f64 - 1.0;
    let p_proj = conn.proj_schouten.clone();
    let dp_proj: Vec<f64> = dricci.iter().map(|r| r / nm1).collect();
    let covp_proj = cov_rank2_lower(n, gamma, &p_proj, &dp_proj);
    let mut cotton_proj = vec![0.0; n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                cotton_proj[i3(n, a, b, c)] =
                    covp_proj[i3(n, a, b, c)] - covp_proj[i3(n, b, a, c)];
            }
        }
    }
    let mut weyl_proj = vec![0.0; n * n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let mut s = conn.riemann[i4(n, a, b, c, d)];
                    if c == a {
                        s -= p_proj[i2(n, b, d)];
                    }
                    if c == b {
                        s += p_proj[i2(n, a, d)];
                    }
                    weyl_proj[i4(n, a, b, c, d)] = s;
                }
            }
        }
    }
    let proj = ProjectivePack {
        schouten: p_proj,
        dschouten: dp_proj,
        cov_schouten: covp_proj,
        cotton: cotton_proj,
        weyl: weyl_proj,
    };

    // Conformal pack, dimension 3 and up.
    let conf = if n >= 3 {
        let nm2 = n as f64 - 2.0;
        let j = conn.conf_j.unwrap();
        let p = conn.conf_schouten.clone().unwrap();
        let mut dj = vec![0.0; n];
        for e in 0..n {
            dj[e] = dscal[e] / (2.0 * nm1);
        }
        let mut dp = vec![0.0; n * n * n];
        for e in 0..n {
            for a in 0..n {
                for b in 0..n {
                    dp[i3(n, e, a, b)] = (dricci[i3(n, e, a, b)]
                        - dj[e] * g[i2(n, a, b)]
                        - j * dg[i3(n, e, a, b)])
                        / nm2;
                }
            }
        }
        let covp = cov_rank2_lower(n, gamma, &p, &dp);
        let mut cotton = vec![0.0; n * n * n];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    cotton[i3(n, a, b, c)] = covp[i3(n, b, c, a)] - covp[i3(n, c, b, a)];
                }
            }
        }
        // Lower the curvature's third slot, then subtract the Schouten glue.
        let mut weyl_lowered = vec![0.0; n * n * n * n];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let mut s = 0.0;
                        for e in 0..n {
                            s += g[i2(n, c, e)] * conn.riemann[i4(n, a, b, e, d)];
                        }
                        s -= g[i2(n, c, a)] * p[i2(n, b, d)];
                        s += g[i2(n, c, b)] * p[i2(n, a, d)];
                        s += g[i2(n, d, a)] * p[i2(n, b, c)];
                        s -= g[i2(n, d, b)] * p[i2(n, a, c)];
                        weyl_lowered[i4(n, a, b, c, d)] = s;
                    }
                }
            }
        }
        let mut weyl = vec![0.0; n * n * n * n];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let mut s = 0.0;
                        for e in 0..n {
                            s += g_inv[i2(n, c, e)] * weyl_lowered[i4(n, a, b, e, d)];
                        }
                        weyl[i4(n, a, b, c, d)] = s;
                    }
                }
            }
        }
        Some(ConformalPack {
            schouten: p,
            dschouten: dp,
            cov_schouten: covp,
            j,
            dj,
            cotton,
            weyl_lowered,
            weyl,
        })
    } else {
        None
    };

    Ok(Geometry { conn, d2gamma, driemann, dricci, dscal, dg, dg_inv, proj, conf })
}
