//! Shared helpers for the integration tests: finite-difference curvature
//! oracles, deterministic random states, and polyline geometry.
#![allow(dead_code)]

use distcurve::curves::CurveState;
use distcurve::geometry::{christoffel_at, curvature_at, Metric};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[inline]
pub fn i2(n: usize, a: usize, b: usize) -> usize {
    a * n + b
}

#[inline]
pub fn i3(n: usize, a: usize, b: usize, c: usize) -> usize {
    (a * n + b) * n + c
}

#[inline]
pub fn i4(n: usize, a: usize, b: usize, c: usize, d: usize) -> usize {
    ((a * n + b) * n + c) * n + d
}

/// Largest entry gap between two component arrays, relative to the larger
/// overall scale with a floor of one, so identically zero quantities are
/// compared absolutely.
pub fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a
        .iter()
        .chain(b.iter())
        .fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
        / scale
}

fn metric_values(metric: &Metric, x: &[f64]) -> Vec<f64> {
    let n = metric.dim();
    let mut out = vec![0.0; n * n];
    metric.eval_components(x, &mut out);
    out
}

fn invert(n: usize, g: &[f64]) -> Vec<f64> {
    let gm = nalgebra::DMatrix::from_fn(n, n, |i, j| g[i2(n, i, j)]);
    let inv = gm.try_inverse().expect("oracle metric is nondegenerate");
    (0..n * n).map(|k| inv[(k / n, k % n)]).collect()
}

/// Christoffel symbols from central differences of the raw metric
/// components, entirely independent of the jet machinery.
pub fn fd_gamma(metric: &Metric, x: &[f64], h: f64) -> Vec<f64> {
    let n = metric.dim();
    let g = metric_values(metric, x);
    let g_inv = invert(n, &g);
    let mut dg = vec![0.0; n * n * n];
    for c in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[c] += h;
        xm[c] -= h;
        let gp = metric_values(metric, &xp);
        let gm = metric_values(metric, &xm);
        for a in 0..n {
            for b in 0..n {
                dg[i3(n, c, a, b)] = (gp[i2(n, a, b)] - gm[i2(n, a, b)]) / (2.0 * h);
            }
        }
    }
    let mut gamma = vec![0.0; n * n * n];
    for c in 0..n {
        for a in 0..n {
            for b in 0..n {
                let mut s = 0.0;
                for d in 0..n {
                    s += 0.5
                        * g_inv[i2(n, c, d)]
                        * (dg[i3(n, a, d, b)] + dg[i3(n, b, d, a)] - dg[i3(n, d, a, b)]);
                }
                gamma[i3(n, c, a, b)] = s;
            }
        }
    }
    gamma
}

/// Curvature tensor from central differences of the jet-computed
/// Christoffel symbols, so each differentiation level is checked against
/// one finite-difference step.
pub fn fd_riemann(metric: &Metric, x: &[f64], h: f64) -> Vec<f64> {
    let n = metric.dim();
    let gamma = christoffel_at(metric, x).unwrap().gamma;
    let mut dgamma = vec![0.0; n * n * n * n];
    for d in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[d] += h;
        xm[d] -= h;
        let gp = christoffel_at(metric, &xp).unwrap().gamma;
        let gm = christoffel_at(metric, &xm).unwrap().gamma;
        for k in 0..n * n * n {
            dgamma[d * n * n * n + k] = (gp[k] - gm[k]) / (2.0 * h);
        }
    }
    let mut riemann = vec![0.0; n * n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let mut s = dgamma[i4(n, a, c, b, d)] - dgamma[i4(n, b, c, a, d)];
                    for e in 0..n {
                        s += gamma[i3(n, c, a, e)] * gamma[i3(n, e, b, d)];
                        s -= gamma[i3(n, c, b, e)] * gamma[i3(n, e, a, d)];
                    }
                    riemann[i4(n, a, b, c, d)] = s;
                }
            }
        }
    }
    riemann
}

/// Both Schouten flavours assembled from the finite-difference curvature.
pub fn fd_schoutens(
    metric: &Metric,
    x: &[f64],
    h: f64,
) -> (Vec<f64>, Option<(Vec<f64>, f64)>) {
    let n = metric.dim();
    let riemann = fd_riemann(metric, x, h);
    let g = metric_values(metric, x);
    let g_inv = invert(n, &g);
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
            scal += g_inv[i2(n, b, d)] * ricci[i2(n, b, d)];
        }
    }
    let proj: Vec<f64> = ricci.iter().map(|r| r / (n as f64 - 1.0)).collect();
    let conf = if n >= 3 {
        let j = scal / (2.0 * (n as f64 - 1.0));
        let p: Vec<f64> = (0..n * n)
            .map(|i| (ricci[i] - j * g[i]) / (n as f64 - 2.0))
            .collect();
        Some((p, j))
    } else {
        None
    };
    (proj, conf)
}

/// Covariant Schouten derivative from central differences of the
/// jet-computed Schouten tensor, projective or conformal flavour.
pub fn fd_cov_schouten(metric: &Metric, x: &[f64], h: f64, conformal: bool) -> Vec<f64> {
    let n = metric.dim();
    let schouten_at = |p: &[f64]| -> Vec<f64> {
        let geom = curvature_at(metric, p).unwrap();
        if conformal {
            geom.conn.conf_schouten.clone().unwrap()
        } else {
            geom.conn.proj_schouten.clone()
        }
    };
    let gamma = christoffel_at(metric, x).unwrap().gamma;
    let p0 = schouten_at(x);
    let mut cov = vec![0.0; n * n * n];
    for c in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[c] += h;
        xm[c] -= h;
        let pp = schouten_at(&xp);
        let pm = schouten_at(&xm);
        for a in 0..n {
            for b in 0..n {
                let mut s = (pp[i2(n, a, b)] - pm[i2(n, a, b)]) / (2.0 * h);
                for e in 0..n {
                    s -= gamma[i3(n, e, c, a)] * p0[i2(n, e, b)];
                    s -= gamma[i3(n, e, c, b)] * p0[i2(n, a, e)];
                }
                cov[i3(n, c, a, b)] = s;
            }
        }
    }
    cov
}

/// Projective Weyl tensor assembled from the finite-difference curvature.
pub fn fd_proj_weyl(metric: &Metric, x: &[f64], h: f64) -> Vec<f64> {
    let n = metric.dim();
    let riemann = fd_riemann(metric, x, h);
    let (proj, _) = fd_schoutens(metric, x, h);
    let mut weyl = riemann;
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    if c == a {
                        weyl[i4(n, a, b, c, d)] -= proj[i2(n, b, d)];
                    }
                    if c == b {
                        weyl[i4(n, a, b, c, d)] += proj[i2(n, a, d)];
                    }
                }
            }
        }
    }
    weyl
}

/// Lowered conformal Weyl tensor from the finite-difference curvature.
pub fn fd_conf_weyl_lowered(metric: &Metric, x: &[f64], h: f64) -> Option<Vec<f64>> {
    let n = metric.dim();
    if n < 3 {
        return None;
    }
    let riemann = fd_riemann(metric, x, h);
    let (_, conf) = fd_schoutens(metric, x, h);
    let (p, _j) = conf?;
    let g = metric_values(metric, x);
    let mut weyl = vec![0.0; n * n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let mut s = 0.0;
                    for e in 0..n {
                        s += g[i2(n, c, e)] * riemann[i4(n, a, b, e, d)];
                    }
                    s -= g[i2(n, c, a)] * p[i2(n, b, d)];
                    s += g[i2(n, c, b)] * p[i2(n, a, d)];
                    s += g[i2(n, d, a)] * p[i2(n, b, c)];
                    s -= g[i2(n, d, b)] * p[i2(n, a, c)];
                    weyl[i4(n, a, b, c, d)] = s;
                }
            }
        }
    }
    Some(weyl)
}

/// Cotton tensors in the two conventions used by the curvature packs.
pub fn fd_cottons(metric: &Metric, x: &[f64], h: f64) -> (Vec<f64>, Option<Vec<f64>>) {
    let n = metric.dim();
    let covp = fd_cov_schouten(metric, x, h, false);
    let mut proj_cotton = vec![0.0; n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                proj_cotton[i3(n, a, b, c)] = covp[i3(n, a, b, c)] - covp[i3(n, b, a, c)];
            }
        }
    }
    let conf_cotton = if n >= 3 {
        let covc = fd_cov_schouten(metric, x, h, true);
        let mut cotton = vec![0.0; n * n * n];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    cotton[i3(n, a, b, c)] = covc[i3(n, b, c, a)] - covc[i3(n, c, b, a)];
                }
            }
        }
        Some(cotton)
    } else {
        None
    };
    (proj_cotton, conf_cotton)
}

/// Random point inside an axis-aligned box.
pub fn random_point(rng: &mut ChaCha8Rng, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Random curve state with metric-unit velocity and orthogonal covariant
/// acceleration, suitable as conformal-circle initial data.
pub fn random_unit_state(metric: &Metric, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> CurveState {
    let n = metric.dim();
    loop {
        let x = random_point(rng, lo, hi, n);
        let chr = match christoffel_at(metric, &x) {
            Ok(c) => c,
            Err(_) => continue,
        };
        let u_raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q = chr.inner(&u_raw, &u_raw);
        if q.abs() < 0.05 {
            continue;
        }
        let norm = q.abs().sqrt();
        let u: Vec<f64> = u_raw.iter().map(|v| v / norm).collect();
        let s = if q > 0.0 { 1.0 } else { -1.0 };
        let a_raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ua = chr.inner(&u, &a_raw);
        let a: Vec<f64> = (0..n).map(|i| a_raw[i] - s * ua * u[i]).collect();
        if chr.inner(&a, &a).abs() < 1e-3 {
            continue;
        }
        return CurveState { t: 0.0, x, u, a };
    }
}

/// Distance from a point to a polyline, minimised over all segments.
pub fn polyline_distance(p: &[f64], line: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for w in line.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let mut ab2 = 0.0;
        let mut ap_ab = 0.0;
        for i in 0..p.len() {
            let d = b[i] - a[i];
            ab2 += d * d;
            ap_ab += (p[i] - a[i]) * d;
        }
        let t = if ab2 > 0.0 { (ap_ab / ab2).clamp(0.0, 1.0) } else { 0.0 };
        let mut d2 = 0.0;
        for i in 0..p.len() {
            let q = a[i] + t * (b[i] - a[i]);
            d2 += (p[i] - q) * (p[i] - q);
        }
        best = best.min(d2);
    }
    best.sqrt()
}
