//! First integrals along distinguished curves and zero-locus scans.
//!
//! Every distinguished curve carries a parallel tractor Sigma built from its
//! velocity and acceleration data. Pairing Sigma (or a symmetric power of
//! it) with any parallel cotractor field produces a function that is
//! constant along the curve, because both factors are parallel for the same
//! connection. This module exposes those pairings at three levels:
//!
//! * closed chart formulas for the classical cases: the Killing contraction
//!   along geodesics, its null conformal analogue, the quadratic integral of
//!   a third-order projective solution, the Tod integral of a conformal
//!   Killing-Yano 2-form along conformal circles, and the third-order
//!   conformal analogue together with its tractor route,
//! * generic pairings of a transported parallel family with the matching
//!   Sigma power, for integrals that have no classical name,
//! * conservation verification along integrated curves, reported with
//!   absolute and relative drift, and grid scans for the zero locus of
//!   solution jets, which picks out distinguished curves as point sets.
//!
//! Conventions: all chart formulas are written in the unit-velocity data
//! `u_hat = u / sigma`, `a_hat` (the trace-adjusted acceleration of the
//! weighted state), and the causal sign `s = sign g(u,u)`, so their values
//! do not depend on the curve parametrisation. The null contraction is the
//! one exception: it uses the raw velocity and is homogeneous of degree one
//! in it, matching the scaling of an affine null parameter.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bgg::{l_tau_conformal, two_form_divergence, BggError, FieldJet, MaskedTractor};
use crate::curves::{
    classify_causal, ode_nabla_u_a, sigma_conformal, sigma_null, sigma_projective,
    weighted_state, CausalClass, CurveError, CurveKind, CurveSamples, CurveState, WeightedState,
};
use crate::geometry::{
    christoffel_at, connection_at, curvature_at, ChristoffelData, Connection, Metric, MetricError,
};
use crate::tensor::{DenseTensor, TensorError, Valence};
use crate::tractor::{
    apply_matrix_slotwise, flat_conformal_transport, transport, PathSample, Structure,
    TractorError,
};

/// Relative holonomy deviation above which a transported family is rejected
/// as not parallel.
pub const PARALLEL_SPOT_TOLERANCE: f64 = 1e-6;

/// Default tolerance on the relative drift of a verified first integral.
pub const DRIFT_TOLERANCE: f64 = 1e-6;

/// Floor for the relative-drift denominator, so integrals whose value is
/// zero report their absolute drift instead of dividing by zero.
pub const DRIFT_FLOOR: f64 = 1e-12;

/// Connection components below this size count as vanishing when probing a
/// transport segment for the flat closed form.
const FLAT_PROBE_TOLERANCE: f64 = 1e-12;

/// Errors from first-integral evaluation, family transport and scans.
#[derive(Debug, Error)]
pub enum IntegralsError {
    #[error("point has {got} coordinates, chart has {want}")]
    BadPoint { got: usize, want: usize },
    #[error("velocity must not be null for this integral")]
    NullVelocity,
    #[error("velocity must be null for this integral (relative norm {0:.3e})")]
    NotNull(f64),
    #[error("field has the wrong shape: expected {expected}")]
    WrongShape { expected: String },
    #[error("only symmetric powers one and two are implemented (got {0})")]
    PowerTooLarge(usize),
    #[error("family rank {rank} matches no curve-tractor power")]
    NoMatchingPower { rank: usize },
    #[error("transported family is not parallel: holonomy deviation {0:.3e}")]
    NotParallel(f64),
    #[error("conformal tractors need chart dimension at least 3 (got {0})")]
    NeedsDimension3(usize),
    #[error("curve has no samples to verify")]
    EmptyCurve,
    #[error("scan grid must match the chart dimension, with lo < hi and nonzero resolution")]
    BadGrid,
    #[error(transparent)]
    Bgg(#[from] BggError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Tractor(#[from] TractorError),
}

#[inline]
fn i2(n: usize, a: usize, b: usize) -> usize {
    a * n + b
}

fn check_point(n: usize, x: &[f64]) -> Result<(), IntegralsError> {
    if x.len() != n {
        return Err(IntegralsError::BadPoint { got: x.len(), want: n });
    }
    Ok(())
}

fn expect_lower(k: &FieldJet, expected: &str) -> Result<(), IntegralsError> {
    if k.rank() == 0 || k.valence().iter().any(|v| *v == Valence::Up) {
        return Err(IntegralsError::WrongShape { expected: expected.to_string() });
    }
    Ok(())
}

fn expect_scalar(tau: &FieldJet) -> Result<(), IntegralsError> {
    if tau.rank() != 0 {
        return Err(IntegralsError::WrongShape { expected: "a scalar field".to_string() });
    }
    Ok(())
}

/// Rejects fields without their natural conformal weight. A wrong weight is
/// invisible on a fixed chart and only breaks covariance after a rescale, so
/// the conformal integrals refuse it up front.
fn expect_weight(field: &FieldJet, weight: f64) -> Result<(), IntegralsError> {
    if field.weight() != weight {
        return Err(IntegralsError::WrongShape {
            expected: format!("conformal weight {weight}, not {}", field.weight()),
        });
    }
    Ok(())
}

/// Unit velocity and causal sign; errors on null input.
fn unit_velocity(chr: &ChristoffelData, u: &[f64]) -> Result<(Vec<f64>, f64), IntegralsError> {
    let q = chr.inner(u, u);
    if classify_causal(q, u) == CausalClass::Null {
        return Err(IntegralsError::NullVelocity);
    }
    let s = if q > 0.0 { 1.0 } else { -1.0 };
    let len = q.abs().sqrt();
    Ok((u.iter().map(|v| v / len).collect(), s))
}

fn require_null(chr: &ChristoffelData, u: &[f64]) -> Result<(), IntegralsError> {
    let q = chr.inner(u, u);
    if classify_causal(q, u) != CausalClass::Null {
        let u2: f64 = u.iter().map(|v| v * v).sum();
        return Err(IntegralsError::NotNull(q.abs() / u2.max(1e-300)));
    }
    Ok(())
}

/// Contract every slot of a lower tensor with the same chart vector.
fn contract_with_velocity(t: &DenseTensor, v: &[f64]) -> f64 {
    let n = t.dim();
    let mut data = t.data().to_vec();
    let mut len = data.len();
    for _ in 0..t.rank() {
        len /= n;
        for i in 0..len {
            let mut acc = 0.0;
            for (j, vj) in v.iter().enumerate() {
                acc += data[i * n + j] * vj;
            }
            data[i] = acc;
        }
    }
    data[0]
}

/// Weighted curve data at a single state, with the third jet slot unused.
fn pointwise_weighted(
    conn: &Connection,
    state: &CurveState,
) -> Result<WeightedState, IntegralsError> {
    let zeros = vec![0.0; conn.dim()];
    Ok(weighted_state(conn, &state.u, &state.a, &zeros)?)
}

// ---------------------------------------------------------------------------
// Chart formulas for the classical first integrals.
// ---------------------------------------------------------------------------

/// Contraction of a Killing (or higher-rank Killing) tensor with the unit
/// velocity in every slot. Constant along non-null geodesics when the field
/// satisfies the Killing equation.
pub fn fi_killing(
    metric: &Metric,
    state: &CurveState,
    k: &FieldJet,
) -> Result<f64, IntegralsError> {
    expect_lower(k, "a lower-index tensor of rank at least one")?;
    let chr = christoffel_at(metric, &state.x)?;
    let (u_hat, _) = unit_velocity(&chr, &state.u)?;
    Ok(contract_with_velocity(&k.value_at(&state.x)?, &u_hat))
}

/// Contraction of a conformal Killing (or conformal Killing tensor) field
/// with the raw velocity of a null geodesic. Homogeneous of degree one per
/// slot in the affine parametrisation. The field must carry its natural
/// conformal weight of two per slot.
pub fn fi_conformal_killing_null(
    metric: &Metric,
    state: &CurveState,
    k: &FieldJet,
) -> Result<f64, IntegralsError> {
    expect_lower(k, "a lower-index tensor of rank at least one")?;
    expect_weight(k, 2.0 * k.rank() as f64)?;
    let chr = christoffel_at(metric, &state.x)?;
    require_null(&chr, &state.u)?;
    Ok(contract_with_velocity(&k.value_at(&state.x)?, &state.u))
}

/// Quadratic geodesic integral of a third-order projective solution:
/// `tau Hess(u,u) + 2 tau^2 P(u,u) - (u . grad tau)^2 / 2` in unit velocity.
pub fn fi_tau_projective(
    metric: &Metric,
    state: &CurveState,
    tau: &FieldJet,
) -> Result<f64, IntegralsError> {
    expect_scalar(tau)?;
    let geom = curvature_at(metric, &state.x)?;
    let n = metric.dim();
    let (u_hat, _) = unit_velocity(&geom.conn.chr, &state.u)?;
    let jets = tau.covariant_jet(&geom, 2)?;
    let t = jets[0].get(&[]);
    let p = &geom.conn.proj_schouten;
    let mut udt = 0.0;
    let mut hess = 0.0;
    let mut puu = 0.0;
    for a in 0..n {
        udt += u_hat[a] * jets[1].get(&[a]);
        for b in 0..n {
            hess += u_hat[a] * u_hat[b] * jets[2].get(&[a, b]);
            puu += u_hat[a] * u_hat[b] * p[i2(n, a, b)];
        }
    }
    Ok(t * hess + 2.0 * t * t * puu - 0.5 * udt * udt)
}

/// Conformal-circle integral of a weight-three conformal Killing-Yano
/// 2-form: `k(u_hat, a_hat) - s div k (u_hat) / (n - 1)`.
pub fn fi_cky_tod(
    metric: &Metric,
    state: &CurveState,
    k: &FieldJet,
) -> Result<f64, IntegralsError> {
    if k.rank() != 2 || k.valence().iter().any(|v| *v == Valence::Up) {
        return Err(IntegralsError::WrongShape {
            expected: "a lower-index 2-form".to_string(),
        });
    }
    expect_weight(k, 3.0)?;
    let geom = curvature_at(metric, &state.x)?;
    let n = metric.dim();
    let ws = pointwise_weighted(&geom.conn, state)?;
    let jets = k.covariant_jet(&geom, 1)?;
    let value = &jets[0];
    let scale = value.max_abs().max(1.0);
    for a in 0..n {
        for b in 0..a {
            if (value.get(&[a, b]) + value.get(&[b, a])).abs() > 1e-9 * scale {
                return Err(IntegralsError::WrongShape {
                    expected: "an antisymmetric 2-form".to_string(),
                });
            }
        }
    }
    let divk = two_form_divergence(&geom.conn.chr, &jets[1]);
    let mut out = 0.0;
    for a in 0..n {
        for b in 0..n {
            out += ws.u_hat[a] * ws.a_hat[b] * value.get(&[a, b]);
        }
        out -= ws.s / (n as f64 - 1.0) * ws.u_hat[a] * divk[a];
    }
    Ok(out)
}

/// Conformal-circle integral of a third-order conformal solution:
/// `M(u_hat, u_hat)/2 - s q/(n+2) - a_hat . grad tau - s |a_hat|^2 tau`
/// with `M = Hess tau + 2 P tau - g q/(n+2)` and `q = Lap tau + 2 J tau`.
/// The scalar must be a weight-two density, the weight at which the value
/// is invariant under a change of conformal scale.
pub fn fi_tau_conformal(
    metric: &Metric,
    state: &CurveState,
    tau: &FieldJet,
) -> Result<f64, IntegralsError> {
    expect_scalar(tau)?;
    expect_weight(tau, 2.0)?;
    let geom = curvature_at(metric, &state.x)?;
    let n = metric.dim();
    let conn = &geom.conn;
    let p = conn
        .conf_schouten
        .as_ref()
        .ok_or(IntegralsError::NeedsDimension3(n))?;
    let j = conn.conf_j.ok_or(IntegralsError::NeedsDimension3(n))?;
    let ws = pointwise_weighted(conn, state)?;
    let jets = tau.covariant_jet(&geom, 2)?;
    let t = jets[0].get(&[]);
    let g = &conn.chr.g;
    let g_inv = &conn.chr.g_inv;
    let mut lap = 0.0;
    for a in 0..n {
        for b in 0..n {
            lap += g_inv[i2(n, a, b)] * jets[2].get(&[a, b]);
        }
    }
    let share = (lap + 2.0 * j * t) / (n as f64 + 2.0);
    let mut umu = 0.0;
    let mut adt = 0.0;
    for a in 0..n {
        adt += ws.a_hat[a] * jets[1].get(&[a]);
        for b in 0..n {
            let m_ab = jets[2].get(&[a, b]) + 2.0 * p[i2(n, a, b)] * t - g[i2(n, a, b)] * share;
            umu += ws.u_hat[a] * ws.u_hat[b] * m_ab;
        }
    }
    let aa = conn.chr.inner(&ws.a_hat, &ws.a_hat);
    Ok(0.5 * umu - ws.s * share - adt - ws.s * aa * t)
}

// ---------------------------------------------------------------------------
// Curve tractors beyond Sigma itself.
// ---------------------------------------------------------------------------

/// Rank-2 upper curve tractor of a non-null conformal curve, built from the
/// unit velocity and the adjusted acceleration. Equals the (1,3)-trace of
/// the Sigma square divided by -2, which the tests pin down.
pub fn s_tractor(conn: &Connection, ws: &WeightedState) -> Result<DenseTensor, IntegralsError> {
    let n = conn.dim();
    if conn.conf_schouten.is_none() {
        return Err(IntegralsError::NeedsDimension3(n));
    }
    let nt = n + 2;
    let mut s = DenseTensor::zeros(nt, &[Valence::Up, Valence::Up])?;
    for a in 0..n {
        for b in 0..n {
            s.set(&[1 + a, 1 + b], ws.u_hat[a] * ws.u_hat[b]);
        }
        s.set(&[nt - 1, 1 + a], -ws.a_hat[a]);
        s.set(&[1 + a, nt - 1], -ws.a_hat[a]);
    }
    s.set(&[0, nt - 1], ws.s);
    s.set(&[nt - 1, 0], ws.s);
    let aa = conn.chr.inner(&ws.a_hat, &ws.a_hat);
    s.set(&[nt - 1, nt - 1], -ws.s * aa);
    Ok(s)
}

/// Tractor route to [`fi_tau_conformal`]: pair the curve tractor S with the
/// splitting of the scalar solution. The two routes agree identically; the
/// tests hold them to 1e-9 on curved charts.
pub fn fi_s_pair_h(
    metric: &Metric,
    state: &CurveState,
    tau: &FieldJet,
) -> Result<f64, IntegralsError> {
    expect_scalar(tau)?;
    expect_weight(tau, 2.0)?;
    let geom = curvature_at(metric, &state.x)?;
    let ws = pointwise_weighted(&geom.conn, state)?;
    let s = s_tractor(&geom.conn, &ws)?;
    let h = l_tau_conformal(&geom, tau)?;
    Ok(h.pair_full_guarded(&s)?)
}

/// Symmetric power of a curve tractor, as stored components. Power one is
/// the tractor itself; power two is the outer square, which is already
/// symmetric under block exchange. Higher powers are not implemented.
pub fn sym_power_sigma(sigma: &DenseTensor, m0: usize) -> Result<DenseTensor, IntegralsError> {
    match m0 {
        1 => Ok(sigma.clone()),
        2 => Ok(sigma.outer(sigma)?),
        m => Err(IntegralsError::PowerTooLarge(m)),
    }
}

/// Square of a rank-3 upper curve tractor with the last slots traced:
/// `S^{ABCD} = Sigma^{ABE} Sigma^{CD}_E` against the tractor metric.
pub fn sigma_square_traced(
    h_down: &[f64],
    sigma: &DenseTensor,
) -> Result<DenseTensor, IntegralsError> {
    let nt = sigma.dim();
    if sigma.rank() != 3 || sigma.valence().iter().any(|v| *v == Valence::Down) {
        return Err(IntegralsError::WrongShape {
            expected: "an upper rank-3 tractor".to_string(),
        });
    }
    let hm = DenseTensor::from_vec(nt, &[Valence::Down, Valence::Down], h_down.to_vec())?;
    let lowered = sigma.convert_slot(2, &hm)?;
    Ok(sigma.contract_with(2, &lowered, 2)?)
}

/// Trace-free projection of an upper rank-4 tractor with the symmetries of
/// a curvature tensor: antisymmetric in each pair, symmetric under pair
/// exchange. Subtracting the metric-traced parts leaves the irreducible
/// window-shaped component.
pub fn cartan_project_22(
    h_down: &[f64],
    h_up: &[f64],
    s4: &DenseTensor,
) -> Result<DenseTensor, IntegralsError> {
    let nt = s4.dim();
    if s4.rank() != 4 || s4.valence().iter().any(|v| *v == Valence::Down) {
        return Err(IntegralsError::WrongShape {
            expected: "an upper rank-4 tractor".to_string(),
        });
    }
    if nt < 3 {
        return Err(IntegralsError::WrongShape {
            expected: "tractor dimension at least 3".to_string(),
        });
    }
    let mut t13 = vec![0.0; nt * nt];
    for b in 0..nt {
        for d in 0..nt {
            let mut acc = 0.0;
            for a in 0..nt {
                for c in 0..nt {
                    acc += h_down[i2(nt, a, c)] * s4.get(&[a, b, c, d]);
                }
            }
            t13[i2(nt, b, d)] = acc;
        }
    }
    let mut tau0 = 0.0;
    for b in 0..nt {
        for d in 0..nt {
            tau0 += h_down[i2(nt, b, d)] * t13[i2(nt, b, d)];
        }
    }
    let c1 = 1.0 / (nt as f64 - 2.0);
    let c2 = tau0 / ((nt as f64 - 1.0) * (nt as f64 - 2.0));
    let mut out = s4.clone();
    let hu = |a: usize, b: usize| h_up[i2(nt, a, b)];
    let tt = |a: usize, b: usize| t13[i2(nt, a, b)];
    for a in 0..nt {
        for b in 0..nt {
            for c in 0..nt {
                for d in 0..nt {
                    let trace_part = hu(a, c) * tt(b, d) - hu(b, c) * tt(a, d)
                        - hu(a, d) * tt(b, c)
                        + hu(b, d) * tt(a, c);
                    let scalar_part = hu(a, c) * hu(b, d) - hu(a, d) * hu(b, c);
                    out.add_at(&[a, b, c, d], -c1 * trace_part + c2 * scalar_part);
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Transported parallel families.
// ---------------------------------------------------------------------------

/// A tractor field defined by parallel transport of a base value from a
/// base point. Evaluation transports along the straight coordinate segment;
/// this is well defined exactly when the tractor holonomy vanishes, which
/// [`ParallelFamily::spot_check`] probes with a dog-leg comparison.
#[derive(Debug, Clone)]
pub struct ParallelFamily {
    structure: Structure,
    base_point: Vec<f64>,
    base: MaskedTractor,
}

impl ParallelFamily {
    /// Wrap a base value without any checking.
    pub fn new(structure: Structure, base_point: Vec<f64>, base: MaskedTractor) -> Self {
        ParallelFamily { structure, base_point, base }
    }

    /// Construct and run the holonomy spot check, rejecting families whose
    /// transport is visibly path dependent.
    pub fn verified(
        metric: &Metric,
        structure: Structure,
        base_point: Vec<f64>,
        base: MaskedTractor,
    ) -> Result<Self, IntegralsError> {
        let family = ParallelFamily::new(structure, base_point, base);
        let deviation = family.spot_check(metric)?;
        if deviation > PARALLEL_SPOT_TOLERANCE {
            return Err(IntegralsError::NotParallel(deviation));
        }
        Ok(family)
    }

    /// Which parabolic structure the family transports in.
    pub fn structure(&self) -> Structure {
        self.structure
    }

    /// Anchor point of the transport.
    pub fn base_point(&self) -> &[f64] {
        &self.base_point
    }

    /// Base value at the anchor point.
    pub fn base(&self) -> &MaskedTractor {
        &self.base
    }

    /// Transport the base value to `x` along the straight segment. Charts
    /// whose connection vanishes at the probe points use the closed-form
    /// flat transport matrix; everything else integrates the transport
    /// equation with Runge-Kutta steps.
    pub fn eval(&self, metric: &Metric, x: &[f64]) -> Result<MaskedTractor, IntegralsError> {
        let n = metric.dim();
        check_point(n, x)?;
        let delta: Vec<f64> = (0..n).map(|i| x[i] - self.base_point[i]).collect();
        let dist = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if dist < 1e-14 {
            return Ok(self.base.clone());
        }
        if segment_is_flat(metric, &self.base_point, x)? {
            let g = christoffel_at(metric, &self.base_point)?.g;
            let neg: Vec<f64> = delta.iter().map(|v| -v).collect();
            let (m, m_inv) = match self.structure {
                Structure::Conformal => (
                    flat_conformal_transport(&g, n, &delta),
                    flat_conformal_transport(&g, n, &neg),
                ),
                Structure::Projective => {
                    (flat_projective_transport(n, &delta), flat_projective_transport(n, &neg))
                }
            };
            let moved = apply_matrix_slotwise(&m, Some(&m_inv), &self.base.tensor)?;
            return Ok(MaskedTractor { tensor: moved, unknown: self.base.unknown.clone() });
        }
        let steps = ((dist / 0.01).ceil() as usize).clamp(32, 800);
        let path = segment_path(&self.base_point, x, steps);
        let moved = transport(metric, self.structure, &path, &self.base.tensor)?;
        let tensor = moved.into_iter().next_back().expect("transport returns every sample");
        Ok(MaskedTractor { tensor, unknown: self.base.unknown.clone() })
    }

    /// Worst relative deviation between the direct transport to a nearby
    /// target and two dog-leg routes through coordinate corners. Tractor
    /// holonomy shows up here; a family that is the restriction of a genuine
    /// parallel field passes at integration accuracy.
    pub fn spot_check(&self, metric: &Metric) -> Result<f64, IntegralsError> {
        let n = metric.dim();
        let scale = self.base.tensor.max_abs().max(1e-12);
        let second = 1 % n;
        let mut corner_a = self.base_point.clone();
        corner_a[0] += 0.35;
        let mut corner_b = self.base_point.clone();
        corner_b[second] += 0.2;
        let mut target = self.base_point.clone();
        target[0] += 0.35;
        target[second] += 0.2;
        let direct = self.eval(metric, &target)?;
        let mut worst = 0.0f64;
        for corner in [corner_a, corner_b] {
            let mid = self.eval(metric, &corner)?;
            let leg = ParallelFamily::new(self.structure, corner, mid);
            let via = leg.eval(metric, &target)?;
            worst = worst.max(via.tensor.sub(&direct.tensor)?.max_abs());
        }
        Ok(worst / scale)
    }
}

/// Closed-form parallel transport of an upper projective tractor in a flat
/// affine chart, as a matrix for the displacement `delta`.
fn flat_projective_transport(n: usize, delta: &[f64]) -> Vec<f64> {
    let nt = n + 1;
    let mut m = vec![0.0; nt * nt];
    for i in 0..nt {
        m[i2(nt, i, i)] = 1.0;
    }
    for (a, d) in delta.iter().enumerate() {
        m[i2(nt, a, n)] = -d;
    }
    m
}

/// Probe the connection along the straight segment from `a` to `b`. Returns
/// true when the Christoffel symbols and the Ricci tensor vanish at five
/// probe points, which is when the flat transport matrices apply. Charts
/// that curve strictly between the probes should use dense transport.
fn segment_is_flat(metric: &Metric, a: &[f64], b: &[f64]) -> Result<bool, IntegralsError> {
    let n = metric.dim();
    for w in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let p: Vec<f64> = (0..n).map(|i| a[i] + w * (b[i] - a[i])).collect();
        let conn = connection_at(metric, &p)?;
        if conn.chr.gamma.iter().any(|v| v.abs() > FLAT_PROBE_TOLERANCE) {
            return Ok(false);
        }
        if conn.ricci.iter().any(|v| v.abs() > FLAT_PROBE_TOLERANCE) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Uniform straight-segment path from `a` to `b` for dense transport.
fn segment_path(a: &[f64], b: &[f64], steps: usize) -> Vec<PathSample> {
    let n = a.len();
    let u: Vec<f64> = (0..n).map(|i| b[i] - a[i]).collect();
    (0..=steps)
        .map(|k| {
            let t = k as f64 / steps as f64;
            PathSample {
                t,
                x: (0..n).map(|i| a[i] + t * u[i]).collect(),
                u: u.clone(),
            }
        })
        .collect()
}

/// Pair a transported family with the symmetric Sigma power matching its
/// rank: rank 2m families pair with the m-th power of the geodesic bivector
/// (projective) or of the null-geodesic bivector (conformal), rank 3m
/// conformal families pair with the m-th power of the conformal-circle
/// 3-tractor. The curve kind supplies the third-order data of the state.
pub fn fi_generic_pairing(
    metric: &Metric,
    kind: CurveKind,
    state: &CurveState,
    family: &ParallelFamily,
) -> Result<f64, IntegralsError> {
    let field = family.eval(metric, &state.x)?;
    let rank = field.tensor.rank();
    let n = metric.dim();
    let power = match family.structure() {
        Structure::Projective => {
            if rank % 2 != 0 || rank == 0 {
                return Err(IntegralsError::NoMatchingPower { rank });
            }
            let base = sigma_projective(n, &state.u)?;
            sym_power_sigma(&base, rank / 2)?
        }
        Structure::Conformal => {
            if rank % 3 == 0 && rank > 0 {
                let conn = connection_at(metric, &state.x)?;
                let nabla_u_a = ode_nabla_u_a(&conn, kind, &state.u, &state.a)?;
                let ws = weighted_state(&conn, &state.u, &state.a, &nabla_u_a)?;
                let base = sigma_conformal(&conn, &ws)?;
                sym_power_sigma(&base, rank / 3)?
            } else if rank % 2 == 0 && rank > 0 {
                let chr = christoffel_at(metric, &state.x)?;
                require_null(&chr, &state.u)?;
                let base = sigma_null(n, &state.u)?;
                sym_power_sigma(&base, rank / 2)?
            } else {
                return Err(IntegralsError::NoMatchingPower { rank });
            }
        }
    };
    Ok(field.pair_full_guarded(&power)?)
}

// ---------------------------------------------------------------------------
// First-integral recipes and conservation verification.
// ---------------------------------------------------------------------------

/// A first integral recipe: which quantity to evaluate at each curve state.
#[derive(Debug, Clone)]
pub enum FirstIntegral {
    /// Killing-tensor contraction with the unit velocity.
    Killing { field: FieldJet },
    /// Conformal-Killing contraction with the raw null velocity.
    ConformalKillingNull { field: FieldJet },
    /// Quadratic geodesic integral of a third-order projective solution.
    TauProjective { tau: FieldJet },
    /// Tod's conformal-circle integral of a conformal Killing-Yano 2-form.
    CkyTod { field: FieldJet },
    /// Conformal-circle integral of a third-order conformal solution.
    TauConformal { tau: FieldJet },
    /// The same quantity through the tractor pairing with the splitting.
    SPairH { tau: FieldJet },
    /// Pairing of a transported parallel family with the Sigma power.
    GenericPairing { family: ParallelFamily },
}

impl FirstIntegral {
    /// Stable identifier used in reports and the command-line output.
    pub fn kind(&self) -> &'static str {
        match self {
            FirstIntegral::Killing { .. } => "killing_contraction",
            FirstIntegral::ConformalKillingNull { .. } => "conformal_killing_null",
            FirstIntegral::TauProjective { .. } => "tau_projective",
            FirstIntegral::CkyTod { .. } => "cky_tod",
            FirstIntegral::TauConformal { .. } => "tau_conformal",
            FirstIntegral::SPairH { .. } => "S_pair_H",
            FirstIntegral::GenericPairing { .. } => "generic_pairing",
        }
    }

    /// Evaluate at one curve state. The curve kind fixes the third-order
    /// data consumed by tractor pairings; the chart formulas ignore it.
    pub fn evaluate(
        &self,
        metric: &Metric,
        kind: CurveKind,
        state: &CurveState,
    ) -> Result<f64, IntegralsError> {
        match self {
            FirstIntegral::Killing { field } => fi_killing(metric, state, field),
            FirstIntegral::ConformalKillingNull { field } => {
                fi_conformal_killing_null(metric, state, field)
            }
            FirstIntegral::TauProjective { tau } => fi_tau_projective(metric, state, tau),
            FirstIntegral::CkyTod { field } => fi_cky_tod(metric, state, field),
            FirstIntegral::TauConformal { tau } => fi_tau_conformal(metric, state, tau),
            FirstIntegral::SPairH { tau } => fi_s_pair_h(metric, state, tau),
            FirstIntegral::GenericPairing { family } => {
                fi_generic_pairing(metric, kind, state, family)
            }
        }
    }
}

/// Outcome of checking one first integral along one integrated curve.
#[derive(Debug, Clone, Serialize)]
pub struct ConservationReport {
    pub kind: String,
    /// Value at the first sample.
    #[serde(rename = "Q0")]
    pub q0: f64,
    /// Largest deviation from the first value over the whole curve.
    pub abs_drift: f64,
    /// Absolute drift over `max(|Q0|, DRIFT_FLOOR)`.
    pub rel_drift: f64,
    pub n_samples: usize,
    pub pass: bool,
    /// Integral value at every sample, in curve order.
    #[serde(skip)]
    pub values: Vec<f64>,
}

/// Evaluate a first integral at every sample of an integrated curve and
/// report the drift. `pass` compares the relative drift against `tol`.
pub fn verify_conservation(
    metric: &Metric,
    curve: &CurveSamples,
    integral: &FirstIntegral,
    tol: f64,
) -> Result<ConservationReport, IntegralsError> {
    if curve.states.is_empty() {
        return Err(IntegralsError::EmptyCurve);
    }
    let mut values = Vec::with_capacity(curve.states.len());
    for state in &curve.states {
        values.push(integral.evaluate(metric, curve.kind, state)?);
    }
    let q0 = values[0];
    let abs_drift = values.iter().fold(0.0f64, |m, v| m.max((v - q0).abs()));
    let rel_drift = abs_drift / q0.abs().max(DRIFT_FLOOR);
    Ok(ConservationReport {
        kind: integral.kind().to_string(),
        q0,
        abs_drift,
        rel_drift,
        n_samples: values.len(),
        pass: rel_drift <= tol,
        values,
    })
}

// ---------------------------------------------------------------------------
// Zero-locus scans.
// ---------------------------------------------------------------------------

/// Rectangular cell grid over a coordinate box. Cells are addressed by a
/// multi-index; values are sampled at cell centers.
#[derive(Debug, Clone)]
pub struct ScanGrid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    resolution: Vec<usize>,
}

impl ScanGrid {
    /// Validate box corners and per-axis cell counts.
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, resolution: Vec<usize>) -> Result<Self, IntegralsError> {
        let n = lo.len();
        if n == 0 || hi.len() != n || resolution.len() != n {
            return Err(IntegralsError::BadGrid);
        }
        for i in 0..n {
            if !(lo[i] < hi[i]) || resolution[i] == 0 {
                return Err(IntegralsError::BadGrid);
            }
        }
        Ok(ScanGrid { lo, hi, resolution })
    }

    /// Number of axes.
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Cells per axis.
    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    /// Cell edge length per axis.
    pub fn spacing(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| (self.hi[i] - self.lo[i]) / self.resolution[i] as f64)
            .collect()
    }

    /// Center point of the cell at `index`.
    pub fn cell_center(&self, index: &[usize]) -> Vec<f64> {
        let sp = self.spacing();
        (0..self.dim())
            .map(|i| self.lo[i] + (index[i] as f64 + 0.5) * sp[i])
            .collect()
    }

    /// Total number of cells.
    pub fn cell_count(&self) -> usize {
        self.resolution.iter().product()
    }
}

/// One grid cell whose predicate norms all pass the tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct ScanHit {
    pub index: Vec<usize>,
    pub center: Vec<f64>,
    pub norms: Vec<f64>,
}

/// Which solution jets must vanish together for a cell to count as a hit.
/// The joint zero set of the listed data is exactly a distinguished curve
/// for solutions coming from a decomposable parallel tractor.
#[derive(Debug, Clone)]
pub enum LocusPredicate {
    /// A conformal Killing-Yano 2-form with its alternated gradient; the
    /// joint zero locus is a conformal circle.
    CkyJet { k: FieldJet },
    /// A conformal Killing 1-form with its alternated gradient; the joint
    /// zero locus is an unparametrised null geodesic.
    ConformalKillingJet { k: FieldJet },
    /// A projective solution bivector; its zero locus is a geodesic.
    BivectorValue { sigma: FieldJet },
    /// The 2-form and alternated-gradient blocks read off a transported
    /// parallel rank-3 conformal cotractor.
    ParallelCky { family: ParallelFamily },
    /// The bivector block read off a transported parallel rank-2 projective
    /// tractor.
    ParallelBivector { family: ParallelFamily },
}

impl LocusPredicate {
    /// How many norm components the predicate reports per cell.
    pub fn norm_count(&self) -> usize {
        match self {
            LocusPredicate::CkyJet { .. } => 2,
            LocusPredicate::ConformalKillingJet { .. } => 2,
            LocusPredicate::BivectorValue { .. } => 1,
            LocusPredicate::ParallelCky { .. } => 2,
            LocusPredicate::ParallelBivector { .. } => 1,
        }
    }

    /// Max-norm of each datum at a chart point. Alternated gradients of
    /// lower-index forms coincide with alternated coordinate partials, so
    /// the jet predicates do not need curvature at the sample point.
    pub fn norms_at(&self, metric: &Metric, x: &[f64]) -> Result<Vec<f64>, IntegralsError> {
        match self {
            LocusPredicate::CkyJet { k } => {
                let parts = k.partials_at(x, 1)?;
                let alt = parts[1].antisymmetrized(&[0, 1, 2])?;
                Ok(vec![parts[0].max_abs(), alt.max_abs()])
            }
            LocusPredicate::ConformalKillingJet { k } => {
                let parts = k.partials_at(x, 1)?;
                let alt = parts[1].antisymmetrized(&[0, 1])?;
                Ok(vec![parts[0].max_abs(), alt.max_abs()])
            }
            LocusPredicate::BivectorValue { sigma } => Ok(vec![sigma.value_at(x)?.max_abs()]),
            LocusPredicate::ParallelCky { family } => {
                let t = family.eval(metric, x)?;
                let nt = t.tensor.dim();
                let n = nt - 2;
                let k = crate::bgg::cky2_from_tractor(&t.tensor)?;
                let mut zzz = 0.0f64;
                for a in 0..n {
                    for b in 0..n {
                        for c in 0..n {
                            zzz = zzz.max(t.tensor.get(&[1 + a, 1 + b, 1 + c]).abs());
                        }
                    }
                }
                Ok(vec![k.max_abs(), zzz])
            }
            LocusPredicate::ParallelBivector { family } => {
                let t = family.eval(metric, x)?;
                let nt = t.tensor.dim();
                let n = nt - 1;
                let mut block = 0.0f64;
                for a in 0..n {
                    for b in 0..n {
                        block = block.max(t.tensor.get(&[a, b]).abs());
                    }
                }
                Ok(vec![block])
            }
        }
    }
}

/// Scan every cell of the grid and return the cells whose predicate norms
/// all fall below the tolerance, in row-major index order. With `tol` set
/// to `None` a tolerance is calibrated per norm component from the median
/// norm slope between neighbouring probe cells; explicit tolerances should
/// be preferred when the expected field scale is known.
pub fn zero_locus_scan(
    metric: &Metric,
    predicate: &LocusPredicate,
    grid: &ScanGrid,
    tol: Option<f64>,
) -> Result<Vec<ScanHit>, IntegralsError> {
    if grid.dim() != metric.dim() {
        return Err(IntegralsError::BadGrid);
    }
    let tols = match tol {
        Some(t) => vec![t; predicate.norm_count()],
        None => calibrated_tolerances(metric, predicate, grid)?,
    };
    // Rows along the leading axis are independent; each slab collects its
    // hits in row-major order, so the concatenation is deterministic no
    // matter how the thread pool schedules the slabs.
    let slabs: Vec<Result<Vec<ScanHit>, IntegralsError>> = (0..grid.resolution[0])
        .into_par_iter()
        .map(|i0| scan_slab(metric, predicate, grid, &tols, i0))
        .collect();
    let mut hits = Vec::new();
    for slab in slabs {
        hits.extend(slab?);
    }
    Ok(hits)
}

fn scan_slab(
    metric: &Metric,
    predicate: &LocusPredicate,
    grid: &ScanGrid,
    tols: &[f64],
    i0: usize,
) -> Result<Vec<ScanHit>, IntegralsError> {
    let n = grid.dim();
    let mut index = vec![0usize; n];
    index[0] = i0;
    let mut hits = Vec::new();
    loop {
        let center = grid.cell_center(&index);
        let norms = predicate.norms_at(metric, &center)?;
        if norms.iter().zip(tols).all(|(v, t)| v <= t) {
            hits.push(ScanHit { index: index.clone(), center, norms });
        }
        // Odometer over the trailing axes.
        let mut axis = n;
        loop {
            if axis == 1 {
                return Ok(hits);
            }
            axis -= 1;
            index[axis] += 1;
            if index[axis] < grid.resolution[axis] {
                break;
            }
            index[axis] = 0;
        }
    }
}

/// Tolerance calibration for scans without an explicit tolerance: sample
/// the norms on a coarse sub-lattice, estimate the typical variation per
/// cell step as the median slope, and accept cells within three quarters of
/// one step of a transversal zero.
fn calibrated_tolerances(
    metric: &Metric,
    predicate: &LocusPredicate,
    grid: &ScanGrid,
) -> Result<Vec<f64>, IntegralsError> {
    let n = grid.dim();
    let m = predicate.norm_count();
    let coarse: Vec<usize> = grid.resolution.iter().map(|&r| r.min(7)).collect();
    let mut samples: Vec<Vec<f64>> = Vec::new();
    let mut index = vec![0usize; n];
    loop {
        let point: Vec<f64> = (0..n)
            .map(|i| {
                let frac = (index[i] as f64 + 0.5) / coarse[i] as f64;
                grid.lo[i] + frac * (grid.hi[i] - grid.lo[i])
            })
            .collect();
        samples.push(predicate.norms_at(metric, &point)?);
        let mut axis = n;
        let mut done = true;
        while axis > 0 {
            axis -= 1;
            index[axis] += 1;
            if index[axis] < coarse[axis] {
                done = false;
                break;
            }
            index[axis] = 0;
        }
        if done {
            break;
        }
    }
    // Consecutive samples differ in the last axis (except at wraps); use
    // their gaps as slope probes per norm component.
    let last_step = (grid.hi[n - 1] - grid.lo[n - 1]) / coarse[n - 1] as f64;
    let fine_step = grid
        .spacing()
        .into_iter()
        .fold(0.0f64, |acc, s| acc.max(s));
    let mut tols = Vec::with_capacity(m);
    for c in 0..m {
        let mut slopes: Vec<f64> = samples
            .windows(2)
            .map(|w| (w[1][c] - w[0][c]).abs() / last_step.abs())
            .filter(|v| v.is_finite())
            .collect();
        slopes.sort_by(|a, b| a.total_cmp(b));
        let median = if slopes.is_empty() { 0.0 } else { slopes[slopes.len() / 2] };
        let scale = samples.iter().map(|s| s[c]).fold(0.0f64, f64::max);
        tols.push((0.75 * median * fine_step).max(1e-9 * scale.max(1e-12)));
    }
    Ok(tols)
}
