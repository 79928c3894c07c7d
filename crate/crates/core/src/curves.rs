//! Distinguished curves and the tractors built from their jets.
//!
//! Three families are integrated: geodesics (including null ones),
//! conformal circles in unit parametrisation and conformal circles in
//! projective parametrisation. States carry the covariant acceleration
//! a = nabla_u u, so the third-order conformal-circle equations become
//! first-order systems in (x, u, a).
//!
//! From a state with non-null velocity the weighted data (sigma, unit
//! velocity, unit acceleration) and the sigma jet along the curve are
//! derived; these feed the velocity and acceleration tractors and the
//! decomposable skew tractors whose parallelness characterises each curve
//! family. Components follow the slot layout of [`crate::tractor`].

use thiserror::Error;

use crate::geometry::curvature::{
    christoffel_at, connection_at, i2, i3, ChristoffelData, Connection,
};
use crate::geometry::expr::Expr;
use crate::geometry::jet::Jet;
use crate::geometry::{Metric, MetricError};
use crate::tensor::{DenseTensor, TensorError, Valence};
use crate::tractor::PathSample;

/// Relative threshold below which a velocity counts as null.
pub const NULL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("initial data has dimension {got}, chart has {want}")]
    BadDim { want: usize, got: usize },
    #[error("step size must be positive and finite")]
    BadStep,
    #[error("velocity is numerically null (|g(u,u)| / |u|^2 = {0:.3e}); this family needs a non-null velocity")]
    NearNullVelocity(f64),
    #[error("velocity is not null: g(u,u) = {0:.3e}")]
    NotNull(f64),
    #[error("velocity is not unit: g(u,u) = {0:.6}, expected +/-1")]
    NotUnitSpeed(f64),
    #[error("acceleration is not orthogonal to the velocity: g(u,a) = {0:.3e}")]
    AccelerationNotOrthogonal(f64),
    #[error("this curve family needs initial acceleration data")]
    MissingAcceleration,
    #[error("conformal machinery needs chart dimension >= 3, got {0}")]
    NeedsConformal(usize),
    #[error("state became non-finite at step {0}")]
    NonFinite(usize),
    #[error("tensor is not a decomposable tractor form (residual {0:.3e})")]
    NotDecomposable(f64),
    #[error("tractor form does not contain the canonical tractor (residual {0:.3e})")]
    NotIncident(f64),
    #[error("tractor form encodes a {found} velocity, expected {expected}")]
    WrongCausalType { expected: CausalClass, found: CausalClass },
    #[error("tractor form is degenerate (velocity block norm {0:.3e})")]
    DegenerateForm(f64),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Causal type of a velocity vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CausalClass {
    Spacelike,
    Timelike,
    Null,
}

impl std::fmt::Display for CausalClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CausalClass::Spacelike => write!(f, "spacelike"),
            CausalClass::Timelike => write!(f, "timelike"),
            CausalClass::Null => write!(f, "null"),
        }
    }
}

/// Classify g(u, u) against the Euclidean size of u.
pub fn classify_causal(q: f64, u: &[f64]) -> CausalClass {
    let n2: f64 = u.iter().map(|v| v * v).sum();
    if q.abs() < NULL_TOLERANCE * n2.max(1e-300) {
        CausalClass::Null
    } else if q > 0.0 {
        CausalClass::Spacelike
    } else {
        CausalClass::Timelike
    }
}

/// Curve families with a distinguished-curve ODE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    Geodesic,
    NullGeodesic,
    /// Conformal circle with g(u,u) = +/-1 and g(u,a) = 0 maintained.
    ConformalCircleUnit,
    /// Conformal circle in projective parametrisation.
    ConformalCircleProjective,
}

impl CurveKind {
    /// Whether the family integrates acceleration as part of the state.
    #[inline]
    pub fn third_order(self) -> bool {
        matches!(
            self,
            CurveKind::ConformalCircleUnit | CurveKind::ConformalCircleProjective
        )
    }
}

/// One integration sample. `a` is the covariant acceleration nabla_u u.
#[derive(Debug, Clone)]
pub struct CurveState {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub a: Vec<f64>,
}

/// Why an integration stopped before its step budget.
#[derive(Debug, Clone)]
pub enum RunStatus {
    Completed,
    /// The curve left the trustworthy region; `step` is the last good sample.
    Stopped { step: usize, reason: String },
}

/// Result of a curve integration.
#[derive(Debug, Clone)]
pub struct CurveSamples {
    pub kind: CurveKind,
    pub causal: CausalClass,
    pub states: Vec<CurveState>,
    pub status: RunStatus,
}

impl CurveSamples {
    /// Convert to the path representation used by tractor transport.
    pub fn as_path(&self) -> Vec<PathSample> {
        self.states
            .iter()
            .map(|s| PathSample { t: s.t, x: s.x.clone(), u: s.u.clone() })
            .collect()
    }

    pub fn last(&self) -> &CurveState {
        self.states.last().expect("at least the initial state")
    }
}

/// Fixed-step integration settings.
#[derive(Debug, Clone)]
pub struct IntegrationOptions {
    pub step: f64,
    pub steps: usize,
    /// Project the state back onto its algebraic constraints every step.
    pub renormalize: bool,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions { step: 1e-3, steps: 1000, renormalize: false }
    }
}

fn inner(n: usize, g: &[f64], u: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for a in 0..n {
        for b in 0..n {
            s += g[i2(n, a, b)] * u[a] * v[b];
        }
    }
    s
}

/// Right-hand side of nabla_u a for each third-order family.
pub fn ode_nabla_u_a(conn: &Connection, kind: CurveKind, u: &[f64], a: &[f64]) -> Result<Vec<f64>, CurveError> {
    let n = conn.dim();
    let g = &conn.chr.g;
    match kind {
        CurveKind::Geodesic | CurveKind::NullGeodesic => Ok(vec![0.0; n]),
        CurveKind::ConformalCircleUnit => {
            let p = conn
                .conf_schouten
                .as_deref()
                .ok_or(CurveError::NeedsConformal(n))?;
            let praised = conn.schouten_raised(true).expect("checked above");
            let q = inner(n, g, u, u);
            let s = if q > 0.0 { 1.0 } else { -1.0 };
            let puu = inner(n, p, u, u);
            let aa = inner(n, g, a, a);
            let mut out = vec![0.0; n];
            for c in 0..n {
                let mut pu = 0.0;
                for e in 0..n {
                    pu += praised[i2(n, e, c)] * u[e];
                }
                out[c] = s * pu - (puu + s * aa) * u[c];
            }
            Ok(out)
        }
        CurveKind::ConformalCircleProjective => {
            let p = conn
                .conf_schouten
                .as_deref()
                .ok_or(CurveError::NeedsConformal(n))?;
            let praised = conn.schouten_raised(true).expect("checked above");
            let q = inner(n, g, u, u);
            let ua = inner(n, g, u, a);
            let aa = inner(n, g, a, a);
            let puu = inner(n, p, u, u);
            let mut out = vec![0.0; n];
            for c in 0..n {
                let mut pu = 0.0;
                for e in 0..n {
                    pu += praised[i2(n, e, c)] * u[e];
                }
                out[c] = 3.0 * (ua / q) * a[c] - 1.5 * (aa / q) * u[c] + q * pu
                    - 2.0 * puu * u[c];
            }
            Ok(out)
        }
    }
}

/// Coordinate right-hand side for the packed state.
fn state_rhs(
    metric: &Metric,
    kind: CurveKind,
    x: &[f64],
    u: &[f64],
    a: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>, Option<Vec<f64>>), CurveError> {
    let n = metric.dim();
    metric.require_in_domain(x)?;
    if kind.third_order() {
        let conn = connection_at(metric, x)?;
        let a = a.expect("third-order state carries acceleration");
        let gwork = &conn.chr;
        let du: Vec<f64> = {
            let guu = gwork.gamma_bilinear(u, u);
            (0..n).map(|c| a[c] - guu[c]).collect()
        };
        let nabla_a = ode_nabla_u_a(&conn, kind, u, a)?;
        let gua = gwork.gamma_bilinear(u, a);
        let da: Vec<f64> = (0..n).map(|c| nabla_a[c] - gua[c]).collect();
        Ok((u.to_vec(), du, Some(da)))
    } else {
        let chr = christoffel_at(metric, x)?;
        let guu = chr.gamma_bilinear(u, u);
        let du: Vec<f64> = (0..n).map(|c| -guu[c]).collect();
        Ok((u.to_vec(), du, None))
    }
}

fn validate_initial(
    metric: &Metric,
    kind: CurveKind,
    x0: &[f64],
    u0: &[f64],
    a0: Option<&[f64]>,
) -> Result<CausalClass, CurveError> {
    let n = metric.dim();
    if x0.len() != n || u0.len() != n {
        return Err(CurveError::BadDim { want: n, got: x0.len().max(u0.len()) });
    }
    if let Some(a) = a0 {
        if a.len() != n {
            return Err(CurveError::BadDim { want: n, got: a.len() });
        }
    }
    metric.require_in_domain(x0)?;
    metric.check_signature_at(x0)?;
    let mats = metric.matrix_at(x0)?;
    let q = mats.inner(u0, u0);
    let causal = classify_causal(q, u0);
    match kind {
        CurveKind::Geodesic => Ok(causal),
        CurveKind::NullGeodesic => {
            if causal != CausalClass::Null {
                return Err(CurveError::NotNull(q));
            }
            Ok(causal)
        }
        CurveKind::ConformalCircleUnit | CurveKind::ConformalCircleProjective => {
            if n < 3 {
                return Err(CurveError::NeedsConformal(n));
            }
            let a = a0.ok_or(CurveError::MissingAcceleration)?;
            if causal == CausalClass::Null {
                return Err(CurveError::NearNullVelocity(
                    q.abs() / u0.iter().map(|v| v * v).sum::<f64>().max(1e-300),
                ));
            }
            if kind == CurveKind::ConformalCircleUnit {
                if (q.abs() - 1.0).abs() > 1e-8 {
                    return Err(CurveError::NotUnitSpeed(q));
                }
                let ua = mats.inner(u0, a);
                if ua.abs() > 1e-8 {
                    return Err(CurveError::AccelerationNotOrthogonal(ua));
                }
            }
            Ok(causal)
        }
    }
}

/// Integrate a distinguished curve with classical fourth-order Runge-Kutta.
///
/// Third-order families need `a0`; geodesic families ignore it. The run
/// stops early (with a [`RunStatus::Stopped`]) if the curve leaves the
/// chart domain or the metric fails its pointwise guards.
pub fn integrate(
    metric: &Metric,
    kind: CurveKind,
    x0: &[f64],
    u0: &[f64],
    a0: Option<&[f64]>,
    opts: &IntegrationOptions,
) -> Result<CurveSamples, CurveError> {
    let n = metric.dim();
    if !(opts.step > 0.0) || !opts.step.is_finite() {
        return Err(CurveError::BadStep);
    }
    let causal = validate_initial(metric, kind, x0, u0, a0)?;
    let third = kind.third_order();
    let h = opts.step;

    let mut x = x0.to_vec();
    let mut u = u0.to_vec();
    let mut a = if third { a0.unwrap().to_vec() } else { vec![0.0; n] };
    let target = metric.matrix_at(x0)?.inner(u0, u0);

    let mut states = Vec::with_capacity(opts.steps + 1);
    let push_state = |states: &mut Vec<CurveState>, t: f64, x: &[f64], u: &[f64], a: &[f64]| {
        states.push(CurveState { t, x: x.to_vec(), u: u.to_vec(), a: a.to_vec() });
    };
    push_state(&mut states, 0.0, &x, &u, &a);

    let mut status = RunStatus::Completed;
    'run: for k in 0..opts.steps {
        // One RK4 stage set over the packed state.
        let eval = |x: &[f64], u: &[f64], a: &[f64]| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), CurveError> {
            let (dx, du, da) = state_rhs(metric, kind, x, u, if third { Some(a) } else { None })?;
            Ok((dx, du, da.unwrap_or_else(|| vec![0.0; n])))
        };
        let step = (|| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), CurveError> {
            let (k1x, k1u, k1a) = eval(&x, &u, &a)?;
            let mid = |base: &[f64], d: &[f64], f: f64| -> Vec<f64> {
                base.iter().zip(d).map(|(b, dv)| b + f * dv).collect()
            };
            let (k2x, k2u, k2a) = eval(
                &mid(&x, &k1x, 0.5 * h),
                &mid(&u, &k1u, 0.5 * h),
                &mid(&a, &k1a, 0.5 * h),
            )?;
            let (k3x, k3u, k3a) = eval(
                &mid(&x, &k2x, 0.5 * h),
                &mid(&u, &k2u, 0.5 * h),
                &mid(&a, &k2a, 0.5 * h),
            )?;
            let (k4x, k4u, k4a) = eval(&mid(&x, &k3x, h), &mid(&u, &k3u, h), &mid(&a, &k3a, h))?;
            let combine = |k1: &[f64], k2: &[f64], k3: &[f64], k4: &[f64]| -> Vec<f64> {
                (0..n)
                    .map(|i| h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                    .collect()
            };
            Ok((
                combine(&k1x, &k2x, &k3x, &k4x),
                combine(&k1u, &k2u, &k3u, &k4u),
                combine(&k1a, &k2a, &k3a, &k4a),
            ))
        })();
        let (dx, du, da) = match step {
            Ok(d) => d,
            Err(CurveError::Metric(e)) => {
                status = RunStatus::Stopped { step: k, reason: e.to_string() };
                break 'run;
            }
            Err(e) => return Err(e),
        };
        for i in 0..n {
            x[i] += dx[i];
            u[i] += du[i];
            a[i] += da[i];
        }
        if x.iter().chain(u.iter()).chain(a.iter()).any(|v| !v.is_finite()) {
            return Err(CurveError::NonFinite(k));
        }
        if !metric.domain().contains(&x) {
            status = RunStatus::Stopped {
                step: k,
                reason: MetricError::OutsideChart { x: x.clone() }.to_string(),
            };
            break 'run;
        }
        if opts.renormalize {
            if let Err(CurveError::Metric(e)) =
                renormalize_state(metric, kind, target, &x, &mut u, &mut a)
            {
                status = RunStatus::Stopped { step: k, reason: e.to_string() };
                break 'run;
            }
        }
        push_state(&mut states, (k + 1) as f64 * h, &x, &u, &a);
    }

    Ok(CurveSamples { kind, causal, states, status })
}

/// Project (u, a) back onto the family's algebraic constraints.
fn renormalize_state(
    metric: &Metric,
    kind: CurveKind,
    target_q: f64,
    x: &[f64],
    u: &mut [f64],
    a: &mut [f64],
) -> Result<(), CurveError> {
    let mats = metric.matrix_at(x)?;
    let q = mats.inner(u, u);
    match kind {
        CurveKind::Geodesic | CurveKind::ConformalCircleProjective => {
            // Affine/projective parameter scale: restore g(u,u).
            if q.abs() > 1e-300 && target_q.abs() > 1e-300 && q * target_q > 0.0 {
                let f = (target_q / q).sqrt();
                for v in u.iter_mut() {
                    *v *= f;
                }
            }
        }
        CurveKind::NullGeodesic => {}
        CurveKind::ConformalCircleUnit => {
            if q.abs() > 1e-300 {
                let f = (1.0 / q.abs()).sqrt();
                for v in u.iter_mut() {
                    *v *= f;
                }
            }
            let q = mats.inner(u, u);
            let ua = mats.inner(u, a);
            for i in 0..u.len() {
                a[i] -= (ua / q) * u[i];
            }
        }
    }
    Ok(())
}

/// Weighted curve data: the scale sigma = |g(u,u)|^(1/2), the unit velocity
/// and acceleration, and the sigma jet (sigma, its unit-parameter
/// derivative, and the second one) along the curve.
#[derive(Debug, Clone)]
pub struct WeightedState {
    /// +1 for spacelike, -1 for timelike velocity.
    pub s: f64,
    pub sigma: f64,
    pub u_hat: Vec<f64>,
    pub a_hat: Vec<f64>,
    /// (sigma, D sigma, D D sigma) with D the unit-velocity derivative.
    pub jet: [f64; 3],
}

/// Weighted data from a state in arbitrary parametrisation.
///
/// `nabla_u_a` is the parameter derivative nabla_u a along the curve; it
/// only enters the second jet coefficient, so for pointwise tractors at a
/// single sample of a geodesic it is zero, and for integrated families it
/// comes from [`ode_nabla_u_a`].
pub fn weighted_state(
    conn: &Connection,
    u: &[f64],
    a: &[f64],
    nabla_u_a: &[f64],
) -> Result<WeightedState, CurveError> {
    let n = conn.dim();
    let g = &conn.chr.g;
    let q = inner(n, g, u, u);
    if classify_causal(q, u) == CausalClass::Null {
        return Err(CurveError::NearNullVelocity(
            q.abs() / u.iter().map(|v| v * v).sum::<f64>().max(1e-300),
        ));
    }
    let s = if q > 0.0 { 1.0 } else { -1.0 };
    let sigma = (s * q).sqrt();
    let ua = inner(n, g, u, a);
    let aa = inner(n, g, a, a);
    let una = inner(n, g, u, nabla_u_a);

    // d sigma / dt and its parameter derivative.
    let dsig = s * ua / sigma;
    let d2sig = (s * (aa + una) * sigma - s * ua * dsig) / (sigma * sigma);

    let u_hat: Vec<f64> = u.iter().map(|v| v / sigma).collect();
    let a_hat: Vec<f64> = (0..n)
        .map(|c| a[c] / (sigma * sigma) - s * ua * u[c] / sigma.powi(4))
        .collect();

    // Unit-parameter jet of sigma: D = (1/sigma) d/dt on curve functions.
    let j1 = dsig / sigma;
    let j2 = (d2sig * sigma - dsig * dsig) / (sigma * sigma * sigma);
    Ok(WeightedState { s, sigma, u_hat, a_hat, jet: [sigma, j1, j2] })
}

/// The canonical tractor of the structure, as a component vector.
pub fn canonical_tractor(nt: usize) -> DenseTensor {
    DenseTensor::basis_vector(nt, nt - 1, Valence::Up).expect("small fixed shape")
}

/// Velocity tractor of a non-null curve: (0, u_hat, -(D sigma) / sigma).
pub fn velocity_tractor(n: usize, ws: &WeightedState) -> DenseTensor {
    let nt = n + 2;
    let mut data = vec![0.0; nt];
    for b in 0..n {
        data[1 + b] = ws.u_hat[b];
    }
    data[n + 1] = -ws.jet[1] / ws.jet[0];
    DenseTensor::from_vec(nt, &[Valence::Up], data).expect("small fixed shape")
}

/// Acceleration tractor of a non-null curve.
pub fn acceleration_tractor(
    conn: &Connection,
    ws: &WeightedState,
) -> Result<DenseTensor, CurveError> {
    let n = conn.dim();
    let p = conn
        .conf_schouten
        .as_deref()
        .ok_or(CurveError::NeedsConformal(n))?;
    let nt = n + 2;
    let sigma = ws.jet[0];
    let dsig = ws.jet[1];
    let d2sig = ws.jet[2];
    let puu = inner(n, p, &ws.u_hat, &ws.u_hat);
    let mut data = vec![0.0; nt];
    data[0] = -ws.s * sigma;
    for b in 0..n {
        data[1 + b] = sigma * ws.a_hat[b] - dsig * ws.u_hat[b];
    }
    data[nt - 1] = dsig * dsig / sigma - d2sig - puu * sigma;
    Ok(DenseTensor::from_vec(nt, &[Valence::Up], data).expect("small fixed shape"))
}

/// Wedge of rank-1 tensors: the signed sum over all slot permutations of
/// their outer product (k! times the antisymmetrised outer product).
pub fn wedge(vectors: &[DenseTensor]) -> Result<DenseTensor, TensorError> {
    let k = vectors.len();
    let dim = vectors[0].dim();
    let valence = vec![Valence::Up; k];
    let mut out = DenseTensor::zeros(dim, &valence)?;
    for (perm, sign) in crate::tensor::permutations(k) {
        let mut term = vectors[perm[0]].clone();
        for s in 1..k {
            term = term.outer(&vectors[perm[s]])?;
        }
        out = out.add(&term.scaled(sign))?;
    }
    Ok(out)
}

/// Parallel 2-tractor of an affinely parametrised geodesic (projective
/// structure): the wedge of the canonical tractor with the velocity.
pub fn sigma_projective(n: usize, u: &[f64]) -> Result<DenseTensor, CurveError> {
    let nt = n + 1;
    let x_tr = canonical_tractor(nt);
    let mut udata = vec![0.0; nt];
    udata[..n].copy_from_slice(u);
    let u_tr = DenseTensor::from_vec(nt, &[Valence::Up], udata)?;
    Ok(wedge(&[x_tr, u_tr])?)
}

/// Parallel 2-tractor of an affinely parametrised null geodesic.
pub fn sigma_null(n: usize, u: &[f64]) -> Result<DenseTensor, CurveError> {
    let nt = n + 2;
    let x_tr = canonical_tractor(nt);
    let mut udata = vec![0.0; nt];
    udata[1..1 + n].copy_from_slice(u);
    let u_tr = DenseTensor::from_vec(nt, &[Valence::Up], udata)?;
    Ok(wedge(&[x_tr, u_tr])?)
}

/// Parallel 3-tractor of a conformal circle: X wedge U wedge A.
pub fn sigma_conformal(
    conn: &Connection,
    ws: &WeightedState,
) -> Result<DenseTensor, CurveError> {
    let n = conn.dim();
    let nt = n + 2;
    let x_tr = canonical_tractor(nt);
    let u_tr = velocity_tractor(n, ws);
    let a_tr = acceleration_tractor(conn, ws)?;
    Ok(wedge(&[x_tr, u_tr, a_tr])?)
}

/// Norm-squared of a curve 3-tractor against the tractor metric,
/// (1/6) Sigma^{ABC} Sigma_{ABC}. Equals minus the causal sign for the
/// conformal-circle tractor.
pub fn sigma_conformal_norm2(
    h: &[f64],
    sigma: &DenseTensor,
) -> Result<f64, TensorError> {
    let nt = sigma.dim();
    let hm = DenseTensor::from_vec(nt, &[Valence::Down, Valence::Down], h.to_vec())?;
    let mut lowered = sigma.clone();
    for slot in 0..sigma.rank() {
        lowered = lowered.convert_slot(slot, &hm)?;
    }
    Ok(sigma.pair_full(&lowered)? / 6.0)
}

/// Max-abs residual of wedging the canonical tractor onto a form: zero
/// exactly when the form contains X as a factor.
pub fn x_incidence_residual(sigma: &DenseTensor) -> Result<f64, TensorError> {
    let nt = sigma.dim();
    let x_tr = canonical_tractor(nt);
    let prod = x_tr.outer(sigma)?;
    let all: Vec<usize> = (0..prod.rank()).collect();
    let anti = prod.antisymmetrized(&all)?;
    Ok(anti.max_abs())
}

/// Max-abs residual of the Pluecker simplicity condition: antisymmetrise
/// Sigma (x) Sigma over the first rank+1 slots; zero iff decomposable.
pub fn simplicity_residual(sigma: &DenseTensor) -> Result<f64, TensorError> {
    let k = sigma.rank();
    let prod = sigma.outer(sigma)?;
    // Antisymmetrise over slots 0..=k while leaving the rest alone: do it
    // by permuting the overhang slots to the front, antisymmetrising the
    // tail, then restoring. Simpler: antisymmetrise over the first k+1
    // slots directly with explicit permutations.
    let total = prod.rank();
    let mut acc = DenseTensor::zeros(prod.dim(), prod.valence())?;
    let perms = crate::tensor::permutations(k + 1);
    let count = perms.len() as f64;
    for (perm, sign) in perms {
        let mut full: Vec<usize> = perm.clone();
        full.extend(k + 1..total);
        acc = acc.add(&prod.permuted(&full)?.scaled(sign))?;
    }
    Ok(acc.scaled(1.0 / count).max_abs())
}

/// Initial data recovered from a decomposable curve tractor.
#[derive(Debug, Clone)]
pub struct ExtractedIc {
    pub causal: CausalClass,
    pub sigma: f64,
    /// Unit velocity (or the affine velocity for geodesic forms).
    pub u: Vec<f64>,
    /// Unit acceleration; only present for rank-3 forms.
    pub a: Option<Vec<f64>>,
}

/// Tolerances for validating a tractor before extracting initial data.
const IC_STRUCTURE_TOL: f64 = 1e-8;

/// Recover initial data from a conformal-circle 3-tractor at a point.
///
/// Validates decomposability and incidence with the canonical tractor,
/// then reads the velocity and acceleration blocks. `expected` rejects
/// forms whose causal type does not match.
pub fn ic_from_conformal_tractor(
    conn: &Connection,
    sigma: &DenseTensor,
    expected: Option<CausalClass>,
) -> Result<ExtractedIc, CurveError> {
    let n = conn.dim();
    let nt = n + 2;
    if sigma.dim() != nt || sigma.rank() != 3 {
        return Err(CurveError::BadDim { want: nt, got: sigma.dim() });
    }
    let scale = sigma.max_abs().max(1e-300);
    let all: Vec<usize> = (0..sigma.rank()).collect();
    let anti_gap = sigma.sub(&sigma.antisymmetrized(&all)?)?.max_abs();
    if anti_gap > IC_STRUCTURE_TOL * scale {
        return Err(CurveError::NotDecomposable(anti_gap / scale));
    }
    let simp = simplicity_residual(sigma)?;
    if simp > IC_STRUCTURE_TOL * scale * scale {
        return Err(CurveError::NotDecomposable(simp / (scale * scale)));
    }
    let inc = x_incidence_residual(sigma)?;
    if inc > IC_STRUCTURE_TOL * scale {
        return Err(CurveError::NotIncident(inc / scale));
    }

    let g = &conn.chr.g;
    // Velocity block: Sigma[X-slot][Y-slot][Z-slot] = s sigma u_hat.
    let mut w = vec![0.0; n];
    for c in 0..n {
        w[c] = sigma.get(&[nt - 1, 0, 1 + c]);
    }
    let qw = inner(n, g, &w, &w);
    let wnorm = qw.abs().sqrt();
    if classify_causal(qw, &w) == CausalClass::Null {
        return Err(CurveError::DegenerateForm(wnorm));
    }
    let s = if qw > 0.0 { 1.0 } else { -1.0 };
    // w = s sigma u_hat with g(u_hat,u_hat) = s, so g(w,w) = s sigma^2.
    let sig = wnorm;
    let u_hat: Vec<f64> = w.iter().map(|v| s * v / sig).collect();
    let causal = if s > 0.0 { CausalClass::Spacelike } else { CausalClass::Timelike };
    if let Some(e) = expected {
        if e != causal {
            return Err(CurveError::WrongCausalType { expected: e, found: causal });
        }
    }

    // Acceleration block: Sigma[X][Z_b][Z_c] = sigma (u_hat^b a_hat^c - u_hat^c a_hat^b).
    let mut u_low = vec![0.0; n];
    for b in 0..n {
        for c in 0..n {
            u_low[b] += g[i2(n, b, c)] * u_hat[c];
        }
    }
    let mut a_hat = vec![0.0; n];
    for c in 0..n {
        let mut acc = 0.0;
        for b in 0..n {
            acc += u_low[b] * sigma.get(&[nt - 1, 1 + b, 1 + c]);
        }
        a_hat[c] = s * acc / sig;
    }
    // The contraction picks up a u-parallel part when g(u_hat, a_hat) != 0;
    // remove it so the result is the orthogonal unit acceleration.
    let ua = inner(n, g, &u_hat, &a_hat);
    for c in 0..n {
        a_hat[c] -= s * ua * u_hat[c];
    }
    Ok(ExtractedIc { causal, sigma: sig, u: u_hat, a: Some(a_hat) })
}

/// Recover the velocity direction from a geodesic 2-tractor (projective).
pub fn ic_from_projective_tractor(
    n: usize,
    sigma: &DenseTensor,
) -> Result<ExtractedIc, CurveError> {
    let nt = n + 1;
    if sigma.dim() != nt || sigma.rank() != 2 {
        return Err(CurveError::BadDim { want: nt, got: sigma.dim() });
    }
    let scale = sigma.max_abs().max(1e-300);
    let all: Vec<usize> = (0..sigma.rank()).collect();
    let anti_gap = sigma.sub(&sigma.antisymmetrized(&all)?)?.max_abs();
    if anti_gap > IC_STRUCTURE_TOL * scale {
        return Err(CurveError::NotDecomposable(anti_gap / scale));
    }
    let inc = x_incidence_residual(sigma)?;
    if inc > IC_STRUCTURE_TOL * scale {
        return Err(CurveError::NotIncident(inc / scale));
    }
    let mut u = vec![0.0; n];
    for b in 0..n {
        u[b] = sigma.get(&[n, b]);
    }
    let norm: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 * scale {
        return Err(CurveError::DegenerateForm(norm));
    }
    Ok(ExtractedIc { causal: CausalClass::Spacelike, sigma: norm, u, a: None })
}

/// Recover the null velocity from a null-geodesic 2-tractor (conformal).
pub fn ic_from_null_tractor(
    conn: &Connection,
    sigma: &DenseTensor,
) -> Result<ExtractedIc, CurveError> {
    let n = conn.dim();
    let nt = n + 2;
    if sigma.dim() != nt || sigma.rank() != 2 {
        return Err(CurveError::BadDim { want: nt, got: sigma.dim() });
    }
    let scale = sigma.max_abs().max(1e-300);
    let all: Vec<usize> = (0..sigma.rank()).collect();
    let anti_gap = sigma.sub(&sigma.antisymmetrized(&all)?)?.max_abs();
    if anti_gap > IC_STRUCTURE_TOL * scale {
        return Err(CurveError::NotDecomposable(anti_gap / scale));
    }
    let inc = x_incidence_residual(sigma)?;
    if inc > IC_STRUCTURE_TOL * scale {
        return Err(CurveError::NotIncident(inc / scale));
    }
    let mut u = vec![0.0; n];
    for b in 0..n {
        u[b] = sigma.get(&[nt - 1, 1 + b]);
    }
    let q = inner(n, &conn.chr.g, &u, &u);
    let causal = classify_causal(q, &u);
    if causal != CausalClass::Null {
        return Err(CurveError::WrongCausalType { expected: CausalClass::Null, found: causal });
    }
    let norm: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 * scale {
        return Err(CurveError::DegenerateForm(norm));
    }
    Ok(ExtractedIc { causal, sigma: norm, u, a: None })
}

/// Initial data for the same conformal circle in the rescaled metric
/// e^{2 phi} g, keeping unit parametrisation: u -> e^{-phi} u,
/// a -> e^{-2 phi} (a + g(u, Ups) u - s Ups#).
pub fn rescaled_unit_data(
    mats_g: &crate::geometry::MetricMatrices,
    ups: &[f64],
    phi: f64,
    u: &[f64],
    a: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = mats_g.dim;
    let q = mats_g.inner(u, u);
    let s = if q > 0.0 { 1.0 } else { -1.0 };
    let ups_up = mats_g.raise(ups);
    let upsu: f64 = (0..n).map(|i| ups[i] * u[i]).sum();
    let eph = (-phi).exp();
    let u_new: Vec<f64> = u.iter().map(|v| eph * v).collect();
    let a_new: Vec<f64> = (0..n)
        .map(|c| eph * eph * (a[c] + upsu * u[c] - s * ups_up[c]))
        .collect();
    (u_new, a_new)
}

/// A curve given by explicit coordinate expressions of the parameter,
/// sampled with its first three parameter derivatives.
#[derive(Debug, Clone)]
pub struct RawCurveSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub xdd: Vec<f64>,
    pub xddd: Vec<f64>,
}

/// Sample coordinate expressions x_i(t); the single variable is `x1`.
pub fn raw_samples_from_exprs(
    exprs: &[Expr],
    t0: f64,
    step: f64,
    steps: usize,
) -> Result<Vec<RawCurveSample>, CurveError> {
    let n = exprs.len();
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = t0 + k as f64 * step;
        let seed = Jet::seeded(t, 1.0);
        let mut x = vec![0.0; n];
        let mut u = vec![0.0; n];
        let mut xdd = vec![0.0; n];
        let mut xddd = vec![0.0; n];
        for (i, e) in exprs.iter().enumerate() {
            let j = e.eval(&[seed]);
            if !j.is_finite() {
                return Err(CurveError::NonFinite(k));
            }
            x[i] = j.value();
            u[i] = j.derivative(1);
            xdd[i] = j.derivative(2);
            xddd[i] = j.derivative(3);
        }
        out.push(RawCurveSample { t, x, u, xdd, xddd });
    }
    Ok(out)
}

/// Covariant acceleration of a raw sample: a = x'' + Gamma(u, u).
pub fn covariant_acceleration(chr: &ChristoffelData, raw: &RawCurveSample) -> Vec<f64> {
    let guu = chr.gamma_bilinear(&raw.u, &raw.u);
    raw.xdd.iter().zip(guu).map(|(d, g)| d + g).collect()
}

/// Parameter derivative of the covariant acceleration along a raw curve,
/// nabla_u a, from third coordinate derivatives and the connection jet.
pub fn covariant_jerk(conn: &Connection, raw: &RawCurveSample) -> Vec<f64> {
    let n = conn.dim();
    let gamma = &conn.chr.gamma;
    let dgamma = &conn.dgamma;
    let a = covariant_acceleration(&conn.chr, raw);
    let mut out = vec![0.0; n];
    for c in 0..n {
        // d/dt of a^c = x'''^c + (u.dGamma)(u,u) + 2 Gamma(x'', u),
        // then + Gamma(u, a) to make it covariant.
        let mut s = raw.xddd[c];
        for e in 0..n {
            for p in 0..n {
                for q in 0..n {
                    s += raw.u[e] * dgamma[((e * n + c) * n + p) * n + q] * raw.u[p] * raw.u[q];
                }
            }
        }
        for p in 0..n {
            for q in 0..n {
                s += 2.0 * gamma[i3(n, c, p, q)] * raw.xdd[p] * raw.u[q];
                s += gamma[i3(n, c, p, q)] * raw.u[p] * a[q];
            }
        }
        out[c] = s;
    }
    out
}

/// Max-abs of u wedge a: vanishes exactly on unparametrised geodesics.
pub fn geodesic_skew_residual(chr: &ChristoffelData, raw: &RawCurveSample) -> f64 {
    let n = chr.dim;
    let a = covariant_acceleration(chr, raw);
    let mut worst: f64 = 0.0;
    for b in 0..n {
        for c in 0..n {
            worst = worst.max((raw.u[b] * a[c] - raw.u[c] * a[b]).abs());
        }
    }
    worst
}

/// Max-abs of the parametrisation-free conformal-circle equation,
/// u wedge (nabla_u a - 3 (g(u,a)/g(u,u)) a - g(u,u) P# u).
pub fn conformal_circle_skew_residual(
    conn: &Connection,
    raw: &RawCurveSample,
) -> Result<f64, CurveError> {
    let n = conn.dim();
    let g = &conn.chr.g;
    let praised = conn
        .schouten_raised(true)
        .ok_or(CurveError::NeedsConformal(n))?;
    let a = covariant_acceleration(&conn.chr, raw);
    let jerk = covariant_jerk(conn, raw);
    let q = inner(n, g, &raw.u, &raw.u);
    if classify_causal(q, &raw.u) == CausalClass::Null {
        return Err(CurveError::NearNullVelocity(
            q.abs() / raw.u.iter().map(|v| v * v).sum::<f64>().max(1e-300),
        ));
    }
    let ua = inner(n, g, &raw.u, &a);
    let mut v = vec![0.0; n];
    for c in 0..n {
        let mut pu = 0.0;
        for e in 0..n {
            pu += praised[i2(n, e, c)] * raw.u[e];
        }
        v[c] = jerk[c] - 3.0 * (ua / q) * a[c] - q * pu;
    }
    let mut worst: f64 = 0.0;
    for b in 0..n {
        for c in 0..n {
            worst = worst.max((raw.u[b] * v[c] - raw.u[c] * v[b]).abs());
        }
    }
    Ok(worst)
}
