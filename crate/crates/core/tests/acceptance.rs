//! Acceptance suite: one test per headline guarantee of the engine, each
//! printing a single pass/fail line with its worst measured number. The
//! tolerances are pinned as constants at the top; they are contract values,
//! not tuning knobs.

mod support;

use std::time::{Duration, Instant};

use distcurve::bgg::{killing_from_tau, residual_killing_grad, FieldJet, MaskedTractor};
use distcurve::curves::{
    covariant_acceleration, covariant_jerk, ic_from_conformal_tractor, ic_from_null_tractor,
    ic_from_projective_tractor, integrate, ode_nabla_u_a, raw_samples_from_exprs,
    rescaled_unit_data, sigma_conformal, sigma_conformal_norm2, sigma_null, sigma_projective,
    weighted_state, CausalClass, CurveError, CurveKind, CurveState, CurveSamples,
    IntegrationOptions,
};
use distcurve::geometry::{
    catalog, catalog_metric, christoffel_at, connection_at, curvature_at, Expr, Metric,
};
use distcurve::integrals::{
    fi_cky_tod, fi_s_pair_h, fi_tau_conformal, verify_conservation, zero_locus_scan,
    FirstIntegral, LocusPredicate, ParallelFamily, ScanGrid,
};
use distcurve::tensor::{DenseTensor, Valence};
use distcurve::curves::canonical_tractor;
use distcurve::tractor::{parallel_residual, tractor_metric, PathSample, Structure};
use rand::Rng;
use support::*;

/// Relative agreement between curvature jets and one-level central
/// differences at h = 1e-4.
const CURVATURE_FD_TOL: f64 = 1e-5;
/// Finite-difference step for the curvature oracle.
const FD_STEP: f64 = 1e-4;
/// Parallelism gate for the curve tractor along an integrated curve.
const PARALLEL_POSITIVE_TOL: f64 = 1e-6;
/// Floor the negative controls must exceed.
const PARALLEL_NEGATIVE_FLOOR: f64 = 1e-2;
/// Gate for the algebraic pairing identities of the curve tractors.
const IDENTITY_TOL: f64 = 1e-9;
/// Gate on the norm of the acceleration tractor in the projective gauge.
const PROJECTIVE_GAUGE_TOL: f64 = 1e-6;
/// Relative drift gate for conserved quantities on flat charts.
const DRIFT_TIGHT: f64 = 1e-9;
/// Relative drift gate after a conformal rescaling to the round sphere.
const DRIFT_RESCALED: f64 = 1e-6;
/// Pointwise residual gate for the solution-induced Killing tensor.
const KILLING_RESIDUAL_TOL: f64 = 1e-12;
/// Drift every negative control must exceed.
const NEGATIVE_DRIFT_FLOOR: f64 = 1e-3;
/// Agreement between chart-formula and tractor-pairing routes.
const ROUTE_TOL: f64 = 1e-9;
/// Agreement of traces and integral values across a conformal rescaling.
const INVARIANCE_TOL: f64 = 1e-6;
/// Round-trip accuracy of initial data through a curve tractor.
const ROUND_TRIP_TOL: f64 = 1e-10;

fn report(number: usize, label: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {number} ({label}): {} [{detail}]",
        if pass { "pass" } else { "FAIL" }
    );
}

// ---------------------------------------------------------------------------
// 1. Curvature jets against one-level central finite differences.
// ---------------------------------------------------------------------------

/// Safe sampling half-width for each catalog chart.
fn sample_half_width(name: &str) -> f64 {
    match name {
        "sphere3" => 0.8,
        "hyperbolic3" => 0.5,
        _ => 1.2,
    }
}

#[test]
fn curvature_jets_match_finite_differences() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut worst_what = String::new();
    for entry in catalog() {
        let m = &entry.metric;
        let mut r = rng(07_01);
        let hw = sample_half_width(entry.name);
        for _ in 0..20 {
            let x = random_point(&mut r, -hw, hw, entry.dim);
            let mut track = |what: &str, gap: f64| {
                if gap > worst {
                    worst = gap;
                    worst_what = format!("{} on {} at {:?}", what, entry.name, x);
                }
            };

            let chr = christoffel_at(m, &x).unwrap();
            track("gamma", relative_gap(&chr.gamma, &fd_gamma(m, &x, FD_STEP)));

            let geom = curvature_at(m, &x).unwrap();
            track(
                "riemann",
                relative_gap(&geom.conn.riemann, &fd_riemann(m, &x, FD_STEP)),
            );

            let (proj_p, conf_p) = fd_schoutens(m, &x, FD_STEP);
            track("proj schouten", relative_gap(&geom.conn.proj_schouten, &proj_p));
            if let Some((p, _)) = &conf_p {
                track(
                    "conf schouten",
                    relative_gap(geom.conn.conf_schouten.as_ref().unwrap(), p),
                );
            }

            track("proj weyl", relative_gap(&geom.proj.weyl, &fd_proj_weyl(m, &x, FD_STEP)));
            if let Some(w) = fd_conf_weyl_lowered(m, &x, FD_STEP) {
                track(
                    "conf weyl",
                    relative_gap(&geom.conf.as_ref().unwrap().weyl_lowered, &w),
                );
            }

            let (proj_cotton, conf_cotton) = fd_cottons(m, &x, FD_STEP);
            track("proj cotton", relative_gap(&geom.proj.cotton, &proj_cotton));
            if let Some(c) = &conf_cotton {
                track(
                    "conf cotton",
                    relative_gap(&geom.conf.as_ref().unwrap().cotton, c),
                );
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst < CURVATURE_FD_TOL && elapsed < Duration::from_secs(5);
    report(
        1,
        "curvature jets against finite differences",
        pass,
        &format!("worst relative gap {worst:.2e}, {elapsed:.2?}"),
    );
    assert!(
        worst < CURVATURE_FD_TOL,
        "worst gap {worst:.3e} ({worst_what}) exceeds {CURVATURE_FD_TOL:.0e}"
    );
    assert!(elapsed < Duration::from_secs(5), "oracle sweep took {elapsed:.2?}");
}

// ---------------------------------------------------------------------------
// 2. Parallelism of the curve tractor discriminates distinguished curves.
// ---------------------------------------------------------------------------

/// Max parallel-transport residual of the per-sample curve tractor.
fn curve_tractor_residual(
    metric: &Metric,
    structure: Structure,
    samples: &CurveSamples,
) -> f64 {
    let n = metric.dim();
    let fields: Vec<DenseTensor> = samples
        .states
        .iter()
        .map(|st| match (structure, samples.kind) {
            (Structure::Projective, _) => sigma_projective(n, &st.u).unwrap(),
            (Structure::Conformal, CurveKind::NullGeodesic) => sigma_null(n, &st.u).unwrap(),
            (Structure::Conformal, kind) => {
                let conn = connection_at(metric, &st.x).unwrap();
                let nabla = ode_nabla_u_a(&conn, kind, &st.u, &st.a).unwrap();
                let ws = weighted_state(&conn, &st.u, &st.a, &nabla).unwrap();
                sigma_conformal(&conn, &ws).unwrap()
            }
        })
        .collect();
    parallel_residual(metric, structure, &samples.as_path(), &fields)
        .unwrap()
        .into_iter()
        .fold(0.0, f64::max)
}

fn normalized_circle_data(metric: &Metric, x0: &[f64], u_raw: &[f64], a_raw: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let chr = christoffel_at(metric, x0).unwrap();
    let q = chr.inner(u_raw, u_raw);
    let s = if q > 0.0 { 1.0 } else { -1.0 };
    let u: Vec<f64> = u_raw.iter().map(|v| v / q.abs().sqrt()).collect();
    let ua = chr.inner(&u, a_raw);
    let a: Vec<f64> = (0..u.len()).map(|i| a_raw[i] - s * ua * u[i]).collect();
    (u, a)
}

#[test]
fn parallel_tractor_discriminates_distinguished_curves() {
    let start = Instant::now();
    let opts = IntegrationOptions { step: 2e-3, steps: 300, renormalize: true };
    let affine_opts = IntegrationOptions { step: 2e-3, steps: 300, renormalize: false };
    let mut worst_positive = 0.0f64;

    // Affinely parametrised geodesics carry a parallel projective bivector.
    let geodesic_cases: [(&str, [f64; 3], [f64; 3]); 3] = [
        ("euclidean3", [0.2, -0.3, 0.5], [0.6, 0.3, -0.2]),
        ("minkowski12", [0.0, 0.1, -0.2], [1.0, 0.3, -0.2]),
        ("sphere3", [0.3, 0.1, -0.2], [0.4, -0.5, 0.2]),
    ];
    for (name, x0, u0) in geodesic_cases {
        let m = catalog_metric(name).unwrap();
        let run = integrate(&m, CurveKind::Geodesic, &x0, &u0, None, &affine_opts).unwrap();
        let res = curve_tractor_residual(&m, Structure::Projective, &run);
        worst_positive = worst_positive.max(res);
    }

    // Null geodesics carry a parallel conformal bivector; exercised on the
    // flat Lorentzian chart and on a curved pp-wave.
    let mink = catalog_metric("minkowski12").unwrap();
    let run = integrate(
        &mink,
        CurveKind::NullGeodesic,
        &[0.1, -0.2, 0.3],
        &[1.0, 0.8, 0.6],
        None,
        &affine_opts,
    )
    .unwrap();
    worst_positive = worst_positive.max(curve_tractor_residual(&mink, Structure::Conformal, &run));

    let wave = catalog_metric("plane_wave4").unwrap();
    let x0 = [0.3, 0.0, 0.4, 0.1];
    let mats = wave.matrix_at(&x0).unwrap();
    // Solve g(u, u) = 0 for the second slot of u = (1, b, 0.5, 0.3).
    let mut u0 = vec![1.0, 0.0, 0.5, 0.3];
    let partial = mats.inner(&u0, &u0);
    let e2 = [0.0, 1.0, 0.0, 0.0];
    u0[1] = -partial / (2.0 * mats.inner(&u0, &e2));
    let run = integrate(&wave, CurveKind::NullGeodesic, &x0, &u0, None, &affine_opts).unwrap();
    worst_positive = worst_positive.max(curve_tractor_residual(&wave, Structure::Conformal, &run));

    // Conformal circles carry a parallel 3-tractor.
    let circle_cases: [(&str, [f64; 3], [f64; 3], [f64; 3]); 3] = [
        ("euclidean3", [0.1, 0.2, -0.1], [0.5, -0.3, 0.8], [0.4, 0.6, 0.1]),
        ("minkowski12", [0.0, 0.2, -0.1], [1.2, 0.4, 0.3], [0.2, 0.7, -0.4]),
        ("sphere3", [0.2, -0.1, 0.3], [0.4, -0.5, 0.2], [0.3, 0.2, -0.5]),
    ];
    for (name, x0, u_raw, a_raw) in circle_cases {
        let m = catalog_metric(name).unwrap();
        let (u0, a0) = normalized_circle_data(&m, &x0, &u_raw, &a_raw);
        let run =
            integrate(&m, CurveKind::ConformalCircleUnit, &x0, &u0, Some(&a0), &opts).unwrap();
        worst_positive = worst_positive.max(curve_tractor_residual(&m, Structure::Conformal, &run));
    }

    // Negative controls on the round sphere: a latitude circle is not a
    // geodesic, and a loxodrome is not a conformal circle.
    let sphere = catalog_metric("sphere3").unwrap();
    let latitude = ["0.5*cos(x1)", "0.5*sin(x1)", "0"]
        .map(|s| Expr::parse(s).unwrap());
    let raws = raw_samples_from_exprs(&latitude, 0.0, 2e-3, 300).unwrap();
    let path: Vec<PathSample> = raws
        .iter()
        .map(|r| PathSample { t: r.t, x: r.x.clone(), u: r.u.clone() })
        .collect();
    let fields: Vec<DenseTensor> =
        raws.iter().map(|r| sigma_projective(3, &r.u).unwrap()).collect();
    let latitude_res = parallel_residual(&sphere, Structure::Projective, &path, &fields)
        .unwrap()
        .into_iter()
        .fold(0.0, f64::max);

    let loxodrome = [
        "exp(0.2*x1)*cos(x1)",
        "exp(0.2*x1)*sin(x1)",
        "0",
    ]
    .map(|s| Expr::parse(s).unwrap());
    let raws = raw_samples_from_exprs(&loxodrome, 0.0, 2e-3, 300).unwrap();
    let path: Vec<PathSample> = raws
        .iter()
        .map(|r| PathSample { t: r.t, x: r.x.clone(), u: r.u.clone() })
        .collect();
    let fields: Vec<DenseTensor> = raws
        .iter()
        .map(|r| {
            let conn = connection_at(&sphere, &r.x).unwrap();
            let a = covariant_acceleration(&conn.chr, r);
            let jerk = covariant_jerk(&conn, r);
            let ws = weighted_state(&conn, &r.u, &a, &jerk).unwrap();
            sigma_conformal(&conn, &ws).unwrap()
        })
        .collect();
    let loxodrome_res = parallel_residual(&sphere, Structure::Conformal, &path, &fields)
        .unwrap()
        .into_iter()
        .fold(0.0, f64::max);

    let elapsed = start.elapsed();
    let pass = worst_positive < PARALLEL_POSITIVE_TOL
        && latitude_res > PARALLEL_NEGATIVE_FLOOR
        && loxodrome_res > PARALLEL_NEGATIVE_FLOOR
        && elapsed < Duration::from_secs(30);
    report(
        2,
        "parallel tractor discriminates distinguished curves",
        pass,
        &format!(
            "positives {worst_positive:.2e}, latitude {latitude_res:.2e}, loxodrome {loxodrome_res:.2e}, {elapsed:.2?}"
        ),
    );
    assert!(
        worst_positive < PARALLEL_POSITIVE_TOL,
        "distinguished-curve residual {worst_positive:.3e}"
    );
    assert!(latitude_res > PARALLEL_NEGATIVE_FLOOR, "latitude residual {latitude_res:.3e}");
    assert!(loxodrome_res > PARALLEL_NEGATIVE_FLOOR, "loxodrome residual {loxodrome_res:.3e}");
    assert!(elapsed < Duration::from_secs(30), "discrimination took {elapsed:.2?}");
}

// ---------------------------------------------------------------------------
// 3. Algebraic identities of the curve tractors along integrated circles.
// ---------------------------------------------------------------------------

fn pair(h: &[f64], nt: usize, t1: &DenseTensor, t2: &DenseTensor) -> f64 {
    let mut acc = 0.0;
    for i in 0..nt {
        for j in 0..nt {
            acc += h[i * nt + j] * t1.get(&[i]) * t2.get(&[j]);
        }
    }
    acc
}

#[test]
fn curve_tractor_identities_hold_along_circles() {
    let opts = IntegrationOptions { step: 2e-3, steps: 300, renormalize: true };
    let mut r = rng(07_03);
    let mut worst_identity = 0.0f64;
    let mut worst_norm = 0.0f64;
    let mut worst_gauge = 0.0f64;

    let charts = [catalog_metric("sphere3").unwrap(), catalog_metric("bumpy3").unwrap()];
    for (ci, metric) in charts.iter().enumerate() {
        let hw = if ci == 0 { 0.7 } else { 1.0 };
        for _ in 0..5 {
            let ic = random_unit_state(metric, &mut r, -hw, hw);
            let run = integrate(
                metric,
                CurveKind::ConformalCircleUnit,
                &ic.x,
                &ic.u,
                Some(&ic.a),
                &opts,
            )
            .unwrap();
            let nt = metric.dim() + 2;
            for st in run.states.iter().step_by(10) {
                let conn = connection_at(metric, &st.x).unwrap();
                let nabla =
                    ode_nabla_u_a(&conn, CurveKind::ConformalCircleUnit, &st.u, &st.a).unwrap();
                let ws = weighted_state(&conn, &st.u, &st.a, &nabla).unwrap();
                let (h, _) = tractor_metric(&conn).unwrap();
                let x_tr = canonical_tractor(nt);
                let u_tr = distcurve::curves::velocity_tractor(metric.dim(), &ws);
                let a_tr = distcurve::curves::acceleration_tractor(&conn, &ws).unwrap();

                worst_identity = worst_identity
                    .max(pair(&h, nt, &x_tr, &x_tr).abs())
                    .max(pair(&h, nt, &x_tr, &u_tr).abs())
                    .max((pair(&h, nt, &u_tr, &u_tr) - ws.s).abs())
                    .max(pair(&h, nt, &u_tr, &a_tr).abs())
                    .max((pair(&h, nt, &x_tr, &a_tr) + ws.s * ws.sigma).abs());

                let sig = sigma_conformal(&conn, &ws).unwrap();
                let norm2 = sigma_conformal_norm2(&h, &sig).unwrap();
                worst_norm = worst_norm.max((norm2 + ws.s * ws.sigma * ws.sigma).abs());
            }

            // The projective parametrisation keeps the acceleration tractor
            // null when started from unit data with orthogonal acceleration.
            let run = integrate(
                metric,
                CurveKind::ConformalCircleProjective,
                &ic.x,
                &ic.u,
                Some(&ic.a),
                &IntegrationOptions { step: 2e-3, steps: 300, renormalize: false },
            )
            .unwrap();
            for st in run.states.iter().step_by(10) {
                let conn = connection_at(metric, &st.x).unwrap();
                let nabla =
                    ode_nabla_u_a(&conn, CurveKind::ConformalCircleProjective, &st.u, &st.a)
                        .unwrap();
                let ws = weighted_state(&conn, &st.u, &st.a, &nabla).unwrap();
                let (h, _) = tractor_metric(&conn).unwrap();
                let a_tr = distcurve::curves::acceleration_tractor(&conn, &ws).unwrap();
                worst_gauge = worst_gauge.max(pair(&h, metric.dim() + 2, &a_tr, &a_tr).abs());
            }
        }
    }

    let pass = worst_identity < IDENTITY_TOL
        && worst_norm < IDENTITY_TOL
        && worst_gauge < PROJECTIVE_GAUGE_TOL;
    report(
        3,
        "curve tractor identities along circles",
        pass,
        &format!(
            "pairings {worst_identity:.2e}, norm {worst_norm:.2e}, projective gauge {worst_gauge:.2e}"
        ),
    );
    assert!(worst_identity < IDENTITY_TOL, "identity gap {worst_identity:.3e}");
    assert!(worst_norm < IDENTITY_TOL, "tractor norm gap {worst_norm:.3e}");
    assert!(worst_gauge < PROJECTIVE_GAUGE_TOL, "gauge residual {worst_gauge:.3e}");
}

// ---------------------------------------------------------------------------
// 4. Quadratic geodesic integral of a scalar solution, with its induced
//    Killing tensor, and a drifting negative control.
// ---------------------------------------------------------------------------

#[test]
fn scalar_solution_yields_conserved_quadratic_integral() {
    let m = Metric::euclidean(3).unwrap();
    let tau = FieldJet::scalar(3, 2.0, "x1^2 + x2^2 + x3^2").unwrap();
    let bad = FieldJet::scalar(3, 2.0, "x1^3").unwrap();
    let opts = IntegrationOptions { step: 1e-3, steps: 10_000, renormalize: false };
    let mut r = rng(07_04);

    let mut worst_drift = 0.0f64;
    let mut weakest_negative = f64::INFINITY;
    for _ in 0..10 {
        let x0 = random_point(&mut r, -1.0, 1.0, 3);
        let u0: Vec<f64>;
        loop {
            let cand = random_point(&mut r, -1.0, 1.0, 3);
            if cand[0].abs() > 0.2 {
                let norm = cand.iter().map(|v| v * v).sum::<f64>().sqrt();
                u0 = cand.iter().map(|v| v / norm).collect();
                break;
            }
        }
        let run = integrate(&m, CurveKind::Geodesic, &x0, &u0, None, &opts).unwrap();
        let good = verify_conservation(
            &m,
            &run,
            &FirstIntegral::TauProjective { tau: tau.clone() },
            DRIFT_TIGHT,
        )
        .unwrap();
        worst_drift = worst_drift.max(good.rel_drift);
        let control = verify_conservation(
            &m,
            &run,
            &FirstIntegral::TauProjective { tau: bad.clone() },
            DRIFT_TIGHT,
        )
        .unwrap();
        weakest_negative = weakest_negative.min(control.rel_drift);
    }

    let mut worst_residual = 0.0f64;
    for _ in 0..50 {
        let x = random_point(&mut r, -2.0, 2.0, 3);
        let geom = curvature_at(&m, &x).unwrap();
        let (_k, dk) = killing_from_tau(&geom, &tau).unwrap();
        worst_residual = worst_residual.max(residual_killing_grad(&dk).unwrap());
    }

    let pass = worst_drift < DRIFT_TIGHT
        && worst_residual < KILLING_RESIDUAL_TOL
        && weakest_negative > NEGATIVE_DRIFT_FLOOR;
    report(
        4,
        "scalar solution conserves its quadratic integral",
        pass,
        &format!(
            "drift {worst_drift:.2e}, Killing residual {worst_residual:.2e}, control drift {weakest_negative:.2e}"
        ),
    );
    assert!(worst_drift < DRIFT_TIGHT, "drift {worst_drift:.3e}");
    assert!(worst_residual < KILLING_RESIDUAL_TOL, "residual {worst_residual:.3e}");
    assert!(weakest_negative > NEGATIVE_DRIFT_FLOOR, "control drift {weakest_negative:.3e}");
}

// ---------------------------------------------------------------------------
// 5. Two-form solutions conserve the velocity-acceleration contraction
//    along conformal circles, on the flat chart and after rescaling to the
//    round sphere.
// ---------------------------------------------------------------------------

/// Constant 2-form plus a linear one, both solutions on the flat chart.
fn flat_two_forms() -> Vec<FieldJet> {
    let constant = FieldJet::from_strs(
        3,
        &[Valence::Down, Valence::Down],
        3.0,
        &["0", "1", "0.4", "-1", "0", "0", "-0.4", "0", "0"],
    )
    .unwrap();
    let w = [0.3, -1.0, 0.7];
    let mut comps = Vec::new();
    for a in 0..3 {
        for b in 0..3 {
            comps.push(format!("({})*x{} - ({})*x{}", w[b], a + 1, w[a], b + 1));
        }
    }
    let refs: Vec<&str> = comps.iter().map(String::as_str).collect();
    let linear = FieldJet::from_strs(3, &[Valence::Down, Valence::Down], 3.0, &refs).unwrap();
    vec![constant, linear]
}

fn random_circles(
    metric: &Metric,
    r: &mut rand_chacha::ChaCha8Rng,
    hw: f64,
    count: usize,
    extra: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
) -> Vec<CurveSamples> {
    let opts = IntegrationOptions { step: 2e-3, steps: 300, renormalize: true };
    let mut out = Vec::new();
    if let Some((x0, u0, a0)) = extra {
        out.push(
            integrate(metric, CurveKind::ConformalCircleUnit, &x0, &u0, Some(&a0), &opts).unwrap(),
        );
    }
    while out.len() < count {
        let ic = random_unit_state(metric, r, -hw, hw);
        out.push(
            integrate(metric, CurveKind::ConformalCircleUnit, &ic.x, &ic.u, Some(&ic.a), &opts)
                .unwrap(),
        );
    }
    out
}

#[test]
fn two_form_solutions_conserve_tod_integral() {
    let flat = Metric::euclidean(3).unwrap();
    let mut r = rng(07_05);
    // First circle is far off-center so the individual terms of the
    // integral swing by order one along it.
    let off_center = (
        vec![2.0, 0.5, -1.0],
        vec![0.0, 1.0, 0.0],
        vec![0.7, 0.0, 0.0],
    );
    let circles = random_circles(&flat, &mut r, 1.0, 10, Some(off_center));

    let mut worst_flat = 0.0f64;
    for k in flat_two_forms() {
        let integral = FirstIntegral::CkyTod { field: k };
        for run in &circles {
            let rep = verify_conservation(&flat, run, &integral, DRIFT_TIGHT).unwrap();
            worst_flat = worst_flat.max(rep.rel_drift);
        }
    }

    // The same solutions carried to the round sphere by the weight law.
    let sphere = catalog_metric("sphere3").unwrap();
    let phi = Expr::parse("log(2/(1 + x1^2 + x2^2 + x3^2))").unwrap();
    let circles = random_circles(&sphere, &mut r, 0.7, 10, None);
    let mut worst_round = 0.0f64;
    for k in flat_two_forms() {
        let integral = FirstIntegral::CkyTod { field: k.conformal_rescale(&phi) };
        for run in &circles {
            let rep = verify_conservation(&sphere, run, &integral, DRIFT_RESCALED).unwrap();
            worst_round = worst_round.max(rep.rel_drift);
        }
    }

    let pass = worst_flat < DRIFT_TIGHT && worst_round < DRIFT_RESCALED;
    report(
        5,
        "two-form solutions conserve the Tod integral",
        pass,
        &format!("flat drift {worst_flat:.2e}, round drift {worst_round:.2e}"),
    );
    assert!(worst_flat < DRIFT_TIGHT, "flat drift {worst_flat:.3e}");
    assert!(worst_round < DRIFT_RESCALED, "round drift {worst_round:.3e}");
}

// ---------------------------------------------------------------------------
// 6. Third-order scalar solutions conserve the conformal integral, and the
//    chart formula agrees with the tractor pairing.
// ---------------------------------------------------------------------------

#[test]
fn third_order_scalar_solutions_conserve_conformal_integral() {
    let flat = Metric::euclidean(3).unwrap();
    let mut r = rng(07_06);
    let off_center = (
        vec![1.5, -0.8, 0.6],
        vec![0.0, 0.0, 1.0],
        vec![0.5, 0.5, 0.0],
    );
    let circles = random_circles(&flat, &mut r, 1.0, 6, Some(off_center));

    let mut worst_drift = 0.0f64;
    let mut worst_route = 0.0f64;
    for src in ["1", "x1", "x1^2 + x2^2 + x3^2"] {
        let tau = FieldJet::scalar(3, 2.0, src).unwrap();
        let integral = FirstIntegral::TauConformal { tau: tau.clone() };
        for run in &circles {
            let rep = verify_conservation(&flat, run, &integral, DRIFT_TIGHT).unwrap();
            worst_drift = worst_drift.max(rep.rel_drift);
            for st in run.states.iter().step_by(20) {
                let direct = fi_tau_conformal(&flat, st, &tau).unwrap();
                let paired = fi_s_pair_h(&flat, st, &tau).unwrap();
                worst_route = worst_route.max((direct - paired).abs());
            }
        }
    }

    let pass = worst_drift < DRIFT_TIGHT && worst_route < ROUTE_TOL;
    report(
        6,
        "scalar solutions conserve the conformal integral",
        pass,
        &format!("drift {worst_drift:.2e}, route gap {worst_route:.2e}"),
    );
    assert!(worst_drift < DRIFT_TIGHT, "drift {worst_drift:.3e}");
    assert!(worst_route < ROUTE_TOL, "route gap {worst_route:.3e}");
}

// ---------------------------------------------------------------------------
// 7. Conformal invariance of circle traces and first-integral values.
// ---------------------------------------------------------------------------

#[test]
fn conformal_rescaling_preserves_circles_and_integrals() {
    let flat = Metric::euclidean(3).unwrap();
    let mut r = rng(07_07);
    let k = flat_two_forms().remove(1);
    let tau = FieldJet::scalar(3, 2.0, "x1^2 + x2^2 + x3^2").unwrap();

    let mut worst_trace = 0.0f64;
    let mut worst_value = 0.0f64;
    for _ in 0..2 {
        // Random scale built from sines so it stays bounded on the chart.
        let c: Vec<f64> = (0..4).map(|_| r.gen_range(-0.15..0.15)).collect();
        let phi_src = format!(
            "{} + ({})*sin(x1) + ({})*sin(x2)*sin(x3) + ({})*sin(x3)",
            c[0], c[1], c[2], c[3]
        );
        let phi = Expr::parse(&phi_src).unwrap();
        let rescaled = flat.conformal_rescale(phi.clone()).unwrap();
        let phi_jet = FieldJet::scalar(3, 0.0, &phi_src).unwrap();

        for _ in 0..2 {
            let ic = random_unit_state(&flat, &mut r, -0.8, 0.8);
            let parts = phi_jet.partials_at(&ic.x, 1).unwrap();
            let phi0 = parts[0].get(&[]);
            let ups: Vec<f64> = (0..3).map(|i| parts[1].get(&[i])).collect();
            let mats = flat.matrix_at(&ic.x).unwrap();
            let (u2, a2) = rescaled_unit_data(&mats, &ups, phi0, &ic.u, &ic.a);

            let run1 = integrate(
                &flat,
                CurveKind::ConformalCircleUnit,
                &ic.x,
                &ic.u,
                Some(&ic.a),
                &IntegrationOptions { step: 1e-3, steps: 500, renormalize: true },
            )
            .unwrap();
            let run2 = integrate(
                &rescaled,
                CurveKind::ConformalCircleUnit,
                &ic.x,
                &u2,
                Some(&a2),
                &IntegrationOptions { step: 1e-3, steps: 900, renormalize: true },
            )
            .unwrap();
            let trace2: Vec<Vec<f64>> = run2.states.iter().map(|st| st.x.clone()).collect();
            for st in run1.states.iter().take(300).step_by(10) {
                worst_trace = worst_trace.max(polyline_distance(&st.x, &trace2));
            }

            // The conformal first integrals take the same value in both
            // scales once the solutions are carried over by their weights.
            let st1 = &run1.states[0];
            let st2 = CurveState { t: 0.0, x: ic.x.clone(), u: u2.clone(), a: a2.clone() };
            let k_hat = k.conformal_rescale(&phi);
            let tau_hat = tau.conformal_rescale(&phi);
            let pairs = [
                (
                    fi_cky_tod(&flat, st1, &k).unwrap(),
                    fi_cky_tod(&rescaled, &st2, &k_hat).unwrap(),
                ),
                (
                    fi_tau_conformal(&flat, st1, &tau).unwrap(),
                    fi_tau_conformal(&rescaled, &st2, &tau_hat).unwrap(),
                ),
                (
                    fi_s_pair_h(&flat, st1, &tau).unwrap(),
                    fi_s_pair_h(&rescaled, &st2, &tau_hat).unwrap(),
                ),
            ];
            for (v1, v2) in pairs {
                worst_value = worst_value.max((v1 - v2).abs());
            }
        }
    }

    let pass = worst_trace < INVARIANCE_TOL && worst_value < INVARIANCE_TOL;
    report(
        7,
        "conformal rescaling preserves circles and integrals",
        pass,
        &format!("trace gap {worst_trace:.2e}, value gap {worst_value:.2e}"),
    );
    assert!(worst_trace < INVARIANCE_TOL, "trace gap {worst_trace:.3e}");
    assert!(worst_value < INVARIANCE_TOL, "value gap {worst_value:.3e}");
}

// ---------------------------------------------------------------------------
// 8. Zero-locus scans recover seeded curves to one grid cell.
// ---------------------------------------------------------------------------

#[test]
fn zero_locus_scans_recover_seeded_curves() {
    let start = Instant::now();

    // A solution bivector proportional to the second coordinate vanishes
    // exactly on the first axis.
    let flat2 = Metric::euclidean(2).unwrap();
    let sigma = FieldJet::from_strs(
        2,
        &[Valence::Up, Valence::Up],
        0.0,
        &["0", "x2", "-x2", "0"],
    )
    .unwrap();
    let grid = ScanGrid::new(vec![-2.0, -2.0], vec![2.0, 2.0], vec![200, 200]).unwrap();
    let spacing = grid.spacing()[1];
    let hits = zero_locus_scan(
        &flat2,
        &LocusPredicate::BivectorValue { sigma },
        &grid,
        Some(spacing),
    )
    .unwrap();
    let mut columns = vec![false; 200];
    let mut axis_dev = 0.0f64;
    for hit in &hits {
        columns[hit.index[0]] = true;
        axis_dev = axis_dev.max(hit.center[1].abs());
    }
    let axis_ok = !hits.is_empty() && axis_dev <= spacing && columns.iter().all(|c| *c);

    // A transported parallel 3-tractor seeded on the unit circle.
    let flat3 = Metric::euclidean(3).unwrap();
    let x0 = vec![1.0, 0.0, 0.0];
    let u0 = vec![0.0, 1.0, 0.0];
    let a0 = vec![-1.0, 0.0, 0.0];
    let conn = connection_at(&flat3, &x0).unwrap();
    let nabla = ode_nabla_u_a(&conn, CurveKind::ConformalCircleUnit, &u0, &a0).unwrap();
    let ws = weighted_state(&conn, &u0, &a0, &nabla).unwrap();
    let sig = sigma_conformal(&conn, &ws).unwrap();
    let (h, _) = tractor_metric(&conn).unwrap();
    let hm = DenseTensor::from_vec(5, &[Valence::Down, Valence::Down], h).unwrap();
    let mut lowered = sig;
    for slot in 0..3 {
        lowered = lowered.convert_slot(slot, &hm).unwrap();
    }
    let base = MaskedTractor::fully_known(lowered);
    let family = ParallelFamily::verified(&flat3, Structure::Conformal, x0, base).unwrap();
    let predicate = LocusPredicate::ParallelCky { family };

    let grid3 = ScanGrid::new(
        vec![-2.0, -2.0, -0.02],
        vec![2.0, 2.0, 0.02],
        vec![200, 200, 1],
    )
    .unwrap();
    let spacing3 = grid3.spacing()[0];
    let probe = predicate
        .norms_at(&flat3, &[0.0, -1.0 - 0.5 * spacing3, 0.0])
        .unwrap();
    let tol = 1.4 * probe.into_iter().fold(0.0f64, f64::max);
    let hits = zero_locus_scan(&flat3, &predicate, &grid3, Some(tol)).unwrap();
    let mut circle_dev = 0.0f64;
    let mut angles: Vec<f64> = Vec::new();
    for hit in &hits {
        let rad = (hit.center[0] * hit.center[0] + hit.center[1] * hit.center[1]).sqrt();
        circle_dev = circle_dev.max((rad - 1.0).abs());
        angles.push(hit.center[1].atan2(hit.center[0]));
    }
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut max_gap = 0.0f64;
    for w in angles.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    if let (Some(first), Some(last)) = (angles.first(), angles.last()) {
        max_gap = max_gap.max(first + 2.0 * std::f64::consts::PI - last);
    }
    let circle_ok =
        hits.len() >= 100 && circle_dev <= spacing3 * 2.0f64.sqrt() && max_gap < 0.15;

    let elapsed = start.elapsed();
    let pass = axis_ok && circle_ok && elapsed < Duration::from_secs(60);
    report(
        8,
        "zero-locus scans recover seeded curves",
        pass,
        &format!(
            "axis deviation {axis_dev:.3}, circle deviation {circle_dev:.3}, gap {max_gap:.3}, {elapsed:.2?}"
        ),
    );
    assert!(axis_ok, "axis scan: deviation {axis_dev:.3e}, columns {:?}", columns.iter().filter(|c| !**c).count());
    assert!(circle_ok, "circle scan: {} hits, deviation {circle_dev:.3e}, gap {max_gap:.3}", hits.len());
    assert!(elapsed < Duration::from_secs(60), "scans took {elapsed:.2?}");
}

// ---------------------------------------------------------------------------
// 9. Initial data round-trips through curve tractors, per causal type.
// ---------------------------------------------------------------------------

fn max_component_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
}

#[test]
fn tractor_initial_data_round_trips() {
    let m = catalog_metric("minkowski12").unwrap();
    let mut r = rng(07_09);
    let mut worst = 0.0f64;

    for klass in [CausalClass::Spacelike, CausalClass::Timelike] {
        for _ in 0..100 {
            let x = random_point(&mut r, -1.0, 1.0, 3);
            let conn = connection_at(&m, &x).unwrap();
            // Velocities dominated by the first slot have positive square
            // on this chart; the opposite dominance gives negative square.
            let (u, s) = loop {
                let cand = random_point(&mut r, -1.0, 1.0, 3);
                let q = conn.chr.inner(&cand, &cand);
                let wanted = match klass {
                    CausalClass::Spacelike => q > 0.3,
                    _ => q < -0.3,
                };
                if wanted {
                    let norm = q.abs().sqrt();
                    let u: Vec<f64> = cand.iter().map(|v| v / norm).collect();
                    break (u, if q > 0.0 { 1.0 } else { -1.0 });
                }
            };
            let a = loop {
                let cand = random_point(&mut r, -1.0, 1.0, 3);
                let ua = conn.chr.inner(&u, &cand);
                let a: Vec<f64> = (0..3).map(|i| cand[i] - s * ua * u[i]).collect();
                if a.iter().map(|v| v * v).sum::<f64>() > 0.05 {
                    break a;
                }
            };
            let ws = weighted_state(&conn, &u, &a, &[0.0; 3]).unwrap();
            let sig = sigma_conformal(&conn, &ws).unwrap();
            let ic = ic_from_conformal_tractor(&conn, &sig, Some(klass)).unwrap();
            worst = worst.max(max_component_gap(&ic.u, &u));
            worst = worst.max(max_component_gap(ic.a.as_ref().unwrap(), &a));
            worst = worst.max((ic.sigma - 1.0).abs());

            // The opposite causal expectation must reject the same tractor.
            let wrong = if klass == CausalClass::Spacelike {
                CausalClass::Timelike
            } else {
                CausalClass::Spacelike
            };
            assert!(matches!(
                ic_from_conformal_tractor(&conn, &sig, Some(wrong)),
                Err(CurveError::WrongCausalType { .. })
            ));
        }
    }

    // Null velocities round-trip through the bivector form.
    for _ in 0..100 {
        let x = random_point(&mut r, -1.0, 1.0, 3);
        let conn = connection_at(&m, &x).unwrap();
        let theta = r.gen_range(0.0..std::f64::consts::TAU);
        let scale = r.gen_range(0.5..1.5);
        let u = vec![scale, scale * theta.cos(), scale * theta.sin()];
        let sig = sigma_null(3, &u).unwrap();
        let ic = ic_from_null_tractor(&conn, &sig).unwrap();
        worst = worst.max(max_component_gap(&ic.u, &u));
        assert_eq!(ic.causal, CausalClass::Null);
    }

    // Geodesic bivectors reproduce the affine velocity on the projective
    // side, and reject a non-null velocity on the conformal side.
    for _ in 0..100 {
        let u = random_point(&mut r, -1.0, 1.0, 3);
        if u.iter().map(|v| v * v).sum::<f64>() < 0.05 {
            continue;
        }
        let sig = sigma_projective(3, &u).unwrap();
        let ic = ic_from_projective_tractor(3, &sig).unwrap();
        worst = worst.max(max_component_gap(&ic.u, &u));
    }
    let conn = connection_at(&m, &[0.0; 3]).unwrap();
    let spacelike = vec![1.5, 0.2, -0.3];
    let sig = sigma_null(3, &spacelike).unwrap();
    assert!(matches!(
        ic_from_null_tractor(&conn, &sig),
        Err(CurveError::WrongCausalType { .. })
    ));

    let pass = worst < ROUND_TRIP_TOL;
    report(
        9,
        "initial data round-trips through curve tractors",
        pass,
        &format!("worst component gap {worst:.2e}"),
    );
    assert!(worst < ROUND_TRIP_TOL, "round-trip gap {worst:.3e}");
}
