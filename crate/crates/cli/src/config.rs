//! Run configuration: a strict TOML schema and builders for core objects.
//!
//! A run file is sectioned TOML. `[metric]` picks a catalog chart by name or
//! gives an expression matrix; `[curve]` fixes the curve family and initial
//! data; `[[integral]]` blocks list first integrals to verify along that
//! curve; `[residual]` and `[scan]` configure grid sweeps; `[transport]`
//! overrides the parallel structure; `[output]` names the emitted files.
//! Vectors are TOML arrays and component functions are quoted expression
//! strings. Unknown keys anywhere are rejected during parsing, so a
//! misspelled scenario fails before any computation starts.
//!
//! Conformal fields built here carry their natural weights without a config
//! knob: third-order scalars are weight-two densities, conformal Killing
//! tensors carry weight two per slot, and Killing-Yano 2-forms carry weight
//! three. Any other weight would break rescale covariance silently, so the
//! schema simply does not offer one.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use distcurve::bgg::FieldJet;
use distcurve::curves::{
    ode_nabla_u_a, sigma_conformal, sigma_projective, weighted_state, CurveKind,
    IntegrationOptions,
};
use distcurve::geometry::curvature::connection_at;
use distcurve::geometry::{catalog_metric, ChartDomain, Expr, Metric};
use distcurve::integrals::{FirstIntegral, LocusPredicate, ParallelFamily, ScanGrid};
use distcurve::tensor::{DenseTensor, Valence};
use distcurve::tractor::{tractor_metric, Structure};

use crate::error::CliError;

/// Whole run file. Every section is optional; each command checks for the
/// sections it needs and ignores the rest.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub metric: Option<MetricConfig>,
    pub curve: Option<CurveConfig>,
    #[serde(default, rename = "integral")]
    pub integrals: Vec<IntegralConfig>,
    pub residual: Option<ResidualConfig>,
    pub scan: Option<ScanConfig>,
    pub transport: Option<TransportConfig>,
    pub output: Option<OutputConfig>,
}

impl RunConfig {
    /// Read and strictly parse a TOML run file.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::BadInput(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::BadInput(format!("config {}: {e}", path.display())))
    }

    /// The metric section, required by every computing command.
    pub fn metric(&self) -> Result<&MetricConfig, CliError> {
        self.metric
            .as_ref()
            .ok_or_else(|| CliError::BadInput("config needs a [metric] section".into()))
    }

    /// The curve section, required by integrate, conserve, and transport.
    pub fn curve(&self) -> Result<&CurveConfig, CliError> {
        self.curve
            .as_ref()
            .ok_or_else(|| CliError::BadInput("config needs a [curve] section".into()))
    }

    /// The residual section, required by the residual command.
    pub fn residual(&self) -> Result<&ResidualConfig, CliError> {
        self.residual
            .as_ref()
            .ok_or_else(|| CliError::BadInput("config needs a [residual] section".into()))
    }

    /// The scan section, required by the scan command.
    pub fn scan(&self) -> Result<&ScanConfig, CliError> {
        self.scan
            .as_ref()
            .ok_or_else(|| CliError::BadInput("config needs a [scan] section".into()))
    }
}

/// Chart selection: a catalog name or an explicit expression matrix.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    /// Name of a built-in chart; see the `catalog` command.
    pub catalog: Option<String>,
    /// Chart dimension for an expression metric.
    pub dim: Option<usize>,
    /// Row-major metric component expressions, `dim * dim` entries.
    pub components: Option<Vec<String>>,
    /// Expected eigenvalue signs at evaluation points, one per dimension;
    /// defaults to all positive.
    pub signature: Option<Vec<i8>>,
    /// Trust box for the chart, one `[lo, hi]` pair per coordinate.
    #[serde(rename = "box")]
    pub chart_box: Option<Vec<[f64; 2]>>,
    /// Conformal factor expression `phi`; the run then uses `e^{2 phi} g`.
    pub rescale: Option<String>,
}

impl MetricConfig {
    /// Realise the configured chart.
    pub fn build(&self) -> Result<Metric, CliError> {
        let mut metric = match (&self.catalog, &self.components) {
            (Some(name), None) => {
                if self.dim.is_some() || self.signature.is_some() {
                    return Err(CliError::BadInput(
                        "metric: catalog charts fix `dim` and `signature`; drop those keys".into(),
                    ));
                }
                catalog_metric(name).ok_or_else(|| {
                    CliError::BadInput(format!("metric: unknown catalog chart {name:?}"))
                })?
            }
            (None, Some(components)) => {
                let dim = self.dim.ok_or_else(|| {
                    CliError::BadInput("metric: expression charts need `dim`".into())
                })?;
                let signature = self.signature.clone().unwrap_or_else(|| vec![1; dim]);
                let refs: Vec<&str> = components.iter().map(String::as_str).collect();
                Metric::expression_matrix_from_strs(dim, &refs, signature)?
            }
            _ => {
                return Err(CliError::BadInput(
                    "metric: give exactly one of `catalog` or `components`".into(),
                ))
            }
        };
        if let Some(corners) = &self.chart_box {
            if corners.len() != metric.dim() {
                return Err(CliError::BadInput(format!(
                    "metric: box has {} axes, chart has {}",
                    corners.len(),
                    metric.dim()
                )));
            }
            metric = metric.with_domain(ChartDomain::Box(corners.clone()));
        }
        if let Some(phi) = &self.rescale {
            metric = metric.conformal_rescale(Expr::parse(phi)?)?;
        }
        Ok(metric)
    }
}

/// Distinguished-curve family, initial data, and step control.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveConfig {
    /// One of `geodesic`, `null_geodesic`, `conformal_circle` (unit
    /// parametrisation), or `conformal_circle_projective`.
    pub kind: String,
    pub x0: Vec<f64>,
    pub u0: Vec<f64>,
    /// Initial covariant acceleration; required by the circle families.
    pub a0: Option<Vec<f64>>,
    /// Step size in the curve parameter.
    pub step: f64,
    pub steps: usize,
    /// Project the state back onto its constraints after every step.
    #[serde(default)]
    pub renormalize: bool,
}

impl CurveConfig {
    /// Parse the family name; hyphens and underscores are interchangeable.
    pub fn kind(&self) -> Result<CurveKind, CliError> {
        match self.kind.replace('-', "_").as_str() {
            "geodesic" => Ok(CurveKind::Geodesic),
            "null_geodesic" => Ok(CurveKind::NullGeodesic),
            "conformal_circle" | "conformal_circle_unit" => Ok(CurveKind::ConformalCircleUnit),
            "conformal_circle_projective" => Ok(CurveKind::ConformalCircleProjective),
            other => Err(CliError::BadInput(format!("curve: unknown kind {other:?}"))),
        }
    }

    /// Integration options, with the command-line flag forcing
    /// renormalisation on.
    pub fn options(&self, force_renormalize: bool) -> IntegrationOptions {
        IntegrationOptions {
            step: self.step,
            steps: self.steps,
            renormalize: self.renormalize || force_renormalize,
        }
    }

    /// Rejects initial data that no curve family can use. The integrator
    /// itself checks family-specific constraints.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.u0.iter().all(|v| *v == 0.0) {
            return Err(CliError::BadInput("curve: zero velocity in u0".into()));
        }
        Ok(())
    }
}

/// One first integral to evaluate along the configured curve.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegralConfig {
    /// One of `killing`, `conformal_killing_null`, `tau_projective`,
    /// `cky_tod`, `tau_conformal`, `s_pair_h`.
    pub kind: String,
    /// Scalar solution expression for the third-order kinds.
    pub tau: Option<String>,
    /// Row-major lower-index component expressions for the tensor kinds.
    pub components: Option<Vec<String>>,
    /// Tensor rank for the contraction kinds; inferred from the component
    /// count when omitted.
    pub rank: Option<usize>,
}

impl IntegralConfig {
    /// Realise the first integral on a chart of the given dimension.
    pub fn build(&self, dim: usize) -> Result<FirstIntegral, CliError> {
        let kind = self.kind.replace('-', "_").to_lowercase();
        match kind.as_str() {
            "killing" | "killing_contraction" => {
                let rank = self.resolve_rank(dim, None)?;
                Ok(FirstIntegral::Killing { field: self.tensor_field(dim, rank, 0.0)? })
            }
            "conformal_killing_null" => {
                let rank = self.resolve_rank(dim, None)?;
                let weight = 2.0 * rank as f64;
                Ok(FirstIntegral::ConformalKillingNull {
                    field: self.tensor_field(dim, rank, weight)?,
                })
            }
            "cky_tod" => {
                let rank = self.resolve_rank(dim, Some(2))?;
                Ok(FirstIntegral::CkyTod { field: self.tensor_field(dim, rank, 3.0)? })
            }
            "tau_projective" => {
                Ok(FirstIntegral::TauProjective { tau: self.scalar_field(dim, 0.0)? })
            }
            "tau_conformal" => {
                Ok(FirstIntegral::TauConformal { tau: self.scalar_field(dim, 2.0)? })
            }
            "s_pair_h" => Ok(FirstIntegral::SPairH { tau: self.scalar_field(dim, 2.0)? }),
            other => Err(CliError::BadInput(format!("integral: unknown kind {other:?}"))),
        }
    }

    /// Tensor rank from the config, the kind, or the component count.
    fn resolve_rank(&self, dim: usize, fixed: Option<usize>) -> Result<usize, CliError> {
        if let Some(want) = fixed {
            match self.rank {
                Some(r) if r != want => Err(CliError::BadInput(format!(
                    "integral: kind {:?} is rank {want}, config says {r}",
                    self.kind
                ))),
                _ => Ok(want),
            }
        } else if let Some(r) = self.rank {
            Ok(r)
        } else {
            let len = self
                .components
                .as_ref()
                .ok_or_else(|| {
                    CliError::BadInput(format!("integral: kind {:?} needs `components`", self.kind))
                })?
                .len();
            infer_rank(dim, len)
                .ok_or_else(|| CliError::BadInput(format!(
                    "integral: {len} components match no rank on a dimension-{dim} chart"
                )))
        }
    }

    /// Lower-index tensor field at the kind's natural conformal weight.
    fn tensor_field(&self, dim: usize, rank: usize, weight: f64) -> Result<FieldJet, CliError> {
        if self.tau.is_some() {
            return Err(CliError::BadInput(format!(
                "integral: kind {:?} takes `components`, not `tau`",
                self.kind
            )));
        }
        let components = self.components.as_ref().ok_or_else(|| {
            CliError::BadInput(format!("integral: kind {:?} needs `components`", self.kind))
        })?;
        build_field(dim, &vec![Valence::Down; rank], weight, components)
    }

    /// Scalar density at the kind's natural weight.
    fn scalar_field(&self, dim: usize, weight: f64) -> Result<FieldJet, CliError> {
        if self.components.is_some() || self.rank.is_some() {
            return Err(CliError::BadInput(format!(
                "integral: kind {:?} takes only `tau`",
                self.kind
            )));
        }
        let tau = self.tau.as_ref().ok_or_else(|| {
            CliError::BadInput(format!("integral: kind {:?} needs `tau`", self.kind))
        })?;
        Ok(FieldJet::scalar(dim, weight, tau)?)
    }
}

/// Which overdetermined operator a residual sweep evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualKind {
    Killing,
    ConformalKilling,
    Cky2,
    Bgg3Projective,
    Bgg3Conformal,
    ProjBivector,
}

impl ResidualKind {
    /// Parse a config name; hyphens and underscores are interchangeable.
    pub fn parse(name: &str) -> Result<ResidualKind, CliError> {
        match name.replace('-', "_").to_lowercase().as_str() {
            "killing" => Ok(ResidualKind::Killing),
            "conformal_killing" => Ok(ResidualKind::ConformalKilling),
            "cky2" => Ok(ResidualKind::Cky2),
            "bgg3_proj" => Ok(ResidualKind::Bgg3Projective),
            "bgg3_conf" => Ok(ResidualKind::Bgg3Conformal),
            "proj_bivector" => Ok(ResidualKind::ProjBivector),
            other => Err(CliError::BadInput(format!("residual: unknown kind {other:?}"))),
        }
    }

    /// Stable name used in reports.
    pub fn name(self) -> &'static str {
        match self {
            ResidualKind::Killing => "killing",
            ResidualKind::ConformalKilling => "conformal_killing",
            ResidualKind::Cky2 => "cky2",
            ResidualKind::Bgg3Projective => "bgg3_proj",
            ResidualKind::Bgg3Conformal => "bgg3_conf",
            ResidualKind::ProjBivector => "proj_bivector",
        }
    }
}

/// A pointwise operator residual swept over a grid of chart points.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualConfig {
    /// One of `killing`, `conformal_killing`, `cky2`, `bgg3_proj`,
    /// `bgg3_conf`, `proj_bivector`.
    pub kind: String,
    /// Scalar expression for the third-order kinds.
    pub scalar: Option<String>,
    /// Row-major component expressions for the tensor kinds.
    pub components: Option<Vec<String>>,
    /// Tensor rank for the Killing kinds; defaults to 1.
    pub rank: Option<usize>,
    /// Grid corners and per-axis cell counts.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub resolution: Vec<usize>,
}

/// A realised residual sweep: operator, field, and evaluation grid.
pub struct ResidualSpec {
    pub kind: ResidualKind,
    pub field: FieldJet,
    pub grid: ScanGrid,
    pub resolution: Vec<usize>,
}

impl ResidualConfig {
    /// Realise the sweep on the configured chart.
    pub fn build(&self, metric: &Metric) -> Result<ResidualSpec, CliError> {
        let dim = metric.dim();
        let kind = ResidualKind::parse(&self.kind)?;
        let field = match kind {
            ResidualKind::Killing => {
                let rank = self.rank.unwrap_or(1);
                self.tensor_residual_field(dim, rank, 0.0, Valence::Down)?
            }
            ResidualKind::ConformalKilling => {
                let rank = self.rank.unwrap_or(1);
                self.tensor_residual_field(dim, rank, 2.0 * rank as f64, Valence::Down)?
            }
            ResidualKind::Cky2 => self.tensor_residual_field(dim, 2, 3.0, Valence::Down)?,
            ResidualKind::ProjBivector => self.tensor_residual_field(dim, 2, 0.0, Valence::Up)?,
            ResidualKind::Bgg3Projective => self.scalar_residual_field(dim, 0.0)?,
            ResidualKind::Bgg3Conformal => self.scalar_residual_field(dim, 2.0)?,
        };
        let grid = build_grid(dim, &self.lo, &self.hi, &self.resolution)?;
        Ok(ResidualSpec { kind, field, grid, resolution: self.resolution.clone() })
    }

    fn tensor_residual_field(
        &self,
        dim: usize,
        rank: usize,
        weight: f64,
        valence: Valence,
    ) -> Result<FieldJet, CliError> {
        if self.scalar.is_some() {
            return Err(CliError::BadInput(format!(
                "residual: kind {:?} takes `components`, not `scalar`",
                self.kind
            )));
        }
        let components = self.components.as_ref().ok_or_else(|| {
            CliError::BadInput(format!("residual: kind {:?} needs `components`", self.kind))
        })?;
        build_field(dim, &vec![valence; rank], weight, components)
    }

    fn scalar_residual_field(&self, dim: usize, weight: f64) -> Result<FieldJet, CliError> {
        if self.components.is_some() || self.rank.is_some() {
            return Err(CliError::BadInput(format!(
                "residual: kind {:?} takes only `scalar`",
                self.kind
            )));
        }
        let scalar = self.scalar.as_ref().ok_or_else(|| {
            CliError::BadInput(format!("residual: kind {:?} needs `scalar`", self.kind))
        })?;
        Ok(FieldJet::scalar(dim, weight, scalar)?)
    }
}

/// A zero-locus sweep over a coordinate box.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    /// One of `cky_jet`, `conformal_killing_jet`, `proj_bivector`,
    /// `parallel_cky`, `parallel_bivector`.
    pub predicate: String,
    /// Component expressions for the jet predicates.
    pub components: Option<Vec<String>>,
    /// Seed state for the transported-family predicates.
    pub seed: Option<SeedConfig>,
    /// Grid corners and per-axis cell counts.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub resolution: Vec<usize>,
    /// Accept cells whose norms all fall below this; omitted means a
    /// tolerance is calibrated from the norm variation per cell.
    pub tol: Option<f64>,
}

/// Initial curve state whose tractor seeds a transported family.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    pub x0: Vec<f64>,
    pub u0: Vec<f64>,
    pub a0: Option<Vec<f64>>,
}

impl ScanConfig {
    /// Realise the predicate and grid on the configured chart.
    pub fn build(&self, metric: &Metric) -> Result<(LocusPredicate, ScanGrid), CliError> {
        let dim = metric.dim();
        let predicate = match self.predicate.replace('-', "_").to_lowercase().as_str() {
            "cky_jet" => LocusPredicate::CkyJet {
                k: self.jet_field(dim, &[Valence::Down, Valence::Down], 3.0)?,
            },
            "conformal_killing_jet" => LocusPredicate::ConformalKillingJet {
                k: self.jet_field(dim, &[Valence::Down], 2.0)?,
            },
            "proj_bivector" => LocusPredicate::BivectorValue {
                sigma: self.jet_field(dim, &[Valence::Up, Valence::Up], 0.0)?,
            },
            "parallel_cky" => LocusPredicate::ParallelCky { family: self.cky_family(metric)? },
            "parallel_bivector" => {
                LocusPredicate::ParallelBivector { family: self.bivector_family(metric)? }
            }
            other => Err(CliError::BadInput(format!("scan: unknown predicate {other:?}")))?,
        };
        let grid = build_grid(dim, &self.lo, &self.hi, &self.resolution)?;
        Ok((predicate, grid))
    }

    fn jet_field(&self, dim: usize, valence: &[Valence], weight: f64) -> Result<FieldJet, CliError> {
        if self.seed.is_some() {
            return Err(CliError::BadInput(format!(
                "scan: predicate {:?} takes `components`, not `seed`",
                self.predicate
            )));
        }
        let components = self.components.as_ref().ok_or_else(|| {
            CliError::BadInput(format!("scan: predicate {:?} needs `components`", self.predicate))
        })?;
        build_field(dim, valence, weight, components)
    }

    fn seed(&self) -> Result<&SeedConfig, CliError> {
        if self.components.is_some() {
            return Err(CliError::BadInput(format!(
                "scan: predicate {:?} takes `seed`, not `components`",
                self.predicate
            )));
        }
        self.seed.as_ref().ok_or_else(|| {
            CliError::BadInput(format!("scan: predicate {:?} needs a `seed` table", self.predicate))
        })
    }

    /// Parallel rank-3 conformal cotractor from the conformal circle through
    /// the seed state. The seed velocity is normalised to unit length and
    /// the acceleration projected orthogonal to it before building the
    /// curve tractor, so any non-null seed of the circle works.
    fn cky_family(&self, metric: &Metric) -> Result<ParallelFamily, CliError> {
        let seed = self.seed()?;
        let a0 = seed.a0.as_ref().ok_or_else(|| {
            CliError::BadInput("scan: predicate \"parallel_cky\" needs `seed.a0`".into())
        })?;
        let conn = connection_at(metric, &seed.x0)?;
        let n = metric.dim();
        let q = conn.chr.inner(&seed.u0, &seed.u0);
        if q.abs() < 1e-14 {
            return Err(CliError::BadInput("scan: seed velocity is null or zero".into()));
        }
        let s = if q > 0.0 { 1.0 } else { -1.0 };
        let u: Vec<f64> = seed.u0.iter().map(|v| v / q.abs().sqrt()).collect();
        let ua = conn.chr.inner(&u, a0);
        let a: Vec<f64> = (0..n).map(|i| a0[i] - s * ua * u[i]).collect();
        let nabla = ode_nabla_u_a(&conn, CurveKind::ConformalCircleUnit, &u, &a)?;
        let ws = weighted_state(&conn, &u, &a, &nabla)?;
        let sigma = sigma_conformal(&conn, &ws)?;
        let (h, _) = tractor_metric(&conn)?;
        let nt = sigma.dim();
        let hm = DenseTensor::from_vec(nt, &[Valence::Down, Valence::Down], h)?;
        let mut lowered = sigma;
        for slot in 0..3 {
            lowered = lowered.convert_slot(slot, &hm)?;
        }
        let base = distcurve::bgg::MaskedTractor::fully_known(lowered);
        Ok(ParallelFamily::verified(metric, Structure::Conformal, seed.x0.clone(), base)?)
    }

    /// Parallel rank-2 projective tractor of the geodesic through the seed.
    fn bivector_family(&self, metric: &Metric) -> Result<ParallelFamily, CliError> {
        let seed = self.seed()?;
        if seed.a0.is_some() {
            return Err(CliError::BadInput(
                "scan: predicate \"parallel_bivector\" takes no `seed.a0`".into(),
            ));
        }
        let sigma = sigma_projective(metric.dim(), &seed.u0)?;
        let base = distcurve::bgg::MaskedTractor::fully_known(sigma);
        Ok(ParallelFamily::verified(metric, Structure::Projective, seed.x0.clone(), base)?)
    }
}

/// Override for the structure whose connection transports the curve tractor.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportConfig {
    /// `projective` or `conformal`; the default follows the curve kind.
    pub structure: Option<String>,
}

impl TransportConfig {
    /// Parse the structure override, if any.
    pub fn structure(&self) -> Result<Option<Structure>, CliError> {
        match self.structure.as_deref() {
            None => Ok(None),
            Some("projective") => Ok(Some(Structure::Projective)),
            Some("conformal") => Ok(Some(Structure::Conformal)),
            Some(other) => {
                Err(CliError::BadInput(format!("transport: unknown structure {other:?}")))
            }
        }
    }
}

/// Where and under what names output files are written.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; the `--out` flag takes precedence.
    pub dir: Option<String>,
    /// Stem prepended to every emitted file name; defaults to `run`.
    pub prefix: Option<String>,
}

/// Rank with `dim^rank` components, if any rank up to four matches.
fn infer_rank(dim: usize, len: usize) -> Option<usize> {
    let mut want = dim;
    for rank in 1..=4 {
        if want == len {
            return Some(rank);
        }
        want = want.checked_mul(dim)?;
    }
    None
}

/// Parse component expressions into a field, checking the count.
fn build_field(
    dim: usize,
    valence: &[Valence],
    weight: f64,
    components: &[String],
) -> Result<FieldJet, CliError> {
    let want = dim.pow(valence.len() as u32);
    if components.len() != want {
        return Err(CliError::BadInput(format!(
            "field needs {want} components on a dimension-{dim} chart, got {}",
            components.len()
        )));
    }
    let refs: Vec<&str> = components.iter().map(String::as_str).collect();
    Ok(FieldJet::from_strs(dim, valence, weight, &refs)?)
}

/// Validate grid corners against the chart dimension.
fn build_grid(dim: usize, lo: &[f64], hi: &[f64], resolution: &[usize]) -> Result<ScanGrid, CliError> {
    if lo.len() != dim || hi.len() != dim || resolution.len() != dim {
        return Err(CliError::BadInput(format!(
            "grid needs {dim} entries in `lo`, `hi`, and `resolution`"
        )));
    }
    Ok(ScanGrid::new(lo.to_vec(), hi.to_vec(), resolution.to_vec())?)
}
