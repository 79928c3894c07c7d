//! Overdetermined-equation residuals and tractor splitting operators.
//!
//! The solutions of a handful of overdetermined linear equations on a chart
//! (Killing and conformal Killing tensors, conformal Killing 2-forms, the
//! projective and conformal third-order scalar equations, weighted
//! projective bivectors) are exactly the fields whose images under a
//! splitting operator are parallel for the relevant tractor connection.
//! This module provides both sides of that dictionary for expression-backed
//! fields:
//!
//! - [`FieldJet`] evaluates a tensor field and its covariant derivatives to
//!   third order at a point, by jet arithmetic on the component expressions.
//! - `residual_*` functions measure how far a field is from solving one of
//!   the equations (max-norm of the defining differential operator).
//! - `l_*` functions build the characterising tractor at a point. Some
//!   components of these tractors would need one more derivative order than
//!   the equation data determines; those slots are marked undetermined in a
//!   [`MaskedTractor`] and every consumer either avoids or masks them.
//! - [`killing_from_tau`] and [`killing_from_parallel_q`] produce the
//!   Killing tensors induced by solutions and by parallel tractors.
//!
//! Weighted fields are always stored trivialised in the scale of the active
//! metric; the `weight` attached to a [`FieldJet`] only drives
//! [`FieldJet::conformal_rescale`].

use thiserror::Error;

use crate::geometry::{
    connection_at, point_derivatives, ChristoffelData, Expr, Func, Geometry, Metric, MetricError,
    ParseError,
};
use crate::tensor::{DenseTensor, TensorError, Valence};
use crate::tractor::{slotwise_action, ConnectionMatrices, PathSample, Structure, TractorError};

/// Relative tolerance used when validating declared index symmetries.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Errors from jet evaluation, residual operators and splitting operators.
#[derive(Debug, Error)]
pub enum BggError {
    #[error("point has {got} coordinates, chart has {want}")]
    BadPoint { got: usize, want: usize },
    #[error("derivative order {0} exceeds the supported order 3")]
    JetOrderTooHigh(usize),
    #[error("field evaluation produced a non-finite value")]
    NonFinite,
    #[error("expected {want} components for the declared shape, got {got}")]
    BadComponentCount { got: usize, want: usize },
    #[error("component mentions coordinate x{} but the chart has {dim}", index + 1)]
    CoordOutOfRange { index: usize, dim: usize },
    #[error("operator expects {expected}, field is {got}")]
    WrongShape { expected: String, got: String },
    #[error("operator does not accept rank {0}")]
    BadRank(usize),
    #[error("field value is not symmetric (deviation {0:.3e})")]
    NotSymmetric(f64),
    #[error("field value is not antisymmetric (deviation {0:.3e})")]
    NotAntisymmetric(f64),
    #[error("tractor is not skew in index pair {pair} (deviation {deviation:.3e})")]
    NotPairSkew { pair: usize, deviation: f64 },
    #[error("pairing touches a tractor slot left undetermined by the splitting operator")]
    UnknownSlotTouched,
    #[error("path and field samples must agree and contain at least five uniform steps")]
    BadPath,
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Tractor(#[from] TractorError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Flat offset of a rank-3 index triple in row-major order.
#[inline]
fn i3(n: usize, a: usize, b: usize, c: usize) -> usize {
    (a * n + b) * n + c
}

/// Visit every multi-index of the given rank over `0..dim` in row-major order.
fn each_index(dim: usize, rank: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; rank];
    loop {
        f(&idx);
        let mut k = rank;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < dim {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Christoffel correction coefficient for one slot of a covariant derivative.
///
/// `table` holds a (derivative of a) Christoffel symbol laid out with the
/// upper index first; `off` selects the derivative multi-index. A lower slot
/// carrying component index `comp` contributes `-Gamma^e_{c comp}`, an upper
/// slot `+Gamma^{comp}_{c e}`.
#[inline]
fn chr_weight(table: &[f64], n: usize, off: usize, vk: Valence, comp: usize, c: usize, e: usize) -> f64 {
    match vk {
        Valence::Down => -table[off + i3(n, e, c, comp)],
        Valence::Up => table[off + i3(n, comp, c, e)],
    }
}

/// Metric and inverse metric wrapped as tensors.
fn metric_pair(chr: &ChristoffelData) -> (DenseTensor, DenseTensor) {
    let n = chr.dim;
    let g = DenseTensor::from_vec(n, &[Valence::Down; 2], chr.g.clone()).expect("metric shape");
    let g_inv =
        DenseTensor::from_vec(n, &[Valence::Up; 2], chr.g_inv.clone()).expect("metric shape");
    (g, g_inv)
}

/// Check that a tensor equals its (anti)symmetrisation to working accuracy.
fn check_symmetry(t: &DenseTensor, antisymmetric: bool) -> Result<(), BggError> {
    let slots: Vec<usize> = (0..t.rank()).collect();
    let projected = if antisymmetric {
        t.antisymmetrized(&slots)?
    } else {
        t.symmetrized(&slots)?
    };
    let deviation = t.sub(&projected)?.max_abs();
    if deviation > SYMMETRY_TOLERANCE * t.max_abs().max(1.0) {
        return Err(if antisymmetric {
            BggError::NotAntisymmetric(deviation)
        } else {
            BggError::NotSymmetric(deviation)
        });
    }
    Ok(())
}

/// A tensor field with expression components, evaluable to third-order jets.
///
/// Components are stored in row-major index order. The `weight` records the
/// conformal weight of the field (the power of `e^phi` it picks up under
/// `g -> e^{2 phi} g`) and is only consumed by [`FieldJet::conformal_rescale`];
/// all stored components are the trivialisation in the active scale.
#[derive(Debug, Clone)]
pub struct FieldJet {
    dim: usize,
    valence: Vec<Valence>,
    weight: f64,
    components: Vec<Expr>,
}

impl FieldJet {
    /// Builds a field from parsed component expressions.
    pub fn new(
        dim: usize,
        valence: &[Valence],
        weight: f64,
        components: Vec<Expr>,
    ) -> Result<FieldJet, BggError> {
        let want = dim.pow(valence.len() as u32);
        if components.len() != want {
            return Err(BggError::BadComponentCount {
                got: components.len(),
                want,
            });
        }
        for comp in &components {
            if let Some(i) = comp.max_coord() {
                if i >= dim {
                    return Err(BggError::CoordOutOfRange { index: i, dim });
                }
            }
        }
        Ok(FieldJet {
            dim,
            valence: valence.to_vec(),
            weight,
            components,
        })
    }

    /// Parses component expressions given as strings, in row-major order.
    pub fn from_strs(
        dim: usize,
        valence: &[Valence],
        weight: f64,
        components: &[&str],
    ) -> Result<FieldJet, BggError> {
        let parsed = components
            .iter()
            .map(|s| Expr::parse(s))
            .collect::<Result<Vec<_>, _>>()?;
        FieldJet::new(dim, valence, weight, parsed)
    }

    /// Parses a scalar field from a single expression string.
    pub fn scalar(dim: usize, weight: f64, source: &str) -> Result<FieldJet, BggError> {
        FieldJet::from_strs(dim, &[], weight, &[source])
    }

    /// Chart dimension.
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of tensor slots.
    #[inline]
    pub fn rank(&self) -> usize {
        self.valence.len()
    }

    /// Slot valences.
    #[inline]
    pub fn valence(&self) -> &[Valence] {
        &self.valence
    }

    /// Conformal weight of the field.
    #[inline]
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Value of the field at a point.
    pub fn value_at(&self, x: &[f64]) -> Result<DenseTensor, BggError> {
        Ok(self.partials_at(x, 0)?.remove(0))
    }

    /// Coordinate partial derivatives `[T, dT, ddT, ...]` up to `order`.
    ///
    /// Level `k` has `k` extra leading lower slots holding the derivative
    /// directions, outermost first.
    pub fn partials_at(&self, x: &[f64], order: usize) -> Result<Vec<DenseTensor>, BggError> {
        if x.len() != self.dim {
            return Err(BggError::BadPoint {
                got: x.len(),
                want: self.dim,
            });
        }
        if order > 3 {
            return Err(BggError::JetOrderTooHigh(order));
        }
        let n = self.dim;
        let pd = point_derivatives(n, self.components.len(), order, x, |seeds, out| {
            for (slot, comp) in out.iter_mut().zip(&self.components) {
                *slot = comp.eval(seeds);
            }
        });
        let mut levels = Vec::with_capacity(order + 1);
        for k in 0..=order {
            let mut valence = vec![Valence::Down; k];
            valence.extend_from_slice(&self.valence);
            let t = DenseTensor::from_fn(n, &valence, |idx| {
                let lead = &idx[..k];
                let out = idx[k..].iter().fold(0, |acc, &i| acc * n + i);
                match k {
                    0 => pd.value_of(out),
                    1 => pd.grad_of(out, lead[0]),
                    2 => pd.hess_of(out, lead[0], lead[1]),
                    3 => pd.third_of(out, lead[0], lead[1], lead[2]),
                    _ => unreachable!("order is capped at 3"),
                }
            })?;
            if t.data().iter().any(|v| !v.is_finite()) {
                return Err(BggError::NonFinite);
            }
            levels.push(t);
        }
        Ok(levels)
    }

    /// Covariant derivatives `[T, nabla T, nabla^2 T, ...]` up to `order`.
    ///
    /// Uses the Levi-Civita connection of the geometry snapshot; level `k`
    /// has `k` extra leading lower slots, outermost derivative first.
    pub fn covariant_jet(&self, geom: &Geometry, order: usize) -> Result<Vec<DenseTensor>, BggError> {
        if geom.dim() != self.dim {
            return Err(BggError::BadPoint {
                got: geom.dim(),
                want: self.dim,
            });
        }
        let mut partials = self.partials_at(geom.x(), order)?;
        let mut jets = vec![partials[0].clone()];
        let mut valence = self.valence.clone();
        while partials.len() > 1 {
            partials = covariant_once(geom, &valence, &partials)?;
            valence.insert(0, Valence::Down);
            jets.push(partials[0].clone());
        }
        Ok(jets)
    }

    /// The same field trivialised in the scale `e^{2 phi} g`.
    ///
    /// Multiplies every component by `e^{w phi}` where `w` is the stored
    /// conformal weight; the weight itself is unchanged.
    pub fn conformal_rescale(&self, phi: &Expr) -> FieldJet {
        if self.weight == 0.0 {
            return self.clone();
        }
        let factor = Expr::call(Func::Exp, Expr::mul(Expr::Const(self.weight), phi.clone()));
        FieldJet {
            dim: self.dim,
            valence: self.valence.clone(),
            weight: self.weight,
            components: self
                .components
                .iter()
                .map(|c| Expr::mul(c.clone(), factor.clone()))
                .collect(),
        }
    }

    /// Fails unless the field has the stated rank with every slot `valence`.
    fn expect_shape(&self, rank: usize, valence: Valence) -> Result<(), BggError> {
        if self.rank() != rank || self.valence.iter().any(|&v| v != valence) {
            return Err(BggError::WrongShape {
                expected: format!("rank {rank} with all slots {valence:?}"),
                got: format!("rank {} with valence {:?}", self.rank(), self.valence),
            });
        }
        Ok(())
    }
}

/// One covariant-derivative step on a stack of coordinate partials.
///
/// Input level `j` holds the raw coordinate partials of order `j` of the
/// field (leading derivative slots outermost first); the output stack holds
/// the coordinate partials of the components of `nabla T`, one level
/// shorter. Iterating this and keeping level zero yields covariant
/// derivatives: the product rule for the Christoffel corrections is written
/// out explicitly per level, using the stored first and second Christoffel
/// derivatives.
fn covariant_once(
    geom: &Geometry,
    valence: &[Valence],
    partials: &[DenseTensor],
) -> Result<Vec<DenseTensor>, BggError> {
    let n = geom.dim();
    let r = valence.len();
    let levels = partials.len();
    if !(2..=4).contains(&levels) {
        return Err(BggError::JetOrderTooHigh(levels.saturating_sub(1)));
    }
    let gamma = &geom.conn.chr.gamma;
    let dgamma = &geom.conn.dgamma;
    let d2gamma = &geom.d2gamma;
    let n3 = n * n * n;
    let mut out = Vec::with_capacity(levels - 1);
    for j in 0..levels - 1 {
        let mut q = partials[j + 1].clone();
        let mut fi = vec![0usize; r];
        let mut fi1 = vec![0usize; r + 1];
        let mut fi2 = vec![0usize; r + 2];
        each_index(n, j + 1 + r, |idx| {
            let lead = &idx[..j];
            let c = idx[j];
            let field = &idx[j + 1..];
            let mut acc = 0.0;
            for k in 0..r {
                let vk = valence[k];
                let comp = field[k];
                for e in 0..n {
                    fi.copy_from_slice(field);
                    fi[k] = e;
                    match j {
                        0 => {
                            acc += chr_weight(gamma, n, 0, vk, comp, c, e) * partials[0].get(&fi);
                        }
                        1 => {
                            let d = lead[0];
                            fi1[0] = d;
                            fi1[1..].copy_from_slice(&fi);
                            acc += chr_weight(dgamma, n, d * n3, vk, comp, c, e)
                                * partials[0].get(&fi)
                                + chr_weight(gamma, n, 0, vk, comp, c, e) * partials[1].get(&fi1);
                        }
                        2 => {
                            let (d1, d2) = (lead[0], lead[1]);
                            fi1[1..].copy_from_slice(&fi);
                            fi1[0] = d2;
                            let p1_d2 = partials[1].get(&fi1);
                            fi1[0] = d1;
                            let p1_d1 = partials[1].get(&fi1);
                            fi2[0] = d1;
                            fi2[1] = d2;
                            fi2[2..].copy_from_slice(&fi);
                            acc += chr_weight(d2gamma, n, (d1 * n + d2) * n3, vk, comp, c, e)
                                * partials[0].get(&fi)
                                + chr_weight(dgamma, n, d1 * n3, vk, comp, c, e) * p1_d2
                                + chr_weight(dgamma, n, d2 * n3, vk, comp, c, e) * p1_d1
                                + chr_weight(gamma, n, 0, vk, comp, c, e) * partials[2].get(&fi2);
                        }
                        _ => unreachable!("levels are capped at 4"),
                    }
                }
            }
            if acc != 0.0 {
                q.add_at(idx, acc);
            }
        });
        out.push(q);
    }
    Ok(out)
}

/// Requires a stored conformal weight on a field.
///
/// The rescale-covariant operators only transform correctly when their input
/// carries its natural weight, and a wrong weight is invisible pointwise: it
/// surfaces only as broken covariance after a rescale. Rejecting it at the
/// door keeps that failure mode impossible.
fn expect_weight(field: &FieldJet, weight: f64) -> Result<(), BggError> {
    if field.weight() != weight {
        return Err(BggError::WrongShape {
            expected: format!("conformal weight {weight}"),
            got: format!("conformal weight {}", field.weight()),
        });
    }
    Ok(())
}

/// Max-norm of the Killing operator `nabla_(c k_{a..b})` given the gradient.
pub fn residual_killing_grad(grad: &DenseTensor) -> Result<f64, BggError> {
    let slots: Vec<usize> = (0..grad.rank()).collect();
    Ok(grad.symmetrized(&slots)?.max_abs())
}

/// Max-norm of the Killing operator for a symmetric lower-index field.
pub fn residual_killing(geom: &Geometry, field: &FieldJet) -> Result<f64, BggError> {
    if field.rank() == 0 || field.valence().iter().any(|&v| v != Valence::Down) {
        return Err(BggError::WrongShape {
            expected: "rank >= 1 with all slots Down".to_string(),
            got: format!("rank {} with valence {:?}", field.rank(), field.valence()),
        });
    }
    let jets = field.covariant_jet(geom, 1)?;
    if field.rank() >= 2 {
        check_symmetry(&jets[0], false)?;
    }
    residual_killing_grad(&jets[1])
}

/// Trace-free part of a fully symmetric rank-3 lower-index tensor.
pub fn tracefree_sym3(
    t: &DenseTensor,
    g: &DenseTensor,
    g_inv: &DenseTensor,
) -> Result<DenseTensor, BggError> {
    let n = t.dim();
    let mut trace = DenseTensor::zeros(n, &[Valence::Down])?;
    for c in 0..n {
        let mut acc = 0.0;
        for a in 0..n {
            for b in 0..n {
                acc += g_inv.get(&[a, b]) * t.get(&[a, b, c]);
            }
        }
        trace.set(&[c], acc);
    }
    let pure = g.outer(&trace)?.symmetrized(&[0, 1, 2])?;
    Ok(t.sub(&pure.scaled(3.0 / (n as f64 + 2.0)))?)
}

/// Max-norm of the conformal Killing operator given the gradient.
pub fn residual_conformal_killing_grad(
    chr: &ChristoffelData,
    grad: &DenseTensor,
) -> Result<f64, BggError> {
    let (g, g_inv) = metric_pair(chr);
    let slots: Vec<usize> = (0..grad.rank()).collect();
    let sym = grad.symmetrized(&slots)?;
    match grad.rank() {
        2 => Ok(sym.tracefree_sym2(&g, &g_inv)?.max_abs()),
        3 => Ok(tracefree_sym3(&sym, &g, &g_inv)?.max_abs()),
        r => Err(BggError::BadRank(r)),
    }
}

/// Max-norm of the conformal Killing operator, the trace-free part of
/// `nabla_(c k_{a..b})`, for a symmetric lower-index field of rank 1 or 2.
///
/// The field must carry its natural conformal weight of two per slot, the
/// weight at which the operator is rescale-covariant.
pub fn residual_conformal_killing(geom: &Geometry, field: &FieldJet) -> Result<f64, BggError> {
    if field.valence().iter().any(|&v| v != Valence::Down) {
        return Err(BggError::WrongShape {
            expected: "all slots Down".to_string(),
            got: format!("valence {:?}", field.valence()),
        });
    }
    expect_weight(field, 2.0 * field.rank() as f64)?;
    let jets = field.covariant_jet(geom, 1)?;
    if field.rank() == 2 {
        check_symmetry(&jets[0], false)?;
    }
    residual_conformal_killing_grad(&geom.conn.chr, &jets[1])
}

/// Divergence `divk_c = g^{pa} (nabla_p k)_{ac}` of a 2-form gradient.
pub(crate) fn two_form_divergence(chr: &ChristoffelData, grad: &DenseTensor) -> Vec<f64> {
    let n = chr.dim;
    let mut divk = vec![0.0; n];
    for c in 0..n {
        for p in 0..n {
            for a in 0..n {
                divk[c] += chr.g_inv[p * n + a] * grad.get(&[p, a, c]);
            }
        }
    }
    divk
}

/// Max-norm of the conformal Killing-Yano operator given the gradient.
///
/// The operator removes from `nabla_a k_{bc}` its fully antisymmetric part
/// and its divergence trace part; `strict` keeps the trace part in the
/// residual, which detects Killing-Yano forms rather than conformal ones.
pub fn residual_cky2_grad(
    chr: &ChristoffelData,
    grad: &DenseTensor,
    strict: bool,
) -> Result<f64, BggError> {
    let n = chr.dim;
    let alt = grad.antisymmetrized(&[0, 1, 2])?;
    let mut res = grad.sub(&alt)?;
    if strict {
        return Ok(res.max_abs());
    }
    let divk = two_form_divergence(chr, grad);
    let coeff = 1.0 / (n as f64 - 1.0);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                let trace = coeff * (chr.g[a * n + b] * divk[c] - chr.g[a * n + c] * divk[b]);
                if trace != 0.0 {
                    res.add_at(&[a, b, c], -trace);
                }
            }
        }
    }
    Ok(res.max_abs())
}

/// Max-norm of the conformal Killing-Yano operator on a 2-form field.
///
/// The 2-form must carry conformal weight three, its natural weight.
pub fn residual_cky2(geom: &Geometry, field: &FieldJet, strict: bool) -> Result<f64, BggError> {
    field.expect_shape(2, Valence::Down)?;
    expect_weight(field, 3.0)?;
    let jets = field.covariant_jet(geom, 1)?;
    check_symmetry(&jets[0], true)?;
    residual_cky2_grad(&geom.conn.chr, &jets[1], strict)
}

/// Symmetrised third-order projective operator applied to a scalar jet.
///
/// `jets` must be a covariant jet of a scalar to order 3. The result is
/// `sym(nabla^3 tau + 4 P nabla tau + 2 tau nabla P)` with the projective
/// Schouten tensor; solutions of the third-order projective equation are its
/// zeros.
pub fn bgg3_projective_tensor(geom: &Geometry, jets: &[DenseTensor]) -> Result<DenseTensor, BggError> {
    if jets.len() < 4 {
        return Err(BggError::JetOrderTooHigh(jets.len().saturating_sub(1)));
    }
    let n = geom.dim();
    let tau = jets[0].get(&[]);
    let p = DenseTensor::from_vec(n, &[Valence::Down; 2], geom.proj.schouten.clone())?;
    let covp = DenseTensor::from_vec(n, &[Valence::Down; 3], geom.proj.cov_schouten.clone())?;
    let combo = jets[3]
        .add(&p.outer(&jets[1])?.scaled(4.0))?
        .add(&covp.scaled(2.0 * tau))?;
    Ok(combo.symmetrized(&[0, 1, 2])?)
}

/// Max-norm of the third-order projective operator on a scalar field.
pub fn residual_bgg3_projective(geom: &Geometry, tau: &FieldJet) -> Result<f64, BggError> {
    tau.expect_shape(0, Valence::Down)?;
    let jets = tau.covariant_jet(geom, 3)?;
    Ok(bgg3_projective_tensor(geom, &jets)?.max_abs())
}

/// Symmetrised trace-free third-order conformal operator on a scalar jet.
///
/// `jets` must be the covariant jet of a weight-two scalar density; the
/// operator `sym_0(nabla^3 tau + 4 P nabla tau + 2 tau nabla P)` is only
/// rescale-covariant at that weight, which the jet itself cannot record.
pub fn bgg3_conformal_tensor(geom: &Geometry, jets: &[DenseTensor]) -> Result<DenseTensor, BggError> {
    if jets.len() < 4 {
        return Err(BggError::JetOrderTooHigh(jets.len().saturating_sub(1)));
    }
    let conf = geom.conf()?;
    let n = geom.dim();
    let tau = jets[0].get(&[]);
    let p = DenseTensor::from_vec(n, &[Valence::Down; 2], conf.schouten.clone())?;
    let covp = DenseTensor::from_vec(n, &[Valence::Down; 3], conf.cov_schouten.clone())?;
    let combo = jets[3]
        .add(&p.outer(&jets[1])?.scaled(4.0))?
        .add(&covp.scaled(2.0 * tau))?;
    let sym = combo.symmetrized(&[0, 1, 2])?;
    let (g, g_inv) = metric_pair(&geom.conn.chr);
    tracefree_sym3(&sym, &g, &g_inv)
}

/// Max-norm of the third-order conformal operator on a weight-two scalar.
pub fn residual_bgg3_conformal(geom: &Geometry, tau: &FieldJet) -> Result<f64, BggError> {
    tau.expect_shape(0, Valence::Down)?;
    expect_weight(tau, 2.0)?;
    let jets = tau.covariant_jet(geom, 3)?;
    Ok(bgg3_conformal_tensor(geom, &jets)?.max_abs())
}

/// Divergence part `tau^a = nabla_b sigma^{ba} / (n - 1)` of a bivector
/// gradient laid out as `grad[c][a][b] = nabla_c sigma^{ab}`.
fn bivector_divergence(grad: &DenseTensor, n: usize) -> Vec<f64> {
    let coeff = 1.0 / (n as f64 - 1.0);
    (0..n)
        .map(|a| coeff * (0..n).map(|b| grad.get(&[b, b, a])).sum::<f64>())
        .collect()
}

/// Max-norm of the projective bivector operator
/// `nabla_c sigma^{ab} - delta^a_c tau^b + delta^b_c tau^a` on an
/// antisymmetric upper-index field.
pub fn residual_proj_bivector(geom: &Geometry, sigma: &FieldJet) -> Result<f64, BggError> {
    sigma.expect_shape(2, Valence::Up)?;
    let jets = sigma.covariant_jet(geom, 1)?;
    check_symmetry(&jets[0], true)?;
    let n = geom.dim();
    let tau = bivector_divergence(&jets[1], n);
    let mut res = jets[1].clone();
    for c in 0..n {
        for a in 0..n {
            for b in 0..n {
                let mut v = 0.0;
                if c == a {
                    v += tau[b];
                }
                if c == b {
                    v -= tau[a];
                }
                if v != 0.0 {
                    res.add_at(&[c, a, b], -v);
                }
            }
        }
    }
    Ok(res.max_abs())
}

/// A tractor tensor together with a per-component undetermined mask.
///
/// Splitting operators that would need one derivative order more than the
/// equation data supplies mark the affected components as unknown; the
/// stored value there is zero. Pairings and transport residuals must never
/// read an unknown component against a nonzero cofactor.
#[derive(Debug, Clone)]
pub struct MaskedTractor {
    /// Component values, with zeros in undetermined slots.
    pub tensor: DenseTensor,
    /// Row-major flags, `true` where the component is undetermined.
    pub unknown: Vec<bool>,
}

impl MaskedTractor {
    /// Wraps a fully determined tensor.
    pub fn fully_known(tensor: DenseTensor) -> MaskedTractor {
        let unknown = vec![false; tensor.data().len()];
        MaskedTractor { tensor, unknown }
    }

    /// Whether any component is undetermined.
    pub fn has_unknown(&self) -> bool {
        self.unknown.iter().any(|&u| u)
    }

    /// Full pairing with a tensor of opposite valences.
    ///
    /// Fails if any undetermined component would multiply a nonzero
    /// cofactor; otherwise the unknown slots contribute exactly zero.
    pub fn pair_full_guarded(&self, other: &DenseTensor) -> Result<f64, BggError> {
        if other.data().len() == self.unknown.len() {
            for (i, &unknown) in self.unknown.iter().enumerate() {
                if unknown && other.data()[i] != 0.0 {
                    return Err(BggError::UnknownSlotTouched);
                }
            }
        }
        Ok(self.tensor.pair_full(other)?)
    }
}

/// Splitting operator for the third-order projective equation.
///
/// Maps a scalar to the symmetric rank-2 cotractor
/// `H = [tau; nabla tau / 2; nabla^2 tau / 2 + P tau]`; `H` is parallel for
/// the projective tractor connection exactly when the scalar solves the
/// equation. Every component is determined by the second jet.
pub fn l_tau_projective(geom: &Geometry, tau: &FieldJet) -> Result<DenseTensor, BggError> {
    tau.expect_shape(0, Valence::Down)?;
    let n = geom.dim();
    let nt = n + 1;
    let jets = tau.covariant_jet(geom, 2)?;
    let t = jets[0].get(&[]);
    let p = &geom.proj.schouten;
    let mut h = DenseTensor::zeros(nt, &[Valence::Down; 2])?;
    h.set(&[n, n], t);
    for b in 0..n {
        let v = 0.5 * jets[1].get(&[b]);
        h.set(&[n, b], v);
        h.set(&[b, n], v);
    }
    for a in 0..n {
        for b in 0..n {
            h.set(&[a, b], 0.5 * jets[2].get(&[a, b]) + p[a * n + b] * t);
        }
    }
    Ok(h)
}

/// The same splitting computed by iterating the invariant derivative.
///
/// First application: the scalar of weight two goes to the cotractor
/// `V = [nabla tau; 2 tau]`. Second: `H = D V / 2` where `D` on the
/// weight-one cotractor pairs its value into the scale slot and its tractor
/// covariant derivative into the form slots. Agreement with
/// [`l_tau_projective`] is an end-to-end check of the connection matrices.
pub fn l_tau_projective_via_thomas_d(
    geom: &Geometry,
    tau: &FieldJet,
) -> Result<DenseTensor, BggError> {
    tau.expect_shape(0, Valence::Down)?;
    let n = geom.dim();
    let nt = n + 1;
    let parts = tau.partials_at(geom.x(), 2)?;
    let mut v = vec![0.0; nt];
    for b in 0..n {
        v[b] = parts[1].get(&[b]);
    }
    v[n] = 2.0 * parts[0].get(&[]);
    let mut dv = vec![0.0; n * nt];
    for a in 0..n {
        for b in 0..n {
            dv[a * nt + b] = parts[2].get(&[a, b]);
        }
        dv[a * nt + n] = 2.0 * parts[1].get(&[a]);
    }
    let mats = ConnectionMatrices::new(&geom.conn, Structure::Projective)?;
    let mut h = DenseTensor::zeros(nt, &[Valence::Down; 2])?;
    for i in 0..nt {
        h.set(&[n, i], 0.5 * v[i]);
    }
    for a in 0..n {
        let m = mats.matrix(a);
        for i in 0..nt {
            let mut nab = dv[a * nt + i];
            for k in 0..nt {
                nab -= m[k * nt + i] * v[k];
            }
            h.set(&[a, i], 0.5 * nab);
        }
    }
    Ok(h)
}

/// Splitting operator for the third-order conformal equation.
///
/// Builds the symmetric rank-2 cotractor whose parallelism characterises
/// solutions. The scalar must be a weight-two density: the primary slot of a
/// rank-2 cotractor carries weight two, so only that weight makes the
/// construction rescale-covariant. With `q = laplacian(tau) + 2 J tau`, the
/// slots are: scale-scale `tau`, scale-form `nabla tau / 2`, form-form
/// `(nabla^2 tau + 2 P tau - g q / (n + 2)) / 2`, null-scale
/// `-q / (2 (n + 2))`, null-form
/// `-(nabla q / (n + 2) + P(nabla tau, .)) / 2`. The null-null component
/// needs a fourth derivative and is left undetermined; its mask keeps every
/// consumer honest. The known slots are trace-free against the tractor
/// metric.
pub fn l_tau_conformal(geom: &Geometry, tau: &FieldJet) -> Result<MaskedTractor, BggError> {
    tau.expect_shape(0, Valence::Down)?;
    expect_weight(tau, 2.0)?;
    let conf = geom.conf()?;
    let n = geom.dim();
    let nf = n as f64;
    let nt = n + 2;
    let y = n + 1;
    let jets = tau.covariant_jet(geom, 3)?;
    let t = jets[0].get(&[]);
    let chr = &geom.conn.chr;
    let mut lap = 0.0;
    for c in 0..n {
        for d in 0..n {
            lap += chr.g_inv[c * n + d] * jets[2].get(&[c, d]);
        }
    }
    let q = lap + 2.0 * conf.j * t;
    let mut h = DenseTensor::zeros(nt, &[Valence::Down; 2])?;
    h.set(&[y, y], t);
    for b in 0..n {
        let v = 0.5 * jets[1].get(&[b]);
        h.set(&[y, 1 + b], v);
        h.set(&[1 + b, y], v);
    }
    let q_share = q / (nf + 2.0);
    for a in 0..n {
        for b in 0..n {
            let v = 0.5
                * (jets[2].get(&[a, b]) + 2.0 * conf.schouten[a * n + b] * t
                    - chr.g[a * n + b] * q_share);
            h.set(&[1 + a, 1 + b], v);
        }
    }
    h.set(&[0, y], -0.5 * q_share);
    h.set(&[y, 0], -0.5 * q_share);
    for b in 0..n {
        let mut dq = 2.0 * conf.dj[b] * t + 2.0 * conf.j * jets[1].get(&[b]);
        for c in 0..n {
            for d in 0..n {
                dq += chr.g_inv[c * n + d] * jets[3].get(&[b, c, d]);
            }
        }
        let mut p_grad = 0.0;
        for r in 0..n {
            for s in 0..n {
                p_grad += conf.schouten[b * n + s] * chr.g_inv[s * n + r] * jets[1].get(&[r]);
            }
        }
        let v = -0.5 * (dq / (nf + 2.0) + p_grad);
        h.set(&[0, 1 + b], v);
        h.set(&[1 + b, 0], v);
    }
    let mut unknown = vec![false; nt * nt];
    unknown[0] = true;
    Ok(MaskedTractor { tensor: h, unknown })
}

/// Splitting operator for conformal Killing-Yano 2-forms.
///
/// Antisymmetrises the three-slot cotractor with blocks `k` (scale-form-form),
/// `nabla k` (form-form-form) and `2 divk / (n - 1)` (null-scale-form); the
/// null-form-form components need second derivatives and stay undetermined.
/// The 2-form must carry its natural conformal weight three. It is recovered
/// from the result by [`cky2_from_tractor`].
pub fn l_cky2(geom: &Geometry, field: &FieldJet) -> Result<MaskedTractor, BggError> {
    field.expect_shape(2, Valence::Down)?;
    expect_weight(field, 3.0)?;
    geom.conf()?;
    let n = geom.dim();
    let nt = n + 2;
    let y = n + 1;
    let jets = field.covariant_jet(geom, 1)?;
    check_symmetry(&jets[0], true)?;
    let divk = two_form_divergence(&geom.conn.chr, &jets[1]);
    let mut t = DenseTensor::zeros(nt, &[Valence::Down; 3])?;
    for b in 0..n {
        for c in 0..n {
            t.set(&[y, 1 + b, 1 + c], jets[0].get(&[b, c]));
        }
    }
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                t.set(&[1 + a, 1 + b, 1 + c], jets[1].get(&[a, b, c]));
            }
        }
    }
    let f = 2.0 / (n as f64 - 1.0);
    for c in 0..n {
        t.set(&[0, y, 1 + c], f * divk[c]);
    }
    let kk = t.antisymmetrized(&[0, 1, 2])?;
    let mut unknown = vec![false; nt * nt * nt];
    for b in 0..n {
        for c in 0..n {
            if b == c {
                continue;
            }
            unknown[i3(nt, 0, 1 + b, 1 + c)] = true;
            unknown[i3(nt, 1 + b, 0, 1 + c)] = true;
            unknown[i3(nt, 1 + b, 1 + c, 0)] = true;
        }
    }
    Ok(MaskedTractor { tensor: kk, unknown })
}

/// Reads the 2-form back off a rank-3 cotractor built like [`l_cky2`].
pub fn cky2_from_tractor(kk: &DenseTensor) -> Result<DenseTensor, BggError> {
    let nt = kk.dim();
    if kk.rank() != 3 || nt < 5 {
        return Err(BggError::WrongShape {
            expected: "rank 3 over a conformal tractor bundle".to_string(),
            got: format!("rank {} dim {}", kk.rank(), nt),
        });
    }
    let n = nt - 2;
    let y = n + 1;
    Ok(DenseTensor::from_fn(n, &[Valence::Down; 2], |idx| {
        3.0 * kk.get(&[y, 1 + idx[0], 1 + idx[1]])
    })?)
}

/// Splitting operator for weighted projective bivectors.
///
/// Maps an antisymmetric upper-index field to the antisymmetric rank-2
/// tractor with form-form block `sigma` and scale column
/// `tau^a = nabla_b sigma^{ba} / (n - 1)`; every component is determined by
/// the first jet.
pub fn l_proj_bivector(geom: &Geometry, sigma: &FieldJet) -> Result<DenseTensor, BggError> {
    sigma.expect_shape(2, Valence::Up)?;
    let n = geom.dim();
    let nt = n + 1;
    let jets = sigma.covariant_jet(geom, 1)?;
    check_symmetry(&jets[0], true)?;
    let tau = bivector_divergence(&jets[1], n);
    let mut l = DenseTensor::zeros(nt, &[Valence::Up; 2])?;
    for a in 0..n {
        for b in 0..n {
            l.set(&[a, b], jets[0].get(&[a, b]));
        }
    }
    for (a, &ta) in tau.iter().enumerate() {
        l.set(&[n, a], ta);
        l.set(&[a, n], -ta);
    }
    Ok(l)
}

/// Killing 2-tensor induced by a solution of the third-order projective
/// equation, with its covariant derivative.
///
/// Returns `(k, nabla k)` with
/// `k = tau nabla^2 tau + 2 P tau^2 - (nabla tau)^2 / 2`; when the scalar
/// solves the equation, `nabla_(a k_{bc})` vanishes, and for any scalar it
/// equals `tau` times the symmetrised operator of
/// [`bgg3_projective_tensor`].
pub fn killing_from_tau(
    geom: &Geometry,
    tau: &FieldJet,
) -> Result<(DenseTensor, DenseTensor), BggError> {
    tau.expect_shape(0, Valence::Down)?;
    let n = geom.dim();
    let jets = tau.covariant_jet(geom, 3)?;
    let t = jets[0].get(&[]);
    let p = &geom.proj.schouten;
    let covp = &geom.proj.cov_schouten;
    let k = DenseTensor::from_fn(n, &[Valence::Down; 2], |idx| {
        let (b, c) = (idx[0], idx[1]);
        t * jets[2].get(&[b, c]) + 2.0 * p[b * n + c] * t * t
            - 0.5 * jets[1].get(&[b]) * jets[1].get(&[c])
    })?;
    let dk = DenseTensor::from_fn(n, &[Valence::Down; 3], |idx| {
        let (a, b, c) = (idx[0], idx[1], idx[2]);
        jets[1].get(&[a]) * jets[2].get(&[b, c])
            + t * jets[3].get(&[a, b, c])
            + 2.0 * covp[i3(n, a, b, c)] * t * t
            + 4.0 * p[b * n + c] * t * jets[1].get(&[a])
            - 0.5
                * (jets[2].get(&[a, b]) * jets[1].get(&[c])
                    + jets[1].get(&[b]) * jets[2].get(&[a, c]))
    })?;
    Ok((k, dk))
}

/// One slot-pair term of a canonical bivector: tractor slots and weight.
type PairTerm = (usize, usize, f64);

/// Terms of the canonical up-bivector attached to direction `a`.
fn x_pair_terms(structure: Structure, n: usize, a: usize) -> [PairTerm; 2] {
    match structure {
        Structure::Projective => [(n, a, 1.0), (a, n, -1.0)],
        Structure::Conformal => [(n + 1, 1 + a, 1.0), (1 + a, n + 1, -1.0)],
    }
}

/// Terms of the covariant derivative of the canonical bivector.
fn dx_pair_terms(structure: Structure, chr: &ChristoffelData, c: usize, a: usize) -> Vec<PairTerm> {
    let n = chr.dim;
    match structure {
        Structure::Projective => vec![(c, a, 1.0), (a, c, -1.0)],
        Structure::Conformal => {
            let gca = chr.g[c * n + a];
            vec![
                (1 + c, 1 + a, 1.0),
                (1 + a, 1 + c, -1.0),
                (n + 1, 0, -gca),
                (0, n + 1, gca),
            ]
        }
    }
}

/// Contracts a tractor tensor against one term choice per slot pair.
fn contract_pairs(q: &DenseTensor, term_lists: &[Vec<PairTerm>]) -> f64 {
    let m0 = term_lists.len();
    let mut choice = vec![0usize; m0];
    let mut slots = vec![0usize; 2 * m0];
    let mut acc = 0.0;
    loop {
        let mut coeff = 1.0;
        for (i, &ci) in choice.iter().enumerate() {
            let (s1, s2, w) = term_lists[i][ci];
            slots[2 * i] = s1;
            slots[2 * i + 1] = s2;
            coeff *= w;
        }
        if coeff != 0.0 {
            acc += coeff * q.get(&slots);
        }
        let mut k = m0;
        loop {
            if k == 0 {
                return acc;
            }
            k -= 1;
            choice[k] += 1;
            if choice[k] < term_lists[k].len() {
                break;
            }
            choice[k] = 0;
        }
    }
}

/// Killing tensor induced by a parallel power-of-bivector tractor.
///
/// `q` is the pointwise value of a rank `2 m0` lower tractor, skew in each
/// consecutive index pair (for instance a symmetric power of an adjoint
/// tractor). Pairing every index pair with the canonical bivector of a
/// coordinate direction and symmetrising yields a rank `m0` tensor `k`;
/// when the tractor field is parallel, `k` is a Killing tensor (projective
/// structure) or a conformal Killing tensor up to trace (conformal
/// structure). Returns `(k, nabla k)`, the derivative computed by the
/// product rule through the covariant derivative of the canonical bivector,
/// which is exact when `q` is the value of a parallel field.
pub fn killing_from_parallel_q(
    chr: &ChristoffelData,
    structure: Structure,
    q: &DenseTensor,
) -> Result<(DenseTensor, DenseTensor), BggError> {
    let n = chr.dim;
    let nt = structure.tractor_dim(n);
    if q.dim() != nt || q.rank() == 0 || q.rank() % 2 != 0 {
        return Err(BggError::WrongShape {
            expected: format!("even rank over a tractor bundle of dim {nt}"),
            got: format!("rank {} dim {}", q.rank(), q.dim()),
        });
    }
    if q.valence().iter().any(|&v| v != Valence::Down) {
        return Err(BggError::WrongShape {
            expected: "all slots Down".to_string(),
            got: format!("valence {:?}", q.valence()),
        });
    }
    let m0 = q.rank() / 2;
    for pair in 0..m0 {
        let mut perm: Vec<usize> = (0..2 * m0).collect();
        perm.swap(2 * pair, 2 * pair + 1);
        let deviation = q.add(&q.permuted(&perm)?)?.max_abs();
        if deviation > SYMMETRY_TOLERANCE * q.max_abs().max(1.0) {
            return Err(BggError::NotPairSkew { pair, deviation });
        }
    }
    let k_raw = DenseTensor::from_fn(n, &vec![Valence::Down; m0], |idx| {
        let lists: Vec<Vec<PairTerm>> = idx
            .iter()
            .map(|&a| x_pair_terms(structure, n, a).to_vec())
            .collect();
        contract_pairs(q, &lists)
    })?;
    let all: Vec<usize> = (0..m0).collect();
    let k = k_raw.symmetrized(&all)?;
    let dk_raw = DenseTensor::from_fn(n, &vec![Valence::Down; m0 + 1], |idx| {
        let c = idx[0];
        let dirs = &idx[1..];
        let mut acc = 0.0;
        for i in 0..m0 {
            let lists: Vec<Vec<PairTerm>> = dirs
                .iter()
                .enumerate()
                .map(|(j, &a)| {
                    if j == i {
                        dx_pair_terms(structure, chr, c, a)
                    } else {
                        x_pair_terms(structure, n, a).to_vec()
                    }
                })
                .collect();
            acc += contract_pairs(q, &lists);
        }
        acc
    })?;
    let tail: Vec<usize> = (1..=m0).collect();
    let dk = dk_raw.symmetrized(&tail)?;
    Ok((k, dk))
}

/// Slots reachable from slot `k` through one application of the tractor
/// connection component matrices, for masked derivative bookkeeping.
fn unknown_spread(structure: Structure, n: usize) -> Vec<Vec<usize>> {
    match structure {
        Structure::Projective => (0..n + 1)
            .map(|k| if k < n { (0..n + 1).collect() } else { (0..n).collect() })
            .collect(),
        Structure::Conformal => (0..n + 2)
            .map(|k| {
                if k == 0 || k == n + 1 {
                    (1..=n).collect()
                } else {
                    (0..n + 2).collect()
                }
            })
            .collect(),
    }
}

/// Marks every component whose covariant derivative reads an unknown slot.
fn propagate_mask(
    structure: Structure,
    nt: usize,
    n: usize,
    rank: usize,
    unknown: &[bool],
) -> Vec<bool> {
    let spread = unknown_spread(structure, n);
    let mut out = unknown.to_vec();
    let mut probe = vec![0usize; rank];
    each_index(nt, rank, |idx| {
        let flat = idx.iter().fold(0, |acc, &i| acc * nt + i);
        if out[flat] {
            return;
        }
        'slots: for s in 0..rank {
            probe.copy_from_slice(idx);
            for k in 0..nt {
                probe[s] = k;
                let source = probe.iter().fold(0, |acc, &i| acc * nt + i);
                if unknown[source] && spread[k].contains(&idx[s]) {
                    out[flat] = true;
                    break 'slots;
                }
            }
        }
    });
    out
}

/// Parallel-equation residual along a curve for masked tractor fields.
///
/// Works like the unmasked transport residual (fourth-order central
/// difference plus the connection action at each interior sample) but skips
/// every output component that could receive a contribution from an
/// undetermined input slot, either directly or through the connection
/// action. Returns one max-norm per interior sample.
pub fn masked_parallel_residual(
    metric: &Metric,
    structure: Structure,
    path: &[PathSample],
    fields: &[MaskedTractor],
) -> Result<Vec<f64>, BggError> {
    let n = metric.dim();
    let nt = structure.tractor_dim(n);
    let len = path.len();
    if len < 5 || fields.len() != len {
        return Err(BggError::BadPath);
    }
    let h = path[1].t - path[0].t;
    for w in path.windows(2) {
        if ((w[1].t - w[0].t) - h).abs() > 1e-9 * h.abs().max(1e-12) {
            return Err(BggError::BadPath);
        }
    }
    let size = fields[0].tensor.data().len();
    let rank = fields[0].tensor.rank();
    let mut unknown = vec![false; size];
    for f in fields {
        if f.tensor.dim() != nt || f.tensor.data().len() != size {
            return Err(BggError::BadPath);
        }
        for (slot, &u) in unknown.iter_mut().zip(&f.unknown) {
            *slot |= u;
        }
    }
    let out_mask = propagate_mask(structure, nt, n, rank, &unknown);
    let mut residuals = Vec::with_capacity(len - 4);
    for k in 2..len - 2 {
        let conn = connection_at(metric, &path[k].x)?;
        let a = ConnectionMatrices::new(&conn, structure)?.contracted(&path[k].u);
        let action = slotwise_action(&a, &fields[k].tensor);
        let mut worst = 0.0_f64;
        for i in 0..size {
            if out_mask[i] {
                continue;
            }
            let fd = (fields[k - 2].tensor.data()[i] - 8.0 * fields[k - 1].tensor.data()[i]
                + 8.0 * fields[k + 1].tensor.data()[i]
                - fields[k + 2].tensor.data()[i])
                / (12.0 * h);
            worst = worst.max((fd + action.data()[i]).abs());
        }
        residuals.push(worst);
    }
    Ok(residuals)
}
