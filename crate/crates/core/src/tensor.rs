//! Dense tensor components with valence bookkeeping.
//!
//! Tensors here are small (fibre dimension at most 8, low rank) and stored
//! row-major in a flat buffer, so the operations are plain index loops
//! rather than anything clever. Valence (upper or lower) is tracked per
//! slot; contraction of two slots of the same valence requires an explicit
//! metric, which keeps raising and lowering visible at call sites.

use thiserror::Error;

/// Slot variance of a tensor index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Valence {
    /// Contravariant (vector-like) slot.
    Up,
    /// Covariant (covector-like) slot.
    Down,
}

impl Valence {
    /// The opposite variance.
    #[inline]
    pub fn flipped(self) -> Valence {
        match self {
            Valence::Up => Valence::Down,
            Valence::Down => Valence::Up,
        }
    }
}

/// Largest fibre dimension the dense layout is sized for.
pub const MAX_DIM: usize = 8;
/// Largest rank accepted before buffers stop being "small".
pub const MAX_RANK: usize = 8;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("fibre dimension {0} out of range (1..={MAX_DIM})")]
    BadDim(usize),
    #[error("rank {0} out of range (0..={MAX_RANK})")]
    BadRank(usize),
    #[error("component buffer has length {got}, expected {want}")]
    BadLength { got: usize, want: usize },
    #[error("slot {slot} out of range for rank {rank}")]
    SlotOutOfRange { slot: usize, rank: usize },
    #[error("operands have mismatched shape or valence")]
    ShapeMismatch,
    #[error("slots have mixed valence; supply a metric to contract or (anti)symmetrise them")]
    MixedValence,
    #[error("contraction of same-valence slots requires a metric of the opposite valence pair")]
    MetricValence,
    #[error("metric is degenerate (|det| = {0:.3e} below 1e-12)")]
    DegenerateMetric(f64),
    #[error("symmetry precondition violated: {0}")]
    SymmetryViolation(String),
    #[error("duplicate slot index {0}")]
    DuplicateSlot(usize),
}

/// Dense, row-major tensor of fixed fibre dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dim: usize,
    valence: Vec<Valence>,
    data: Vec<f64>,
}

fn pow_usize(base: usize, exp: usize) -> usize {
    base.pow(exp as u32)
}

impl DenseTensor {
    /// Zero tensor of the given shape.
    pub fn zeros(dim: usize, valence: &[Valence]) -> Result<Self, TensorError> {
        if dim == 0 || dim > MAX_DIM {
            return Err(TensorError::BadDim(dim));
        }
        if valence.len() > MAX_RANK {
            return Err(TensorError::BadRank(valence.len()));
        }
        Ok(DenseTensor {
            dim,
            valence: valence.to_vec(),
            data: vec![0.0; pow_usize(dim, valence.len())],
        })
    }

    /// Rank-0 tensor holding one number.
    pub fn scalar(value: f64) -> Self {
        DenseTensor { dim: 1, valence: Vec::new(), data: vec![value] }
    }

    /// Build from a closure over multi-indices.
    pub fn from_fn(
        dim: usize,
        valence: &[Valence],
        mut f: impl FnMut(&[usize]) -> f64,
    ) -> Result<Self, TensorError> {
        let mut t = Self::zeros(dim, valence)?;
        let rank = valence.len();
        let mut idx = vec![0usize; rank];
        for flat in 0..t.data.len() {
            t.unflatten(flat, &mut idx);
            t.data[flat] = f(&idx);
        }
        Ok(t)
    }

    /// Wrap an existing component buffer (row-major).
    pub fn from_vec(dim: usize, valence: &[Valence], data: Vec<f64>) -> Result<Self, TensorError> {
        let mut t = Self::zeros(dim, valence)?;
        if data.len() != t.data.len() {
            return Err(TensorError::BadLength { got: data.len(), want: t.data.len() });
        }
        t.data = data;
        Ok(t)
    }

    /// Standard basis vector e_i.
    pub fn basis_vector(dim: usize, i: usize, valence: Valence) -> Result<Self, TensorError> {
        let mut t = Self::zeros(dim, &[valence])?;
        t.data[i] = 1.0;
        Ok(t)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.valence.len()
    }

    #[inline]
    pub fn valence(&self) -> &[Valence] {
        &self.valence
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn flatten(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.rank());
        let mut flat = 0;
        for &i in idx {
            debug_assert!(i < self.dim);
            flat = flat * self.dim + i;
        }
        flat
    }

    #[inline]
    fn unflatten(&self, mut flat: usize, idx: &mut [usize]) {
        for k in (0..idx.len()).rev() {
            idx[k] = flat % self.dim;
            flat /= self.dim;
        }
    }

    /// Component at a multi-index.
    #[inline]
    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flatten(idx)]
    }

    /// Set a component at a multi-index.
    #[inline]
    pub fn set(&mut self, idx: &[usize], value: f64) {
        let flat = self.flatten(idx);
        self.data[flat] = value;
    }

    /// Add a value into a component.
    #[inline]
    pub fn add_at(&mut self, idx: &[usize], value: f64) {
        let flat = self.flatten(idx);
        self.data[flat] += value;
    }

    /// Elementwise sum; shapes and valences must match.
    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor, TensorError> {
        if self.dim != other.dim || self.valence != other.valence {
            return Err(TensorError::ShapeMismatch);
        }
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(out)
    }

    /// Elementwise difference.
    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor, TensorError> {
        Ok(self.add(&other.scaled(-1.0))?)
    }

    /// Scalar multiple.
    pub fn scaled(&self, s: f64) -> DenseTensor {
        let mut out = self.clone();
        for a in &mut out.data {
            *a *= s;
        }
        out
    }

    /// Outer (tensor) product.
    pub fn outer(&self, other: &DenseTensor) -> Result<DenseTensor, TensorError> {
        if self.dim != other.dim && self.rank() > 0 && other.rank() > 0 {
            return Err(TensorError::ShapeMismatch);
        }
        let dim = if self.rank() > 0 { self.dim } else { other.dim };
        let mut valence = self.valence.clone();
        valence.extend_from_slice(&other.valence);
        if valence.len() > MAX_RANK {
            return Err(TensorError::BadRank(valence.len()));
        }
        let mut out = DenseTensor::zeros(dim, &valence)?;
        for (i, &a) in self.data.iter().enumerate() {
            for (j, &b) in other.data.iter().enumerate() {
                out.data[i * other.data.len() + j] = a * b;
            }
        }
        Ok(out)
    }

    /// Reorder slots; `perm[k]` is the source slot written to output slot `k`.
    pub fn permuted(&self, perm: &[usize]) -> Result<DenseTensor, TensorError> {
        let rank = self.rank();
        if perm.len() != rank {
            return Err(TensorError::ShapeMismatch);
        }
        let mut seen = vec![false; rank];
        for &p in perm {
            if p >= rank {
                return Err(TensorError::SlotOutOfRange { slot: p, rank });
            }
            if seen[p] {
                return Err(TensorError::DuplicateSlot(p));
            }
            seen[p] = true;
        }
        let valence: Vec<Valence> = perm.iter().map(|&p| self.valence[p]).collect();
        let mut out = DenseTensor::zeros(self.dim, &valence)?;
        let mut src = vec![0usize; rank];
        let mut dst = vec![0usize; rank];
        for flat in 0..self.data.len() {
            self.unflatten(flat, &mut src);
            for k in 0..rank {
                dst[k] = src[perm[k]];
            }
            let pos = out.flatten(&dst);
            out.data[pos] = self.data[flat];
        }
        Ok(out)
    }

    /// Trace over two slots of opposite valence.
    pub fn contract_pair(&self, a: usize, b: usize) -> Result<DenseTensor, TensorError> {
        let rank = self.rank();
        if a >= rank {
            return Err(TensorError::SlotOutOfRange { slot: a, rank });
        }
        if b >= rank {
            return Err(TensorError::SlotOutOfRange { slot: b, rank });
        }
        if a == b {
            return Err(TensorError::DuplicateSlot(a));
        }
        if self.valence[a] == self.valence[b] {
            return Err(TensorError::MixedValence);
        }
        let keep: Vec<usize> = (0..rank).filter(|&k| k != a && k != b).collect();
        let valence: Vec<Valence> = keep.iter().map(|&k| self.valence[k]).collect();
        let mut out = DenseTensor::zeros(self.dim, &valence)?;
        let mut src = vec![0usize; rank];
        let mut dst = vec![0usize; keep.len()];
        for flat in 0..self.data.len() {
            self.unflatten(flat, &mut src);
            if src[a] != src[b] {
                continue;
            }
            for (k, &s) in keep.iter().enumerate() {
                dst[k] = src[s];
            }
            let o = out.flatten(&dst);
            out.data[o] += self.data[flat];
        }
        Ok(out)
    }

    /// Contract slot `sa` of `self` with slot `sb` of `other` (opposite valence).
    pub fn contract_with(
        &self,
        sa: usize,
        other: &DenseTensor,
        sb: usize,
    ) -> Result<DenseTensor, TensorError> {
        let joined = self.outer(other)?;
        joined.contract_pair(sa, self.rank() + sb)
    }

    /// Lower or raise slot `s` using a rank-2 metric of uniform valence.
    ///
    /// The metric's valence must be opposite to the slot being converted
    /// (g with two Down slots lowers an Up slot, the inverse metric raises).
    pub fn convert_slot(&self, s: usize, metric: &DenseTensor) -> Result<DenseTensor, TensorError> {
        if metric.rank() != 2 || metric.valence[0] != metric.valence[1] {
            return Err(TensorError::MetricValence);
        }
        if s >= self.rank() {
            return Err(TensorError::SlotOutOfRange { slot: s, rank: self.rank() });
        }
        if metric.valence[0] == self.valence[s] {
            return Err(TensorError::MetricValence);
        }
        let moved = self.contract_with(s, metric, 0)?;
        // The contracted slot re-enters at the end; rotate it back into place.
        let rank = moved.rank();
        let mut perm: Vec<usize> = Vec::with_capacity(rank);
        for k in 0..rank {
            if k < s {
                perm.push(k);
            } else if k == s {
                perm.push(rank - 1);
            } else {
                perm.push(k - 1);
            }
        }
        moved.permuted(&perm)
    }

    /// Full contraction of two tensors of equal rank, slot by slot.
    ///
    /// Valences must be pairwise opposite (dual pairing); use metric
    /// conversions first when they are not.
    pub fn pair_full(&self, other: &DenseTensor) -> Result<f64, TensorError> {
        if self.dim != other.dim || self.rank() != other.rank() {
            return Err(TensorError::ShapeMismatch);
        }
        for k in 0..self.rank() {
            if self.valence[k] == other.valence[k] {
                return Err(TensorError::MixedValence);
            }
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    fn sym_core(&self, slots: &[usize], signed: bool) -> Result<DenseTensor, TensorError> {
        let rank = self.rank();
        for &s in slots {
            if s >= rank {
                return Err(TensorError::SlotOutOfRange { slot: s, rank });
            }
        }
        let mut seen = vec![false; rank];
        for &s in slots {
            if seen[s] {
                return Err(TensorError::DuplicateSlot(s));
            }
            seen[s] = true;
        }
        let v0 = self.valence[slots[0]];
        if slots.iter().any(|&s| self.valence[s] != v0) {
            return Err(TensorError::MixedValence);
        }
        let perms = permutations(slots.len());
        let weight = 1.0 / perms.len() as f64;
        let mut out = DenseTensor::zeros(self.dim, &self.valence)?;
        let mut src = vec![0usize; rank];
        let mut dst = vec![0usize; rank];
        for flat in 0..self.data.len() {
            self.unflatten(flat, &mut src);
            let mut acc = 0.0;
            for (perm, sign) in &perms {
                dst.copy_from_slice(&src);
                for (k, &p) in perm.iter().enumerate() {
                    dst[slots[k]] = src[slots[p]];
                }
                let term = self.data[self.flatten(&dst)];
                acc += if signed { *sign * term } else { term };
            }
            out.data[flat] = acc * weight;
        }
        Ok(out)
    }

    /// Unweighted average over permutations of the given slots.
    pub fn symmetrized(&self, slots: &[usize]) -> Result<DenseTensor, TensorError> {
        self.sym_core(slots, false)
    }

    /// Signed average over permutations of the given slots.
    pub fn antisymmetrized(&self, slots: &[usize]) -> Result<DenseTensor, TensorError> {
        self.sym_core(slots, true)
    }

    /// Frobenius norm of the component buffer.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, a| m.max(a.abs()))
    }

    /// Check whether a metric matrix is usable, returning its determinant.
    pub fn require_nondegenerate(metric: &DenseTensor) -> Result<f64, TensorError> {
        let n = metric.dim;
        if metric.rank() != 2 {
            return Err(TensorError::ShapeMismatch);
        }
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| metric.get(&[i, j]));
        let det = m.determinant();
        if det.abs() < 1e-12 {
            return Err(TensorError::DegenerateMetric(det.abs()));
        }
        Ok(det)
    }

    /// Remove the metric trace of a symmetric rank-2 tensor.
    ///
    /// Both `g` and `g_inv` carry plain components (g with two Down slots,
    /// g_inv with two Up slots); the output is `t - (tr t / n) g`.
    pub fn tracefree_sym2(
        &self,
        g: &DenseTensor,
        g_inv: &DenseTensor,
    ) -> Result<DenseTensor, TensorError> {
        if self.rank() != 2 || self.valence[0] != self.valence[1] {
            return Err(TensorError::ShapeMismatch);
        }
        DenseTensor::require_nondegenerate(g)?;
        let n = self.dim as f64;
        let dual = if self.valence[0] == Valence::Down { g_inv } else { g };
        let carrier = if self.valence[0] == Valence::Down { g } else { g_inv };
        if dual.valence[0] == self.valence[0] {
            return Err(TensorError::MetricValence);
        }
        let mut tr = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                tr += dual.get(&[i, j]) * self.get(&[i, j]);
            }
        }
        self.sub(&carrier.scaled(tr / n))
    }
}

/// All permutations of 0..k with parity, in a deterministic order.
pub fn permutations(k: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    let mut used = vec![false; k];
    build_permutations(k, &mut cur, &mut used, &mut out);
    out
}

fn build_permutations(
    k: usize,
    cur: &mut Vec<usize>,
    used: &mut [bool],
    out: &mut Vec<(Vec<usize>, f64)>,
) {
    if cur.len() == k {
        let inversions = (0..k)
            .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
            .filter(|&(i, j)| cur[i] > cur[j])
            .count();
        let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
        out.push((cur.clone(), sign));
        return;
    }
    for v in 0..k {
        if !used[v] {
            used[v] = true;
            cur.push(v);
            build_permutations(k, cur, used, out);
            cur.pop();
            used[v] = false;
        }
    }
}
