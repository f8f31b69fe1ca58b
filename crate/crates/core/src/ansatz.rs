//! Rank-controlled density-matrix parameterizations.
//!
//! * Cholesky (`cd`, `cd-tri`): `ρ = T†T / Tr(T†T)` with `T` of shape `m × d`.
//! * Stiefel (`sm`): `ρ = Σ_α w_α w_α†` where the stacked vector `W = [w_1 … w_m]`
//!   has unit norm, kept on the manifold by a Cayley retraction.
//! * Projective normalization (`pn`): `ρ = Σ_α c_α q_α q_α†` with `c` on the
//!   simplex (softmax) and unit rows `q_α` (norm division).

use std::fmt;
use std::str::FromStr;

use crate::error::{QstError, Result};
use crate::linalg::{CMatrix, CVector, C64, ZERO};
use crate::qstates::DensityMatrix;
use crate::random::{complex_normal, complex_normal_matrix, normal, rng};

/// Smallest admissible `Tr(T†T)` or squared row norm.
pub const DEGENERATE_TOL: f64 = 1e-30;
/// Allowed `|W†W − 1|` before a Stiefel point is rejected.
pub const STIEFEL_REJECT_TOL: f64 = 1e-6;
pub const PN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnsatzKind {
    Cholesky,
    CholeskyTriangular,
    Stiefel,
    ProjectiveNormalization,
}

impl AnsatzKind {
    pub const ALL: [AnsatzKind; 4] = [
        AnsatzKind::Cholesky,
        AnsatzKind::CholeskyTriangular,
        AnsatzKind::Stiefel,
        AnsatzKind::ProjectiveNormalization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnsatzKind::Cholesky => "cd",
            AnsatzKind::CholeskyTriangular => "cd-tri",
            AnsatzKind::Stiefel => "sm",
            AnsatzKind::ProjectiveNormalization => "pn",
        }
    }
}

impl fmt::Display for AnsatzKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnsatzKind {
    type Err = QstError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cd" => Ok(AnsatzKind::Cholesky),
            "cd-tri" | "cdtri" => Ok(AnsatzKind::CholeskyTriangular),
            "sm" => Ok(AnsatzKind::Stiefel),
            "pn" => Ok(AnsatzKind::ProjectiveNormalization),
            other => Err(QstError::invalid(format!("unknown parameterization {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyAnsatz {
    t: CMatrix,
    triangular: bool,
}

impl CholeskyAnsatz {
    pub fn new(t: CMatrix) -> Result<Self> {
        if t.nrows() == 0 || t.nrows() > t.ncols() {
            return Err(QstError::invalid(format!(
                "Cholesky factor must be m x d with 1 <= m <= d, got {} x {}",
                t.nrows(),
                t.ncols()
            )));
        }
        Ok(CholeskyAnsatz { t, triangular: false })
    }

    /// Square factor with everything above the diagonal forced to zero.
    pub fn triangular(t: CMatrix) -> Result<Self> {
        if !t.is_square() || t.nrows() == 0 {
            return Err(QstError::invalid("triangular Cholesky factor must be square"));
        }
        let mut a = CholeskyAnsatz { t, triangular: true };
        a.apply_mask();
        Ok(a)
    }

    pub fn rank(&self) -> usize {
        self.t.nrows()
    }

    pub fn dim(&self) -> usize {
        self.t.ncols()
    }

    pub fn is_triangular(&self) -> bool {
        self.triangular
    }

    pub fn factor(&self) -> &CMatrix {
        &self.t
    }

    pub fn factor_mut(&mut self) -> &mut CMatrix {
        &mut self.t
    }

    /// Re-zeroes the upper triangle for the triangular variant; no-op otherwise.
    pub fn apply_mask(&mut self) {
        if self.triangular {
            let n = self.t.nrows();
            for j in 1..n {
                for i in 0..j {
                    self.t[(i, j)] = ZERO;
                }
            }
        }
    }

    /// `Tr(T†T)`.
    pub fn scale(&self) -> f64 {
        self.t.norm_squared()
    }
}

/// `ρ = T†T / Tr(T†T)`.
pub fn cd_to_density(a: &CholeskyAnsatz) -> Result<DensityMatrix> {
    let s = a.scale();
    if !(s > DEGENERATE_TOL) || !s.is_finite() {
        return Err(QstError::DegenerateAnsatz(format!("Tr(T†T) = {s}")));
    }
    let gram = a.t.ad_mul(&a.t);
    Ok(DensityMatrix::from_constructed(gram.unscale(s)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StiefelAnsatz {
    rank: usize,
    dim: usize,
    w: CVector,
}

impl StiefelAnsatz {
    /// `w` holds `rank` consecutive blocks of length `dim`.
    pub fn new(w: CVector, rank: usize) -> Result<Self> {
        if rank == 0 || w.is_empty() || w.len() % rank != 0 {
            return Err(QstError::invalid(format!(
                "Stiefel vector of length {} cannot hold {rank} blocks",
                w.len()
            )));
        }
        let dim = w.len() / rank;
        if rank > dim {
            return Err(QstError::invalid(format!("rank {rank} exceeds dimension {dim}")));
        }
        let a = StiefelAnsatz { rank, dim, w };
        a.check_norm()?;
        Ok(a)
    }

    /// Normalizes `w` onto the unit sphere first.
    pub fn normalized(w: CVector, rank: usize) -> Result<Self> {
        let n = w.norm();
        if !(n * n > DEGENERATE_TOL) {
            return Err(QstError::DegenerateAnsatz("zero Stiefel vector".into()));
        }
        StiefelAnsatz::new(w.unscale(n), rank)
    }

    fn check_norm(&self) -> Result<()> {
        let dev = (self.w.norm_squared() - 1.0).abs();
        if dev > STIEFEL_REJECT_TOL || !dev.is_finite() {
            return Err(QstError::ConstraintViolation(format!("|W†W - 1| = {dev:e}")));
        }
        Ok(())
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self) -> &CVector {
        &self.w
    }

    pub fn block(&self, alpha: usize) -> &[C64] {
        &self.w.as_slice()[alpha * self.dim..(alpha + 1) * self.dim]
    }

    pub fn norm_deviation(&self) -> f64 {
        (self.w.norm_squared() - 1.0).abs()
    }

    /// Divides out accumulated floating-point drift of `W†W`.
    pub fn renormalize(&mut self) {
        let n = self.w.norm();
        self.w.unscale_mut(n);
    }
}

/// `Σ_α w_α w_α†` for any stacked vector, without a norm check.
pub(crate) fn stacked_outer(w: &[C64], rank: usize, dim: usize) -> CMatrix {
    let mut rho = CMatrix::zeros(dim, dim);
    for alpha in 0..rank {
        let blk = &w[alpha * dim..(alpha + 1) * dim];
        for b in 0..dim {
            let cb = blk[b].conj();
            if cb == ZERO {
                continue;
            }
            for a in 0..dim {
                rho[(a, b)] += blk[a] * cb;
            }
        }
    }
    rho
}

/// `ρ = Σ_α w_α w_α†`.
pub fn sm_to_density(a: &StiefelAnsatz) -> Result<DensityMatrix> {
    a.check_norm()?;
    Ok(DensityMatrix::from_constructed(stacked_outer(
        a.w.as_slice(),
        a.rank,
        a.dim,
    )))
}

/// One vanilla-gradient step along the Cayley retraction.
///
/// With `G̃ = G/‖G‖`, `A = [G̃ W]` and `B = [W −G̃]`, the update is
/// `W ← W − η A (I + η/2 B†A)⁻¹ B†W`; `B†A` is 2×2 so the inverse is closed form.
pub fn sm_retract_step(a: &StiefelAnsatz, grad: &CVector, eta: f64) -> Result<StiefelAnsatz> {
    if grad.len() != a.w.len() {
        return Err(QstError::invalid(format!(
            "gradient length {} does not match Stiefel vector length {}",
            grad.len(),
            a.w.len()
        )));
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(QstError::invalid(format!("step size {eta} must be positive")));
    }
    let gnorm = grad.norm();
    if !(gnorm > DEGENERATE_TOL) {
        return Err(QstError::ZeroGradient);
    }
    let g = grad.unscale(gnorm);
    let w = &a.w;
    let wg = w.dotc(&g); // W†G̃
    let gw = wg.conj(); // G̃†W
    let ww = C64::from(w.norm_squared());
    let gg = C64::from(g.norm_squared());
    // B†A = [[W†G̃, W†W], [−G̃†G̃, −G̃†W]]
    let h = C64::from(0.5 * eta);
    let m00 = C64::from(1.0) + h * wg;
    let m01 = h * ww;
    let m10 = -h * gg;
    let m11 = C64::from(1.0) - h * gw;
    let det = m00 * m11 - m01 * m10;
    if !(det.norm() > 1e-300) {
        return Err(QstError::ConstraintViolation("singular Cayley system".into()));
    }
    // B†W = [W†W, −G̃†W]
    let r0 = ww;
    let r1 = -gw;
    let y0 = (m11 * r0 - m01 * r1) / det;
    let y1 = (m00 * r1 - m10 * r0) / det;
    let step = g * y0 + w * y1;
    let next = w - step * C64::from(eta);
    Ok(StiefelAnsatz {
        rank: a.rank,
        dim: a.dim,
        w: next,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnAnsatz {
    c: Vec<f64>,
    q: CMatrix,
}

impl PnAnsatz {
    /// Checks the simplex and unit-row conditions.
    pub fn new(c: Vec<f64>, q: CMatrix) -> Result<Self> {
        if c.is_empty() || c.len() != q.nrows() || c.len() > q.ncols() {
            return Err(QstError::invalid(format!(
                "PN weights of length {} do not fit a {} x {} state matrix",
                c.len(),
                q.nrows(),
                q.ncols()
            )));
        }
        let a = PnAnsatz { c, q };
        a.check()?;
        Ok(a)
    }

    fn check(&self) -> Result<()> {
        if self.c.iter().any(|&v| !(v >= 0.0)) {
            return Err(QstError::ConstraintViolation("negative PN weight".into()));
        }
        let total: f64 = self.c.iter().sum();
        if (total - 1.0).abs() > PN_TOL {
            return Err(QstError::ConstraintViolation(format!("PN weights sum to {total}")));
        }
        for (k, row) in self.q.row_iter().enumerate() {
            let n = row.norm();
            if (n - 1.0).abs() > PN_TOL {
                return Err(QstError::ConstraintViolation(format!("row {k} has norm {n}")));
            }
        }
        Ok(())
    }

    pub fn rank(&self) -> usize {
        self.c.len()
    }

    pub fn dim(&self) -> usize {
        self.q.ncols()
    }

    pub fn weights(&self) -> &[f64] {
        &self.c
    }

    pub fn states(&self) -> &CMatrix {
        &self.q
    }
}

/// `ρ = Σ_α c_α q_α q_α†` (rows of `Q` are the `q_α`).
pub(crate) fn weighted_outer(c: &[f64], q: &CMatrix) -> CMatrix {
    let d = q.ncols();
    let mut rho = CMatrix::zeros(d, d);
    for (alpha, &ca) in c.iter().enumerate() {
        for b in 0..d {
            let cb = q[(alpha, b)].conj() * ca;
            for a in 0..d {
                rho[(a, b)] += q[(alpha, a)] * cb;
            }
        }
    }
    rho
}

pub fn pn_to_density(a: &PnAnsatz) -> Result<DensityMatrix> {
    a.check()?;
    Ok(DensityMatrix::from_constructed(weighted_outer(&a.c, &a.q)))
}

/// Numerically stable softmax.
pub fn softmax(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax on the weights and norm division on each state row.
pub fn pn_project(c_raw: &[f64], q_raw: &CMatrix) -> Result<PnAnsatz> {
    if c_raw.len() != q_raw.nrows() || c_raw.is_empty() {
        return Err(QstError::invalid("weight count must equal the number of state rows"));
    }
    if c_raw.iter().any(|v| !v.is_finite()) {
        return Err(QstError::DegenerateAnsatz("non-finite PN weight".into()));
    }
    let mut q = q_raw.clone();
    for (k, mut row) in q.row_iter_mut().enumerate() {
        let n2 = row.norm_squared();
        if !(n2 > DEGENERATE_TOL) || !n2.is_finite() {
            return Err(QstError::DegenerateAnsatz(format!("state row {k} has zero norm")));
        }
        row.unscale_mut(n2.sqrt());
    }
    PnAnsatz::new(softmax(c_raw), q)
}

/// One of the three parameterizations.
#[derive(Debug, Clone, PartialEq)]
pub enum Ansatz {
    Cholesky(CholeskyAnsatz),
    Stiefel(StiefelAnsatz),
    Pn(PnAnsatz),
}

impl Ansatz {
    pub fn kind(&self) -> AnsatzKind {
        match self {
            Ansatz::Cholesky(a) if a.is_triangular() => AnsatzKind::CholeskyTriangular,
            Ansatz::Cholesky(_) => AnsatzKind::Cholesky,
            Ansatz::Stiefel(_) => AnsatzKind::Stiefel,
            Ansatz::Pn(_) => AnsatzKind::ProjectiveNormalization,
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            Ansatz::Cholesky(a) => a.rank(),
            Ansatz::Stiefel(a) => a.rank(),
            Ansatz::Pn(a) => a.rank(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Ansatz::Cholesky(a) => a.dim(),
            Ansatz::Stiefel(a) => a.dim(),
            Ansatz::Pn(a) => a.dim(),
        }
    }

    pub fn to_density(&self) -> Result<DensityMatrix> {
        match self {
            Ansatz::Cholesky(a) => cd_to_density(a),
            Ansatz::Stiefel(a) => sm_to_density(a),
            Ansatz::Pn(a) => pn_to_density(a),
        }
    }
}

/// Complex-Gaussian starting point, projected onto each parameterization's constraints.
pub fn init_ansatz(kind: AnsatzKind, dim: usize, rank: usize, seed: u64) -> Result<Ansatz> {
    if dim == 0 {
        return Err(QstError::invalid("dimension must be positive"));
    }
    let rank = if kind == AnsatzKind::CholeskyTriangular {
        dim
    } else {
        rank
    };
    if rank == 0 || rank > dim {
        return Err(QstError::invalid(format!(
            "ansatz rank must satisfy 1 <= rank <= {dim}, got {rank}"
        )));
    }
    let mut r = rng(seed);
    Ok(match kind {
        AnsatzKind::Cholesky => Ansatz::Cholesky(CholeskyAnsatz::new(complex_normal_matrix(rank, dim, &mut r))?),
        AnsatzKind::CholeskyTriangular => {
            Ansatz::Cholesky(CholeskyAnsatz::triangular(complex_normal_matrix(dim, dim, &mut r))?)
        }
        AnsatzKind::Stiefel => {
            let w = CVector::from_fn(rank * dim, |_, _| complex_normal(&mut r));
            Ansatz::Stiefel(StiefelAnsatz::normalized(w, rank)?)
        }
        AnsatzKind::ProjectiveNormalization => {
            let c_raw: Vec<f64> = (0..rank).map(|_| normal(&mut r)).collect();
            let q_raw = complex_normal_matrix(rank, dim, &mut r);
            Ansatz::Pn(pn_project(&c_raw, &q_raw)?)
        }
    })
}
