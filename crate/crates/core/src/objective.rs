//! Least-squares reconstruction loss with an optional L1 penalty, and its
//! conjugate-Wirtinger gradients `∂L/∂θ̄` for each parameterization.
//!
//! All three gradients share the Hermitian kernel
//! `K = Σ_i 2 (f_i − B_i) Π_i + λ S`, `S_ab = ρ_ab / |ρ_ab|`.
//! Real-coordinate partials are `2 Re G` and `2 Im G`.

use std::collections::HashSet;

use crate::ansatz::{CholeskyAnsatz, PnAnsatz, StiefelAnsatz, DEGENERATE_TOL};
use crate::error::{QstError, Result};
use crate::linalg::{CMatrix, CVector, C64, ZERO};
use crate::measurement::{DataSet, Observable, ObservableSet};
use crate::qstates::DensityMatrix;

/// Positions into a [`DataSet`]'s entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    indices: Vec<usize>,
}

impl Batch {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(QstError::invalid("batch must be nonempty"));
        }
        let mut seen = HashSet::with_capacity(indices.len());
        if let Some(dup) = indices.iter().find(|i| !seen.insert(**i)) {
            return Err(QstError::invalid(format!("duplicate batch index {dup}")));
        }
        Ok(Batch { indices })
    }

    pub fn full(n: usize) -> Result<Self> {
        Batch::new((0..n).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossConfig {
    pub lambda_l1: f64,
}

impl LossConfig {
    pub fn new(lambda_l1: f64) -> Result<Self> {
        if !(lambda_l1 >= 0.0) || !lambda_l1.is_finite() {
            return Err(QstError::invalid(format!("lambda must be >= 0, got {lambda_l1}")));
        }
        Ok(LossConfig { lambda_l1 })
    }
}

/// Resolves batch positions to `(operator, observed value)` pairs.
fn batch_terms<'a>(
    data: &'a DataSet,
    set: &'a ObservableSet,
    batch: &Batch,
) -> Result<Vec<(&'a Observable, f64)>> {
    let entries = data.entries();
    batch
        .indices()
        .iter()
        .map(|&k| {
            let e = entries.get(k).ok_or_else(|| {
                QstError::invalid(format!("batch index {k} out of range for {} entries", entries.len()))
            })?;
            if e.operator_index >= set.len() {
                return Err(QstError::invalid(format!(
                    "operator index {} out of range for a set of {}",
                    e.operator_index,
                    set.len()
                )));
            }
            Ok((set.operator(e.operator_index), e.value))
        })
        .collect()
}

fn check_dim(set: &ObservableSet, dim: usize) -> Result<()> {
    if set.dim() != dim {
        return Err(QstError::invalid(format!(
            "state dimension {dim} does not match operator dimension {}",
            set.dim()
        )));
    }
    Ok(())
}

fn l1_norm(rho: &CMatrix) -> f64 {
    rho.iter().map(|z| z.norm()).sum()
}

/// Elementwise `z / |z|`, zero at exact zeros.
fn l1_subgradient(rho: &CMatrix) -> CMatrix {
    rho.map(|z| {
        let n = z.norm();
        if n > 0.0 {
            z / n
        } else {
            ZERO
        }
    })
}

/// `Σ_batch (B_i − Tr Π_i ρ)² + λ Σ_ab |ρ_ab|`.
pub fn loss(
    rho: &DensityMatrix,
    data: &DataSet,
    set: &ObservableSet,
    batch: &Batch,
    cfg: &LossConfig,
) -> Result<f64> {
    check_dim(set, rho.dim())?;
    let m = rho.matrix();
    let mut acc = 0.0;
    for (op, b) in batch_terms(data, set, batch)? {
        let r = op.expectation_re(m) - b;
        acc += r * r;
    }
    if cfg.lambda_l1 > 0.0 {
        acc += cfg.lambda_l1 * l1_norm(m);
    }
    Ok(acc)
}

/// Loss over every entry of `data`.
pub fn full_loss(rho: &DensityMatrix, data: &DataSet, set: &ObservableSet, cfg: &LossConfig) -> Result<f64> {
    loss(rho, data, set, &Batch::full(data.len())?, cfg)
}

/// `∂L/∂T̄ = (T K − Tr(Kρ) T) / Tr(T†T)`.
pub fn grad_cd(
    a: &CholeskyAnsatz,
    data: &DataSet,
    set: &ObservableSet,
    batch: &Batch,
    cfg: &LossConfig,
) -> Result<CMatrix> {
    check_dim(set, a.dim())?;
    let t = a.factor();
    let s = a.scale();
    if !(s > DEGENERATE_TOL) || !s.is_finite() {
        return Err(QstError::DegenerateAnsatz(format!("Tr(T†T) = {s}")));
    }
    let rho = t.ad_mul(t).unscale(s);
    let d = a.dim();
    let mut k = CMatrix::zeros(d, d);
    let mut kappa = 0.0;
    for (op, b) in batch_terms(data, set, batch)? {
        let f = op.expectation_re(&rho);
        let coeff = 2.0 * (f - b);
        kappa += coeff * f;
        op.accumulate(coeff, &mut k);
    }
    if cfg.lambda_l1 > 0.0 {
        k += l1_subgradient(&rho) * C64::from(cfg.lambda_l1);
        kappa += cfg.lambda_l1 * l1_norm(&rho);
    }
    let mut g = t * k;
    g -= t * C64::from(kappa);
    Ok(g.unscale(s))
}

/// `G_α = Σ_i 2 (f_i − B_i) Π_i w_α` (+ `λ S w_α`), with no constraint term.
pub fn grad_sm(
    a: &StiefelAnsatz,
    data: &DataSet,
    set: &ObservableSet,
    batch: &Batch,
    cfg: &LossConfig,
) -> Result<CVector> {
    check_dim(set, a.dim())?;
    let (m, d) = (a.rank(), a.dim());
    let w = a.vector().as_slice();
    let terms = batch_terms(data, set, batch)?;
    let mut g = CVector::zeros(m * d);
    let mut scratch = vec![ZERO; d];
    for (op, b) in terms {
        let f: f64 = (0..m).map(|al| op.quad_form(a.block(al))).sum();
        let coeff = C64::from(2.0 * (f - b));
        for al in 0..m {
            op.apply(&w[al * d..(al + 1) * d], &mut scratch);
            for (gi, &si) in g.as_mut_slice()[al * d..(al + 1) * d].iter_mut().zip(&scratch) {
                *gi += coeff * si;
            }
        }
    }
    if cfg.lambda_l1 > 0.0 {
        let rho = crate::ansatz::stacked_outer(w, m, d);
        let sk = l1_subgradient(&rho) * C64::from(cfg.lambda_l1);
        for al in 0..m {
            let blk = CVector::from_column_slice(&w[al * d..(al + 1) * d]);
            let add = &sk * blk;
            for (gi, ai) in g.as_mut_slice()[al * d..(al + 1) * d].iter_mut().zip(add.iter()) {
                *gi += ai;
            }
        }
    }
    Ok(g)
}

/// Straight-through PN gradient at the current (projected) point.
#[derive(Debug, Clone, PartialEq)]
pub struct PnGradient {
    /// `∂L/∂c_α`.
    pub weights: Vec<f64>,
    /// Rows `∂L/∂q̄_α`.
    pub states: CMatrix,
}

pub fn grad_pn(
    a: &PnAnsatz,
    data: &DataSet,
    set: &ObservableSet,
    batch: &Batch,
    cfg: &LossConfig,
) -> Result<PnGradient> {
    check_dim(set, a.dim())?;
    let (m, d) = (a.rank(), a.dim());
    let c = a.weights();
    // Rows of Q copied into contiguous blocks.
    let q = a.states();
    let rows: Vec<Vec<C64>> = (0..m).map(|al| q.row(al).iter().copied().collect()).collect();
    let terms = batch_terms(data, set, batch)?;
    let mut gc = vec![0.0; m];
    let mut gq = CMatrix::zeros(m, d);
    let mut quads = vec![0.0; m];
    let mut scratch = vec![ZERO; d];
    for (op, b) in terms {
        for (qa, row) in quads.iter_mut().zip(&rows) {
            *qa = op.quad_form(row);
        }
        let f: f64 = c.iter().zip(&quads).map(|(ca, qa)| ca * qa).sum();
        let coeff = 2.0 * (f - b);
        for al in 0..m {
            gc[al] += coeff * quads[al];
            op.apply(&rows[al], &mut scratch);
            let s = coeff * c[al];
            for (j, &sj) in scratch.iter().enumerate() {
                gq[(al, j)] += sj * s;
            }
        }
    }
    if cfg.lambda_l1 > 0.0 {
        let rho = crate::ansatz::weighted_outer(c, q);
        let sk = l1_subgradient(&rho) * C64::from(cfg.lambda_l1);
        for al in 0..m {
            let qa = q.row(al).transpose();
            let sq = &sk * &qa;
            gc[al] += qa.dotc(&sq).re;
            for j in 0..d {
                gq[(al, j)] += sq[j] * c[al];
            }
        }
    }
    Ok(PnGradient {
        weights: gc,
        states: gq,
    })
}
