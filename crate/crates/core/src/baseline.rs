//! Non-gradient reference reconstructors: linear inversion and iterative MLE.

use std::time::Instant;

use log::warn;

use crate::error::{QstError, Result};
use crate::linalg::{hermitize, CMatrix, CVector, HermitianEigen, C64};
use crate::measurement::{DataSet, Observable, ObservableSet};
use crate::metrics::uj_fidelity;
use crate::qstates::DensityMatrix;

/// Relative singular-value cutoff for the numerical rank of a sensing matrix.
pub const SENSING_RANK_TOL: f64 = 1e-10;
/// Predicted probabilities below this are treated as vanishing.
pub const IMLE_MIN_PROBABILITY: f64 = 1e-300;
/// Allowed per-step log-likelihood decrease before a step counts as non-monotone.
pub const IMLE_MONOTONE_TOL: f64 = 1e-9;
/// Relative size of the non-leading eigenvalues tolerated in a dense projector.
pub const RANK_ONE_TOL: f64 = 1e-10;

/// `A_{mn} = Tr(Π_m E_n)` with `E_{n = i·d + j} = |i⟩⟨j|`, i.e. `A_{mn} = (Π_m)_{ji}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    pub dim: usize,
    pub entries: CMatrix,
}

impl SensingMatrix {
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }
}

fn sensing_rows<'a>(ops: impl Iterator<Item = &'a Observable>, count: usize, dim: usize) -> CMatrix {
    let mut a = CMatrix::zeros(count, dim * dim);
    for (m, op) in ops.enumerate() {
        let p = op.to_matrix();
        for i in 0..dim {
            for j in 0..dim {
                a[(m, i * dim + j)] = p[(j, i)];
            }
        }
    }
    a
}

pub fn build_sensing(set: &ObservableSet) -> SensingMatrix {
    SensingMatrix {
        dim: set.dim(),
        entries: sensing_rows(set.operators().iter(), set.len(), set.dim()),
    }
}

/// Least-squares solution of `A X = B` over the rows present in `data`,
/// reshaped to `ρ_ij = X_{i·d+j}` and Hermitized. The result need not be PSD.
pub fn linear_inversion(data: &DataSet, set: &ObservableSet) -> Result<CMatrix> {
    data.check_against(set)?;
    let d = set.dim();
    let ops = data.entries().iter().map(|e| set.operator(e.operator_index));
    let a = sensing_rows(ops, data.len(), d);
    let b = CVector::from_iterator(data.len(), data.values().map(C64::from));
    let svd = a.svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = SENSING_RANK_TOL * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    if rank < d * d {
        return Err(QstError::InformationallyIncomplete {
            rank,
            required: d * d,
        });
    }
    let x = svd
        .solve(&b, cutoff)
        .map_err(|e| QstError::invalid(format!("least-squares solve failed: {e}")))?;
    let rho = CMatrix::from_fn(d, d, |i, j| x[i * d + j]);
    Ok(hermitize(&rho))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImleConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub record_every: usize,
    /// Abort with [`QstError::LikelihoodDecrease`] instead of warning.
    pub strict_monotone: bool,
    pub fidelity_target: Option<f64>,
    /// Replace `R` by `G^{-1/2} R G^{-1/2}` with `G = Σ_j P_j`, which makes the
    /// true state an exact fixed point when the projectors do not sum to the identity.
    pub frame_correction: bool,
}

impl ImleConfig {
    pub fn new(max_iters: usize, tol: f64) -> Self {
        ImleConfig {
            max_iters,
            tol,
            record_every: 10,
            strict_monotone: false,
            fidelity_target: None,
            frame_correction: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImleResult {
    pub rho: DensityMatrix,
    pub iterations_run: usize,
    /// Whether `‖ρ_{t+1} − ρ_t‖_F < tol` was reached.
    pub converged: bool,
    pub record_iters: Vec<usize>,
    /// `Σ_j B_j log Tr(P_j ρ)` at every iteration, starting with the initial state.
    pub loglik_trace: Vec<f64>,
    /// At the recorded iterations; empty without a truth state.
    pub fidelity_trace: Vec<f64>,
    /// Cumulative seconds at the recorded iterations, fidelity evaluation included.
    pub time_trace: Vec<f64>,
    pub solve_time_trace: Vec<f64>,
    /// Number of term evaluations dropped for vanishing predicted probability.
    pub skipped_terms: usize,
}

/// Projector vectors scaled by `√weight`, one per column, for the entries in `data`.
fn projector_columns(data: &DataSet, set: &ObservableSet) -> Result<CMatrix> {
    data.check_against(set)?;
    let d = set.dim();
    let mut v = CMatrix::zeros(d, data.len());
    for (col, e) in data.entries().iter().enumerate() {
        if !(e.value >= 0.0) {
            return Err(QstError::invalid(format!(
                "iMLE needs nonnegative data, entry {col} is {}",
                e.value
            )));
        }
        match set.operator(e.operator_index) {
            Observable::Projector { vector, weight } => {
                let s = weight.sqrt();
                for a in 0..d {
                    v[(a, col)] = vector[a] * s;
                }
            }
            Observable::Dense(m) => {
                let u = rank_one_factor(m).ok_or_else(|| {
                    QstError::invalid(format!("operator {} is not a rank-1 PSD projector", e.operator_index))
                })?;
                v.set_column(col, &u);
            }
            Observable::Pauli(_) => {
                return Err(QstError::invalid(
                    "iMLE is restricted to rank-1 projector measurements",
                ))
            }
        }
    }
    Ok(v)
}

/// `u` with `m = u u†`, if `m` is PSD and rank 1.
fn rank_one_factor(m: &CMatrix) -> Option<CVector> {
    let eig = HermitianEigen::new(m);
    let top = *eig.values.last()?;
    let scale = eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let rest = eig.values[..eig.values.len() - 1].iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(top > 0.0) || rest > RANK_ONE_TOL * scale {
        return None;
    }
    Some(eig.vectors.column(eig.values.len() - 1) * C64::from(top.sqrt()))
}

/// Predicted probabilities `p_j = v_j† ρ v_j`.
fn predictions(v: &CMatrix, rho: &CMatrix) -> Vec<f64> {
    let rv = rho * v;
    (0..v.ncols())
        .map(|j| {
            v.column(j)
                .iter()
                .zip(rv.column(j).iter())
                .map(|(a, b)| (a.conj() * b).re)
                .sum()
        })
        .collect()
}

fn log_likelihood(values: &[f64], p: &[f64]) -> f64 {
    values
        .iter()
        .zip(p)
        .filter(|(&b, &pj)| b > 0.0 && pj >= IMLE_MIN_PROBABILITY)
        .map(|(&b, &pj)| b * pj.ln())
        .sum()
}

/// `ρ ← N[R ρ R]`, `R = Σ_j (B_j / Tr(P_j ρ)) P_j`, starting from `I/d`.
pub fn imle(data: &DataSet, set: &ObservableSet, max_iters: usize, tol: f64) -> Result<DensityMatrix> {
    Ok(imle_run(data, set, &ImleConfig::new(max_iters, tol), None)?.rho)
}

pub fn imle_run(
    data: &DataSet,
    set: &ObservableSet,
    cfg: &ImleConfig,
    truth: Option<&DensityMatrix>,
) -> Result<ImleResult> {
    imle_from(data, set, cfg, truth, DensityMatrix::maximally_mixed(set.dim()))
}

/// iMLE from an arbitrary starting state.
pub fn imle_from(
    data: &DataSet,
    set: &ObservableSet,
    cfg: &ImleConfig,
    truth: Option<&DensityMatrix>,
    start: DensityMatrix,
) -> Result<ImleResult> {
    if cfg.max_iters == 0 || cfg.record_every == 0 {
        return Err(QstError::invalid("iMLE needs max_iters >= 1 and record_every >= 1"));
    }
    if !(cfg.tol > 0.0) {
        return Err(QstError::invalid("iMLE tolerance must be positive"));
    }
    if start.dim() != set.dim() {
        return Err(QstError::invalid("starting state dimension does not match the operator set"));
    }
    let v = projector_columns(data, set)?;
    let values: Vec<f64> = data.values().collect();
    let clock = Instant::now();
    let mut solve = 0.0;
    let mut rho = start.into_matrix();
    let mut p = predictions(&v, &rho);
    let mut result = ImleResult {
        rho: DensityMatrix::maximally_mixed(set.dim()),
        iterations_run: 0,
        converged: false,
        record_iters: Vec::new(),
        loglik_trace: vec![log_likelihood(&values, &p)],
        fidelity_trace: Vec::new(),
        time_trace: Vec::new(),
        solve_time_trace: Vec::new(),
        skipped_terms: 0,
    };
    let record = |t: usize, rho: &CMatrix, solve: f64, result: &mut ImleResult| -> Result<bool> {
        let state = DensityMatrix::from_constructed(rho.clone());
        let mut hit = false;
        if let Some(tr) = truth {
            let f = uj_fidelity(&state, tr)?;
            hit = cfg.fidelity_target.is_some_and(|target| f >= target);
            result.fidelity_trace.push(f);
        }
        result.record_iters.push(t);
        result.time_trace.push(clock.elapsed().as_secs_f64());
        result.solve_time_trace.push(solve);
        result.rho = state;
        Ok(hit)
    };
    if record(0, &rho, 0.0, &mut result)? {
        return Ok(result);
    }
    let frame_root_inv = if cfg.frame_correction {
        let g = hermitize(&(&v * v.adjoint()));
        let eig = HermitianEigen::new(&g);
        if !(eig.min() > 0.0) {
            return Err(QstError::invalid("projector frame does not span the state space"));
        }
        Some(eig.map(|x| 1.0 / x.sqrt()))
    } else {
        None
    };
    let mut scaled = v.clone();
    for t in 1..=cfg.max_iters {
        let tick = Instant::now();
        let mut skipped = 0;
        for (j, (&b, &pj)) in values.iter().zip(&p).enumerate() {
            let ratio = if b == 0.0 {
                0.0
            } else if pj < IMLE_MIN_PROBABILITY {
                skipped += 1;
                0.0
            } else {
                b / pj
            };
            for (dst, src) in scaled.column_mut(j).iter_mut().zip(v.column(j).iter()) {
                *dst = src * ratio;
            }
        }
        if skipped > 0 {
            warn!("iMLE iteration {t}: skipped {skipped} terms with vanishing predicted probability");
            result.skipped_terms += skipped;
        }
        let mut r = hermitize(&(&scaled * v.adjoint()));
        if let Some(c) = &frame_root_inv {
            r = hermitize(&(c * r * c));
        }
        let mut next = &r * &rho * &r;
        next = hermitize(&next);
        let tr: f64 = (0..next.nrows()).map(|k| next[(k, k)].re).sum();
        if !(tr > 0.0) || !tr.is_finite() {
            return Err(QstError::InvalidState(format!("iMLE iteration {t}: trace {tr}")));
        }
        next.unscale_mut(tr);
        let step = (&next - &rho).norm();
        rho = next;
        p = predictions(&v, &rho);
        solve += tick.elapsed().as_secs_f64();
        result.iterations_run = t;

        let ll = log_likelihood(&values, &p);
        let prev = *result.loglik_trace.last().expect("trace starts with the initial value");
        result.loglik_trace.push(ll);
        if ll < prev - IMLE_MONOTONE_TOL {
            if cfg.strict_monotone {
                return Err(QstError::LikelihoodDecrease {
                    iteration: t,
                    previous: prev,
                    current: ll,
                });
            }
            warn!("iMLE iteration {t}: log-likelihood decreased {prev} -> {ll}");
        }
        let done = step < cfg.tol;
        if t % cfg.record_every == 0 || t == cfg.max_iters || done {
            if record(t, &rho, solve, &mut result)? {
                return Ok(result);
            }
        }
        if done {
            result.converged = true;
            break;
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::measurement::{gaussian_noise, husimi_set, measure, pauli_set, DataEntry};
    use crate::linalg::ZERO;
    use crate::qstates::{cat_state, random_density, random_pure_state};
    use approx::assert_abs_diff_eq;

    fn row(a: &SensingMatrix, m: usize) -> Vec<C64> {
        a.entries.row(m).iter().copied().collect()
    }

    #[test]
    fn sensing_examples() {
        let a = build_sensing(&pauli_set(1).unwrap());
        assert_eq!((a.rows(), a.cols()), (4, 4));
        let one = C64::from(1.0);
        assert_eq!(row(&a, 0), vec![one, ZERO, ZERO, one]);
        assert_eq!(row(&a, 3), vec![one, ZERO, ZERO, -one]);
        // σy = [[0, -i], [i, 0]]: Tr(σy |0⟩⟨1|) = (σy)_{10} = i.
        assert_eq!(row(&a, 2)[1], C64::new(0.0, 1.0));

        let set = husimi_set(1.0, 2, 2).unwrap();
        let h = build_sensing(&set);
        let Observable::Projector { vector, weight } = set.operator(1) else { panic!() };
        for i in 0..2 {
            for j in 0..2 {
                let expect = vector[i].conj() * vector[j] * *weight;
                assert!((h.entries[(1, i * 2 + j)] - expect).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn sensing_matrix_maps_states_to_data() {
        let set = pauli_set(2).unwrap();
        let a = build_sensing(&set);
        let rho = random_density(4, 3, 5).unwrap();
        let x = CVector::from_fn(16, |n, _| rho.matrix()[(n / 4, n % 4)]);
        let b = &a.entries * x;
        let data = measure(&rho, &set).unwrap();
        for (k, v) in data.values().enumerate() {
            assert_abs_diff_eq!(b[k].re, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_inversion_round_trip() {
        for n in 1..=3 {
            let set = pauli_set(n).unwrap();
            for seed in 0..20 {
                let d = 1 << n;
                let rho = random_density(d, 1 + seed as usize % d, seed).unwrap();
                let data = measure(&rho, &set).unwrap();
                let est = linear_inversion(&data, &set).unwrap();
                assert!(max_abs_diff(&est, rho.matrix()) <= 1e-9);
            }
        }
    }

    #[test]
    fn linear_inversion_rejects_incomplete_data() {
        let set = pauli_set(2).unwrap();
        let data = DataSet::new(vec![DataEntry {
            operator_index: 0,
            value: 1.0,
        }])
        .unwrap();
        match linear_inversion(&data, &set) {
            Err(QstError::InformationallyIncomplete { rank, required }) => {
                assert_eq!((rank, required), (1, 16));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn noisy_inversion_can_leave_the_state_space() {
        let set = pauli_set(2).unwrap();
        let psi = random_pure_state(4, 3).unwrap();
        let data = gaussian_noise(&measure(&psi.projector(), &set).unwrap(), 0.2, 4).unwrap();
        let est = linear_inversion(&data, &set).unwrap();
        assert!(crate::linalg::HermitianEigen::new(&est).min() < 0.0);
    }

    #[test]
    fn imle_rejects_unsupported_inputs() {
        let set = pauli_set(1).unwrap();
        let data = measure(&DensityMatrix::maximally_mixed(2), &set).unwrap();
        assert!(imle(&data, &set, 10, 1e-9).is_err());
        let hset = husimi_set(2.0, 3, 4).unwrap();
        let bad = DataSet::new(vec![DataEntry {
            operator_index: 0,
            value: -0.1,
        }])
        .unwrap();
        assert!(imle(&bad, &hset, 10, 1e-9).is_err());
    }

    /// The six Pauli eigenprojectors of a qubit; they sum to `3 I`.
    fn octahedron() -> ObservableSet {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let i = C64::new(0.0, h);
        let r = C64::from(h);
        let one = C64::from(1.0);
        let vecs = [
            [one, ZERO],
            [ZERO, one],
            [r, r],
            [r, -r],
            [r, i],
            [r, -i],
        ];
        let ops = vecs
            .iter()
            .map(|v| {
                let v = CVector::from_column_slice(v);
                &v * v.adjoint()
            })
            .collect();
        ObservableSet::general(ops).unwrap()
    }

    fn one_step_from_truth(set: &ObservableSet, truth: &DensityMatrix, frame_correction: bool) -> f64 {
        let data = measure(truth, set).unwrap();
        let mut cfg = ImleConfig::new(1, 1e-300);
        cfg.frame_correction = frame_correction;
        let res = imle_from(&data, set, &cfg, None, truth.clone()).unwrap();
        (res.rho.matrix() - truth.matrix()).norm()
    }

    #[test]
    fn imle_fixed_point_at_truth() {
        let truth = random_density(2, 2, 4).unwrap();
        assert!(one_step_from_truth(&octahedron(), &truth, false) <= 1e-10);

        // A truncated Husimi frame does not sum to the identity, so only the
        // frame-corrected iteration keeps the true state fixed.
        let set = husimi_set(4.0, 32, 8).unwrap();
        let truth = random_density(8, 3, 9).unwrap();
        assert!(one_step_from_truth(&set, &truth, true) <= 1e-10);
        assert!(one_step_from_truth(&set, &truth, false) > 1e-2);
    }

    #[test]
    fn imle_symmetric_fixed_point() {
        let set = octahedron();
        let mixed = DensityMatrix::maximally_mixed(2);
        let data = measure(&mixed, &set).unwrap();
        assert!(data.values().all(|v| (v - 0.5).abs() < 1e-15));
        let rho = imle(&data, &set, 50, 1e-14).unwrap();
        assert!(max_abs_diff(rho.matrix(), mixed.matrix()) <= 1e-8);
    }

    #[test]
    fn dense_operators_must_be_rank_one() {
        let set = ObservableSet::general(vec![CMatrix::identity(2, 2)]).unwrap();
        let data = measure(&DensityMatrix::maximally_mixed(2), &set).unwrap();
        assert!(imle(&data, &set, 5, 1e-9).is_err());
    }

    #[test]
    fn imle_iterates_are_valid_and_likelihood_rises() {
        let set = husimi_set(3.0, 12, 10).unwrap();
        let truth = cat_state(C64::new(1.2, 0.3), 10).unwrap().projector();
        let data = measure(&truth, &set).unwrap();
        let mut cfg = ImleConfig::new(200, 1e-12);
        cfg.record_every = 1;
        cfg.strict_monotone = true;
        let res = imle_run(&data, &set, &cfg, Some(&truth)).unwrap();
        for w in res.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - IMLE_MONOTONE_TOL);
        }
        for k in 1..=20 {
            let step = imle(&data, &set, k, 1e-12).unwrap();
            assert!(step.validity().is_valid(), "iterate {k}");
        }
        assert!(res.fidelity_trace.last().unwrap() > res.fidelity_trace.first().unwrap());
    }
}
