//! Adam with a decaying step size, mini-batch sampling, and the reconstruction driver.

use std::io::Write;
use std::time::Instant;

use log::debug;
use rand::seq::index::sample;

use crate::ansatz::{init_ansatz, pn_project, sm_retract_step, Ansatz, AnsatzKind};
use crate::error::{QstError, Result};
use crate::linalg::C64;
use crate::measurement::{DataSet, ObservableSet};
use crate::metrics::uj_fidelity;
use crate::objective::{full_loss, grad_cd, grad_pn, grad_sm, Batch, LossConfig};
use crate::qstates::DensityMatrix;
use crate::random::{derive_seed, rng, SeededRng};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;
pub const DEFAULT_ALPHA: f64 = 0.999;
pub const DEFAULT_BATCH_SIZE: usize = 256;
pub const DEFAULT_MAX_ITERS: usize = 800;
pub const DEFAULT_RECORD_EVERY: usize = 10;
/// Early stopping compares the full-data loss across this many iterations.
pub const PLATEAU_WINDOW: usize = 50;
pub const PLATEAU_TOL: f64 = 1e-10;
/// Stiefel points are renormalized this often to remove rounding drift.
pub const SM_RENORMALIZE_EVERY: usize = 100;

/// `η₀` per parameterization.
pub fn default_eta0(kind: AnsatzKind) -> f64 {
    match kind {
        AnsatzKind::Cholesky | AnsatzKind::CholeskyTriangular => 1.0,
        // The Cayley step moves a distance of about `η` whatever the gradient
        // norm, so the final accuracy is set by `η₀ α^t`.
        AnsatzKind::Stiefel => 0.1,
        AnsatzKind::ProjectiveNormalization => 0.3,
    }
}

/// `η_t = η₀ αᵗ`.
pub fn decayed_eta(eta0: f64, alpha: f64, t: u64) -> f64 {
    eta0 * alpha.powf(t as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    t: u64,
    m1: Vec<f64>,
    m2: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub eta0: f64,
    pub alpha: f64,
}

impl AdamState {
    /// Zeroed moments for `len` real coordinates.
    pub fn new(len: usize, eta0: f64, alpha: f64) -> Self {
        AdamState {
            t: 0,
            m1: vec![0.0; len],
            m2: vec![0.0; len],
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            eta0,
            alpha,
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// Step size used by the most recent update (`η₀` before the first).
    pub fn eta(&self) -> f64 {
        decayed_eta(self.eta0, self.alpha, self.t)
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m1
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.m2
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m1.len() || grads.len() != self.m1.len() {
            return Err(QstError::invalid(format!(
                "Adam state holds {} coordinates, got {} parameters and {} gradients",
                self.m1.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let eta = self.eta();
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m1).zip(&mut self.m2) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= eta * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }

    /// Real and imaginary parts are independent coordinates.
    pub fn step_complex(&mut self, params: &mut [C64], grads: &[C64]) -> Result<()> {
        self.step(bytemuck::cast_slice_mut(params), bytemuck::cast_slice(grads))
    }
}

/// Value-style wrapper around [`AdamState::step`].
pub fn adam_step(mut state: AdamState, mut params: Vec<f64>, grads: &[f64]) -> Result<(AdamState, Vec<f64>)> {
    state.step(&mut params, grads)?;
    Ok((state, params))
}

/// Independent uniform batches without replacement.
#[derive(Debug, Clone)]
pub struct MinibatchSampler {
    n_total: usize,
    batch_size: usize,
    rng: SeededRng,
}

impl MinibatchSampler {
    pub fn new(n_total: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > n_total {
            return Err(QstError::invalid(format!(
                "batch size must satisfy 1 <= {batch_size} <= {n_total}"
            )));
        }
        Ok(MinibatchSampler {
            n_total,
            batch_size,
            rng: rng(seed),
        })
    }

    /// The full batch is always `0..n` in order.
    pub fn next_batch(&mut self) -> Batch {
        let indices = if self.batch_size == self.n_total {
            (0..self.n_total).collect()
        } else {
            sample(&mut self.rng, self.n_total, self.batch_size).into_vec()
        };
        Batch::new(indices).expect("sampled indices are unique and nonempty")
    }
}

pub fn minibatches(n_total: usize, batch_size: usize, seed: u64, n_iters: usize) -> Result<Vec<Batch>> {
    let mut s = MinibatchSampler::new(n_total, batch_size, seed)?;
    Ok((0..n_iters).map(|_| s.next_batch()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kind: AnsatzKind,
    pub rank: usize,
    pub max_iters: usize,
    pub batch_size: usize,
    pub eta0: f64,
    pub alpha: f64,
    pub lambda_l1: f64,
    pub seed: u64,
    pub record_every: usize,
    /// Stop once a recorded fidelity reaches this value (needs a truth state).
    pub fidelity_target: Option<f64>,
    /// Stop when the full-data loss changes by less than [`PLATEAU_TOL`] over [`PLATEAU_WINDOW`] iterations.
    pub early_stop: bool,
}

impl RunConfig {
    pub fn new(kind: AnsatzKind, rank: usize) -> Self {
        RunConfig {
            kind,
            rank,
            max_iters: DEFAULT_MAX_ITERS,
            batch_size: DEFAULT_BATCH_SIZE,
            eta0: default_eta0(kind),
            alpha: DEFAULT_ALPHA,
            lambda_l1: 0.0,
            seed: 0,
            record_every: DEFAULT_RECORD_EVERY,
            fidelity_target: None,
            early_stop: false,
        }
    }

    pub fn validate(&self, data_len: usize) -> Result<()> {
        if self.max_iters == 0 {
            return Err(QstError::invalid("max_iters must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(QstError::invalid("record_every must be at least 1"));
        }
        if self.batch_size == 0 || self.batch_size > data_len {
            return Err(QstError::invalid(format!(
                "batch size {} must lie in 1..={data_len}",
                self.batch_size
            )));
        }
        if !(self.eta0 > 0.0) || !self.eta0.is_finite() {
            return Err(QstError::invalid(format!("eta0 must be positive, got {}", self.eta0)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(QstError::invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        LossConfig::new(self.lambda_l1)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIters,
    FidelityTarget,
    ZeroGradient,
    LossPlateau,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::MaxIters => "max-iters",
            StopReason::FidelityTarget => "fidelity-target",
            StopReason::ZeroGradient => "zero-gradient",
            StopReason::LossPlateau => "loss-plateau",
        }
    }

    /// Everything except running out of iterations counts as converged.
    pub fn converged(self) -> bool {
        self != StopReason::MaxIters
    }
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub rho: DensityMatrix,
    /// Iteration numbers of the recorded points (0 is the initial ansatz).
    pub record_iters: Vec<usize>,
    pub loss_trace: Vec<f64>,
    /// Empty when no truth state was supplied.
    pub fidelity_trace: Vec<f64>,
    /// Cumulative wall-clock seconds, including loss and fidelity evaluation.
    pub time_trace: Vec<f64>,
    /// Cumulative wall-clock seconds spent in gradient and update steps only.
    pub solve_time_trace: Vec<f64>,
    pub iterations_run: usize,
    pub stop_reason: StopReason,
    pub config: RunConfig,
}

impl ReconstructionResult {
    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_fidelity(&self) -> Option<f64> {
        self.fidelity_trace.last().copied()
    }

    pub fn total_seconds(&self) -> f64 {
        self.time_trace.last().copied().unwrap_or(0.0)
    }

    pub fn solve_seconds(&self) -> f64 {
        self.solve_time_trace.last().copied().unwrap_or(0.0)
    }

    /// Mean gradient-plus-update time per iteration.
    pub fn seconds_per_iteration(&self) -> f64 {
        if self.iterations_run == 0 {
            0.0
        } else {
            self.solve_seconds() / self.iterations_run as f64
        }
    }

    /// CSV with header `iter,cum_time_s,loss,fidelity`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iter", "cum_time_s", "loss", "fidelity"])?;
        for (k, &it) in self.record_iters.iter().enumerate() {
            let fid = self.fidelity_trace.get(k).map(|f| f.to_string()).unwrap_or_default();
            out.write_record(&[
                it.to_string(),
                self.time_trace[k].to_string(),
                self.loss_trace[k].to_string(),
                fid,
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// State handed to a [`reconstruct_with`] observer at every recorded iteration.
#[derive(Debug)]
pub struct Snapshot<'a> {
    pub iteration: usize,
    pub rho: &'a DensityMatrix,
    pub loss: f64,
    pub fidelity: Option<f64>,
}

/// Parameterization plus its optimizer state.
enum Engine {
    /// For PN, `weights` optimizes the pre-softmax logits, which persist between steps.
    Adam { ansatz: Ansatz, main: AdamState, weights: Option<(AdamState, Vec<f64>)> },
    Retraction { ansatz: Ansatz },
}

impl Engine {
    fn new(ansatz: Ansatz, cfg: &RunConfig) -> Self {
        match &ansatz {
            Ansatz::Cholesky(a) => {
                let n = 2 * a.factor().len();
                Engine::Adam {
                    ansatz,
                    main: AdamState::new(n, cfg.eta0, cfg.alpha),
                    weights: None,
                }
            }
            Ansatz::Pn(a) => {
                let n = 2 * a.states().len();
                let m = a.rank();
                let logits = a.weights().iter().map(|c| c.ln()).collect();
                Engine::Adam {
                    ansatz,
                    main: AdamState::new(n, cfg.eta0, cfg.alpha),
                    weights: Some((AdamState::new(m, cfg.eta0, cfg.alpha), logits)),
                }
            }
            Ansatz::Stiefel(_) => Engine::Retraction { ansatz },
        }
    }

    fn ansatz(&self) -> &Ansatz {
        match self {
            Engine::Adam { ansatz, .. } | Engine::Retraction { ansatz } => ansatz,
        }
    }

    /// One update; `Ok(false)` signals a vanishing gradient.
    fn step(
        &mut self,
        t: usize,
        data: &DataSet,
        set: &ObservableSet,
        batch: &Batch,
        loss_cfg: &LossConfig,
        cfg: &RunConfig,
    ) -> Result<bool> {
        match self {
            Engine::Adam {
                ansatz: Ansatz::Cholesky(a),
                main,
                ..
            } => {
                let mut g = grad_cd(a, data, set, batch, loss_cfg)?;
                if a.is_triangular() {
                    let n = g.nrows();
                    for j in 1..n {
                        for i in 0..j {
                            g[(i, j)] = C64::new(0.0, 0.0);
                        }
                    }
                }
                if g.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
                    return Ok(false);
                }
                main.step_complex(a.factor_mut().as_mut_slice(), g.as_slice())?;
                a.apply_mask();
                Ok(true)
            }
            Engine::Adam {
                ansatz: Ansatz::Pn(a),
                main,
                weights,
            } => {
                let g = grad_pn(a, data, set, batch, loss_cfg)?;
                if g.states.iter().all(|z| z.re == 0.0 && z.im == 0.0) && g.weights.iter().all(|&v| v == 0.0) {
                    return Ok(false);
                }
                let mut q = a.states().clone();
                main.step_complex(q.as_mut_slice(), g.states.as_slice())?;
                let (opt, logits) = weights.as_mut().expect("PN engine carries a weight optimizer");
                opt.step(logits, &g.weights)?;
                *a = pn_project(logits, &q).map_err(|e| at_iteration(e, t))?;
                Ok(true)
            }
            Engine::Retraction {
                ansatz: Ansatz::Stiefel(a),
            } => {
                let g = grad_sm(a, data, set, batch, loss_cfg)?;
                let eta = decayed_eta(cfg.eta0, cfg.alpha, t as u64);
                match sm_retract_step(a, &g, eta) {
                    Ok(mut next) => {
                        if t % SM_RENORMALIZE_EVERY == 0 {
                            next.renormalize();
                        }
                        *a = next;
                        Ok(true)
                    }
                    Err(QstError::ZeroGradient) => Ok(false),
                    Err(e) => Err(at_iteration(e, t)),
                }
            }
            _ => unreachable!("engine and ansatz kinds are paired at construction"),
        }
    }
}

fn at_iteration(e: QstError, t: usize) -> QstError {
    match e {
        QstError::DegenerateAnsatz(msg) => QstError::DegenerateAnsatz(format!("iteration {t}: {msg}")),
        QstError::ConstraintViolation(msg) => QstError::ConstraintViolation(format!("iteration {t}: {msg}")),
        other => other,
    }
}

pub fn reconstruct(
    data: &DataSet,
    set: &ObservableSet,
    cfg: &RunConfig,
    truth: Option<&DensityMatrix>,
) -> Result<ReconstructionResult> {
    reconstruct_with(data, set, cfg, truth, |_| {})
}

/// [`reconstruct`] with a callback at every recorded iteration.
pub fn reconstruct_with(
    data: &DataSet,
    set: &ObservableSet,
    cfg: &RunConfig,
    truth: Option<&DensityMatrix>,
    mut observer: impl FnMut(&Snapshot<'_>),
) -> Result<ReconstructionResult> {
    cfg.validate(data.len())?;
    data.check_against(set)?;
    if let Some(t) = truth {
        if t.dim() != set.dim() {
            return Err(QstError::invalid("truth state dimension does not match the operator set"));
        }
    }
    let loss_cfg = LossConfig::new(cfg.lambda_l1)?;
    let ansatz = init_ansatz(cfg.kind, set.dim(), cfg.rank, derive_seed(cfg.seed, 0, 0))?;
    let mut engine = Engine::new(ansatz, cfg);
    let mut sampler = MinibatchSampler::new(data.len(), cfg.batch_size, derive_seed(cfg.seed, 1, 0))?;

    let mut result = ReconstructionResult {
        rho: DensityMatrix::maximally_mixed(set.dim()),
        record_iters: Vec::new(),
        loss_trace: Vec::new(),
        fidelity_trace: Vec::new(),
        time_trace: Vec::new(),
        solve_time_trace: Vec::new(),
        iterations_run: 0,
        stop_reason: StopReason::MaxIters,
        config: cfg.clone(),
    };
    let start = Instant::now();
    let mut solve = 0.0;
    let mut plateau_ref: Option<f64> = None;

    let mut record = |t: usize, engine: &Engine, solve: f64, result: &mut ReconstructionResult| -> Result<Option<StopReason>> {
        let rho = engine.ansatz().to_density().map_err(|e| at_iteration(e, t))?;
        let loss = full_loss(&rho, data, set, &loss_cfg)?;
        let fidelity = truth.map(|tr| uj_fidelity(&rho, tr)).transpose()?;
        observer(&Snapshot {
            iteration: t,
            rho: &rho,
            loss,
            fidelity,
        });
        result.record_iters.push(t);
        result.loss_trace.push(loss);
        if let Some(f) = fidelity {
            result.fidelity_trace.push(f);
        }
        result.time_trace.push(start.elapsed().as_secs_f64());
        result.solve_time_trace.push(solve);
        result.rho = rho;
        Ok(match (fidelity, cfg.fidelity_target) {
            (Some(f), Some(target)) if f >= target => Some(StopReason::FidelityTarget),
            _ => None,
        })
    };

    if let Some(reason) = record(0, &engine, 0.0, &mut result)? {
        result.stop_reason = reason;
        return Ok(result);
    }
    for t in 1..=cfg.max_iters {
        let tick = Instant::now();
        let batch = sampler.next_batch();
        let moved = engine.step(t, data, set, &batch, &loss_cfg, cfg)?;
        solve += tick.elapsed().as_secs_f64();
        result.iterations_run = t;
        if !moved {
            debug!("zero gradient at iteration {t}");
            record(t, &engine, solve, &mut result)?;
            result.stop_reason = StopReason::ZeroGradient;
            return Ok(result);
        }
        let last = t == cfg.max_iters;
        if t % cfg.record_every == 0 || last {
            if let Some(reason) = record(t, &engine, solve, &mut result)? {
                result.stop_reason = reason;
                return Ok(result);
            }
        }
        if cfg.early_stop && t % PLATEAU_WINDOW == 0 && !last {
            let rho = engine.ansatz().to_density()?;
            let now = full_loss(&rho, data, set, &loss_cfg)?;
            if let Some(prev) = plateau_ref {
                if (prev - now).abs() < PLATEAU_TOL {
                    record(t, &engine, solve, &mut result)?;
                    result.stop_reason = StopReason::LossPlateau;
                    return Ok(result);
                }
            }
            plateau_ref = Some(now);
        }
    }
    Ok(result)
}
