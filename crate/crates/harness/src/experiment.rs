//! Runs an [`ExperimentSpec`]: expands it into grid points, runs every
//! (grid point, trial) on a bounded worker pool and writes the CSV artifacts.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use gdqst::ansatz::AnsatzKind;
use gdqst::baseline::{imle_run, linear_inversion, ImleConfig, ImleResult};
use gdqst::linalg::{HermitianEigen, C64};
use gdqst::measurement::{
    depolarize, gaussian_noise, husimi_set, measure, pauli_set, subsample, DataSet, ObservableSet, SetKind,
};
use gdqst::metrics::{uj_fidelity_matrix, wigner, PhaseGrid};
use gdqst::objective::{full_loss, LossConfig};
use gdqst::optimize::{reconstruct, ReconstructionResult, RunConfig};
use gdqst::qstates::{cat_state, ghz_state, hadamard_state, random_density, DensityMatrix};
use gdqst::random::{derive_seed, rng};
use log::{info, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentKind, ExperimentSpec, Method, NoiseKind, StateFamily};
use crate::record::{summarize, write_records, write_summary, BenchRecord};

const STATE_STREAM: u64 = 10;
const NOISE_STREAM: u64 = 11;
const SUBSAMPLE_STREAM: u64 = 12;
const RUN_STREAM: u64 = 13;
/// iMLE stops early only once an update moves ρ by less than this (Frobenius).
pub const IMLE_TOL: f64 = 1e-12;

/// One grid point of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub index: usize,
    /// `None` for the continuous-variable state.
    pub qubits: Option<usize>,
    pub dim: usize,
    /// `None` means full rank.
    pub target_rank: Option<usize>,
    pub ansatz_rank: Option<usize>,
    pub size: Option<usize>,
    pub noise: Option<(NoiseKind, f64)>,
    pub batch_size: Option<usize>,
    pub eta0: Option<f64>,
}

impl Case {
    fn base(index: usize, spec: &ExperimentSpec, qubits: Option<usize>) -> Case {
        let dim = qubits.map_or(spec.state.dim, |n| 1 << n);
        let target_rank = match spec.state.family {
            StateFamily::Random => spec.state.target_rank.map(|r| r.min(dim)),
            _ => Some(1),
        };
        Case {
            index,
            qubits,
            dim,
            target_rank,
            ansatz_rank: None,
            size: None,
            noise: None,
            batch_size: None,
            eta0: None,
        }
    }

    fn rank(&self) -> usize {
        self.target_rank.unwrap_or(self.dim)
    }
}

/// Grid points in output order.
pub fn cases(spec: &ExperimentSpec) -> Vec<Case> {
    let registers: Vec<Option<usize>> = if spec.state.family == StateFamily::Cat {
        vec![None]
    } else {
        spec.state.qubits.iter().map(|&n| Some(n)).collect()
    };
    let mut out = Vec::new();
    let mut push = |mut c: Case| {
        c.index = out.len();
        out.push(c);
    };
    let sw = &spec.sweep;
    for &q in &registers {
        let base = Case::base(0, spec, q);
        match spec.kind {
            ExperimentKind::Reconstruct | ExperimentKind::BenchTime | ExperimentKind::CvCat => push(base),
            ExperimentKind::BenchRank => {
                for &tr in sw.target_ranks.iter().filter(|&&r| r <= base.dim) {
                    for &ar in sw.ansatz_ranks.iter().filter(|&&r| r <= base.dim) {
                        push(Case {
                            target_rank: Some(tr),
                            ansatz_rank: Some(ar),
                            ..base.clone()
                        });
                    }
                }
            }
            ExperimentKind::BenchData => {
                for &s in &sw.sizes {
                    push(Case {
                        size: Some(s),
                        ..base.clone()
                    });
                }
            }
            ExperimentKind::BenchNoise => {
                for &l in &sw.levels {
                    push(Case {
                        noise: Some((sw.noise, l)),
                        ..base.clone()
                    });
                }
            }
            ExperimentKind::SweepHyper => {
                for &b in &sw.batch_sizes {
                    for &e in &sw.eta0s {
                        push(Case {
                            batch_size: Some(b),
                            eta0: Some(e),
                            ..base.clone()
                        });
                    }
                }
            }
        }
    }
    out
}

/// Seed of the target state; shared by every method and noise level of a trial.
pub fn state_seed(spec: &ExperimentSpec, case: &Case, trial: usize) -> u64 {
    let key = ((case.qubits.unwrap_or(0) as u64) << 32) | case.rank() as u64;
    derive_seed(derive_seed(spec.seed, STATE_STREAM, key), STATE_STREAM, trial as u64)
}

/// Seed handed to the optimizer (ansatz and batches).
pub fn run_seed(spec: &ExperimentSpec, trial: usize) -> u64 {
    derive_seed(spec.seed, RUN_STREAM, trial as u64)
}

pub fn target_state(spec: &ExperimentSpec, case: &Case, trial: usize) -> Result<DensityMatrix> {
    let seed = state_seed(spec, case, trial);
    let rho = match (spec.state.family, case.qubits) {
        (StateFamily::Random, _) => random_density(case.dim, case.rank(), seed)?,
        (StateFamily::Ghz, Some(n)) => ghz_state(n)?.projector(),
        (StateFamily::Hadamard, Some(n)) => hadamard_state(n)?.projector(),
        (StateFamily::Cat, None) => {
            let phase = rng(seed).random::<f64>() * TAU;
            cat_state(C64::from_polar(spec.state.xi, phase), spec.state.dim)?.projector()
        }
        (family, q) => return Err(anyhow!("state {family:?} with register {q:?}")),
    };
    Ok(rho)
}

fn observable_set(spec: &ExperimentSpec, case: &Case) -> Result<ObservableSet> {
    Ok(match case.qubits {
        Some(n) => pauli_set(n)?,
        None => husimi_set(spec.sweep.extent, spec.sweep.steps, spec.state.dim)?,
    })
}

/// Measured (noisy, possibly reduced) data for one trial.
pub fn trial_data(
    spec: &ExperimentSpec,
    case: &Case,
    set: &ObservableSet,
    truth: &DensityMatrix,
    trial: usize,
) -> Result<DataSet> {
    let seed = state_seed(spec, case, trial);
    let source = match case.noise {
        Some((NoiseKind::Depolarizing, eps)) => depolarize(truth, eps)?,
        _ => truth.clone(),
    };
    let mut data = measure(&source, set)?;
    if let Some((NoiseKind::Gaussian, var)) = case.noise {
        data = gaussian_noise(&data, var.sqrt(), derive_seed(seed, NOISE_STREAM, 0))?;
    }
    if let Some(size) = case.size {
        let keep = spec.sweep.keep_identity && set.kind() == SetKind::Pauli;
        data = subsample(&data, size, derive_seed(seed, SUBSAMPLE_STREAM, case.index as u64), keep)?;
    }
    Ok(data)
}

fn state_label(spec: &ExperimentSpec, case: &Case) -> String {
    match spec.state.family {
        StateFamily::Random => match case.target_rank {
            Some(r) => format!("random-r{r}"),
            None => "random-full".into(),
        },
        StateFamily::Ghz => "ghz".into(),
        StateFamily::Hadamard => "hadamard".into(),
        StateFamily::Cat => format!("cat-xi{}", spec.state.xi),
    }
}

/// Output of one method on one trial.
enum Run {
    Gd(ReconstructionResult),
    Imle(ImleResult),
    Direct,
}

struct MethodOutcome {
    record: BenchRecord,
    run: Option<Run>,
    rho: Option<DensityMatrix>,
}

struct TrialOutcome {
    case: usize,
    trial: usize,
    truth: Option<DensityMatrix>,
    methods: Vec<MethodOutcome>,
}

fn blank_record(spec: &ExperimentSpec, case: &Case, method: Method, trial: usize) -> BenchRecord {
    let (noise, noise_level) = match case.noise {
        Some((k, l)) => (k.name().to_string(), l),
        None => ("none".to_string(), 0.0),
    };
    BenchRecord {
        experiment: spec.kind.name().into(),
        method: method.name().into(),
        case: case.index,
        state: state_label(spec, case),
        qubits: case.qubits,
        dim: case.dim,
        target_rank: case.rank(),
        ansatz_rank: None,
        trial,
        seed: run_seed(spec, trial),
        data_size: 0,
        noise,
        noise_level,
        batch_size: None,
        eta0: None,
        alpha: None,
        iterations: 0,
        stop_reason: String::new(),
        reached_target: None,
        final_fidelity: None,
        final_loss: None,
        min_eigenvalue: None,
        wall_seconds: 0.0,
        solve_seconds: 0.0,
        seconds_per_iter: 0.0,
        error: None,
    }
}

fn gd_config(spec: &ExperimentSpec, case: &Case, kind: AnsatzKind, trial: usize, data_len: usize) -> RunConfig {
    let rank = match kind {
        AnsatzKind::CholeskyTriangular => case.dim,
        _ => case
            .ansatz_rank
            .or(spec.run.ansatz_rank)
            .unwrap_or_else(|| case.rank())
            .min(case.dim),
    };
    let mut cfg = RunConfig::new(kind, rank);
    cfg.max_iters = spec.run.max_iters;
    cfg.batch_size = case.batch_size.unwrap_or(spec.run.batch_size).min(data_len);
    cfg.eta0 = case.eta0.unwrap_or_else(|| spec.eta0_for(kind));
    cfg.alpha = spec.alpha_for(kind);
    cfg.lambda_l1 = spec.run.lambda;
    cfg.seed = run_seed(spec, trial);
    cfg.record_every = spec.run.record_every;
    cfg.fidelity_target = spec.run.fidelity_target;
    cfg
}

fn run_method(
    spec: &ExperimentSpec,
    case: &Case,
    set: &ObservableSet,
    data: &DataSet,
    truth: &DensityMatrix,
    method: Method,
    trial: usize,
) -> Result<MethodOutcome> {
    let mut rec = blank_record(spec, case, method, trial);
    rec.data_size = data.len();
    let loss_cfg = LossConfig::new(spec.run.lambda)?;
    let (run, rho) = match method {
        Method::Gd(kind) => {
            let cfg = gd_config(spec, case, kind, trial, data.len());
            rec.ansatz_rank = Some(cfg.rank);
            rec.batch_size = Some(cfg.batch_size);
            rec.eta0 = Some(cfg.eta0);
            rec.alpha = Some(cfg.alpha);
            let res = reconstruct(data, set, &cfg, Some(truth))?;
            rec.iterations = res.iterations_run;
            rec.stop_reason = res.stop_reason.name().into();
            rec.final_fidelity = res.final_fidelity();
            rec.final_loss = Some(res.final_loss());
            rec.wall_seconds = res.total_seconds();
            rec.solve_seconds = res.solve_seconds();
            rec.seconds_per_iter = res.seconds_per_iteration();
            let rho = res.rho.clone();
            (Run::Gd(res), Some(rho))
        }
        Method::Imle => {
            let mut cfg = ImleConfig::new(spec.run.max_iters, IMLE_TOL);
            cfg.record_every = spec.run.record_every;
            cfg.fidelity_target = spec.run.fidelity_target;
            let res = imle_run(data, set, &cfg, Some(truth))?;
            rec.iterations = res.iterations_run;
            rec.stop_reason = if res.converged { "converged" } else { "max-iters" }.into();
            if cfg.fidelity_target.is_some() && res.iterations_run < cfg.max_iters && !res.converged {
                rec.stop_reason = "fidelity-target".into();
            }
            rec.final_fidelity = res.fidelity_trace.last().copied();
            rec.final_loss = Some(full_loss(&res.rho, data, set, &loss_cfg)?);
            rec.wall_seconds = res.time_trace.last().copied().unwrap_or(0.0);
            rec.solve_seconds = res.solve_time_trace.last().copied().unwrap_or(0.0);
            rec.seconds_per_iter = if res.iterations_run > 0 {
                rec.solve_seconds / res.iterations_run as f64
            } else {
                0.0
            };
            let rho = res.rho.clone();
            (Run::Imle(res), Some(rho))
        }
        Method::LinearInversion => {
            let clock = Instant::now();
            let m = linear_inversion(data, set)?;
            rec.solve_seconds = clock.elapsed().as_secs_f64();
            rec.final_fidelity = Some(uj_fidelity_matrix(truth.matrix(), &m)?);
            rec.wall_seconds = clock.elapsed().as_secs_f64();
            rec.seconds_per_iter = rec.solve_seconds;
            rec.stop_reason = "direct".into();
            rec.min_eigenvalue = Some(HermitianEigen::new(&m).min());
            // Not a valid state in general, so it is never written out as one.
            (Run::Direct, None)
        }
    };
    if let Some(rho) = &rho {
        let v = rho.validity();
        if !v.is_valid() {
            return Err(anyhow!("{method} produced an invalid state: {v:?}"));
        }
        rec.min_eigenvalue = Some(rho.eigen().min());
    }
    if let (Some(target), Some(f)) = (spec.run.fidelity_target, rec.final_fidelity) {
        rec.reached_target = Some(f >= target);
    }
    Ok(MethodOutcome {
        record: rec,
        run: Some(run),
        rho,
    })
}

fn run_trial(spec: &ExperimentSpec, case: &Case, set: &ObservableSet, trial: usize) -> TrialOutcome {
    let prepared = target_state(spec, case, trial)
        .and_then(|truth| trial_data(spec, case, set, &truth, trial).map(|data| (truth, data)));
    let (truth, data) = match prepared {
        Ok(p) => p,
        Err(e) => {
            warn!("{} case {} trial {trial}: {e:#}", spec.kind, case.index);
            return TrialOutcome {
                case: case.index,
                trial,
                truth: None,
                methods: spec
                    .methods
                    .iter()
                    .map(|&m| MethodOutcome {
                        record: BenchRecord {
                            error: Some(format!("{e:#}")),
                            ..blank_record(spec, case, m, trial)
                        },
                        run: None,
                        rho: None,
                    })
                    .collect(),
            };
        }
    };
    let methods = spec
        .methods
        .iter()
        .map(|&m| match run_method(spec, case, set, &data, &truth, m, trial) {
            Ok(out) => {
                info!(
                    "{} {m} case {} trial {trial}: F = {:?}",
                    spec.kind, case.index, out.record.final_fidelity
                );
                out
            }
            Err(e) => {
                warn!("{} {m} case {} trial {trial}: {e:#}", spec.kind, case.index);
                let mut record = blank_record(spec, case, m, trial);
                record.data_size = data.len();
                record.error = Some(format!("{e:#}"));
                MethodOutcome {
                    record,
                    run: None,
                    rho: None,
                }
            }
        })
        .collect();
    TrialOutcome {
        case: case.index,
        trial,
        truth: Some(truth),
        methods,
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    /// Grouped by method (spec order), then case, then trial.
    pub records: Vec<BenchRecord>,
    /// Paths relative to the output directory.
    pub files: Vec<PathBuf>,
    pub failed: usize,
}

impl ExperimentOutcome {
    pub fn records_for(&self, method: Method) -> impl Iterator<Item = &BenchRecord> {
        let name = method.name();
        self.records.iter().filter(move |r| r.method == name)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    trials_failed: usize,
    files: Vec<String>,
    spec: &'a ExperimentSpec,
}

struct Writer<'a> {
    root: &'a Path,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn create(&mut self, rel: PathBuf) -> Result<BufWriter<File>> {
        let path = self.root.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.files.push(rel);
        Ok(BufWriter::new(f))
    }
}

fn write_imle_trace<W: std::io::Write>(res: &ImleResult, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iter", "cum_time_s", "loglik", "fidelity"])?;
    for (k, &it) in res.record_iters.iter().enumerate() {
        out.write_record(&[
            it.to_string(),
            res.time_trace[k].to_string(),
            res.loglik_trace[it].to_string(),
            res.fidelity_trace.get(k).map(|f| f.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn write_grid(w: &mut Writer<'_>, rel: PathBuf, grid: &PhaseGrid) -> Result<()> {
    grid.write_csv(w.create(rel)?)?;
    Ok(())
}

/// Runs every trial and writes `<kind>_<method>.csv`, `<kind>_<method>_summary.csv`,
/// traces, states, Wigner grids (cv-cat) and `manifest.toml` under `spec.out_dir`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    fs::create_dir_all(&spec.out_dir).with_context(|| format!("creating {}", spec.out_dir.display()))?;
    let grid = cases(spec);
    let mut sets: HashMap<Option<usize>, ObservableSet> = HashMap::new();
    for c in &grid {
        if !sets.contains_key(&c.qubits) {
            sets.insert(c.qubits, observable_set(spec, c)?);
        }
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..spec.trials).map(move |t| (c, t)))
        .collect();
    info!(
        "{}: {} grid points x {} trials x {} methods on {} worker(s)",
        spec.kind,
        grid.len(),
        spec.trials,
        spec.methods.len(),
        spec.jobs
    );
    let pool = rayon::ThreadPoolBuilder::new().num_threads(spec.jobs).build()?;
    let outcomes: Vec<TrialOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, t)| run_trial(spec, &grid[c], &sets[&grid[c].qubits], t))
            .collect()
    });

    let kind = spec.kind.name();
    let mut w = Writer {
        root: &spec.out_dir,
        files: Vec::new(),
    };
    let artifacts = matches!(spec.kind, ExperimentKind::Reconstruct | ExperimentKind::CvCat);
    let wigner_grids = spec.kind == ExperimentKind::CvCat;
    let (extent, wsteps) = (spec.sweep.extent, spec.sweep.wigner_steps);
    if wigner_grids {
        for o in outcomes.iter().filter(|o| o.case == 0) {
            if let Some(truth) = &o.truth {
                write_grid(&mut w, format!("wigner/{kind}_truth_trial{}.csv", o.trial).into(), &wigner(truth, extent, wsteps)?)?;
            }
        }
    }
    let mut records = Vec::new();
    for (mi, method) in spec.methods.iter().enumerate() {
        let name = method.name();
        let rows: Vec<BenchRecord> = outcomes.iter().map(|o| o.methods[mi].record.clone()).collect();
        write_records(&rows, w.create(format!("{kind}_{name}.csv").into())?)?;
        write_summary(&summarize(&rows), w.create(format!("{kind}_{name}_summary.csv").into())?)?;
        if artifacts {
            for o in &outcomes {
                let m = &o.methods[mi];
                let tag = format!("{kind}_{name}_case{}_trial{}", o.case, o.trial);
                match &m.run {
                    Some(Run::Gd(res)) => res.write_csv(w.create(format!("traces/{tag}.csv").into())?)?,
                    Some(Run::Imle(res)) => write_imle_trace(res, w.create(format!("traces/{tag}.csv").into())?)?,
                    _ => {}
                }
                if let Some(rho) = &m.rho {
                    rho.write_text(w.create(format!("states/{tag}.txt").into())?)?;
                    if wigner_grids {
                        write_grid(&mut w, format!("wigner/{kind}_{name}_trial{}.csv", o.trial).into(), &wigner(rho, extent, wsteps)?)?;
                    }
                }
            }
        }
        records.extend(rows);
    }
    let failed = records.iter().filter(|r| !r.ok()).count();
    let manifest = Manifest {
        experiment: kind,
        trials_failed: failed,
        files: w.files.iter().map(|p| p.display().to_string()).collect(),
        spec,
    };
    let text = toml::to_string(&manifest)?;
    let path = spec.out_dir.join("manifest.toml");
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    w.files.push("manifest.toml".into());
    if failed > 0 {
        warn!("{failed} trial(s) failed; see the error column");
    }
    Ok(ExperimentOutcome {
        records,
        files: w.files,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Overrides;

    fn spec(kind: ExperimentKind, o: Overrides) -> ExperimentSpec {
        ExperimentSpec::resolve(kind, o).unwrap()
    }

    #[test]
    fn grid_shapes() {
        let rank = spec(ExperimentKind::BenchRank, Overrides { qubits: Some(vec![2]), ..Default::default() });
        // ranks above dim 4 are dropped: target {1, 4} x ansatz {1, 4}
        let c = cases(&rank);
        assert_eq!(c.len(), 4);
        assert_eq!(c.iter().map(|c| c.index).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!((c[1].target_rank, c[1].ansatz_rank), (Some(1), Some(4)));

        let hyper = spec(ExperimentKind::SweepHyper, Overrides::default());
        assert_eq!(cases(&hyper).len(), hyper.sweep.batch_sizes.len() * hyper.sweep.eta0s.len());

        let cat = spec(ExperimentKind::CvCat, Overrides::default());
        let c = cases(&cat);
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].qubits, c[0].dim, c[0].target_rank), (None, 32, Some(1)));
    }

    #[test]
    fn states_are_shared_across_noise_levels_and_differ_across_trials() {
        let s = spec(ExperimentKind::BenchNoise, Overrides { qubits: Some(vec![2]), ..Default::default() });
        let c = cases(&s);
        let a = target_state(&s, &c[0], 0).unwrap();
        let b = target_state(&s, &c[3], 0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, target_state(&s, &c[0], 1).unwrap());
        assert_eq!(a.numerical_rank(), 1);
    }

    #[test]
    fn zero_noise_data_equals_clean_data() {
        for noise in [NoiseKind::Depolarizing, NoiseKind::Gaussian] {
            let s = spec(
                ExperimentKind::BenchNoise,
                Overrides {
                    qubits: Some(vec![2]),
                    noise: Some(noise),
                    levels: Some(vec![0.0]),
                    ..Default::default()
                },
            );
            let c = &cases(&s)[0];
            let set = observable_set(&s, c).unwrap();
            let truth = target_state(&s, c, 0).unwrap();
            let clean = measure(&truth, &set).unwrap();
            assert_eq!(trial_data(&s, c, &set, &truth, 0).unwrap(), clean);
        }
    }

    #[test]
    fn subsampled_data_keeps_identity() {
        let s = spec(
            ExperimentKind::BenchData,
            Overrides {
                qubits: Some(vec![2]),
                sizes: Some(vec![5]),
                ..Default::default()
            },
        );
        let c = &cases(&s)[0];
        let set = observable_set(&s, c).unwrap();
        let truth = target_state(&s, c, 3).unwrap();
        let data = trial_data(&s, c, &set, &truth, 3).unwrap();
        assert_eq!(data.len(), 5);
        assert!(data.entries().iter().any(|e| e.operator_index == 0));
    }

    #[test]
    fn cat_phase_is_seeded() {
        let s = spec(ExperimentKind::CvCat, Overrides { dim: Some(12), xi: Some(1.0), ..Default::default() });
        let c = &cases(&s)[0];
        let a = target_state(&s, c, 0).unwrap();
        assert_eq!(a, target_state(&s, c, 0).unwrap());
        assert_ne!(a, target_state(&s, c, 1).unwrap());
    }
}
