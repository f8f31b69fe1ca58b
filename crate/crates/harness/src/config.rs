//! Experiment descriptions. A spec is resolved from command-line flags layered
//! over an optional TOML file, with per-experiment defaults filling the rest.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use gdqst::ansatz::AnsatzKind;
use gdqst::optimize::{default_eta0, DEFAULT_ALPHA, DEFAULT_BATCH_SIZE, DEFAULT_MAX_ITERS, DEFAULT_RECORD_EVERY};
use serde::{Deserialize, Serialize};

/// Largest register the harness will build a Pauli set for.
pub const MAX_QUBITS: usize = 8;
pub const DEFAULT_TRIALS: usize = 10;
pub const DEFAULT_RESAMPLES: usize = 15;
pub const CV_MAX_ITERS: usize = 5000;
pub const TIME_FIDELITY_TARGET: f64 = 0.99;
/// Cholesky settings for the cat benchmark; the default decay leaves too
/// small a step after a few thousand iterations.
pub const CV_CD_ETA0: f64 = 0.3;
pub const CV_CD_ALPHA: f64 = 0.9998;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Reconstruct,
    BenchTime,
    BenchRank,
    BenchData,
    BenchNoise,
    CvCat,
    SweepHyper,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Reconstruct,
        ExperimentKind::BenchTime,
        ExperimentKind::BenchRank,
        ExperimentKind::BenchData,
        ExperimentKind::BenchNoise,
        ExperimentKind::CvCat,
        ExperimentKind::SweepHyper,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Reconstruct => "reconstruct",
            ExperimentKind::BenchTime => "bench-time",
            ExperimentKind::BenchRank => "bench-rank",
            ExperimentKind::BenchData => "bench-data",
            ExperimentKind::BenchNoise => "bench-noise",
            ExperimentKind::CvCat => "cv-cat",
            ExperimentKind::SweepHyper => "sweep-hyper",
        }
    }

    /// Wall-clock comparisons are only meaningful one trial at a time.
    pub fn is_timing(self) -> bool {
        matches!(
            self,
            ExperimentKind::BenchTime | ExperimentKind::BenchRank | ExperimentKind::SweepHyper
        )
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Gd(AnsatzKind),
    LinearInversion,
    Imle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gd(kind) => kind.name(),
            Method::LinearInversion => "linear-inversion",
            Method::Imle => "imle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear-inversion" | "li" => Ok(Method::LinearInversion),
            "imle" => Ok(Method::Imle),
            other => other
                .parse::<AnsatzKind>()
                .map(Method::Gd)
                .map_err(|_| format!("unknown method '{other}' (cd, cd-tri, sm, pn, linear-inversion, imle)")),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StateFamily {
    /// Ginibre state of the requested rank (full rank when unset).
    Random,
    Ghz,
    Hadamard,
    Cat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Levels are the depolarizing strength ε.
    Depolarizing,
    /// Levels are the variance σ² of the additive noise.
    Gaussian,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Depolarizing => "depolarizing",
            NoiseKind::Gaussian => "gaussian",
        }
    }
}

/// Every tunable, all optional. Used both as the CLI flag set and as the
/// schema of the TOML config file; flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Trials (states or resamples) per grid point.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Clamped to the data-set size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub eta0: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Ansatz rank; defaults to the target rank.
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub record_every: Option<usize>,
    #[arg(long)]
    pub fidelity_target: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    #[arg(long, value_enum)]
    pub state: Option<StateFamily>,
    #[arg(long, value_delimiter = ',')]
    pub qubits: Option<Vec<usize>>,
    /// Rank of random target states; full rank when unset.
    #[arg(long)]
    pub target_rank: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub target_ranks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub ansatz_ranks: Option<Vec<usize>>,
    /// Reduced data-set sizes for bench-data.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub keep_identity: Option<bool>,
    #[arg(long, value_enum)]
    pub noise: Option<NoiseKind>,
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub batch_sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub eta0s: Option<Vec<f64>>,
    /// Fock truncation for continuous-variable states.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Coherent amplitude |ξ| of the cat state.
    #[arg(long)]
    pub xi: Option<f64>,
    /// Husimi grid half-width.
    #[arg(long)]
    pub extent: Option<f64>,
    /// Husimi grid points per axis.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub wigner_steps: Option<usize>,
    /// Worker threads; 1 for the timing benchmarks unless set.
    #[arg(long)]
    pub jobs: Option<usize>,
}

macro_rules! layer {
    ($top:ident, $bottom:ident; $($field:ident),* $(,)?) => {
        Overrides { $($field: $top.$field.or($bottom.$field)),* }
    };
}

impl Overrides {
    /// `self` wins wherever it is set.
    pub fn over(self, below: Overrides) -> Overrides {
        let top = self;
        layer!(top, below;
            seed, out_dir, trials, max_iters, batch_size, eta0, alpha, lambda, rank,
            record_every, fidelity_target, methods, state, qubits, target_rank, target_ranks,
            ansatz_ranks, sizes, keep_identity, noise, levels, batch_sizes, eta0s, dim, xi,
            extent, steps, wigner_steps, jobs,
        )
    }

    pub fn from_toml(text: &str) -> Result<Overrides> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Overrides> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Overrides::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpec {
    pub family: StateFamily,
    /// Register sizes for qubit families; ignored for the cat state.
    pub qubits: Vec<usize>,
    /// `None` means full rank.
    pub target_rank: Option<usize>,
    pub dim: usize,
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub max_iters: usize,
    pub batch_size: usize,
    /// `None` uses the per-method default.
    pub eta0: Option<f64>,
    pub alpha: Option<f64>,
    pub lambda: f64,
    pub ansatz_rank: Option<usize>,
    pub record_every: usize,
    pub fidelity_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub target_ranks: Vec<usize>,
    pub ansatz_ranks: Vec<usize>,
    pub sizes: Vec<usize>,
    pub keep_identity: bool,
    pub noise: NoiseKind,
    pub levels: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub eta0s: Vec<f64>,
    pub extent: f64,
    pub steps: usize,
    pub wigner_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub trials: usize,
    pub jobs: usize,
    pub methods: Vec<Method>,
    pub state: StateSpec,
    pub run: RunSettings,
    pub sweep: SweepSettings,
}

fn cd() -> Method {
    Method::Gd(AnsatzKind::Cholesky)
}
fn sm() -> Method {
    Method::Gd(AnsatzKind::Stiefel)
}
fn pn() -> Method {
    Method::Gd(AnsatzKind::ProjectiveNormalization)
}

impl ExperimentSpec {
    /// Fills everything `o` leaves unset with the defaults for `kind`, then validates.
    pub fn resolve(kind: ExperimentKind, o: Overrides) -> Result<ExperimentSpec> {
        use ExperimentKind::*;
        let methods = o.methods.unwrap_or_else(|| match kind {
            Reconstruct | SweepHyper => vec![cd()],
            BenchTime | BenchRank | BenchData => vec![cd(), sm(), pn()],
            BenchNoise => vec![
                cd(),
                sm(),
                pn(),
                Method::Gd(AnsatzKind::CholeskyTriangular),
                Method::LinearInversion,
            ],
            CvCat => vec![cd(), sm(), pn(), Method::Imle],
        });
        let family = o.state.unwrap_or(match kind {
            CvCat => StateFamily::Cat,
            BenchData => StateFamily::Ghz,
            _ => StateFamily::Random,
        });
        let qubits = o.qubits.unwrap_or_else(|| match kind {
            Reconstruct => vec![2],
            BenchTime => vec![1, 2, 3, 4, 5],
            BenchData => vec![5],
            _ => vec![4],
        });
        let target_rank = o.target_rank.or(match kind {
            BenchNoise => Some(1),
            _ => None,
        });
        let noise = o.noise.unwrap_or(NoiseKind::Depolarizing);
        let levels = o.levels.unwrap_or_else(|| match noise {
            NoiseKind::Depolarizing => vec![0.0, 0.1, 0.3, 0.5, 0.7, 0.9],
            NoiseKind::Gaussian => vec![1e-4, 1e-3, 1e-2, 1e-1],
        });
        let extent = o.extent.unwrap_or(4.0);
        let spec = ExperimentSpec {
            kind,
            seed: o.seed.unwrap_or(0),
            out_dir: o.out_dir.unwrap_or_else(|| PathBuf::from("results")),
            trials: o.trials.unwrap_or(match kind {
                BenchData => DEFAULT_RESAMPLES,
                _ => DEFAULT_TRIALS,
            }),
            jobs: o.jobs.unwrap_or_else(|| {
                if kind.is_timing() {
                    1
                } else {
                    std::thread::available_parallelism().map_or(1, |n| n.get())
                }
            }),
            methods,
            state: StateSpec {
                family,
                qubits,
                target_rank,
                dim: o.dim.unwrap_or(32),
                xi: o.xi.unwrap_or(2.0),
            },
            run: RunSettings {
                max_iters: o.max_iters.unwrap_or(match kind {
                    CvCat => CV_MAX_ITERS,
                    _ => DEFAULT_MAX_ITERS,
                }),
                batch_size: o.batch_size.unwrap_or(DEFAULT_BATCH_SIZE),
                eta0: o.eta0,
                alpha: o.alpha,
                lambda: o.lambda.unwrap_or(0.0),
                ansatz_rank: o.rank,
                record_every: o.record_every.unwrap_or(DEFAULT_RECORD_EVERY),
                fidelity_target: o.fidelity_target.or(match kind {
                    BenchTime | BenchRank => Some(TIME_FIDELITY_TARGET),
                    _ => None,
                }),
            },
            sweep: SweepSettings {
                target_ranks: o.target_ranks.unwrap_or_else(|| vec![1, 4, 16]),
                ansatz_ranks: o.ansatz_ranks.unwrap_or_else(|| vec![1, 4, 16]),
                sizes: o
                    .sizes
                    .unwrap_or_else(|| vec![50, 100, 150, 200, 300, 400, 600, 800, 1024]),
                keep_identity: o.keep_identity.unwrap_or(true),
                noise,
                levels,
                batch_sizes: o.batch_sizes.unwrap_or_else(|| vec![32, 64, 128, 256, 512]),
                eta0s: o.eta0s.unwrap_or_else(|| vec![0.05, 0.1, 0.5, 1.0, 2.0]),
                extent,
                steps: o.steps.unwrap_or(32),
                wigner_steps: o.wigner_steps.unwrap_or(64),
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            bail!("trials must be at least 1");
        }
        if self.jobs == 0 {
            bail!("jobs must be at least 1");
        }
        if self.methods.is_empty() {
            bail!("method list is empty");
        }
        let cv = self.state.family == StateFamily::Cat;
        if self.kind == ExperimentKind::CvCat && !cv {
            bail!("cv-cat needs the cat state");
        }
        if cv {
            if !matches!(self.kind, ExperimentKind::CvCat | ExperimentKind::Reconstruct) {
                bail!("the cat state is only supported by cv-cat and reconstruct");
            }
            if self.state.dim < 2 {
                bail!("Fock truncation must be at least 2");
            }
            if !(self.state.xi >= 0.0) || !self.state.xi.is_finite() {
                bail!("cat amplitude must be finite and non-negative");
            }
            if !(self.sweep.extent > 0.0) || self.sweep.steps < 2 || self.sweep.wigner_steps < 2 {
                bail!("phase-space grids need a positive extent and at least 2 steps");
            }
        } else {
            if self.methods.contains(&Method::Imle) {
                bail!("imle needs projector data (cat state on the Husimi grid)");
            }
            if self.state.qubits.is_empty() {
                bail!("qubit list is empty");
            }
            if let Some(&n) = self.state.qubits.iter().find(|&&n| n == 0 || n > MAX_QUBITS) {
                bail!("{n} qubits outside 1..={MAX_QUBITS}");
            }
        }
        if self.run.max_iters == 0 || self.run.record_every == 0 || self.run.batch_size == 0 {
            bail!("max_iters, record_every and batch_size must be positive");
        }
        if let Some(eta) = self.run.eta0 {
            if !(eta > 0.0) || !eta.is_finite() {
                bail!("eta0 must be positive");
            }
        }
        if let Some(a) = self.run.alpha {
            if !(a > 0.0 && a <= 1.0) {
                bail!("alpha must lie in (0, 1]");
            }
        }
        if !(self.run.lambda >= 0.0) || !self.run.lambda.is_finite() {
            bail!("lambda must be non-negative");
        }
        if self.run.ansatz_rank == Some(0) || self.state.target_rank == Some(0) {
            bail!("ranks must be positive");
        }
        if let Some(f) = self.run.fidelity_target {
            if !(0.0..=1.0).contains(&f) {
                bail!("fidelity target must lie in [0, 1]");
            }
        }
        let sw = &self.sweep;
        match self.kind {
            ExperimentKind::BenchRank => {
                if sw.target_ranks.is_empty() || sw.ansatz_ranks.is_empty() || sw.target_ranks.contains(&0) || sw.ansatz_ranks.contains(&0) {
                    bail!("rank sweeps need nonempty lists of positive ranks");
                }
            }
            ExperimentKind::BenchData => {
                if sw.sizes.is_empty() || sw.sizes.contains(&0) {
                    bail!("data sizes must be positive");
                }
                let smallest = self.state.qubits.iter().map(|&n| 1usize << (2 * n)).min().unwrap_or(0);
                if let Some(&s) = sw.sizes.iter().find(|&&s| s > smallest) {
                    bail!("data size {s} exceeds the {smallest} available Pauli values");
                }
            }
            ExperimentKind::BenchNoise => {
                if sw.levels.is_empty() {
                    bail!("noise level list is empty");
                }
                let ok = |l: f64| match sw.noise {
                    NoiseKind::Depolarizing => (0.0..=1.0).contains(&l),
                    NoiseKind::Gaussian => l >= 0.0 && l.is_finite(),
                };
                if let Some(l) = sw.levels.iter().find(|&&l| !ok(l)) {
                    bail!("{} level {l} out of range", sw.noise.name());
                }
            }
            ExperimentKind::SweepHyper => {
                if sw.batch_sizes.is_empty() || sw.eta0s.is_empty() || sw.batch_sizes.contains(&0) {
                    bail!("hyperparameter grids must be nonempty with positive batch sizes");
                }
                if sw.eta0s.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
                    bail!("step sizes must be positive");
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Step size for `kind`, honoring an explicit override.
    pub fn eta0_for(&self, kind: AnsatzKind) -> f64 {
        self.run.eta0.unwrap_or(match (self.kind, kind) {
            (ExperimentKind::CvCat, AnsatzKind::Cholesky) => CV_CD_ETA0,
            _ => default_eta0(kind),
        })
    }

    pub fn alpha_for(&self, kind: AnsatzKind) -> f64 {
        self.run.alpha.unwrap_or(match (self.kind, kind) {
            (ExperimentKind::CvCat, AnsatzKind::Cholesky) => CV_CD_ALPHA,
            _ => DEFAULT_ALPHA,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
