//! One row per completed (or aborted) trial, plus per-grid-point summaries.

use std::io::Write;

use anyhow::Result;
use serde::{Deserialize, Serialize};

/// Columns holding wall-clock measurements; everything else is reproducible from the seed.
pub const TIMING_COLUMNS: [&str; 4] = ["wall_seconds", "solve_seconds", "seconds_per_iter", "cum_time_s"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub experiment: String,
    pub method: String,
    /// Grid-point index within the experiment.
    pub case: usize,
    pub state: String,
    pub qubits: Option<usize>,
    pub dim: usize,
    pub target_rank: usize,
    pub ansatz_rank: Option<usize>,
    pub trial: usize,
    pub seed: u64,
    pub data_size: usize,
    pub noise: String,
    pub noise_level: f64,
    pub batch_size: Option<usize>,
    pub eta0: Option<f64>,
    pub alpha: Option<f64>,
    pub iterations: usize,
    pub stop_reason: String,
    pub reached_target: Option<bool>,
    pub final_fidelity: Option<f64>,
    pub final_loss: Option<f64>,
    /// Smallest eigenvalue of the output; negative only for linear inversion.
    pub min_eigenvalue: Option<f64>,
    pub wall_seconds: f64,
    pub solve_seconds: f64,
    pub seconds_per_iter: f64,
    pub error: Option<String>,
}

impl BenchRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

pub fn write_records<W: Write>(records: &[BenchRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: std::io::Read>(r: R) -> Result<Vec<BenchRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseSummary {
    pub case: usize,
    pub qubits: Option<usize>,
    pub dim: usize,
    pub target_rank: usize,
    pub ansatz_rank: Option<usize>,
    pub data_size: usize,
    pub noise_level: f64,
    pub batch_size: Option<usize>,
    pub eta0: Option<f64>,
    pub trials: usize,
    pub completed: usize,
    pub mean_fidelity: Option<f64>,
    pub std_fidelity: Option<f64>,
    pub min_fidelity: Option<f64>,
    pub reached_target: usize,
    pub mean_iterations: f64,
    pub wall_seconds: f64,
    pub seconds_per_iter: f64,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

/// Groups records of one method by case, in case order. Timing columns are means.
pub fn summarize(records: &[BenchRecord]) -> Vec<CaseSummary> {
    let mut cases: Vec<usize> = records.iter().map(|r| r.case).collect();
    cases.sort_unstable();
    cases.dedup();
    cases
        .into_iter()
        .map(|case| {
            let rows: Vec<&BenchRecord> = records.iter().filter(|r| r.case == case).collect();
            let done: Vec<&BenchRecord> = rows.iter().copied().filter(|r| r.ok()).collect();
            let fids: Vec<f64> = done.iter().filter_map(|r| r.final_fidelity).collect();
            let stats = mean_std(&fids);
            let avg = |f: fn(&BenchRecord) -> f64| {
                if done.is_empty() {
                    0.0
                } else {
                    done.iter().map(|r| f(r)).sum::<f64>() / done.len() as f64
                }
            };
            let first = rows[0];
            CaseSummary {
                case,
                qubits: first.qubits,
                dim: first.dim,
                target_rank: first.target_rank,
                ansatz_rank: first.ansatz_rank,
                data_size: first.data_size,
                noise_level: first.noise_level,
                batch_size: first.batch_size,
                eta0: first.eta0,
                trials: rows.len(),
                completed: done.len(),
                mean_fidelity: stats.map(|s| s.0),
                std_fidelity: stats.map(|s| s.1),
                min_fidelity: fids.iter().copied().reduce(f64::min),
                reached_target: done.iter().filter(|r| r.reached_target == Some(true)).count(),
                mean_iterations: avg(|r| r.iterations as f64),
                wall_seconds: avg(|r| r.wall_seconds),
                seconds_per_iter: avg(|r| r.seconds_per_iter),
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(summary: &[CaseSummary], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in summary {
        out.serialize(s)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(case: usize, trial: usize, fidelity: Option<f64>, error: Option<&str>) -> BenchRecord {
        BenchRecord {
            experiment: "bench-data".into(),
            method: "cd".into(),
            case,
            state: "ghz".into(),
            qubits: Some(2),
            dim: 4,
            target_rank: 1,
            ansatz_rank: Some(1),
            trial,
            seed: 11,
            data_size: 10,
            noise: "none".into(),
            noise_level: 0.0,
            batch_size: Some(10),
            eta0: Some(1.0),
            alpha: Some(0.999),
            iterations: 100,
            stop_reason: "max-iters".into(),
            reached_target: None,
            final_fidelity: fidelity,
            final_loss: Some(0.0),
            min_eigenvalue: Some(0.0),
            wall_seconds: 0.5,
            solve_seconds: 0.25,
            seconds_per_iter: 0.0025,
            error: error.map(String::from),
        }
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[]), None);
        assert_eq!(mean_std(&[2.0]), Some((2.0, 0.0)));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn summary_skips_failed_trials() {
        let rows = vec![
            record(0, 0, Some(0.9), None),
            record(0, 1, Some(0.7), None),
            record(0, 2, None, Some("degenerate")),
            record(1, 0, Some(1.0), None),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].trials, s[0].completed), (3, 2));
        assert!((s[0].mean_fidelity.unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(s[0].min_fidelity, Some(0.7));
        assert_eq!(s[1].mean_fidelity, Some(1.0));
    }

    #[test]
    fn records_survive_csv() {
        let rows = vec![record(0, 0, Some(0.5), None), record(0, 1, None, Some("failed, badly"))];
        let mut buf = Vec::new();
        write_records(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("experiment,method,case,"));
        assert_eq!(read_records(buf.as_slice()).unwrap(), rows);
    }
}
