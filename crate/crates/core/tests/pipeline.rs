use std::fs::File;
use std::io::BufReader;

use gdqst::ansatz::AnsatzKind;
use gdqst::baseline::{imle_run, linear_inversion, ImleConfig};
use gdqst::linalg::{max_abs_diff, C64};
use gdqst::measurement::{depolarize, husimi_set, measure, pauli_set, subsample, DataSet};
use gdqst::metrics::{uj_fidelity, wigner};
use gdqst::optimize::{reconstruct, RunConfig};
use gdqst::qstates::{cat_state, ghz_state, random_density, DensityMatrix};
use proptest::prelude::*;

fn run(kind: AnsatzKind, rank: usize, data: &DataSet, n: usize, truth: &DensityMatrix, seed: u64) -> f64 {
    let set = pauli_set(n).unwrap();
    let mut cfg = RunConfig::new(kind, rank);
    cfg.batch_size = cfg.batch_size.min(data.len());
    cfg.seed = seed;
    let res = reconstruct(data, &set, &cfg, Some(truth)).unwrap();
    assert!(res.rho.validity().is_valid());
    res.final_fidelity().unwrap()
}

#[test]
fn every_parameterization_recovers_a_two_qubit_state() {
    let set = pauli_set(2).unwrap();
    let truth = random_density(4, 2, 17).unwrap();
    let data = measure(&truth, &set).unwrap();
    for kind in AnsatzKind::ALL {
        let f = run(kind, 4, &data, 2, &truth, 3);
        assert!(f >= 0.99, "{}: {f}", kind.name());
    }
}

#[test]
fn ghz_from_reduced_pauli_data() {
    let truth = ghz_state(3).unwrap().projector();
    let set = pauli_set(3).unwrap();
    let data = subsample(&measure(&truth, &set).unwrap(), 48, 5, true).unwrap();
    assert_eq!(data.len(), 48);
    let f = run(AnsatzKind::Cholesky, 1, &data, 3, &truth, 8);
    assert!(f >= 0.99, "{f}");
}

#[test]
fn same_seed_same_reconstruction() {
    let set = pauli_set(2).unwrap();
    let truth = random_density(4, 1, 4).unwrap();
    let data = measure(&truth, &set).unwrap();
    let mut cfg = RunConfig::new(AnsatzKind::Stiefel, 2);
    cfg.batch_size = 7;
    cfg.max_iters = 120;
    cfg.seed = 99;
    let a = reconstruct(&data, &set, &cfg, Some(&truth)).unwrap();
    let b = reconstruct(&data, &set, &cfg, Some(&truth)).unwrap();
    assert_eq!(a.rho, b.rho);
    assert_eq!(a.loss_trace, b.loss_trace);
    assert_eq!(a.fidelity_trace, b.fidelity_trace);
}

#[test]
fn depolarized_data_still_points_at_the_pure_state() {
    let set = pauli_set(2).unwrap();
    let truth = random_density(4, 1, 12).unwrap();
    let data = measure(&depolarize(&truth, 0.3).unwrap(), &set).unwrap();
    let f = run(AnsatzKind::Cholesky, 1, &data, 2, &truth, 1);
    let li = linear_inversion(&data, &set).unwrap();
    let li_fid = gdqst::metrics::uj_fidelity_matrix(truth.matrix(), &li).unwrap();
    assert!(f > 0.99 && f > li_fid, "{f} vs {li_fid}");
}

#[test]
fn cat_state_through_husimi_data_and_files() {
    let dim = 10;
    let truth = cat_state(C64::new(1.0, 0.5), dim).unwrap().projector();
    let set = husimi_set(3.0, 10, dim).unwrap();
    let data = measure(&truth, &set).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("husimi.csv");
    data.write_csv(File::create(&path).unwrap()).unwrap();
    let data = DataSet::read_csv(File::open(&path).unwrap()).unwrap();

    let mut cfg = RunConfig::new(AnsatzKind::ProjectiveNormalization, 1);
    cfg.batch_size = 64;
    cfg.max_iters = 1500;
    cfg.fidelity_target = Some(0.999);
    let gd = reconstruct(&data, &set, &cfg, Some(&truth)).unwrap();
    assert!(gd.final_fidelity().unwrap() >= 0.999);

    let trace = dir.path().join("trace.csv");
    gd.write_csv(File::create(&trace).unwrap()).unwrap();
    let rows = csv::Reader::from_path(&trace).unwrap().records().count();
    assert_eq!(rows, gd.record_iters.len());

    let state = dir.path().join("rho.txt");
    gd.rho.write_text(File::create(&state).unwrap()).unwrap();
    let back = DensityMatrix::read_text(BufReader::new(File::open(&state).unwrap())).unwrap();
    assert!(max_abs_diff(back.matrix(), gd.rho.matrix()) <= 1e-15);

    let ml = imle_run(&data, &set, &ImleConfig::new(400, 1e-12), Some(&truth)).unwrap();
    assert!(ml.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    assert!(uj_fidelity(&truth, &ml.rho).unwrap() > 0.9);

    let w_truth = wigner(&truth, 3.0, 21).unwrap();
    let w_gd = wigner(&gd.rho, 3.0, 21).unwrap();
    assert!(w_truth.max_abs_diff(&w_gd).unwrap() < 0.05);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn full_pauli_data_is_inverted_exactly(n in 1usize..=3, rank in 1usize..=8, seed in any::<u64>()) {
        let dim = 1 << n;
        let truth = random_density(dim, rank.min(dim), seed).unwrap();
        let set = pauli_set(n).unwrap();
        let data = measure(&truth, &set).unwrap();
        for v in data.values() {
            prop_assert!(v.abs() <= 1.0 + 1e-12);
        }
        let li = linear_inversion(&data, &set).unwrap();
        prop_assert!(max_abs_diff(&li, truth.matrix()) <= 1e-9);
    }

    #[test]
    fn depolarizing_keeps_states_valid(seed in any::<u64>(), eps in 0.0f64..=1.0) {
        let rho = random_density(8, 3, seed).unwrap();
        let out = depolarize(&rho, eps).unwrap();
        prop_assert!(out.validity().is_valid());
        prop_assert!(out.purity() <= rho.purity() + 1e-12);
    }
}
