//! Measurement operators and simulated expectation-value data.
//!
//! Operators are stored in whichever form makes `Tr(Π ρ)` and `Π v` cheap:
//! dense matrices, operator-free Pauli strings, or scaled rank-1 projectors.
//! Every form can be materialized as a dense matrix on demand.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::seq::index::sample;

use crate::error::{QstError, Result};
use crate::linalg::{CMatrix, CVector, C64, I, ONE, ZERO};
use crate::qstates::{coherent_series, DensityMatrix};
use crate::random::{normal, rng};

/// Largest register whose Pauli operators are materialized as dense matrices.
pub const DENSE_PAULI_MAX_QUBITS: usize = 5;

/// Tensor product of single-qubit Paulis acting as a signed permutation:
/// `P|j⟩ = phase(j) |j ⊕ x⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PauliString {
    n_qubits: usize,
    x_mask: usize,
    z_mask: usize,
    y_count: u32,
}

impl PauliString {
    /// Letters from `I, X, Y, Z`; the first letter acts on qubit 0 (the most significant bit).
    pub fn from_letters(letters: &str) -> Result<Self> {
        let n = letters.chars().count();
        if n == 0 {
            return Err(QstError::invalid("empty Pauli string"));
        }
        let mut p = PauliString {
            n_qubits: n,
            x_mask: 0,
            z_mask: 0,
            y_count: 0,
        };
        for (k, ch) in letters.chars().enumerate() {
            let bit = 1usize << (n - 1 - k);
            match ch.to_ascii_uppercase() {
                'I' => {}
                'X' => p.x_mask |= bit,
                'Y' => {
                    p.x_mask |= bit;
                    p.z_mask |= bit;
                    p.y_count += 1;
                }
                'Z' => p.z_mask |= bit,
                other => return Err(QstError::invalid(format!("unknown Pauli letter {other:?}"))),
            }
        }
        Ok(p)
    }

    /// Lexicographic index in `{I,X,Y,Z}^n` with `I < X < Y < Z`.
    pub fn from_index(n_qubits: usize, index: usize) -> Self {
        let mut p = PauliString {
            n_qubits,
            x_mask: 0,
            z_mask: 0,
            y_count: 0,
        };
        for k in 0..n_qubits {
            let letter = (index >> (2 * (n_qubits - 1 - k))) & 3;
            let bit = 1usize << (n_qubits - 1 - k);
            match letter {
                1 => p.x_mask |= bit,
                2 => {
                    p.x_mask |= bit;
                    p.z_mask |= bit;
                    p.y_count += 1;
                }
                3 => p.z_mask |= bit,
                _ => {}
            }
        }
        p
    }

    pub fn letters(&self) -> String {
        (0..self.n_qubits)
            .map(|k| {
                let bit = 1usize << (self.n_qubits - 1 - k);
                match (self.x_mask & bit != 0, self.z_mask & bit != 0) {
                    (false, false) => 'I',
                    (true, false) => 'X',
                    (true, true) => 'Y',
                    (false, true) => 'Z',
                }
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    #[inline]
    fn phase(&self, j: usize) -> C64 {
        let base = match self.y_count % 4 {
            0 => ONE,
            1 => I,
            2 => -ONE,
            _ => -I,
        };
        if (j & self.z_mask).count_ones() % 2 == 1 {
            -base
        } else {
            base
        }
    }

    pub fn to_matrix(&self) -> CMatrix {
        let d = self.dim();
        let mut m = CMatrix::zeros(d, d);
        for j in 0..d {
            m[(j ^ self.x_mask, j)] = self.phase(j);
        }
        m
    }
}

/// A single Hermitian measurement operator.
#[derive(Debug, Clone, PartialEq)]
pub enum Observable {
    Dense(CMatrix),
    Pauli(PauliString),
    /// `weight · |v⟩⟨v|`.
    Projector { vector: CVector, weight: f64 },
}

impl Observable {
    pub fn dim(&self) -> usize {
        match self {
            Observable::Dense(m) => m.nrows(),
            Observable::Pauli(p) => p.dim(),
            Observable::Projector { vector, .. } => vector.len(),
        }
    }

    pub fn to_matrix(&self) -> CMatrix {
        match self {
            Observable::Dense(m) => m.clone(),
            Observable::Pauli(p) => p.to_matrix(),
            Observable::Projector { vector, weight } => (vector * vector.adjoint()).scale(*weight),
        }
    }

    /// `Tr(Π ρ)` for an arbitrary square `ρ`.
    pub fn expectation(&self, rho: &CMatrix) -> C64 {
        match self {
            Observable::Dense(m) => {
                let d = m.nrows();
                let mut acc = ZERO;
                for b in 0..d {
                    for a in 0..d {
                        acc += m[(a, b)] * rho[(b, a)];
                    }
                }
                acc
            }
            Observable::Pauli(p) => {
                let mut acc = ZERO;
                for j in 0..p.dim() {
                    acc += p.phase(j) * rho[(j, j ^ p.x_mask)];
                }
                acc
            }
            Observable::Projector { vector, weight } => vector.dotc(&(rho * vector)) * *weight,
        }
    }

    /// `Re Tr(Π ρ)` assuming `ρ` is Hermitian.
    #[inline]
    pub fn expectation_re(&self, rho: &CMatrix) -> f64 {
        match self {
            Observable::Dense(m) => {
                // Tr(Πρ) = Σ Π_ab ρ_ba = Σ Π_ab conj(ρ_ab) when ρ = ρ†.
                let mut acc = 0.0;
                for (p, r) in m.as_slice().iter().zip(rho.as_slice()) {
                    acc += p.re * r.re + p.im * r.im;
                }
                acc
            }
            Observable::Pauli(_) => self.expectation(rho).re,
            Observable::Projector { vector, weight } => {
                let d = vector.len();
                let mut acc = 0.0;
                for b in 0..d {
                    let col = rho.column(b);
                    let mut s = ZERO;
                    for a in 0..d {
                        s += vector[a].conj() * col[a];
                    }
                    acc += (s * vector[b]).re;
                }
                acc * weight
            }
        }
    }

    /// `Re v†Πv`.
    pub fn quad_form(&self, v: &[C64]) -> f64 {
        match self {
            Observable::Dense(m) => {
                let d = m.nrows();
                let mut acc = 0.0;
                for (b, &vb) in v.iter().enumerate() {
                    let col = &m.as_slice()[b * d..(b + 1) * d];
                    let mut s = ZERO;
                    for (&mab, &va) in col.iter().zip(v) {
                        s += va.conj() * mab;
                    }
                    acc += (s * vb).re;
                }
                acc
            }
            Observable::Pauli(p) => {
                let mut acc = ZERO;
                for (j, &vj) in v.iter().enumerate() {
                    acc += v[j ^ p.x_mask].conj() * p.phase(j) * vj;
                }
                acc.re
            }
            Observable::Projector { vector, weight } => {
                let overlap: C64 = vector.iter().zip(v).map(|(a, b)| a.conj() * b).sum();
                overlap.norm_sqr() * weight
            }
        }
    }

    /// `out = Π v`.
    pub fn apply(&self, v: &[C64], out: &mut [C64]) {
        debug_assert_eq!(v.len(), out.len());
        match self {
            Observable::Dense(m) => {
                out.iter_mut().for_each(|o| *o = ZERO);
                let d = m.nrows();
                for (b, &vb) in v.iter().enumerate() {
                    if vb == ZERO {
                        continue;
                    }
                    let col = &m.as_slice()[b * d..(b + 1) * d];
                    for (o, &mab) in out.iter_mut().zip(col) {
                        *o += mab * vb;
                    }
                }
            }
            Observable::Pauli(p) => {
                for (j, &vj) in v.iter().enumerate() {
                    out[j ^ p.x_mask] = p.phase(j) * vj;
                }
            }
            Observable::Projector { vector, weight } => {
                let overlap: C64 = vector.iter().zip(v).map(|(a, b)| a.conj() * b).sum::<C64>() * *weight;
                for (o, a) in out.iter_mut().zip(vector.iter()) {
                    *o = a * overlap;
                }
            }
        }
    }

    /// `target += coeff · Π`.
    pub fn accumulate(&self, coeff: f64, target: &mut CMatrix) {
        match self {
            Observable::Dense(m) => {
                for (t, p) in target.as_mut_slice().iter_mut().zip(m.as_slice()) {
                    *t += p * coeff;
                }
            }
            Observable::Pauli(p) => {
                for j in 0..p.dim() {
                    target[(j ^ p.x_mask, j)] += p.phase(j) * coeff;
                }
            }
            Observable::Projector { vector, weight } => {
                let s = coeff * weight;
                let d = vector.len();
                for b in 0..d {
                    let cb = vector[b].conj() * s;
                    for a in 0..d {
                        target[(a, b)] += vector[a] * cb;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetKind {
    Pauli,
    HusimiProjector,
    General,
}

/// How Pauli operators are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PauliRepr {
    /// Dense up to [`DENSE_PAULI_MAX_QUBITS`], operator-free beyond.
    Auto,
    Dense,
    OperatorFree,
}

/// Ordered list of Hermitian measurement operators of a common dimension.
#[derive(Debug, Clone)]
pub struct ObservableSet {
    dim: usize,
    kind: SetKind,
    operators: Vec<Observable>,
    labels: Vec<String>,
    /// Complex probe amplitudes `β_m` for Husimi sets.
    probes: Vec<C64>,
}

impl ObservableSet {
    /// Wraps user-provided Hermitian operators.
    pub fn general(operators: Vec<CMatrix>) -> Result<Self> {
        let dim = operators
            .first()
            .map(|m| m.nrows())
            .ok_or_else(|| QstError::invalid("empty operator list"))?;
        for (k, m) in operators.iter().enumerate() {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(QstError::invalid(format!("operator {k} has the wrong shape")));
            }
            if crate::linalg::hermitian_deviation(m) > 1e-12 {
                return Err(QstError::invalid(format!("operator {k} is not Hermitian")));
            }
        }
        let labels = (0..operators.len()).map(|k| format!("op{k}")).collect();
        Ok(ObservableSet {
            dim,
            kind: SetKind::General,
            operators: operators.into_iter().map(Observable::Dense).collect(),
            labels,
            probes: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> SetKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    pub fn operators(&self) -> &[Observable] {
        &self.operators
    }

    pub fn operator(&self, index: usize) -> &Observable {
        &self.operators[index]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn probes(&self) -> &[C64] {
        &self.probes
    }

    /// Position of a Pauli label such as `"ZZZ"`.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// All `4^n` Pauli strings in lexicographic order (`I < X < Y < Z`).
pub fn pauli_set(n_qubits: usize) -> Result<ObservableSet> {
    pauli_set_with(n_qubits, PauliRepr::Auto)
}

pub fn pauli_set_with(n_qubits: usize, repr: PauliRepr) -> Result<ObservableSet> {
    if n_qubits == 0 {
        return Err(QstError::invalid("n_qubits must be at least 1"));
    }
    if n_qubits > 12 {
        return Err(QstError::invalid("Pauli sets beyond 12 qubits are not supported"));
    }
    let dense = match repr {
        PauliRepr::Auto => n_qubits <= DENSE_PAULI_MAX_QUBITS,
        PauliRepr::Dense => true,
        PauliRepr::OperatorFree => false,
    };
    let count = 1usize << (2 * n_qubits);
    let mut operators = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for index in 0..count {
        let p = PauliString::from_index(n_qubits, index);
        labels.push(p.letters());
        operators.push(if dense {
            Observable::Dense(p.to_matrix())
        } else {
            Observable::Pauli(p)
        });
    }
    Ok(ObservableSet {
        dim: 1 << n_qubits,
        kind: SetKind::Pauli,
        operators,
        labels,
        probes: Vec::new(),
    })
}

/// Scaled coherent-state projectors `(1/π)|β⟩⟨β|` on a `steps × steps` grid
/// spanning `[-extent, extent]` in both quadratures, `y` outer and `x` inner.
pub fn husimi_set(extent: f64, steps: usize, dim: usize) -> Result<ObservableSet> {
    if steps < 2 || dim < 2 {
        return Err(QstError::invalid("husimi_set needs steps >= 2 and dim >= 2"));
    }
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(QstError::invalid("extent must be positive and finite"));
    }
    let axis: Vec<f64> = (0..steps)
        .map(|k| -extent + 2.0 * extent * k as f64 / (steps - 1) as f64)
        .collect();
    let mut operators = Vec::with_capacity(steps * steps);
    let mut labels = Vec::with_capacity(steps * steps);
    let mut probes = Vec::with_capacity(steps * steps);
    for &y in &axis {
        for &x in &axis {
            let beta = C64::new(x, y);
            operators.push(husimi_projector(beta, dim));
            labels.push(format!("{x:+.6}{y:+.6}i"));
            probes.push(beta);
        }
    }
    Ok(ObservableSet {
        dim,
        kind: SetKind::HusimiProjector,
        operators,
        labels,
        probes,
    })
}

/// `(1/π)|β⟩⟨β|` with the truncated coherent state renormalized.
pub fn husimi_projector(beta: C64, dim: usize) -> Observable {
    let raw = coherent_series(beta, dim);
    let norm = raw.norm();
    Observable::Projector {
        vector: raw.unscale(norm),
        weight: 1.0 / PI,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataEntry {
    pub operator_index: usize,
    pub value: f64,
}

/// Expectation values paired with operator indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    entries: Vec<DataEntry>,
}

impl DataSet {
    pub fn new(entries: Vec<DataEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.operator_index) {
                return Err(QstError::invalid(format!(
                    "duplicate operator index {}",
                    e.operator_index
                )));
            }
        }
        Ok(DataSet { entries })
    }

    pub fn entries(&self) -> &[DataEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.value)
    }

    /// Checks every operator index against `set`.
    pub fn check_against(&self, set: &ObservableSet) -> Result<()> {
        match self.entries.iter().find(|e| e.operator_index >= set.len()) {
            Some(e) => Err(QstError::invalid(format!(
                "operator index {} out of range for a set of {}",
                e.operator_index,
                set.len()
            ))),
            None => Ok(()),
        }
    }

    /// CSV with header `index,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["index", "value"])?;
        for e in &self.entries {
            wr.write_record([e.operator_index.to_string(), format!("{:e}", e.value)])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["index", "value"] {
            return Err(QstError::Parse(format!("unexpected header {headers:?}")));
        }
        let mut entries = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let idx = rec[0]
                .trim()
                .parse()
                .map_err(|_| QstError::Parse(format!("bad index {:?}", &rec[0])))?;
            let value = rec[1]
                .trim()
                .parse()
                .map_err(|_| QstError::Parse(format!("bad value {:?}", &rec[1])))?;
            entries.push(DataEntry {
                operator_index: idx,
                value,
            });
        }
        DataSet::new(entries)
    }
}

/// `value_i = Re Tr(Π_i ρ)` for every operator in `set`.
pub fn measure(rho: &DensityMatrix, set: &ObservableSet) -> Result<DataSet> {
    if rho.dim() != set.dim() {
        return Err(QstError::invalid(format!(
            "state dimension {} does not match operator dimension {}",
            rho.dim(),
            set.dim()
        )));
    }
    let mut entries = Vec::with_capacity(set.len());
    for (k, op) in set.operators().iter().enumerate() {
        let z = op.expectation(rho.matrix());
        if z.im.abs() > 1e-10 {
            return Err(QstError::InvalidState(format!(
                "expectation of operator {k} has imaginary part {}",
                z.im
            )));
        }
        entries.push(DataEntry {
            operator_index: k,
            value: z.re,
        });
    }
    DataSet::new(entries)
}

/// `(1 − ε)ρ + ε I/d`.
pub fn depolarize(rho: &DensityMatrix, eps: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(QstError::invalid(format!("depolarizing strength {eps} outside [0, 1]")));
    }
    if eps == 0.0 {
        return Ok(rho.clone());
    }
    let d = rho.dim();
    let mut m = rho.matrix().scale(1.0 - eps);
    for k in 0..d {
        m[(k, k)] += C64::new(eps / d as f64, 0.0);
    }
    Ok(DensityMatrix::from_constructed(m))
}

/// Replaces every value with an independent draw from `N(value, σ²)`. No clipping.
pub fn gaussian_noise(data: &DataSet, sigma: f64, seed: u64) -> Result<DataSet> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(QstError::invalid(format!("noise sigma {sigma} must be non-negative")));
    }
    if sigma == 0.0 {
        return Ok(data.clone());
    }
    let mut r = rng(seed);
    let entries = data
        .entries
        .iter()
        .map(|e| DataEntry {
            operator_index: e.operator_index,
            value: e.value + sigma * normal(&mut r),
        })
        .collect();
    Ok(DataSet { entries })
}

/// Uniform subset without replacement. With `keep_identity`, the entry for
/// operator index 0 (the all-identity Pauli) is always retained when present.
pub fn subsample(data: &DataSet, size: usize, seed: u64, keep_identity: bool) -> Result<DataSet> {
    if size == 0 || size > data.len() {
        return Err(QstError::invalid(format!(
            "subsample size {size} must lie in 1..={}",
            data.len()
        )));
    }
    let mut r = rng(seed);
    let anchor = if keep_identity {
        data.entries.iter().position(|e| e.operator_index == 0)
    } else {
        None
    };
    let mut chosen: Vec<usize> = match anchor {
        Some(pos) => {
            let others: Vec<usize> = (0..data.len()).filter(|&p| p != pos).collect();
            let mut picked: Vec<usize> = sample(&mut r, others.len(), size - 1)
                .into_iter()
                .map(|k| others[k])
                .collect();
            picked.push(pos);
            picked
        }
        None => sample(&mut r, data.len(), size).into_vec(),
    };
    chosen.sort_unstable();
    Ok(DataSet {
        entries: chosen.into_iter().map(|p| data.entries[p]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::trace_product;
    use crate::qstates::{ghz_state, random_density, DensityMatrix, PureState};
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_qubit_paulis() {
        let set = pauli_set(1).unwrap();
        assert_eq!(set.len(), 4);
        assert_eq!(set.labels(), ["I", "X", "Y", "Z"]);
        let y = set.operator(2).to_matrix();
        assert_eq!(y[(0, 1)], C64::new(0.0, -1.0));
        assert_eq!(y[(1, 0)], C64::new(0.0, 1.0));
        let z = set.operator(3).to_matrix();
        assert_eq!(z[(1, 1)], C64::new(-1.0, 0.0));
    }

    #[test]
    fn pauli_ordering_and_kronecker_structure() {
        let set = pauli_set(3).unwrap();
        assert_eq!(set.index_of("ZZZ"), Some(63));
        assert_eq!(set.index_of("III"), Some(0));
        let single = pauli_set(1).unwrap();
        let xyz = single
            .operator(1)
            .to_matrix()
            .kronecker(&single.operator(2).to_matrix())
            .kronecker(&single.operator(3).to_matrix());
        let k = set.index_of("XYZ").unwrap();
        assert_eq!(set.operator(k).to_matrix(), xyz);
    }

    #[test]
    fn pauli_trace_orthogonality_exhaustive() {
        for n in 1..=3 {
            let set = pauli_set(n).unwrap();
            let mats: Vec<CMatrix> = set.operators().iter().map(|o| o.to_matrix()).collect();
            let d = (1 << n) as f64;
            for (i, a) in mats.iter().enumerate() {
                assert!(crate::linalg::hermitian_deviation(a) <= 1e-12);
                for (j, b) in mats.iter().enumerate() {
                    let t = trace_product(a, b);
                    let expect = if i == j { d } else { 0.0 };
                    assert_abs_diff_eq!(t.re, expect, epsilon = 1e-12);
                    assert_abs_diff_eq!(t.im, 0.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn operator_forms_agree() {
        let rho = random_density(8, 3, 1).unwrap();
        let dense = pauli_set_with(3, PauliRepr::Dense).unwrap();
        let free = pauli_set_with(3, PauliRepr::OperatorFree).unwrap();
        let v: Vec<C64> = (0..8).map(|k| C64::new(k as f64 * 0.1, 1.0 - k as f64 * 0.05)).collect();
        for (a, b) in dense.operators().iter().zip(free.operators()) {
            assert_eq!(a.to_matrix(), b.to_matrix());
            let ea = a.expectation(rho.matrix());
            let eb = b.expectation(rho.matrix());
            assert_abs_diff_eq!(ea.re, eb.re, epsilon = 1e-14);
            assert_abs_diff_eq!(a.expectation_re(rho.matrix()), ea.re, epsilon = 1e-14);
            assert_abs_diff_eq!(b.expectation_re(rho.matrix()), ea.re, epsilon = 1e-14);
            let mut oa = vec![ZERO; 8];
            let mut ob = vec![ZERO; 8];
            a.apply(&v, &mut oa);
            b.apply(&v, &mut ob);
            for (x, y) in oa.iter().zip(&ob) {
                assert!((x - y).norm() < 1e-14);
            }
            let mut ta = CMatrix::zeros(8, 8);
            let mut tb = CMatrix::zeros(8, 8);
            a.accumulate(0.7, &mut ta);
            b.accumulate(0.7, &mut tb);
            assert!(crate::linalg::max_abs_diff(&ta, &tb) < 1e-15);
        }
    }

    #[test]
    fn husimi_grid_layout() {
        let set = husimi_set(4.0, 32, 32).unwrap();
        assert_eq!(set.len(), 1024);
        assert_eq!(set.kind(), SetKind::HusimiProjector);
        assert_eq!(set.probes()[0], C64::new(-4.0, -4.0));
        assert_eq!(set.probes()[1], C64::new(-4.0 + 8.0 / 31.0, -4.0));
        assert_eq!(set.probes()[32], C64::new(-4.0, -4.0 + 8.0 / 31.0));
        for op in set.operators() {
            let m = op.to_matrix();
            assert_abs_diff_eq!(crate::linalg::trace(&m).re, 1.0 / PI, epsilon = 1e-6);
            let eig = crate::linalg::HermitianEigen::new(&m);
            assert!(eig.min() > -1e-12);
            assert_eq!(eig.rank_above(1e-10), 1);
        }
    }

    #[test]
    fn husimi_vacuum_at_origin() {
        let set = husimi_set(4.0, 33, 32).unwrap();
        let vac = DensityMatrix::from_pure(&crate::qstates::fock_state(0, 32).unwrap());
        let data = measure(&vac, &set).unwrap();
        let origin = 16 * 33 + 16;
        assert_eq!(set.probes()[origin], C64::new(0.0, 0.0));
        assert_abs_diff_eq!(data.entries()[origin].value, 1.0 / PI, epsilon = 1e-14);
        assert!(data.values().all(|v| (0.0..=1.0 / PI + 1e-9).contains(&v)));
    }

    #[test]
    fn measure_examples() {
        let set = pauli_set(1).unwrap();
        let zero = DensityMatrix::from_pure(&PureState::new(CVector::from_vec(vec![ONE, ZERO])).unwrap());
        let data = measure(&zero, &set).unwrap();
        assert_abs_diff_eq!(data.entries()[0].value, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(data.entries()[3].value, 1.0, epsilon = 1e-15);

        let set3 = pauli_set(3).unwrap();
        let ghz = ghz_state(3).unwrap().projector();
        let d3 = measure(&ghz, &set3).unwrap();
        let xxx = set3.index_of("XXX").unwrap();
        assert_abs_diff_eq!(d3.entries()[xxx].value, 1.0, epsilon = 1e-12);
        assert!(d3.values().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(&v)));

        let wrong = random_density(4, 1, 0).unwrap();
        assert!(measure(&wrong, &set3).is_err());
    }

    #[test]
    fn depolarize_examples() {
        let rho = ghz_state(2).unwrap().projector();
        assert_eq!(depolarize(&rho, 0.0).unwrap(), rho);
        let mixed = depolarize(&rho, 1.0).unwrap();
        assert!(crate::linalg::max_abs_diff(mixed.matrix(), DensityMatrix::maximally_mixed(4).matrix()) < 1e-15);
        let half = depolarize(&rho, 0.5).unwrap();
        // Eigenvalues 1/2 + 1/8 (once) and 1/8 (three times).
        let by_eigenvalues = 0.625f64.powi(2) + 3.0 * 0.125f64.powi(2);
        assert_abs_diff_eq!(half.purity(), by_eigenvalues, epsilon = 1e-14);
        assert_abs_diff_eq!(half.purity(), 0.4375, epsilon = 1e-14);
        assert!(depolarize(&rho, 1.5).is_err());
        assert!(depolarize(&rho, -0.1).is_err());
    }

    #[test]
    fn depolarize_composes() {
        let rho = random_density(4, 2, 9).unwrap();
        for (a, b) in [(0.1, 0.2), (0.5, 0.5), (0.9, 0.3)] {
            let twice = depolarize(&depolarize(&rho, a).unwrap(), b).unwrap();
            let once = depolarize(&rho, a + b - a * b).unwrap();
            assert!(crate::linalg::max_abs_diff(twice.matrix(), once.matrix()) < 1e-12);
        }
    }

    fn zeros(n: usize) -> DataSet {
        DataSet::new(
            (0..n)
                .map(|k| DataEntry {
                    operator_index: k,
                    value: 0.0,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn gaussian_noise_statistics() {
        let data = zeros(10_000);
        assert_eq!(gaussian_noise(&data, 0.0, 1).unwrap(), data);
        let a = gaussian_noise(&data, 0.1, 42).unwrap();
        let b = gaussian_noise(&data, 0.1, 42).unwrap();
        assert_eq!(a, b);
        let n = a.len() as f64;
        let mean = a.values().sum::<f64>() / n;
        let var = a.values().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4e-3, "mean {mean}");
        assert!((var.sqrt() - 0.1).abs() < 0.005, "std {}", var.sqrt());
        assert!(gaussian_noise(&data, -1.0, 0).is_err());
    }

    #[test]
    fn subsample_examples() {
        let data = zeros(1024);
        let all = subsample(&data, 1024, 3, false).unwrap();
        assert_eq!(all, data);
        let one = subsample(&data, 1, 3, true).unwrap();
        assert_eq!(one.entries()[0].operator_index, 0);
        let part = subsample(&data, 400, 5, true).unwrap();
        let uniq: HashSet<usize> = part.entries().iter().map(|e| e.operator_index).collect();
        assert_eq!(uniq.len(), 400);
        assert!(uniq.contains(&0));
        assert_eq!(part, subsample(&data, 400, 5, true).unwrap());
        assert!(subsample(&data, 1025, 0, true).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rho = random_density(4, 2, 4).unwrap();
        let data = measure(&rho, &pauli_set(2).unwrap()).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("index,value\n0,"));
        assert_eq!(DataSet::read_csv(&buf[..]).unwrap(), data);
    }

    #[test]
    fn rejects_duplicate_indices() {
        let e = DataEntry {
            operator_index: 1,
            value: 0.0,
        };
        assert!(DataSet::new(vec![e, e]).is_err());
    }

    #[test]
    fn quad_form_matches_dense_evaluation() {
        let mut r = crate::random::rng(17);
        let v: Vec<C64> = (0..8).map(|_| crate::random::complex_normal(&mut r)).collect();
        let col = CVector::from_column_slice(&v);
        let sets = [
            pauli_set_with(3, PauliRepr::Dense).unwrap(),
            pauli_set_with(3, PauliRepr::OperatorFree).unwrap(),
            husimi_set(2.0, 3, 8).unwrap(),
        ];
        for set in &sets {
            for op in set.operators() {
                let expect = col.dotc(&(op.to_matrix() * &col)).re;
                assert_abs_diff_eq!(op.quad_form(&v), expect, epsilon = 1e-12);
            }
        }
    }
}
