//! Tomography targets: pure states, density matrices and their constructors
//! for qubit registers and truncated single-mode Fock spaces.
//!
//! Qubit 0 is the most significant bit of a computational-basis index.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use log::warn;

use crate::error::{QstError, Result};
use crate::linalg::{hermitian_deviation, hermitize, trace, CMatrix, CVector, HermitianEigen, C64, ZERO};
use crate::random::{complex_normal, complex_normal_matrix, rng};

pub const NORM_TOL: f64 = 1e-10;
pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = -1e-8;
/// Eigenvalues above this count toward the numerical rank.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amplitudes: CVector,
}

impl PureState {
    pub fn new(amplitudes: CVector) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(QstError::invalid("empty state vector"));
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(QstError::InvalidState(format!("state norm {norm} differs from 1")));
        }
        Ok(PureState { amplitudes })
    }

    /// Divides by the Euclidean norm.
    pub fn normalized(amplitudes: CVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(QstError::invalid("cannot normalize a zero or non-finite vector"));
        }
        Ok(PureState {
            amplitudes: amplitudes.unscale(norm),
        })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn projector(&self) -> DensityMatrix {
        DensityMatrix::from_pure(self)
    }

    /// `⟨ψ|m|ψ⟩`.
    pub fn expectation(&self, m: &CMatrix) -> C64 {
        self.amplitudes.dotc(&(m * &self.amplitudes))
    }
}

/// Result of checking the three density-matrix conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validity {
    pub hermitian_deviation: f64,
    pub trace_deviation: f64,
    pub min_eigenvalue: f64,
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        self.hermitian_deviation <= HERMITIAN_TOL
            && self.trace_deviation <= TRACE_TOL
            && self.min_eigenvalue >= PSD_TOL
    }
}

/// Hermitian, unit-trace, positive semi-definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    entries: CMatrix,
}

impl DensityMatrix {
    /// Validates all three conditions.
    pub fn new(entries: CMatrix) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(QstError::invalid("density matrix must be square and non-empty"));
        }
        let v = validity(&entries);
        if !v.is_valid() {
            return Err(QstError::InvalidState(format!("{v:?}")));
        }
        Ok(DensityMatrix { entries })
    }

    /// Wraps a matrix that is valid by construction, removing Hermitian rounding dust.
    pub(crate) fn from_constructed(entries: CMatrix) -> Self {
        DensityMatrix {
            entries: hermitize(&entries),
        }
    }

    pub fn from_pure(psi: &PureState) -> Self {
        let a = psi.amplitudes();
        DensityMatrix::from_constructed(a * a.adjoint())
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        DensityMatrix {
            entries: CMatrix::identity(dim, dim).unscale(dim as f64),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_matrix(self) -> CMatrix {
        self.entries
    }

    pub fn purity(&self) -> f64 {
        purity(self)
    }

    pub fn validity(&self) -> Validity {
        validity(&self.entries)
    }

    pub fn eigen(&self) -> HermitianEigen {
        HermitianEigen::new(&self.entries)
    }

    /// Count of eigenvalues above [`RANK_TOL`].
    pub fn numerical_rank(&self) -> usize {
        self.eigen().rank_above(RANK_TOL)
    }

    /// Text format: `dim <d>` then `d*d` lines `<row> <col> <re> <im>`, row-major.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim();
        let mut out = String::with_capacity(64 * d * d + 16);
        writeln!(out, "dim {d}").unwrap();
        for i in 0..d {
            for j in 0..d {
                let z = self.entries[(i, j)];
                writeln!(out, "{i} {j} {:.17e} {:.17e}", z.re, z.im).unwrap();
            }
        }
        w.write_all(out.as_bytes())?;
        Ok(())
    }

    /// Parses the text format and validates the result.
    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| QstError::Parse("missing header".into()))??;
        let d: usize = header
            .strip_prefix("dim ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| QstError::Parse(format!("bad header {header:?}")))?;
        let mut m = CMatrix::zeros(d, d);
        let mut seen = 0usize;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(QstError::Parse(format!("bad entry line {line:?}")));
            }
            let parse_err = |_| QstError::Parse(format!("bad entry line {line:?}"));
            let i: usize = parts[0].parse().map_err(|_| QstError::Parse(line.clone()))?;
            let j: usize = parts[1].parse().map_err(|_| QstError::Parse(line.clone()))?;
            let re: f64 = parts[2].parse().map_err(parse_err)?;
            let im: f64 = parts[3].parse().map_err(parse_err)?;
            if i >= d || j >= d {
                return Err(QstError::Parse(format!("index out of range in {line:?}")));
            }
            m[(i, j)] = C64::new(re, im);
            seen += 1;
        }
        if seen != d * d {
            return Err(QstError::Parse(format!("expected {} entries, found {seen}", d * d)));
        }
        DensityMatrix::new(m)
    }
}

pub fn validity(m: &CMatrix) -> Validity {
    Validity {
        hermitian_deviation: hermitian_deviation(m),
        trace_deviation: (trace(m) - C64::new(1.0, 0.0)).norm(),
        min_eigenvalue: HermitianEigen::new(m).min(),
    }
}

/// `Tr(ρ²)`.
pub fn purity(rho: &DensityMatrix) -> f64 {
    // Tr(ρ²) = Σ |ρ_ij|² for Hermitian ρ.
    rho.matrix().norm_squared()
}

fn qubit_dim(n_qubits: usize) -> Result<usize> {
    if n_qubits == 0 {
        return Err(QstError::invalid("n_qubits must be at least 1"));
    }
    if n_qubits > 30 {
        return Err(QstError::invalid("too many qubits for a dense state vector"));
    }
    Ok(1usize << n_qubits)
}

/// `(|0…0⟩ + |1…1⟩)/√2`.
pub fn ghz_state(n_qubits: usize) -> Result<PureState> {
    let d = qubit_dim(n_qubits)?;
    let mut a = CVector::zeros(d);
    a[0] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    a[d - 1] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    PureState::new(a)
}

/// `[(|0⟩ + |1⟩)/√2]^⊗n`.
pub fn hadamard_state(n_qubits: usize) -> Result<PureState> {
    let d = qubit_dim(n_qubits)?;
    let amp = (d as f64).sqrt().recip();
    PureState::new(CVector::from_element(d, C64::new(amp, 0.0)))
}

/// Ginibre mixed state `G†G / Tr(G†G)` with `G` a `rank × dim` complex Gaussian matrix.
pub fn random_density(dim: usize, rank: usize, seed: u64) -> Result<DensityMatrix> {
    if dim == 0 || rank == 0 || rank > dim {
        return Err(QstError::invalid(format!(
            "random_density needs 1 <= rank <= dim, got rank {rank}, dim {dim}"
        )));
    }
    let mut r = rng(seed);
    let g = complex_normal_matrix(rank, dim, &mut r);
    let gram = g.adjoint() * &g;
    let tr = trace(&gram).re;
    Ok(DensityMatrix::from_constructed(gram.unscale(tr)))
}

/// Haar-random pure state from a normalized complex Gaussian vector.
pub fn random_pure_state(dim: usize, seed: u64) -> Result<PureState> {
    if dim == 0 {
        return Err(QstError::invalid("dim must be positive"));
    }
    let mut r = rng(seed);
    let v = CVector::from_fn(dim, |_, _| complex_normal(&mut r));
    PureState::normalized(v)
}

/// Raw truncated series `e^{-|ξ|²/2} ξⁿ/√n!` for `n < dim`, before renormalization.
pub fn coherent_series(xi: C64, dim: usize) -> CVector {
    let mut a = CVector::zeros(dim);
    if dim == 0 {
        return a;
    }
    a[0] = C64::new((-0.5 * xi.norm_sqr()).exp(), 0.0);
    for n in 1..dim {
        a[n] = a[n - 1] * xi / (n as f64).sqrt();
    }
    a
}

fn check_truncation(xi: C64, dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(QstError::invalid("Fock truncation must be at least 2"));
    }
    let r = xi.norm();
    if r * r + 5.0 * r > dim as f64 {
        warn!("Fock truncation {dim} is small for |xi| = {r}; amplitudes will be renormalized");
    }
    Ok(())
}

/// Coherent state `|ξ⟩` in a `dim`-level Fock space, renormalized after truncation.
pub fn coherent_state(xi: C64, dim: usize) -> Result<PureState> {
    check_truncation(xi, dim)?;
    PureState::normalized(coherent_series(xi, dim))
}

/// Even cat state `∝ |ξ⟩ + |−ξ⟩`.
pub fn cat_state(xi: C64, dim: usize) -> Result<PureState> {
    check_truncation(xi, dim)?;
    let plus = coherent_series(xi, dim);
    let minus = coherent_series(-xi, dim);
    let mut sum = plus + minus;
    // Odd terms cancel analytically; pin them to exact zero.
    for n in (1..dim).step_by(2) {
        sum[n] = ZERO;
    }
    PureState::normalized(sum)
}

/// Fock number state `|n⟩`.
pub fn fock_state(n: usize, dim: usize) -> Result<PureState> {
    if n >= dim {
        return Err(QstError::invalid(format!("Fock level {n} outside truncation {dim}")));
    }
    let mut a = CVector::zeros(dim);
    a[n] = C64::new(1.0, 0.0);
    PureState::new(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn pauli_x() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[ZERO, C64::new(1.0, 0.0), C64::new(1.0, 0.0), ZERO])
    }

    #[test]
    fn ghz_amplitudes() {
        let one = ghz_state(1).unwrap();
        assert_abs_diff_eq!(one.amplitudes()[0].re, FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(one.amplitudes()[1].re, FRAC_1_SQRT_2, epsilon = 1e-15);

        let three = ghz_state(3).unwrap();
        for (k, a) in three.amplitudes().iter().enumerate() {
            let expect = if k == 0 || k == 7 { FRAC_1_SQRT_2 } else { 0.0 };
            assert_abs_diff_eq!(a.re, expect, epsilon = 1e-15);
            assert_eq!(a.im, 0.0);
        }
        assert_abs_diff_eq!(ghz_state(2).unwrap().projector().purity(), 1.0, epsilon = 1e-12);
        assert!(matches!(ghz_state(0), Err(QstError::InvalidArgument(_))));
    }

    #[test]
    fn hadamard_amplitudes_and_xx() {
        let h5 = hadamard_state(5).unwrap();
        assert_eq!(h5.dim(), 32);
        for a in h5.amplitudes().iter() {
            assert_abs_diff_eq!(a.re, 1.0 / 32f64.sqrt(), epsilon = 1e-15);
        }
        let h2 = hadamard_state(2).unwrap();
        let xx = pauli_x().kronecker(&pauli_x());
        assert_abs_diff_eq!(h2.expectation(&xx).re, 1.0, epsilon = 1e-12);
        assert!(hadamard_state(0).is_err());
    }

    #[test]
    fn random_density_rank_and_determinism() {
        let pure = random_density(4, 1, 3).unwrap();
        assert_abs_diff_eq!(pure.purity(), 1.0, epsilon = 1e-10);

        let a = random_density(8, 8, 7).unwrap();
        let b = random_density(8, 8, 7).unwrap();
        assert_eq!(a, b);

        let r2 = random_density(4, 2, 11).unwrap();
        assert_eq!(r2.numerical_rank(), 2);
        assert!(r2.validity().is_valid());

        assert!(random_density(4, 5, 0).is_err());
        assert!(random_density(4, 0, 0).is_err());
    }

    #[test]
    fn random_density_rank_bound_over_seeds() {
        for seed in 0..100u64 {
            let rank = 1 + (seed as usize % 4);
            let rho = random_density(6, rank, seed).unwrap();
            assert!(rho.numerical_rank() <= rank);
            assert!(rho.validity().is_valid());
        }
    }

    #[test]
    fn coherent_state_photon_statistics() {
        let vac = coherent_state(C64::new(0.0, 0.0), 8).unwrap();
        assert_eq!(vac.amplitudes()[0], C64::new(1.0, 0.0));
        assert!(vac.amplitudes().iter().skip(1).all(|a| *a == ZERO));

        // Oracle: partial sums of the Poisson weights e^{-4} 4^n / n!.
        let mut weight = (-4.0f64).exp();
        let mut norm = 0.0;
        let mut mean = 0.0;
        for n in 0..32 {
            if n > 0 {
                weight *= 4.0 / n as f64;
            }
            norm += weight;
            mean += n as f64 * weight;
        }
        let raw = coherent_series(C64::new(2.0, 0.0), 32);
        assert_abs_diff_eq!(raw.norm_squared(), norm, epsilon = 1e-12);
        assert_abs_diff_eq!(raw.norm_squared(), 1.0, epsilon = 1e-6);

        let coh = coherent_state(C64::new(2.0, 0.0), 32).unwrap();
        let n_mean: f64 = coh
            .amplitudes()
            .iter()
            .enumerate()
            .map(|(n, c)| n as f64 * c.norm_sqr())
            .sum();
        assert_abs_diff_eq!(n_mean, mean / norm, epsilon = 1e-12);
        assert_abs_diff_eq!(n_mean, 4.0, epsilon = 1e-4);
    }

    #[test]
    fn cat_state_parity() {
        let vac = cat_state(C64::new(0.0, 0.0), 8).unwrap();
        assert_abs_diff_eq!(vac.amplitudes()[0].re, 1.0, epsilon = 1e-15);

        let cat = cat_state(C64::new(2.0, 0.0), 32).unwrap();
        assert_abs_diff_eq!(cat.amplitudes().norm(), 1.0, epsilon = 1e-10);
        for n in (1..32).step_by(2) {
            assert_eq!(cat.amplitudes()[n], ZERO);
        }
        for k in 0..16 {
            let xi = C64::from_polar(2.0 * k as f64 / 15.0, 0.4 * k as f64);
            let cat = cat_state(xi, 32).unwrap();
            let parity: f64 = cat
                .amplitudes()
                .iter()
                .enumerate()
                .map(|(n, c)| if n % 2 == 0 { c.norm_sqr() } else { -c.norm_sqr() })
                .sum();
            assert_abs_diff_eq!(parity, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn purity_examples() {
        assert_abs_diff_eq!(DensityMatrix::maximally_mixed(4).purity(), 0.25, epsilon = 1e-15);
        let diag = CMatrix::from_diagonal(&CVector::from_vec(vec![
            C64::new(0.75, 0.0),
            C64::new(0.25, 0.0),
        ]));
        let rho = DensityMatrix::new(diag).unwrap();
        assert_abs_diff_eq!(rho.purity(), 0.625, epsilon = 1e-15);
    }

    #[test]
    fn rejects_invalid_matrices() {
        let mut m = CMatrix::identity(2, 2).unscale(2.0);
        m[(0, 1)] = C64::new(0.1, 0.0);
        assert!(DensityMatrix::new(m).is_err());
        let neg = CMatrix::from_diagonal(&CVector::from_vec(vec![
            C64::new(1.5, 0.0),
            C64::new(-0.5, 0.0),
        ]));
        assert!(DensityMatrix::new(neg).is_err());
        let tr2 = CMatrix::identity(2, 2);
        assert!(DensityMatrix::new(tr2).is_err());
    }

    #[test]
    fn text_round_trip() {
        let rho = random_density(4, 3, 5).unwrap();
        let mut buf = Vec::new();
        rho.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("dim 4\n0 0 "));
        assert_eq!(text.lines().count(), 17);
        let back = DensityMatrix::read_text(&buf[..]).unwrap();
        assert_eq!(back, rho);
    }
}
