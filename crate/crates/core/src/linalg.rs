//! Dense complex linear-algebra helpers shared by the reconstruction code.
//!
//! Matrices are `nalgebra` column-major `DMatrix<Complex64>`. Only the few
//! decompositions tomography needs are wrapped here: Hermitian
//! eigendecomposition, PSD square roots and Hermitization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Eigendecomposition of a Hermitian matrix, eigenvalues sorted ascending.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Columns are the eigenvectors, in the same order as `values`.
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn new(m: &CMatrix) -> Self {
        assert!(m.is_square(), "eigendecomposition of a non-square matrix");
        let eig = SymmetricEigen::new(hermitize(m));
        let n = m.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let mut vectors = CMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        HermitianEigen { values, vectors }
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    /// Rebuilds `V f(Λ) V†`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (k, &v) in self.values.iter().enumerate() {
            let fv = f(v);
            scaled.column_mut(k).scale_mut(fv);
        }
        let out = &scaled * self.vectors.adjoint();
        debug_assert_eq!(out.nrows(), n);
        hermitize(&out)
    }

    /// Number of eigenvalues strictly above `tol`.
    pub fn rank_above(&self, tol: f64) -> usize {
        self.values.iter().filter(|&&v| v > tol).count()
    }
}

/// `(m + m†) / 2`.
pub fn hermitize(m: &CMatrix) -> CMatrix {
    let n = m.nrows();
    let mut out = CMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            out[(i, j)] = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
        }
    }
    out
}

/// `max |m - m†|` entrywise.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn trace(m: &CMatrix) -> C64 {
    (0..m.nrows().min(m.ncols())).map(|k| m[(k, k)]).sum()
}

/// Square root of a PSD Hermitian matrix; eigenvalues below `clamp` are set to zero.
pub fn psd_sqrt(m: &CMatrix, clamp: f64) -> CMatrix {
    HermitianEigen::new(m).map(|v| if v > clamp { v.sqrt() } else { 0.0 })
}

/// `Tr(a b)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Kronecker product of two dense matrices.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn frobenius_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).norm()
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}
