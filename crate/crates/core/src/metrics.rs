//! State comparison and phase-space diagnostics.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{QstError, Result};
use crate::linalg::{hermitize, psd_sqrt, HermitianEigen, CMatrix, C64, ZERO};
use crate::qstates::DensityMatrix;

/// Per-dimension scale of the eigenvalue clamp used inside square roots.
pub const SQRT_CLAMP: f64 = 1e-10;

/// Uhlmann–Jozsa fidelity `(Tr √(√ρ σ √ρ))²`, clamped to `[0, 1]`.
pub fn uj_fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    uj_fidelity_matrix(rho.matrix(), sigma.matrix())
}

/// Same as [`uj_fidelity`] on raw matrices, e.g. an unvalidated linear-inversion output.
pub fn uj_fidelity_matrix(rho: &CMatrix, sigma: &CMatrix) -> Result<f64> {
    if rho.shape() != sigma.shape() || !rho.is_square() {
        return Err(QstError::invalid(format!(
            "fidelity between {:?} and {:?} matrices",
            rho.shape(),
            sigma.shape()
        )));
    }
    let clamp = SQRT_CLAMP * rho.nrows() as f64;
    let root = psd_sqrt(rho, clamp);
    let inner = hermitize(&(&root * sigma * &root));
    let eig = HermitianEigen::new(&inner);
    let tr: f64 = eig.values.iter().filter(|&&v| v > clamp).map(|v| v.sqrt()).sum();
    Ok((tr * tr).clamp(0.0, 1.0))
}

/// Uniform axis `-extent + 2·extent·k/(steps-1)`; a single step sits at the origin.
pub fn phase_axis(extent: f64, steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![0.0];
    }
    (0..steps)
        .map(|k| -extent + 2.0 * extent * k as f64 / (steps - 1) as f64)
        .collect()
}

/// Real field sampled on a square phase-space grid, row-major with `y` outer.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGrid {
    pub extent: f64,
    pub steps: usize,
    pub values: Vec<f64>,
}

impl PhaseGrid {
    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.steps + ix]
    }

    pub fn axis(&self) -> Vec<f64> {
        phase_axis(self.extent, self.steps)
    }

    pub fn cell_area(&self) -> f64 {
        if self.steps < 2 {
            return 0.0;
        }
        let h = 2.0 * self.extent / (self.steps - 1) as f64;
        h * h
    }

    /// `Σ W · cell area`.
    pub fn riemann_sum(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    /// Coordinates `(x, y)` of the largest sample.
    pub fn argmax(&self) -> (f64, f64) {
        let k = self
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        let axis = self.axis();
        (axis[k % self.steps], axis[k / self.steps])
    }

    pub fn max_abs_diff(&self, other: &PhaseGrid) -> Result<f64> {
        if self.steps != other.steps || self.extent != other.extent {
            return Err(QstError::invalid("phase grids have different geometry"));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// CSV with header `x,y,w`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "y", "w"])?;
        let axis = self.axis();
        for (iy, y) in axis.iter().enumerate() {
            for (ix, x) in axis.iter().enumerate() {
                out.write_record(&[x.to_string(), y.to_string(), self.value(ix, iy).to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Wigner function of the truncated operator `ρ` at one phase-space point,
/// before discarding the (vanishing) imaginary part.
///
/// Uses the closed form for `|m⟩⟨n|`, `m ≥ n`:
/// `(2/π)(-1)ⁿ √(n!/m!) (2α)^{m-n} e^{-2|α|²} L_n^{(m-n)}(4|α|²)`,
/// and its conjugate for `m < n`. This is the displaced-parity expectation
/// with the displacement taken in the full (untruncated) Fock space.
pub fn wigner_point(rho: &CMatrix, alpha: C64) -> C64 {
    let d = rho.nrows();
    let x = 4.0 * alpha.norm_sqr();
    let gauss = (2.0 / PI) * (-2.0 * alpha.norm_sqr()).exp();
    let two_alpha = alpha * 2.0;
    let mut total = ZERO;
    // power = (2α)^k / √((n+1)…(n+k)) is folded into the recurrence below.
    let mut alpha_pow = C64::new(1.0, 0.0);
    for k in 0..d {
        let mut lag_prev = 0.0;
        let mut lag = 1.0;
        // ratio = √(n!/(n+k)!)
        let mut ratio: f64 = (1..=k).map(|j| 1.0 / (j as f64).sqrt()).product();
        for n in 0..d - k {
            if n > 0 {
                let nf = (n - 1) as f64;
                let kf = k as f64;
                let next = ((2.0 * nf + 1.0 + kf - x) * lag - (nf + kf) * lag_prev) / (nf + 1.0);
                lag_prev = lag;
                lag = next;
                ratio *= (n as f64 / (n + k) as f64).sqrt();
            }
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let w = alpha_pow * (sign * ratio * lag * gauss);
            let m = n + k;
            // Σ_{m,n} ρ_{nm} W_{|m⟩⟨n|}
            total += rho[(n, m)] * w;
            if k > 0 {
                total += rho[(m, n)] * w.conj();
            }
        }
        alpha_pow *= two_alpha;
    }
    total
}

/// Wigner function on the `steps × steps` grid over `[-extent, extent]²`.
pub fn wigner(rho: &DensityMatrix, extent: f64, steps: usize) -> Result<PhaseGrid> {
    if rho.dim() < 2 {
        return Err(QstError::invalid("Wigner function needs dim >= 2"));
    }
    if steps == 0 || !(extent >= 0.0) || !extent.is_finite() {
        return Err(QstError::invalid("grid needs steps >= 1 and a finite extent"));
    }
    let axis = phase_axis(extent, steps);
    let mut values = Vec::with_capacity(steps * steps);
    for &y in &axis {
        for &x in &axis {
            values.push(wigner_point(rho.matrix(), C64::new(x, y)).re);
        }
    }
    Ok(PhaseGrid {
        extent,
        steps,
        values,
    })
}
