//! Dense complex matrix helpers.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;

/// Sum of singular values.
pub fn trace_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.iter().sum()
}

/// Eigenvalues of the Hermitian part of `m`, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let herm = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let mut values: Vec<f64> = herm.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

/// Largest entrywise modulus of `m - m^H`.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    let d = m - m.adjoint();
    d.iter().map(|z| z.norm()).fold(0.0, f64::max)
}
