//! Small dense linear-algebra helpers shared by every module.

use nalgebra::{DMatrix, DVector};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Largest singular value. Zero for empty matrices.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Frobenius inner product `tr(aᵀ b)`.
pub fn frob_inner(a: &Mat, b: &Mat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Extreme eigenvalues of the symmetric part of `m`.
pub fn sym_eig_range(m: &Mat) -> (f64, f64) {
    let s = (m + m.transpose()) * 0.5;
    let ev = s.symmetric_eigenvalues();
    (ev.min(), ev.max())
}

/// Symmetric square root and inverse square root of a positive definite matrix.
pub fn sym_sqrt_pair(p: &Mat) -> Option<(Mat, Mat)> {
    let eig = p.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return None;
    }
    let v = &eig.eigenvectors;
    let root = Mat::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let inv_root = Mat::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Some((v * root * v.transpose(), v * inv_root * v.transpose()))
}

/// Block-diagonal matrix with the given square blocks.
pub fn block_diag(blocks: &[&Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}
