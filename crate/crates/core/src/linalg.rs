//! Small dense helpers shared by the numerical modules.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

pub(crate) fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix (input is symmetrized first).
pub(crate) fn sym_eigenvalues(m: &Matrix) -> Vector {
    SymmetricEigen::new(symmetrize(m)).eigenvalues
}

pub(crate) fn max_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigenvalues(m).max()
}

pub(crate) fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigenvalues(m).min()
}

/// `f(M)` for symmetric `M = Q diag(l) Q'`, applied to the eigenvalues.
pub(crate) fn sym_apply(m: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mapped = eig.eigenvalues.map(f);
    let q = &eig.eigenvectors;
    q * Matrix::from_diagonal(&mapped) * q.transpose()
}

pub(crate) fn is_positive_definite(m: &Matrix) -> bool {
    m.is_square() && Cholesky::new(symmetrize(m)).is_some() && min_eigenvalue(m) > 0.0
}

/// Inverse of a symmetric positive definite matrix, `None` if not PD.
pub(crate) fn spd_inverse(m: &Matrix) -> Option<Matrix> {
    Cholesky::new(symmetrize(m)).map(|c| symmetrize(&c.inverse()))
}

pub(crate) fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub(crate) fn one_norm(v: &Vector) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Largest eigenvalue modulus of a square matrix.
pub(crate) fn spectral_radius(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| sqrt(z.re * z.re + z.im * z.im))
        .fold(0.0, f64::max)
}

/// Whether `(a, b)` has an uncontrollable mode with modulus at least one.
pub(crate) fn unstabilizable(a: &Matrix, b: &Matrix) -> bool {
    let n = a.nrows();
    let mut krylov = Matrix::zeros(n, n * b.ncols());
    let mut block = b.clone();
    for k in 0..n {
        krylov.columns_mut(k * b.ncols(), b.ncols()).copy_from(&block);
        block = a * block;
    }
    let gram = &krylov * krylov.transpose();
    let eig = gram.clone().symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs())).max(1.0);
    let free: alloc::vec::Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= 1e-10 * scale).collect();
    if free.is_empty() {
        return false;
    }
    let basis = Matrix::from_fn(n, free.len(), |r, c| eig.eigenvectors[(r, free[c])]);
    spectral_radius(&(basis.transpose() * a * &basis)) >= 1.0 - 1e-9
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn spectral_radius_of_rotation() {
        let r = dmatrix![0.0, -2.0; 2.0, 0.0];
        assert!((spectral_radius(&r) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn stabilizability() {
        assert!(unstabilizable(&dmatrix![2.0], &dmatrix![0.0]));
        assert!(!unstabilizable(&dmatrix![0.5], &dmatrix![0.0]));
        assert!(!unstabilizable(&dmatrix![2.0], &dmatrix![1.0]));
        // second mode unstable and unreachable
        assert!(unstabilizable(&dmatrix![0.5, 0.0; 0.0, 1.5], &dmatrix![1.0; 0.0]));
        assert!(!unstabilizable(&dmatrix![1.0, 0.1; 0.0, 1.0], &dmatrix![0.0; 0.1]));
    }
}
