//! Small dense linear-algebra helpers shared by the synthesis and filtering code.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::operator::CMatrix;

pub type RMatrix = DMatrix<f64>;
pub type RVector = DVector<f64>;

pub fn eigenvalues_complex(m: &CMatrix) -> Vec<C64> {
    if m.nrows() == 1 {
        return vec![m[(0, 0)]];
    }
    let fm = faer::Mat::<C64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    fm.eigenvalues()
        .unwrap_or_else(|_| vec![C64::new(f64::NAN, f64::NAN); m.nrows()])
}

pub fn eigenvalues_real(m: &RMatrix) -> Vec<C64> {
    let fm = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    fm.eigenvalues()
        .unwrap_or_else(|_| vec![C64::new(f64::NAN, f64::NAN); m.nrows()])
}

pub fn max_real_part(eigs: &[C64]) -> f64 {
    eigs.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz_complex(m: &CMatrix) -> bool {
    max_real_part(&eigenvalues_complex(m)) < 0.0
}

pub fn is_hurwitz_real(m: &RMatrix) -> bool {
    max_real_part(&eigenvalues_real(m)) < 0.0
}

pub fn cmax_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn rmax_abs(m: &RMatrix) -> f64 {
    m.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

pub fn to_complex(m: &RMatrix) -> CMatrix {
    m.map(|x| C64::new(x, 0.0))
}

/// Solves `F P + P F† + Q = 0` for `P` (complex, dense Kronecker form).
pub fn lyapunov_complex(f: &CMatrix, q: &CMatrix) -> Result<CMatrix> {
    let n = f.nrows();
    if f.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "lyapunov",
            expected: n,
            found: q.nrows(),
        });
    }
    let eye = CMatrix::identity(n, n);
    let op = eye.kronecker(f) + f.conjugate().kronecker(&eye);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Lyapunov operator is singular".into()))?;
    let p = CMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&p + p.adjoint()) * C64::new(0.5, 0.0))
}

/// Solves `A X + X Aᵀ + Q = 0` for real `X`.
pub fn lyapunov_real(a: &RMatrix, q: &RMatrix) -> Result<RMatrix> {
    let n = a.nrows();
    let eye = RMatrix::identity(n, n);
    let op = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = -RVector::from_column_slice(q.as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Lyapunov operator is singular".into()))?;
    let x = RMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

pub fn symmetric_eigenvalues(m: &RMatrix) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut vals: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

/// Symmetric square root of a positive semidefinite matrix (negative eigenvalues clipped).
pub fn psd_sqrt(m: &RMatrix) -> RMatrix {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let d = eig.eigenvalues.map(|x| x.max(0.0).sqrt());
    &eig.eigenvectors * RMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_lyapunov_scalar() {
        let f = CMatrix::from_element(1, 1, C64::new(-0.3, -10.0));
        let q = CMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        let p = lyapunov_complex(&f, &q).unwrap();
        assert!((p[(0, 0)] - C64::new(1.0 / 0.6, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn real_eigenvalues_of_rotation() {
        let m = RMatrix::from_row_slice(2, 2, &[-1.0, 2.0, -2.0, -1.0]);
        let mut e = eigenvalues_real(&m);
        e.sort_by(|a, b| a.im.total_cmp(&b.im));
        assert!((e[0] - C64::new(-1.0, -2.0)).norm() < 1e-12);
        assert!(is_hurwitz_real(&m));
    }

    #[test]
    fn complex_eigenvalues_triangular() {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[C64::new(-1.0, 1.0), C64::new(3.0, 0.0), C64::new(0.0, 0.0), C64::new(0.5, 0.0)],
        );
        let mut e = eigenvalues_complex(&m);
        e.sort_by(|a, b| a.re.total_cmp(&b.re));
        assert!((e[0] - C64::new(-1.0, 1.0)).norm() < 1e-12);
        assert!(!is_hurwitz_complex(&m));
    }
}
