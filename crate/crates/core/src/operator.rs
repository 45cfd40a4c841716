//! Dense operator algebra on finite-dimensional Hilbert spaces.
//!
//! Conventions used throughout the crate:
//! - qubit basis is (excited, ground), so `σz = diag(1, -1)` and `σ- = |g⟩⟨e|`;
//! - Fock basis is `|0⟩ .. |N-1⟩`;
//! - tensor products are ordered principal ⊗ ancilla(s);
//! - vectorization stacks columns: `vec(AXB) = (Bᵀ ⊗ A) vec(X)`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Tolerance for construction-time Hermiticity and trace checks.
pub const EXACT_TOL: f64 = 1e-12;
/// Tolerance for checks applied after numerical integration.
pub const INTEGRATION_TOL: f64 = 1e-9;

pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// Square complex matrix acting on a finite-dimensional Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    mat: CMatrix,
}

impl Operator {
    pub fn new(mat: CMatrix) -> Result<Self> {
        if mat.nrows() == 0 || mat.nrows() != mat.ncols() {
            return Err(Error::InvalidDimension(format!(
                "operator must be square with dim >= 1, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        Ok(Self { mat })
    }

    /// Builds an operator and checks it is Hermitian to [`EXACT_TOL`].
    pub fn hermitian(mat: CMatrix) -> Result<Self> {
        let op = Self::new(mat)?;
        op.ensure_hermitian(EXACT_TOL)?;
        Ok(op)
    }

    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::new(CMatrix::from_row_iterator(
            rows,
            cols,
            data.iter().map(|&x| C64::new(x, 0.0)),
        ))
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim >= 1, "identity needs dim >= 1");
        Self {
            mat: CMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "zeros needs dim >= 1");
        Self {
            mat: CMatrix::zeros(dim, dim),
        }
    }

    /// Projector `|k⟩⟨k|` in the computational basis.
    pub fn basis_projector(dim: usize, k: usize) -> Self {
        let mut op = Self::zeros(dim);
        op.mat[(k, k)] = ONE;
        op
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn adjoint(&self) -> Self {
        Self {
            mat: self.mat.adjoint(),
        }
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { mat: &self.mat * s }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        assert_eq!(self.dim(), other.dim(), "max_abs_diff: dimension mismatch");
        self.mat
            .iter()
            .zip(other.mat.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.mat.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest entrywise modulus of `M - M†`.
    pub fn hermiticity_defect(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for j in 0..d {
            for i in 0..=j {
                worst = worst.max((self.mat[(i, j)] - self.mat[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    pub fn ensure_hermitian(&self, tol: f64) -> Result<()> {
        let defect = self.hermiticity_defect();
        if defect > tol {
            return Err(Error::NotHermitian(defect));
        }
        Ok(())
    }

    /// `(M + M†) / 2`.
    pub fn hermitian_part(&self) -> Self {
        Self {
            mat: (&self.mat + self.mat.adjoint()) * C64::new(0.5, 0.0),
        }
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let eig = nalgebra::SymmetricEigen::new(self.hermitian_part().mat);
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        vals
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.hermitian_eigenvalues()[0]
    }

    fn check_same_dim(&self, other: &Operator, context: &'static str) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }
}

impl Add<&Operator> for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator {
            mat: &self.mat + &rhs.mat,
        }
    }
}

impl Add for Operator {
    type Output = Operator;
    fn add(self, rhs: Operator) -> Operator {
        Operator {
            mat: self.mat + rhs.mat,
        }
    }
}

impl AddAssign<&Operator> for Operator {
    fn add_assign(&mut self, rhs: &Operator) {
        self.mat += &rhs.mat;
    }
}

impl Sub<&Operator> for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        Operator {
            mat: &self.mat - &rhs.mat,
        }
    }
}

impl Sub for Operator {
    type Output = Operator;
    fn sub(self, rhs: Operator) -> Operator {
        Operator {
            mat: self.mat - rhs.mat,
        }
    }
}

impl Mul<&Operator> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator {
            mat: &self.mat * &rhs.mat,
        }
    }
}

impl Mul for Operator {
    type Output = Operator;
    fn mul(self, rhs: Operator) -> Operator {
        Operator {
            mat: self.mat * rhs.mat,
        }
    }
}

impl Mul<C64> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: C64) -> Operator {
        self.scale(rhs)
    }
}

impl Mul<f64> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: f64) -> Operator {
        self.scale_real(rhs)
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        Operator { mat: -&self.mat }
    }
}

/// Ordered subsystem dimensions of a tensor-product space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HilbertFactorization {
    dims: Vec<usize>,
}

impl HilbertFactorization {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::InvalidDimension(format!(
                "factorization needs positive subsystem dims, got {dims:?}"
            )));
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    /// Lifts a local operator on `slot` to the full space by padding with identities.
    pub fn embed(&self, op: &Operator, slot: usize) -> Result<Operator> {
        let Some(&d) = self.dims.get(slot) else {
            return Err(Error::InvalidDimension(format!(
                "slot {slot} out of range for {} subsystems",
                self.dims.len()
            )));
        };
        if op.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "embed",
                expected: d,
                found: op.dim(),
            });
        }
        let left: usize = self.dims[..slot].iter().product();
        let right: usize = self.dims[slot + 1..].iter().product();
        Ok(kron(&kron(&Operator::identity(left), op), &Operator::identity(right)))
    }
}

/// Truncated annihilation operator with `√k` at `(k-1, k)`.
pub fn annihilation(n_levels: usize) -> Result<Operator> {
    if n_levels < 2 {
        return Err(Error::InvalidDimension(format!(
            "annihilation operator needs at least 2 levels, got {n_levels}"
        )));
    }
    let mut op = Operator::zeros(n_levels);
    for k in 1..n_levels {
        op.mat[(k - 1, k)] = C64::new((k as f64).sqrt(), 0.0);
    }
    Ok(op)
}

/// `a†a` on `n_levels`.
pub fn number(n_levels: usize) -> Result<Operator> {
    let a = annihilation(n_levels)?;
    Ok(&a.adjoint() * &a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    X,
    Y,
    Z,
    Minus,
    Plus,
}

pub fn pauli(which: Pauli) -> Operator {
    let (a, b, c, d) = match which {
        Pauli::X => (ZERO, ONE, ONE, ZERO),
        Pauli::Y => (ZERO, -I, I, ZERO),
        Pauli::Z => (ONE, ZERO, ZERO, -ONE),
        Pauli::Minus => (ZERO, ZERO, ONE, ZERO),
        Pauli::Plus => (ZERO, ONE, ZERO, ZERO),
    };
    Operator {
        mat: CMatrix::from_row_slice(2, 2, &[a, b, c, d]),
    }
}

pub fn kron(a: &Operator, b: &Operator) -> Operator {
    Operator {
        mat: a.mat.kronecker(&b.mat),
    }
}

/// Kronecker product of a non-empty list, left to right.
pub fn kron_all(ops: &[&Operator]) -> Operator {
    let (first, rest) = ops.split_first().expect("kron_all needs at least one operator");
    rest.iter().fold((*first).clone(), |acc, op| kron(&acc, op))
}

pub fn commutator(a: &Operator, b: &Operator) -> Result<Operator> {
    a.check_same_dim(b, "commutator")?;
    Ok(&(a * b) - &(b * a))
}

/// `LρL† - ½(L†Lρ + ρL†L)`.
pub fn dissipator(l: &Operator, rho: &Operator) -> Result<Operator> {
    l.check_same_dim(rho, "dissipator")?;
    let ld = l.adjoint();
    let ldl = &ld * l;
    let jump = &(l * rho) * &ld;
    let anti = &(&ldl * rho) + &(rho * &ldl);
    Ok(&jump - &anti.scale_real(0.5))
}

/// `-i[H, ρ] + Σ D[L]ρ` evaluated directly in operator form.
pub fn lindblad_rhs(h: &Operator, ls: &[Operator], rho: &Operator) -> Result<Operator> {
    let mut out = commutator(h, rho)?.scale(-I);
    for l in ls {
        out += &dissipator(l, rho)?;
    }
    Ok(out)
}

/// `tr(ρX)`.
pub fn expectation(rho: &Operator, x: &Operator) -> Result<C64> {
    rho.check_same_dim(x, "expectation")?;
    let (r, m) = (&rho.mat, &x.mat);
    let d = rho.dim();
    let mut acc = ZERO;
    for i in 0..d {
        for k in 0..d {
            acc += r[(i, k)] * m[(k, i)];
        }
    }
    Ok(acc)
}

/// Reduced state on subsystem `keep`.
pub fn partial_trace(
    rho: &Operator,
    factorization: &HilbertFactorization,
    keep: usize,
) -> Result<Operator> {
    let dims = factorization.dims();
    if factorization.total_dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            context: "partial_trace",
            expected: factorization.total_dim(),
            found: rho.dim(),
        });
    }
    if keep >= dims.len() {
        return Err(Error::InvalidDimension(format!(
            "keep index {keep} out of range for {} subsystems",
            dims.len()
        )));
    }
    let left: usize = dims[..keep].iter().product();
    let dk = dims[keep];
    let right: usize = dims[keep + 1..].iter().product();
    let idx = |l: usize, k: usize, r: usize| (l * dk + k) * right + r;
    let mut out = CMatrix::zeros(dk, dk);
    for i in 0..dk {
        for j in 0..dk {
            let mut acc = ZERO;
            for l in 0..left {
                for r in 0..right {
                    acc += rho.mat[(idx(l, i, r), idx(l, j, r))];
                }
            }
            out[(i, j)] = acc;
        }
    }
    Operator::new(out)
}

/// Column-stacked vector of an operator.
pub fn vectorize(rho: &Operator) -> CVector {
    CVector::from_column_slice(rho.mat.as_slice())
}

pub fn unvectorize(v: &CVector) -> Result<Operator> {
    let n = v.len();
    let d = (n as f64).sqrt().round() as usize;
    if d == 0 || d * d != n {
        return Err(Error::InvalidDimension(format!(
            "vector of length {n} is not a vectorized square matrix"
        )));
    }
    Operator::new(CMatrix::from_column_slice(d, d, v.as_slice()))
}

/// Pure state `|ψ⟩⟨ψ|` (normalized).
pub fn pure_state(psi: &CVector) -> Result<Operator> {
    let norm = psi.norm();
    if norm == 0.0 {
        return Err(Error::InvalidParameter("zero state vector".into()));
    }
    let v = psi / C64::new(norm, 0.0);
    Operator::new(&v * v.adjoint())
}
