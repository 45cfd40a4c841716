//! Sparse superoperators acting on column-stacked density matrices.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::operator::{CMatrix, CVector, Operator, I, ZERO};

/// Linear map on `vec(ρ)` stored in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl Superoperator {
    /// Assembles from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(dim: usize, mut trip: Vec<(usize, usize, C64)>) -> Self {
        let n = dim * dim;
        trip.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(trip.len());
        let mut vals: Vec<C64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            assert!(r < n && c < n, "triplet index out of range");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut out = Self {
            dim,
            row_ptr,
            cols,
            vals,
        };
        out.prune();
        out
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_triplets(dim, Vec::new())
    }

    fn prune(&mut self) {
        let n = self.size();
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(self.cols.len());
        let mut vals = Vec::with_capacity(self.vals.len());
        for r in 0..n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.vals[k] != ZERO {
                    cols.push(self.cols[k]);
                    vals.push(self.vals[k]);
                }
            }
            row_ptr[r + 1] = cols.len();
        }
        self.row_ptr = row_ptr;
        self.cols = cols;
        self.vals = vals;
    }

    /// Hilbert-space dimension `d`; the map acts on vectors of length `d²`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn size(&self) -> usize {
        self.dim * self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.size()).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k]))
        })
    }

    pub fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.size());
        assert_eq!(y.len(), self.size());
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *yr = acc;
        }
    }

    pub fn apply(&self, x: &CVector) -> CVector {
        let mut y = CVector::zeros(self.size());
        self.apply_into(x.as_slice(), y.as_mut_slice());
        y
    }

    pub fn apply_operator(&self, rho: &Operator) -> Result<Operator> {
        if rho.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "superoperator apply",
                expected: self.dim,
                found: rho.dim(),
            });
        }
        let x = CVector::from_column_slice(rho.matrix().as_slice());
        Operator::new(CMatrix::from_column_slice(self.dim, self.dim, self.apply(&x).as_slice()))
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.size(), self.size());
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    /// Largest modulus of `vec(I)ᵀ 𝓛`; zero for a trace-preserving generator.
    pub fn trace_defect(&self) -> f64 {
        let d = self.dim;
        let mut acc = vec![ZERO; self.size()];
        for i in 0..d {
            let r = i * d + i;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc[self.cols[k]] += self.vals[k];
            }
        }
        acc.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Induced ∞-norm (maximum absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.size())
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .map(|k| self.vals[k].norm())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

fn nonzeros(m: &CMatrix) -> Vec<(usize, usize, C64)> {
    let mut out = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != ZERO {
                out.push((i, j, v));
            }
        }
    }
    out
}

/// Generator `𝓛` with `vec(ρ̇) = 𝓛 vec(ρ)` for `ρ̇ = -i[H, ρ] + Σ D[L]ρ`.
pub fn vectorize_liouvillian(h: &Operator, ls: &[Operator]) -> Result<Superoperator> {
    let d = h.dim();
    for l in ls {
        if l.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "vectorize_liouvillian",
                expected: d,
                found: l.dim(),
            });
        }
    }
    let vec_idx = |i: usize, j: usize| j * d + i;

    // ρ̇ = Gρ + ρG† + Σ LρL† with G = -iH - ½ Σ L†L.
    let mut g = h.matrix() * (-I);
    for l in ls {
        g -= (l.matrix().adjoint() * l.matrix()) * C64::new(0.5, 0.0);
    }
    let g_nz = nonzeros(&g);
    let mut trip = Vec::with_capacity(2 * g_nz.len() * d);
    for &(i, k, v) in &g_nz {
        for j in 0..d {
            trip.push((vec_idx(i, j), vec_idx(k, j), v));
        }
    }
    // (ρG†)_{ij} = Σ_k ρ_{ik} conj(G_{jk})
    for &(j, k, v) in &g_nz {
        for i in 0..d {
            trip.push((vec_idx(i, j), vec_idx(i, k), v.conj()));
        }
    }
    for l in ls {
        let l_nz = nonzeros(l.matrix());
        for &(i, k, v) in &l_nz {
            for &(j, m, w) in &l_nz {
                trip.push((vec_idx(i, j), vec_idx(k, m), v * w.conj()));
            }
        }
    }
    Ok(Superoperator::from_triplets(d, trip))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{annihilation, lindblad_rhs, pauli, vectorize, Pauli};

    fn test_ops() -> (Operator, Vec<Operator>, Operator) {
        let h = Operator::hermitian(CMatrix::from_fn(3, 3, |i, j| {
            let re = (i + j) as f64 * 0.4;
            let im = if i == j { 0.0 } else { (i as f64 - j as f64) * 0.7 };
            C64::new(re, im)
        }))
        .unwrap();
        let l1 = annihilation(3).unwrap().scale_real(0.8);
        let l2 = Operator::new(CMatrix::from_fn(3, 3, |i, j| C64::new(0.1 * i as f64, -0.2 * j as f64))).unwrap();
        let rho = Operator::new(CMatrix::from_fn(3, 3, |i, j| {
            C64::new(1.0 / (1 + i + j) as f64, 0.3 * (i as f64 - j as f64))
        }))
        .unwrap();
        (h, vec![l1, l2], rho)
    }

    #[test]
    fn matches_operator_form() {
        let (h, ls, rho) = test_ops();
        let lv = vectorize_liouvillian(&h, &ls).unwrap();
        let direct = lindblad_rhs(&h, &ls, &rho).unwrap();
        assert!(lv.apply_operator(&rho).unwrap().max_abs_diff(&direct) < 1e-13);
        let dense = lv.to_dense() * vectorize(&rho);
        assert!((dense - vectorize(&direct)).camax() < 1e-13);
    }

    #[test]
    fn trace_preserving_and_empty() {
        let (h, ls, _) = test_ops();
        assert!(vectorize_liouvillian(&h, &ls).unwrap().trace_defect() < 1e-14);
        let zero = vectorize_liouvillian(&Operator::zeros(2), &[]).unwrap();
        assert_eq!(zero.nnz(), 0);
        assert!(vectorize_liouvillian(&Operator::zeros(2), &[Operator::zeros(3)]).is_err());
    }

    #[test]
    fn triplets_are_summed() {
        let s = Superoperator::from_triplets(
            1,
            vec![(0, 0, C64::new(1.0, 0.0)), (0, 0, C64::new(2.0, 1.0))],
        );
        assert_eq!(s.nnz(), 1);
        assert_eq!(s.to_dense()[(0, 0)], C64::new(3.0, 1.0));
        let cancel = Superoperator::from_triplets(
            1,
            vec![(0, 0, C64::new(1.0, 0.0)), (0, 0, C64::new(-1.0, 0.0))],
        );
        assert_eq!(cancel.nnz(), 0);
        let _ = pauli(Pauli::Z);
    }
}
