//! SLH triples with identity scattering, direct coupling and concatenation.

use crate::error::{Error, Result};
use crate::operator::{commutator, CMatrix, HilbertFactorization, Operator, EXACT_TOL, I};
use crate::superop::{vectorize_liouvillian, Superoperator};

/// `(S = I, L, H)` description of an open system.
#[derive(Debug, Clone, PartialEq)]
pub struct SlhTriple {
    couplings: Vec<Operator>,
    hamiltonian: Operator,
}

impl SlhTriple {
    pub fn new(couplings: Vec<Operator>, hamiltonian: Operator) -> Result<Self> {
        hamiltonian.ensure_hermitian(EXACT_TOL)?;
        for l in &couplings {
            if l.dim() != hamiltonian.dim() {
                return Err(Error::DimensionMismatch {
                    context: "SLH coupling",
                    expected: hamiltonian.dim(),
                    found: l.dim(),
                });
            }
        }
        Ok(Self {
            couplings,
            hamiltonian,
        })
    }

    /// Accepts an explicit scattering matrix, which must be the identity.
    pub fn with_scattering(
        scattering: &CMatrix,
        couplings: Vec<Operator>,
        hamiltonian: Operator,
    ) -> Result<Self> {
        let n = couplings.len();
        let is_identity = scattering.nrows() == n
            && scattering.ncols() == n
            && (scattering - CMatrix::identity(n, n)).iter().all(|z| z.norm() <= EXACT_TOL);
        if !is_identity {
            return Err(Error::InvalidParameter(
                "only the identity scattering matrix is supported".into(),
            ));
        }
        Self::new(couplings, hamiltonian)
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn couplings(&self) -> &[Operator] {
        &self.couplings
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.hamiltonian
    }
}

/// Lifts every operator of `g` onto `slot` of `factorization`.
pub fn embed(g: &SlhTriple, factorization: &HilbertFactorization, slot: usize) -> Result<SlhTriple> {
    let couplings = g
        .couplings
        .iter()
        .map(|l| factorization.embed(l, slot))
        .collect::<Result<Vec<_>>>()?;
    let hamiltonian = factorization.embed(&g.hamiltonian, slot)?;
    Ok(SlhTriple {
        couplings,
        hamiltonian,
    })
}

/// Ancilla-side operators `c_k` paired with principal-side operators `z_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectCoupling {
    c: Vec<Operator>,
    z: Vec<Operator>,
}

impl DirectCoupling {
    /// Operators already living on a common space.
    pub fn new(c: Vec<Operator>, z: Vec<Operator>) -> Result<Self> {
        if c.is_empty() || c.len() != z.len() {
            return Err(Error::InvalidParameter(format!(
                "direct coupling needs equal, nonempty lists (got {} and {})",
                c.len(),
                z.len()
            )));
        }
        let d = c[0].dim();
        for op in c.iter().chain(z.iter()) {
            if op.dim() != d {
                return Err(Error::DimensionMismatch {
                    context: "direct coupling",
                    expected: d,
                    found: op.dim(),
                });
            }
        }
        Ok(Self { c, z })
    }

    /// Local `c_k` on `ancilla_slot` and `z_k` on `principal_slot`, lifted to the full space.
    pub fn embedded(
        factorization: &HilbertFactorization,
        principal_slot: usize,
        ancilla_slot: usize,
        z_local: &[Operator],
        c_local: &[Operator],
    ) -> Result<Self> {
        if principal_slot == ancilla_slot {
            return Err(Error::InvalidParameter(
                "principal and ancilla slots must differ".into(),
            ));
        }
        let c = c_local
            .iter()
            .map(|op| factorization.embed(op, ancilla_slot))
            .collect::<Result<Vec<_>>>()?;
        let z = z_local
            .iter()
            .map(|op| factorization.embed(op, principal_slot))
            .collect::<Result<Vec<_>>>()?;
        Self::new(c, z)
    }

    pub fn c(&self) -> &[Operator] {
        &self.c
    }

    pub fn z(&self) -> &[Operator] {
        &self.z
    }

    pub fn dim(&self) -> usize {
        self.c[0].dim()
    }

    /// Coupling with `c` and `z` exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            c: self.z.clone(),
            z: self.c.clone(),
        }
    }

    /// `[c†z, ρ] + [ρ, z†c]` summed over channels.
    pub fn explicit_terms(&self, rho: &Operator) -> Result<Operator> {
        let mut out = Operator::zeros(rho.dim());
        for (c, z) in self.c.iter().zip(&self.z) {
            out += &commutator(&(&c.adjoint() * z), rho)?;
            out += &commutator(rho, &(&z.adjoint() * c))?;
        }
        Ok(out)
    }
}

/// `H_pa = i Σ (c_k† z_k - z_k† c_k)`.
pub fn direct_coupling_hamiltonian(dc: &DirectCoupling) -> Result<Operator> {
    let mut acc = Operator::zeros(dc.dim());
    for (c, z) in dc.c.iter().zip(&dc.z) {
        acc += &(&(&c.adjoint() * z) - &(&z.adjoint() * c));
    }
    let h = acc.scale(I);
    h.ensure_hermitian(EXACT_TOL)?;
    Ok(h.hermitian_part())
}

/// Augmented triple: couplings `[L_a; L_p]`, Hamiltonian `H_p + H_a + H_pa`.
pub fn concatenate(gp: &SlhTriple, ga: &SlhTriple, dc: Option<&DirectCoupling>) -> Result<SlhTriple> {
    if gp.dim() != ga.dim() {
        return Err(Error::DimensionMismatch {
            context: "concatenate",
            expected: gp.dim(),
            found: ga.dim(),
        });
    }
    let mut hamiltonian = &gp.hamiltonian + &ga.hamiltonian;
    if let Some(dc) = dc {
        if dc.dim() != gp.dim() {
            return Err(Error::DimensionMismatch {
                context: "concatenate direct coupling",
                expected: gp.dim(),
                found: dc.dim(),
            });
        }
        hamiltonian += &direct_coupling_hamiltonian(dc)?;
    }
    let couplings = ga.couplings.iter().chain(&gp.couplings).cloned().collect();
    SlhTriple::new(couplings, hamiltonian)
}

pub fn augmented_liouvillian(gt: &SlhTriple) -> Result<Superoperator> {
    vectorize_liouvillian(&gt.hamiltonian, &gt.couplings)
}
