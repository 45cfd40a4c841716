use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

use nmq_core::operator::{
    annihilation, dissipator, kron, lindblad_rhs, partial_trace, pauli, unvectorize, vectorize, CMatrix,
    HilbertFactorization, Operator, Pauli,
};
use nmq_core::slh::{direct_coupling_hamiltonian, DirectCoupling};
use nmq_core::spectral::{psd_relative_error, synthesize, TransferFunction};
use nmq_core::superop::vectorize_liouvillian;
use nmq_core::trajectory::{sme_evolve, SmeProblem, SmeSettings};

fn cmatrix(d: usize) -> impl Strategy<Value = CMatrix> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), d * d)
        .prop_map(move |v| DMatrix::from_iterator(d, d, v.into_iter().map(|(a, b)| C64::new(a, b))))
}

fn operator(d: usize) -> impl Strategy<Value = Operator> {
    cmatrix(d).prop_map(|m| Operator::new(m).unwrap())
}

fn hermitian(d: usize) -> impl Strategy<Value = Operator> {
    cmatrix(d).prop_map(|m| Operator::new(&m + m.adjoint()).unwrap())
}

fn density(d: usize) -> impl Strategy<Value = Operator> {
    cmatrix(d).prop_map(|m| {
        let p = &m * m.adjoint();
        let tr = p.trace();
        Operator::new(p / tr).unwrap()
    })
}

fn complex_in(lo: f64, hi: f64, im: f64) -> impl Strategy<Value = C64> {
    (lo..hi, -im..im).prop_map(|(a, b)| C64::new(a, b))
}

/// Stable minimum-phase transfer functions of order 1..=4 with separated roots.
fn transfer_function() -> impl Strategy<Value = TransferFunction> {
    (1usize..=4)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(complex_in(-3.0, -0.2, 6.0), n),
                prop::collection::vec(complex_in(-3.0, -0.2, 6.0), 0..n),
                0.2..3.0f64,
            )
        })
        .prop_filter("roots must be separated", |(poles, zeros, _)| {
            let sep = |v: &[C64]| v.iter().enumerate().all(|(i, a)| v[i + 1..].iter().all(|b| (a - b).norm() > 0.3));
            let mut all = poles.clone();
            all.extend(zeros);
            sep(&all)
        })
        .prop_map(|(poles, zeros, gain)| TransferFunction::from_zeros_poles(C64::new(gain, 0.0), &zeros, &poles).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dissipator_is_trace_free(l in operator(4), rho in operator(4)) {
        let d = dissipator(&l, &rho).unwrap();
        prop_assert!(d.trace().norm() <= 1e-12 * (1.0 + l.max_abs().powi(2) * rho.max_abs()));
    }

    #[test]
    fn vectorization_round_trips(rho in operator(5)) {
        let back = unvectorize(&vectorize(&rho)).unwrap();
        prop_assert_eq!(back, rho);
    }

    #[test]
    fn kron_is_associative(a in operator(2), b in operator(3), c in operator(2)) {
        let left = kron(&kron(&a, &b), &c);
        let right = kron(&a, &kron(&b, &c));
        prop_assert!(left.max_abs_diff(&right) <= 1e-14);
    }

    #[test]
    fn embedding_and_partial_trace_round_trip(a in density(2), b in density(3), c in density(2)) {
        let f = HilbertFactorization::new(vec![2, 3, 2]).unwrap();
        let rho = kron(&kron(&a, &b), &c);
        for (k, local) in [&a, &b, &c].into_iter().enumerate() {
            prop_assert!(partial_trace(&rho, &f, k).unwrap().max_abs_diff(local) <= 1e-13);
        }
        let x = pauli(Pauli::X);
        let lifted = f.embed(&x, 2).unwrap();
        prop_assert!(lifted.max_abs_diff(&kron(&Operator::identity(6), &x)) == 0.0);
    }

    #[test]
    fn direct_coupling_hamiltonian_is_hermitian(c in operator(3), z in operator(2), g in 0.01..5.0f64) {
        let f = HilbertFactorization::new(vec![2, 3]).unwrap();
        let dc = DirectCoupling::embedded(&f, 0, 1, &[z.scale_real(g)], &[c]).unwrap();
        let h = direct_coupling_hamiltonian(&dc).unwrap();
        prop_assert!(h.hermiticity_defect() <= 1e-12);
    }

    #[test]
    fn liouvillian_is_trace_preserving(h in hermitian(3), l1 in operator(3), l2 in operator(3), rho in density(3)) {
        let lv = vectorize_liouvillian(&h, &[l1.clone(), l2.clone()]).unwrap();
        prop_assert!(lv.trace_defect() <= 1e-12);
        let dense = lindblad_rhs(&h, &[l1, l2], &rho).unwrap();
        let sparse = lv.apply_operator(&rho).unwrap();
        prop_assert!(dense.max_abs_diff(&sparse) <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn factorization_round_trip(gamma in transfer_function()) {
        let psd = gamma.psd().unwrap();
        let pr = synthesize(&psd).unwrap();
        prop_assert!(pr.residual <= 1e-10);
        prop_assert!(psd_relative_error(&pr.realization, &psd, &psd.validation_grid()) <= 1e-8);
    }

    #[test]
    fn sme_trace_stays_normalized(seed in any::<u64>(), omega in 0.5..5.0f64, gamma in 0.1..2.0f64) {
        let a = annihilation(3).unwrap();
        let problem = SmeProblem {
            hamiltonian: (&a.adjoint() * &a).scale_real(omega),
            measured: a.scale_real(gamma.sqrt()),
            unmeasured: vec![],
        };
        let mut psi = nalgebra::DVector::from_element(3, C64::new(1.0, 0.0));
        psi /= C64::new(3f64.sqrt(), 0.0);
        let rho0 = Operator::new(&psi * psi.adjoint()).unwrap();
        let traj = sme_evolve(&problem, &rho0, &SmeSettings::new(0.5, 1e-4, 500, seed), 0).unwrap();
        prop_assert!(traj.max_trace_deviation <= 1e-9);
        prop_assert!(traj.min_eigenvalue >= -1e-7);
        for s in &traj.states {
            prop_assert!(s.hermiticity_defect() <= 1e-12);
        }
    }
}
