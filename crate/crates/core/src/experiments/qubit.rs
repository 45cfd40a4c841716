//! Qubit driven by Lorentzian noise from a single-mode ancilla, filtered
//! through homodyne detection of its probe channel.

use log::warn;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::Table;
use crate::error::{Error, Result};
use crate::operator::{annihilation, expectation, number, pauli, HilbertFactorization, Operator, Pauli};
use crate::slh::{augmented_liouvillian, concatenate, DirectCoupling, SlhTriple};
use crate::spectral::lorentzian_ancilla;
use crate::superop::vectorize_liouvillian;
use crate::trajectory::{me_evolve, sme_ensemble, steady_state, EnsembleStats, SmeProblem, SmeScheme, SmeSettings};

/// Ancilla top-level population above which the truncation is reported as too small.
pub const TRUNCATION_WARN: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitConfig {
    pub omega_q: f64,
    pub omega_0: f64,
    pub kappa1: f64,
    pub gamma_q: f64,
    pub gamma0: f64,
    pub ancilla_levels: usize,
    /// Initial Bloch vector of the qubit; the ancilla starts in vacuum.
    pub rho0: [f64; 3],
    pub horizon: f64,
    pub dt: f64,
    pub n_traj: usize,
    pub seed: u64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub scheme: SmeScheme,
}

fn default_record_every() -> usize {
    200
}

impl QubitConfig {
    /// Published parameters, 500 trajectories, 3 ancilla levels.
    pub fn published() -> Self {
        Self {
            omega_q: 10.0,
            omega_0: 10.0,
            kappa1: 1.0,
            gamma_q: 0.8,
            gamma0: 0.6,
            ancilla_levels: 3,
            rho0: [1.0, 0.0, 0.0],
            horizon: 10.0,
            dt: 1e-4,
            n_traj: 500,
            seed: 0,
            record_every: default_record_every(),
            scheme: SmeScheme::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ancilla_levels < 2 {
            return Err(Error::InvalidParameter("ancilla_levels must be at least 2".into()));
        }
        for (name, v) in [("kappa1", self.kappa1), ("gamma_q", self.gamma_q)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.gamma0 > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma0 must be positive, got {}", self.gamma0)));
        }
        let r2: f64 = self.rho0.iter().map(|x| x * x).sum();
        if r2 > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!("Bloch vector length {} exceeds 1", r2.sqrt())));
        }
        if self.n_traj == 0 {
            return Err(Error::InvalidParameter("n_traj must be positive".into()));
        }
        Ok(())
    }

    pub fn qubit_state(&self) -> Operator {
        let [x, y, z] = self.rho0;
        let m = Operator::identity(2).matrix()
            + pauli(Pauli::X).matrix() * C64::new(x, 0.0)
            + pauli(Pauli::Y).matrix() * C64::new(y, 0.0)
            + pauli(Pauli::Z).matrix() * C64::new(z, 0.0);
        Operator::new(m * C64::new(0.5, 0.0)).expect("2x2")
    }
}

/// Augmented qubit ⊗ ancilla model; couplings are `[L_a, L_q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QubitModel {
    pub factorization: HilbertFactorization,
    pub augmented: SlhTriple,
    pub markovian: SlhTriple,
    pub rho0: Operator,
    pub observables: [Operator; 3],
    pub ancilla_top: Operator,
}

pub fn qubit_model(cfg: &QubitConfig) -> Result<QubitModel> {
    cfg.validate()?;
    let n = cfg.ancilla_levels;
    let f = HilbertFactorization::new(vec![2, n])?;
    let hq = pauli(Pauli::Z).scale_real(0.5 * cfg.omega_q);
    let z = pauli(Pauli::Y).scale_real(cfg.kappa1.sqrt());
    let lq = pauli(Pauli::X).scale_real(cfg.gamma_q.sqrt());

    let r = lorentzian_ancilla(cfg.omega_0, cfg.gamma0)?;
    let a = annihilation(n)?;
    let ancilla = SlhTriple::new(
        vec![f.embed(&a.scale(r.coupling()[(0, 0)]), 1)?],
        f.embed(&number(n)?.scale_real(r.omega()[(0, 0)].re), 1)?,
    )?;
    let principal = SlhTriple::new(vec![f.embed(&lq, 0)?], f.embed(&hq, 0)?)?;
    let dc = DirectCoupling::embedded(&f, 0, 1, std::slice::from_ref(&z), &[a.scale(r.h[(0, 0)])])?;
    let augmented = concatenate(&principal, &ancilla, Some(&dc))?;
    let markovian = SlhTriple::new(vec![z, lq], hq)?;

    let rho0 = crate::operator::kron(&cfg.qubit_state(), &Operator::basis_projector(n, 0));
    let observables = [Pauli::X, Pauli::Y, Pauli::Z].map(|p| f.embed(&pauli(p), 0).expect("slot 0"));
    let ancilla_top = f.embed(&Operator::basis_projector(n, n - 1), 1)?;
    Ok(QubitModel {
        factorization: f,
        augmented,
        markovian,
        rho0,
        observables,
        ancilla_top,
    })
}

impl QubitModel {
    pub fn sme_problem(&self) -> SmeProblem {
        let ls = self.augmented.couplings();
        SmeProblem {
            hamiltonian: self.augmented.hamiltonian().clone(),
            measured: ls[ls.len() - 1].clone(),
            unmeasured: ls[..ls.len() - 1].to_vec(),
        }
    }
}

/// Bloch-vector curve `(t, ⟨σx⟩, ⟨σy⟩, ⟨σz⟩)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlochCurve {
    pub times: Vec<f64>,
    pub values: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QubitResult {
    pub unconditional: BlochCurve,
    pub conditional: EnsembleStats,
    pub markovian: BlochCurve,
    /// Stationary `⟨σz⟩` of the augmented and Markovian generators.
    pub stationary_sz: [f64; 2],
    pub max_ancilla_top: f64,
    pub scheme: SmeScheme,
}

fn bloch(rhos: &[Operator], obs: &[Operator; 3]) -> Result<Vec<[f64; 3]>> {
    rhos.iter()
        .map(|r| {
            Ok([
                expectation(r, &obs[0])?.re,
                expectation(r, &obs[1])?.re,
                expectation(r, &obs[2])?.re,
            ])
        })
        .collect()
}

pub fn run_qubit_study(cfg: &QubitConfig) -> Result<QubitResult> {
    let m = qubit_model(cfg)?;
    let l_aug = augmented_liouvillian(&m.augmented)?;
    let me = me_evolve(&l_aug, &m.rho0, cfg.horizon, cfg.dt, cfg.record_every)?;
    let unconditional = BlochCurve {
        values: bloch(&me.states, &m.observables)?,
        times: me.times.clone(),
    };
    let max_ancilla_top = me
        .states
        .iter()
        .map(|r| expectation(r, &m.ancilla_top).map(|z| z.re))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    if max_ancilla_top > TRUNCATION_WARN {
        warn!(
            "ancilla top-level population reaches {max_ancilla_top:.2e} (> {TRUNCATION_WARN:e}); consider more ancilla levels"
        );
    }

    let l_markov = vectorize_liouvillian(m.markovian.hamiltonian(), m.markovian.couplings())?;
    let q_obs = [Pauli::X, Pauli::Y, Pauli::Z].map(pauli);
    let mk = me_evolve(&l_markov, &cfg.qubit_state(), cfg.horizon, cfg.dt, cfg.record_every)?;
    let markovian = BlochCurve {
        values: bloch(&mk.states, &q_obs)?,
        times: mk.times,
    };

    let mut settings = SmeSettings::new(cfg.horizon, cfg.dt, cfg.record_every, cfg.seed);
    settings.scheme = cfg.scheme;
    let conditional = sme_ensemble(&m.sme_problem(), &m.rho0, &settings, cfg.n_traj, &m.observables)?;

    let ss_aug = steady_state(&l_aug)?;
    let ss_markov = steady_state(&l_markov)?;
    let stationary_sz = [
        expectation(&ss_aug, &m.observables[2])?.re,
        expectation(&ss_markov, &q_obs[2])?.re,
    ];
    Ok(QubitResult {
        unconditional,
        conditional,
        markovian,
        stationary_sz,
        max_ancilla_top,
        scheme: cfg.scheme,
    })
}

impl QubitResult {
    /// Fraction of record times where each averaged conditional component lies
    /// within `3σ/√n` of the unconditional curve.
    pub fn band_fraction(&self) -> [f64; 3] {
        let n = self.conditional.n_traj as f64;
        let len = self.unconditional.times.len();
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            let inside = (0..len)
                .filter(|&t| {
                    let gap = (self.conditional.mean[k][t].re - self.unconditional.values[t][k]).abs();
                    gap <= 3.0 * self.conditional.std[k][t] / n.sqrt() + 1e-12
                })
                .count();
            *o = inside as f64 / len as f64;
        }
        out
    }

    pub fn tables(&self) -> [(&'static str, Table); 3] {
        let mut u = Table::new(&["t", "sx", "sy", "sz"]);
        u.meta("model", "augmented master equation");
        u.meta("stationary_sz", self.stationary_sz[0]);
        u.meta("max_ancilla_top_population", self.max_ancilla_top);
        for (t, v) in self.unconditional.times.iter().zip(&self.unconditional.values) {
            u.push(vec![*t, v[0], v[1], v[2]]);
        }
        let mut c = Table::new(&["t", "sx", "sy", "sz", "std_sx", "std_sy", "std_sz"]);
        c.meta("n_traj", self.conditional.n_traj);
        c.meta("seed", self.conditional.seed);
        c.meta("scheme", format!("{:?}", self.scheme));
        c.meta("max_pre_norm_trace_drift", self.conditional.max_pre_norm_drift);
        c.meta("max_trace_deviation", self.conditional.max_trace_deviation);
        c.meta("min_eigenvalue", self.conditional.min_eigenvalue);
        for (k, t) in self.conditional.times.iter().enumerate() {
            let mean = &self.conditional.mean;
            let std = &self.conditional.std;
            c.push(vec![*t, mean[0][k].re, mean[1][k].re, mean[2][k].re, std[0][k], std[1][k], std[2][k]]);
        }
        let mut m = Table::new(&["t", "sx", "sy", "sz"]);
        m.meta("model", "markovian qubit");
        m.meta("stationary_sz", self.stationary_sz[1]);
        for (t, v) in self.markovian.times.iter().zip(&self.markovian.values) {
            m.push(vec![*t, v[0], v[1], v[2]]);
        }
        [("qubit_unconditional", u), ("qubit_conditional", c), ("qubit_markovian", m)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markovian_stationary_state_is_maximally_mixed() {
        let m = qubit_model(&QubitConfig::published()).unwrap();
        let l = vectorize_liouvillian(m.markovian.hamiltonian(), m.markovian.couplings()).unwrap();
        let rho = steady_state(&l).unwrap();
        assert!(rho.max_abs_diff(&Operator::identity(2).scale_real(0.5)) < 1e-10);
    }

    #[test]
    fn decoupled_ancilla_reduces_to_probe_only_dynamics() {
        let cfg = QubitConfig { kappa1: 0.0, horizon: 2.0, n_traj: 4, ..QubitConfig::published() };
        let m = qubit_model(&cfg).unwrap();
        let aug = me_evolve(&augmented_liouvillian(&m.augmented).unwrap(), &m.rho0, 2.0, 1e-3, 100).unwrap();
        let probe_only = SlhTriple::new(vec![pauli(Pauli::X).scale_real(cfg.gamma_q.sqrt())], pauli(Pauli::Z).scale_real(5.0)).unwrap();
        let l = augmented_liouvillian(&probe_only).unwrap();
        let q = me_evolve(&l, &cfg.qubit_state(), 2.0, 1e-3, 100).unwrap();
        for (a, b) in aug.states.iter().zip(&q.states) {
            let red = crate::operator::partial_trace(a, &m.factorization, 0).unwrap();
            assert!(red.max_abs_diff(b) < 1e-10);
        }
    }

    #[test]
    fn short_study_runs() {
        let cfg = QubitConfig { horizon: 0.2, n_traj: 16, record_every: 100, ..QubitConfig::published() };
        let r = run_qubit_study(&cfg).unwrap();
        assert!(r.stationary_sz[1].abs() < 1e-10);
        assert!(r.conditional.max_trace_deviation <= 1e-9);
        assert_eq!(r.tables()[1].1.rows.len(), r.unconditional.times.len());
    }
}
