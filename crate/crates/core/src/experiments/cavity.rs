//! Two coupled cavities: unconditional mean, Kalman-filter ensemble and
//! output spectra.

use serde::{Deserialize, Serialize};

use super::Table;
use crate::error::{Error, Result};
use crate::gaussian::{
    cavity_model, output_spectrum, simulate_kalman, to_quadratures, unconditional_mean, FilterResult, KalmanSettings,
    OutputSpectrum,
};
use crate::linalg::{RVector, RMatrix};
use crate::spectral::linspace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityConfig {
    pub omega_p: f64,
    pub omega_a: f64,
    pub kappa: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    /// Initial mean of `[q_p, p_p, q_a, p_a]`.
    pub m0: [f64; 4],
    pub horizon: f64,
    pub dt: f64,
    pub n_traj: usize,
    pub seed: u64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

fn default_record_every() -> usize {
    100
}

impl CavityConfig {
    /// Published parameters with 1000 trajectories over 20 ns.
    pub fn published() -> Self {
        Self {
            omega_p: 10.0,
            omega_a: 10.0,
            kappa: 2.0,
            gamma0: 0.6,
            gamma1: 0.8,
            m0: [1.0, 0.0, 0.0, 0.0],
            horizon: 20.0,
            dt: 1e-4,
            n_traj: 1000,
            seed: 0,
            record_every: default_record_every(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kappa", self.kappa), ("gamma0", self.gamma0), ("gamma1", self.gamma1)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_traj == 0 {
            return Err(Error::InvalidParameter("n_traj must be positive".into()));
        }
        Ok(())
    }
}

/// Largest stable step `10⁻³·2π / max|eig A|`.
pub fn max_dt(a: &RMatrix) -> f64 {
    let r = crate::linalg::eigenvalues_real(a).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if r == 0.0 {
        f64::INFINITY
    } else {
        1e-3 * std::f64::consts::TAU / r
    }
}

/// One `|G₂|²` family: the swept parameter value and its spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSweep {
    pub parameter: &'static str,
    pub fixed: String,
    pub curves: Vec<(f64, OutputSpectrum)>,
}

impl SpectrumSweep {
    pub fn table(&self) -> Table {
        let mut cols = vec!["detuning".to_string()];
        cols.extend(self.curves.iter().map(|(v, _)| format!("g2_sq_{}_{v}", self.parameter)));
        let mut t = Table { columns: cols, ..Table::default() };
        t.meta("swept", self.parameter);
        t.meta("fixed", &self.fixed);
        let grid = &self.curves[0].1.detuning;
        for (i, w) in grid.iter().enumerate() {
            let mut row = vec![*w];
            row.extend(self.curves.iter().map(|(_, s)| s.g2_sq[i]));
            t.push(row);
        }
        t
    }

    /// Peak height and position of each curve.
    pub fn peaks(&self) -> Vec<(f64, f64, f64)> {
        self.curves
            .iter()
            .map(|(v, s)| {
                let (i, &h) = s.g2_sq.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
                (*v, s.detuning[i], h)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CavityResult {
    pub config: CavityConfig,
    pub times: Vec<f64>,
    pub unconditional: Vec<RVector>,
    pub filter: FilterResult,
    pub kappa_sweep: SpectrumSweep,
    pub delta_sweep: SpectrumSweep,
    pub gamma0_sweep: SpectrumSweep,
}

impl CavityResult {
    /// Unconditional mean, averaged filter estimate and its spread, per quadrature.
    pub fn means_table(&self) -> Table {
        let names = ["q_p", "p_p", "q_a", "p_a"];
        let mut cols = vec!["t".to_string()];
        for n in names {
            cols.push(format!("m_{n}"));
        }
        for n in names {
            cols.push(format!("mean_xhat_{n}"));
        }
        for n in names {
            cols.push(format!("std_xhat_{n}"));
        }
        let mut t = Table { columns: cols, ..Table::default() };
        t.meta("n_traj", self.filter.n_traj);
        t.meta("seed", self.filter.seed);
        t.meta("riccati_residual", self.filter.riccati_residual);
        for (k, time) in self.times.iter().enumerate() {
            let mut row = vec![*time];
            row.extend(self.unconditional[k].iter());
            row.extend(&self.filter.mean_xhat[k]);
            row.extend(&self.filter.std_xhat[k]);
            t.push(row);
        }
        t
    }

    /// Fraction of record times with `|mean(x̂_k) - m_k| ≤ 3 σ/√n`.
    pub fn band_fraction(&self, component: usize) -> f64 {
        let sqrt_n = (self.filter.n_traj as f64).sqrt();
        let inside = self
            .times
            .iter()
            .enumerate()
            .filter(|&(k, _)| {
                let gap = (self.filter.mean_xhat[k][component] - self.unconditional[k][component]).abs();
                gap <= 3.0 * self.filter.std_xhat[k][component] / sqrt_n + 1e-12
            })
            .count();
        inside as f64 / self.times.len() as f64
    }
}

/// Detuning grid for the spectra.
pub fn spectrum_grid() -> Vec<f64> {
    linspace(-3.0, 3.0, 601)
}

fn sweep(
    parameter: &'static str,
    values: &[f64],
    fixed: String,
    f: impl Fn(f64) -> Result<OutputSpectrum>,
) -> Result<SpectrumSweep> {
    Ok(SpectrumSweep {
        parameter,
        fixed,
        curves: values.iter().map(|&v| Ok((v, f(v)?))).collect::<Result<_>>()?,
    })
}

/// `|G₂|²` families: `κ` at `Δ = 0, γ₀ = 0.1`; `Δ` and `γ₀` at `κ = 0.1`; all with `γ₁ = 0.8`.
pub fn spectrum_sweeps() -> Result<[SpectrumSweep; 3]> {
    let grid = spectrum_grid();
    let g1 = 0.8;
    Ok([
        sweep("kappa", &[0.1, 0.2, 0.4, 0.8], "delta=0 gamma0=0.1 gamma1=0.8".into(), |k| {
            output_spectrum(k, 0.1, g1, 0.0, &grid)
        })?,
        sweep("delta", &[0.0, 0.5, 1.0, 2.0], "kappa=0.1 gamma0=0.1 gamma1=0.8".into(), |d| {
            output_spectrum(0.1, 0.1, g1, d, &grid)
        })?,
        sweep("gamma0", &[0.05, 0.1, 0.2, 0.4], "delta=0 kappa=0.1 gamma1=0.8".into(), |g0| {
            output_spectrum(0.1, g0, g1, 0.0, &grid)
        })?,
    ])
}

pub fn run_cavity_study(cfg: &CavityConfig) -> Result<CavityResult> {
    cfg.validate()?;
    let model = to_quadratures(&cavity_model(cfg.omega_p, cfg.omega_a, cfg.kappa, cfg.gamma0, cfg.gamma1)?)?;
    let bound = max_dt(&model.a);
    if cfg.dt > bound {
        return Err(Error::InvalidParameter(format!(
            "dt = {} exceeds the stability bound 1e-3*2pi/max|eig A| = {bound:.3e}",
            cfg.dt
        )));
    }
    let m0 = RVector::from_column_slice(&cfg.m0);
    let (times, unconditional) = unconditional_mean(&model.a, &m0, cfg.horizon, cfg.dt, cfg.record_every)?;
    let filter = simulate_kalman(
        &model,
        &KalmanSettings {
            x0_mean: m0,
            horizon: cfg.horizon,
            dt: cfg.dt,
            n_traj: cfg.n_traj,
            seed: cfg.seed,
            record_every: cfg.record_every,
            keep_paths: 0,
        },
    )?;
    debug_assert_eq!(filter.times, times);
    let [kappa_sweep, delta_sweep, gamma0_sweep] = spectrum_sweeps()?;
    Ok(CavityResult {
        config: cfg.clone(),
        times,
        unconditional,
        filter,
        kappa_sweep,
        delta_sweep,
        gamma0_sweep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_sweep_peak_grows() {
        let [k, d, g] = spectrum_sweeps().unwrap();
        let peaks = k.peaks();
        assert!(peaks.windows(2).all(|w| w[1].2 > w[0].2));
        let dp = d.peaks();
        assert!(dp[0].1.abs() < 1e-12);
        assert!(dp.windows(2).all(|w| w[1].2 < w[0].2 && w[1].1.abs() > w[0].1.abs()));
        assert_eq!(g.curves.len(), 4);
        assert_eq!(k.table().rows.len(), spectrum_grid().len());
    }

    #[test]
    fn small_study_runs() {
        let cfg = CavityConfig { horizon: 0.5, n_traj: 32, ..CavityConfig::published() };
        let r = run_cavity_study(&cfg).unwrap();
        assert_eq!(r.times.len(), r.filter.times.len());
        assert!(r.filter.riccati_residual <= 1e-8);
        assert!(r.band_fraction(0) > 0.8);
        assert_eq!(r.means_table().columns.len(), 13);
    }

    #[test]
    fn large_dt_rejected() {
        let cfg = CavityConfig { dt: 0.01, ..CavityConfig::published() };
        assert!(run_cavity_study(&cfg).is_err());
    }
}
