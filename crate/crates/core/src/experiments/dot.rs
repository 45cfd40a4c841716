//! Driven resonator coupled to a double-dot qubit, with optional Lorentzian
//! ancillas standing in for a colored dissipative channel.

use std::f64::consts::TAU;

use log::warn;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{lorentzian_fit, LorentzianFit};
use super::Table;
use crate::error::{Error, Result};
use crate::operator::{annihilation, expectation, number, pauli, HilbertFactorization, Operator, Pauli};
use crate::slh::{augmented_liouvillian, concatenate, DirectCoupling, SlhTriple};
use crate::spectral::{linspace, lorentzian_ancilla, psd_of_realization};
use crate::trajectory::{stationarity_residual, steady_state};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DotModel {
    Markovian,
    OneAncillaResonant,
    OneAncillaOffres,
    OneAncillaPlusMarkovian,
    TwoAncilla,
}

impl DotModel {
    pub fn name(self) -> &'static str {
        match self {
            DotModel::Markovian => "markovian",
            DotModel::OneAncillaResonant => "one_ancilla_resonant",
            DotModel::OneAncillaOffres => "one_ancilla_offres",
            DotModel::OneAncillaPlusMarkovian => "one_ancilla_plus_markovian",
            DotModel::TwoAncilla => "two_ancilla",
        }
    }

    fn markov_channel(self) -> bool {
        matches!(self, DotModel::Markovian | DotModel::OneAncillaPlusMarkovian)
    }

    fn uses_first(self) -> bool {
        matches!(
            self,
            DotModel::OneAncillaResonant | DotModel::OneAncillaPlusMarkovian | DotModel::TwoAncilla
        )
    }

    fn uses_second(self) -> bool {
        matches!(self, DotModel::OneAncillaOffres | DotModel::TwoAncilla)
    }
}

/// How frequencies in a config file are to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    /// Ordinary frequencies in GHz; multiplied by 2π on ingestion.
    Ghz,
    /// Angular frequencies in rad/ns, used as given.
    #[default]
    Angular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        linspace(self.start, self.stop, self.points)
    }

    fn scaled(self, s: f64) -> Self {
        Self {
            start: self.start * s,
            stop: self.stop * s,
            points: self.points,
        }
    }
}

/// Dot/resonator study parameters.
///
/// `kappa1_bar` and `kappa2_bar` are multiples of `γ̄_−`, which is evaluated
/// at every detuning. `drive_grid` holds offsets `ν_d - ν₀`; when absent it
/// spans `±10 κ̄` with 81 points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DotConfig {
    #[serde(default)]
    pub units: Units,
    pub model: DotModel,
    pub nu0: f64,
    pub mu: f64,
    pub gc: f64,
    pub gamma_minus_prime: f64,
    pub gamma_z_prime: f64,
    pub kappa_bar: f64,
    /// Drive amplitude; defaults to `0.1 κ̄`.
    #[serde(default)]
    pub epsilon: Option<f64>,
    pub delta_grid: Grid,
    #[serde(default)]
    pub drive_grid: Option<Grid>,
    pub nu1: f64,
    pub nu2: f64,
    pub gamma1_bar: f64,
    pub gamma2_bar: f64,
    pub kappa1_bar: f64,
    pub kappa2_bar: f64,
    /// Fock truncations `(N_r, N_1, N_2)`.
    pub truncations: [usize; 3],
}

impl DotConfig {
    /// Published parameters (angular units), two-ancilla model.
    pub fn published() -> Self {
        Self {
            units: Units::Angular,
            model: DotModel::TwoAncilla,
            nu0: 6.755 * TAU,
            mu: 4.5 * TAU,
            gc: 0.05 * TAU,
            gamma_minus_prime: 3.3 * TAU,
            gamma_z_prime: 0.1 * TAU,
            kappa_bar: 2.6e-3 * TAU,
            epsilon: None,
            delta_grid: Grid { start: -20.0 * TAU, stop: 20.0 * TAU, points: 41 },
            drive_grid: None,
            nu1: 6.755 * TAU,
            nu2: 1.2 * TAU,
            gamma1_bar: 35e-3 * TAU,
            gamma2_bar: 20.0 * TAU,
            kappa1_bar: 0.5,
            kappa2_bar: 1.125,
            truncations: [3, 2, 2],
        }
    }

    /// Same config in angular units.
    pub fn to_angular(&self) -> Self {
        if self.units == Units::Angular {
            return self.clone();
        }
        let s = TAU;
        Self {
            units: Units::Angular,
            nu0: self.nu0 * s,
            mu: self.mu * s,
            gc: self.gc * s,
            gamma_minus_prime: self.gamma_minus_prime * s,
            gamma_z_prime: self.gamma_z_prime * s,
            kappa_bar: self.kappa_bar * s,
            epsilon: self.epsilon.map(|e| e * s),
            delta_grid: self.delta_grid.scaled(s),
            drive_grid: self.drive_grid.map(|g| g.scaled(s)),
            nu1: self.nu1 * s,
            nu2: self.nu2 * s,
            gamma1_bar: self.gamma1_bar * s,
            gamma2_bar: self.gamma2_bar * s,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("nu0", self.nu0),
            ("mu", self.mu),
            ("kappa_bar", self.kappa_bar),
            ("gamma_minus_prime", self.gamma_minus_prime),
            ("gamma_z_prime", self.gamma_z_prime),
            ("gamma1_bar", self.gamma1_bar),
            ("gamma2_bar", self.gamma2_bar),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("gc", self.gc), ("kappa1_bar", self.kappa1_bar), ("kappa2_bar", self.kappa2_bar)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be non-negative, got {v}")));
            }
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::InvalidParameter(format!("epsilon must be positive, got {e}")));
            }
        }
        if self.truncations.iter().any(|&n| n < 2) {
            return Err(Error::InvalidParameter("truncations must be at least 2".into()));
        }
        let grids = std::iter::once(("delta_grid", &self.delta_grid)).chain(self.drive_grid.as_ref().map(|g| ("drive_grid", g)));
        for (name, g) in grids {
            if g.points < 1 || !(g.stop > g.start || (g.points == 1 && g.stop == g.start)) {
                return Err(Error::InvalidParameter(format!("{name} must be increasing")));
            }
        }
        if self.drive_grid.is_some_and(|g| g.points < 8) {
            return Err(Error::InvalidParameter("drive_grid needs at least 8 points for the fit".into()));
        }
        Ok(())
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(0.1 * self.kappa_bar)
    }

    pub fn drive_offsets(&self) -> Vec<f64> {
        match self.drive_grid {
            Some(g) => g.values(),
            None => linspace(-10.0 * self.kappa_bar, 10.0 * self.kappa_bar, 81),
        }
    }
}

/// Detuning-dependent qubit quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitRates {
    pub nu_qb: f64,
    pub sin_theta: f64,
    pub gamma_minus: f64,
    pub gamma_z: f64,
}

pub fn qubit_rates(cfg: &DotConfig, delta: f64) -> QubitRates {
    let nu_qb = (4.0 * cfg.mu * cfg.mu + delta * delta).sqrt();
    let s = 2.0 * cfg.mu / nu_qb;
    let (s2, c2) = (s * s, 1.0 - s * s);
    QubitRates {
        nu_qb,
        sin_theta: s,
        gamma_minus: s2 * cfg.gamma_minus_prime + c2 * cfg.gamma_z_prime,
        gamma_z: c2 * cfg.gamma_minus_prime + s2 * cfg.gamma_z_prime,
    }
}

/// Augmented generator at detuning `delta` and drive frequency `nu_d`, plus `a_r`.
pub fn dot_system(cfg: &DotConfig, delta: f64, nu_d: f64, epsilon: f64) -> Result<(SlhTriple, Operator)> {
    let q = qubit_rates(cfg, delta);
    let [nr, n1, n2] = cfg.truncations;
    let mut dims = vec![nr, 2];
    let mut ancillas = Vec::new();
    if cfg.model.uses_first() {
        ancillas.push((dims.len(), cfg.nu1, cfg.gamma1_bar, cfg.kappa1_bar * q.gamma_minus));
        dims.push(n1);
    }
    if cfg.model.uses_second() {
        ancillas.push((dims.len(), cfg.nu2, cfg.gamma2_bar, cfg.kappa2_bar * q.gamma_minus));
        dims.push(n2);
    }
    let f = HilbertFactorization::new(dims.clone())?;
    let a = f.embed(&annihilation(nr)?, 0)?;
    let sm = f.embed(&pauli(Pauli::Minus), 1)?;
    let sz = f.embed(&pauli(Pauli::Z), 1)?;
    let ad = a.adjoint();

    let mut h = (&ad * &a).scale_real(cfg.nu0 - nu_d);
    h += &sz.scale_real(0.5 * (q.nu_qb - nu_d));
    h += &(&(&ad * &sm) + &(&sm.adjoint() * &a)).scale_real(cfg.gc * q.sin_theta);
    h += &(&a + &ad).scale_real(0.5 * epsilon);
    let mut couplings = vec![a.scale_real(cfg.kappa_bar.sqrt()), sz.scale_real((0.5 * q.gamma_z).sqrt())];
    if cfg.model.markov_channel() {
        couplings.push(sm.scale_real(q.gamma_minus.sqrt()));
    }
    let principal = SlhTriple::new(couplings, h)?;
    if ancillas.is_empty() {
        return Ok((principal, a));
    }

    let mut ha = Operator::zeros(f.total_dim());
    let mut la = Vec::new();
    let mut cs = Vec::new();
    let mut zs = Vec::new();
    for &(slot, nu, gamma, kappa) in &ancillas {
        let r = lorentzian_ancilla(nu - nu_d, gamma)?;
        let aj = f.embed(&annihilation(dims[slot])?, slot)?;
        ha += &f.embed(&number(dims[slot])?, slot)?.scale_real(r.omega()[(0, 0)].re);
        la.push(aj.scale(r.coupling()[(0, 0)]));
        cs.push(aj.scale(r.h[(0, 0)]));
        zs.push(sm.scale_real(kappa.sqrt()));
    }
    let ancilla = SlhTriple::new(la, ha)?;
    let dc = DirectCoupling::new(cs, zs)?;
    Ok((concatenate(&principal, &ancilla, Some(&dc))?, a))
}

/// Transmission scan at one detuning.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionScan {
    pub drive: Vec<f64>,
    pub amplitude: Vec<C64>,
    pub max_residual: f64,
    pub min_eigenvalue: f64,
}

impl TransmissionScan {
    pub fn power(&self) -> Vec<f64> {
        self.amplitude.iter().map(|z| z.norm_sqr()).collect()
    }
}

pub fn transmission_scan(cfg: &DotConfig, delta: f64, epsilon: f64) -> Result<TransmissionScan> {
    let drive: Vec<f64> = cfg.drive_offsets().iter().map(|o| cfg.nu0 + o).collect();
    let mut amplitude = Vec::with_capacity(drive.len());
    let mut max_residual: f64 = 0.0;
    let mut min_eigenvalue = f64::INFINITY;
    for &nu_d in &drive {
        let (g, a) = dot_system(cfg, delta, nu_d, epsilon)?;
        let l = augmented_liouvillian(&g)?;
        let rho = steady_state(&l)?;
        let min_eig = rho.min_eigenvalue();
        if min_eig < -1e-9 {
            return Err(Error::Numerical(format!(
                "steady state at delta={delta}, nu_d={nu_d} has eigenvalue {min_eig:.3e}"
            )));
        }
        max_residual = max_residual.max(stationarity_residual(&l, &rho));
        min_eigenvalue = min_eigenvalue.min(min_eig);
        amplitude.push(expectation(&rho, &a)?);
    }
    Ok(TransmissionScan {
        drive,
        amplitude,
        max_residual,
        min_eigenvalue,
    })
}

/// One detuning point of the sweep (angular units).
#[derive(Debug, Clone, PartialEq)]
pub struct DotRow {
    pub delta: f64,
    pub rates: QubitRates,
    pub kappa1: f64,
    pub kappa2: f64,
    /// Fitted resonance shift `Δν₀`; NaN when the fit failed.
    pub shift: f64,
    /// Fitted linewidth `κ*`; NaN when the fit failed.
    pub linewidth: f64,
    pub fit: Option<LorentzianFit>,
    pub fit_error: Option<String>,
    pub max_residual: f64,
    pub min_eigenvalue: f64,
}

impl DotRow {
    pub fn fit_ok(&self) -> bool {
        self.fit.is_some()
    }
}

/// Fitted `(Δν₀, κ*)` at one detuning.
pub fn dot_point(cfg: &DotConfig, delta: f64, epsilon: f64) -> Result<DotRow> {
    let scan = transmission_scan(cfg, delta, epsilon)?;
    let q = qubit_rates(cfg, delta);
    let fit = lorentzian_fit(&scan.drive, &scan.power());
    let (shift, linewidth, fit, fit_error) = match fit {
        Ok(f) => (f.center - cfg.nu0, f.fwhm, Some(f), None),
        Err(e) => (f64::NAN, f64::NAN, None, Some(e.to_string())),
    };
    Ok(DotRow {
        delta,
        rates: q,
        kappa1: if cfg.model.uses_first() { cfg.kappa1_bar * q.gamma_minus } else { 0.0 },
        kappa2: if cfg.model.uses_second() { cfg.kappa2_bar * q.gamma_minus } else { 0.0 },
        shift,
        linewidth,
        fit,
        fit_error,
        max_residual: scan.max_residual,
        min_eigenvalue: scan.min_eigenvalue,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DotResult {
    pub model: DotModel,
    pub epsilon: f64,
    pub rows: Vec<DotRow>,
}

impl DotResult {
    pub fn failed_fits(&self) -> usize {
        self.rows.iter().filter(|r| !r.fit_ok()).count()
    }

    /// Rows in ordinary-frequency units (GHz for detuning, MHz for shift and width).
    pub fn table(&self) -> Table {
        let mut t = Table::new(
            &[
                "delta_ghz",
                "nu_qb_ghz",
                "gamma_minus_mhz",
                "kappa1_mhz",
                "kappa2_mhz",
                "shift_mhz",
                "linewidth_mhz",
                "fit_ok",
                "fit_rms",
                "max_residual",
                "min_eigenvalue",
            ],
        );
        t.meta("model", self.model.name());
        t.meta("epsilon_rad_per_ns", self.epsilon);
        t.meta("kappa_bar_j", "tracked per detuning as multiples of gamma_bar_minus(delta)");
        for r in &self.rows {
            t.push(vec![
                r.delta / TAU,
                r.rates.nu_qb / TAU,
                r.rates.gamma_minus / TAU * 1e3,
                r.kappa1 / TAU * 1e3,
                r.kappa2 / TAU * 1e3,
                r.shift / TAU * 1e3,
                r.linewidth / TAU * 1e3,
                if r.fit_ok() { 1.0 } else { 0.0 },
                r.fit.map_or(f64::NAN, |f| f.rms_residual),
                r.max_residual,
                r.min_eigenvalue,
            ]);
        }
        t
    }
}

/// Detuning point nearest zero, used for the weak-drive check.
fn reference_delta(cfg: &DotConfig) -> f64 {
    cfg.delta_grid
        .values()
        .into_iter()
        .min_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(0.0)
}

/// Relative change of the fitted observables between two rows, in units of
/// `κ̄` for the shift and of the linewidth for `κ*`.
pub fn observable_change(a: &DotRow, b: &DotRow, kappa_bar: f64) -> f64 {
    let ds = (a.shift - b.shift).abs() / kappa_bar;
    let dw = (a.linewidth - b.linewidth).abs() / a.linewidth.abs();
    if ds.is_nan() || dw.is_nan() {
        f64::INFINITY
    } else {
        ds.max(dw)
    }
}

/// Halves `ε` until the fitted observables change by less than 1% under a
/// further halving (at most four reductions).
pub fn weak_drive_epsilon(cfg: &DotConfig) -> Result<f64> {
    let delta = reference_delta(cfg);
    let mut eps = cfg.epsilon();
    for _ in 0..4 {
        let full = dot_point(cfg, delta, eps)?;
        let half = dot_point(cfg, delta, 0.5 * eps)?;
        let change = observable_change(&full, &half, cfg.kappa_bar);
        if change < 0.01 {
            return Ok(eps);
        }
        warn!("drive amplitude {eps:.3e} is outside the linear regime (change {:.2}%), halving", 100.0 * change);
        eps *= 0.5;
    }
    Ok(eps)
}

/// Full detuning sweep for `cfg.model`.
pub fn run_dot_experiment(cfg: &DotConfig) -> Result<DotResult> {
    cfg.validate()?;
    let cfg = cfg.to_angular();
    let epsilon = weak_drive_epsilon(&cfg)?;
    let rows = cfg
        .delta_grid
        .values()
        .par_iter()
        .map(|&delta| dot_point(&cfg, delta, epsilon))
        .collect::<Result<Vec<_>>>()?;
    for r in rows.iter().filter(|r| !r.fit_ok()) {
        warn!("fit failed at delta = {:.4} rad/ns: {}", r.delta, r.fit_error.as_deref().unwrap_or(""));
    }
    Ok(DotResult {
        model: cfg.model,
        epsilon,
        rows,
    })
}

/// Fitted observables at `delta` with every truncation raised by one.
pub fn truncation_check(cfg: &DotConfig, delta: f64) -> Result<(DotRow, DotRow)> {
    let cfg = cfg.to_angular();
    let base = dot_point(&cfg, delta, cfg.epsilon())?;
    let mut raised = cfg.clone();
    raised.truncations = cfg.truncations.map(|n| n + 1);
    let up = dot_point(&raised, delta, cfg.epsilon())?;
    Ok((base, up))
}

/// Two-ancilla noise spectrum `Σ_j κ̄_j · PSD_j(ω)` at detuning `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpectrum {
    pub omega: Vec<f64>,
    pub s: Vec<f64>,
    pub kappa: [f64; 2],
}

impl NoiseSpectrum {
    /// Strict interior local maxima.
    pub fn local_maxima(&self) -> Vec<f64> {
        (1..self.s.len().saturating_sub(1))
            .filter(|&i| self.s[i] > self.s[i - 1] && self.s[i] > self.s[i + 1])
            .map(|i| self.omega[i])
            .collect()
    }

    /// Grid spacing at `omega`.
    pub fn resolution_at(&self, omega: f64) -> f64 {
        let i = self.omega.partition_point(|&w| w < omega).clamp(1, self.omega.len() - 1);
        let lo = self.omega[i] - self.omega[i - 1];
        let hi = self.omega.get(i + 1).map_or(lo, |w| w - self.omega[i]);
        lo.max(hi)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["omega_ghz", "s"]);
        t.meta("kappa1_bar_rad_per_ns", self.kappa[0]);
        t.meta("kappa2_bar_rad_per_ns", self.kappa[1]);
        for (w, s) in self.omega.iter().zip(&self.s) {
            t.push(vec![w / TAU, *s]);
        }
        t
    }
}

/// Noise spectrum of the two Lorentzian ancillas, weighted by their coupling strengths.
///
/// The grid is uniform over the full band and refined to `γ̄_j/8` within
/// `±4γ̄_j` of each centre so the narrow peak is resolved.
pub fn dot_noise_spectrum(cfg: &DotConfig, delta: f64) -> Result<NoiseSpectrum> {
    cfg.validate()?;
    let cfg = cfg.to_angular();
    let q = qubit_rates(&cfg, delta);
    let kappa = [cfg.kappa1_bar * q.gamma_minus, cfg.kappa2_bar * q.gamma_minus];
    let peaks = [(cfg.nu1, cfg.gamma1_bar), (cfg.nu2, cfg.gamma2_bar)];
    let lo = peaks.iter().map(|(n, g)| n - 2.0 * g).fold(f64::INFINITY, f64::min);
    let hi = peaks.iter().map(|(n, g)| n + 2.0 * g).fold(f64::NEG_INFINITY, f64::max);
    let mut omega = linspace(lo, hi, 2001);
    for &(nu, gamma) in &peaks {
        let step = gamma / 8.0;
        let n = (8.0 * gamma / step).round() as usize + 1;
        omega.extend(linspace(nu - 4.0 * gamma, nu + 4.0 * gamma, n));
        omega.push(nu);
    }
    omega.sort_by(f64::total_cmp);
    omega.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    let mut s = vec![0.0; omega.len()];
    for (&(nu, gamma), k) in peaks.iter().zip(kappa) {
        let psd = psd_of_realization(&lorentzian_ancilla(nu, gamma)?, &omega);
        s.iter_mut().zip(psd).for_each(|(acc, p)| *acc += k * p);
    }
    Ok(NoiseSpectrum { omega, s, kappa })
}

/// Sweep results for the single-ancilla and combined variants.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub markovian: DotResult,
    /// `(γ̄₁, result)` for the resonant ancilla.
    pub resonant: Vec<(f64, DotResult)>,
    /// `(γ̄₂, result)` for the off-resonant ancilla.
    pub offres: Vec<(f64, DotResult)>,
    pub combined: DotResult,
}

/// Variant configs: resonant `γ̄₁ ∈ {10, 100} MHz`, off-resonant `γ̄₂ ∈ {100, 500} GHz`
/// (coupling `γ̄_−` each), and the resonant 35 MHz ancilla at `0.5γ̄_−` plus the Markovian channel.
pub fn variant_configs(cfg: &DotConfig) -> (DotConfig, Vec<DotConfig>, Vec<DotConfig>, DotConfig) {
    let base = cfg.to_angular();
    let markov = DotConfig { model: DotModel::Markovian, ..base.clone() };
    let resonant = [10e-3, 100e-3]
        .iter()
        .map(|g| DotConfig {
            model: DotModel::OneAncillaResonant,
            nu1: base.nu0,
            gamma1_bar: g * TAU,
            kappa1_bar: 1.0,
            ..base.clone()
        })
        .collect();
    let offres = [100.0, 500.0]
        .iter()
        .map(|g| DotConfig {
            model: DotModel::OneAncillaOffres,
            nu2: 1.2 * TAU,
            gamma2_bar: g * TAU,
            kappa2_bar: 1.0,
            ..base.clone()
        })
        .collect();
    let combined = DotConfig {
        model: DotModel::OneAncillaPlusMarkovian,
        nu1: base.nu0,
        gamma1_bar: 35e-3 * TAU,
        kappa1_bar: 0.5,
        ..base.clone()
    };
    (markov, resonant, offres, combined)
}

pub fn run_ancilla_variants(cfg: &DotConfig) -> Result<VariantResult> {
    cfg.validate()?;
    let (markov, resonant, offres, combined) = variant_configs(cfg);
    Ok(VariantResult {
        markovian: run_dot_experiment(&markov)?,
        resonant: resonant
            .iter()
            .map(|c| Ok((c.gamma1_bar, run_dot_experiment(c)?)))
            .collect::<Result<_>>()?,
        offres: offres
            .iter()
            .map(|c| Ok((c.gamma2_bar, run_dot_experiment(c)?)))
            .collect::<Result<_>>()?,
        combined: run_dot_experiment(&combined)?,
    })
}

/// Largest absolute difference between two curves (NaN-safe: NaN counts as infinite).
pub fn max_abs_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y).abs();
            if d.is_nan() {
                f64::INFINITY
            } else {
                d
            }
        })
        .fold(0.0, f64::max)
}

/// Signed extremum of a curve: the value of largest magnitude.
pub fn peak_value(curve: &[f64]) -> f64 {
    curve
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(f64::NAN)
}
