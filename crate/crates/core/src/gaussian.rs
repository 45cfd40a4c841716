//! Linear augmented models, quadrature form, steady-state quantum Kalman
//! filtering and output-field spectra.

use num_complex::Complex64 as C64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{
    cmax_abs, is_hurwitz_real, lyapunov_real, psd_sqrt, rmax_abs,
    symmetric_eigenvalues, RMatrix, RVector,
};
use crate::operator::{CMatrix, EXACT_TOL, I};
use crate::rng;
use crate::spectral::{lorentzian_ancilla, AnnihilationRealization};

/// Principal oscillator bank `(Λ, N_p, K_p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPrincipal {
    pub lambda: CMatrix,
    pub np: CMatrix,
    pub kp: CMatrix,
}

impl LinearPrincipal {
    pub fn new(lambda: CMatrix, np: CMatrix, kp: CMatrix) -> Result<Self> {
        let n = lambda.nrows();
        if n == 0 || lambda.ncols() != n || np.ncols() != n || kp.ncols() != n {
            return Err(Error::InvalidDimension(
                "principal matrices must share the mode count".into(),
            ));
        }
        let defect = cmax_abs(&(&lambda - lambda.adjoint()));
        if defect > EXACT_TOL {
            return Err(Error::NotHermitian(defect));
        }
        Ok(Self { lambda, np, kp })
    }

    /// Single mode with frequency `omega`, probe rate `gamma` and direct coupling `kappa`.
    pub fn single_mode(omega: f64, gamma: f64, kappa: f64) -> Result<Self> {
        let cell = |x: f64| CMatrix::from_element(1, 1, C64::new(x, 0.0));
        Self::new(cell(omega), cell(gamma.sqrt()), cell(kappa.sqrt()))
    }

    /// `F_p = -iΛ - ½ N_p† N_p`.
    pub fn drift(&self) -> CMatrix {
        &self.lambda * (-I) - (self.np.adjoint() * &self.np) * C64::new(0.5, 0.0)
    }
}

/// Complex annihilation-only model of principal plus ancilla.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexLinearModel {
    /// Drift on `[d; a]`.
    pub drift: CMatrix,
    /// Input on `[dB_p; dB_a]`.
    pub input: CMatrix,
    /// Probe output `H = [N_p, 0]`.
    pub output: CMatrix,
    pub n_principal: usize,
    pub n_ancilla: usize,
    pub m_probe: usize,
    pub m_ancilla: usize,
}

impl ComplexLinearModel {
    pub fn n_modes(&self) -> usize {
        self.n_principal + self.n_ancilla
    }

    /// Output transfer matrix `H(sI - M)⁻¹G + [I, 0]` from `[B_p; B_a]` to the probe output.
    pub fn output_transfer(&self, s: C64) -> Result<CMatrix> {
        let n = self.n_modes();
        let resolvent = CMatrix::identity(n, n) * s - &self.drift;
        let x = resolvent
            .lu()
            .solve(&self.input)
            .ok_or_else(|| Error::Singular(format!("resolvent singular at s = {s}")))?;
        let mut t = &self.output * x;
        for k in 0..self.m_probe {
            t[(k, k)] += C64::new(1.0, 0.0);
        }
        Ok(t)
    }
}

/// Block drift `[[F_p, -K_p†H_a], [H_a†K_p, F_a]]` and input `diag(G_p, G_a)`.
pub fn build_augmented_linear(
    p: &LinearPrincipal,
    a: &AnnihilationRealization,
) -> Result<ComplexLinearModel> {
    if p.kp.nrows() != a.h.nrows() {
        return Err(Error::DimensionMismatch {
            context: "direct coupling rows vs ancilla outputs",
            expected: a.h.nrows(),
            found: p.kp.nrows(),
        });
    }
    let np = p.lambda.nrows();
    let na = a.order();
    let mp = p.np.nrows();
    let ma = a.g.ncols();
    let n = np + na;
    let mut drift = CMatrix::zeros(n, n);
    drift.view_mut((0, 0), (np, np)).copy_from(&p.drift());
    drift
        .view_mut((0, np), (np, na))
        .copy_from(&(-(p.kp.adjoint() * &a.h)));
    drift
        .view_mut((np, 0), (na, np))
        .copy_from(&(a.h.adjoint() * &p.kp));
    drift.view_mut((np, np), (na, na)).copy_from(&a.f);
    let mut input = CMatrix::zeros(n, mp + ma);
    input.view_mut((0, 0), (np, mp)).copy_from(&(-p.np.adjoint()));
    input.view_mut((np, mp), (na, ma)).copy_from(&a.g);
    let mut output = CMatrix::zeros(mp, n);
    output.view_mut((0, 0), (mp, np)).copy_from(&p.np);
    Ok(ComplexLinearModel {
        drift,
        input,
        output,
        n_principal: np,
        n_ancilla: na,
        m_probe: mp,
        m_ancilla: ma,
    })
}

/// Two coupled cavities: principal `(ω_p, γ₁, κ)` and Lorentzian ancilla `(ω_a, γ₀)`.
pub fn cavity_model(
    omega_p: f64,
    omega_a: f64,
    kappa: f64,
    gamma0: f64,
    gamma1: f64,
) -> Result<ComplexLinearModel> {
    if !(kappa >= 0.0 && gamma0 > 0.0 && gamma1 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cavity rates must be positive (kappa={kappa}, gamma0={gamma0}, gamma1={gamma1})"
        )));
    }
    build_augmented_linear(
        &LinearPrincipal::single_mode(omega_p, gamma1, kappa)?,
        &lorentzian_ancilla(omega_a, gamma0)?,
    )
}

/// Real-quadrature model with `x = [q_p, p_p, q_a, p_a]`,
/// `dx = A x dt + B dw`, `dy = C x dt + D dw`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureModel {
    pub a: RMatrix,
    pub b: RMatrix,
    pub c: RMatrix,
    pub d: RMatrix,
    pub v1: RMatrix,
    pub v12: RMatrix,
    pub v2: RMatrix,
}

impl QuadratureModel {
    pub fn new(a: RMatrix, b: RMatrix, c: RMatrix, d: RMatrix) -> Result<Self> {
        let n = a.nrows();
        let k = b.ncols();
        if a.ncols() != n || b.nrows() != n || c.ncols() != n || d.nrows() != c.nrows() || d.ncols() != k {
            return Err(Error::InvalidDimension("inconsistent quadrature model shapes".into()));
        }
        let v1 = &b * b.transpose();
        let v12 = &b * d.transpose();
        let v2 = &d * d.transpose();
        Ok(Self { a, b, c, d, v1, v12, v2 })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn n_noises(&self) -> usize {
        self.b.ncols()
    }

    /// Full covariance `[[BBᵀ, BDᵀ], [DBᵀ, DDᵀ]]`.
    pub fn noise_covariance(&self) -> RMatrix {
        let n = self.n_states();
        let m = self.n_outputs();
        let mut v = RMatrix::zeros(n + m, n + m);
        v.view_mut((0, 0), (n, n)).copy_from(&self.v1);
        v.view_mut((0, n), (n, m)).copy_from(&self.v12);
        v.view_mut((n, 0), (m, n)).copy_from(&self.v12.transpose());
        v.view_mut((n, n), (m, m)).copy_from(&self.v2);
        v
    }

    fn v2_inverse(&self) -> Result<RMatrix> {
        if self.v2.determinant().abs() < 1e-12 {
            return Err(Error::Singular("measurement noise covariance V2 is singular".into()));
        }
        self.v2
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("measurement noise covariance V2 is singular".into()))
    }
}

/// Real form of a complex block map under `ξ = (q + i p)/√2`, rows and columns
/// reordered to `[q_1, p_1, q_2, p_2]` for the given block partitions.
fn realify(m: &CMatrix, rows: (usize, usize), cols: (usize, usize)) -> RMatrix {
    let perm = |k: usize, quad: usize, (n1, n2): (usize, usize)| -> usize {
        if k < n1 {
            quad * n1 + k
        } else {
            2 * n1 + quad * n2 + (k - n1)
        }
    };
    let mut out = RMatrix::zeros(2 * m.nrows(), 2 * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let z = m[(i, j)];
            let (qi, pi) = (perm(i, 0, rows), perm(i, 1, rows));
            let (qj, pj) = (perm(j, 0, cols), perm(j, 1, cols));
            out[(qi, qj)] = z.re;
            out[(qi, pj)] = -z.im;
            out[(pi, qj)] = z.im;
            out[(pi, pj)] = z.re;
        }
    }
    out
}

pub fn to_quadratures(m: &ComplexLinearModel) -> Result<QuadratureModel> {
    let states = (m.n_principal, m.n_ancilla);
    let noises = (m.m_probe, m.m_ancilla);
    let a = realify(&m.drift, states, states);
    let b = realify(&m.input, states, noises);
    let full_c = realify(&m.output, (m.m_probe, 0), states);
    let c = full_c.rows(0, m.m_probe).into_owned();
    let mut d = RMatrix::zeros(m.m_probe, 2 * (m.m_probe + m.m_ancilla));
    for k in 0..m.m_probe {
        d[(k, k)] = 1.0;
    }
    QuadratureModel::new(a, b, c, d)
}

/// Residual of `ÃV + VÃᵀ - VRV + Q` for the filter Riccati equation.
pub fn riccati_residual(m: &QuadratureModel, vhat: &RMatrix) -> Result<f64> {
    let (at, r, q) = riccati_data(m)?;
    Ok(rmax_abs(&riccati_map(&at, &r, &q, vhat)))
}

fn riccati_data(m: &QuadratureModel) -> Result<(RMatrix, RMatrix, RMatrix)> {
    let v2i = m.v2_inverse()?;
    let at = &m.a - &m.v12 * &v2i * &m.c;
    let r = m.c.transpose() * &v2i * &m.c;
    let q = &m.v1 - &m.v12 * &v2i * m.v12.transpose();
    Ok((at, r, q))
}

fn riccati_map(at: &RMatrix, r: &RMatrix, q: &RMatrix, x: &RMatrix) -> RMatrix {
    at * x + x * at.transpose() - x * r * x + q
}

fn matrix_sign(z: &RMatrix) -> Option<RMatrix> {
    let n = z.nrows() as f64;
    let mut w = z.clone();
    for _ in 0..100 {
        let inv = w.clone().try_inverse()?;
        let det = w.determinant().abs();
        let c = if det > 0.0 && det.is_finite() { det.powf(-1.0 / n) } else { 1.0 };
        let next = (&w * c + inv / c) * 0.5;
        let change = (&next - &w).abs().sum();
        let size = w.abs().sum();
        w = next;
        if change <= 1e-13 * size {
            return Some(w);
        }
    }
    None
}

/// Stabilizing solution `V̂` of the filter Riccati equation.
pub fn solve_riccati(m: &QuadratureModel) -> Result<RMatrix> {
    let (at, r, q) = riccati_data(m)?;
    let n = at.nrows();
    let mut ham = RMatrix::zeros(2 * n, 2 * n);
    ham.view_mut((0, 0), (n, n)).copy_from(&at.transpose());
    ham.view_mut((0, n), (n, n)).copy_from(&(-&r));
    ham.view_mut((n, 0), (n, n)).copy_from(&(-&q));
    ham.view_mut((n, n), (n, n)).copy_from(&(-&at));
    let w = matrix_sign(&ham)
        .ok_or_else(|| Error::FilterInfeasible("Hamiltonian matrix has eigenvalues on the imaginary axis".into()))?;
    let eye = RMatrix::identity(n, n);
    let mut lhs = RMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w.view((n, n), (n, n)) + &eye));
    let mut rhs = RMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(w.view((0, 0), (n, n)) + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w.view((n, 0), (n, n))));
    let mut x = lhs
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::FilterInfeasible(format!("stable subspace solve failed: {e}")))?;
    x = (&x + x.transpose()) * 0.5;

    let scale = 1.0 + rmax_abs(&q) + rmax_abs(&at);
    for _ in 0..20 {
        let res = riccati_map(&at, &r, &q, &x);
        if rmax_abs(&res) <= 1e-13 * scale {
            break;
        }
        let closed = &at - &x * &r;
        let step = lyapunov_real(&closed, &res)?;
        x += step;
        x = (&x + x.transpose()) * 0.5;
    }
    let residual = rmax_abs(&riccati_map(&at, &r, &q, &x));
    if !(residual <= 1e-8) {
        return Err(Error::FilterInfeasible(format!("Riccati residual {residual:.3e} above 1e-8")));
    }
    if symmetric_eigenvalues(&x)[0] < -1e-10 {
        return Err(Error::FilterInfeasible("Riccati solution is not positive semidefinite".into()));
    }
    if !is_hurwitz_real(&(&at - &x * &r)) {
        return Err(Error::FilterInfeasible("no stabilizing Riccati solution".into()));
    }
    Ok(x)
}

/// `K = (V̂Cᵀ + V12) V2⁻¹`.
pub fn kalman_gain(m: &QuadratureModel, vhat: &RMatrix) -> Result<RMatrix> {
    Ok((vhat * m.c.transpose() + &m.v12) * m.v2_inverse()?)
}

/// One RK4 step of `ẋ = A x`: the degree-4 Taylor polynomial of `e^{A dt}`.
pub fn rk4_propagator(a: &RMatrix, dt: f64) -> RMatrix {
    let n = a.nrows();
    let ah = a * dt;
    let mut prop = RMatrix::identity(n, n);
    let mut term = RMatrix::identity(n, n);
    for k in 1..=4 {
        term = &term * &ah / k as f64;
        prop += &term;
    }
    prop
}

/// Fourth-order solution of `ṁ = A m`, recorded every `record_every` steps.
pub fn unconditional_mean(
    a: &RMatrix,
    m0: &RVector,
    horizon: f64,
    dt: f64,
    record_every: usize,
) -> Result<(Vec<f64>, Vec<RVector>)> {
    let steps = step_count(horizon, dt)?;
    let record_every = record_every.max(1);
    let prop = rk4_propagator(a, dt);
    let mut m = m0.clone();
    let mut times = vec![0.0];
    let mut traj = vec![m.clone()];
    for step in 1..=steps {
        m = &prop * m;
        if step % record_every == 0 || step == steps {
            times.push(step as f64 * dt);
            traj.push(m.clone());
        }
    }
    Ok((times, traj))
}

fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(horizon > 0.0) || !dt.is_finite() || !horizon.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "need positive dt and horizon (dt={dt}, horizon={horizon})"
        )));
    }
    let steps = (horizon / dt).round();
    if steps > 1e7 {
        return Err(Error::InvalidParameter(format!(
            "horizon/dt = {steps} exceeds 1e7 steps"
        )));
    }
    Ok((steps as usize).max(1))
}

/// Settings for a truth-plus-filter Kalman ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanSettings {
    pub x0_mean: RVector,
    pub horizon: f64,
    pub dt: f64,
    pub n_traj: usize,
    pub seed: u64,
    pub record_every: usize,
    /// Number of leading trajectories whose full paths are kept.
    pub keep_paths: usize,
}

/// One stored trajectory sampled on the record grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPath {
    pub index: usize,
    pub x: Vec<Vec<f64>>,
    pub xhat: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub vhat: RMatrix,
    pub gain: RMatrix,
    pub riccati_residual: f64,
    pub times: Vec<f64>,
    pub mean_x: Vec<Vec<f64>>,
    pub mean_xhat: Vec<Vec<f64>>,
    pub std_xhat: Vec<Vec<f64>>,
    pub mean_error: Vec<Vec<f64>>,
    pub std_error: Vec<Vec<f64>>,
    pub paths: Vec<FilterPath>,
    /// Normalized innovation increments `ΔW/√dt` of trajectory 0, first output channel.
    pub innovations: Vec<f64>,
    pub n_traj: usize,
    pub seed: u64,
}

#[derive(Clone)]
struct Moments {
    x: Vec<f64>,
    xhat: Vec<f64>,
    xhat2: Vec<f64>,
    err: Vec<f64>,
    err2: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            x: vec![0.0; len],
            xhat: vec![0.0; len],
            xhat2: vec![0.0; len],
            err: vec![0.0; len],
            err2: vec![0.0; len],
        }
    }

    fn merge(&mut self, other: &Moments) {
        for (a, b) in [
            (&mut self.x, &other.x),
            (&mut self.xhat, &other.xhat),
            (&mut self.xhat2, &other.xhat2),
            (&mut self.err, &other.err),
            (&mut self.err2, &other.err2),
        ] {
            a.iter_mut().zip(b).for_each(|(s, o)| *s += o);
        }
    }
}

fn row_major(m: &RMatrix) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

struct KalmanKernel {
    n: usize,
    k: usize,
    m: usize,
    /// Row-major RK4 propagator of the drift.
    prop: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    gain: Vec<f64>,
    init_sqrt: Vec<f64>,
}

struct PathOutput {
    moments: Moments,
    path: Option<FilterPath>,
    innovations: Vec<f64>,
}

impl KalmanKernel {
    #[allow(clippy::too_many_arguments)]
    fn run(
        &self,
        index: usize,
        cfg: &KalmanSettings,
        steps: usize,
        record_steps: &[usize],
        keep_path: bool,
        keep_innovations: bool,
    ) -> PathOutput {
        let (n, k, m) = (self.n, self.k, self.m);
        let mut rng = rng::stream(cfg.seed, index as u64);
        let mut z = vec![0.0; n];
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        let mut x: Vec<f64> = (0..n)
            .map(|i| cfg.x0_mean[i] + (0..n).map(|j| self.init_sqrt[i * n + j] * z[j]).sum::<f64>())
            .collect();
        let mut xh: Vec<f64> = cfg.x0_mean.iter().copied().collect();
        let mut y = vec![0.0; m];
        let mut dw = vec![0.0; k];
        let mut dy = vec![0.0; m];
        let mut innov = vec![0.0; m];
        let mut xn = vec![0.0; n];
        let mut xhn = vec![0.0; n];
        let sdt = cfg.dt.sqrt();
        let dt = cfg.dt;

        let mut moments = Moments::new(record_steps.len() * n);
        let mut path = keep_path.then(|| FilterPath {
            index,
            x: Vec::with_capacity(record_steps.len()),
            xhat: Vec::with_capacity(record_steps.len()),
            y: Vec::with_capacity(record_steps.len()),
        });
        let mut innovations = Vec::new();
        let mut next_record = 0usize;
        let mut record = |step: usize, x: &[f64], xh: &[f64], y: &[f64], slot: &mut usize| {
            if *slot < record_steps.len() && record_steps[*slot] == step {
                let base = *slot * n;
                for i in 0..n {
                    let e = x[i] - xh[i];
                    moments.x[base + i] += x[i];
                    moments.xhat[base + i] += xh[i];
                    moments.xhat2[base + i] += xh[i] * xh[i];
                    moments.err[base + i] += e;
                    moments.err2[base + i] += e * e;
                }
                if let Some(p) = path.as_mut() {
                    p.x.push(x.to_vec());
                    p.xhat.push(xh.to_vec());
                    p.y.push(y.to_vec());
                }
                *slot += 1;
            }
        };
        record(0, &x, &xh, &y, &mut next_record);
        for step in 1..=steps {
            for w in dw.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *w = g * sdt;
            }
            for r in 0..m {
                let mut acc_y = 0.0;
                let mut acc_h = 0.0;
                for j in 0..n {
                    acc_y += self.c[r * n + j] * x[j];
                    acc_h += self.c[r * n + j] * xh[j];
                }
                let mut noise = 0.0;
                for j in 0..k {
                    noise += self.d[r * k + j] * dw[j];
                }
                dy[r] = acc_y * dt + noise;
                innov[r] = dy[r] - acc_h * dt;
                y[r] += dy[r];
            }
            for i in 0..n {
                let mut ax = 0.0;
                let mut axh = 0.0;
                for j in 0..n {
                    ax += self.prop[i * n + j] * x[j];
                    axh += self.prop[i * n + j] * xh[j];
                }
                let mut bw = 0.0;
                for j in 0..k {
                    bw += self.b[i * k + j] * dw[j];
                }
                let mut ki = 0.0;
                for r in 0..m {
                    ki += self.gain[i * m + r] * innov[r];
                }
                xn[i] = ax + bw;
                xhn[i] = axh + ki;
            }
            std::mem::swap(&mut x, &mut xn);
            std::mem::swap(&mut xh, &mut xhn);
            if keep_innovations {
                innovations.push(innov[0] / sdt);
            }
            record(step, &x, &xh, &y, &mut next_record);
        }
        PathOutput {
            moments,
            path,
            innovations,
        }
    }
}

/// Co-simulation of truth, measurement and steady-state filter: the linear
/// drift advances by the RK4 propagator, noise and innovation terms by
/// Euler–Maruyama increments.
///
/// The truth starts from `N(x0_mean, V̂)` and the filter from `x0_mean`, the
/// initial law for which the stationary filter is exact from `t = 0`.
pub fn simulate_kalman(model: &QuadratureModel, cfg: &KalmanSettings) -> Result<FilterResult> {
    let steps = step_count(cfg.horizon, cfg.dt)?;
    if cfg.n_traj == 0 {
        return Err(Error::InvalidParameter("n_traj must be positive".into()));
    }
    let n = model.n_states();
    if cfg.x0_mean.len() != n {
        return Err(Error::DimensionMismatch {
            context: "initial mean",
            expected: n,
            found: cfg.x0_mean.len(),
        });
    }
    let vhat = solve_riccati(model)?;
    let gain = kalman_gain(model, &vhat)?;
    let riccati_residual = riccati_residual(model, &vhat)?;
    let kernel = KalmanKernel {
        n,
        k: model.n_noises(),
        m: model.n_outputs(),
        prop: row_major(&rk4_propagator(&model.a, cfg.dt)),
        b: row_major(&model.b),
        c: row_major(&model.c),
        d: row_major(&model.d),
        gain: row_major(&gain),
        init_sqrt: row_major(&psd_sqrt(&vhat)),
    };
    let every = cfg.record_every.max(1);
    let mut record_steps: Vec<usize> = (0..=steps).step_by(every).collect();
    if *record_steps.last().unwrap() != steps {
        record_steps.push(steps);
    }
    let times: Vec<f64> = record_steps.iter().map(|&s| s as f64 * cfg.dt).collect();

    let partials: Vec<(Moments, Vec<FilterPath>, Vec<f64>)> = rng::blocks(cfg.n_traj)
        .into_par_iter()
        .map(|range| {
            let mut acc = Moments::new(record_steps.len() * n);
            let mut paths = Vec::new();
            let mut innovations = Vec::new();
            for idx in range {
                let out = kernel.run(idx, cfg, steps, &record_steps, idx < cfg.keep_paths, idx == 0);
                acc.merge(&out.moments);
                paths.extend(out.path);
                if idx == 0 {
                    innovations = out.innovations;
                }
            }
            (acc, paths, innovations)
        })
        .collect();

    let mut total = Moments::new(record_steps.len() * n);
    let mut paths = Vec::new();
    let mut innovations = Vec::new();
    for (b, (mom, p, inn)) in partials.into_iter().enumerate() {
        total.merge(&mom);
        paths.extend(p);
        if b == 0 {
            innovations = inn;
        }
    }
    let nt = cfg.n_traj as f64;
    let reshape = |v: &[f64]| -> Vec<Vec<f64>> { v.chunks(n).map(|c| c.to_vec()).collect() };
    let mean = |s: &[f64]| -> Vec<f64> { s.iter().map(|x| x / nt).collect() };
    let std = |s: &[f64], s2: &[f64]| -> Vec<f64> {
        s.iter()
            .zip(s2)
            .map(|(a, b)| {
                let mu = a / nt;
                let var = (b / nt - mu * mu) * nt / (nt - 1.0).max(1.0);
                var.max(0.0).sqrt()
            })
            .collect()
    };
    Ok(FilterResult {
        vhat,
        gain,
        riccati_residual,
        times,
        mean_x: reshape(&mean(&total.x)),
        mean_xhat: reshape(&mean(&total.xhat)),
        std_xhat: reshape(&std(&total.xhat, &total.xhat2)),
        mean_error: reshape(&mean(&total.err)),
        std_error: reshape(&std(&total.err, &total.err2)),
        paths,
        innovations,
        n_traj: cfg.n_traj,
        seed: cfg.seed,
    })
}

/// Sample autocorrelation of `x` at `lag`.
pub fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    if lag >= n {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let cov: f64 = (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum();
    cov / var
}

/// `|G1|²`, `|G2|²` and the output spectrum `S = (|G1|² + |G2|²)/2` versus detuning `ω̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpectrum {
    pub detuning: Vec<f64>,
    pub g1_sq: Vec<f64>,
    pub g2_sq: Vec<f64>,
    pub s: Vec<f64>,
}

fn check_rates(kappa: f64, gamma0: f64, gamma1: f64) -> Result<()> {
    if !(kappa > 0.0 && gamma0 > 0.0 && gamma1 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "spectrum needs positive rates (kappa={kappa}, gamma0={gamma0}, gamma1={gamma1})"
        )));
    }
    Ok(())
}

/// Closed-form `|G1|²` and `|G2|²` of the two-cavity model.
pub fn output_spectrum(
    kappa: f64,
    gamma0: f64,
    gamma1: f64,
    delta: f64,
    detuning: &[f64],
) -> Result<OutputSpectrum> {
    check_rates(kappa, gamma0, gamma1)?;
    let mut g1_sq = Vec::with_capacity(detuning.len());
    let mut g2_sq = Vec::with_capacity(detuning.len());
    for &w in detuning {
        let upsilon = (gamma1 * gamma1 / 4.0 + w * w) * (w - delta).powi(2)
            + gamma0 * gamma0 * w * w / 4.0
            - (kappa * gamma0 * w / 2.0) * (w - delta);
        let g02 = gamma0 * gamma0 / 16.0;
        let den = upsilon + (kappa + gamma1).powi(2) * g02;
        g1_sq.push((upsilon + (kappa - gamma1).powi(2) * g02) / den);
        g2_sq.push(kappa * gamma1 * gamma0 * gamma0 / 4.0 / den);
    }
    Ok(finish_spectrum(detuning, g1_sq, g2_sq))
}

fn finish_spectrum(detuning: &[f64], g1_sq: Vec<f64>, g2_sq: Vec<f64>) -> OutputSpectrum {
    let s = g1_sq.iter().zip(&g2_sq).map(|(a, b)| 0.5 * (a + b)).collect();
    OutputSpectrum {
        detuning: detuning.to_vec(),
        g1_sq,
        g2_sq,
        s,
    }
}

/// Same quantities from the state-space transfer matrix (frame `ω_p = 0`, `ω = -ω̃`).
pub fn output_spectrum_state_space(
    kappa: f64,
    gamma0: f64,
    gamma1: f64,
    delta: f64,
    detuning: &[f64],
) -> Result<OutputSpectrum> {
    check_rates(kappa, gamma0, gamma1)?;
    let model = cavity_model(0.0, -delta, kappa, gamma0, gamma1)?;
    let mut g1_sq = Vec::with_capacity(detuning.len());
    let mut g2_sq = Vec::with_capacity(detuning.len());
    for &w in detuning {
        let t = model.output_transfer(C64::new(0.0, w))?;
        g1_sq.push(t[(0, 0)].norm_sqr());
        g2_sq.push(t[(0, 1)].norm_sqr());
    }
    Ok(finish_spectrum(detuning, g1_sq, g2_sq))
}

/// Largest deviation between the closed-form and state-space spectra.
pub fn spectrum_cross_check(
    kappa: f64,
    gamma0: f64,
    gamma1: f64,
    delta: f64,
    detuning: &[f64],
) -> Result<f64> {
    let a = output_spectrum(kappa, gamma0, gamma1, delta, detuning)?;
    let b = output_spectrum_state_space(kappa, gamma0, gamma1, delta, detuning)?;
    let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    Ok(diff(&a.g1_sq, &b.g1_sq).max(diff(&a.g2_sq, &b.g2_sq)))
}

/// Full-width at half maximum of a sampled peak (linear interpolation).
pub fn sampled_fwhm(x: &[f64], y: &[f64]) -> Option<f64> {
    let (imax, &ymax) = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    let half = ymax / 2.0;
    let mut left = None;
    for i in (1..=imax).rev() {
        if y[i - 1] < half {
            left = Some(x[i - 1] + (half - y[i - 1]) / (y[i] - y[i - 1]) * (x[i] - x[i - 1]));
            break;
        }
    }
    let mut right = None;
    for i in imax..y.len() - 1 {
        if y[i + 1] < half {
            right = Some(x[i] + (y[i] - half) / (y[i] - y[i + 1]) * (x[i + 1] - x[i]));
            break;
        }
    }
    Some(right? - left?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::linspace;

    const WP: f64 = 10.0;
    const KAPPA: f64 = 2.0;
    const G0: f64 = 0.6;
    const G1: f64 = 0.8;

    fn cavity() -> ComplexLinearModel {
        cavity_model(WP, WP, KAPPA, G0, G1).unwrap()
    }

    #[test]
    fn cavity_complex_drift() {
        let m = cavity();
        let g = (KAPPA * G0).sqrt() / 2.0;
        let want = CMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(-G1 / 2.0, -WP),
                C64::new(g, 0.0),
                C64::new(-g, 0.0),
                C64::new(-G0 / 2.0, -WP),
            ],
        );
        assert!(cmax_abs(&(&m.drift - want)) < 1e-15);
        for e in crate::linalg::eigenvalues_complex(&m.drift) {
            assert!(e.re <= 0.0);
        }
    }

    #[test]
    fn decoupled_drift_is_block_diagonal() {
        let m = cavity_model(WP, WP, 0.0, G0, G1).unwrap();
        assert_eq!(m.drift[(0, 1)], C64::new(0.0, 0.0));
        assert_eq!(m.drift[(1, 0)], C64::new(0.0, 0.0));
    }

    #[test]
    fn cavity_quadratures_match_explicit_matrices() {
        let q = to_quadratures(&cavity()).unwrap();
        let g = (KAPPA * G0).sqrt() / 2.0;
        #[rustfmt::skip]
        let a = RMatrix::from_row_slice(4, 4, &[
            -G1 / 2.0, WP, g, 0.0,
            -WP, -G1 / 2.0, 0.0, g,
            -g, 0.0, -G0 / 2.0, WP,
            0.0, -g, -WP, -G0 / 2.0,
        ]);
        assert!(rmax_abs(&(&q.a - a)) < 1e-15);
        let b = RMatrix::from_diagonal(&RVector::from_vec(vec![-G1.sqrt(), -G1.sqrt(), -G0.sqrt(), -G0.sqrt()]));
        assert!(rmax_abs(&(&q.b - b)) < 1e-15);
        assert!(rmax_abs(&(&q.c - RMatrix::from_row_slice(1, 4, &[G1.sqrt(), 0.0, 0.0, 0.0]))) < 1e-15);
        assert_eq!(q.d, RMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]));
        let v = q.noise_covariance();
        assert_eq!(v.view((0, 0), (4, 4)), &q.b * q.b.transpose());
        assert_eq!(v.view((0, 4), (4, 1)), &q.b * q.d.transpose());
        assert_eq!(v.view((4, 4), (1, 1)), &q.d * q.d.transpose());
    }

    #[test]
    fn quadrature_spectrum_is_complex_spectrum_and_conjugates() {
        let m = cavity();
        let q = to_quadratures(&m).unwrap();
        let mut want: Vec<C64> = crate::linalg::eigenvalues_complex(&m.drift);
        want.extend(want.clone().iter().map(|z| z.conj()));
        let got = crate::linalg::eigenvalues_real(&q.a);
        for w in &want {
            let best = got.iter().map(|g| (g - w).norm()).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-10);
        }
    }

    #[test]
    fn undamped_drift_is_skew() {
        let m = ComplexLinearModel {
            drift: CMatrix::from_row_slice(1, 1, &[C64::new(0.0, -3.0)]),
            input: CMatrix::zeros(1, 1),
            output: CMatrix::zeros(1, 1),
            n_principal: 1,
            n_ancilla: 0,
            m_probe: 1,
            m_ancilla: 0,
        };
        let q = to_quadratures(&m).unwrap();
        assert!(rmax_abs(&(&q.a + q.a.transpose())) < 1e-15);
    }

    fn scalar_model(a: f64, b: f64, c: f64, d: f64) -> QuadratureModel {
        let one = |x: f64| RMatrix::from_element(1, 1, x);
        QuadratureModel::new(one(a), RMatrix::from_row_slice(1, 2, &[b, 0.0]), one(c), RMatrix::from_row_slice(1, 2, &[0.0, d])).unwrap()
    }

    #[test]
    fn riccati_scalar_oracle() {
        let m = scalar_model(-1.0, 1.0, 1.0, 1.0);
        let v = solve_riccati(&m).unwrap();
        assert!((v[(0, 0)] - (2f64.sqrt() - 1.0)).abs() < 1e-12);
        let k = kalman_gain(&m, &v).unwrap();
        assert!((k[(0, 0)] - (2f64.sqrt() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn riccati_lyapunov_reduction() {
        let a = RMatrix::identity(2, 2) * -0.5;
        let b = RMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let c = RMatrix::zeros(1, 2);
        let d = RMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]);
        let m = QuadratureModel::new(a, b, c, d).unwrap();
        let v = solve_riccati(&m).unwrap();
        assert!(rmax_abs(&(&v - RMatrix::identity(2, 2))) < 1e-12);
        assert!(rmax_abs(&kalman_gain(&m, &v).unwrap()) < 1e-15);
    }

    #[test]
    fn riccati_cavity() {
        let q = to_quadratures(&cavity()).unwrap();
        let v = solve_riccati(&q).unwrap();
        assert!(riccati_residual(&q, &v).unwrap() <= 1e-8);
        let k = kalman_gain(&q, &v).unwrap();
        assert!(k.iter().all(|x| x.is_finite()));
        assert!(is_hurwitz_real(&(&q.a - &k * &q.c)));
        assert!(rmax_abs(&(&v - v.transpose())) == 0.0);
        assert!(symmetric_eigenvalues(&v)[0] >= -1e-10);
    }

    #[test]
    fn singular_measurement_noise() {
        let m = scalar_model(-1.0, 1.0, 1.0, 0.0);
        assert!(matches!(solve_riccati(&m), Err(Error::Singular(_))));
    }

    #[test]
    fn zero_gain_filter_follows_mean() {
        let a = RMatrix::from_row_slice(2, 2, &[-0.2, 1.0, -1.0, -0.2]);
        let b = RMatrix::from_row_slice(2, 3, &[0.3, 0.0, 0.0, 0.0, 0.3, 0.0]);
        let m = QuadratureModel::new(a.clone(), b, RMatrix::zeros(1, 2), RMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0])).unwrap();
        let x0 = RVector::from_vec(vec![1.0, 0.0]);
        let cfg = KalmanSettings { x0_mean: x0.clone(), horizon: 2.0, dt: 1e-3, n_traj: 3, seed: 5, record_every: 100, keep_paths: 1 };
        let res = simulate_kalman(&m, &cfg).unwrap();
        let (_, mean) = unconditional_mean(&a, &x0, 2.0, 1e-3, 100).unwrap();
        for (xh, m) in res.paths[0].xhat.iter().zip(&mean) {
            assert!((xh[0] - m[0]).abs() < 1e-12 && (xh[1] - m[1]).abs() < 1e-12);
        }
        assert!(res.std_xhat.iter().flatten().fold(0.0, |a: f64, b| a.max(*b)) < 1e-6);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let q = to_quadratures(&cavity()).unwrap();
        let cfg = KalmanSettings {
            x0_mean: RVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]),
            horizon: 0.5,
            dt: 1e-3,
            n_traj: 40,
            seed: 11,
            record_every: 10,
            keep_paths: 2,
        };
        let a = simulate_kalman(&q, &cfg).unwrap();
        let b = simulate_kalman(&q, &cfg).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| simulate_kalman(&q, &cfg).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn unconditional_mean_cases() {
        let m0 = RVector::from_vec(vec![1.0, -2.0]);
        let (_, traj) = unconditional_mean(&RMatrix::zeros(2, 2), &m0, 1.0, 0.01, 10).unwrap();
        assert!(traj.iter().all(|m| m == &m0));
        let skew = RMatrix::from_row_slice(2, 2, &[0.0, 3.0, -3.0, 0.0]);
        let (_, traj) = unconditional_mean(&skew, &m0, 10.0, 1e-3, 100).unwrap();
        for m in &traj {
            assert!((m.norm() - m0.norm()).abs() < 1e-9);
        }
        assert!(unconditional_mean(&skew, &m0, 1.0, 0.0, 1).is_err());
    }

    #[test]
    fn spectra_sum_to_one_and_agree() {
        let grid = linspace(-3.0, 3.0, 301);
        let s = output_spectrum(0.1, 0.1, 0.8, 0.0, &grid).unwrap();
        for (a, b) in s.g1_sq.iter().zip(&s.g2_sq) {
            assert!((a + b - 1.0).abs() < 1e-12);
        }
        assert!(s.s.iter().all(|v| (v - 0.5).abs() < 1e-12));
        assert!(spectrum_cross_check(0.1, 0.1, 0.8, 0.0, &grid).unwrap() < 1e-9);
        assert!(spectrum_cross_check(2.0, 0.6, 0.8, 0.7, &grid).unwrap() < 1e-9);
        assert!(output_spectrum(0.0, 0.1, 0.8, 0.0, &grid).is_err());
    }

    #[test]
    fn sampled_fwhm_of_lorentzian() {
        let x = linspace(-5.0, 5.0, 2001);
        let y: Vec<f64> = x.iter().map(|v| 1.0 / (1.0 + v * v)).collect();
        assert!((sampled_fwhm(&x, &y).unwrap() - 2.0).abs() < 1e-3);
    }
}
