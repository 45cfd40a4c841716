//! Master-equation evolution, steady states and the homodyne stochastic
//! master equation (whitening filter) for augmented systems.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{DMatrixView, DMatrixViewMut};
use num_complex::Complex64 as C64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::operator::{CMatrix, CVector, Operator, INTEGRATION_TOL, ONE, ZERO};
use crate::rng;
use crate::superop::{vectorize_liouvillian, Superoperator};

/// Largest `d²` for which the RK4 step is precomputed as a dense matrix.
const DENSE_PROPAGATOR_MAX: usize = 400;

/// One fixed RK4 step of `vec(ρ̇) = 𝓛 vec(ρ)`.
#[derive(Debug, Clone)]
pub struct Propagator {
    dt: f64,
    kind: PropagatorKind,
}

#[derive(Debug, Clone)]
enum PropagatorKind {
    Dense(CMatrix),
    Sparse(Superoperator),
}

impl Propagator {
    pub fn new(l: &Superoperator, dt: f64) -> Self {
        let n = l.size();
        let kind = if n <= DENSE_PROPAGATOR_MAX {
            // RK4 on a linear system is the degree-4 Taylor polynomial of e^{h𝓛}.
            let hl = l.to_dense() * C64::new(dt, 0.0);
            let mut prop = CMatrix::identity(n, n);
            let mut term = CMatrix::identity(n, n);
            for k in 1..=4 {
                term = (&term * &hl) / C64::new(k as f64, 0.0);
                prop += &term;
            }
            PropagatorKind::Dense(prop)
        } else {
            PropagatorKind::Sparse(l.clone())
        };
        Self { dt, kind }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `x` by one step; `work` is scratch of the same length.
    pub fn step(&self, x: &mut CVector, work: &mut Workspace) {
        match &self.kind {
            PropagatorKind::Dense(p) => {
                work.k1.gemv(ONE, p, x, ZERO);
                std::mem::swap(x, &mut work.k1);
            }
            PropagatorKind::Sparse(l) => {
                let h = C64::new(self.dt, 0.0);
                l.apply_into(x.as_slice(), work.k1.as_mut_slice());
                work.tmp.copy_from(x);
                work.tmp.axpy(h * 0.5, &work.k1, ONE);
                l.apply_into(work.tmp.as_slice(), work.k2.as_mut_slice());
                work.tmp.copy_from(x);
                work.tmp.axpy(h * 0.5, &work.k2, ONE);
                l.apply_into(work.tmp.as_slice(), work.k3.as_mut_slice());
                work.tmp.copy_from(x);
                work.tmp.axpy(h, &work.k3, ONE);
                l.apply_into(work.tmp.as_slice(), work.k4.as_mut_slice());
                x.axpy(h / 6.0, &work.k1, ONE);
                x.axpy(h / 3.0, &work.k2, ONE);
                x.axpy(h / 3.0, &work.k3, ONE);
                x.axpy(h / 6.0, &work.k4, ONE);
            }
        }
    }
}

/// Scratch vectors for [`Propagator::step`].
#[derive(Debug, Clone)]
pub struct Workspace {
    k1: CVector,
    k2: CVector,
    k3: CVector,
    k4: CVector,
    tmp: CVector,
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        Self {
            k1: CVector::zeros(n),
            k2: CVector::zeros(n),
            k3: CVector::zeros(n),
            k4: CVector::zeros(n),
            tmp: CVector::zeros(n),
        }
    }
}

/// Density matrix at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalState {
    pub rho: Operator,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Operator>,
}

/// Increments `dY` and innovations `dW` on the step grid `times`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub times: Vec<f64>,
    pub dy: Vec<f64>,
    pub dw: Vec<f64>,
}

fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && horizon > 0.0 && dt.is_finite() && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need positive dt and horizon (dt={dt}, horizon={horizon})"
        )));
    }
    Ok(((horizon / dt).round() as usize).max(1))
}

/// Checks that `rho` is a density matrix to within `tol`.
pub fn validate_density(rho: &Operator, tol: f64) -> Result<()> {
    let defect = rho.hermiticity_defect();
    if defect > tol {
        return Err(Error::NotHermitian(defect));
    }
    let tr = rho.trace();
    if (tr - ONE).norm() > tol {
        return Err(Error::InvalidParameter(format!("density matrix trace is {tr}, expected 1")));
    }
    let min = rho.min_eigenvalue();
    if min < -tol {
        return Err(Error::InvalidParameter(format!(
            "density matrix has negative eigenvalue {min:.3e}"
        )));
    }
    Ok(())
}

fn record_grid(steps: usize, every: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = (0..=steps).step_by(every.max(1)).collect();
    if *grid.last().unwrap() != steps {
        grid.push(steps);
    }
    grid
}

fn as_operator(v: &CVector, d: usize) -> Operator {
    Operator::new(CMatrix::from_column_slice(d, d, v.as_slice())).expect("square by construction")
}

fn vec_trace(v: &CVector, d: usize) -> C64 {
    (0..d).map(|i| v[i * d + i]).sum()
}

/// Fourth-order fixed-step evolution, recorded every `record_every` steps.
pub fn me_evolve(
    l: &Superoperator,
    rho0: &Operator,
    horizon: f64,
    dt: f64,
    record_every: usize,
) -> Result<StateTrajectory> {
    let d = l.dim();
    if rho0.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "me_evolve initial state",
            expected: d,
            found: rho0.dim(),
        });
    }
    validate_density(rho0, INTEGRATION_TOL)?;
    let steps = step_count(horizon, dt)?;
    let grid = record_grid(steps, record_every);
    let prop = Propagator::new(l, dt);
    let mut work = Workspace::new(l.size());
    let mut x = CVector::from_column_slice(rho0.matrix().as_slice());
    let mut times = Vec::with_capacity(grid.len());
    let mut states = Vec::with_capacity(grid.len());
    let mut next = 0;
    for step in 0..=steps {
        if step > 0 {
            prop.step(&mut x, &mut work);
        }
        if next < grid.len() && grid[next] == step {
            let t = step as f64 * dt;
            let drift = (vec_trace(&x, d) - ONE).norm();
            if !drift.is_finite() || drift > 1e-6 {
                return Err(Error::StepSize { drift, t });
            }
            times.push(t);
            states.push(as_operator(&x, d));
            next += 1;
        }
    }
    Ok(StateTrajectory { times, states })
}

/// Unique stationary state of `𝓛`.
///
/// Solves the trace-bordered system `[[𝓛, vec I], [vec Iᵀ, 0]] [x; λ] = [0; 1]`
/// by sparse LU; the bordered matrix is regular exactly when the null space
/// of `𝓛` is one-dimensional.
pub fn steady_state(l: &Superoperator) -> Result<Operator> {
    let d = l.dim();
    let n = l.size();
    let mut trip: Vec<Triplet<usize, usize, C64>> =
        l.triplets().map(|(r, c, v)| Triplet::new(c, r, v)).collect();
    // Stored transposed: faer assembles column-major, and we solve with the transpose below.
    for i in 0..d {
        trip.push(Triplet::new(n, i * d + i, ONE));
        trip.push(Triplet::new(i * d + i, n, ONE));
    }
    let mat_t = SparseColMat::<usize, C64>::try_new_from_triplets(n + 1, n + 1, &trip)
        .map_err(|e| Error::Numerical(format!("sparse assembly failed: {e:?}")))?;
    let mat = mat_t.transpose().to_col_major()
        .map_err(|e| Error::Numerical(format!("sparse transpose failed: {e:?}")))?;
    let lu = mat
        .sp_lu()
        .map_err(|e| Error::NonUniqueSteadyState(format!("bordered Liouvillian is singular ({e:?})")))?;
    let mut rhs = Mat::<C64>::zeros(n + 1, 1);
    rhs[(n, 0)] = ONE;
    let mut sol = lu.solve(&rhs);
    // One step of iterative refinement.
    let resid = &rhs - &mat * &sol;
    let corr = lu.solve(&resid);
    sol += &corr;

    let x = CVector::from_fn(n, |i, _| sol[(i, 0)]);
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) || x.iter().any(|z| z.norm() > 1.0 + 1e-6) {
        return Err(Error::NonUniqueSteadyState(
            "bordered solve is ill-posed; the Liouvillian has more than one stationary state".into(),
        ));
    }
    let lambda = sol[(n, 0)];
    if lambda.norm() > 1e-8 {
        return Err(Error::Numerical(format!(
            "generator is not trace preserving (border multiplier {lambda})"
        )));
    }
    let rho = as_operator(&x, d);
    let rho = rho.hermitian_part();
    let tr = rho.trace();
    let rho = rho.scale(ONE / tr);
    let residual = l
        .apply(&CVector::from_column_slice(rho.matrix().as_slice()))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if residual > 1e-10 {
        return Err(Error::Numerical(format!("steady-state residual {residual:.3e} above 1e-10")));
    }
    Ok(rho)
}

/// `‖𝓛 vec(ρ)‖∞`.
pub fn stationarity_residual(l: &Superoperator, rho: &Operator) -> f64 {
    l.apply(&CVector::from_column_slice(rho.matrix().as_slice()))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Dimension of the numerical null space of `𝓛` (dense SVD; small systems only).
pub fn null_space_dimension(l: &Superoperator, rel_tol: f64) -> usize {
    let sv = l.to_dense().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s <= rel_tol * max).count()
}

/// `tr(ρX)`.
pub fn expectation(rho: &Operator, x: &Operator) -> Result<C64> {
    crate::operator::expectation(rho, x)
}

/// Homodyne-monitored system: probe coupling `L_p` plus unmonitored channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SmeProblem {
    pub hamiltonian: Operator,
    pub measured: Operator,
    pub unmeasured: Vec<Operator>,
}

impl SmeProblem {
    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    /// Generator of the unconditional dynamics (all channels).
    pub fn liouvillian(&self) -> Result<Superoperator> {
        let mut ls = self.unmeasured.clone();
        ls.push(self.measured.clone());
        vectorize_liouvillian(&self.hamiltonian, &ls)
    }

    /// Step bound `10⁻³·2π/‖H‖`.
    pub fn max_dt(&self) -> f64 {
        let eig = self.hamiltonian.hermitian_eigenvalues();
        let norm = eig.iter().map(|e| e.abs()).fold(0.0, f64::max);
        if norm == 0.0 {
            f64::INFINITY
        } else {
            1e-3 * std::f64::consts::TAU / norm
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmeSettings {
    pub horizon: f64,
    pub dt: f64,
    pub record_every: usize,
    pub seed: u64,
    /// Steps between eigenvalue-based positivity checks.
    pub positivity_every: usize,
    pub scheme: SmeScheme,
}

impl SmeSettings {
    /// Settings with the default scheme and a positivity check every 10 steps.
    pub fn new(horizon: f64, dt: f64, record_every: usize, seed: u64) -> Self {
        Self {
            horizon,
            dt,
            record_every,
            seed,
            positivity_every: 10,
            scheme: SmeScheme::default(),
        }
    }
}

/// Discretization of the measurement back-action.
///
/// Both schemes share the RK4 drift step, the innovation `dW` and the
/// record `dY`, and agree to first order in `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmeScheme {
    /// `ρ + 𝓖(ρ)dt + 𝓕(ρ)dW`; loses positivity at `O(dt)` per step on nearly pure states.
    EulerMaruyama,
    /// `MρM†/tr` with `M = I - ½L†L dt + L dY` after the drift of the unmonitored part;
    /// completely positive by construction.
    #[default]
    Kraus,
}

/// Single filter trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SmeTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Operator>,
    pub record: MeasurementRecord,
    /// Largest `|tr ρ - 1|` before renormalization.
    pub max_pre_norm_drift: f64,
    /// Largest `|tr ρ - 1|` after renormalization.
    pub max_trace_deviation: f64,
    pub min_eigenvalue: f64,
}

#[derive(Clone)]
struct SmeStepper {
    d: usize,
    prop: Propagator,
    lp: CMatrix,
    lpd_lp: CMatrix,
    scheme: SmeScheme,
    work: Workspace,
    b: CMatrix,
    m: CMatrix,
    m_adj: CMatrix,
    f: CVector,
    dt: f64,
    positivity_every: usize,
}

struct StepInfo {
    dy: f64,
    pre_drift: f64,
    post_dev: f64,
}

impl SmeStepper {
    fn new(problem: &SmeProblem, settings: &SmeSettings) -> Result<Self> {
        let d = problem.dim();
        if problem.measured.dim() != d || problem.unmeasured.iter().any(|l| l.dim() != d) {
            return Err(Error::DimensionMismatch {
                context: "sme couplings",
                expected: d,
                found: problem.measured.dim(),
            });
        }
        let max_dt = problem.max_dt();
        if settings.dt > max_dt * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "dt = {} exceeds the stability bound 1e-3*2pi/|H| = {max_dt:.3e}",
                settings.dt
            )));
        }
        let l = match settings.scheme {
            SmeScheme::EulerMaruyama => problem.liouvillian()?,
            SmeScheme::Kraus => vectorize_liouvillian(&problem.hamiltonian, &problem.unmeasured)?,
        };
        let lp = problem.measured.matrix().clone();
        Ok(Self {
            d,
            prop: Propagator::new(&l, settings.dt),
            lpd_lp: lp.adjoint() * &lp,
            lp,
            scheme: settings.scheme,
            m: CMatrix::zeros(d, d),
            m_adj: CMatrix::zeros(d, d),
            work: Workspace::new(d * d),
            b: CMatrix::zeros(d, d),
            f: CVector::zeros(d * d),
            dt: settings.dt,
            positivity_every: settings.positivity_every.max(1),
        })
    }

    /// Advances `x = vec(ρ)` with innovation increment `dw`.
    fn step(&mut self, x: &mut CVector, dw: f64) -> StepInfo {
        let d = self.d;
        {
            let rho = DMatrixView::from_slice(x.as_slice(), d, d);
            self.b.gemm(ONE, &self.lp, &rho, ZERO);
        }
        let s = 2.0 * self.b.trace().re;
        let dy = dw + s * self.dt;
        match self.scheme {
            SmeScheme::EulerMaruyama => {
                // 𝓕(ρ) = Lρ + ρL† - sρ, evaluated at the pre-step state.
                for j in 0..d {
                    for i in 0..d {
                        self.f[j * d + i] =
                            self.b[(i, j)] + self.b[(j, i)].conj() - x[j * d + i] * s;
                    }
                }
                self.prop.step(x, &mut self.work);
                x.axpy(C64::new(dw, 0.0), &self.f, ONE);
            }
            SmeScheme::Kraus => {
                self.prop.step(x, &mut self.work);
                // M = I - ½L†L dt + L dY
                self.m.copy_from(&self.lpd_lp);
                self.m *= C64::new(-0.5 * self.dt, 0.0);
                self.m.zip_apply(&self.lp, |m, l| *m += l * dy);
                for i in 0..d {
                    self.m[(i, i)] += ONE;
                }
                let rho = DMatrixView::from_slice(x.as_slice(), d, d);
                self.b.gemm(ONE, &self.m, &rho, ZERO);
                self.m.adjoint_to(&mut self.m_adj);
                let mut out = DMatrixViewMut::from_slice(x.as_mut_slice(), d, d);
                out.gemm(ONE, &self.b, &self.m_adj, ZERO);
            }
        }

        let mut tr = 0.0;
        for i in 0..d {
            x[i * d + i].im = 0.0;
            tr += x[i * d + i].re;
            for j in i + 1..d {
                let avg = (x[j * d + i] + x[i * d + j].conj()) * 0.5;
                x[j * d + i] = avg;
                x[i * d + j] = avg.conj();
            }
        }
        let pre_drift = (tr - 1.0).abs();
        x.unscale_mut(tr);
        let post_dev = ((0..d).map(|i| x[i * d + i].re).sum::<f64>() - 1.0).abs();
        StepInfo {
            dy,
            pre_drift,
            post_dev,
        }
    }

    fn min_eigenvalue(&self, x: &CVector) -> f64 {
        as_operator(x, self.d).min_eigenvalue()
    }

    /// Aborts when `ρ + 10⁻⁴ I` is not positive definite (Cholesky test).
    fn check_positivity(&self, x: &CVector, t: f64) -> Result<()> {
        let d = self.d;
        let mut m = CMatrix::from_column_slice(d, d, x.as_slice());
        for i in 0..d {
            m[(i, i)] -= C64::new(POSITIVITY_FAIL, 0.0);
        }
        if m.cholesky().is_some() {
            return Ok(());
        }
        check_positivity(self.min_eigenvalue(x), t)
    }
}

const POSITIVITY_FAIL: f64 = -1e-4;

fn check_positivity(min_eig: f64, t: f64) -> Result<()> {
    if !(min_eig >= POSITIVITY_FAIL) {
        return Err(Error::Positivity { min_eig, t });
    }
    Ok(())
}

/// One Euler–Maruyama filter trajectory; the drift increment uses the ME's RK4 step.
pub fn sme_evolve(
    problem: &SmeProblem,
    rho0: &Operator,
    settings: &SmeSettings,
    traj_index: u64,
) -> Result<SmeTrajectory> {
    validate_density(rho0, INTEGRATION_TOL)?;
    let steps = step_count(settings.horizon, settings.dt)?;
    let grid = record_grid(steps, settings.record_every);
    let mut stepper = SmeStepper::new(problem, settings)?;
    let d = problem.dim();
    let mut rng = rng::stream(settings.seed, traj_index);
    let sdt = settings.dt.sqrt();
    let mut x = CVector::from_column_slice(rho0.matrix().as_slice());
    let mut out = SmeTrajectory {
        times: Vec::with_capacity(grid.len()),
        states: Vec::with_capacity(grid.len()),
        record: MeasurementRecord {
            times: (0..=steps).map(|k| k as f64 * settings.dt).collect(),
            dy: Vec::with_capacity(steps),
            dw: Vec::with_capacity(steps),
        },
        max_pre_norm_drift: 0.0,
        max_trace_deviation: 0.0,
        min_eigenvalue: rho0.min_eigenvalue(),
    };
    let mut next = 0;
    for step in 0..=steps {
        let t = step as f64 * settings.dt;
        if step > 0 {
            let g: f64 = StandardNormal.sample(&mut rng);
            let dw = g * sdt;
            let info = stepper.step(&mut x, dw);
            out.record.dw.push(dw);
            out.record.dy.push(info.dy);
            out.max_pre_norm_drift = out.max_pre_norm_drift.max(info.pre_drift);
            out.max_trace_deviation = out.max_trace_deviation.max(info.post_dev);
            if step % stepper.positivity_every == 0 {
                stepper.check_positivity(&x, t)?;
            }
        }
        if next < grid.len() && grid[next] == step {
            let me = stepper.min_eigenvalue(&x);
            out.min_eigenvalue = out.min_eigenvalue.min(me);
            check_positivity(me, t)?;
            out.times.push(t);
            out.states.push(as_operator(&x, d));
            next += 1;
        }
    }
    Ok(out)
}

/// Ensemble statistics of tracked observables over filter trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    /// `mean[k][t]` for observable `k`.
    pub mean: Vec<Vec<C64>>,
    /// Sample standard deviation of the real part.
    pub std: Vec<Vec<f64>>,
    pub max_pre_norm_drift: f64,
    pub max_trace_deviation: f64,
    pub min_eigenvalue: f64,
    pub n_traj: usize,
    pub seed: u64,
}

#[derive(Clone)]
struct ObsSums {
    sum: Vec<C64>,
    sum_sq: Vec<f64>,
    pre: f64,
    post: f64,
    min_eig: f64,
}

impl ObsSums {
    fn new(len: usize) -> Self {
        Self {
            sum: vec![ZERO; len],
            sum_sq: vec![0.0; len],
            pre: 0.0,
            post: 0.0,
            min_eig: f64::INFINITY,
        }
    }

    fn merge(&mut self, o: &ObsSums) {
        self.sum.iter_mut().zip(&o.sum).for_each(|(a, b)| *a += b);
        self.sum_sq.iter_mut().zip(&o.sum_sq).for_each(|(a, b)| *a += b);
        self.pre = self.pre.max(o.pre);
        self.post = self.post.max(o.post);
        self.min_eig = self.min_eig.min(o.min_eig);
    }
}

fn vec_expectation(x: &CVector, obs: &CMatrix, d: usize) -> C64 {
    let mut acc = ZERO;
    for k in 0..d {
        for i in 0..d {
            // ρ_{ik} at k*d+i
            acc += x[k * d + i] * obs[(k, i)];
        }
    }
    acc
}

/// Runs `n_traj` filter trajectories and averages `tr(ρ X_k)` on the record grid.
pub fn sme_ensemble(
    problem: &SmeProblem,
    rho0: &Operator,
    settings: &SmeSettings,
    n_traj: usize,
    observables: &[Operator],
) -> Result<EnsembleStats> {
    validate_density(rho0, INTEGRATION_TOL)?;
    if n_traj == 0 {
        return Err(Error::InvalidParameter("n_traj must be positive".into()));
    }
    let d = problem.dim();
    for o in observables {
        if o.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "observable",
                expected: d,
                found: o.dim(),
            });
        }
    }
    let steps = step_count(settings.horizon, settings.dt)?;
    let grid = record_grid(steps, settings.record_every);
    let n_rec = grid.len();
    let n_obs = observables.len();
    let template = SmeStepper::new(problem, settings)?;
    let obs: Vec<CMatrix> = observables.iter().map(|o| o.matrix().clone()).collect();

    let partials: Vec<Result<ObsSums>> = rng::blocks(n_traj)
        .into_par_iter()
        .map(|range| {
            let mut stepper = template.clone();
            let mut acc = ObsSums::new(n_obs * n_rec);
            let sdt = settings.dt.sqrt();
            for idx in range {
                let mut rng = rng::stream(settings.seed, idx as u64);
                let mut x = CVector::from_column_slice(rho0.matrix().as_slice());
                let mut next = 0;
                for step in 0..=steps {
                    if step > 0 {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        let info = stepper.step(&mut x, g * sdt);
                        acc.pre = acc.pre.max(info.pre_drift);
                        acc.post = acc.post.max(info.post_dev);
                        if step % stepper.positivity_every == 0 {
                            stepper.check_positivity(&x, step as f64 * settings.dt)?;
                        }
                    }
                    if next < n_rec && grid[next] == step {
                        let me = stepper.min_eigenvalue(&x);
                        acc.min_eig = acc.min_eig.min(me);
                        check_positivity(me, step as f64 * settings.dt)?;
                        for (k, o) in obs.iter().enumerate() {
                            let v = vec_expectation(&x, o, d);
                            acc.sum[k * n_rec + next] += v;
                            acc.sum_sq[k * n_rec + next] += v.re * v.re;
                        }
                        next += 1;
                    }
                }
            }
            Ok(acc)
        })
        .collect();

    let mut total = ObsSums::new(n_obs * n_rec);
    for p in partials {
        total.merge(&p?);
    }
    let nt = n_traj as f64;
    let mut mean = Vec::with_capacity(n_obs);
    let mut std = Vec::with_capacity(n_obs);
    for k in 0..n_obs {
        let m: Vec<C64> = (0..n_rec).map(|t| total.sum[k * n_rec + t] / nt).collect();
        let s: Vec<f64> = (0..n_rec)
            .map(|t| {
                let mu = m[t].re;
                let var = (total.sum_sq[k * n_rec + t] / nt - mu * mu) * nt / (nt - 1.0).max(1.0);
                var.max(0.0).sqrt()
            })
            .collect();
        mean.push(m);
        std.push(s);
    }
    Ok(EnsembleStats {
        times: grid.iter().map(|&s| s as f64 * settings.dt).collect(),
        mean,
        std,
        max_pre_norm_drift: total.pre,
        max_trace_deviation: total.post,
        min_eigenvalue: total.min_eig,
        n_traj,
        seed: settings.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{annihilation, kron, number, partial_trace, pauli, HilbertFactorization, Pauli};

    fn decay_problem(gamma: f64) -> (Superoperator, Operator) {
        let h = pauli(Pauli::Z).scale_real(2.0);
        let l = pauli(Pauli::Minus).scale_real(gamma.sqrt());
        (vectorize_liouvillian(&h, &[l]).unwrap(), Operator::basis_projector(2, 0))
    }

    #[test]
    fn zero_generator_keeps_state() {
        let l = Superoperator::zeros(2);
        let rho = Operator::identity(2).scale_real(0.5);
        let tr = me_evolve(&l, &rho, 1.0, 0.1, 1).unwrap();
        assert!(tr.states.iter().all(|s| s.max_abs_diff(&rho) == 0.0));
        assert_eq!(tr.times.len(), 11);
    }

    #[test]
    fn two_level_decay_oracle() {
        let gamma = 0.7;
        let (l, rho0) = decay_problem(gamma);
        let tr = me_evolve(&l, &rho0, 5.0, 1e-3, 100).unwrap();
        let z = pauli(Pauli::Z);
        for (t, s) in tr.times.iter().zip(&tr.states) {
            let want = -1.0 + 2.0 * (-gamma * t).exp();
            assert!((expectation(s, &z).unwrap().re - want).abs() < 1e-10);
            assert!((s.trace() - ONE).norm() < 1e-12);
        }
    }

    #[test]
    fn me_rejects_huge_steps() {
        let (l, rho0) = decay_problem(50.0);
        assert!(matches!(me_evolve(&l, &rho0, 2.0, 0.5, 1), Err(Error::StepSize { .. })));
    }

    #[test]
    fn me_dt_halving_is_fourth_order() {
        let h = pauli(Pauli::X).scale_real(3.0);
        let l = vectorize_liouvillian(&h, &[pauli(Pauli::Minus).scale_real(0.5)]).unwrap();
        let rho0 = Operator::basis_projector(2, 0);
        let z = pauli(Pauli::Z);
        let at_end = |dt: f64| {
            let tr = me_evolve(&l, &rho0, 2.0, dt, usize::MAX).unwrap();
            expectation(tr.states.last().unwrap(), &z).unwrap().re
        };
        let reference = at_end(1e-4);
        let e1 = (at_end(0.02) - reference).abs();
        let e2 = (at_end(0.01) - reference).abs();
        let ratio = e1 / e2;
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn steady_state_examples() {
        let (l, _) = decay_problem(1.3);
        let rho = steady_state(&l).unwrap();
        assert!(rho.max_abs_diff(&Operator::basis_projector(2, 1)) < 1e-12);

        let n = 6;
        let a = annihilation(n).unwrap();
        let l = vectorize_liouvillian(&number(n).unwrap().scale_real(2.0), &[a.scale_real(0.4)]).unwrap();
        let rho = steady_state(&l).unwrap();
        assert!(rho.max_abs_diff(&Operator::basis_projector(n, 0)) < 1e-12);
        assert!(stationarity_residual(&l, &rho) <= 1e-10);
        assert_eq!(null_space_dimension(&l, 1e-12), 1);
    }

    #[test]
    fn degenerate_steady_state_is_rejected() {
        let l = vectorize_liouvillian(&pauli(Pauli::Z), &[]).unwrap();
        assert!(matches!(steady_state(&l), Err(Error::NonUniqueSteadyState(_))));
    }

    #[test]
    fn driven_cavity_linear_response() {
        // H = Δ a†a + (ε/2)(a + a†), L = √κ a  ⇒  ⟨a⟩ = -(ε/2)/(Δ - iκ/2).
        let (delta, kappa, eps): (f64, f64, f64) = (0.3, 0.8, 0.05);
        let n = 6;
        let a = annihilation(n).unwrap();
        let h = &number(n).unwrap().scale_real(delta) + &(&a + &a.adjoint()).scale_real(eps / 2.0);
        let l = vectorize_liouvillian(&h, &[a.scale_real(kappa.sqrt())]).unwrap();
        let rho = steady_state(&l).unwrap();
        let got = expectation(&rho, &a).unwrap();
        let want = -C64::new(eps / 2.0, 0.0) / C64::new(delta, -kappa / 2.0);
        assert!((got - want).norm() < 1e-8, "{got} vs {want}");
    }

    fn qubit_problem(measured_rate: f64) -> SmeProblem {
        SmeProblem {
            hamiltonian: pauli(Pauli::Z).scale_real(1.0),
            measured: pauli(Pauli::X).scale_real(measured_rate.sqrt()),
            unmeasured: vec![pauli(Pauli::Minus).scale_real(0.3f64.sqrt())],
        }
    }

    #[test]
    fn sme_without_probe_equals_me() {
        let p = qubit_problem(0.0);
        let rho0 = Operator::basis_projector(2, 0);
        let s = SmeSettings::new(2.0, 1e-4, 500, 1);
        let traj = sme_evolve(&p, &rho0, &s, 0).unwrap();
        let me = me_evolve(&p.liouvillian().unwrap(), &rho0, 2.0, 1e-4, 500).unwrap();
        for (a, b) in traj.states.iter().zip(&me.states) {
            assert!(a.max_abs_diff(b) < 1e-9);
        }
        assert_eq!(traj.record.dy.len(), traj.record.times.len() - 1);
    }

    #[test]
    fn sme_is_reproducible_and_trace_preserving() {
        let p = qubit_problem(0.8);
        let rho0 = Operator::basis_projector(2, 0);
        let s = SmeSettings::new(1.0, 1e-4, 100, 3);
        let a = sme_evolve(&p, &rho0, &s, 7).unwrap();
        let b = sme_evolve(&p, &rho0, &s, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.max_trace_deviation <= 1e-9);
        assert!(a.min_eigenvalue > -1e-7);
        for st in &a.states {
            assert!(st.is_hermitian(1e-12));
        }
        let c = sme_evolve(&p, &rho0, &s, 8).unwrap();
        assert_ne!(a.record.dw, c.record.dw);
    }

    #[test]
    fn sme_rejects_large_dt() {
        let p = qubit_problem(0.8);
        let s = SmeSettings::new(1.0, 0.1, 1, 0);
        assert!(sme_evolve(&p, &Operator::basis_projector(2, 0), &s, 0).is_err());
    }

    #[test]
    fn ensemble_mean_tracks_master_equation() {
        let p = qubit_problem(0.8);
        let rho0 = Operator::basis_projector(2, 0);
        let s = SmeSettings::new(1.0, 2e-4, 250, 9);
        let n = 400;
        let obs = [pauli(Pauli::X), pauli(Pauli::Z)];
        let ens = sme_ensemble(&p, &rho0, &s, n, &obs).unwrap();
        let me = me_evolve(&p.liouvillian().unwrap(), &rho0, 1.0, 2e-4, 250).unwrap();
        for (k, o) in obs.iter().enumerate() {
            for (t, st) in me.states.iter().enumerate() {
                let want = expectation(st, o).unwrap().re;
                assert!((ens.mean[k][t].re - want).abs() <= 5.0 / (n as f64).sqrt());
            }
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
        let again = pool.install(|| sme_ensemble(&p, &rho0, &s, n, &obs).unwrap());
        assert_eq!(ens, again);
    }

    #[test]
    fn euler_maruyama_loses_positivity_on_pure_states() {
        // Measurement without damping keeps the conditional state pure.
        let p = SmeProblem {
            hamiltonian: pauli(Pauli::Z).scale_real(5.0),
            measured: pauli(Pauli::X).scale_real(0.8f64.sqrt()),
            unmeasured: vec![],
        };
        let rho0 = Operator::basis_projector(2, 0);
        let mut s = SmeSettings::new(2.0, 1e-4, 100, 3);
        s.scheme = SmeScheme::EulerMaruyama;
        let em: Vec<_> = (0..8).map(|k| sme_evolve(&p, &rho0, &s, k)).collect();
        assert!(em.iter().any(|r| matches!(r, Err(Error::Positivity { .. }))));
        s.scheme = SmeScheme::Kraus;
        for k in 0..8 {
            let tr = sme_evolve(&p, &rho0, &s, k).unwrap();
            assert!(tr.min_eigenvalue > -1e-7);
        }
    }

    #[test]
    fn schemes_agree_in_mean() {
        let p = qubit_problem(0.2);
        let rho0 = Operator::new(CMatrix::from_diagonal(&CVector::from_vec(vec![
            C64::new(0.6, 0.0),
            C64::new(0.4, 0.0),
        ])))
        .unwrap();
        let mut s = SmeSettings::new(1.0, 1e-4, 500, 5);
        let obs = [pauli(Pauli::X), pauli(Pauli::Z)];
        let n = 200;
        let kraus = sme_ensemble(&p, &rho0, &s, n, &obs).unwrap();
        s.scheme = SmeScheme::EulerMaruyama;
        let em = sme_ensemble(&p, &rho0, &s, n, &obs).unwrap();
        for k in 0..obs.len() {
            for t in 0..kraus.times.len() {
                assert!((kraus.mean[k][t] - em.mean[k][t]).norm() < 5.0 / (n as f64).sqrt());
            }
        }
    }

    #[test]
    fn expectation_partial_trace_identity() {
        let f = HilbertFactorization::new(vec![2, 3]).unwrap();
        let psi = CVector::from_fn(6, |i, _| C64::new(1.0 + i as f64, 0.5 * i as f64));
        let rho = crate::operator::pure_state(&psi).unwrap();
        let x = pauli(Pauli::Y);
        let full = expectation(&rho, &kron(&x, &Operator::identity(3))).unwrap();
        let red = expectation(&partial_trace(&rho, &f, 0).unwrap(), &x).unwrap();
        assert!((full - red).norm() < 1e-12);
        assert!(full.im.abs() < 1e-10);
    }
}
