//! Spectral factorization of scalar rational PSDs and synthesis of
//! physically realizable annihilation-only ancillas.
//!
//! Frequency convention: `s = -iω`. A PSD given in `ω` is converted by
//! substituting `ω = i s`.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cmax_abs, eigenvalues_complex, is_hurwitz_complex, lyapunov_complex};
use crate::operator::{CMatrix, I, ONE, ZERO};

const AXIS_TOL: f64 = 1e-9;
const PAIR_TOL: f64 = 1e-6;
const GRID_POINTS: usize = 512;
/// Tolerance of the physical realizability condition `F + F† + GG† = 0`.
pub const REALIZABILITY_TOL: f64 = 1e-10;

/// Polynomial helpers on ascending coefficient lists.
pub mod poly {
    use super::*;

    pub fn trim(mut c: Vec<C64>) -> Vec<C64> {
        while c.len() > 1 && *c.last().unwrap() == ZERO {
            c.pop();
        }
        if c.is_empty() {
            c.push(ZERO);
        }
        c
    }

    pub fn degree(c: &[C64]) -> usize {
        c.len().saturating_sub(1)
    }

    pub fn eval(c: &[C64], x: C64) -> C64 {
        c.iter().rev().fold(ZERO, |acc, &k| acc * x + k)
    }

    fn eval_with_derivative(c: &[C64], x: C64) -> (C64, C64) {
        let mut p = ZERO;
        let mut dp = ZERO;
        for &k in c.iter().rev() {
            dp = dp * x + p;
            p = p * x + k;
        }
        (p, dp)
    }

    pub fn mul(a: &[C64], b: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; a.len() + b.len() - 1];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    }

    pub fn from_roots(roots: &[C64]) -> Vec<C64> {
        roots.iter().fold(vec![ONE], |acc, &r| mul(&acc, &[-r, ONE]))
    }

    /// `p~(s) = conj(p(-s*))`.
    pub fn para_conjugate(c: &[C64]) -> Vec<C64> {
        c.iter()
            .enumerate()
            .map(|(k, z)| if k % 2 == 0 { z.conj() } else { -z.conj() })
            .collect()
    }

    /// Roots from companion-matrix eigenvalues, polished by guarded Newton steps.
    pub fn roots(c: &[C64]) -> Vec<C64> {
        let c = trim(c.to_vec());
        let n = degree(&c);
        if n == 0 {
            return Vec::new();
        }
        let lead = c[n];
        let mut comp = CMatrix::zeros(n, n);
        for i in 1..n {
            comp[(i, i - 1)] = ONE;
        }
        for i in 0..n {
            comp[(i, n - 1)] = -c[i] / lead;
        }
        let mut roots = eigenvalues_complex(&comp);
        for r in roots.iter_mut() {
            for _ in 0..3 {
                let (p, dp) = eval_with_derivative(&c, *r);
                if dp == ZERO {
                    break;
                }
                let cand = *r - p / dp;
                if eval(&c, cand).norm() < p.norm() {
                    *r = cand;
                } else {
                    break;
                }
            }
        }
        roots
    }
}

/// Which variable a coefficient list is written in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumDomain {
    S,
    Omega,
}

/// PSD file layout: coefficient pairs `[re, im]`, ascending powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsdSpec {
    pub num: Vec<[f64; 2]>,
    pub den: Vec<[f64; 2]>,
    pub domain: SpectrumDomain,
}

/// Scalar rational PSD `S(s) = num(s)/den(s)` in the `s` domain.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalPsd {
    num: Vec<C64>,
    den: Vec<C64>,
}

impl RationalPsd {
    pub fn from_s(num: Vec<C64>, den: Vec<C64>) -> Result<Self> {
        let num = poly::trim(num);
        let den = poly::trim(den);
        if den.iter().all(|z| *z == ZERO) {
            return Err(Error::InvalidParameter("denominator is identically zero".into()));
        }
        if num.iter().all(|z| *z == ZERO) {
            return Err(Error::NotAPsd("numerator is identically zero".into()));
        }
        if poly::degree(&num) >= poly::degree(&den) {
            return Err(Error::Properness(format!(
                "numerator degree {} must be below denominator degree {}",
                poly::degree(&num),
                poly::degree(&den)
            )));
        }
        let psd = Self { num, den };
        psd.check_positivity()?;
        Ok(psd)
    }

    /// Converts `ω`-domain coefficients via `ω = i s`.
    pub fn from_omega(num: Vec<C64>, den: Vec<C64>) -> Result<Self> {
        let convert = |c: Vec<C64>| -> Vec<C64> {
            c.into_iter()
                .enumerate()
                .map(|(k, z)| z * I.powu(k as u32))
                .collect()
        };
        Self::from_s(convert(num), convert(den))
    }

    pub fn from_spec(spec: &PsdSpec) -> Result<Self> {
        let to_c = |v: &[[f64; 2]]| v.iter().map(|p| C64::new(p[0], p[1])).collect::<Vec<_>>();
        match spec.domain {
            SpectrumDomain::S => Self::from_s(to_c(&spec.num), to_c(&spec.den)),
            SpectrumDomain::Omega => Self::from_omega(to_c(&spec.num), to_c(&spec.den)),
        }
    }

    /// Normalized Lorentzian `(γ²/4)/(γ²/4 + (ω-ω₀)²)`.
    pub fn lorentzian(omega0: f64, gamma0: f64) -> Result<Self> {
        if gamma0 <= 0.0 {
            return Err(Error::InvalidParameter(format!("gamma0 must be positive, got {gamma0}")));
        }
        let h = gamma0 * gamma0 / 4.0;
        Self::from_omega(
            vec![C64::new(h, 0.0)],
            vec![
                C64::new(h + omega0 * omega0, 0.0),
                C64::new(-2.0 * omega0, 0.0),
                ONE,
            ],
        )
    }

    pub fn num(&self) -> &[C64] {
        &self.num
    }

    pub fn den(&self) -> &[C64] {
        &self.den
    }

    pub fn eval_s(&self, s: C64) -> C64 {
        poly::eval(&self.num, s) / poly::eval(&self.den, s)
    }

    pub fn eval_omega(&self, omega: f64) -> C64 {
        self.eval_s(C64::new(0.0, -omega))
    }

    /// 512-point grid covering every pole feature (centre `-Im p`, width `|Re p|`).
    pub fn validation_grid(&self) -> Vec<f64> {
        let poles = poly::roots(&self.den);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in &poles {
            let centre = -p.im;
            let width = p.re.abs().max(1e-3 * (1.0 + p.norm()));
            lo = lo.min(centre - 10.0 * width);
            hi = hi.max(centre + 10.0 * width);
        }
        linspace(lo, hi, GRID_POINTS)
    }

    fn check_positivity(&self) -> Result<()> {
        for w in self.validation_grid() {
            let v = self.eval_omega(w);
            if !v.re.is_finite() {
                continue;
            }
            if v.im.abs() > 1e-8 * v.re.abs().max(1e-12) + 1e-12 {
                return Err(Error::NotAPsd(format!("S(ω) is not real at ω = {w:.6} (value {v})")));
            }
            if v.re < -1e-10 {
                return Err(Error::NotAPsd(format!("S(ω) = {:.3e} < 0 at ω = {w:.6}", v.re)));
            }
        }
        Ok(())
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Strictly proper `Γ(s) = (Σ βₖ sᵏ)/(sⁿ + Σ αₖ sᵏ)` with left-half-plane poles.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    beta: Vec<C64>,
    alpha: Vec<C64>,
}

impl TransferFunction {
    pub fn new(beta: Vec<C64>, alpha: Vec<C64>) -> Result<Self> {
        let n = alpha.len();
        if n == 0 || beta.len() != n {
            return Err(Error::InvalidDimension(format!(
                "transfer function needs beta and alpha of equal length n >= 1 (got {} and {n})",
                beta.len()
            )));
        }
        let tf = Self { beta, alpha };
        for p in tf.poles() {
            if p.re >= 0.0 {
                return Err(Error::Stability(format!("pole {p} is not in the open left half-plane")));
            }
        }
        Ok(tf)
    }

    pub fn from_zeros_poles(gain: C64, zeros: &[C64], poles: &[C64]) -> Result<Self> {
        if zeros.len() >= poles.len() {
            return Err(Error::Properness("need fewer zeros than poles".into()));
        }
        let mut beta: Vec<C64> = poly::from_roots(zeros).into_iter().map(|c| c * gain).collect();
        beta.resize(poles.len(), ZERO);
        let mut alpha = poly::from_roots(poles);
        alpha.pop();
        Self::new(beta, alpha)
    }

    pub fn order(&self) -> usize {
        self.alpha.len()
    }

    pub fn beta(&self) -> &[C64] {
        &self.beta
    }

    pub fn alpha(&self) -> &[C64] {
        &self.alpha
    }

    fn den_poly(&self) -> Vec<C64> {
        let mut d = self.alpha.clone();
        d.push(ONE);
        d
    }

    pub fn poles(&self) -> Vec<C64> {
        poly::roots(&self.den_poly())
    }

    pub fn eval(&self, s: C64) -> C64 {
        poly::eval(&self.beta, s) / poly::eval(&self.den_poly(), s)
    }

    /// `Γ(s) Γ~(s)` as a rational PSD.
    pub fn psd(&self) -> Result<RationalPsd> {
        let b = poly::trim(self.beta.clone());
        let d = self.den_poly();
        RationalPsd::from_s(
            poly::mul(&b, &poly::para_conjugate(&b)),
            poly::mul(&d, &poly::para_conjugate(&d)),
        )
    }
}

fn split_half_planes(roots: &[C64], what: &str) -> Result<Vec<C64>> {
    let mut left = Vec::new();
    let mut right = Vec::new();
    for &r in roots {
        if r.re.abs() <= AXIS_TOL * r.norm().max(1.0) {
            return Err(Error::MarginalSpectrum(format!(
                "{what} root {r} lies on the imaginary axis"
            )));
        }
        if r.re < 0.0 {
            left.push(r);
        } else {
            right.push(r);
        }
    }
    if left.len() != right.len() {
        return Err(Error::NotAPsd(format!(
            "{what} roots are not mirror-paired ({} left, {} right)",
            left.len(),
            right.len()
        )));
    }
    for &r in &left {
        let mirror = -r.conj();
        let (k, dist) = right
            .iter()
            .enumerate()
            .map(|(k, q)| (k, (q - mirror).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("right roots are nonempty when left roots exist");
        if dist > PAIR_TOL * r.norm().max(1.0) {
            return Err(Error::NotAPsd(format!(
                "{what} root {r} has no mirror partner -r* (closest miss {dist:.3e})"
            )));
        }
        right.swap_remove(k);
    }
    Ok(left)
}

/// Stable minimum-phase factor `Γ` with `Γ(s)Γ~(s) = S(s)`.
pub fn spectral_factor(psd: &RationalPsd) -> Result<TransferFunction> {
    let zeros = split_half_planes(&poly::roots(psd.num()), "numerator")?;
    let poles = split_half_planes(&poly::roots(psd.den()), "denominator")?;
    let k = psd.num().last().copied().unwrap() / psd.den().last().copied().unwrap();
    let sign = if (zeros.len() + poles.len()) % 2 == 0 { 1.0 } else { -1.0 };
    let g2 = k * sign;
    if g2.re <= 0.0 || g2.im.abs() > 1e-8 * g2.norm() {
        return Err(Error::NotAPsd(format!(
            "leading coefficient ratio gives |g|^2 = {g2}, which is not positive"
        )));
    }
    TransferFunction::from_zeros_poles(C64::new(g2.re.sqrt(), 0.0), &zeros, &poles)
}

/// Complex state-space triple `(F, G, H)`: `da = F a dt + G dB`, `c = H a`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnihilationRealization {
    pub f: CMatrix,
    pub g: CMatrix,
    pub h: CMatrix,
}

impl AnnihilationRealization {
    pub fn new(f: CMatrix, g: CMatrix, h: CMatrix) -> Result<Self> {
        let n = f.nrows();
        if n == 0 || f.ncols() != n || g.nrows() != n || h.ncols() != n {
            return Err(Error::InvalidDimension(format!(
                "inconsistent realization shapes F {}x{}, G {}x{}, H {}x{}",
                f.nrows(),
                f.ncols(),
                g.nrows(),
                g.ncols(),
                h.nrows(),
                h.ncols()
            )));
        }
        Ok(Self { f, g, h })
    }

    pub fn order(&self) -> usize {
        self.f.nrows()
    }

    pub fn is_hurwitz(&self) -> bool {
        is_hurwitz_complex(&self.f)
    }

    /// `max |F + F† + GG†|`.
    pub fn realizability_residual(&self) -> f64 {
        cmax_abs(&(&self.f + self.f.adjoint() + &self.g * self.g.adjoint()))
    }

    /// `Ω = (i/2)(F - F†)`.
    pub fn omega(&self) -> CMatrix {
        (&self.f - self.f.adjoint()) * (I * 0.5)
    }

    /// Coupling matrix `N = -G†` so that `L = N a`.
    pub fn coupling(&self) -> CMatrix {
        -self.g.adjoint()
    }

    /// `H (sI - F)⁻¹ G` for a scalar realization.
    pub fn transfer(&self, s: C64) -> C64 {
        let n = self.order();
        let resolvent = CMatrix::identity(n, n) * s - &self.f;
        let x = resolvent
            .lu()
            .solve(&self.g)
            .unwrap_or_else(|| CMatrix::from_element(n, self.g.ncols(), C64::new(f64::NAN, f64::NAN)));
        (&self.h * x)[(0, 0)]
    }
}

/// Realization together with its Hamiltonian and coupling matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalRealization {
    pub realization: AnnihilationRealization,
    pub omega: CMatrix,
    pub na: CMatrix,
    pub residual: f64,
}

/// Controllable companion form of `Γ`.
pub fn canonical_realization(gamma: &TransferFunction) -> AnnihilationRealization {
    let n = gamma.order();
    let mut f = CMatrix::zeros(n, n);
    for i in 0..n - 1 {
        f[(i, i + 1)] = ONE;
    }
    for j in 0..n {
        f[(n - 1, j)] = -gamma.alpha()[j];
    }
    let mut g = CMatrix::zeros(n, 1);
    g[(n - 1, 0)] = ONE;
    let h = CMatrix::from_row_slice(1, n, gamma.beta());
    AnnihilationRealization { f, g, h }
}

/// Solves `F P + P F† + Q = 0`; `F` must be Hurwitz.
pub fn solve_lyapunov(f: &CMatrix, q: &CMatrix) -> Result<CMatrix> {
    if !is_hurwitz_complex(f) {
        return Err(Error::Stability("Lyapunov drift matrix is not Hurwitz".into()));
    }
    let p = lyapunov_complex(f, q)?;
    let residual = cmax_abs(&(f * &p + &p * f.adjoint() + q));
    let scale = 1.0 + cmax_abs(q);
    if residual > 1e-10 * scale {
        return Err(Error::Numerical(format!("Lyapunov residual {residual:.3e} too large")));
    }
    Ok(p)
}

/// Gramian of `(F, G)`; errors when it is numerically singular.
pub fn controllability_gramian(f: &CMatrix, g: &CMatrix) -> Result<CMatrix> {
    let p = solve_lyapunov(f, &(g * g.adjoint()))?;
    let eig = nalgebra::SymmetricEigen::new(p.clone()).eigenvalues;
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= 0.0 || min <= 1e-12 * max {
        return Err(Error::Controllability(format!(
            "gramian is singular (eigenvalues in [{min:.3e}, {max:.3e}])"
        )));
    }
    Ok(p)
}

/// Similarity transform making `(F₀, G₀, H₀)` physically realizable.
///
/// With `P = R R†` (Cholesky of the gramian) the transform is `T = R⁻¹`,
/// so `T†T = P⁻¹` and the stationary covariance of the result is `I`.
pub fn physical_realization(canonical: &AnnihilationRealization) -> Result<PhysicalRealization> {
    let p = controllability_gramian(&canonical.f, &canonical.g)?;
    let chol = p
        .cholesky()
        .ok_or_else(|| Error::Controllability("gramian is not positive definite".into()))?;
    let r = chol.l();
    let t = r
        .clone()
        .solve_lower_triangular(&CMatrix::identity(r.nrows(), r.ncols()))
        .ok_or_else(|| Error::Singular("Cholesky factor is singular".into()))?;
    let f = &t * &canonical.f * &r;
    let g = &t * &canonical.g;
    let h = &canonical.h * &r;
    let realization = AnnihilationRealization::new(f, g, h)?;
    let residual = realization.realizability_residual();
    if residual > REALIZABILITY_TOL {
        return Err(Error::Numerical(format!(
            "realizability residual {residual:.3e} exceeds {REALIZABILITY_TOL:.0e}"
        )));
    }
    let omega = realization.omega();
    let omega = (&omega + omega.adjoint()) * C64::new(0.5, 0.0);
    let na = realization.coupling();
    Ok(PhysicalRealization {
        realization,
        omega,
        na,
        residual,
    })
}

/// Closed-form single-mode ancilla for a Lorentzian spectrum.
pub fn lorentzian_ancilla(omega0: f64, gamma0: f64) -> Result<AnnihilationRealization> {
    if !(gamma0 > 0.0) {
        return Err(Error::InvalidParameter(format!("gamma0 must be positive, got {gamma0}")));
    }
    let cell = |z: C64| CMatrix::from_element(1, 1, z);
    AnnihilationRealization::new(
        cell(C64::new(-gamma0 / 2.0, -omega0)),
        cell(C64::new(-gamma0.sqrt(), 0.0)),
        cell(C64::new(-gamma0.sqrt() / 2.0, 0.0)),
    )
}

pub fn lorentzian_psd(omega0: f64, gamma0: f64, omega: f64) -> f64 {
    let h = gamma0 * gamma0 / 4.0;
    h / (h + (omega - omega0).powi(2))
}

/// `|H (sI - F)⁻¹ G|²` at `s = -iω`.
pub fn psd_of_realization(r: &AnnihilationRealization, omegas: &[f64]) -> Vec<f64> {
    omegas
        .iter()
        .map(|&w| r.transfer(C64::new(0.0, -w)).norm_sqr())
        .collect()
}

/// Full pipeline: validated PSD to physical realization.
pub fn synthesize(psd: &RationalPsd) -> Result<PhysicalRealization> {
    let gamma = spectral_factor(psd)?;
    physical_realization(&canonical_realization(&gamma))
}

/// Largest relative deviation between a realization's PSD and `psd` on `grid`.
pub fn psd_relative_error(r: &AnnihilationRealization, psd: &RationalPsd, grid: &[f64]) -> f64 {
    let got = psd_of_realization(r, grid);
    grid.iter()
        .zip(got)
        .map(|(&w, g)| {
            let want = psd.eval_omega(w).re;
            (g - want).abs() / want.abs().max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    const W0: f64 = 10.0;
    const G0: f64 = 0.6;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn lorentzian_factor_matches_closed_form() {
        let psd = RationalPsd::lorentzian(W0, G0).unwrap();
        let gamma = spectral_factor(&psd).unwrap();
        assert_eq!(gamma.order(), 1);
        // Γ₀(s) = (γ₀/2)/(s + iω₀ + γ₀/2)
        assert!((gamma.beta()[0] - c(0.3, 0.0)).norm() < 1e-12);
        assert!((gamma.alpha()[0] - c(0.3, 10.0)).norm() < 1e-12);
        let canon = canonical_realization(&gamma);
        assert!((canon.f[(0, 0)] - c(-0.3, -10.0)).norm() < 1e-12);
        assert_eq!(canon.g[(0, 0)], ONE);
        assert!((canon.h[(0, 0)] - c(0.3, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn lorentzian_physical_realization() {
        let pr = synthesize(&RationalPsd::lorentzian(W0, G0).unwrap()).unwrap();
        let r = &pr.realization;
        assert!((r.f[(0, 0)] - c(-0.3, -10.0)).norm() < 1e-12);
        assert!((r.g[(0, 0)].norm() - G0.sqrt()).abs() < 1e-12);
        assert!((r.h[(0, 0)].norm() - G0.sqrt() / 2.0).abs() < 1e-12);
        assert!((pr.omega[(0, 0)] - c(W0, 0.0)).norm() < 1e-12);
        assert!((pr.na[(0, 0)].norm() - G0.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn lorentzian_fast_path() {
        let r = lorentzian_ancilla(W0, G0).unwrap();
        assert_eq!(r.f[(0, 0)], c(-0.3, -10.0));
        let at = |w: f64| psd_of_realization(&r, &[w])[0];
        assert!((at(W0) - 1.0).abs() < 1e-14);
        assert!((at(W0 + G0 / 2.0) - 0.5).abs() < 1e-14);
        assert!((at(W0 - G0 / 2.0) - 0.5).abs() < 1e-14);
        assert!(at(1e8) < 1e-15);
        let grid = linspace(W0 - 10.0 * G0, W0 + 10.0 * G0, 201);
        let general = synthesize(&RationalPsd::lorentzian(W0, G0).unwrap()).unwrap();
        let a = psd_of_realization(&r, &grid);
        let b = psd_of_realization(&general.realization, &grid);
        for ((w, x), y) in grid.iter().zip(&a).zip(&b) {
            assert!((x - lorentzian_psd(W0, G0, *w)).abs() < 1e-12);
            assert!((x - y).abs() < 1e-12);
        }
        assert!(lorentzian_ancilla(W0, 0.0).is_err());
    }

    #[test]
    fn companion_layout() {
        let gamma = TransferFunction::new(vec![c(1.0, 0.0), c(0.5, 0.0)], vec![c(2.0, 0.5), c(3.0, 0.0)]).unwrap();
        let canon = canonical_realization(&gamma);
        assert_eq!(canon.f[(1, 0)], c(-2.0, -0.5));
        assert_eq!(canon.f[(1, 1)], c(-3.0, 0.0));
        for w in linspace(-5.0, 5.0, 41) {
            let s = c(0.0, -w);
            assert!((canon.transfer(s).norm_sqr() - gamma.eval(s).norm_sqr()).abs() < 1e-10);
        }
    }

    #[test]
    fn lyapunov_examples() {
        let f = CMatrix::from_element(1, 1, c(-0.3, -10.0));
        let p = solve_lyapunov(&f, &CMatrix::from_element(1, 1, ONE)).unwrap();
        assert!((p[(0, 0)] - c(1.0 / G0, 0.0)).norm() < 1e-14);
        let eye = CMatrix::identity(3, 3);
        let p = solve_lyapunov(&(-&eye), &(&eye * c(2.0, 0.0))).unwrap();
        assert!(cmax_abs(&(p - &eye)) < 1e-14);
        let unstable = CMatrix::from_element(1, 1, c(0.1, 0.0));
        assert!(matches!(solve_lyapunov(&unstable, &eye.view((0, 0), (1, 1)).into_owned()), Err(Error::Stability(_))));
    }

    #[test]
    fn uncontrollable_gramian_is_rejected() {
        let f = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(-1.0, 0.0), c(-2.0, 0.0)]));
        let g = CMatrix::from_column_slice(2, 1, &[ONE, ZERO]);
        assert!(matches!(controllability_gramian(&f, &g), Err(Error::Controllability(_))));
    }

    #[test]
    fn validation_errors() {
        let improper = RationalPsd::from_s(vec![ONE, ONE], vec![ONE, ONE]);
        assert!(matches!(improper, Err(Error::Properness(_))));
        // (ω - 1)² / ((ω² + 1)²): double zero on the real ω axis.
        let marginal = RationalPsd::from_omega(
            vec![ONE, c(-2.0, 0.0), ONE],
            vec![ONE, ZERO, c(2.0, 0.0), ZERO, ONE],
        )
        .unwrap();
        assert!(matches!(spectral_factor(&marginal), Err(Error::MarginalSpectrum(_))));
        let negative = RationalPsd::from_omega(vec![c(-1.0, 0.0)], vec![ONE, ZERO, ONE]);
        assert!(matches!(negative, Err(Error::NotAPsd(_))));
    }

    #[test]
    fn psd_spec_roundtrip() {
        let json = r#"{"num": [[0.09, 0.0]], "den": [[100.09, 0.0], [-20.0, 0.0], [1.0, 0.0]], "domain": "omega"}"#;
        let spec: PsdSpec = serde_json::from_str(json).unwrap();
        let psd = RationalPsd::from_spec(&spec).unwrap();
        assert!((psd.eval_omega(W0).re - 1.0).abs() < 1e-12);
    }
}
