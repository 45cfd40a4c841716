//! Lorentzian peak fitting by Levenberg–Marquardt.

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};

const MAX_ITER: usize = 200;
const GRAD_TOL: f64 = 1e-10;

/// `A (Γ/2)² / ((x - x₀)² + (Γ/2)²) + B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzianFit {
    pub center: f64,
    pub fwhm: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub rms_residual: f64,
    pub iterations: usize,
}

pub fn lorentzian(x: f64, center: f64, fwhm: f64, amplitude: f64, offset: f64) -> f64 {
    let h = 0.25 * fwhm * fwhm;
    amplitude * h / ((x - center).powi(2) + h) + offset
}

/// Residuals `r = model - v` and Jacobian rows in normalized coordinates.
fn residuals(u: &[f64], v: &[f64], p: &Vector4<f64>, jac: Option<&mut Vec<Vector4<f64>>>) -> Vec<f64> {
    let (u0, g, a, b) = (p[0], p[1], p[2], p[3]);
    let h = 0.25 * g * g;
    let mut out = Vec::with_capacity(u.len());
    let mut rows = Vec::with_capacity(if jac.is_some() { u.len() } else { 0 });
    for (&x, &y) in u.iter().zip(v) {
        let dx = x - u0;
        let den = dx * dx + h;
        let shape = h / den;
        out.push(a * shape + b - y);
        if jac.is_some() {
            let d_u0 = a * h * 2.0 * dx / (den * den);
            let d_g = a * (0.5 * g * den - h * 0.5 * g) / (den * den);
            rows.push(Vector4::new(d_u0, d_g, shape, 1.0));
        }
    }
    if let Some(j) = jac {
        *j = rows;
    }
    out
}

/// Nonlinear least-squares Lorentzian fit.
///
/// Abscissae and ordinates are centred and scaled to unit range before
/// iterating, so the gradient criterion is independent of units.
pub fn lorentzian_fit(xs: &[f64], ys: &[f64]) -> Result<LorentzianFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            context: "lorentzian_fit",
            expected: xs.len(),
            found: ys.len(),
        });
    }
    let fail = |iterations, rms, reason: &str| Error::FitFailure {
        iterations,
        rms,
        reason: reason.to_string(),
    };
    if xs.len() < 8 {
        return Err(fail(0, f64::NAN, "need at least 8 points"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(fail(0, f64::NAN, "non-finite data"));
    }
    let (xmin, xmax) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let (ymin, ymax) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| (lo.min(y), hi.max(y)));
    let xc = 0.5 * (xmin + xmax);
    let xs_scale = 0.5 * (xmax - xmin);
    let ys_scale = ymax - ymin;
    if !(xs_scale > 0.0) || !(ys_scale > 0.0) {
        return Err(fail(0, f64::NAN, "data have no spread"));
    }
    let u: Vec<f64> = xs.iter().map(|x| (x - xc) / xs_scale).collect();
    let v: Vec<f64> = ys.iter().map(|y| (y - ymin) / ys_scale).collect();

    let imax = v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap();
    let width0 = crate::gaussian::sampled_fwhm(&u, &v).unwrap_or(0.2).max(1e-3);
    let mut p = Vector4::new(u[imax], width0, 1.0, 0.0);
    let mut jac = Vec::new();
    let mut r = residuals(&u, &v, &p, Some(&mut jac));
    let mut cost: f64 = r.iter().map(|x| x * x).sum();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let rms_of = |cost: f64| (cost / u.len() as f64).sqrt() * ys_scale;
    loop {
        let mut jtj = Matrix4::zeros();
        let mut grad = Vector4::zeros();
        for (row, ri) in jac.iter().zip(&r) {
            jtj += row * row.transpose();
            grad += row * *ri;
        }
        if grad.norm() <= GRAD_TOL {
            break;
        }
        if iterations >= MAX_ITER {
            return Err(fail(iterations, rms_of(cost), &format!("gradient norm {:.3e} after {MAX_ITER} iterations", grad.norm())));
        }
        iterations += 1;
        let mut accepted = false;
        while lambda < 1e16 {
            let mut lhs = jtj;
            for k in 0..4 {
                lhs[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = lhs.cholesky().map(|c| c.solve(&-grad)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            let r_trial = residuals(&u, &v, &trial, None);
            let c_trial: f64 = r_trial.iter().map(|x| x * x).sum();
            if c_trial.is_finite() && c_trial <= cost {
                p = trial;
                r = residuals(&u, &v, &p, Some(&mut jac));
                cost = c_trial;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction left at machine precision: accept only a stationary point.
            if grad.norm() <= 1e3 * GRAD_TOL {
                break;
            }
            return Err(fail(iterations, rms_of(cost), &format!("stalled with gradient norm {:.3e}", grad.norm())));
        }
    }
    let fwhm = p[1].abs() * xs_scale;
    if !(fwhm > 0.0) || !fwhm.is_finite() {
        return Err(fail(iterations, rms_of(cost), "degenerate width"));
    }
    Ok(LorentzianFit {
        center: xc + p[0] * xs_scale,
        fwhm,
        amplitude: p[2] * ys_scale,
        offset: ymin + p[3] * ys_scale,
        rms_residual: rms_of(cost),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::linspace;

    #[test]
    fn recovers_exact_lorentzian() {
        let xs = linspace(40.0, 44.0, 41);
        let ys: Vec<f64> = xs.iter().map(|&x| lorentzian(x, 42.3, 0.7, 3e-6, 0.0)).collect();
        let f = lorentzian_fit(&xs, &ys).unwrap();
        assert!((f.center - 42.3).abs() / 42.3 < 1e-6);
        assert!((f.fwhm - 0.7).abs() / 0.7 < 1e-6);
        assert!((f.amplitude - 3e-6).abs() / 3e-6 < 1e-6);
        assert!(f.rms_residual < 1e-12);
    }

    #[test]
    fn recovers_offset() {
        let xs = linspace(-5.0, 5.0, 30);
        let ys: Vec<f64> = xs.iter().map(|&x| lorentzian(x, 0.4, 2.0, 1.0, 0.1)).collect();
        let f = lorentzian_fit(&xs, &ys).unwrap();
        assert!((f.offset - 0.1).abs() < 1e-8);
        assert!((f.fwhm - 2.0).abs() < 1e-8);
    }

    #[test]
    fn too_few_points() {
        let xs = linspace(0.0, 1.0, 5);
        assert!(matches!(lorentzian_fit(&xs, &xs), Err(Error::FitFailure { .. })));
    }
}
