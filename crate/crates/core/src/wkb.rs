//! Frequency-domain 2-D box model in the WKB approximation.
//!
//! The BM admittance carries a viscous term proportional to the pressure
//! focusing factor `alpha = kappa H / tanh(kappa H)`, which makes the
//! dispersion relation `kappa tanh(kappa H) = 2 j rho omega Y_BM(alpha)`
//! implicit in `kappa`. Two solvers are provided:
//!
//! * [`solve_dispersion`]: relaxed fixed point alternating `kappa` and
//!   `alpha`, started from the long-wave root. Converges in the
//!   propagating region below the BM resonance.
//! * [`solve_dispersion_newton`]: Newton iteration on the equivalent
//!   alpha-free form `A u tanh u + j omega c u^2 = P` (with `u = kappa H`),
//!   used with frequency continuation by [`alpha_sweep`]. This one also
//!   tracks the evanescent branch past the resonance.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;

pub const DISPERSION_TOL: f64 = 1e-8;
pub const DISPERSION_MAX_ITER: usize = 200;
/// Under-relaxation weight of the fixed-point update.
pub const RELAXATION: f64 = 0.5;

const J: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Frequency grid (Hz) with one complex sample per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexSpectrum {
    pub freqs: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl ComplexSpectrum {
    pub fn new(freqs: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if freqs.len() != values.len() {
            return Err(Error::Domain(format!(
                "spectrum has {} frequencies but {} values",
                freqs.len(),
                values.len()
            )));
        }
        if freqs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("spectrum frequencies must be strictly ascending".into()));
        }
        Ok(Self { freqs, values })
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Writes `f_hz,beta_re,beta_im` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "f_hz,beta_re,beta_im")?;
        for (f, v) in self.freqs.iter().zip(&self.values) {
            writeln!(out, "{f},{},{}", v.re, v.im)?;
        }
        Ok(())
    }
}

/// The regression grid `m fs / (2 m2)`, m = 0..m2-1, in Hz.
pub fn regression_grid(p: &ModelParams) -> Vec<f64> {
    let df = p.fs / (2.0 * p.m2 as f64);
    (0..p.m2).map(|m| m as f64 * df).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionSolution {
    /// Complex wavenumber (1/m), Re > 0.
    pub kappa: Complex64,
    pub alpha: Complex64,
    pub iterations: usize,
    /// Relative residual of `kappa tanh(kappa H) = 2 j rho omega Y_BM`.
    pub residual: f64,
}

/// `tanh` that stays finite for large real parts.
pub(crate) fn ctanh(z: Complex64) -> Complex64 {
    if z.re < 0.0 {
        return -ctanh(-z);
    }
    let e = (-2.0 * z).exp();
    (1.0 - e) / (1.0 + e)
}

/// Pressure focusing factor `x / tanh(x)` for `x = kappa H`.
pub fn focusing_factor(kappa_h: Complex64) -> Complex64 {
    if kappa_h.norm() < 1e-8 {
        // x / tanh x = 1 + x^2/3 + O(x^4)
        return 1.0 + kappa_h * kappa_h / 3.0;
    }
    kappa_h / ctanh(kappa_h)
}

fn viscous_coefficient(p: &ModelParams) -> f64 {
    4.0 * p.b_visc * p.mu / (p.sigma_bm * p.h)
}

/// BM admittance with viscous stress,
/// `Y = -j w / sigma [ -w^2 + j w (Gamma + 4 alpha b mu / (sigma H)) + w_bm^2 ]^-1`
/// with `Gamma = w_bm - G w_bm`.
pub fn ybm_s2d(omega: f64, omega_bm: f64, g: f64, alpha: Complex64, p: &ModelParams) -> Result<Complex64> {
    if !(omega >= 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!("ybm_s2d needs omega >= 0 and finite alpha (omega={omega})")));
    }
    let gamma = omega_bm * (1.0 - g);
    let denom = Complex64::new(omega_bm * omega_bm - omega * omega, 0.0)
        + J * omega * (gamma + viscous_coefficient(p) * alpha);
    if denom.norm() <= f64::EPSILON * (omega * omega + omega_bm * omega_bm) {
        return Err(Error::Singular(format!(
            "BM admittance denominator vanishes at omega={omega:.3}, omega_bm={omega_bm:.3}, G={g}"
        )));
    }
    Ok(-J * omega / (p.sigma_bm * denom))
}

/// Relative residual of the dispersion relation at `kappa`.
pub fn dispersion_residual(omega: f64, omega_bm: f64, g: f64, kappa: Complex64, p: &ModelParams) -> Result<f64> {
    let kh = kappa * p.h;
    let alpha = focusing_factor(kh);
    let rhs = 2.0 * J * p.rho * omega * ybm_s2d(omega, omega_bm, g, alpha, p)?;
    let lhs = kappa * ctanh(kh);
    Ok((lhs - rhs).norm() / rhs.norm())
}

fn forward_root(z: Complex64) -> Complex64 {
    let r = z.sqrt();
    if r.re < 0.0 {
        -r
    } else {
        r
    }
}

/// Closed-form long-wave root `kappa = sqrt(2 j rho omega Y_BM / H)` (alpha = 1).
pub fn long_wave_kappa(omega: f64, omega_bm: f64, g: f64, p: &ModelParams) -> Result<Complex64> {
    let y = ybm_s2d(omega, omega_bm, g, Complex64::new(1.0, 0.0), p)?;
    Ok(forward_root(2.0 * J * p.rho * omega * y / p.h))
}

fn check_inputs(omega: f64, tol: f64) -> Result<()> {
    if !(omega > 0.0) {
        return Err(Error::Domain(format!("dispersion solve needs omega > 0, got {omega}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// Relaxed fixed point: `alpha <- kappa H / tanh(kappa H)`,
/// `kappa <- (1 - w) kappa + w sqrt(Z_f Y_BM(alpha) alpha)`.
pub fn solve_dispersion(
    omega: f64,
    omega_bm: f64,
    g: f64,
    p: &ModelParams,
    tol: f64,
    max_iter: usize,
) -> Result<DispersionSolution> {
    check_inputs(omega, tol)?;
    let zf = 2.0 * J * omega * p.rho / p.h;
    let mut kappa = long_wave_kappa(omega, omega_bm, g, p)?;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let alpha = focusing_factor(kappa * p.h);
        let target = forward_root(zf * ybm_s2d(omega, omega_bm, g, alpha, p)? * alpha);
        kappa = (1.0 - RELAXATION) * kappa + RELAXATION * target;
        residual = dispersion_residual(omega, omega_bm, g, kappa, p)?;
        if !residual.is_finite() {
            break;
        }
        if residual <= tol {
            return Ok(DispersionSolution {
                kappa,
                alpha: focusing_factor(kappa * p.h),
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Newton iteration on `F(u) = A u tanh u + j w c u^2 - P`, `u = kappa H`,
/// where `A = w_bm^2 - w^2 + j w Gamma`, `c` is the viscous coefficient and
/// `P = 2 w^2 rho H / sigma`. Starts from `seed` (a wavenumber) or from the
/// long-wave root.
pub fn solve_dispersion_newton(
    omega: f64,
    omega_bm: f64,
    g: f64,
    p: &ModelParams,
    seed: Option<Complex64>,
    tol: f64,
    max_iter: usize,
) -> Result<DispersionSolution> {
    check_inputs(omega, tol)?;
    let a = Complex64::new(omega_bm * omega_bm - omega * omega, omega * omega_bm * (1.0 - g));
    let jwc = J * omega * viscous_coefficient(p);
    let load = 2.0 * omega * omega * p.rho * p.h / p.sigma_bm;
    let f = |u: Complex64| {
        let t = ctanh(u);
        let value = a * u * t + jwc * u * u - load;
        let deriv = a * (t + u * (1.0 - t * t)) + 2.0 * jwc * u;
        (value, deriv)
    };
    let mut u = match seed {
        Some(k) => k * p.h,
        None => long_wave_kappa(omega, omega_bm, g, p)? * p.h,
    };
    let (mut fu, mut du) = f(u);
    for it in 1..=max_iter {
        if !fu.is_finite() || !du.is_finite() || du.norm() == 0.0 {
            break;
        }
        let step = fu / du;
        // backtrack while the step increases |F|
        let mut scale = 1.0;
        let mut next = u - step;
        let mut fnext = f(next);
        for _ in 0..30 {
            if fnext.0.is_finite() && fnext.0.norm() <= fu.norm() {
                break;
            }
            scale *= 0.5;
            next = u - step * scale;
            fnext = f(next);
        }
        u = next;
        (fu, du) = fnext;
        if (step * scale).norm() <= 1e-14 * u.norm().max(1e-300) || fu.norm() <= 1e-15 * load {
            if u.re < 0.0 {
                u = -u;
            }
            let kappa = u / p.h;
            let residual = dispersion_residual(omega, omega_bm, g, kappa, p)?;
            if residual <= tol {
                return Ok(DispersionSolution {
                    kappa,
                    alpha: focusing_factor(u),
                    iterations: it,
                    residual,
                });
            }
        }
    }
    let kappa = u / p.h;
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: dispersion_residual(omega, omega_bm, g, kappa, p).unwrap_or(f64::NAN),
    })
}

/// Pressure focusing factor over an ascending grid of frequencies (Hz),
/// tracking one branch by continuation from the long-wave root. A zero
/// frequency maps to `alpha = 1`.
pub fn alpha_sweep(freqs_hz: &[f64], omega_bm: f64, g: f64, p: &ModelParams) -> Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(freqs_hz.len());
    let mut prev: Option<(f64, Complex64)> = None;
    for &f in freqs_hz {
        let omega = 2.0 * PI * f;
        if omega == 0.0 {
            out.push(Complex64::new(1.0, 0.0));
            continue;
        }
        let sol = match prev {
            None => solve_dispersion_newton(omega, omega_bm, g, p, None, DISPERSION_TOL, DISPERSION_MAX_ITER)?,
            Some((w0, k0)) => continue_from(w0, k0, omega, omega_bm, g, p)?,
        };
        prev = Some((omega, sol.kappa));
        out.push(sol.alpha);
    }
    Ok(out)
}

fn continue_from(
    w0: f64,
    k0: Complex64,
    omega: f64,
    omega_bm: f64,
    g: f64,
    p: &ModelParams,
) -> Result<DispersionSolution> {
    let mut last_err = None;
    for substeps in [1usize, 4, 16, 64] {
        let mut kappa = k0;
        let mut ok = true;
        for s in 1..=substeps {
            let w = w0 + (omega - w0) * s as f64 / substeps as f64;
            match solve_dispersion_newton(w, omega_bm, g, p, Some(kappa), DISPERSION_TOL, DISPERSION_MAX_ITER) {
                Ok(sol) => kappa = sol.kappa,
                Err(e) => {
                    last_err = Some(e);
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return solve_dispersion_newton(omega, omega_bm, g, p, Some(kappa), DISPERSION_TOL, DISPERSION_MAX_ITER);
        }
    }
    Err(last_err.unwrap_or(Error::NonConvergence {
        iterations: DISPERSION_MAX_ITER,
        residual: f64::NAN,
    }))
}

/// Correction target `beta = alpha(G) / alpha(G_ref)` on the regression grid.
pub fn beta_target(omega_bm: f64, g: f64, p: &ModelParams) -> Result<ComplexSpectrum> {
    if !(g >= p.g_min - 1e-12 && g <= p.g_max + 1e-12) {
        return Err(Error::Domain(format!("G={g} outside [{}, {}]", p.g_min, p.g_max)));
    }
    let freqs = regression_grid(p);
    let alpha = alpha_sweep(&freqs, omega_bm, g, p)?;
    let values = if g == p.g_ref {
        vec![Complex64::new(1.0, 0.0); freqs.len()]
    } else {
        let alpha_ref = alpha_sweep(&freqs, omega_bm, p.g_ref, p)?;
        alpha.iter().zip(&alpha_ref).map(|(a, a0)| a / a0).collect()
    };
    ComplexSpectrum::new(freqs, values)
}
