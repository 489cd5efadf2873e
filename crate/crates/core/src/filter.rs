//! All-pole correction filters fitted to beta targets.
//!
//! A filter approximates `beta(z) = (1 + eps) / (1 - sum_k b_k z^-k)`.
//! Fitting minimizes the gain-extended penalized least-squares cost with a
//! Levenberg-Marquardt solver, then enforces unit DC gain with
//! `eps = -sum_k b_k`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::wkb::ComplexSpectrum;

/// Floor applied to `|1 - X_re b|` in the phase penalty.
pub const DENOM_FLOOR: f64 = 1e-6;
/// Pole radius accepted for table entries.
pub const MAX_POLE_RADIUS: f64 = 0.999;

const LM_INITIAL_DAMPING: f64 = 1e-3;
const LM_DAMPING_FACTOR: f64 = 10.0;
const LM_REL_TOL: f64 = 1e-10;
const LM_MAX_ITER: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoleFilter {
    pub b: Vec<f64>,
    pub eps: f64,
    pub omega_bm: f64,
    pub g: f64,
}

impl PoleFilter {
    /// The pass-through filter (`beta = 1`).
    pub fn identity(k: usize, omega_bm: f64, g: f64) -> Self {
        Self {
            b: vec![0.0; k],
            eps: 0.0,
            omega_bm,
            g,
        }
    }

    pub fn order(&self) -> usize {
        self.b.len()
    }

    /// Sets `eps = -sum b` so that the response at DC is exactly one.
    pub fn enforce_dc(&mut self) {
        self.eps = -self.b.iter().sum::<f64>();
    }

    /// Frequency response at `omega` (rad/s) for sampling rate `fs`.
    pub fn beta_hat(&self, omega: f64, fs: f64) -> Complex64 {
        let theta = omega / fs;
        let mut den = Complex64::new(1.0, 0.0);
        for (k, bk) in self.b.iter().enumerate() {
            den -= bk * Complex64::from_polar(1.0, -theta * (k + 1) as f64);
        }
        if den.norm() < f64::MIN_POSITIVE {
            return Complex64::new(f64::INFINITY, 0.0);
        }
        (1.0 + self.eps) / den
    }

    /// Response on a spectrum's grid.
    pub fn response(&self, freqs_hz: &[f64], fs: f64) -> Vec<Complex64> {
        freqs_hz.iter().map(|f| self.beta_hat(2.0 * PI * f, fs)).collect()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        filter_poles(&self.b)
    }

    /// Largest pole magnitude.
    pub fn pole_radius(&self) -> f64 {
        self.poles().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// True when every pole lies strictly inside the circle of radius `r`.
    pub fn poles_within(&self, r: f64) -> bool {
        poles_within_radius(&self.b, r)
    }
}

/// Roots of `z^K - sum_k b_k z^(K-k)`, from companion-matrix eigenvalues
/// polished by Newton steps on the polynomial. Trailing zero coefficients
/// contribute exact roots at the origin.
pub fn filter_poles(b: &[f64]) -> Vec<Complex64> {
    let k = b.len();
    let degree = b.iter().rposition(|&x| x != 0.0).map_or(0, |i| i + 1);
    let mut roots = vec![Complex64::new(0.0, 0.0); k - degree];
    if degree == 0 {
        return roots;
    }
    let mut companion = DMatrix::<f64>::zeros(degree, degree);
    for j in 0..degree {
        companion[(0, j)] = b[j];
    }
    for i in 1..degree {
        companion[(i, i - 1)] = 1.0;
    }
    let poly = |z: Complex64| {
        // p(z) = z^d - sum b_j z^(d-j), Horner with derivative
        let mut p = Complex64::new(1.0, 0.0);
        let mut dp = Complex64::new(0.0, 0.0);
        for &bj in &b[..degree] {
            dp = dp * z + p;
            p = p * z - bj;
        }
        (p, dp)
    };
    for mut z in companion.complex_eigenvalues().iter().copied() {
        for _ in 0..3 {
            let (p, dp) = poly(z);
            if dp.norm() == 0.0 {
                break;
            }
            let next = z - p / dp;
            if !next.is_finite() || poly(next).0.norm() >= p.norm() {
                break;
            }
            z = next;
        }
        roots.push(z);
    }
    roots
}

/// Schur-Cohn step-down test on the polynomial scaled to radius `r`:
/// all roots of `1 - sum b_k z^-k` satisfy `|z| < r` iff every reflection
/// coefficient of `A(r z)` has magnitude below one.
pub fn poles_within_radius(b: &[f64], r: f64) -> bool {
    // a[0] = 1, a[k] = -b_k r^-k
    let mut a: Vec<f64> = std::iter::once(1.0)
        .chain(b.iter().enumerate().map(|(k, bk)| -bk * r.powi(-(k as i32 + 1))))
        .collect();
    if a.iter().any(|x| !x.is_finite()) {
        return false;
    }
    for m in (1..a.len()).rev() {
        let km = a[m];
        if km.abs() >= 1.0 {
            return false;
        }
        let scale = 1.0 - km * km;
        let prev: Vec<f64> = (0..m).map(|i| (a[i] - km * a[m - i]) / scale).collect();
        a.truncate(m);
        a.copy_from_slice(&prev);
    }
    true
}

/// Feature matrices and targets of one regression.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    pub xl_re: DMatrix<f64>,
    pub xl_im: DMatrix<f64>,
    pub xr_re: DMatrix<f64>,
    pub xr_im: DMatrix<f64>,
    pub yl_re: DVector<f64>,
    pub yl_im: DVector<f64>,
    pub m1: usize,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl RegressionProblem {
    pub fn k(&self) -> usize {
        self.xl_re.ncols()
    }

    pub fn m2(&self) -> usize {
        self.xl_re.nrows() + self.xr_re.nrows()
    }
}

/// Index of the first grid frequency at or above `1.3 f_BM`, capped at `m2`.
pub fn cutoff_index(omega_bm: f64, p: &ModelParams) -> usize {
    let df = p.fs / (2.0 * p.m2 as f64);
    let f_cut = 1.3 * omega_bm / (2.0 * PI);
    ((f_cut / df).ceil().max(0.0) as usize).min(p.m2)
}

pub fn build_problem(beta: &ComplexSpectrum, omega_bm: f64, p: &ModelParams) -> Result<RegressionProblem> {
    let m2 = p.m2;
    if beta.len() != m2 {
        return Err(Error::Config(format!("beta has {} samples, expected {m2}", beta.len())));
    }
    let df = p.fs / (2.0 * m2 as f64);
    if beta.freqs.iter().enumerate().any(|(m, f)| (f - m as f64 * df).abs() > 1e-9 * df.max(*f)) {
        return Err(Error::Config("beta is not on the regression grid".into()));
    }
    let m1 = cutoff_index(omega_bm, p);
    if m1 == 0 {
        return Err(Error::Config(format!(
            "cutoff of omega_bm={omega_bm} leaves an empty left block"
        )));
    }
    let k = p.k;
    let angle = |m: usize, j: usize| PI * (j + 1) as f64 * m as f64 / m2 as f64;
    let xl_re = DMatrix::from_fn(m1, k, |m, j| angle(m, j).cos());
    let xl_im = DMatrix::from_fn(m1, k, |m, j| -angle(m, j).sin());
    let xr_re = DMatrix::from_fn(m2 - m1, k, |m, j| angle(m + m1, j).cos());
    let xr_im = DMatrix::from_fn(m2 - m1, k, |m, j| -angle(m + m1, j).sin());
    let y: Vec<Complex64> = beta.values[..m1].iter().map(|b| 1.0 - 1.0 / b).collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("beta target has zero or non-finite samples".into()));
    }
    Ok(RegressionProblem {
        xl_re,
        xl_im,
        xr_re,
        xr_im,
        yl_re: DVector::from_iterator(m1, y.iter().map(|v| v.re)),
        yl_im: DVector::from_iterator(m1, y.iter().map(|v| v.im)),
        m1,
        lambda1: p.lambda1,
        lambda2: p.lambda2,
    })
}

/// Hinge terms `max(0, X_r,im b / (1 - X_r,re b))` with the floored
/// denominators, plus the number of floored entries.
fn phase_hinge(b: &DVector<f64>, prob: &RegressionProblem) -> (Vec<f64>, Vec<f64>, Vec<f64>, usize) {
    let num = &prob.xr_im * b;
    let den_raw = DVector::from_element(prob.xr_re.nrows(), 1.0) - &prob.xr_re * b;
    let mut floored = 0;
    let mut hinge = Vec::with_capacity(num.len());
    let mut den = Vec::with_capacity(num.len());
    for (n, d) in num.iter().zip(den_raw.iter()) {
        let dd = if d.abs() < DENOM_FLOOR {
            floored += 1;
            DENOM_FLOOR.copysign(if *d == 0.0 { 1.0 } else { *d })
        } else {
            *d
        };
        den.push(dd);
        hinge.push((n / dd).max(0.0));
    }
    (hinge, num.iter().copied().collect(), den, floored)
}

/// Gain-extended cost
/// `|Y_re - X_re b + (Y_re - 1) eps|^2 + |Y_im - X_im b + Y_im eps|^2
///  + l1 (|b|^2 + eps^2) + l2 |max(0, X_r,im b / (1 - X_r,re b))|^2`.
pub fn lse_cost(b: &[f64], eps: f64, prob: &RegressionProblem) -> f64 {
    lse_cost_grad(b, eps, prob).0
}

/// Cost together with its gradient in `b` and `eps` (hinge taken as zero
/// where inactive).
pub fn lse_cost_grad(b: &[f64], eps: f64, prob: &RegressionProblem) -> (f64, Vec<f64>, f64) {
    let bv = DVector::from_column_slice(b);
    let r1 = &prob.yl_re - &prob.xl_re * &bv + prob.yl_re.add_scalar(-1.0) * eps;
    let r2 = &prob.yl_im - &prob.xl_im * &bv + &prob.yl_im * eps;
    let (hinge, num, den, _) = phase_hinge(&bv, prob);
    let hinge_sq: f64 = hinge.iter().map(|h| h * h).sum();
    let cost = r1.norm_squared()
        + r2.norm_squared()
        + prob.lambda1 * (bv.norm_squared() + eps * eps)
        + prob.lambda2 * hinge_sq;

    let mut grad = -2.0 * (prob.xl_re.tr_mul(&r1) + prob.xl_im.tr_mul(&r2)) + 2.0 * prob.lambda1 * &bv;
    let grad_eps = 2.0 * (r1.dot(&prob.yl_re.add_scalar(-1.0)) + r2.dot(&prob.yl_im)) + 2.0 * prob.lambda1 * eps;
    for (i, h) in hinge.iter().enumerate() {
        if *h > 0.0 {
            let floored = (den[i].abs() - DENOM_FLOOR).abs() < f64::EPSILON * DENOM_FLOOR;
            for j in 0..grad.len() {
                let mut d = prob.xr_im[(i, j)] / den[i];
                if !floored {
                    d += num[i] * prob.xr_re[(i, j)] / (den[i] * den[i]);
                }
                grad[j] += 2.0 * prob.lambda2 * h * d;
            }
        }
    }
    (cost, grad.iter().copied().collect(), grad_eps)
}

/// Solver knobs. The default uses the gain term.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Fit `eps` jointly; when false `eps` is held at zero during the fit.
    pub gain_term: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { gain_term: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub omega_bm: f64,
    pub g: f64,
    /// Final cost of the regression, before DC enforcement.
    pub cost: f64,
    /// Largest relative magnitude error over the left block, after DC enforcement.
    pub max_mag_err: f64,
    pub max_pole_radius: f64,
    pub iterations: usize,
    /// Phase-penalty denominators that hit the floor at the solution.
    pub floored: usize,
    pub lambda1: f64,
}

impl FitDiagnostics {
    pub const CSV_HEADER: &'static str = "omega_bm_hz,G,cost,max_mag_err,max_pole_radius";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.omega_bm / (2.0 * PI),
            self.g,
            self.cost,
            self.max_mag_err,
            self.max_pole_radius
        )
    }
}

pub fn write_diagnostics_csv<W: Write>(mut out: W, rows: &[FitDiagnostics]) -> std::io::Result<()> {
    writeln!(out, "{}", FitDiagnostics::CSV_HEADER)?;
    for r in rows {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

struct LmOutcome {
    params: DVector<f64>,
    cost: f64,
    iterations: usize,
}

/// Levenberg-Marquardt on the stacked residual vector. The data and ridge
/// blocks are linear in the parameters, so their normal-matrix part is
/// formed once; the hinge block is re-linearized every iteration.
fn levenberg_marquardt(prob: &RegressionProblem, opts: FitOptions) -> LmOutcome {
    let k = prob.k();
    let np = if opts.gain_term { k + 1 } else { k };
    let m1 = prob.m1;

    // Linear residual r_lin = c - J_lin p with J_lin = [X_re, 1 - Y_re; X_im, -Y_im].
    let mut jl = DMatrix::<f64>::zeros(2 * m1, np);
    jl.view_mut((0, 0), (m1, k)).copy_from(&prob.xl_re);
    jl.view_mut((m1, 0), (m1, k)).copy_from(&prob.xl_im);
    if opts.gain_term {
        for m in 0..m1 {
            jl[(m, k)] = 1.0 - prob.yl_re[m];
            jl[(m1 + m, k)] = -prob.yl_im[m];
        }
    }
    let mut c = DVector::<f64>::zeros(2 * m1);
    c.rows_mut(0, m1).copy_from(&prob.yl_re);
    c.rows_mut(m1, m1).copy_from(&prob.yl_im);
    let jtj_lin = jl.tr_mul(&jl) + DMatrix::<f64>::identity(np, np) * prob.lambda1;
    let jtc = jl.tr_mul(&c);

    let split = |p: &DVector<f64>| {
        let b: Vec<f64> = p.rows(0, k).iter().copied().collect();
        let eps = if opts.gain_term { p[k] } else { 0.0 };
        (b, eps)
    };
    // Steps that push a right-block denominator through zero jump across
    // the singularity of the phase penalty; they are treated as infeasible.
    let cost_of = |p: &DVector<f64>| {
        let (b, eps) = split(p);
        let den = DVector::from_element(prob.xr_re.nrows(), 1.0) - &prob.xr_re * p.rows(0, k);
        if den.iter().any(|d| *d <= DENOM_FLOOR) {
            return f64::INFINITY;
        }
        lse_cost(&b, eps, prob)
    };

    let mut p = DVector::<f64>::zeros(np);
    let mut cost = cost_of(&p);
    let mut damping = LM_INITIAL_DAMPING;
    let mut iterations = 0;
    while iterations < LM_MAX_ITER {
        iterations += 1;
        // gradient of 0.5 * cost and Gauss-Newton matrix
        let bv = p.rows(0, k).into_owned();
        let (hinge, num, den, _) = phase_hinge(&bv, prob);
        let mut jtj = jtj_lin.clone();
        let mut g = &jtj_lin * &p - &jtc;
        let sl2 = prob.lambda2.sqrt();
        let mut row = DVector::<f64>::zeros(np);
        for (i, h) in hinge.iter().enumerate() {
            if *h <= 0.0 {
                continue;
            }
            let floored = (den[i].abs() - DENOM_FLOOR).abs() < f64::EPSILON * DENOM_FLOOR;
            for j in 0..k {
                let mut d = prob.xr_im[(i, j)] / den[i];
                if !floored {
                    d += num[i] * prob.xr_re[(i, j)] / (den[i] * den[i]);
                }
                row[j] = sl2 * d;
            }
            jtj.ger(1.0, &row, &row, 1.0);
            g.axpy(sl2 * h, &row, 1.0);
        }

        let mut accepted = false;
        while damping < 1e16 {
            let mut a = jtj.clone();
            for d in 0..np {
                a[(d, d)] += damping * jtj[(d, d)];
            }
            let Some(chol) = a.cholesky() else {
                damping *= LM_DAMPING_FACTOR;
                continue;
            };
            let step = chol.solve(&g);
            let trial = &p - &step;
            let trial_cost = cost_of(&trial);
            if trial_cost.is_finite() && trial_cost < cost {
                let rel = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                p = trial;
                cost = trial_cost;
                damping = (damping / LM_DAMPING_FACTOR).max(1e-15);
                accepted = true;
                if rel < LM_REL_TOL {
                    return LmOutcome { params: p, cost, iterations };
                }
                break;
            }
            damping *= LM_DAMPING_FACTOR;
        }
        if !accepted {
            break;
        }
    }
    LmOutcome {
        params: p,
        cost,
        iterations,
    }
}

/// Largest relative magnitude error of `filter` against `beta` over the
/// first `m1` grid points.
pub fn max_magnitude_error(filter: &PoleFilter, beta: &ComplexSpectrum, m1: usize, fs: f64) -> f64 {
    beta.freqs[..m1]
        .iter()
        .zip(&beta.values[..m1])
        .map(|(f, b)| (filter.beta_hat(2.0 * PI * f, fs).norm() - b.norm()).abs() / b.norm())
        .fold(0.0, f64::max)
}

/// Fidelity of a fit over the band below the section's CF, where the
/// correction matters for the traveling-wave peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakDeviation {
    /// Grid frequency where `||beta| - 1|` is largest inside the band.
    pub f_hz: f64,
    pub beta_mag: f64,
    pub beta_hat_mag: f64,
    /// Signed relative error `(|beta_hat| - |beta|) / |beta|` at `f_hz`.
    pub rel: f64,
    /// Largest absolute relative error anywhere inside the band.
    pub band_max: f64,
}

impl PeakDeviation {
    /// True when the fit pulls the peak toward unity: an enhancement
    /// (`|beta| > 1`) is underestimated and an attenuation overestimated.
    /// Targets within `tol` of unity carry no sign requirement.
    pub fn shrinks_toward_one(&self, tol: f64) -> bool {
        let excess = self.beta_mag - 1.0;
        if excess.abs() <= tol {
            return true;
        }
        self.rel * excess < 0.0
    }
}

pub fn peak_deviation(filter: &PoleFilter, beta: &ComplexSpectrum, omega_bm: f64, fs: f64) -> PeakDeviation {
    let cf_hz = crate::params::omega_n_of(omega_bm) / (2.0 * PI);
    let mut out = PeakDeviation {
        f_hz: 0.0,
        beta_mag: 1.0,
        beta_hat_mag: 1.0,
        rel: 0.0,
        band_max: 0.0,
    };
    let mut best = -1.0;
    for (f, b) in beta.freqs.iter().zip(&beta.values) {
        if *f > cf_hz {
            break;
        }
        let mag = b.norm();
        let hat = filter.beta_hat(2.0 * PI * f, fs).norm();
        let rel = (hat - mag) / mag;
        out.band_max = out.band_max.max(rel.abs());
        if (mag - 1.0).abs() > best {
            best = (mag - 1.0).abs();
            out.f_hz = *f;
            out.beta_mag = mag;
            out.beta_hat_mag = hat;
            out.rel = rel;
        }
    }
    out
}

/// Single fit at fixed penalties; no stability retry.
pub fn fit_problem(
    prob: &RegressionProblem,
    beta: &ComplexSpectrum,
    omega_bm: f64,
    g: f64,
    fs: f64,
    opts: FitOptions,
) -> (PoleFilter, FitDiagnostics) {
    let k = prob.k();
    let out = levenberg_marquardt(prob, opts);
    let mut filter = PoleFilter {
        b: out.params.rows(0, k).iter().copied().collect(),
        eps: 0.0,
        omega_bm,
        g,
    };
    filter.enforce_dc();
    let bv = DVector::from_column_slice(&filter.b);
    let floored = phase_hinge(&bv, prob).3;
    let diag = FitDiagnostics {
        omega_bm,
        g,
        cost: out.cost,
        max_mag_err: max_magnitude_error(&filter, beta, prob.m1, fs),
        max_pole_radius: filter.pole_radius(),
        iterations: out.iterations,
        floored,
        lambda1: prob.lambda1,
    };
    (filter, diag)
}

/// Fits the filter for one target; if the result is unstable the fit is
/// repeated once with `lambda1` doubled.
pub fn fit_filter(beta: &ComplexSpectrum, omega_bm: f64, g: f64, p: &ModelParams) -> Result<(PoleFilter, FitDiagnostics)> {
    let mut prob = build_problem(beta, omega_bm, p)?;
    let mut last = String::new();
    for attempt in 0..2 {
        if attempt == 1 {
            prob.lambda1 *= 2.0;
        }
        let (filter, diag) = fit_problem(&prob, beta, omega_bm, g, p.fs, FitOptions::default());
        if !diag.cost.is_finite() || filter.b.iter().any(|x| !x.is_finite()) {
            last = format!("non-finite cost {}", diag.cost);
            continue;
        }
        if !filter.poles_within(1.0) {
            last = format!("unstable fit, pole radius {:.6}", diag.max_pole_radius);
            continue;
        }
        return Ok((filter, diag));
    }
    Err(Error::FitFailure {
        omega_bm,
        g,
        reason: last,
    })
}
