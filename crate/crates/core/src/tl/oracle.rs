//! Steady-state response of the linearized line by direct frequency-domain
//! solve. Independent of the time stepper; used to check it.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::Result;
use crate::filter::PoleFilter;
use crate::tl::nonlinear::Triplet;
use crate::tl::solver::TlModel;
use crate::tl::tridiag::Tridiagonal;

/// Gain of linear interpolation between samples at frequency `f_hz`,
/// `sinc²(f/fs)`: the stimulus the stepper sees between base samples.
pub fn linear_hold_gain(f_hz: f64, fs: f64) -> f64 {
    let x = PI * f_hz / fs;
    if x.abs() < 1e-12 {
        1.0
    } else {
        (x.sin() / x).powi(2)
    }
}

/// Velocity phasors per section for a unit cosine stimulus (1 Pa) at
/// `f_hz`, with fixed mechanics per section and optional fixed filters.
pub fn velocity_response(
    model: &TlModel,
    triplets: &[Triplet],
    filters: Option<&[PoleFilter]>,
    f_hz: f64,
) -> Result<Vec<Complex64>> {
    let geom = &model.geometry;
    let n = geom.len();
    let fs = model.params.fs;
    let w = 2.0 * PI * f_hz;
    let jw = Complex64::new(0.0, w);
    let mut lower = Vec::with_capacity(n);
    let mut diag = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    let mut admit = Vec::with_capacity(n);
    for i in 0..n {
        let s = &geom.sections[i];
        let t = &triplets[i];
        let delay = (-jw * (t.psi / s.omega)).exp();
        let z = (s.omega * s.omega * (1.0 - t.rho * delay)) / jw + t.delta * s.omega;
        let beta = match filters {
            Some(f) => f[i].beta_hat(w, fs),
            None => Complex64::new(1.0, 0.0),
        };
        // v = β q / (jω + z)
        let y = beta / (jw + z);
        let (l, d, u) = geom.coupling(i);
        lower.push(Complex64::new(l, 0.0));
        diag.push(Complex64::new(d, 0.0) + jw * y);
        upper.push(Complex64::new(u, 0.0));
        admit.push(y);
    }
    let a = Tridiagonal::new(lower, diag, upper)?;
    let mut rhs = vec![Complex64::new(0.0, 0.0); n];
    rhs[0] = Complex64::new(geom.drive_coefficient(&model.config) * linear_hold_gain(f_hz, fs), 0.0);
    let q = a.solve(&rhs)?;
    Ok(q.iter().zip(&admit).map(|(q, y)| q * y).collect())
}
