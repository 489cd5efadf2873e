//! Pure analyses over recorded traces.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::stimulus::StimulusSpec;

pub fn to_db(x: f64) -> f64 {
    20.0 * x.abs().log10()
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// RMS over the final half of a trace (steady-state tone window).
pub fn steady_rms(x: &[f64]) -> f64 {
    rms(&x[x.len() / 2..])
}

/// Least-squares fit of `A cos(2πft + φ) + c`; returns `(A, φ)`.
pub fn sinusoid_fit(x: &[f64], f_hz: f64, fs: f64) -> (f64, f64) {
    // normal equations for [cos, sin, 1]
    let mut m = [[0.0f64; 3]; 3];
    let mut r = [0.0f64; 3];
    for (i, &v) in x.iter().enumerate() {
        let ph = 2.0 * PI * f_hz * i as f64 / fs;
        let basis = [ph.cos(), ph.sin(), 1.0];
        for a in 0..3 {
            r[a] += basis[a] * v;
            for b in 0..3 {
                m[a][b] += basis[a] * basis[b];
            }
        }
    }
    let mat = nalgebra::Matrix3::from_fn(|i, j| m[i][j]);
    let sol = mat
        .lu()
        .solve(&nalgebra::Vector3::new(r[0], r[1], r[2]))
        .unwrap_or_else(nalgebra::Vector3::zeros);
    let (c, s) = (sol[0], sol[1]);
    ((c * c + s * s).sqrt(), (-s).atan2(c))
}

/// Ordinary least-squares slope of `y` against `x`.
pub fn linear_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Response level (dB) per stimulus level (dB).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthCurve {
    pub levels_db: Vec<f64>,
    pub response_db: Vec<f64>,
}

/// Piecewise description of a growth curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    /// Slope over the low-level linear regime.
    pub low_slope: f64,
    /// Slope over the central half of the compressive range.
    pub mid_slope: f64,
    /// Levels bounding the range where the local slope stays below the
    /// threshold.
    pub compression_start_db: f64,
    pub compression_end_db: f64,
    /// Gain (response minus level) at the lowest level minus at the highest.
    pub compression_db: f64,
    pub slope_threshold: f64,
}

impl GrowthReport {
    pub fn span_db(&self) -> f64 {
        self.compression_end_db - self.compression_start_db
    }
}

impl GrowthCurve {
    /// Local slopes between neighbouring levels, at the midpoints.
    pub fn slopes(&self) -> Vec<(f64, f64)> {
        self.levels_db
            .windows(2)
            .zip(self.response_db.windows(2))
            .map(|(l, r)| (0.5 * (l[0] + l[1]), (r[1] - r[0]) / (l[1] - l[0])))
            .collect()
    }

    /// Splits the curve at the points where the local slope crosses
    /// `threshold` around its minimum. The low-level slope is fitted over
    /// levels at or below `low_max_db`, or 10 dB under the compression onset
    /// when `None`.
    pub fn analyze(&self, threshold: f64, low_max_db: Option<f64>) -> Result<GrowthReport> {
        let n = self.levels_db.len();
        if n < 4 || self.response_db.len() != n {
            return Err(Error::Analysis("growth curve needs at least four levels".into()));
        }
        if self.levels_db.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Analysis("growth levels must increase".into()));
        }
        let slopes = self.slopes();
        let (imin, &(_, smin)) = slopes
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .expect("non-empty");
        if !(smin < threshold) {
            return Err(Error::Analysis(format!(
                "no compression: smallest slope {smin:.3} is not below {threshold:.3}"
            )));
        }
        let crossing = |i: usize, j: usize| {
            let (x0, s0) = slopes[i];
            let (x1, s1) = slopes[j];
            x0 + (threshold - s0) / (s1 - s0) * (x1 - x0)
        };
        let mut lo = imin;
        while lo > 0 && slopes[lo - 1].1 < threshold {
            lo -= 1;
        }
        let start = if lo == 0 {
            return Err(Error::Analysis("compression starts below the lowest level".into()));
        } else {
            crossing(lo - 1, lo)
        };
        let mut hi = imin;
        while hi + 1 < slopes.len() && slopes[hi + 1].1 < threshold {
            hi += 1;
        }
        let end = if hi + 1 == slopes.len() {
            return Err(Error::Analysis("compression extends past the highest level".into()));
        } else {
            crossing(hi, hi + 1)
        };

        let pick = |a: f64, b: f64| -> (Vec<f64>, Vec<f64>) {
            self.levels_db
                .iter()
                .zip(&self.response_db)
                .filter(|(l, _)| **l >= a - 1e-9 && **l <= b + 1e-9)
                .map(|(l, r)| (*l, *r))
                .unzip()
        };
        let (lx, ly) = pick(f64::NEG_INFINITY, low_max_db.unwrap_or(start - 10.0));
        let low_slope = linear_slope(&lx, &ly)
            .ok_or_else(|| Error::Analysis("fewer than two levels below the compressive range".into()))?;
        let quarter = 0.25 * (end - start);
        let (mx, my) = pick(start + quarter, end - quarter);
        let mid_slope = match linear_slope(&mx, &my) {
            Some(s) => s,
            None => smin,
        };
        let gain_lo = self.response_db[0] - self.levels_db[0];
        let gain_hi = self.response_db[n - 1] - self.levels_db[n - 1];
        Ok(GrowthReport {
            low_slope,
            mid_slope,
            compression_start_db: start,
            compression_end_db: end,
            compression_db: gain_lo - gain_hi,
            slope_threshold: threshold,
        })
    }
}

/// Frequency response read off a chirp response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyResponse {
    pub freqs_hz: Vec<f64>,
    /// dB re stimulus level (response dB minus stimulus dB SPL).
    pub mag_db: Vec<f64>,
}

impl FrequencyResponse {
    /// Same curve normalized to its maximum.
    pub fn re_max(&self) -> Vec<f64> {
        let m = self.mag_db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        self.mag_db.iter().map(|d| d - m).collect()
    }

    /// Absolute response dB for the given stimulus level.
    pub fn absolute(&self, level_db: f64) -> Vec<f64> {
        self.mag_db.iter().map(|d| d + level_db).collect()
    }
}

/// Magnitude at frequency f = RMS of the response under a Gaussian window
/// of width `sigma_s` centred where the chirp passes through f.
pub fn sliding_gaussian_response(
    v: &[f64],
    fs: f64,
    chirp: &StimulusSpec,
    sigma_s: f64,
    freqs_hz: &[f64],
) -> Result<FrequencyResponse> {
    let (f0, f1) = match chirp.kind {
        crate::harness::stimulus::StimulusKind::Chirp {
            f_start_hz,
            f_end_hz,
        } => (f_start_hz, f_end_hz),
        _ => return Err(Error::Analysis("sliding analysis needs a chirp stimulus".into())),
    };
    if !(sigma_s > 0.0) {
        return Err(Error::Analysis("window width must be positive".into()));
    }
    let half = (3.0 * sigma_s * fs).ceil() as isize;
    let mut mag = Vec::with_capacity(freqs_hz.len());
    for &f in freqs_hz {
        let t = (f - f0) / (f1 - f0) * chirp.duration_s;
        let c = (t * fs).round() as isize;
        if c - half < 0 || c + half >= v.len() as isize {
            return Err(Error::Analysis(format!(
                "window at {f:.0} Hz (t = {t:.4} s) exceeds the trace"
            )));
        }
        let (mut num, mut den) = (0.0, 0.0);
        for i in (c - half)..=(c + half) {
            let dt = (i - c) as f64 / fs;
            let w = (-0.5 * (dt / sigma_s).powi(2)).exp();
            num += w * v[i as usize] * v[i as usize];
            den += w;
        }
        mag.push(to_db((num / den).sqrt()) - chirp.level_db);
    }
    Ok(FrequencyResponse {
        freqs_hz: freqs_hz.to_vec(),
        mag_db: mag,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Q10 {
    pub q: f64,
    pub f_peak: f64,
    pub f_lo: f64,
    pub f_hi: f64,
    /// A −10 dB flank was not found; the band edge was used instead.
    pub partial: bool,
}

/// Q10dB = f_peak / (f_hi − f_lo) at the −10 dB points, flanks located by
/// linear interpolation between grid points.
pub fn q10(freqs: &[f64], mag_db: &[f64]) -> Result<Q10> {
    if freqs.len() < 3 || freqs.len() != mag_db.len() {
        return Err(Error::Analysis("q10 needs at least three matching points".into()));
    }
    let (ip, &peak) = mag_db
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let level = peak - 10.0;
    let interp = |i: usize, j: usize| {
        freqs[i] + (level - mag_db[i]) / (mag_db[j] - mag_db[i]) * (freqs[j] - freqs[i])
    };
    let mut partial = false;
    let mut lo = ip;
    while lo > 0 && mag_db[lo - 1] > level {
        lo -= 1;
    }
    let f_lo = if lo == 0 {
        partial = true;
        freqs[0]
    } else {
        interp(lo - 1, lo)
    };
    let mut hi = ip;
    while hi + 1 < freqs.len() && mag_db[hi + 1] > level {
        hi += 1;
    }
    let f_hi = if hi + 1 == freqs.len() {
        partial = true;
        freqs[freqs.len() - 1]
    } else {
        interp(hi, hi + 1)
    };
    Ok(Q10 {
        q: freqs[ip] / (f_hi - f_lo),
        f_peak: freqs[ip],
        f_lo,
        f_hi,
        partial,
    })
}

/// Zero crossing with its direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub t: f64,
    pub rising: bool,
}

/// First `count` zero crossings after the trace first reaches `onset`
/// times its peak magnitude, located by linear interpolation.
pub fn zero_crossings(x: &[f64], fs: f64, onset: f64, count: usize) -> Vec<Crossing> {
    let peak = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak == 0.0 {
        return Vec::new();
    }
    let start = x.iter().position(|v| v.abs() >= onset * peak).unwrap_or(0);
    let mut out = Vec::with_capacity(count);
    for i in start.max(1)..x.len() {
        let (a, b) = (x[i - 1], x[i]);
        if (a < 0.0 && b >= 0.0) || (a > 0.0 && b <= 0.0) {
            let frac = a / (a - b);
            out.push(Crossing {
                t: (i as f64 - 1.0 + frac) / fs,
                rising: b > a,
            });
            if out.len() == count {
                break;
            }
        }
    }
    out
}

/// Largest distance from each reference crossing to the nearest crossing of
/// the same direction in `other`.
pub fn crossing_shift(reference: &[Crossing], other: &[Crossing]) -> Option<f64> {
    let mut worst: f64 = 0.0;
    for r in reference {
        let d = other
            .iter()
            .filter(|c| c.rising == r.rising)
            .map(|c| (c.t - r.t).abs())
            .fold(f64::INFINITY, f64::min);
        if !d.is_finite() {
            return None;
        }
        worst = worst.max(d);
    }
    Some(worst)
}

/// Magnitude spectrum (linear) of `x` zero-padded to a power of two;
/// returns `(freqs, magnitudes)` up to Nyquist.
pub fn magnitude_spectrum(x: &[f64], fs: f64) -> (Vec<f64>, Vec<f64>) {
    let n = x.len().next_power_of_two().max(2);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2 + 1;
    let freqs = (0..half).map(|k| k as f64 * fs / n as f64).collect();
    let mags = buf[..half].iter().map(|c| c.norm()).collect();
    (freqs, mags)
}
