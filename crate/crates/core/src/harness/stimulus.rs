//! Tone, chirp and click stimuli in pascals.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reference sound pressure (Pa).
pub const P_REF: f64 = 20e-6;

/// Shortest onset/offset ramp accepted for tones and chirps (s).
pub const MIN_RAMP_S: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StimulusKind {
    Tone { freq_hz: f64 },
    /// Linear sweep over the whole duration.
    Chirp { f_start_hz: f64, f_end_hz: f64 },
    /// Rectangular pulse of `width` samples starting at `at_s`.
    Click { at_s: f64, width: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusSpec {
    #[serde(flatten)]
    pub kind: StimulusKind,
    /// dB SPL; RMS for tones and chirps, peak for clicks.
    pub level_db: f64,
    pub duration_s: f64,
    /// Raised-cosine ramp for tones and chirps (s).
    pub ramp_s: f64,
    pub fs: f64,
}

impl StimulusSpec {
    pub fn tone(freq_hz: f64, level_db: f64, duration_s: f64, fs: f64) -> Self {
        Self {
            kind: StimulusKind::Tone { freq_hz },
            level_db,
            duration_s,
            ramp_s: 2.5e-3,
            fs,
        }
    }

    pub fn chirp(f_start_hz: f64, f_end_hz: f64, level_db: f64, duration_s: f64, fs: f64) -> Self {
        Self {
            kind: StimulusKind::Chirp {
                f_start_hz,
                f_end_hz,
            },
            level_db,
            duration_s,
            ramp_s: 5e-3,
            fs,
        }
    }

    /// Single-sample click at 0.5 ms.
    pub fn click(level_db: f64, duration_s: f64, fs: f64) -> Self {
        Self {
            kind: StimulusKind::Click { at_s: 0.5e-3, width: 1 },
            level_db,
            duration_s,
            ramp_s: 0.0,
            fs,
        }
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.fs).round() as usize
    }

    /// Peak (clicks) or RMS (tones, chirps) pressure in pascals.
    pub fn pressure(&self) -> f64 {
        P_REF * 10f64.powf(self.level_db / 20.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return bad(format!("sampling rate {} must be positive", self.fs));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration {} must be positive", self.duration_s));
        }
        if !self.level_db.is_finite() {
            return bad("level must be finite".into());
        }
        let nyq = 0.5 * self.fs;
        match self.kind {
            StimulusKind::Tone { freq_hz } => {
                if !(freq_hz > 0.0 && freq_hz < nyq) {
                    return bad(format!("tone at {freq_hz} Hz outside (0, {nyq}) Hz"));
                }
            }
            StimulusKind::Chirp {
                f_start_hz,
                f_end_hz,
            } => {
                if !(f_start_hz > 0.0 && f_end_hz > 0.0 && f_start_hz.max(f_end_hz) < nyq) {
                    return bad(format!("chirp band {f_start_hz}-{f_end_hz} Hz outside (0, {nyq}) Hz"));
                }
            }
            StimulusKind::Click { at_s, width } => {
                if width == 0 || !(at_s >= 0.0) || at_s * self.fs + width as f64 > self.n_samples() as f64 {
                    return bad("click must have positive width and fit in the duration".into());
                }
                return Ok(());
            }
        }
        if self.ramp_s < MIN_RAMP_S {
            return bad(format!("ramp of {} s is shorter than {MIN_RAMP_S} s", self.ramp_s));
        }
        if 2.0 * self.ramp_s > self.duration_s {
            return bad("ramps longer than the stimulus".into());
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.n_samples();
        let p = self.pressure();
        match self.kind {
            StimulusKind::Tone { freq_hz } => Ok(self.ramped(n, |t| {
                (2.0f64).sqrt() * p * (2.0 * PI * freq_hz * t).sin()
            })),
            StimulusKind::Chirp {
                f_start_hz,
                f_end_hz,
            } => {
                let rate = (f_end_hz - f_start_hz) / self.duration_s;
                Ok(self.ramped(n, |t| {
                    (2.0f64).sqrt() * p * (2.0 * PI * (f_start_hz * t + 0.5 * rate * t * t)).sin()
                }))
            }
            StimulusKind::Click { at_s, width } => {
                let mut x = vec![0.0; n];
                let start = (at_s * self.fs).round() as usize;
                x[start..start + width].iter_mut().for_each(|s| *s = p);
                Ok(x)
            }
        }
    }

    /// Instantaneous chirp frequency at time `t` (s).
    pub fn chirp_frequency(&self, t: f64) -> Option<f64> {
        match self.kind {
            StimulusKind::Chirp {
                f_start_hz,
                f_end_hz,
            } => Some(f_start_hz + (f_end_hz - f_start_hz) * t / self.duration_s),
            _ => None,
        }
    }

    fn ramped(&self, n: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let ramp = (self.ramp_s * self.fs).round() as usize;
        (0..n)
            .map(|i| {
                let t = i as f64 / self.fs;
                let edge = i.min(n - 1 - i);
                let w = if edge < ramp {
                    0.5 * (1.0 - (PI * edge as f64 / ramp as f64).cos())
                } else {
                    1.0
                };
                w * f(t)
            })
            .collect()
    }
}
