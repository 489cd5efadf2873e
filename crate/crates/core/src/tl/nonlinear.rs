//! Level-dependent BM mechanics: the pole trajectory, its mapping onto the
//! delayed-stiffness triplet, and the envelope-driven active strength G.

use crate::error::{Error, Result};

/// Constant of the pole-to-triplet correspondence.
pub const TRIPLET_C: f64 = 120.8998691636393;

/// Delayed-stiffness parameters entering
/// `g = ω²y + δωv − ϱω²y(t − ψ/ω)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet {
    pub rho: f64,
    pub delta: f64,
    pub psi: f64,
}

impl Triplet {
    /// Triplet whose characteristic function `s² + δs + 1 − ϱe^{−ψs}`
    /// (in units of ω_n) has a double root with real part `−pole`.
    ///
    /// With the delay near 3.5π the feedback must oppose the displacement,
    /// so ϱ comes out negative.
    pub fn from_pole(pole: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&pole) {
            return Err(Error::Domain(format!("pole {pole} outside [0, 1)")));
        }
        let c = TRIPLET_C;
        let a = (pole + (pole * pole + c * (1.0 - pole * pole)).sqrt()) / c;
        let delta = 2.0 * (pole - a);
        let rho = -2.0 * a * (1.0 - 0.25 * delta * delta).sqrt() * (-pole / a).exp();
        Ok(Self {
            rho,
            delta,
            psi: 1.0 / a,
        })
    }

    /// Passive damped oscillator, no delayed feedback.
    pub fn passive(delta: f64) -> Self {
        Self {
            rho: 0.0,
            delta,
            psi: 0.0,
        }
    }
}

/// Largest ψ reached for poles in `[lo, hi]`. ψ(P) has a single minimum,
/// so the endpoints bound it.
pub fn max_psi(lo: f64, hi: f64) -> Result<f64> {
    Ok(Triplet::from_pole(lo)?.psi.max(Triplet::from_pole(hi)?.psi))
}

/// Compression knees in dB re 1 m/s (RMS velocity).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Knees {
    pub v1_db: f64,
    pub v2_db: f64,
}

impl Knees {
    pub fn new(v1_db: f64, v2_db: f64) -> Result<Self> {
        if !(v1_db.is_finite() && v2_db.is_finite() && v1_db < v2_db) {
            return Err(Error::Calibration(format!(
                "knees must satisfy v1 < v2 (got {v1_db} dB, {v2_db} dB)"
            )));
        }
        Ok(Self { v1_db, v2_db })
    }

    /// Knees from the two linear growth lines `v = I + c_start` and
    /// `v = I + c_sat` and the compression line of slope `a` anchored on the
    /// first one at `i_knee1_db`.
    pub fn from_growth_lines(i_knee1_db: f64, c_start: f64, c_sat: f64, a: f64) -> Result<Self> {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Calibration(format!("compression slope {a} must lie in (0, 1)")));
        }
        if !(c_start > c_sat) {
            return Err(Error::Calibration(format!(
                "saturating line ({c_sat:.2} dB) does not lie below the starting line ({c_start:.2} dB)"
            )));
        }
        let v1 = i_knee1_db + c_start;
        let i2 = i_knee1_db + (c_start - c_sat) / (1.0 - a);
        Self::new(v1, i2 + c_sat)
    }

    pub fn v1(&self) -> f64 {
        db_to_velocity(self.v1_db)
    }

    pub fn v2(&self) -> f64 {
        db_to_velocity(self.v2_db)
    }

    /// Position of `v_db` between the knees, clamped to `[0, 1]`.
    pub fn fraction(&self, v_db: f64) -> f64 {
        ((v_db - self.v1_db) / (self.v2_db - self.v1_db)).clamp(0.0, 1.0)
    }
}

pub fn velocity_to_db(v: f64) -> f64 {
    20.0 * v.abs().log10()
}

pub fn db_to_velocity(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Starting and saturating pole of one section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolePair {
    pub start: f64,
    pub sat: f64,
}

impl PolePair {
    /// Pole for instantaneous speed `v_abs`: the starting pole below the
    /// first knee, the saturating pole above the second, and between them
    /// log-linear in pole versus dB velocity. Since the peak gain scales
    /// roughly as 1/P, this makes output grow at the constant slope the
    /// knees were placed for.
    pub fn pole(&self, v_abs: f64, knees: &Knees) -> f64 {
        if v_abs <= knees.v1() {
            return self.start;
        }
        if v_abs >= knees.v2() {
            return self.sat;
        }
        let f = knees.fraction(velocity_to_db(v_abs));
        self.start * (self.sat / self.start).powf(f)
    }
}

/// Active-process strength from the envelope level in dB, linear between
/// the knees after the −6 dB alignment and clamped to `[g_min, g_max]`.
pub fn g_strength(i_db: f64, knees: &Knees, g_min: f64, g_max: f64) -> f64 {
    if i_db.is_nan() || i_db == f64::NEG_INFINITY {
        return g_max;
    }
    let g = g_max + (i_db - 6.0 - knees.v1_db) / (knees.v2_db - knees.v1_db) * (g_min - g_max);
    g.clamp(g_min.min(g_max), g_max.max(g_min))
}
