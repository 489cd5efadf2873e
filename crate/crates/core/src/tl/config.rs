//! Transmission-line calibration constants and per-section derived values.
//!
//! None of these values are measured quantities. They are calibration
//! defaults chosen so the 20 kHz place shows a sharp low-level peak and a
//! compressive range below 30 dB in the V-1D configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{qerb, section_positions, ModelParams};
use crate::tl::nonlinear::{max_psi, Knees, PolePair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TlConfig {
    /// BM width (m).
    pub l_bm: f64,
    /// Scala cross-section at the base (m^2); sets the series mass 2ρ/S.
    pub scala_area: f64,
    /// sqrt(M_p/M_s) (m): the length over which fluid couples sections.
    pub coupling_length: f64,
    /// Pressure gradient at the stapes per pascal of stimulus (1/m). Sets
    /// the absolute velocity scale only; the default puts a 0 dB SPL CF tone
    /// near 0.3 µm/s at the 20 kHz place.
    pub drive_gain: f64,
    /// Starting pole is `pole_scale / Q_ERB(CF)`.
    pub pole_scale: f64,
    /// Saturating pole, floored at the starting pole.
    pub pole_sat: f64,
    /// Ceiling on the starting pole (apical sections have low Q_ERB).
    pub pole_max: f64,
    /// Damping of the passive (delay-free) oscillator used by oracles.
    pub passive_delta: f64,
    /// Stimulus level marking compression onset (dB SPL).
    pub i_knee1_db: f64,
    /// Place whose growth functions set the knees (Hz).
    pub knee_cf_hz: f64,
    /// Knees in dB re 1 m/s. When absent they are calibrated on demand.
    pub v_knee1_db: Option<f64>,
    pub v_knee2_db: Option<f64>,
    /// Filter update period in base steps.
    pub update_period: usize,
    pub rtol: f64,
    pub atol: f64,
    /// Most RK substeps allowed per base step (power of two).
    pub max_substeps: usize,
}

impl Default for TlConfig {
    fn default() -> Self {
        Self {
            l_bm: 1.2e-4,
            scala_area: 1.0e-7,
            coupling_length: 2.55e-4,
            drive_gain: 1.0e6,
            pole_scale: 0.9,
            pole_sat: 0.2,
            pole_max: 0.5,
            passive_delta: 0.3,
            i_knee1_db: 30.0,
            knee_cf_hz: 20e3,
            v_knee1_db: None,
            v_knee2_db: None,
            update_period: 6,
            rtol: 1e-6,
            atol: 1e-12,
            max_substeps: 64,
        }
    }
}

impl TlConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("l_bm", self.l_bm),
            ("scala_area", self.scala_area),
            ("coupling_length", self.coupling_length),
            ("drive_gain", self.drive_gain),
            ("pole_scale", self.pole_scale),
            ("passive_delta", self.passive_delta),
            ("knee_cf_hz", self.knee_cf_hz),
            ("rtol", self.rtol),
            ("atol", self.atol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("pole_sat", self.pole_sat), ("pole_max", self.pole_max)] {
            if !(v.is_finite() && v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.update_period == 0 {
            return Err(Error::Config("update_period must be at least 1".into()));
        }
        if !self.max_substeps.is_power_of_two() {
            return Err(Error::Config("max_substeps must be a power of two".into()));
        }
        match (self.v_knee1_db, self.v_knee2_db) {
            (None, None) => {}
            (Some(a), Some(b)) => {
                Knees::new(a, b).map_err(|e| Error::Config(e.to_string()))?;
            }
            _ => return Err(Error::Config("set both v_knee1_db and v_knee2_db or neither".into())),
        }
        Ok(())
    }

    pub fn knees(&self) -> Option<Knees> {
        match (self.v_knee1_db, self.v_knee2_db) {
            (Some(a), Some(b)) => Knees::new(a, b).ok(),
            _ => None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("TlConfig serializes to TOML")
    }
}

/// Constants of section `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionConstants {
    pub cf_hz: f64,
    pub omega: f64,
    /// Series (fluid) mass term, scaled as ω_0/ω_n.
    pub ms: f64,
    /// Partition mass term, scaled as ω_0/ω_n.
    pub mp: f64,
    pub poles: PolePair,
}

/// Section table plus the geometry shared by all sections.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub sections: Vec<SectionConstants>,
    pub dx: f64,
    pub l_bm: f64,
}

impl Geometry {
    pub fn new(p: &ModelParams, cfg: &TlConfig) -> Result<Self> {
        p.validate()?;
        cfg.validate()?;
        let pos = section_positions(p);
        let w0 = pos[0].omega();
        let ms0 = 2.0 * p.rho / cfg.scala_area;
        let mp0 = ms0 * cfg.coupling_length * cfg.coupling_length;
        let mut sections = Vec::with_capacity(pos.len());
        for s in &pos {
            if !(s.cf_hz > 0.0) {
                return Err(Error::Config(format!("section CF {} Hz is not positive", s.cf_hz)));
            }
            let start = (cfg.pole_scale / qerb(s.cf_hz, p)?).min(cfg.pole_max);
            let scale = w0 / s.omega();
            sections.push(SectionConstants {
                cf_hz: s.cf_hz,
                omega: s.omega(),
                ms: scale * ms0,
                mp: scale * mp0,
                poles: PolePair {
                    start,
                    sat: cfg.pole_sat.max(start),
                },
            });
        }
        Ok(Self {
            sections,
            dx: p.section_spacing(),
            l_bm: cfg.l_bm,
        })
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn cf_hz(&self) -> Vec<f64> {
        self.sections.iter().map(|s| s.cf_hz).collect()
    }

    /// Off-diagonal couplings of row `n`: `(A[n][n-1], A[n][n+1])`, without
    /// the per-section gain on the diagonal. Row 0 has a mirrored ghost node
    /// (pressure gradient set by the stapes) and row N−1 a pressure-release
    /// ghost node.
    pub fn coupling(&self, n: usize) -> (f64, f64, f64) {
        let s = &self.sections;
        let last = s.len() - 1;
        let k = 1.0 / (self.dx * self.dx * s[n].ms);
        let diag = 2.0 * s[n].mp * k;
        let lower = if n == 0 { 0.0 } else { -s[n - 1].mp * k };
        let upper = if n == last {
            0.0
        } else if n == 0 {
            -2.0 * s[1].mp * k
        } else {
            -s[n + 1].mp * k
        };
        (lower, diag, upper)
    }

    /// Factor turning stimulus pressure (Pa) into the row-0 right-hand side.
    pub fn drive_coefficient(&self, cfg: &TlConfig) -> f64 {
        2.0 * cfg.drive_gain / (self.dx * self.l_bm * self.sections[0].ms)
    }

    /// Largest delay (in base steps) the delayed-stiffness term can request.
    pub fn max_delay_steps(&self, fs: f64) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for s in &self.sections {
            let psi = max_psi(s.poles.start, s.poles.sat)?;
            worst = worst.max(psi / s.omega * fs);
        }
        Ok(worst)
    }

    /// Smallest delay (in base steps) over all sections and reachable poles.
    pub fn min_delay_steps(&self, fs: f64) -> Result<f64> {
        use crate::tl::nonlinear::Triplet;
        let mut best = f64::INFINITY;
        for s in &self.sections {
            // ψ(P) has its minimum near P = 1/sqrt(c); sample the interval
            for k in 0..=32 {
                let p = s.poles.start + (s.poles.sat - s.poles.start) * k as f64 / 32.0;
                best = best.min(Triplet::from_pole(p)?.psi / s.omega * fs);
            }
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masses_follow_the_taper_law() {
        let p = ModelParams { n: 50, ..Default::default() };
        let g = Geometry::new(&p, &TlConfig::default()).unwrap();
        let s0 = g.sections[0];
        for s in &g.sections {
            assert!((s.ms - s0.ms * s0.omega / s.omega).abs() <= 1e-12 * s.ms);
            assert!((s.mp - s0.mp * s0.omega / s.omega).abs() <= 1e-12 * s.mp);
        }
    }

    #[test]
    fn starting_pole_tracks_qerb() {
        let p = ModelParams::default();
        let cfg = TlConfig::default();
        let g = Geometry::new(&p, &cfg).unwrap();
        let s = g.sections[500];
        let want = cfg.pole_scale / qerb(s.cf_hz, &p).unwrap();
        assert!((s.poles.start - want).abs() < 1e-15);
        assert!(s.poles.sat >= s.poles.start);
    }

    #[test]
    fn toml_round_trip_and_rejection() {
        let cfg = TlConfig {
            v_knee1_db: Some(-90.0),
            v_knee2_db: Some(-70.0),
            ..Default::default()
        };
        let back = TlConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert!(TlConfig::from_toml_str("bogus = 1").is_err());
        assert!(TlConfig::from_toml_str("v_knee1_db = -90.0").is_err());
        assert!(TlConfig::from_toml_str("max_substeps = 48").is_err());
    }

    #[test]
    fn delays_exceed_two_samples_at_default_rate() {
        let p = ModelParams { n: 100, ..Default::default() };
        let g = Geometry::new(&p, &TlConfig::default()).unwrap();
        assert!(g.min_delay_steps(p.fs).unwrap() > 2.0);
        assert!(g.max_delay_steps(p.fs).unwrap() >= g.min_delay_steps(p.fs).unwrap());
    }
}
