//! Model constants and the place/frequency mappings shared by every stage.
//!
//! All internal angular quantities are in rad/s; Hz only appears at the
//! parameter-file and CLI boundary.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical, geometric and regression constants of the gerbil model.
///
/// Field names in the parameter file match the serde names below exactly;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Scala height (m).
    #[serde(rename = "H")]
    pub h: f64,
    /// BM areal mass density (kg/m^2).
    pub sigma_bm: f64,
    /// Fluid density (kg/m^3).
    pub rho: f64,
    /// Dynamic viscosity (Pa s).
    pub mu: f64,
    /// Empirical viscous factor.
    pub b_visc: f64,
    #[serde(rename = "G_min")]
    pub g_min: f64,
    #[serde(rename = "G_max")]
    pub g_max: f64,
    #[serde(rename = "G_ref")]
    pub g_ref: f64,
    /// Sampling frequency (Hz).
    pub fs: f64,
    /// Number of transmission-line sections.
    #[serde(rename = "N")]
    pub n: usize,
    /// Cochlear length (m).
    #[serde(rename = "L")]
    pub l: f64,
    /// Greenwood constants: A1 (Hz), A2 (1/m), B (Hz).
    #[serde(rename = "A1")]
    pub a1: f64,
    #[serde(rename = "A2")]
    pub a2: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub qerb_base: f64,
    pub qerb_exp: f64,
    /// Compression slope (dB/dB).
    pub a: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// All-pole filter order.
    #[serde(rename = "K")]
    pub k: usize,
    /// Half-size of the regression frequency grid.
    pub m2: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            h: 320e-6,
            sigma_bm: 0.06,
            rho: 1.0e3,
            mu: 7.0e-3,
            b_visc: 2.5,
            g_min: 0.0,
            g_max: 1.3,
            g_ref: 0.7,
            fs: 200e3,
            n: 1000,
            l: 12.1e-3,
            a1: 50216.0,
            a2: 181.034,
            b: 140.0,
            qerb_base: 1.45,
            qerb_exp: 0.58,
            a: 0.45,
            lambda1: 1.0,
            lambda2: 0.3,
            k: 32,
            m2: 512,
        }
    }
}

/// Reference frequency of the Q_ERB power law (Hz).
const QERB_REF_HZ: f64 = 1000.0;

/// Intercept of the BF-alignment map, in Hz.
pub const OMEGA_BM_INTERCEPT_HZ: f64 = 1500.0;

/// Slope of the BF-alignment map.
pub const OMEGA_BM_SLOPE: f64 = 1.2;

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("H", self.h),
            ("sigma_bm", self.sigma_bm),
            ("rho", self.rho),
            ("mu", self.mu),
            ("fs", self.fs),
            ("L", self.l),
            ("A1", self.a1),
            ("A2", self.a2),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        if self.n < 2 {
            return Err(Error::Config(format!("N must be at least 2, got {}", self.n)));
        }
        if !(self.g_min <= self.g_ref && self.g_ref <= self.g_max) {
            return Err(Error::Config(format!(
                "need G_min <= G_ref <= G_max, got {} / {} / {}",
                self.g_min, self.g_ref, self.g_max
            )));
        }
        if self.k == 0 || self.m2 < 2 {
            return Err(Error::Config("K and m2 must be positive".into()));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config("regression penalties must be non-negative".into()));
        }
        if self.a <= 0.0 || self.a >= 1.0 {
            return Err(Error::Config(format!("compression slope must lie in (0, 1), got {}", self.a)));
        }
        if self.a1 * 10f64.powf(-self.a2 * self.l) - self.b <= 0.0 {
            return Err(Error::Config("Greenwood map reaches non-positive frequency inside the cochlea".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let p: ModelParams = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("ModelParams serializes to TOML")
    }

    /// Base sampling interval (s).
    pub fn dt(&self) -> f64 {
        1.0 / self.fs
    }

    pub fn section_spacing(&self) -> f64 {
        self.l / (self.n - 1) as f64
    }
}

/// Greenwood place-to-frequency map, `f(x) = A1 10^(-A2 x) - B` in Hz.
pub fn greenwood_cf(x: f64, p: &ModelParams) -> Result<f64> {
    let slack = 1e-12 * p.l;
    if !(x >= -slack && x <= p.l + slack) {
        return Err(Error::Domain(format!("position {x} m outside [0, {}] m", p.l)));
    }
    Ok(p.a1 * 10f64.powf(-p.a2 * x) - p.b)
}

/// Position along the partition and characteristic frequency of one section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub x: f64,
    pub cf_hz: f64,
}

impl Section {
    pub fn omega(&self) -> f64 {
        2.0 * PI * self.cf_hz
    }
}

/// Uniform grid `x_n = n L / (N - 1)`, base (n = 0) to apex (n = N - 1).
pub fn section_positions(p: &ModelParams) -> Vec<Section> {
    let dx = p.section_spacing();
    (0..p.n)
        .map(|i| {
            // the last section sits at L exactly
            let x = if i + 1 == p.n { p.l } else { i as f64 * dx };
            let cf_hz = p.a1 * 10f64.powf(-p.a2 * x) - p.b;
            Section { x, cf_hz }
        })
        .collect()
}

/// Index of the section whose CF is closest to `cf_hz`.
pub fn section_for_cf(sections: &[Section], cf_hz: f64) -> usize {
    sections
        .iter()
        .enumerate()
        .min_by(|a, b| {
            (a.1.cf_hz - cf_hz)
                .abs()
                .total_cmp(&(b.1.cf_hz - cf_hz).abs())
        })
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Q_ERB power law, `qerb_base (f / 1 kHz)^qerb_exp`.
pub fn qerb(f_hz: f64, p: &ModelParams) -> Result<f64> {
    if !(f_hz > 0.0) {
        return Err(Error::Domain(format!("Q_ERB needs a positive frequency, got {f_hz}")));
    }
    Ok(p.qerb_base * (f_hz / QERB_REF_HZ).powf(p.qerb_exp))
}

/// Maps a TL characteristic pulsation to the S-2D BM pulsation:
/// `omega_bm = 1.2 omega_n + 2 pi 1500`.
pub fn omega_bm_of(omega_n: f64) -> f64 {
    OMEGA_BM_SLOPE * omega_n + 2.0 * PI * OMEGA_BM_INTERCEPT_HZ
}

/// Inverse of [`omega_bm_of`]: the TL pulsation whose best frequency the
/// S-2D model assigns to `omega_bm`.
pub fn omega_n_of(omega_bm: f64) -> f64 {
    (omega_bm - 2.0 * PI * OMEGA_BM_INTERCEPT_HZ) / OMEGA_BM_SLOPE
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn defaults_match_table() {
        let p = ModelParams::default();
        assert_eq!(p.h, 320e-6);
        assert_eq!(p.sigma_bm, 0.06);
        assert_eq!(p.rho, 1.0e3);
        assert_eq!(p.mu, 7.0e-3);
        assert_eq!(p.b_visc, 2.5);
        assert_eq!((p.g_min, p.g_max, p.g_ref), (0.0, 1.3, 0.7));
        assert_eq!(p.fs, 200e3);
        assert_eq!(p.n, 1000);
        assert_eq!(p.l, 12.1e-3);
        assert_eq!((p.a1, p.a2, p.b), (50216.0, 181.034, 140.0));
        assert_eq!((p.qerb_base, p.qerb_exp), (1.45, 0.58));
        assert_eq!(p.a, 0.45);
        assert_eq!((p.lambda1, p.lambda2), (1.0, 0.3));
        assert_eq!((p.k, p.m2), (32, 512));
        p.validate().unwrap();
    }

    #[test]
    fn greenwood_endpoints() {
        let p = ModelParams::default();
        assert_relative_eq!(greenwood_cf(0.0, &p).unwrap(), 50076.0, max_relative = 1e-14);
        // 50216 * 10^(-181.034 * 0.0121) - 140, evaluated with mpmath at 30 digits
        assert_relative_eq!(greenwood_cf(p.l, &p).unwrap(), 183.840_167_640_613_65, max_relative = 1e-12);
        assert!(greenwood_cf(-1e-3, &p).is_err());
        assert!(greenwood_cf(p.l * 1.01, &p).is_err());
    }

    #[test]
    fn section_grid() {
        let p = ModelParams::default();
        let s = section_positions(&p);
        assert_eq!(s.len(), 1000);
        assert_eq!(s[0].x, 0.0);
        assert_eq!(s[0].cf_hz, 50076.0);
        assert_eq!(s[999].x, p.l);
        assert!(s.windows(2).all(|w| w[0].cf_hz > w[1].cf_hz));
    }

    #[test]
    fn qerb_values() {
        let p = ModelParams::default();
        assert_relative_eq!(qerb(1000.0, &p).unwrap(), 1.45);
        // 1.45 * 4^0.58
        assert_relative_eq!(qerb(4000.0, &p).unwrap(), 3.240_132_700_409_438, max_relative = 1e-12);
        assert!(qerb(0.0, &p).is_err());
        assert!(qerb(500.0, &p).unwrap() < qerb(600.0, &p).unwrap());
    }

    #[test]
    fn omega_bm_affine_map() {
        let w = |f: f64| 2.0 * PI * f;
        assert_relative_eq!(omega_bm_of(w(4000.0)), w(6300.0), max_relative = 1e-14);
        assert_relative_eq!(omega_bm_of(w(20000.0)), w(25500.0), max_relative = 1e-14);
        assert_relative_eq!(omega_bm_of(0.0), w(1500.0));
        assert_relative_eq!(omega_n_of(omega_bm_of(w(7000.0))), w(7000.0), max_relative = 1e-14);
    }

    #[test]
    fn param_file_rejects_unknown_keys() {
        let p = ModelParams::default();
        let text = p.to_toml_string();
        assert_eq!(ModelParams::from_toml_str(&text).unwrap(), p);
        let bad = format!("{text}\nextra_key = 1.0\n");
        assert!(ModelParams::from_toml_str(&bad).is_err());
        let renamed = text.replace("sigma_bm", "sigma");
        assert!(ModelParams::from_toml_str(&renamed).is_err());
    }

    #[test]
    fn param_file_invariants_checked() {
        let mut p = ModelParams::default();
        p.g_ref = 2.0;
        assert!(ModelParams::from_toml_str(&p.to_toml_string()).is_err());
        let mut p = ModelParams::default();
        p.n = 1;
        assert!(p.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn greenwood_strictly_decreasing(x1 in 0.0..12.1e-3f64, dx in 1e-9..1e-3f64) {
            let p = ModelParams::default();
            let x2 = (x1 + dx).min(p.l);
            proptest::prop_assume!(x2 > x1);
            proptest::prop_assert!(greenwood_cf(x1, &p).unwrap() > greenwood_cf(x2, &p).unwrap());
        }

        #[test]
        fn omega_bm_is_affine(w1 in 0.0..4e5f64, w2 in 0.0..4e5f64) {
            let lhs = omega_bm_of(w1) + omega_bm_of(w2);
            let rhs = omega_bm_of(w1 + w2) + 2.0 * PI * OMEGA_BM_INTERCEPT_HZ;
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs());
        }
    }
}
