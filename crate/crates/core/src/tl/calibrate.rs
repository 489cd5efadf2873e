//! Knee calibration from the two linear growth lines at one place.
//!
//! Both regimes are linear, so each growth line is `v_dB = I_dB + c` and
//! only its offset `c` is needed. Offsets are read from the steady-state
//! linear response of the discretized line (same matrices as the time
//! solver) for a CF tone, in dB re 1 m/s RMS at 0 dB SPL.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::PoleFilter;
use crate::harness::stimulus::P_REF;
use crate::lut::FilterLut;
use crate::params::omega_bm_of;
use crate::tl::nonlinear::{Knees, Triplet};
use crate::tl::oracle::velocity_response;
use crate::tl::solver::TlModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub cf_hz: f64,
    pub section: usize,
    /// Starting-pole line offset (dB).
    pub c_start: f64,
    /// Saturating-pole line offset (dB).
    pub c_sat: f64,
    pub a: f64,
    pub i_knee1_db: f64,
    pub i_knee2_db: f64,
    pub v_knee1_db: f64,
    pub v_knee2_db: f64,
}

impl Calibration {
    pub fn knees(&self) -> Knees {
        Knees {
            v1_db: self.v_knee1_db,
            v2_db: self.v_knee2_db,
        }
    }

    /// Piecewise-linear growth implied by the calibration (dB re 1 m/s RMS).
    pub fn ideal_response_db(&self, level_db: f64) -> f64 {
        if level_db <= self.i_knee1_db {
            level_db + self.c_start
        } else if level_db <= self.i_knee2_db {
            self.v_knee1_db + self.a * (level_db - self.i_knee1_db)
        } else {
            level_db + self.c_sat
        }
    }
}

/// Offset `c` of the linear growth line at `section` for a tone at `f_hz`.
pub fn line_offset(
    model: &TlModel,
    triplets: &[Triplet],
    filters: Option<&[PoleFilter]>,
    section: usize,
    f_hz: f64,
) -> Result<f64> {
    let v = velocity_response(model, triplets, filters, f_hz)?;
    let mag = v
        .get(section)
        .ok_or_else(|| Error::Calibration(format!("section {section} out of range")))?
        .norm();
    // unit-amplitude phasor; a tone at 0 dB SPL has RMS pressure P_REF
    Ok(20.0 * (mag * P_REF).log10())
}

fn filters_at(model: &TlModel, lut: &FilterLut, g: f64) -> Vec<PoleFilter> {
    model
        .geometry
        .sections
        .iter()
        .enumerate()
        .map(|(n, s)| lut.query(n, g, omega_bm_of(s.omega)))
        .collect()
}

/// Calibrates the knees at the place of `cf_hz` (configured in
/// `knee_cf_hz`). Without a table this is the V-1D procedure; with one, the
/// starting line uses G_max and the saturating line G_min.
pub fn calibrate_knees(model: &TlModel, lut: Option<&FilterLut>) -> Result<Calibration> {
    let cfg = &model.config;
    let p = &model.params;
    let cf = cfg.knee_cf_hz;
    let section = model
        .geometry
        .sections
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1.cf_hz - cf).abs().total_cmp(&(b.1.cf_hz - cf).abs()))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Calibration("model has no sections".into()))?;
    let start: Vec<Triplet> = model
        .geometry
        .sections
        .iter()
        .map(|s| Triplet::from_pole(s.poles.start))
        .collect::<Result<_>>()?;
    let sat: Vec<Triplet> = model
        .geometry
        .sections
        .iter()
        .map(|s| Triplet::from_pole(s.poles.sat))
        .collect::<Result<_>>()?;
    let (c_start, c_sat) = match lut {
        None => (
            line_offset(model, &start, None, section, cf)?,
            line_offset(model, &sat, None, section, cf)?,
        ),
        Some(lut) => {
            lut.check_params(p)?;
            (
                line_offset(model, &start, Some(&filters_at(model, lut, p.g_max)), section, cf)?,
                line_offset(model, &sat, Some(&filters_at(model, lut, p.g_min)), section, cf)?,
            )
        }
    };
    let knees = Knees::from_growth_lines(cfg.i_knee1_db, c_start, c_sat, p.a)?;
    Ok(Calibration {
        cf_hz: cf,
        section,
        c_start,
        c_sat,
        a: p.a,
        i_knee1_db: cfg.i_knee1_db,
        i_knee2_db: knees.v2_db - c_sat,
        v_knee1_db: knees.v1_db,
        v_knee2_db: knees.v2_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelParams;
    use crate::tl::config::TlConfig;

    fn model(i_knee1_db: f64, drive_gain: f64) -> TlModel {
        let p = ModelParams {
            n: 120,
            ..Default::default()
        };
        TlModel::new(
            p,
            TlConfig {
                i_knee1_db,
                drive_gain,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn knees_sit_on_the_lines() {
        let c = calibrate_knees(&model(30.0, 1.0e6), None).unwrap();
        assert!(c.c_start > c.c_sat);
        assert!((c.v_knee1_db - (30.0 + c.c_start)).abs() < 1e-12);
        // knee 2 lies on both the saturating line and the slope-a line
        assert!((c.v_knee2_db - (c.i_knee2_db + c.c_sat)).abs() < 1e-9);
        assert!((c.v_knee2_db - (c.v_knee1_db + c.a * (c.i_knee2_db - 30.0))).abs() < 1e-9);
        // ideal curve is continuous at both knees
        for k in [c.i_knee1_db, c.i_knee2_db] {
            let (l, r) = (c.ideal_response_db(k - 1e-9), c.ideal_response_db(k + 1e-9));
            assert!((l - r).abs() < 1e-6);
        }
    }

    #[test]
    fn stimulus_calibration_shift_moves_anchors_not_knees() {
        // halving the drive lowers every line by 6.02 dB; moving the onset
        // level up by the same amount keeps the knee velocities
        let shift = 20.0 * 2f64.log10();
        let a = calibrate_knees(&model(30.0, 1.0e6), None).unwrap();
        let b = calibrate_knees(&model(30.0 + shift, 0.5e6), None).unwrap();
        assert!((b.c_start - a.c_start + shift).abs() < 1e-9);
        assert!((b.i_knee2_db - a.i_knee2_db - shift).abs() < 1e-9);
        assert!((b.v_knee1_db - a.v_knee1_db).abs() < 1e-9);
        assert!((b.v_knee2_db - a.v_knee2_db).abs() < 1e-9);
    }

    #[test]
    fn equal_poles_cannot_be_calibrated() {
        let p = ModelParams {
            n: 120,
            ..Default::default()
        };
        let cfg = TlConfig {
            pole_sat: 0.01,
            pole_max: 0.05,
            ..Default::default()
        };
        // every pole is capped at 0.05, so both lines coincide
        let m = TlModel::new(p, cfg).unwrap();
        assert!(matches!(calibrate_knees(&m, None), Err(Error::Calibration(_))));
    }
}
