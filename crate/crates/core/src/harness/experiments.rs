//! Tone growth, chirp and click experiments on a calibrated model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::analysis::{
    crossing_shift, magnitude_spectrum, sinusoid_fit, sliding_gaussian_response, to_db,
    zero_crossings, FrequencyResponse, GrowthCurve,
};
use crate::harness::stimulus::StimulusSpec;
use crate::lut::FilterLut;
use crate::tl::{calibrate_knees, Calibration, Filters, Mechanics, RunOptions, TlModel, Traces};

/// Which model variant to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Instantaneous pole nonlinearity only.
    V1d,
    /// Pole nonlinearity plus the G-dependent pressure focusing filters.
    Vstar,
}

/// Model, variant and calibration bundled for running stimuli.
#[derive(Clone)]
pub struct Runner<'a> {
    pub model: &'a TlModel,
    pub variant: Variant,
    pub lut: Option<&'a FilterLut>,
    pub calibration: Calibration,
    pub update_period: usize,
}

impl<'a> Runner<'a> {
    pub fn new(model: &'a TlModel, variant: Variant, lut: Option<&'a FilterLut>) -> Result<Self> {
        let lut = match (variant, lut) {
            (Variant::V1d, _) => None,
            (Variant::Vstar, Some(l)) => Some(l),
            (Variant::Vstar, None) => {
                return Err(Error::Config("the V* model needs a filter table".into()))
            }
        };
        let calibration = calibrate_knees(model, lut)?;
        Ok(Self {
            model,
            variant,
            lut,
            calibration,
            update_period: model.config.update_period,
        })
    }

    pub fn with_update_period(mut self, period: usize) -> Self {
        self.update_period = period;
        self
    }

    pub fn options(&self, record: Vec<usize>) -> RunOptions<'a> {
        let filters = match self.lut {
            Some(l) => Filters::Dynamic(l),
            None => Filters::None,
        };
        RunOptions::new(Mechanics::Compressive, filters, record)
            .with_knees(self.calibration.knees())
            .with_update_period(self.update_period)
    }

    pub fn run(&self, stimulus: &StimulusSpec, record: Vec<usize>) -> Result<Traces> {
        if stimulus.fs != self.model.params.fs {
            return Err(Error::Config(format!(
                "stimulus rate {} Hz differs from the model's {} Hz",
                stimulus.fs, self.model.params.fs
            )));
        }
        self.model.simulate(&stimulus.generate()?, &self.options(record))
    }

    /// Section whose CF is nearest the calibration place.
    pub fn cf_section(&self) -> usize {
        self.calibration.section
    }
}

/// Steady-state RMS (dB re 1 m/s) of a tone response: sinusoid fit over
/// the second half of the plateau.
pub fn tone_level_db(v: &[f64], spec: &StimulusSpec) -> Result<f64> {
    let f = match spec.kind {
        crate::harness::stimulus::StimulusKind::Tone { freq_hz } => freq_hz,
        _ => return Err(Error::Analysis("tone level needs a tone stimulus".into())),
    };
    let n = v.len().min(spec.n_samples());
    let ramp = (spec.ramp_s * spec.fs).round() as usize;
    let (lo, hi) = (n / 2, n.saturating_sub(ramp));
    if hi <= lo + 2 {
        return Err(Error::Analysis("tone too short for a steady-state window".into()));
    }
    let (amp, _) = sinusoid_fit(&v[lo..hi], f, spec.fs);
    Ok(to_db(amp / 2f64.sqrt()))
}

/// Tone growth function at the calibration place.
pub fn growth_function(runner: &Runner, levels_db: &[f64], duration_s: f64) -> Result<GrowthCurve> {
    let p = &runner.model.params;
    let cf = runner.calibration.cf_hz;
    let n = runner.cf_section();
    let response_db = levels_db
        .par_iter()
        .map(|&l| {
            let spec = StimulusSpec::tone(cf, l, duration_s, p.fs);
            let tr = runner.run(&spec, vec![n])?;
            tone_level_db(&tr.v[0], &spec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GrowthCurve {
        levels_db: levels_db.to_vec(),
        response_db,
    })
}

/// Evenly spaced levels from `lo` to `hi` inclusive.
pub fn level_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

/// Click response at the calibration place, normalized to the click
/// pressure (m/s per Pa).
pub fn click_response(runner: &Runner, level_db: f64, duration_s: f64) -> Result<Vec<f64>> {
    Ok(click_run(runner, level_db, duration_s)?.0)
}

/// Normalized click response and the smallest G reached at the same place.
fn click_run(runner: &Runner, level_db: f64, duration_s: f64) -> Result<(Vec<f64>, f64)> {
    let spec = StimulusSpec::click(level_db, duration_s, runner.model.params.fs);
    let tr = runner.run(&spec, vec![runner.cf_section()])?;
    let p = spec.pressure();
    let g_min = tr.g[0].iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((tr.v[0].iter().map(|v| v / p).collect(), g_min))
}

/// Click spectrum in dB (re 1 m/s/Pa) on the FFT grid.
pub fn click_spectrum_db(v: &[f64], fs: f64) -> (Vec<f64>, Vec<f64>) {
    let (f, m) = magnitude_spectrum(v, fs);
    (f, m.into_iter().map(to_db).collect())
}

/// One update period of the update-rate study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRateRow {
    pub update_period: usize,
    pub update_interval_ms: f64,
    pub level_db: f64,
    /// Largest |ΔdB| against the baseline over the baseline's −10 dB band.
    pub max_dev_db: f64,
    /// Smallest G the baseline run reached at the calibration place.
    pub baseline_min_g: f64,
}

/// Click spectra for several update periods compared with the first one
/// (the baseline), at each level. The comparison band is where the baseline
/// spectrum lies within 10 dB of its peak.
pub fn update_rate_study(
    model: &TlModel,
    lut: &FilterLut,
    periods: &[usize],
    levels_db: &[f64],
    duration_s: f64,
) -> Result<Vec<UpdateRateRow>> {
    let (_, rest) = periods
        .split_first()
        .ok_or_else(|| Error::Config("update-rate study needs a baseline period".into()))?;
    let fs = model.params.fs;
    let runner = Runner::new(model, Variant::Vstar, Some(lut))?;
    let jobs: Vec<(f64, usize)> = levels_db
        .iter()
        .flat_map(|&l| periods.iter().map(move |&p| (l, p)))
        .collect();
    let spectra = jobs
        .par_iter()
        .map(|&(l, period)| {
            let r = Runner {
                update_period: period,
                ..runner.clone()
            };
            let (v, g_min) = click_run(&r, l, duration_s)?;
            Ok((click_spectrum_db(&v, fs).1, g_min))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (li, &l) in levels_db.iter().enumerate() {
        let (base_db, base_g) = &spectra[li * periods.len()];
        let peak = base_db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ip = base_db.iter().position(|&d| d == peak).unwrap_or(0);
        // contiguous band around the peak
        let mut lo = ip;
        while lo > 0 && base_db[lo - 1] >= peak - 10.0 {
            lo -= 1;
        }
        let mut hi = ip;
        while hi + 1 < base_db.len() && base_db[hi + 1] >= peak - 10.0 {
            hi += 1;
        }
        for (pi, &period) in rest.iter().enumerate() {
            let other = &spectra[li * periods.len() + pi + 1].0;
            let dev = (lo..=hi)
                .map(|k| (other[k] - base_db[k]).abs())
                .fold(0.0f64, f64::max);
            rows.push(UpdateRateRow {
                update_period: period,
                update_interval_ms: period as f64 / fs * 1e3,
                level_db: l,
                max_dev_db: dev,
                baseline_min_g: *base_g,
            });
        }
    }
    Ok(rows)
}

/// Largest shift of the first `count` click zero crossings across levels,
/// relative to the lowest level, as a fraction of the CF period.
pub fn zero_crossing_shift(runner: &Runner, levels_db: &[f64], count: usize, duration_s: f64) -> Result<f64> {
    let fs = runner.model.params.fs;
    let cf = runner.model.geometry.sections[runner.cf_section()].cf_hz;
    let sets = levels_db
        .par_iter()
        .map(|&l| Ok(zero_crossings(&click_response(runner, l, duration_s)?, fs, ZC_ONSET, count)))
        .collect::<Result<Vec<_>>>()?;
    let reference = &sets[0];
    if reference.len() < count {
        return Err(Error::Analysis(format!("only {} zero crossings found", reference.len())));
    }
    let mut worst: f64 = 0.0;
    for s in &sets[1..] {
        let d = crossing_shift(reference, s)
            .ok_or_else(|| Error::Analysis("no matching zero crossing".into()))?;
        worst = worst.max(d);
    }
    Ok(worst * cf)
}

/// Crossings are counted once the response reaches this fraction of its peak.
pub const ZC_ONSET: f64 = 0.05;

/// Chirp frequency response at the calibration place.
pub fn chirp_response(
    runner: &Runner,
    spec: &StimulusSpec,
    sigma_s: f64,
    freqs_hz: &[f64],
) -> Result<FrequencyResponse> {
    let tr = runner.run(spec, vec![runner.cf_section()])?;
    sliding_gaussian_response(&tr.v[0], spec.fs, spec, sigma_s, freqs_hz)
}

/// Mid-compressive level of a study: the level whose baseline run came
/// closest to the middle of [G_min, G_max].
pub fn mid_compressive_level(rows: &[UpdateRateRow], g_min: f64, g_max: f64) -> Option<f64> {
    let mid = 0.5 * (g_min + g_max);
    rows.iter()
        .min_by(|a, b| (a.baseline_min_g - mid).abs().total_cmp(&(b.baseline_min_g - mid).abs()))
        .map(|r| r.level_db)
}
