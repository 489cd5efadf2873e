//! First-order low-pass envelope of v² per section.

use crate::error::{Error, Result};

/// Bilinear-transform first-order Butterworth low-pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeCoeffs {
    pub c0: f64,
    pub c1: f64,
    pub d1: f64,
}

impl EnvelopeCoeffs {
    pub fn butterworth(fc: f64, fs: f64) -> Result<Self> {
        if !(fc > 0.0 && fc < 0.5 * fs) {
            return Err(Error::Config(format!(
                "envelope cut-off {fc} Hz must lie in (0, fs/2) with fs = {fs} Hz"
            )));
        }
        let k = (std::f64::consts::PI * fc / fs).tan();
        let c = k / (1.0 + k);
        Ok(Self {
            c0: c,
            c1: c,
            d1: (k - 1.0) / (k + 1.0),
        })
    }

    pub fn dc_gain(&self) -> f64 {
        (self.c0 + self.c1) / (1.0 + self.d1)
    }
}

/// Running envelopes ⟨I_n⟩ with their one-sample input memory.
#[derive(Debug, Clone)]
pub struct Envelope {
    coeffs: Vec<EnvelopeCoeffs>,
    level: Vec<f64>,
    prev_input: Vec<f64>,
}

impl Envelope {
    /// One filter per section, cut-off at half the section CF.
    pub fn for_sections(cf_hz: &[f64], fs: f64) -> Result<Self> {
        let coeffs = cf_hz
            .iter()
            .map(|&f| EnvelopeCoeffs::butterworth(0.5 * f, fs))
            .collect::<Result<Vec<_>>>()?;
        let n = coeffs.len();
        Ok(Self {
            coeffs,
            level: vec![0.0; n],
            prev_input: vec![0.0; n],
        })
    }

    pub fn coeffs(&self) -> &[EnvelopeCoeffs] {
        &self.coeffs
    }

    pub fn levels(&self) -> &[f64] {
        &self.level
    }

    /// Advance one base step with the current velocities.
    pub fn update(&mut self, v: &[f64]) {
        for (n, &vn) in v.iter().enumerate() {
            let c = self.coeffs[n];
            let x = vn * vn;
            self.level[n] = c.c0 * x + c.c1 * self.prev_input[n] - c.d1 * self.level[n];
            self.prev_input[n] = x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_prewarped_analog_prototype() {
        // H(s) = wc/(s + wc), s = 2fs(1 − z⁻¹)/(1 + z⁻¹), wc prewarped
        let (fc, fs) = (10e3, 200e3);
        let wc = 2.0 * fs * (std::f64::consts::PI * fc / fs).tan();
        let b0 = wc / (wc + 2.0 * fs);
        let a1 = (wc - 2.0 * fs) / (wc + 2.0 * fs);
        let c = EnvelopeCoeffs::butterworth(fc, fs).unwrap();
        assert!((c.c0 - b0).abs() < 1e-12);
        assert!((c.c1 - b0).abs() < 1e-12);
        assert!((c.d1 - a1).abs() < 1e-12);
    }

    #[test]
    fn unit_dc_gain_and_convergence() {
        let mut env = Envelope::for_sections(&[4e3, 20e3], 200e3).unwrap();
        for c in env.coeffs() {
            assert!((c.dc_gain() - 1.0).abs() < 1e-14);
        }
        let v = [3.0f64.sqrt(), 3.0f64.sqrt()];
        for _ in 0..5000 {
            env.update(&v);
        }
        for &l in env.levels() {
            assert!((l - 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn silence_decays_geometrically() {
        let mut env = Envelope::for_sections(&[20e3], 200e3).unwrap();
        env.update(&[1.0]);
        env.update(&[0.0]);
        let d1 = env.coeffs()[0].d1;
        let mut prev = env.levels()[0];
        for _ in 0..10 {
            env.update(&[0.0]);
            let cur = env.levels()[0];
            assert!((cur - (-d1) * prev).abs() < 1e-15);
            prev = cur;
        }
    }

    #[test]
    fn cutoff_above_nyquist_rejected() {
        assert!(EnvelopeCoeffs::butterworth(100e3, 200e3).is_err());
        assert!(Envelope::for_sections(&[250e3], 200e3).is_err());
    }
}
