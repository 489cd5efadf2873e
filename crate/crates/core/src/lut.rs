//! Lookup table of correction filters over (section, G step).
//!
//! Binary layout, little-endian: magic `BLUT`, then `u32` version, N, n_g
//! and K, then `f64` G_min and G_max; the body holds N * n_g records of K
//! coefficients followed by `eps`; a CRC-32 of the body closes the file.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{poles_within_radius, PoleFilter, MAX_POLE_RADIUS};
use crate::params::{omega_bm_of, section_positions, ModelParams};
use crate::rbf::RbfNet;

pub const MAGIC: &[u8; 4] = b"BLUT";
pub const FORMAT_VERSION: u32 = 1;
pub const G_STEPS: usize = 30;
const HEADER_LEN: usize = 4 + 4 * 4 + 2 * 8;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterLut {
    pub n_sections: usize,
    pub n_g: usize,
    pub k: usize,
    pub g_min: f64,
    pub g_max: f64,
    /// `b[(n * n_g + g) * k + j]`
    pub b: Vec<f64>,
    /// `eps[n * n_g + g]`
    pub eps: Vec<f64>,
}

impl FilterLut {
    /// Table filled with pass-through filters.
    pub fn identity(n_sections: usize, n_g: usize, k: usize, g_min: f64, g_max: f64) -> Self {
        Self {
            n_sections,
            n_g,
            k,
            g_min,
            g_max,
            b: vec![0.0; n_sections * n_g * k],
            eps: vec![0.0; n_sections * n_g],
        }
    }

    /// G value of step `gi`.
    pub fn g_value(&self, gi: usize) -> f64 {
        if self.n_g == 1 {
            return self.g_min;
        }
        self.g_min + (self.g_max - self.g_min) * gi as f64 / (self.n_g - 1) as f64
    }

    /// Nearest G step after clamping; exact midpoints go to the lower step.
    pub fn g_index(&self, g: f64) -> usize {
        if self.n_g == 1 || !(self.g_max > self.g_min) {
            return 0;
        }
        let g = g.clamp(self.g_min, self.g_max);
        let pos = (g - self.g_min) / (self.g_max - self.g_min) * (self.n_g - 1) as f64;
        let lower = pos.floor();
        let idx = if pos - lower <= 0.5 + 1e-9 { lower } else { lower + 1.0 };
        (idx as usize).min(self.n_g - 1)
    }

    pub fn coefficients(&self, n: usize, gi: usize) -> (&[f64], f64) {
        let r = n * self.n_g + gi;
        (&self.b[r * self.k..(r + 1) * self.k], self.eps[r])
    }

    fn set(&mut self, n: usize, gi: usize, b: &[f64], eps: f64) {
        let r = n * self.n_g + gi;
        self.b[r * self.k..(r + 1) * self.k].copy_from_slice(b);
        self.eps[r] = eps;
    }

    /// Filter stored for section `n` nearest to `g`. `omega_bm` is the
    /// section's mapped resonance, recorded on the returned filter.
    pub fn query(&self, n: usize, g: f64, omega_bm: f64) -> PoleFilter {
        let gi = self.g_index(g);
        let (b, eps) = self.coefficients(n, gi);
        PoleFilter {
            b: b.to_vec(),
            eps,
            omega_bm,
            g: self.g_value(gi),
        }
    }

    /// Replaces every section's entries with its entry at step `gi`.
    pub fn pinned_to(&self, gi: usize) -> Self {
        let mut out = self.clone();
        for n in 0..self.n_sections {
            let (b, eps) = self.coefficients(n, gi);
            let b = b.to_vec();
            for g in 0..self.n_g {
                out.set(n, g, &b, eps);
            }
        }
        out
    }

    fn body_bytes(&self) -> Vec<u8> {
        let mut body = Vec::with_capacity(self.eps.len() * (self.k + 1) * 8);
        for r in 0..self.eps.len() {
            for x in &self.b[r * self.k..(r + 1) * self.k] {
                body.extend_from_slice(&x.to_le_bytes());
            }
            body.extend_from_slice(&self.eps[r].to_le_bytes());
        }
        body
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let body = self.body_bytes();
        let mut out = Vec::with_capacity(HEADER_LEN + body.len() + 4);
        out.extend_from_slice(MAGIC);
        for v in [FORMAT_VERSION, self.n_sections as u32, self.n_g as u32, self.k as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.g_min.to_le_bytes());
        out.extend_from_slice(&self.g_max.to_le_bytes());
        out.extend_from_slice(&body);
        out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN + 4 {
            return Err(Error::Format(format!("table file too short ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic, not a filter table".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported table version {version}")));
        }
        let (n, n_g, k) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
        let (g_min, g_max) = (f64_at(20), f64_at(28));
        let records = n
            .checked_mul(n_g)
            .ok_or_else(|| Error::Format("table dimensions overflow".into()))?;
        let body_len = records
            .checked_mul((k + 1) * 8)
            .ok_or_else(|| Error::Format("table dimensions overflow".into()))?;
        if bytes.len() != HEADER_LEN + body_len + 4 {
            return Err(Error::Format(format!(
                "table size {} does not match header ({n} x {n_g} x {k})",
                bytes.len()
            )));
        }
        let body = &bytes[HEADER_LEN..HEADER_LEN + body_len];
        let stored = u32_at(HEADER_LEN + body_len);
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut lut = Self::identity(n, n_g, k, g_min, g_max);
        for r in 0..records {
            let base = r * (k + 1) * 8;
            for j in 0..k {
                let o = base + j * 8;
                lut.b[r * k + j] = f64::from_le_bytes(body[o..o + 8].try_into().unwrap());
            }
            let o = base + k * 8;
            lut.eps[r] = f64::from_le_bytes(body[o..o + 8].try_into().unwrap());
        }
        Ok(lut)
    }

    /// CRC-32 of the body, as stored in the file trailer.
    pub fn checksum(&self) -> u32 {
        crc32fast::hash(&self.body_bytes())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Checks that the table was built for these parameters.
    pub fn check_params(&self, p: &ModelParams) -> Result<()> {
        if self.n_sections != p.n || self.k != p.k || self.g_min != p.g_min || self.g_max != p.g_max {
            return Err(Error::Config(format!(
                "table is {} x {} x {} over G [{}, {}], parameters need {} sections, K = {}, G [{}, {}]",
                self.n_sections, self.n_g, self.k, self.g_min, self.g_max, p.n, p.k, p.g_min, p.g_max
            )));
        }
        Ok(())
    }
}

/// Mapped `omega_BM` (rad/s) of every section.
pub fn section_omega_bm(p: &ModelParams) -> Vec<f64> {
    section_positions(p)
        .iter()
        .map(|s| omega_bm_of(2.0 * PI * s.cf_hz))
        .collect()
}

/// Evaluates the network at every (section, G step), enforces unit DC gain
/// and checks every entry against the pole-radius bound.
pub fn build_lut(net: &RbfNet, p: &ModelParams) -> Result<FilterLut> {
    if net.order() != p.k {
        return Err(Error::Config(format!("network order {} but K = {}", net.order(), p.k)));
    }
    let mut lut = FilterLut::identity(p.n, G_STEPS, p.k, p.g_min, p.g_max);
    let omegas = section_omega_bm(p);
    let entries: Vec<(usize, usize, PoleFilter)> = (0..p.n * G_STEPS)
        .into_par_iter()
        .map(|r| {
            let (n, gi) = (r / G_STEPS, r % G_STEPS);
            let g = lut.g_value(gi);
            let mut f = PoleFilter {
                b: net.forward(omegas[n], g),
                eps: 0.0,
                omega_bm: omegas[n],
                g,
            };
            f.enforce_dc();
            (n, gi, f)
        })
        .collect();
    let mut unstable = Vec::new();
    for (n, gi, f) in &entries {
        if !poles_within_radius(&f.b, MAX_POLE_RADIUS) {
            unstable.push((*n, *gi));
        }
        lut.set(*n, *gi, &f.b, f.eps);
    }
    if !unstable.is_empty() {
        return Err(Error::UnstableEntries(unstable));
    }
    Ok(lut)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LutReport {
    pub entries: usize,
    /// Largest `|beta_hat(0) - 1|`.
    pub max_dc_error: f64,
    /// Largest pole magnitude over all entries.
    pub max_pole_radius: f64,
    /// Entries failing the pole-radius bound.
    pub unstable: Vec<(usize, usize)>,
    /// Largest change of peak `|beta_hat|` between adjacent G steps, in dB.
    pub max_adjacent_peak_db: f64,
    pub checksum: u32,
}

impl LutReport {
    pub fn ok(&self) -> bool {
        self.unstable.is_empty() && self.max_dc_error < 1e-9 && self.max_pole_radius <= MAX_POLE_RADIUS
    }
}

fn peak_magnitude(b: &[f64], eps: f64) -> f64 {
    const POINTS: usize = 256;
    (0..POINTS)
        .map(|m| {
            let f = PoleFilter {
                b: b.to_vec(),
                eps,
                omega_bm: 0.0,
                g: 0.0,
            };
            f.beta_hat(PI * m as f64 / POINTS as f64, 1.0).norm()
        })
        .fold(0.0, f64::max)
}

/// DC gain, pole radius and G-continuity of every entry.
pub fn verify_lut(lut: &FilterLut) -> LutReport {
    let rows: Vec<(f64, f64, bool, f64)> = (0..lut.n_sections * lut.n_g)
        .into_par_iter()
        .map(|r| {
            let (n, gi) = (r / lut.n_g, r % lut.n_g);
            let (b, eps) = lut.coefficients(n, gi);
            let f = PoleFilter {
                b: b.to_vec(),
                eps,
                omega_bm: 0.0,
                g: 0.0,
            };
            let dc = (f.beta_hat(0.0, 1.0) - 1.0).norm();
            (dc, f.pole_radius(), poles_within_radius(b, MAX_POLE_RADIUS), peak_magnitude(b, eps))
        })
        .collect();
    let mut report = LutReport {
        entries: rows.len(),
        max_dc_error: 0.0,
        max_pole_radius: 0.0,
        unstable: Vec::new(),
        max_adjacent_peak_db: 0.0,
        checksum: lut.checksum(),
    };
    for (r, (dc, radius, stable, _)) in rows.iter().enumerate() {
        report.max_dc_error = report.max_dc_error.max(*dc);
        report.max_pole_radius = report.max_pole_radius.max(*radius);
        if !stable {
            report.unstable.push((r / lut.n_g, r % lut.n_g));
        }
    }
    for n in 0..lut.n_sections {
        for gi in 1..lut.n_g {
            let a = rows[n * lut.n_g + gi - 1].3;
            let b = rows[n * lut.n_g + gi].3;
            report.max_adjacent_peak_db = report.max_adjacent_peak_db.max((20.0 * (b / a).log10()).abs());
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_lut() -> FilterLut {
        let mut lut = FilterLut::identity(3, G_STEPS, 4, 0.0, 1.3);
        for n in 0..3 {
            for gi in 0..G_STEPS {
                let b = [0.1 * n as f64, 0.01 * gi as f64, -0.05, 0.02];
                lut.set(n, gi, &b, -b.iter().sum::<f64>());
            }
        }
        lut
    }

    #[test]
    fn g_index_endpoints_and_ties() {
        let lut = sample_lut();
        assert_eq!(lut.g_index(0.0), 0);
        assert_eq!(lut.g_index(1.3), 29);
        assert_eq!(lut.g_index(-1.0), 0);
        assert_eq!(lut.g_index(5.0), 29);
        for gi in [0, 7, 13, 28] {
            let mid = 0.5 * (lut.g_value(gi) + lut.g_value(gi + 1));
            assert_eq!(lut.g_index(mid), gi);
            assert_eq!(lut.g_index(mid + 1e-6), gi + 1);
            assert_eq!(lut.g_index(mid - 1e-6), gi);
        }
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let lut = sample_lut();
        let bytes = lut.to_bytes();
        assert_eq!(&bytes[..4], b"BLUT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
        assert_eq!(bytes.len(), HEADER_LEN + 3 * G_STEPS * 5 * 8 + 4);
        let back = FilterLut::from_bytes(&bytes).unwrap();
        assert_eq!(back, lut);
        assert!(back.b.iter().zip(&lut.b).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn corruption_is_detected() {
        let lut = sample_lut();
        let mut bytes = lut.to_bytes();
        bytes[HEADER_LEN + 17] ^= 0x40;
        assert!(matches!(FilterLut::from_bytes(&bytes), Err(Error::Checksum { .. })));
        let mut bytes = lut.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(FilterLut::from_bytes(&bytes), Err(Error::Format(_))));
        let bytes = lut.to_bytes();
        assert!(matches!(FilterLut::from_bytes(&bytes[..bytes.len() - 9]), Err(Error::Format(_))));
    }

    #[test]
    fn query_returns_nearest_entry() {
        let lut = sample_lut();
        let f = lut.query(2, 1.3, 123.0);
        assert_eq!(f.b, vec![0.2, 0.29, -0.05, 0.02]);
        assert_eq!(f.g, 1.3);
        assert_eq!(f.omega_bm, 123.0);
    }

    #[test]
    fn verify_flags_unstable_entries() {
        let mut lut = sample_lut();
        let report = verify_lut(&lut);
        assert!(report.ok(), "{report:?}");
        lut.set(1, 4, &[1.2, 0.0, 0.0, 0.0], -1.2);
        let report = verify_lut(&lut);
        assert_eq!(report.unstable, vec![(1, 4)]);
        assert!(!report.ok());
    }

    #[test]
    fn pinned_table_repeats_one_column() {
        let lut = sample_lut().pinned_to(5);
        for gi in 0..G_STEPS {
            assert_eq!(lut.coefficients(1, gi), sample_lut().coefficients(1, 5));
        }
    }
}
