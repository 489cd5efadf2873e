//! Trace files and run manifests.
//!
//! Binary traces are little-endian: magic `CTRC`, version, row count,
//! sample count, sampling rate, decimation, section indices, then the v, y
//! and G rows in that order, closed by a CRC-32 of everything before it.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::stimulus::StimulusSpec;
use crate::params::ModelParams;
use crate::tl::{TlConfig, Traces};

const MAGIC: &[u8; 4] = b"CTRC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Csv,
    Bin,
}

impl TraceFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TraceFormat::Csv => "csv",
            TraceFormat::Bin => "bin",
        }
    }
}

pub fn traces_to_bytes(tr: &Traces) -> Vec<u8> {
    let rows = tr.sections.len();
    let samples = tr.len();
    let mut out = Vec::with_capacity(40 + rows * 4 + 3 * rows * samples * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(samples as u64).to_le_bytes());
    out.extend_from_slice(&tr.fs.to_le_bytes());
    out.extend_from_slice(&(tr.decimation as u32).to_le_bytes());
    for &s in &tr.sections {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    for group in [&tr.v, &tr.y, &tr.g] {
        for row in group {
            for x in row {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("trace file truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn traces_from_bytes(bytes: &[u8]) -> Result<Traces> {
    if bytes.len() < 4 + 4 {
        return Err(Error::Format("trace file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, not a trace file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported trace version {version}")));
    }
    let rows = r.u32()? as usize;
    let samples = usize::try_from(r.u64()?).map_err(|_| Error::Format("sample count overflow".into()))?;
    let fs = r.f64()?;
    let decimation = r.u32()? as usize;
    let expected = rows
        .checked_mul(samples)
        .and_then(|x| x.checked_mul(24))
        .and_then(|x| x.checked_add(rows * 4 + r.pos))
        .ok_or_else(|| Error::Format("trace dimensions overflow".into()))?;
    if expected != body.len() {
        return Err(Error::Format(format!(
            "trace body is {} bytes, header implies {expected}",
            body.len()
        )));
    }
    let sections = (0..rows).map(|_| r.u32().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
    let mut groups: Vec<Vec<Vec<f64>>> = Vec::with_capacity(3);
    for _ in 0..3 {
        let mut g = Vec::with_capacity(rows);
        for _ in 0..rows {
            g.push((0..samples).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
        }
        groups.push(g);
    }
    let g = groups.pop().expect("three groups");
    let y = groups.pop().expect("three groups");
    let v = groups.pop().expect("three groups");
    Ok(Traces {
        fs,
        decimation,
        sections,
        v,
        y,
        g,
        max_substeps: 0,
    })
}

/// CSV with a time column and v, y, G columns per recorded section.
/// Values use the shortest representation that reads back exactly.
pub fn write_traces_csv<W: Write>(mut out: W, tr: &Traces) -> std::io::Result<()> {
    let mut header = vec!["t".to_string()];
    for prefix in ["v", "y", "g"] {
        header.extend(tr.sections.iter().map(|s| format!("{prefix}_{s}")));
    }
    writeln!(out, "{}", header.join(","))?;
    for i in 0..tr.len() {
        let mut line = format!("{}", i as f64 / tr.fs);
        for group in [&tr.v, &tr.y, &tr.g] {
            for row in group {
                line.push(',');
                line.push_str(&row[i].to_string());
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_traces_csv(text: &str, decimation: usize) -> Result<Traces> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format("empty trace file".into()))?
        .split(',')
        .collect();
    if header.first() != Some(&"t") || !(header.len() - 1).is_multiple_of(3) {
        return Err(Error::Format("trace header must be t followed by v, y and g columns".into()));
    }
    let rows = (header.len() - 1) / 3;
    let sections = header[1..=rows]
        .iter()
        .map(|h| {
            h.strip_prefix("v_")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad column name {h}")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for (ln, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(Error::Format(format!("line {} has {} fields", ln + 2, fields.len())));
        }
        for (c, f) in fields.iter().enumerate() {
            cols[c].push(
                f.parse()
                    .map_err(|_| Error::Format(format!("line {}: bad number {f}", ln + 2)))?,
            );
        }
    }
    let fs = if cols[0].len() > 1 {
        1.0 / (cols[0][1] - cols[0][0])
    } else {
        return Err(Error::Format("trace needs at least two samples".into()));
    };
    let mut it = cols.into_iter().skip(1);
    let mut take = || (0..rows).map(|_| it.next().expect("counted")).collect::<Vec<_>>();
    let (v, y, g) = (take(), take(), take());
    Ok(Traces {
        fs,
        decimation,
        sections,
        v,
        y,
        g,
        max_substeps: 0,
    })
}

/// Writes `tr` to `dir/name.{csv,bin}` and returns the path.
pub fn write_traces(dir: &Path, name: &str, tr: &Traces, format: TraceFormat) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("{name}.{}", format.extension()));
    let bytes = match format {
        TraceFormat::Bin => traces_to_bytes(tr),
        TraceFormat::Csv => {
            let mut buf = Vec::new();
            write_traces_csv(&mut buf, tr).map_err(|e| Error::io(&path, e))?;
            buf
        }
    };
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_traces(path: &Path) -> Result<Traces> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        traces_from_bytes(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::Format("trace file is neither binary nor text".into()))?;
        read_traces_csv(&text, 1)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

/// Everything needed to reproduce a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub variant: String,
    pub stimulus: StimulusSpec,
    pub params: ModelParams,
    pub tl_config: TlConfig,
    pub update_period: usize,
    /// Trace samples are every `decimation`-th base step.
    pub decimation: usize,
    pub seed: Option<u64>,
    pub lut_checksum: Option<String>,
    /// SHA-256 over the JSON of params, TL config, stimulus, variant and
    /// update period.
    pub config_sha256: String,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn new(
        variant: &str,
        stimulus: StimulusSpec,
        params: ModelParams,
        tl_config: TlConfig,
        update_period: usize,
    ) -> Self {
        let mut m = Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            variant: variant.to_string(),
            stimulus,
            params,
            tl_config,
            update_period,
            decimation: 1,
            seed: None,
            lut_checksum: None,
            config_sha256: String::new(),
            files: Vec::new(),
        };
        m.config_sha256 = m.config_hash();
        m
    }

    /// Sampling rate of the trace files.
    pub fn trace_fs(&self) -> f64 {
        self.stimulus.fs / self.decimation.max(1) as f64
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn config_hash(&self) -> String {
        let key = serde_json::json!({
            "params": self.params,
            "tl_config": self.tl_config,
            "stimulus": self.stimulus,
            "variant": self.variant,
            "update_period": self.update_period,
        });
        sha256_hex(key.to_string().as_bytes())
    }

    pub fn add_file(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.files.push(FileEntry {
            name: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(rows: usize, n: usize, seed: f64) -> Traces {
        let row = |k: usize, off: f64| (0..n).map(|i| (seed + off + (i * 7 + k) as f64).sin() * 1e-7).collect::<Vec<_>>();
        Traces {
            fs: 200e3,
            decimation: 1,
            sections: (0..rows).map(|k| k * 3).collect(),
            v: (0..rows).map(|k| row(k, 0.0)).collect(),
            y: (0..rows).map(|k| row(k, 1.0)).collect(),
            g: (0..rows).map(|k| row(k, 2.0)).collect(),
            max_substeps: 0,
        }
    }

    #[test]
    fn corrupted_binary_is_rejected() {
        let mut bytes = traces_to_bytes(&sample(2, 10, 0.3));
        bytes[30] ^= 1;
        assert!(matches!(traces_from_bytes(&bytes), Err(Error::Checksum { .. })));
        assert!(matches!(traces_from_bytes(&bytes[..6]), Err(Error::Format(_))));
    }

    #[test]
    fn files_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let tr = sample(3, 17, 1.0);
        for fmt in [TraceFormat::Csv, TraceFormat::Bin] {
            let p = write_traces(dir.path(), "run", &tr, fmt).unwrap();
            let back = read_traces(&p).unwrap();
            assert_eq!(back.v, tr.v);
            assert_eq!(back.g, tr.g);
            assert_eq!(back.sections, tr.sections);
        }
    }

    #[test]
    fn manifest_hash_tracks_configuration() {
        let s = StimulusSpec::tone(1e3, 60.0, 0.01, 200e3);
        let a = RunManifest::new("v1d", s.clone(), ModelParams::default(), TlConfig::default(), 6);
        let b = RunManifest::new("v1d", s.clone(), ModelParams::default(), TlConfig::default(), 12);
        let c = RunManifest::new("v1d", s, ModelParams::default(), TlConfig::default(), 6);
        assert_ne!(a.config_sha256, b.config_sha256);
        assert_eq!(a.config_sha256, c.config_sha256);
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_exact(rows in 1usize..4, n in 1usize..50, seed in -10.0f64..10.0) {
            let tr = sample(rows, n, seed);
            let back = traces_from_bytes(&traces_to_bytes(&tr)).unwrap();
            prop_assert_eq!(back.v, tr.v);
            prop_assert_eq!(back.y, tr.y);
            prop_assert_eq!(back.g, tr.g);
            prop_assert_eq!(back.fs, tr.fs);
        }

        #[test]
        fn csv_round_trip_is_exact(rows in 1usize..3, n in 2usize..30, seed in -10.0f64..10.0) {
            let tr = sample(rows, n, seed);
            let mut buf = Vec::new();
            write_traces_csv(&mut buf, &tr).unwrap();
            let back = read_traces_csv(std::str::from_utf8(&buf).unwrap(), 1).unwrap();
            prop_assert_eq!(back.v, tr.v);
            prop_assert_eq!(back.y, tr.y);
            prop_assert_eq!(back.g, tr.g);
        }
    }
}
