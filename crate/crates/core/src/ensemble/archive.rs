//! Dataset archive.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! offset 0   8 bytes   magic "TFDSET01"
//! offset 8   u64       header length H
//! offset 16  H bytes   JSON manifest (UTF-8)
//! 16 + H     f64[...]  arrays, back to back, at the offsets the manifest gives
//! ```
//!
//! `inputs` has shape `[n_cases, 3, nt]` and `targets` has shape
//! `[n_cases, n_points, 3, nt]`, both row-major. Each array entry of the
//! manifest carries the SHA-256 of its bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::wave::WaveKind;
use super::CaseRecord;
use crate::error::{Error, Result};
use crate::memtier::StrategyKind;

pub const MAGIC: &[u8; 8] = b"TFDSET01";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the array section.
    pub offset: u64,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub dt: f64,
    pub nt: usize,
    pub n_cases: usize,
    pub n_points: usize,
    pub case_ids: Vec<usize>,
    pub observation_points: Vec<[f64; 3]>,
    pub strategy: StrategyKind,
    pub seed: Option<u64>,
    pub wave_kind: WaveKind,
    pub scale: f64,
    pub arrays: Vec<ArrayEntry>,
}

impl DatasetManifest {
    pub fn array(&self, name: &str) -> Result<&ArrayEntry> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Format(format!("archive has no {name} array")))
    }
}

/// Descriptive fields of an archive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub observation_points: Vec<[f64; 3]>,
    pub strategy: StrategyKind,
    pub seed: Option<u64>,
    pub wave_kind: WaveKind,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn input(&self, case: usize, comp: usize) -> &[f64] {
        let nt = self.manifest.nt;
        let o = (case * 3 + comp) * nt;
        &self.inputs[o..o + nt]
    }

    pub fn target(&self, case: usize, point: usize, comp: usize) -> &[f64] {
        let m = &self.manifest;
        let o = ((case * m.n_points + point) * 3 + comp) * m.nt;
        &self.targets[o..o + m.nt]
    }
}

fn le_bytes(v: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * v.len());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Serializes the successful records, in case-id order.
pub fn encode_dataset(records: &[CaseRecord], meta: &DatasetMeta, dt: f64) -> Result<Vec<u8>> {
    let mut ok: Vec<&CaseRecord> = records.iter().filter(|r| r.is_ok()).collect();
    ok.sort_by_key(|r| r.case_id);
    let first = ok
        .first()
        .ok_or_else(|| Error::invalid("no successful case to export"))?;
    let nt = first.input.len();
    let n_points = first.response.len();
    if n_points != meta.observation_points.len() {
        return Err(Error::invalid("observation points do not match the records"));
    }
    let mut inputs = Vec::with_capacity(ok.len() * 3 * nt);
    let mut targets = Vec::with_capacity(ok.len() * n_points * 3 * nt);
    for r in &ok {
        if r.input.len() != nt || r.response.len() != n_points || r.response.iter().any(|s| s.len() != nt) {
            return Err(Error::invalid(format!(
                "case {} has inconsistent lengths",
                r.case_id
            )));
        }
        for c in 0..3 {
            inputs.extend(r.input.iter().map(|s| s[c]));
        }
        for series in &r.response {
            for c in 0..3 {
                targets.extend(series.iter().map(|s| s[c]));
            }
        }
    }
    let ib = le_bytes(&inputs);
    let tb = le_bytes(&targets);
    let manifest = DatasetManifest {
        format: String::from_utf8_lossy(MAGIC).into_owned(),
        version: VERSION,
        dt,
        nt,
        n_cases: ok.len(),
        n_points,
        case_ids: ok.iter().map(|r| r.case_id).collect(),
        observation_points: meta.observation_points.clone(),
        strategy: meta.strategy,
        seed: meta.seed,
        wave_kind: meta.wave_kind,
        scale: meta.scale,
        arrays: vec![
            ArrayEntry {
                name: "inputs".into(),
                shape: vec![ok.len(), 3, nt],
                offset: 0,
                bytes: ib.len() as u64,
                sha256: sha256_hex(&ib),
            },
            ArrayEntry {
                name: "targets".into(),
                shape: vec![ok.len(), n_points, 3, nt],
                offset: ib.len() as u64,
                bytes: tb.len() as u64,
                sha256: sha256_hex(&tb),
            },
        ],
    };
    let header = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + header.len() + ib.len() + tb.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&ib);
    out.extend_from_slice(&tb);
    Ok(out)
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(e) => format!("{}.tmp", e.to_string_lossy()),
        None => "tmp".into(),
    });
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn export_dataset(
    records: &[CaseRecord],
    meta: &DatasetMeta,
    dt: f64,
    path: &Path,
) -> Result<DatasetManifest> {
    let bytes = encode_dataset(records, meta, dt)?;
    write_atomic(path, &bytes)?;
    Ok(decode_dataset(&bytes)?.manifest)
}

fn read_f64s(b: &[u8]) -> Vec<f64> {
    b.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

/// Parses and verifies an archive: shapes, sizes and checksums.
pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a dataset archive (bad magic)".into()));
    }
    let h = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16 + h)
        .ok_or_else(|| Error::Format("truncated manifest".into()))?;
    let manifest: DatasetManifest = serde_json::from_slice(body)?;
    if manifest.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported archive version {}",
            manifest.version
        )));
    }
    let data = &bytes[16 + h..];
    let mut arrays = Vec::new();
    for (name, shape) in [
        ("inputs", vec![manifest.n_cases, 3, manifest.nt]),
        (
            "targets",
            vec![manifest.n_cases, manifest.n_points, 3, manifest.nt],
        ),
    ] {
        let a = manifest.array(name)?;
        if a.shape != shape || a.bytes != 8 * shape.iter().product::<usize>() as u64 {
            return Err(Error::Format(format!(
                "{name} shape {:?} disagrees with the manifest",
                a.shape
            )));
        }
        let raw = data
            .get(a.offset as usize..(a.offset + a.bytes) as usize)
            .ok_or_else(|| Error::Format(format!("{name} array is truncated")))?;
        if sha256_hex(raw) != a.sha256 {
            return Err(Error::Format(format!("{name} checksum mismatch")));
        }
        arrays.push(read_f64s(raw));
    }
    let targets = arrays.pop().expect("two arrays");
    let inputs = arrays.pop().expect("two arrays");
    Ok(Dataset {
        manifest,
        inputs,
        targets,
    })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_dataset(&bytes)
}
