//! On-disk formats: checkpoints (`.ckpt`), feature stores (`.feat`), the
//! metrics log (`.metrics.csv`) and run configs (`.run`).
//!
//! Binary files share one container: an 8-byte magic, a little-endian `u32`
//! version, a `u64` header length, a UTF-8 `key=value` header and a raw
//! little-endian payload.

mod checkpoint;
mod features;
mod metrics;
mod run_config;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Phase, Provenance, ResumeState};
pub use features::{load_features, save_features, FEATURES_MAGIC};
pub use metrics::{read_metrics, MetricRow, MetricsLog, METRICS_HEADER};
pub use run_config::RunConfig;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Ordered `key=value` pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct Header(Vec<(String, String)>);

impl Header {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.0.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Integrity(format!("header is missing {key:?}")))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.require(key)?;
        v.parse()
            .map_err(|_| Error::Integrity(format!("header value {key}={v:?} is malformed")))
    }

    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(_) => self.parse(key).map(Some),
        }
    }

    fn encode(&self) -> Result<String> {
        let mut out = String::new();
        for (k, v) in &self.0 {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Config(format!("header entry {k:?} cannot be encoded")));
            }
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        Ok(out)
    }

    fn decode(text: &str) -> Result<Self> {
        let mut h = Header::default();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Integrity(format!("header line {line:?} has no '='")))?;
            h.push(k, v);
        }
        Ok(h)
    }
}

pub(crate) fn write_container(path: &Path, magic: &[u8; 8], header: &Header, payload: &[u8]) -> Result<()> {
    let text = header.encode()?;
    let mut bytes = Vec::with_capacity(20 + text.len() + payload.len());
    bytes.extend_from_slice(magic);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(text.len() as u64).to_le_bytes());
    bytes.extend_from_slice(text.as_bytes());
    bytes.extend_from_slice(payload);
    // write-then-rename so readers never see a partial file
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub(crate) fn read_container(path: &Path, magic: &[u8; 8]) -> Result<(Header, Vec<u8>)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    decode_container(&bytes, magic)
}

pub(crate) fn decode_container(bytes: &[u8], magic: &[u8; 8]) -> Result<(Header, Vec<u8>)> {
    if bytes.len() < 20 {
        if bytes.len() >= 8 && &bytes[..8] != magic {
            return Err(bad_magic(magic, &bytes[..8]));
        }
        return Err(Error::Truncated(format!("{} bytes, container prefix needs 20", bytes.len())));
    }
    if &bytes[..8] != magic {
        return Err(bad_magic(magic, &bytes[..8]));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let rest = &bytes[20..];
    if rest.len() < header_len {
        return Err(Error::Truncated(format!(
            "header declares {header_len} bytes, {} present",
            rest.len()
        )));
    }
    let text = std::str::from_utf8(&rest[..header_len])
        .map_err(|_| Error::Integrity("header is not UTF-8".into()))?;
    Ok((Header::decode(text)?, rest[header_len..].to_vec()))
}

fn bad_magic(expected: &[u8; 8], found: &[u8]) -> Error {
    Error::Magic {
        expected: String::from_utf8_lossy(expected).into_owned(),
        found: String::from_utf8_lossy(found).into_owned(),
    }
}

/// Checks that `payload` holds exactly `expected` bytes.
pub(crate) fn check_payload(payload: &[u8], expected: usize) -> Result<()> {
    match payload.len().cmp(&expected) {
        std::cmp::Ordering::Less => Err(Error::Truncated(format!(
            "payload has {} bytes, header declares {expected}",
            payload.len()
        ))),
        std::cmp::Ordering::Greater => Err(Error::Integrity(format!(
            "payload has {} bytes, header declares {expected}",
            payload.len()
        ))),
        std::cmp::Ordering::Equal => Ok(()),
    }
}

pub(crate) fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn read_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub(crate) fn format_dims(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

pub(crate) fn parse_dims(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|d| {
            d.trim()
                .parse()
                .map_err(|_| Error::Integrity(format!("bad dimension list {s:?}")))
        })
        .collect()
}
