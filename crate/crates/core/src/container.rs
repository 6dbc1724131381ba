//! Binary container format for datasets, model checkpoints and reports.
//!
//! Layout:
//!
//! ```text
//! magic  "NKMLE1"
//! header UTF-8 `key=value` lines, terminated by one blank line
//! arrays repeated: name_len u32 LE | name bytes | count u64 LE | count f64 LE
//! ```
//!
//! Header order is fixed by the writer and payload floats round-trip
//! bit-for-bit, so identical contents produce identical files.

use std::fmt::Display;
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 6] = b"NKMLE1";
pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: not an NKMLE container")]
    BadMagic,
    #[error("unsupported container format version `{found}`")]
    VersionMismatch { found: String },
    #[error("truncated payload: {0}")]
    TruncatedPayload(String),
    #[error("count mismatch: {0}")]
    CountMismatch(String),
    #[error("missing header key `{0}`")]
    MissingKey(String),
    #[error("missing payload array `{0}`")]
    MissingArray(String),
    #[error("malformed header: {0}")]
    BadHeader(String),
}

/// In-memory container: ordered header entries plus named f64 arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    header: Vec<(String, String)>,
    arrays: Vec<(String, Vec<f64>)>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Container {
            header: vec![
                ("format_version".into(), FORMAT_VERSION.into()),
                ("kind".into(), kind.into()),
            ],
            arrays: Vec::new(),
        }
    }

    pub fn kind(&self) -> &str {
        self.get("kind").unwrap_or("")
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        assert!(
            self.get(key).is_none(),
            "duplicate header key `{key}`"
        );
        let value = value.to_string();
        assert!(
            !key.contains(['=', '\n']) && !value.contains('\n'),
            "header entries must be single-line key=value pairs"
        );
        self.header.push((key.into(), value));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, ContainerError> {
        self.get(key)
            .ok_or_else(|| ContainerError::MissingKey(key.into()))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, ContainerError> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| {
            ContainerError::BadHeader(format!("cannot parse `{key}={raw}`"))
        })
    }

    pub fn push_array(&mut self, name: &str, values: Vec<f64>) {
        assert!(
            !self.arrays.iter().any(|(n, _)| n == name),
            "duplicate array `{name}`"
        );
        self.arrays.push((name.into(), values));
    }

    pub fn array(&self, name: &str) -> Result<&[f64], ContainerError> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| ContainerError::MissingArray(name.into()))
    }

    pub fn has_array(&self, name: &str) -> bool {
        self.arrays.iter().any(|(n, _)| n == name)
    }

    pub fn array_names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for (k, v) in &self.header {
            out.extend_from_slice(k.as_bytes());
            out.push(b'=');
            out.extend_from_slice(v.as_bytes());
            out.push(b'\n');
        }
        out.push(b'\n');
        for (name, values) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let rest = &bytes[MAGIC.len()..];

        // header runs until the first blank line
        let mut header = Vec::new();
        let mut pos = 0usize;
        loop {
            let nl = rest[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| {
                    ContainerError::BadHeader("unterminated header".into())
                })?;
            let line = &rest[pos..pos + nl];
            pos += nl + 1;
            if line.is_empty() {
                break;
            }
            let line = std::str::from_utf8(line)
                .map_err(|_| ContainerError::BadHeader("non-UTF-8 header".into()))?;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ContainerError::BadHeader(format!("no `=` in `{line}`")))?;
            if header.iter().any(|(key, _): &(String, String)| key == k) {
                return Err(ContainerError::BadHeader(format!("duplicate key `{k}`")));
            }
            header.push((k.to_string(), v.to_string()));
        }

        let container = Container {
            header,
            arrays: Vec::new(),
        };
        let version = container.require("format_version")?;
        if version != FORMAT_VERSION {
            return Err(ContainerError::VersionMismatch {
                found: version.into(),
            });
        }
        container.require("kind")?;

        let mut arrays = Vec::new();
        let payload = &rest[pos..];
        let mut p = 0usize;
        while p < payload.len() {
            if p + 4 > payload.len() {
                return Err(ContainerError::TruncatedPayload(
                    "array name length".into(),
                ));
            }
            let name_len =
                u32::from_le_bytes(payload[p..p + 4].try_into().unwrap()) as usize;
            p += 4;
            if p + name_len > payload.len() {
                return Err(ContainerError::TruncatedPayload("array name".into()));
            }
            let name = std::str::from_utf8(&payload[p..p + name_len])
                .map_err(|_| ContainerError::TruncatedPayload("non-UTF-8 array name".into()))?
                .to_string();
            p += name_len;
            if p + 8 > payload.len() {
                return Err(ContainerError::TruncatedPayload(format!(
                    "element count of `{name}`"
                )));
            }
            let count =
                u64::from_le_bytes(payload[p..p + 8].try_into().unwrap()) as usize;
            p += 8;
            let bytes_needed = count
                .checked_mul(8)
                .ok_or_else(|| ContainerError::TruncatedPayload("count overflow".into()))?;
            if p + bytes_needed > payload.len() {
                return Err(ContainerError::TruncatedPayload(format!(
                    "array `{name}` declares {count} values"
                )));
            }
            let mut values = Vec::with_capacity(count);
            for chunk in payload[p..p + bytes_needed].chunks_exact(8) {
                values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            p += bytes_needed;
            arrays.push((name, values));
        }

        Ok(Container {
            header: container.header,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ContainerError> {
        let bytes = std::fs::read(path)?;
        Container::from_bytes(&bytes)
    }
}
