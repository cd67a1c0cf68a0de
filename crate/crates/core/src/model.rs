//! Versioned model files. Every file of one training run carries the same
//! stamp, derived from the input data and the parameters.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const FORMAT: &str = "slateq-model";
pub const FORMAT_VERSION: u32 = 1;

pub const COMPONENTS_FILE: &str = "components.json";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const QTABLE_FILE: &str = "qtable.json";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed model file: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: expected {FORMAT} version {FORMAT_VERSION}, found {found}")]
    Version { path: PathBuf, found: String },
    #[error("{path}: expected a {expected} file, found {found}")]
    Kind {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: stamp {found} does not match {expected}")]
    StampMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
}

impl ModelError {
    pub fn path(&self) -> &Path {
        match self {
            ModelError::Io { path, .. }
            | ModelError::Parse { path, .. }
            | ModelError::Version { path, .. }
            | ModelError::Kind { path, .. }
            | ModelError::StampMismatch { path, .. } => path,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope<B> {
    format: String,
    version: u32,
    kind: String,
    stamp: String,
    body: B,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: String,
    stamp: String,
}

/// Hex SHA-256 over the given parts, each length-prefixed.
pub fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_model<B: Serialize>(
    dir: &Path,
    file: &str,
    kind: &str,
    stamp: &str,
    body: &B,
) -> Result<PathBuf, ModelError> {
    let path = dir.join(file);
    let io = |source| ModelError::Io {
        path: path.clone(),
        source,
    };
    let f = fs::File::create(&path).map_err(io)?;
    let mut w = BufWriter::new(f);
    let env = Envelope {
        format: FORMAT.to_string(),
        version: FORMAT_VERSION,
        kind: kind.to_string(),
        stamp: stamp.to_string(),
        body,
    };
    serde_json::to_writer(&mut w, &env).map_err(|e| ModelError::Parse {
        path: path.clone(),
        message: e.to_string(),
    })?;
    w.write_all(b"\n").map_err(io)?;
    w.flush().map_err(io)?;
    Ok(path)
}

/// Reads one model file, checking format, version, kind and (if given) stamp.
pub fn read_model<B: DeserializeOwned>(
    dir: &Path,
    file: &str,
    kind: &str,
    stamp: Option<&str>,
) -> Result<(String, B), ModelError> {
    let path = dir.join(file);
    let f = fs::File::open(&path).map_err(|source| ModelError::Io {
        path: path.clone(),
        source,
    })?;
    let value: serde_json::Value = serde_json::from_reader(BufReader::new(f)).map_err(|e| ModelError::Parse {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let parse = |e: serde_json::Error| ModelError::Parse {
        path: path.clone(),
        message: e.to_string(),
    };
    let header: Header = Header::deserialize(&value).map_err(parse)?;
    if header.format != FORMAT || header.version != FORMAT_VERSION {
        return Err(ModelError::Version {
            path,
            found: format!("{} version {}", header.format, header.version),
        });
    }
    if header.kind != kind {
        return Err(ModelError::Kind {
            path,
            expected: kind.to_string(),
            found: header.kind,
        });
    }
    if let Some(expected) = stamp {
        if header.stamp != expected {
            return Err(ModelError::StampMismatch {
                path,
                expected: expected.to_string(),
                found: header.stamp,
            });
        }
    }
    let env: Envelope<B> = Envelope::deserialize(value).map_err(parse)?;
    Ok((env.stamp, env.body))
}
