//! Run manifests: what was run, with which inputs, producing which bytes.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;
use crate::config::RunConfig;
use crate::error::{io_err, CliError, CliResult};

pub const TOOL: &str = "quench";

/// A file read or written by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
    /// Fields (JSON keys or CSV columns) holding timings; they are blanked
    /// before hashing so reruns compare on content only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub volatile: Vec<String>,
}

impl Artifact {
    pub fn new(path: &Path) -> CliResult<Self> {
        Self::with_volatile(path, &[])
    }

    pub fn with_volatile(path: &Path, volatile: &[&str]) -> CliResult<Self> {
        let volatile: Vec<String> = volatile.iter().map(|s| s.to_string()).collect();
        Ok(Self { path: path.to_owned(), sha256: content_hash(path, &volatile)?, volatile })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    /// Parsed config at run time, so a rerun is immune to later edits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    pub seed: Option<u64>,
    pub workers: usize,
    /// Seconds since the Unix epoch; reused by reruns for embedded timestamps.
    pub timestamp: u64,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub wall_clock_secs: f64,
}

/// `table.csv` → `table.csv.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

impl RunManifest {
    pub fn write(&self, out: &Path) -> CliResult<PathBuf> {
        let path = manifest_path(out);
        write_json(&path, self)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        read_json(path)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|source| CliError::Json { path: path.to_owned(), source })?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| CliError::Json { path: path.to_owned(), source })
}

/// SHA-256 of a file, streamed.
pub fn file_hash(path: &Path) -> CliResult<String> {
    let mut file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn blank_keys(value: &mut serde_json::Value, keys: &[String]) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map.iter_mut() {
                if keys.contains(k) {
                    *v = serde_json::Value::Null;
                } else {
                    blank_keys(v, keys);
                }
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(|v| blank_keys(v, keys)),
        _ => {}
    }
}

/// File hash with `volatile` fields blanked (JSON keys at any depth, or CSV
/// columns by header name).
pub fn content_hash(path: &Path, volatile: &[String]) -> CliResult<String> {
    if volatile.is_empty() {
        return file_hash(path);
    }
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let canonical = if path.extension().is_some_and(|e| e == "csv") {
        let mut reader = csv::Reader::from_reader(bytes.as_slice());
        let mut writer = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::Usage(format!("{}: {e}", path.display()));
        let headers = reader.headers().map_err(csv_err)?.clone();
        let drop: Vec<bool> = headers.iter().map(|h| volatile.iter().any(|v| v == h)).collect();
        let keep = |r: &csv::StringRecord| -> Vec<String> {
            r.iter().zip(&drop).filter(|(_, d)| !**d).map(|(f, _)| f.to_owned()).collect()
        };
        writer.write_record(keep(&headers)).map_err(csv_err)?;
        for record in reader.records() {
            writer.write_record(keep(&record.map_err(csv_err)?)).map_err(csv_err)?;
        }
        writer.into_inner().map_err(|e| CliError::Usage(e.to_string()))?
    } else {
        let mut value: serde_json::Value =
            serde_json::from_slice(&bytes).map_err(|source| CliError::Json { path: path.to_owned(), source })?;
        blank_keys(&mut value, volatile);
        serde_json::to_vec(&value).map_err(|source| CliError::Json { path: path.to_owned(), source })?
    };
    Ok(hex::encode(Sha256::digest(canonical)))
}
