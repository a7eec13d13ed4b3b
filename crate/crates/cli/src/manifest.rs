//! Run manifests: every artifact is accompanied by a small JSON file
//! recording the tool version, the full configuration, and digests of the
//! inputs, so any run can be reconstructed. The creation timestamp is
//! isolated to the single `created_unix` key; everything else is a pure
//! function of the invocation.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub version: &'static str,
    pub command: &'static str,
    pub config: serde_json::Value,
    /// Input path -> hex SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub created_unix: u64,
}

pub fn file_digest(path: &Path) -> io::Result<String> {
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    let mut hex = String::with_capacity(64);
    for b in h.finalize() {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok(hex)
}

/// Writes `<out>.manifest.json` next to the artifact at `out`.
pub fn write_manifest(
    out: &Path,
    command: &'static str,
    config: impl Serialize,
    inputs: &[&Path],
) -> io::Result<()> {
    let mut digests = BTreeMap::new();
    for p in inputs {
        digests.insert(p.display().to_string(), file_digest(p)?);
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        command,
        config: serde_json::to_value(config).expect("config serializes"),
        inputs: digests,
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let mut path = out.as_os_str().to_owned();
    path.push(".manifest.json");
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(path, body + "\n")
}
