//! Report emission: JSON with a provenance block sufficient to rerun the
//! exact job, plus flat CSV time series. No timestamps — deterministic
//! reruns produce byte-identical files.

use std::io::Write;
use std::path::Path;

use serde_json::{json, Map, Value};

/// FNV-1a of a byte string; used to fingerprint grid configurations.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn grid_hash(descriptor: &str) -> String {
    format!("{:016x}", fnv1a(descriptor.as_bytes()))
}

pub struct Provenance {
    pub command: String,
    pub config: Value,
    pub seed: u64,
    pub grid_descriptor: String,
}

impl Provenance {
    pub fn to_json(&self) -> Value {
        json!({
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "grid_hash": grid_hash(&self.grid_descriptor),
        })
    }
}

pub fn write_json_report(
    path: &Path,
    provenance: &Provenance,
    results: Value,
) -> std::io::Result<()> {
    let mut root = Map::new();
    root.insert("provenance".into(), provenance.to_json());
    root.insert("results".into(), results);
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, &Value::Object(root))?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> std::io::Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "{header}")?;
    for row in rows {
        writeln!(file, "{row}")?;
    }
    Ok(())
}
