//! Run manifests: what a command read, what it wrote, and with which seeds.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dto::to_json;
use crate::error::CliResult;
use crate::formats::write_atomic;

pub const TOOL_VERSION: &str = concat!("guidestage ", env!("CARGO_PKG_VERSION"));
pub const SEED_ENV: &str = "GUIDESTAGE_SEED";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Flag values as given, plus resolved defaults.
    pub args: BTreeMap<String, serde_json::Value>,
    pub seeds: BTreeMap<String, u64>,
    pub out_dir: String,
    /// Input path → SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to `out_dir` → SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, out_dir: &Path) -> Self {
        RunManifest {
            command: command.into(),
            tool_version: TOOL_VERSION.into(),
            args: BTreeMap::new(),
            seeds: BTreeMap::new(),
            out_dir: out_dir.display().to_string(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn arg(&mut self, key: &str, v: impl Serialize) {
        self.args.insert(key.into(), serde_json::to_value(v).expect("plain values serialize"));
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.insert(path.display().to_string(), sha256_hex(bytes));
    }

    /// Writes `bytes` to `out_dir/rel` and records its hash.
    pub fn emit(&mut self, out_dir: &Path, rel: &str, bytes: &[u8]) -> CliResult<()> {
        write_atomic(&out_dir.join(rel), bytes)?;
        self.outputs.insert(rel.into(), sha256_hex(bytes));
        Ok(())
    }

    pub fn finish(&self, out_dir: &Path) -> CliResult<()> {
        write_atomic(&out_dir.join("manifest.json"), &to_json(self))
    }
}

/// The seed from `GUIDESTAGE_SEED` when set and numeric, else `fallback`.
pub fn seed_override(fallback: u64) -> Result<u64, String> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map_err(|_| format!("{SEED_ENV}={s:?} is not a u64")),
        Err(_) => Ok(fallback),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
