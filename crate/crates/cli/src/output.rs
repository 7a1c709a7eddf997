//! Output directories. Files are staged in memory and written only after the
//! command succeeded, each through a temporary file and a rename.

use std::fs;
use std::path::{Path, PathBuf};

use probekit::dataset::{read_bytes, write_atomic};
use probekit::Result;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    pub fn add_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    /// Writes the staged files plus `config.json` and `provenance.tsv`.
    pub fn commit(self, dir: &Path, cfg: &RunConfig) -> Result<()> {
        let provenance = provenance_tsv(cfg)?;
        fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            write_atomic(&dir.join(name), bytes)?;
        }
        write_atomic(&dir.join("config.json"), &cfg.snapshot()?)?;
        write_atomic(&dir.join("provenance.tsv"), provenance.as_bytes())?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `input  path  sha256` for every input of the run.
pub fn provenance_tsv(cfg: &RunConfig) -> Result<String> {
    let mut out = String::from("input\tpath\tsha256\n");
    for (name, path) in &cfg.inputs {
        let digest = sha256_hex(&read_bytes(path)?);
        out.push_str(&format!("{name}\t{}\t{digest}\n", display(path)));
    }
    Ok(out)
}

fn display(p: &PathBuf) -> String {
    p.to_string_lossy().into_owned()
}
