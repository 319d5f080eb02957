//! Per-stage run manifests: effective config, seed, and content digests of
//! every input and output. The timestamp lives only here, so stage outputs
//! stay byte-identical across reruns.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::Settings;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub created: String,
    pub config_hash: String,
    pub config: Value,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub details: Value,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut r = BufReader::new(File::open(path).map_err(CliError::io(path))?);
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = r.read(&mut buf).map_err(CliError::io(path))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn digests(files: &[(String, &Path)]) -> Result<BTreeMap<String, String>, CliError> {
    files
        .iter()
        .map(|(name, p)| Ok((name.clone(), sha256_file(p)?)))
        .collect()
}

impl Manifest {
    pub fn build(
        stage: &str,
        settings: &Settings,
        inputs: &[(String, &Path)],
        outputs: &[(String, &Path)],
        details: Value,
    ) -> Result<Self, CliError> {
        Ok(Self {
            stage: stage.to_string(),
            created: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            config_hash: settings.hash(),
            config: serde_json::to_value(settings).expect("settings serialize"),
            seed: settings.seed,
            inputs: digests(inputs)?,
            outputs: digests(outputs)?,
            details,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        }
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        std::fs::write(path, s).map_err(CliError::io(path))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&raw).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}
