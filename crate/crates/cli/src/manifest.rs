//! Run manifests: every command writes a `manifest.json` into its output
//! directory recording what ran, with which inputs (by content digest),
//! and what it produced. Given the same inputs and flags, a rerun
//! reproduces every listed output byte for byte; the manifest itself is
//! the one file excluded from that guarantee because it carries wall-clock
//! timestamps.

use std::io::Read;
use std::path::Path;

use adversplit_core::{Error, Result};
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One input file, identified by the path the user gave and the SHA-256
/// of its contents at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// The full record of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand that ran, e.g. `"split"` or `"gen spurious"`.
    pub command: String,
    /// Raw argv as invoked.
    pub argv: Vec<String>,
    /// Tool version that produced the outputs.
    pub version: String,
    /// Root seed of a single run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Seeds of a sweep, in the order they ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Fully resolved configuration, defaults included.
    pub config: serde_json::Value,
    /// Input files with content digests.
    pub inputs: Vec<InputDigest>,
    /// Files written into the output directory, relative to it,
    /// excluding the manifest itself.
    pub outputs: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write;
        write!(hex, "{byte:02x}").expect("writing to a String cannot fail");
    }
    Ok(hex)
}

fn now_rfc3339() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Accumulates manifest fields while a command runs, then writes the
/// finished record.
pub struct ManifestBuilder {
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                command: command.to_string(),
                argv: std::env::args().collect(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed: None,
                seeds: None,
                config: serde_json::Value::Null,
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_at: now_rfc3339(),
                finished_at: String::new(),
            },
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.manifest.seed = Some(seed);
        self
    }

    pub fn seeds(mut self, seeds: &[u64]) -> Self {
        self.manifest.seeds = Some(seeds.to_vec());
        self
    }

    pub fn config<T: Serialize>(mut self, config: &T) -> Result<Self> {
        self.manifest.config = serde_json::to_value(config)?;
        Ok(self)
    }

    /// Records an input file, digesting its current contents.
    pub fn input(mut self, path: &Path) -> Result<Self> {
        self.manifest.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(self)
    }

    /// Records an output file by its path relative to the output directory.
    pub fn output(mut self, relative: &str) -> Self {
        self.manifest.outputs.push(relative.to_string());
        self
    }

    /// Stamps the end time and writes `manifest.json` into `out_dir`.
    pub fn write(mut self, out_dir: &Path) -> Result<()> {
        self.manifest.finished_at = now_rfc3339();
        let mut body = serde_json::to_string_pretty(&self.manifest)?;
        body.push('\n');
        std::fs::write(out_dir.join("manifest.json"), body)?;
        Ok(())
    }
}

/// Reads a manifest back and re-digests every recorded input, failing if
/// any file changed since the run (relative paths resolve against the
/// current working directory, as they did at run time). No subcommand
/// loads manifests yet; the tests hold this function to the
/// digest-verification contract.
#[cfg_attr(not(test), allow(dead_code))]
pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let body = std::fs::read_to_string(path)?;
    let manifest: RunManifest = serde_json::from_str(&body)?;
    for input in &manifest.inputs {
        let digest = sha256_file(Path::new(&input.path))?;
        if digest != input.sha256 {
            return Err(Error::ContractViolation(format!(
                "input {} no longer matches its recorded digest (expected {}, found {digest})",
                input.path, input.sha256
            )));
        }
    }
    Ok(manifest)
}
