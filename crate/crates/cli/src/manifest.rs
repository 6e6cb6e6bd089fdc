use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use slrbm::TrainConfig;

use crate::CliError;

pub const CHECKPOINT: &str = "checkpoint.slrbm";
pub const TRAIN_REPORT: &str = "train_report.csv";
pub const EVAL: &str = "eval.csv";
pub const REPRS: &str = "reprs.csv";
pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

impl InputFile {
    pub fn digest(path: &Path) -> Result<Self, CliError> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }

    pub fn verify(&self) -> Result<(), CliError> {
        let actual = sha256_file(&self.path)?;
        if actual != self.sha256 {
            return Err(CliError::Data(format!(
                "{} changed since the manifest was written (sha256 {actual}, expected {})",
                self.path.display(),
                self.sha256
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    pub images: InputFile,
    pub labels: InputFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    pub checkpoint: PathBuf,
    pub train_report: PathBuf,
    pub manifest: PathBuf,
    /// Filled in once training has finished.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_sha256: Option<String>,
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub threshold: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_seed: Option<u64>,
    pub config: TrainConfig,
    pub inputs: Inputs,
    pub outputs: Outputs,
}

impl RunManifest {
    pub fn outputs_in(dir: &Path) -> Outputs {
        Outputs {
            checkpoint: dir.join(CHECKPOINT),
            train_report: dir.join(TRAIN_REPORT),
            manifest: dir.join(MANIFEST),
            checkpoint_sha256: None,
        }
    }

    pub fn write(&self) -> Result<(), CliError> {
        let text = toml::to_string(self).map_err(|e| CliError::Usage(format!("manifest: {e}")))?;
        fs::write(&self.outputs.manifest, text)
            .map_err(|e| CliError::Data(format!("{}: {e}", self.outputs.manifest.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
