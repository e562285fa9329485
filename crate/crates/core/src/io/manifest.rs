use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{gen_toy, load_cifar10, load_cifar10_dir, load_mnist_dir, ChannelStats, DatasetIndex, ToySpec};
use crate::distill::DistillConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Cifar10,
    Mnist,
    Toy,
}

impl FromStr for DatasetFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cifar10" => Ok(Self::Cifar10),
            "mnist" => Ok(Self::Mnist),
            "toy" => Ok(Self::Toy),
            other => Err(format!("unknown format `{other}` (cifar10, mnist, toy)")),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cifar10 => "cifar10",
            Self::Mnist => "mnist",
            Self::Toy => "toy",
        })
    }
}

/// Where the real data came from, precise enough to reload it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIdentity {
    pub format: DatasetFormat,
    /// File or directory; `toy` for the generator.
    pub path: String,
    /// SHA-256 of the files read, absent for generated data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToySpec>,
    /// Side length MNIST digits were cropped or padded to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resize: Option<usize>,
}

/// Training split, plus the test split when the source has one.
pub struct LoadedData {
    pub train: DatasetIndex,
    pub test: Option<DatasetIndex>,
}

impl DatasetIdentity {
    pub fn toy(spec: ToySpec) -> Self {
        DatasetIdentity {
            format: DatasetFormat::Toy,
            path: "toy".into(),
            sha256: None,
            toy: Some(spec),
            resize: None,
        }
    }

    /// Identifies `path` and records its content hash.
    pub fn file(format: DatasetFormat, path: &Path, resize: Option<usize>) -> Result<Self> {
        Ok(DatasetIdentity {
            format,
            path: path.display().to_string(),
            sha256: Some(hash_path(path)?),
            toy: None,
            resize,
        })
    }

    pub fn load(&self) -> Result<LoadedData> {
        match self.format {
            DatasetFormat::Toy => {
                let d = gen_toy(&self.toy.clone().unwrap_or_default())?;
                Ok(LoadedData { train: d.train, test: Some(d.test) })
            }
            DatasetFormat::Cifar10 => {
                let path = Path::new(&self.path);
                if path.is_dir() && path.join("test_batch.bin").is_file() {
                    let (train, test) = load_cifar10_dir(path)?;
                    Ok(LoadedData { train, test: Some(test) })
                } else {
                    Ok(LoadedData { train: load_cifar10(path)?, test: None })
                }
            }
            DatasetFormat::Mnist => {
                let (train, test) = load_mnist_dir(&self.path, self.resize)?;
                Ok(LoadedData { train, test: Some(test) })
            }
        }
    }

    /// Errors if the files at `path` no longer match the recorded hash.
    pub fn verify(&self) -> Result<()> {
        if let Some(expected) = &self.sha256 {
            let found = hash_path(Path::new(&self.path))?;
            if &found != expected {
                return Err(Error::Config(format!(
                    "dataset at {} changed since the run (sha256 {found}, recorded {expected})",
                    self.path
                )));
            }
        }
        Ok(())
    }
}

/// SHA-256 of a file, or of the sorted regular files directly inside a
/// directory (each prefixed by its name and length).
pub fn hash_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .map(|e| e.path())
            .collect();
        entries.sort();
        for p in entries {
            let bytes = fs::read(&p)?;
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            h.update(name.as_bytes());
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    } else {
        h.update(fs::read(path)?);
    }
    Ok(hex::encode(h.finalize()))
}

/// Everything needed to reproduce or interpret an artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub dataset: DatasetIdentity,
    /// Normalisation the synthetic pixels live in.
    pub stats: ChannelStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distill: Option<DistillConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalConfig>,
    /// Only recorded on request, so that repeated runs stay byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
}

impl RunManifest {
    pub fn new(seed: u64, dataset: DatasetIdentity, stats: ChannelStats) -> Self {
        RunManifest {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            seed,
            dataset,
            stats,
            distill: None,
            encoder: None,
            eval: None,
            wall_clock_secs: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
