use std::fmt;
use std::path::{Path, PathBuf};

use neurodecode::corpus::SynthConfig;
use neurodecode::evaluation::{SMOOTHGRAD_N, SMOOTHGRAD_SIGMA};
use neurodecode::training::CvConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Bad or inconsistent configuration; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Corpus manifest written by `synth`.
    pub corpus: Option<PathBuf>,
    /// Feature manifest written by `preprocess` (or `augment`).
    pub features: Option<PathBuf>,
    /// Source-participant features for `transfer`.
    pub source_features: Option<PathBuf>,
    /// Checkpoint manifest written by `train`.
    pub checkpoint: Option<PathBuf>,
    /// Report written by `cv`; `baseline` compares against it.
    pub cv_report: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContamSettings {
    pub n_surrogates: usize,
    pub alpha: f64,
}

impl Default for ContamSettings {
    fn default() -> Self {
        Self {
            n_surrogates: 1000,
            alpha: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaliencySettings {
    /// Single trial to explain; otherwise the test trials of the fold.
    pub trial: Option<String>,
    pub n: usize,
    pub sigma: f64,
    /// Electrodes whose share of the saliency mass is reported.
    pub channels_of_interest: Option<Vec<usize>>,
}

impl Default for SaliencySettings {
    fn default() -> Self {
        Self {
            trial: None,
            n: SMOOTHGRAD_N,
            sigma: SMOOTHGRAD_SIGMA,
            channels_of_interest: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSettings {
    pub n_runs: usize,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self { n_runs: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlotSettings {
    /// Comma-separated grid; a non-numeric header row/column is skipped.
    pub input: Option<PathBuf>,
    pub cell_px: u32,
}

impl Default for PlotSettings {
    fn default() -> Self {
        Self {
            input: None,
            cell_px: 24,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// The one seed of a run. Every stage derives its randomness from it.
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default)]
    pub contam: ContamSettings,
    #[serde(default)]
    pub saliency: SaliencySettings,
    #[serde(default)]
    pub baseline: BaselineSettings,
    #[serde(default)]
    pub plot: PlotSettings,
}

fn nested_seed(table: &toml::Table, at: &str) -> Option<String> {
    for (k, v) in table {
        if let toml::Value::Table(t) = v {
            let here = format!("{at}{k}.");
            if t.contains_key("seed") {
                return Some(format!("{here}seed"));
            }
            if let Some(found) = nested_seed(t, &here) {
                return Some(found);
            }
        }
    }
    None
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError(e.to_string()))?;
        if let Some(key) = nested_seed(&table, "") {
            return Err(ConfigError(format!(
                "`{key}` is not allowed; set the top-level `seed` (or pass --seed)"
            )));
        }
        let mut c: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(e.to_string()))?;
        c.set_seed(c.seed);
        Ok(c)
    }

    /// Reads `path`; relative paths inside are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let mut c = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        c.resolve_paths(base);
        Ok(c)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.cv.train.seed = seed;
    }

    fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [
            &mut p.corpus,
            &mut p.features,
            &mut p.source_features,
            &mut p.checkpoint,
            &mut p.cv_report,
            &mut self.plot.input,
        ] {
            if let Some(path) = slot.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
    }

    /// SHA-256 of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("serializable");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
