//! Preprocessed trials: frame-aligned neural features and acoustic targets,
//! plus the `.feat` cache written by the preprocessing step.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::corpus::tensor_io::{read_array2, read_array3, write_array2, write_array3};
use crate::corpus::{Corpus, GridGeometry, VowelInterval, N_ACOUSTIC, N_FEATURES};
use crate::error::{data_err, Error, Result};
use crate::sigproc::{assemble_features, NeuralFeatureTensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_trial: String,
    pub audio_donor_trial: String,
}

/// One trial after preprocessing. Matrices are frame-major: `features` is
/// `T × N_f` (column `e·21 + f`), `targets` is `T × 29`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTrial {
    pub trial_id: String,
    pub sentence_id: String,
    pub repetition_index: usize,
    pub block_id: String,
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
    pub vowel_intervals: Vec<VowelInterval>,
    /// Set on augmented trials only.
    pub provenance: Option<Provenance>,
}

impl FeatureTrial {
    pub fn n_frames(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_augmented(&self) -> bool {
        self.provenance.is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub grid: GridGeometry,
    pub vowel_inventory: Vec<String>,
    pub trials: Vec<FeatureTrial>,
}

impl FeatureSet {
    pub fn get(&self, id: &str) -> Option<&FeatureTrial> {
        self.trials.iter().find(|t| t.trial_id == id)
    }

    pub fn select(&self, ids: &[String]) -> Result<Vec<FeatureTrial>> {
        ids.iter()
            .map(|id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("unknown trial {id}")))
            })
            .collect()
    }
}

/// Features for every trial, truncated with the targets to the shorter frame
/// count. Vowel intervals are clipped to the kept frames.
pub fn preprocess_corpus(corpus: &Corpus) -> Result<FeatureSet> {
    let trials = corpus
        .trials()
        .iter()
        .map(|t| {
            let raw = t.raw_neural.mapv(f64::from);
            let feats = assemble_features(raw.view(), corpus.sample_rate_neural(), corpus.grid())?;
            let audio = t.raw_audio_features.t().mapv(f64::from);
            let frames = feats.n_frames().min(audio.nrows());
            let features = feats.frame_matrix().slice(s![..frames, ..]).to_owned();
            Ok(FeatureTrial {
                trial_id: t.trial_id.clone(),
                sentence_id: t.sentence_id.clone(),
                repetition_index: t.repetition_index,
                block_id: t.block_id.clone(),
                features,
                targets: audio.slice(s![..frames, ..]).to_owned(),
                vowel_intervals: clip_intervals(&t.vowel_intervals, frames),
                provenance: None,
            })
        })
        .collect::<Result<_>>()?;
    Ok(FeatureSet {
        grid: corpus.grid(),
        vowel_inventory: corpus.vowel_inventory().to_vec(),
        trials,
    })
}

pub(crate) fn clip_intervals(v: &[VowelInterval], frames: usize) -> Vec<VowelInterval> {
    v.iter()
        .filter(|iv| iv.start_frame < frames)
        .map(|iv| VowelInterval {
            end_frame: iv.end_frame.min(frames),
            ..iv.clone()
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureManifest {
    grid: GridGeometry,
    vowel_inventory: Vec<String>,
    trials: Vec<FeatureEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureEntry {
    trial_id: String,
    sentence_id: String,
    repetition: usize,
    block_id: String,
    feature_file: String,
    audio_file: String,
    vowels: Vec<VowelInterval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_trial: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audio_donor_trial: Option<String>,
}

pub const FEATURE_MANIFEST: &str = "features.json";

/// Writes `features.json` and per-trial `.feat` (electrodes × 21 × T) and
/// target tensors (29 × T) under `dir`, stored as 32-bit floats.
pub fn write_feature_set(set: &FeatureSet, dir: &Path) -> Result<PathBuf> {
    let sub = dir.join("feat");
    fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    let mut entries = Vec::new();
    for t in &set.trials {
        if t.trial_id.contains(['/', '\\']) || t.trial_id.starts_with('.') {
            return data_err(format!("trial id {:?} is not a file name", t.trial_id));
        }
        let feature_file = format!("feat/{}.feat", t.trial_id);
        let audio_file = format!("feat/{}.target", t.trial_id);
        let tensor = NeuralFeatureTensor::from_frame_matrix(t.features.view(), set.grid.electrodes())?;
        write_array3(&dir.join(&feature_file), &tensor.values.mapv(|v| v as f32))?;
        write_array2(&dir.join(&audio_file), &t.targets.t().mapv(|v| v as f32))?;
        entries.push(FeatureEntry {
            trial_id: t.trial_id.clone(),
            sentence_id: t.sentence_id.clone(),
            repetition: t.repetition_index,
            block_id: t.block_id.clone(),
            feature_file,
            audio_file,
            vowels: t.vowel_intervals.clone(),
            source_trial: t.provenance.as_ref().map(|p| p.source_trial.clone()),
            audio_donor_trial: t.provenance.as_ref().map(|p| p.audio_donor_trial.clone()),
        });
    }
    let m = FeatureManifest {
        grid: set.grid,
        vowel_inventory: set.vowel_inventory.clone(),
        trials: entries,
    };
    let path = dir.join(FEATURE_MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&m).expect("serializable")).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_feature_set(manifest: &Path) -> Result<FeatureSet> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let m: FeatureManifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: manifest.to_path_buf(),
        detail: e.to_string(),
    })?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let trials = m
        .trials
        .into_iter()
        .map(|e| {
            let values = read_array3(&base.join(&e.feature_file))?.mapv(f64::from);
            if values.shape()[0] != m.grid.electrodes() || values.shape()[1] != N_FEATURES {
                return data_err(format!("{}: feature shape {:?}", e.trial_id, values.shape()));
            }
            let tensor = NeuralFeatureTensor::new(values)?;
            let targets = read_array2(&base.join(&e.audio_file), Some(N_ACOUSTIC))?
                .t()
                .mapv(f64::from);
            if targets.nrows() != tensor.n_frames() {
                return data_err(format!("{}: features and targets differ in length", e.trial_id));
            }
            let provenance = match (e.source_trial, e.audio_donor_trial) {
                (Some(source_trial), Some(audio_donor_trial)) => Some(Provenance {
                    source_trial,
                    audio_donor_trial,
                }),
                (None, None) => None,
                _ => return data_err(format!("{}: incomplete provenance", e.trial_id)),
            };
            Ok(FeatureTrial {
                trial_id: e.trial_id,
                sentence_id: e.sentence_id,
                repetition_index: e.repetition,
                block_id: e.block_id,
                features: tensor.frame_matrix(),
                targets,
                vowel_intervals: e.vowels,
                provenance,
            })
        })
        .collect::<Result<_>>()?;
    Ok(FeatureSet {
        grid: m.grid,
        vowel_inventory: m.vowel_inventory,
        trials,
    })
}
