use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::tensor_io::{read_array2, read_tensor, write_array2, write_tensor};
use super::{Corpus, GridGeometry, Trial, VowelInterval, FRAME_RATE, N_ACOUSTIC};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    grid: GridGeometry,
    sample_rate_neural: f64,
    frame_rate: f64,
    vowel_inventory: Vec<String>,
    trials: Vec<TrialEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrialEntry {
    trial_id: String,
    sentence_id: String,
    repetition: usize,
    block_id: String,
    neural_file: String,
    audio_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audio_wave_file: Option<String>,
    vowels: Vec<VowelInterval>,
}

fn manifest_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Reads a JSON manifest and every tensor it references. Relative tensor
/// paths resolve against the manifest's directory.
pub fn load_corpus(manifest_path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let m: ManifestFile = serde_json::from_str(&text).map_err(|e| manifest_err(manifest_path, e.to_string()))?;
    if (m.frame_rate - FRAME_RATE).abs() > 1e-9 {
        return Err(manifest_err(
            manifest_path,
            format!("frame rate {} Hz, only 100 Hz is supported", m.frame_rate),
        ));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let resolve = |f: &str| -> PathBuf { base.join(f) };
    let mut trials = Vec::with_capacity(m.trials.len());
    for e in m.trials {
        let raw_neural = read_array2(&resolve(&e.neural_file), Some(m.grid.electrodes()))?;
        let raw_audio_features = read_array2(&resolve(&e.audio_file), Some(N_ACOUSTIC))?;
        let audio_waveform = match &e.audio_wave_file {
            Some(f) => {
                let path = resolve(f);
                let (shape, data) = read_tensor(&path)?;
                if shape.len() != 1 {
                    return Err(Error::TensorFile {
                        path,
                        detail: format!("waveform must be rank 1, got {shape:?}"),
                    });
                }
                Some(Array1::from_vec(data))
            }
            None => None,
        };
        trials.push(Trial {
            trial_id: e.trial_id,
            sentence_id: e.sentence_id,
            repetition_index: e.repetition,
            block_id: e.block_id,
            raw_neural,
            raw_audio_features,
            audio_waveform,
            vowel_intervals: e.vowels,
        });
    }
    Corpus::new(trials, m.grid, m.sample_rate_neural, m.vowel_inventory)
}

/// Writes `manifest.json` plus `neural/`, `audio/` (and `wave/` when present)
/// tensor files under `dir`. Returns the manifest path.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<PathBuf> {
    for sub in ["neural", "audio", "wave"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut entries = Vec::with_capacity(corpus.len());
    for t in corpus.trials() {
        if t.trial_id.contains(['/', '\\']) || t.trial_id.starts_with('.') {
            return Err(Error::Data(format!("trial id {:?} is not a file name", t.trial_id)));
        }
        let neural_file = format!("neural/{}.bin", t.trial_id);
        let audio_file = format!("audio/{}.bin", t.trial_id);
        write_array2(&dir.join(&neural_file), &t.raw_neural)?;
        write_array2(&dir.join(&audio_file), &t.raw_audio_features)?;
        let audio_wave_file = match &t.audio_waveform {
            Some(w) => {
                let f = format!("wave/{}.bin", t.trial_id);
                write_tensor(&dir.join(&f), &[w.len()], w.as_slice().expect("contiguous"))?;
                Some(f)
            }
            None => None,
        };
        entries.push(TrialEntry {
            trial_id: t.trial_id.clone(),
            sentence_id: t.sentence_id.clone(),
            repetition: t.repetition_index,
            block_id: t.block_id.clone(),
            neural_file,
            audio_file,
            audio_wave_file,
            vowels: t.vowel_intervals.clone(),
        });
    }
    let m = ManifestFile {
        grid: corpus.grid(),
        sample_rate_neural: corpus.sample_rate_neural(),
        frame_rate: FRAME_RATE,
        vowel_inventory: corpus.vowel_inventory().to_vec(),
        trials: entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
