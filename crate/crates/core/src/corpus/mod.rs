//! Dataset model, on-disk formats, fold assignment and the synthetic corpus
//! generator.

mod folds;
mod manifest;
mod synth;
pub mod tensor_io;

use std::collections::{HashMap, HashSet};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{data_err, Result};

pub use folds::{assign_folds, make_folds, split_sizes, FoldAssignment, SplitRatios};
pub use manifest::{load_corpus, write_corpus};
pub use synth::{generate_synthetic_corpus, Mapping, SynthConfig};

/// Neural features per electrode: 20 spectral bands plus the LFP feature.
pub const N_FEATURES: usize = 21;
/// Acoustic target channels: 25 Mel, 2 aperiodicity, F0, voicing.
pub const N_ACOUSTIC: usize = 29;
pub const N_MEL: usize = 25;
pub const FRAME_RATE: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridGeometry {
    pub n_x: usize,
    pub n_y: usize,
    #[serde(default = "default_n_features")]
    pub n_features: usize,
}

fn default_n_features() -> usize {
    N_FEATURES
}

impl GridGeometry {
    pub fn new(n_x: usize, n_y: usize) -> Self {
        Self {
            n_x,
            n_y,
            n_features: N_FEATURES,
        }
    }

    pub fn electrodes(&self) -> usize {
        self.n_x * self.n_y
    }

    /// `N_f = n_x · n_y · n_features`, the length of one flattened frame.
    pub fn flattened_dim(&self) -> usize {
        self.electrodes() * self.n_features
    }
}

/// Half-open frame interval `[start_frame, end_frame)` labelled with a vowel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VowelInterval {
    pub label: String,
    pub start_frame: usize,
    pub end_frame: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub trial_id: String,
    pub sentence_id: String,
    pub repetition_index: usize,
    pub block_id: String,
    /// `channels × samples` at the corpus neural rate.
    pub raw_neural: Array2<f32>,
    /// `29 × frames` acoustic features at 100 Hz.
    pub raw_audio_features: Array2<f32>,
    /// Optional microphone waveform resampled to the neural rate. Only the
    /// contamination audit reads it.
    pub audio_waveform: Option<Array1<f32>>,
    pub vowel_intervals: Vec<VowelInterval>,
}

impl Trial {
    pub fn n_frames(&self) -> usize {
        self.raw_audio_features.ncols()
    }
}

/// Validated, immutable collection of trials sharing one grid and rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    trials: Vec<Trial>,
    grid: GridGeometry,
    sample_rate_neural: f64,
    vowel_inventory: Vec<String>,
}

impl Corpus {
    pub fn new(
        trials: Vec<Trial>,
        grid: GridGeometry,
        sample_rate_neural: f64,
        vowel_inventory: Vec<String>,
    ) -> Result<Self> {
        if trials.is_empty() {
            return data_err("empty corpus");
        }
        if !(sample_rate_neural.is_finite() && sample_rate_neural > 0.0) {
            return data_err(format!("bad neural sample rate {sample_rate_neural}"));
        }
        if grid.n_features != N_FEATURES || grid.electrodes() == 0 {
            return data_err(format!("unsupported grid {grid:?}"));
        }
        let inventory: HashSet<&str> = vowel_inventory.iter().map(String::as_str).collect();
        let mut ids = HashSet::new();
        let mut reps: HashMap<(&str, usize), &str> = HashMap::new();
        for t in &trials {
            if !ids.insert(t.trial_id.as_str()) {
                return data_err(format!("duplicate trial_id {}", t.trial_id));
            }
            if let Some(other) = reps.insert((&t.sentence_id, t.repetition_index), &t.trial_id) {
                return data_err(format!(
                    "repetition {} of {} used by {} and {}",
                    t.repetition_index, t.sentence_id, other, t.trial_id
                ));
            }
            if t.raw_neural.nrows() != grid.electrodes() {
                return data_err(format!(
                    "{}: {} neural channels for a {}x{} grid",
                    t.trial_id,
                    t.raw_neural.nrows(),
                    grid.n_x,
                    grid.n_y
                ));
            }
            if t.raw_audio_features.nrows() != N_ACOUSTIC {
                return data_err(format!(
                    "{}: {} acoustic channels, expected {N_ACOUSTIC}",
                    t.trial_id,
                    t.raw_audio_features.nrows()
                ));
            }
            if let Some(w) = &t.audio_waveform {
                if w.len() != t.raw_neural.ncols() {
                    return data_err(format!(
                        "{}: audio waveform has {} samples, neural has {}",
                        t.trial_id,
                        w.len(),
                        t.raw_neural.ncols()
                    ));
                }
            }
            check_intervals(t, &inventory)?;
        }
        Ok(Self {
            trials,
            grid,
            sample_rate_neural,
            vowel_inventory,
        })
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn grid(&self) -> GridGeometry {
        self.grid
    }

    pub fn sample_rate_neural(&self) -> f64 {
        self.sample_rate_neural
    }

    pub fn frame_rate(&self) -> f64 {
        FRAME_RATE
    }

    pub fn vowel_inventory(&self) -> &[String] {
        &self.vowel_inventory
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }
}

fn check_intervals(t: &Trial, inventory: &HashSet<&str>) -> Result<()> {
    let mut sorted: Vec<&VowelInterval> = t.vowel_intervals.iter().collect();
    sorted.sort_by_key(|v| v.start_frame);
    let mut prev_end = 0;
    for v in sorted {
        if !inventory.contains(v.label.as_str()) {
            return data_err(format!("{}: vowel {:?} not in inventory", t.trial_id, v.label));
        }
        if v.start_frame >= v.end_frame || v.end_frame > t.n_frames() {
            return data_err(format!(
                "{}: vowel interval [{}, {}) outside [0, {})",
                t.trial_id,
                v.start_frame,
                v.end_frame,
                t.n_frames()
            ));
        }
        if v.start_frame < prev_end {
            return data_err(format!("{}: overlapping vowel intervals", t.trial_id));
        }
        prev_end = v.end_frame;
    }
    Ok(())
}
