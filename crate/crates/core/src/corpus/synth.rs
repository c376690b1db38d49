use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Corpus, GridGeometry, Trial, VowelInterval, N_ACOUSTIC, N_FEATURES};
use crate::error::{config_err, Result};
use crate::rng_for;

/// How latent acoustic projections drive band power.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mapping {
    Linear,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_sentences: usize,
    pub reps_per_sentence: usize,
    pub grid: GridGeometry,
    /// Inclusive range of frames per trial.
    pub frames_range: (usize, usize),
    /// Signal-to-noise ratio over 0–200 Hz on signal-carrying channels.
    pub snr_db: f64,
    pub mapping: Mapping,
    pub seed: u64,
    pub sample_rate: f64,
    /// Electrodes that carry signal; the rest hold noise of equal in-band
    /// power. `None` means all.
    pub active_channels: Option<Vec<usize>>,
    pub vowel_inventory: Vec<String>,
    pub vowels_per_sentence: usize,
    /// Strength of the per-repetition time warp, below 0.45.
    pub time_jitter: f64,
    pub n_blocks: usize,
    pub audio_waveform: bool,
    /// When set, the audio waveform is added to every neural channel at this
    /// level relative to the channel RMS.
    pub contamination_db: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_sentences: 20,
            reps_per_sentence: 3,
            grid: GridGeometry::new(4, 8),
            frames_range: (100, 200),
            snr_db: 40.0,
            mapping: Mapping::Linear,
            seed: 0,
            sample_rate: 1000.0,
            active_channels: None,
            vowel_inventory: ["a", "e", "i", "o", "u"].map(String::from).to_vec(),
            vowels_per_sentence: 3,
            time_jitter: 0.15,
            n_blocks: 3,
            audio_waveform: false,
            contamination_db: None,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.frames_range;
        if self.n_sentences == 0 || self.reps_per_sentence == 0 {
            return config_err("n_sentences and reps_per_sentence must be at least 1");
        }
        if lo < 20 || lo > hi {
            return config_err(format!(
                "frames_range {:?} must satisfy 20 <= lo <= hi",
                self.frames_range
            ));
        }
        if self.sample_rate < 400.0 {
            return config_err(format!("sample_rate {} below 400 Hz", self.sample_rate));
        }
        if self.grid.n_features != N_FEATURES || self.grid.electrodes() == 0 {
            return config_err(format!("unsupported grid {:?}", self.grid));
        }
        if let Some(a) = &self.active_channels {
            if a.iter().any(|&c| c >= self.grid.electrodes()) {
                return config_err("active channel outside the grid");
            }
        }
        if self.vowel_inventory.is_empty() && self.vowels_per_sentence > 0 {
            return config_err("vowel_inventory is empty");
        }
        if !(0.0..0.45).contains(&self.time_jitter) {
            return config_err("time_jitter must lie in [0, 0.45)");
        }
        if self.n_blocks == 0 || !self.snr_db.is_finite() {
            return config_err("n_blocks must be positive and snr_db finite");
        }
        Ok(())
    }
}

const N_BANDS: usize = 20;
const UV: usize = 28;
const MOD_DEPTH: f64 = 0.3;
const LFP_GAIN: f64 = 1.0;

/// Typical spread of each acoustic channel: decaying Mel scales, then
/// aperiodicity, F0 and voicing.
fn channel_scale(c: usize) -> f64 {
    match c {
        0..=24 => 0.6 / (1.0 + 0.15 * c as f64),
        25 | 26 => 0.3,
        27 => 0.4,
        _ => 0.5,
    }
}

fn carrier_hz(band: usize) -> f64 {
    if band == 0 {
        7.5
    } else {
        10.0 * band as f64 + 5.0
    }
}

struct SentenceSpec {
    /// Per channel (except voicing): `(amplitude, cycles per sentence, phase)`.
    components: Vec<Vec<(f64, f64, f64)>>,
    /// `(vowel index, centre, half width)` in normalized time.
    vowels: Vec<(usize, f64, f64)>,
}

fn plateau(u: f64, centre: f64, half: f64) -> f64 {
    let d = (u - centre).abs();
    if d <= 0.6 * half {
        1.0
    } else if d >= half {
        0.0
    } else {
        let x = (half - d) / (0.4 * half);
        x * x * (3.0 - 2.0 * x)
    }
}

impl SentenceSpec {
    fn draw<R: Rng>(rng: &mut R, n_vowels: usize, inventory: usize) -> Self {
        let components = (0..UV)
            .map(|c| {
                let k = rng.gen_range(3..=5);
                (0..k)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        let amp = channel_scale(c) * (2.0 / k as f64).sqrt() * z;
                        (amp, rng.gen_range(0.5..4.0), rng.gen_range(0.0..2.0 * PI))
                    })
                    .collect()
            })
            .collect();
        let half = 0.3 / n_vowels.max(1) as f64;
        let vowels = (0..n_vowels)
            .map(|v| {
                let centre = (v as f64 + 0.5) / n_vowels as f64 + rng.gen_range(-0.03..0.03);
                (rng.gen_range(0..inventory), centre, half)
            })
            .collect();
        Self { components, vowels }
    }

    fn value(&self, u: f64, prototypes: &[Vec<f64>], out: &mut [f64]) {
        for (c, comps) in self.components.iter().enumerate() {
            out[c] = comps.iter().map(|&(a, f, p)| a * (2.0 * PI * f * u + p).sin()).sum();
        }
        out[UV] = 0.0;
        for &(label, centre, half) in &self.vowels {
            let env = plateau(u, centre, half);
            if env > 0.0 {
                for c in 0..UV {
                    out[c] += env * prototypes[label][c];
                }
                out[UV] += env;
            }
        }
    }
}

/// Frame-domain warp `u(τ) = τ + j·Σ b_m sin(π m τ)/(π m)`, monotone for
/// `j < 0.45` and fixing both endpoints.
fn warp(tau: f64, jitter: f64, b: &[f64; 2]) -> f64 {
    tau + jitter
        * b.iter()
            .enumerate()
            .map(|(m, bm)| {
                let k = PI * (m + 1) as f64;
                bm * (k * tau).sin() / k
            })
            .sum::<f64>()
}

/// Linear interpolation of a frame-rate series onto sample `i`.
fn at_sample(series: &[f64], i: usize, centre0: f64, hop: f64) -> f64 {
    let pos = ((i as f64 - centre0) / hop).clamp(0.0, (series.len() - 1) as f64);
    let k = pos.floor() as usize;
    let frac = pos - k as f64;
    if k + 1 < series.len() {
        series[k] * (1.0 - frac) + series[k + 1] * frac
    } else {
        series[k]
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// Builds a corpus whose neural band powers are a noisy image of smooth
/// acoustic trajectories. Identical configurations give identical corpora.
pub fn generate_synthetic_corpus(config: &SynthConfig) -> Result<Corpus> {
    config.validate()?;
    let fs = config.sample_rate;
    let grid = config.grid;
    let n_e = grid.electrodes();
    let hop = fs / 100.0;
    let win = (0.2 * fs).round() as usize;
    let centre0 = (win / 2) as f64;

    let mut global = rng_for(config.seed, 0);
    let prototypes: Vec<Vec<f64>> = (0..config.vowel_inventory.len())
        .map(|_| {
            (0..UV)
                .map(|c| 1.5 * channel_scale(c) * global.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let norm: Vec<f64> = (0..N_ACOUSTIC).map(|c| 1.5 * channel_scale(c)).collect();
    // mixing[e][b] projects the normalized acoustic vector onto band b
    // (b = 20 drives the slow LFP component).
    let mixing: Vec<Vec<Vec<f64>>> = (0..n_e)
        .map(|_| {
            (0..=N_BANDS)
                .map(|_| {
                    (0..N_ACOUSTIC)
                        .map(|c| global.sample::<f64, _>(StandardNormal) / (N_ACOUSTIC as f64).sqrt() / norm[c])
                        .collect()
                })
                .collect()
        })
        .collect();
    let phases: Vec<Vec<f64>> = (0..n_e)
        .map(|_| (0..N_BANDS).map(|_| global.gen_range(0.0..2.0 * PI)).collect())
        .collect();
    let active: Vec<bool> = match &config.active_channels {
        Some(a) => (0..n_e).map(|e| a.contains(&e)).collect(),
        None => vec![true; n_e],
    };
    // In-band signal power: unit mean power per band plus the LFP term.
    let signal_power = N_BANDS as f64 + 0.5 * LFP_GAIN * LFP_GAIN;
    let in_band = 200.0 / (fs / 2.0);
    let noise_var = |snr_db: f64| signal_power / 10f64.powf(snr_db / 10.0) / in_band;
    let active_noise = noise_var(config.snr_db).sqrt();
    let idle_noise = noise_var(0.0).sqrt();

    let mut trials = Vec::with_capacity(config.n_sentences * config.reps_per_sentence);
    for s in 0..config.n_sentences {
        let mut srng = rng_for(config.seed, 1 + s as u64);
        let spec = SentenceSpec::draw(&mut srng, config.vowels_per_sentence, config.vowel_inventory.len());
        for r in 0..config.reps_per_sentence {
            let mut rng = rng_for(config.seed, 1_000_000 + (s * 1000 + r) as u64);
            let t_len = rng.gen_range(config.frames_range.0..=config.frames_range.1);
            let b = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let u: Vec<f64> = (0..t_len)
                .map(|t| warp(t as f64 / (t_len - 1) as f64, config.time_jitter, &b))
                .collect();

            let mut audio = Array2::<f32>::zeros((N_ACOUSTIC, t_len));
            let mut frame = vec![0.0; N_ACOUSTIC];
            let mut acoustic = vec![vec![0.0; N_ACOUSTIC]; t_len];
            for (t, &ut) in u.iter().enumerate() {
                spec.value(ut, &prototypes, &mut frame);
                for c in 0..N_ACOUSTIC {
                    audio[[c, t]] = frame[c] as f32;
                }
                acoustic[t].copy_from_slice(&frame);
            }
            let vowel_intervals = spec
                .vowels
                .iter()
                .filter_map(|&(label, centre, half)| {
                    let inside: Vec<usize> = (0..t_len).filter(|&t| plateau(u[t], centre, half) >= 0.5).collect();
                    Some(VowelInterval {
                        label: config.vowel_inventory[label].clone(),
                        start_frame: *inside.first()?,
                        end_frame: *inside.last()? + 1,
                    })
                })
                .collect();

            let n_samples = ((t_len - 1) as f64 * hop).round() as usize + win;
            let mut neural = vec![vec![0.0; n_samples]; n_e];
            for (e, x) in neural.iter_mut().enumerate() {
                if active[e] {
                    for (band, mix) in mixing[e].iter().enumerate() {
                        let drive: Vec<f64> = acoustic
                            .iter()
                            .map(|a| {
                                let s: f64 = a.iter().zip(mix).map(|(v, m)| v * m).sum();
                                match config.mapping {
                                    Mapping::Linear => s,
                                    Mapping::Tanh => (1.5 * s).tanh(),
                                }
                            })
                            .collect();
                        if band == N_BANDS {
                            for (i, xi) in x.iter_mut().enumerate() {
                                *xi += LFP_GAIN * at_sample(&drive, i, centre0, hop);
                            }
                            continue;
                        }
                        let amp: Vec<f64> = drive
                            .iter()
                            .map(|s| (2.0 * (1.0 + MOD_DEPTH * s.max(-3.0))).sqrt())
                            .collect();
                        let w = 2.0 * PI * carrier_hz(band) / fs;
                        let ph = phases[e][band];
                        for (i, xi) in x.iter_mut().enumerate() {
                            *xi += at_sample(&amp, i, centre0, hop) * (w * i as f64 + ph).sin();
                        }
                    }
                }
                let sd = if active[e] { active_noise } else { idle_noise };
                for xi in x.iter_mut() {
                    *xi += sd * rng.sample::<f64, _>(StandardNormal);
                }
            }

            let waveform = (config.audio_waveform || config.contamination_db.is_some()).then(|| {
                let f0: Vec<f64> = acoustic
                    .iter()
                    .map(|a| 120.0 + 30.0 * (a[27] / norm[27]).tanh())
                    .collect();
                let level: Vec<f64> = acoustic.iter().map(|a| 0.2 + a[UV]).collect();
                let mut phase = 0.0;
                (0..n_samples)
                    .map(|i| {
                        phase += 2.0 * PI * at_sample(&f0, i, centre0, hop) / fs;
                        let harmonics: f64 = (1..=3).map(|h| (h as f64 * phase).sin() / h as f64).sum();
                        at_sample(&level, i, centre0, hop) * harmonics + 0.01 * rng.sample::<f64, _>(StandardNormal)
                    })
                    .collect::<Vec<f64>>()
            });
            if let (Some(db), Some(wave)) = (config.contamination_db, &waveform) {
                let wave_rms = rms(wave).max(1e-12);
                for x in neural.iter_mut() {
                    let gain = 10f64.powf(db / 20.0) * rms(x) / wave_rms * rng.gen_range(0.5..1.5);
                    for (xi, wi) in x.iter_mut().zip(wave) {
                        *xi += gain * wi;
                    }
                }
            }

            let raw_neural = Array2::from_shape_fn((n_e, n_samples), |(e, i)| neural[e][i] as f32);
            trials.push(Trial {
                trial_id: format!("s{s:03}_r{r}"),
                sentence_id: format!("sent{s:03}"),
                repetition_index: r,
                block_id: format!("B{}", s % config.n_blocks + 1),
                raw_neural,
                raw_audio_features: audio,
                audio_waveform: waveform
                    .filter(|_| config.audio_waveform)
                    .map(|w| Array1::from_iter(w.into_iter().map(|v| v as f32))),
                vowel_intervals,
            });
        }
    }
    Corpus::new(trials, grid, fs, config.vowel_inventory.clone())
}
