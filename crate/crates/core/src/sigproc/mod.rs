//! Raw neural signals to 21 features per electrode at 100 Hz: twenty 10-Hz
//! band powers from a 200-ms Hamming STFT plus a 0.5–5 Hz LFP trace.

mod filter;
mod stft;

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::corpus::{GridGeometry, N_FEATURES};
use crate::error::{data_err, Error, Result};

pub use filter::{butterworth, filtfilt, Biquad, Kind};
pub use stft::{hamming, power_spectrogram, FrameGrid, HOP_SECONDS, WINDOW_SECONDS};

pub const N_BANDS: usize = 20;
pub const BAND_HZ: f64 = 10.0;
pub const LFP_LOW_HZ: f64 = 0.5;
pub const LFP_HIGH_HZ: f64 = 5.0;
pub const LFP_ORDER: usize = 4;
pub const STD_FLOOR: f64 = 1e-8;

/// `electrodes × 21 × T` features; feature 0..19 are bands `[10b, 10b+10)` Hz,
/// feature 20 is the LFP trace. Electrodes are in grid row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralFeatureTensor {
    pub values: Array3<f64>,
}

impl NeuralFeatureTensor {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        if values.shape()[1] != N_FEATURES || values.shape()[2] == 0 {
            return data_err(format!("feature tensor shape {:?}", values.shape()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return data_err("non-finite neural feature");
        }
        Ok(Self { values })
    }

    pub fn electrodes(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_frames(&self) -> usize {
        self.values.shape()[2]
    }

    /// `T × (electrodes·21)` with column `e·21 + f`.
    pub fn frame_matrix(&self) -> Array2<f64> {
        let (e, f, t) = self.values.dim();
        let mut out = Array2::zeros((t, e * f));
        for ((ei, fi, ti), v) in self.values.indexed_iter() {
            out[[ti, ei * f + fi]] = *v;
        }
        out
    }

    pub fn from_frame_matrix(m: ArrayView2<'_, f64>, electrodes: usize) -> Result<Self> {
        let (t, nf) = m.dim();
        if nf != electrodes * N_FEATURES {
            return data_err(format!("{nf} columns for {electrodes} electrodes"));
        }
        Self::new(Array3::from_shape_fn((electrodes, N_FEATURES, t), |(e, f, ti)| {
            m[[ti, e * N_FEATURES + f]]
        }))
    }
}

/// Subtracts the across-channel mean at every sample.
pub fn common_average_reference(raw: ArrayView2<'_, f64>) -> Array2<f64> {
    let mean = raw.mean_axis(Axis(0)).expect("at least one channel");
    &raw - &mean
}

fn check_rate(fs: f64) -> Result<()> {
    if !(fs.is_finite() && fs >= 2.0 * BAND_HZ * N_BANDS as f64) {
        return data_err(format!("sample rate {fs} Hz cannot resolve bands up to 200 Hz"));
    }
    Ok(())
}

/// Band index of each one-sided bin, by bin centre in half-open 10-Hz
/// intervals; bins at or above 200 Hz map to `None`.
fn bin_bands(grid: &FrameGrid) -> Vec<Option<usize>> {
    (0..=grid.nfft() / 2)
        .map(|j| {
            let b = (grid.bin_hz(j) / BAND_HZ).floor() as usize;
            (b < N_BANDS).then_some(b)
        })
        .collect()
}

/// `20 × T` mean PSD per 10-Hz band.
pub fn band_features(x: &[f64], fs: f64) -> Result<Array2<f64>> {
    check_rate(fs)?;
    let grid = FrameGrid::new(x.len(), fs)?;
    let spec = power_spectrogram(x, &grid);
    let bands = bin_bands(&grid);
    let mut counts = [0usize; N_BANDS];
    for b in bands.iter().flatten() {
        counts[*b] += 1;
    }
    let mut out = Array2::zeros((N_BANDS, grid.n_frames));
    for (k, frame) in spec.iter().enumerate() {
        for (p, b) in frame.iter().zip(&bands) {
            if let Some(b) = b {
                out[[*b, k]] += p / counts[*b] as f64;
            }
        }
    }
    Ok(out)
}

/// Zero-phase 0.5–5 Hz band-pass (4th-order Butterworth low- and high-pass),
/// sampled at every frame centre.
pub fn lfp_feature(x: &[f64], fs: f64) -> Result<Vec<f64>> {
    if !(fs.is_finite() && fs > 2.0 * LFP_HIGH_HZ) {
        return data_err(format!("sample rate {fs} Hz too low for the LFP band"));
    }
    let grid = FrameGrid::new(x.len(), fs)?;
    let filtered = lfp_filter(x, fs);
    Ok((0..grid.n_frames).map(|k| filtered[grid.centre(k)]).collect())
}

/// The LFP band-pass on the full sample grid.
pub fn lfp_filter(x: &[f64], fs: f64) -> Vec<f64> {
    let mut sos = butterworth(LFP_ORDER, LFP_HIGH_HZ, fs, Kind::LowPass);
    sos.extend(butterworth(LFP_ORDER, LFP_LOW_HZ, fs, Kind::HighPass));
    filtfilt(&sos, x, fs.round() as usize)
}

/// CAR, then per-channel band powers and LFP stacked to `channels × 21 × T`.
pub fn assemble_features(raw: ArrayView2<'_, f64>, fs: f64, grid: GridGeometry) -> Result<NeuralFeatureTensor> {
    if raw.nrows() != grid.electrodes() {
        return data_err(format!("{} channels for a {}x{} grid", raw.nrows(), grid.n_x, grid.n_y));
    }
    check_rate(fs)?;
    let car = common_average_reference(raw);
    let frames = FrameGrid::new(raw.ncols(), fs)?.n_frames;
    let mut values = Array3::zeros((raw.nrows(), N_FEATURES, frames));
    for (c, row) in car.outer_iter().enumerate() {
        let x = row.to_vec();
        let bands = band_features(&x, fs)?;
        let lfp = lfp_feature(&x, fs)?;
        values
            .index_axis_mut(Axis(0), c)
            .slice_mut(ndarray::s![..N_BANDS, ..])
            .assign(&bands);
        for (k, v) in lfp.into_iter().enumerate() {
            values[[c, N_BANDS, k]] = v;
        }
    }
    NeuralFeatureTensor::new(values)
}

/// Per-column mean and population standard deviation (floored at 1e-8).
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Fits over the rows of every matrix (frames × columns).
    pub fn fit(mats: &[ArrayView2<'_, f64>]) -> Result<Self> {
        let Some(first) = mats.first() else {
            return data_err("cannot fit statistics on an empty training set");
        };
        let cols = first.ncols();
        let mut n = 0usize;
        let mut sum = vec![0.0; cols];
        for m in mats {
            if m.ncols() != cols {
                return data_err("inconsistent column counts in training set");
            }
            for row in m.outer_iter() {
                n += 1;
                for (s, v) in sum.iter_mut().zip(row) {
                    *s += v;
                }
            }
        }
        if n == 0 {
            return data_err("training set has no frames");
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut ss = vec![0.0; cols];
        for m in mats {
            for row in m.outer_iter() {
                for ((s, v), mu) in ss.iter_mut().zip(row).zip(&mean) {
                    *s += (v - mu) * (v - mu);
                }
            }
        }
        let std = ss.iter().map(|s| (s / n as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, m: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if m.ncols() != self.mean.len() {
            return data_err(format!("{} columns for {} statistics", m.ncols(), self.mean.len()));
        }
        let mut out = m.to_owned();
        for mut row in out.outer_iter_mut() {
            for ((v, mu), sd) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - mu) / sd;
            }
        }
        Ok(out)
    }

    pub fn invert(&self, m: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if m.ncols() != self.mean.len() {
            return data_err(format!("{} columns for {} statistics", m.ncols(), self.mean.len()));
        }
        let mut out = m.to_owned();
        for mut row in out.outer_iter_mut() {
            for ((v, mu), sd) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * sd + mu;
            }
        }
        Ok(out)
    }
}

/// Per-(electrode, feature) statistics over training tensors.
pub fn fit_stats(tensors: &[&NeuralFeatureTensor]) -> Result<FeatureStats> {
    let mats: Vec<Array2<f64>> = tensors.iter().map(|t| t.frame_matrix()).collect();
    let views: Vec<_> = mats.iter().map(|m| m.view()).collect();
    FeatureStats::fit(&views)
}

pub fn apply_zscore(t: &NeuralFeatureTensor, stats: &FeatureStats) -> Result<NeuralFeatureTensor> {
    let z = stats.apply(t.frame_matrix().view())?;
    NeuralFeatureTensor::from_frame_matrix(z.view(), t.electrodes())
}

/// Holds statistics that may be fitted exactly once, so that evaluation
/// splits can only reuse the training fit.
#[derive(Clone, Debug, Default)]
pub struct Standardizer {
    stats: Option<FeatureStats>,
}

impl Standardizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fit(&mut self, mats: &[ArrayView2<'_, f64>]) -> Result<&FeatureStats> {
        if self.stats.is_some() {
            return Err(Error::Data(
                "statistics already fitted; refitting on another split would leak".into(),
            ));
        }
        Ok(self.stats.insert(FeatureStats::fit(mats)?))
    }

    pub fn stats(&self) -> Option<&FeatureStats> {
        self.stats.as_ref()
    }

    pub fn apply(&self, m: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match &self.stats {
            Some(s) => s.apply(m),
            None => data_err("statistics used before fitting"),
        }
    }
}
