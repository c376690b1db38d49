use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{data_err, Result};

pub const WINDOW_SECONDS: f64 = 0.2;
pub const HOP_SECONDS: f64 = 0.01;

/// Framing of a signal: a `round(0.2·fs)`-sample window starting at
/// `round(k·fs/100)` for every `k` whose window fits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameGrid {
    pub fs: f64,
    pub window: usize,
    pub n_frames: usize,
}

impl FrameGrid {
    pub fn new(n_samples: usize, fs: f64) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return data_err(format!("bad sample rate {fs}"));
        }
        let window = (WINDOW_SECONDS * fs).round() as usize;
        if window < 2 || n_samples < window {
            return data_err(format!(
                "signal of {n_samples} samples is shorter than one {window}-sample window"
            ));
        }
        let hop = HOP_SECONDS * fs;
        // Starting estimate, then exact correction for rounding.
        let mut n = ((n_samples - window) as f64 / hop).floor() as usize + 1;
        let start = |k: usize| (k as f64 * hop).round() as usize;
        while n > 0 && start(n - 1) + window > n_samples {
            n -= 1;
        }
        while start(n) + window <= n_samples {
            n += 1;
        }
        Ok(Self {
            fs,
            window,
            n_frames: n,
        })
    }

    pub fn start(&self, k: usize) -> usize {
        (k as f64 * HOP_SECONDS * self.fs).round() as usize
    }

    /// Sample index at the centre of frame `k`.
    pub fn centre(&self, k: usize) -> usize {
        self.start(k) + self.window / 2
    }

    /// FFT length: the window zero-padded to twice its length.
    pub fn nfft(&self) -> usize {
        2 * self.window
    }

    pub fn bin_hz(&self, j: usize) -> f64 {
        j as f64 * self.fs / self.nfft() as f64
    }
}

/// Symmetric Hamming window.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// One-sided power spectral density per frame: `n_frames` rows of
/// `nfft/2 + 1` bins, scaled by `1/(fs·Σw²)` and doubled away from DC and
/// Nyquist.
pub fn power_spectrogram(x: &[f64], grid: &FrameGrid) -> Vec<Vec<f64>> {
    let w = hamming(grid.window);
    let nfft = grid.nfft();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let scale = 1.0 / (grid.fs * w.iter().map(|v| v * v).sum::<f64>());
    let half = nfft / 2;
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    (0..grid.n_frames)
        .map(|k| {
            let s = grid.start(k);
            for (i, b) in buf.iter_mut().enumerate() {
                let v = if i < grid.window { x[s + i] * w[i] } else { 0.0 };
                *b = Complex::new(v, 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            (0..=half)
                .map(|j| {
                    let p = buf[j].norm_sqr() * scale;
                    if j == 0 || j == half {
                        p
                    } else {
                        2.0 * p
                    }
                })
                .collect()
        })
        .collect()
}
