//! Acoustic contamination audit: correlation between audio and neural
//! spectrograms over 60–200 Hz, the mean diagonal value (MDV) statistic, and
//! a circular-shift surrogate test.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{data_err, Result};
use crate::rng_for;
use crate::sigproc::{power_spectrogram, FrameGrid, HOP_SECONDS, WINDOW_SECONDS};

pub const ANALYSIS_LOW_HZ: f64 = 60.0;
pub const ANALYSIS_HIGH_HZ: f64 = 200.0;

/// Smallest surrogate shift in frames: one analysis window.
pub fn min_shift_frames() -> usize {
    (WINDOW_SECONDS / HOP_SECONDS).round() as usize
}

/// `F × T` power spectrogram restricted to bins in `[60, 200]` Hz, computed
/// with the same 200-ms / 10-ms Hamming STFT as the neural features.
pub fn analysis_spectrogram(x: &[f64], fs: f64) -> Result<Array2<f64>> {
    if fs < 2.0 * ANALYSIS_HIGH_HZ {
        return data_err(format!("sample rate {fs} Hz cannot resolve 200 Hz"));
    }
    let grid = FrameGrid::new(x.len(), fs)?;
    let spec = power_spectrogram(x, &grid);
    let rows: Vec<usize> = (0..=grid.nfft() / 2)
        .filter(|&j| (ANALYSIS_LOW_HZ..=ANALYSIS_HIGH_HZ).contains(&grid.bin_hz(j)))
        .collect();
    Ok(Array2::from_shape_fn((rows.len(), grid.n_frames), |(r, k)| {
        spec[k][rows[r]]
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    /// Entry `(f, f')`: Pearson correlation of audio row `f` with neural row `f'`.
    pub values: Array2<f64>,
    /// Set when a constant row forced some entries to 0.
    pub constant_rows: bool,
}

/// Rows scaled to zero mean and unit population variance; constant rows
/// become zeros.
fn standardize_rows(m: ArrayView2<'_, f64>) -> (Array2<f64>, bool) {
    let mut out = m.to_owned();
    let mut constant = false;
    for mut row in out.outer_iter_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd == 0.0 || sd <= 1e-12 * mean.abs() {
            constant = true;
            row.fill(0.0);
        } else {
            row.mapv_inplace(|v| (v - mean) / sd);
        }
    }
    (out, constant)
}

fn check_pair(audio: ArrayView2<'_, f64>, neural: ArrayView2<'_, f64>) -> Result<()> {
    if audio.dim() != neural.dim() {
        return data_err(format!(
            "spectrogram shapes differ: {:?} vs {:?}",
            audio.dim(),
            neural.dim()
        ));
    }
    if audio.ncols() < 3 || audio.nrows() == 0 {
        return data_err(format!("spectrogram {:?} too small", audio.dim()));
    }
    Ok(())
}

pub fn correlation_matrix(audio: ArrayView2<'_, f64>, neural: ArrayView2<'_, f64>) -> Result<CorrelationMatrix> {
    check_pair(audio, neural)?;
    let (za, ca) = standardize_rows(audio);
    let (zn, cn) = standardize_rows(neural);
    let values = za.dot(&zn.t()) / audio.ncols() as f64;
    Ok(CorrelationMatrix {
        values,
        constant_rows: ca || cn,
    })
}

/// Mean of the diagonal of a square matrix.
pub fn mdv(m: ArrayView2<'_, f64>) -> Result<f64> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return data_err(format!("MDV needs a non-empty square matrix, got {:?}", m.dim()));
    }
    Ok(m.diag().sum() / m.nrows() as f64)
}

/// One block of the audit (a row of the published table format).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContaminationReport {
    pub block_id: String,
    /// Mean over channels of the per-channel MDV; this is the tested statistic.
    pub mdv: f64,
    /// Largest per-channel MDV.
    pub mdv_max: f64,
    pub channel_mdv: Vec<f64>,
    pub p_value: f64,
    pub n_surrogates: usize,
    pub constant_rows: bool,
    /// Per-test threshold after Bonferroni correction, once applied.
    pub bonferroni_alpha: Option<f64>,
    pub contaminated: Option<bool>,
}

/// Mean-over-channels MDV for every circular shift `s` of the neural
/// spectrograms (neural frame `t + s` paired with audio frame `t`).
fn mdv_by_shift(za: &Array2<f64>, zn: &[Array2<f64>]) -> Vec<f64> {
    let (f, t) = za.dim();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(t);
    let inv = planner.plan_fft_inverse(t);
    let spectrum = |row: ndarray::ArrayView1<'_, f64>| {
        let mut buf: Vec<Complex<f64>> = row.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fwd.process(&mut buf);
        buf
    };
    let audio_spectra: Vec<Vec<Complex<f64>>> = za.outer_iter().map(spectrum).collect();
    let mut acc = vec![Complex::new(0.0, 0.0); t];
    for channel in zn {
        for (a, row) in audio_spectra.iter().zip(channel.outer_iter()) {
            let b = spectrum(row);
            for ((s, x), y) in acc.iter_mut().zip(a).zip(&b) {
                *s += x.conj() * y;
            }
        }
    }
    inv.process(&mut acc);
    // The inverse transform is unnormalized: divide by t once for the IFFT
    // and once for the correlation average.
    let denom = (t * t * f * zn.len()) as f64;
    acc.iter().map(|c| c.re / denom).collect()
}

/// Surrogate test on precomputed `F × T` spectrograms, one per neural
/// channel. Each surrogate circularly shifts every neural channel by the same
/// offset drawn uniformly from `[w, T − w]` frames, `w` being one window.
pub fn surrogate_test(
    block_id: &str,
    audio: ArrayView2<'_, f64>,
    neural: &[ArrayView2<'_, f64>],
    n_surrogates: usize,
    seed: u64,
) -> Result<ContaminationReport> {
    if n_surrogates == 0 {
        return data_err("n_surrogates must be at least 1");
    }
    if neural.is_empty() {
        return data_err("no neural channels");
    }
    for n in neural {
        check_pair(audio, *n)?;
    }
    let t = audio.ncols();
    let w = min_shift_frames();
    if t < 2 * w {
        return data_err(format!("{t} frames cannot hold a shift of at least {w} frames"));
    }
    let (za, ca) = standardize_rows(audio);
    let mut constant_rows = ca;
    let zn: Vec<Array2<f64>> = neural
        .iter()
        .map(|n| {
            let (z, c) = standardize_rows(*n);
            constant_rows |= c;
            z
        })
        .collect();
    let channel_mdv: Vec<f64> = zn.iter().map(|z| (&za * z).sum() / (t * za.nrows()) as f64).collect();
    let observed = channel_mdv.iter().sum::<f64>() / channel_mdv.len() as f64;
    let by_shift = mdv_by_shift(&za, &zn);
    let exceed = (0..n_surrogates)
        .filter(|&i| {
            let shift = rng_for(seed, i as u64).gen_range(w..=t - w);
            by_shift[shift] >= observed - 1e-12
        })
        .count();
    Ok(ContaminationReport {
        block_id: block_id.to_string(),
        mdv: observed,
        mdv_max: channel_mdv.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        channel_mdv,
        p_value: (1 + exceed) as f64 / (n_surrogates + 1) as f64,
        n_surrogates,
        constant_rows,
        bonferroni_alpha: None,
        contaminated: None,
    })
}

/// Audit of one block from the audio waveform and raw neural channels, both
/// at the neural sample rate.
pub fn audit_block(
    block_id: &str,
    audio_wave: &[f64],
    neural_raw: ArrayView2<'_, f64>,
    fs: f64,
    n_surrogates: usize,
    seed: u64,
) -> Result<ContaminationReport> {
    if neural_raw.ncols() != audio_wave.len() {
        return data_err("audio and neural recordings differ in length");
    }
    let audio = analysis_spectrogram(audio_wave, fs)?;
    let neural: Vec<Array2<f64>> = neural_raw
        .outer_iter()
        .map(|row| analysis_spectrogram(&row.to_vec(), fs))
        .collect::<Result<_>>()?;
    let views: Vec<_> = neural.iter().map(|n| n.view()).collect();
    surrogate_test(block_id, audio.view(), &views, n_surrogates, seed)
}

/// Flags each report contaminated iff `p < alpha / reports.len()`.
pub fn bonferroni_report(reports: &[ContaminationReport], alpha: f64) -> Result<Vec<ContaminationReport>> {
    if reports.is_empty() {
        return data_err("no reports to correct");
    }
    let threshold = alpha / reports.len() as f64;
    Ok(reports
        .iter()
        .map(|r| ContaminationReport {
            bonferroni_alpha: Some(threshold),
            contaminated: Some(r.p_value < threshold),
            ..r.clone()
        })
        .collect())
}

/// Plain-text table with columns Block, MDV, p.
pub fn format_table(reports: &[ContaminationReport]) -> String {
    let mut s = format!("{:<12} {:>8} {:>8}\n", "Block", "MDV", "p");
    for r in reports {
        let mark = if r.contaminated == Some(true) { " *" } else { "" };
        s.push_str(&format!("{:<12} {:>8.3} {:>8.3}{mark}\n", r.block_id, r.mdv, r.p_value));
    }
    if let Some(a) = reports.first().and_then(|r| r.bonferroni_alpha) {
        s.push_str(&format!("* p < {a:.5} (Bonferroni)\n"));
    }
    s
}
