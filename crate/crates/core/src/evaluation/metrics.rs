use std::f64::consts::LN_10;

use ndarray::{s, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::augment::dtw_align;
use crate::corpus::{N_ACOUSTIC, N_MEL};
use crate::error::{data_err, Result};

/// `(10 / ln 10)·√2`, the dB scale of one unit of Euclidean Mel distance.
pub const MCD_SCALE: f64 = 10.0 / LN_10 * std::f64::consts::SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pcc {
    pub r: f64,
    /// Either input was constant; `r` is then 0.
    pub constant: bool,
}

/// Pearson correlation with the constant-input flag.
pub fn pcc_checked(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<Pcc> {
    if x.len() != y.len() {
        return data_err(format!("pcc length mismatch {} vs {}", x.len(), y.len()));
    }
    if x.len() < 2 {
        return data_err("pcc needs at least two samples");
    }
    let n = x.len() as f64;
    let mx = x.sum() / n;
    let my = y.sum() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(Pcc { r: 0.0, constant: true });
    }
    Ok(Pcc {
        r: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        constant: false,
    })
}

pub fn pcc(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    Ok(pcc_checked(x, y)?.r)
}

/// Channel groups of the 29-dimensional acoustic vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelGroup {
    All,
    Mel,
    Ap,
    F0,
    Uv,
}

impl ChannelGroup {
    pub fn channels(self) -> std::ops::Range<usize> {
        match self {
            Self::All => 0..N_ACOUSTIC,
            Self::Mel => 0..N_MEL,
            Self::Ap => 25..27,
            Self::F0 => 27..28,
            Self::Uv => 28..29,
        }
    }
}

/// Per-channel PCC over frames (`T × 29` inputs), averaged over a group.
pub fn sentence_pcc(a_hat: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>, group: ChannelGroup) -> Result<f64> {
    if a_hat.dim() != a.dim() || a.ncols() != N_ACOUSTIC {
        return data_err(format!("sentence_pcc shapes {:?} vs {:?}", a_hat.dim(), a.dim()));
    }
    let range = group.channels();
    let n = range.len() as f64;
    let mut total = 0.0;
    for c in range {
        total += pcc(a_hat.column(c), a.column(c))?;
    }
    Ok(total / n)
}

fn frame_distance(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    MCD_SCALE * x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Frame-averaged Mel-cepstral distortion over all 25 coefficients.
/// Inputs are `T × 25`.
pub fn mcd(mel_hat: ArrayView2<'_, f64>, mel: ArrayView2<'_, f64>) -> Result<f64> {
    if mel_hat.dim() != mel.dim() || mel.ncols() != N_MEL {
        return data_err(format!("mcd shapes {:?} vs {:?}", mel_hat.dim(), mel.dim()));
    }
    if mel.nrows() == 0 {
        return data_err("mcd needs at least one frame");
    }
    let total: f64 = mel_hat
        .outer_iter()
        .zip(mel.outer_iter())
        .map(|(x, y)| frame_distance(x, y))
        .sum();
    Ok(total / mel.nrows() as f64)
}

/// MCD along the DTW alignment of two Mel sequences of any lengths, averaged
/// over aligned pairs.
pub fn dtw_mcd(mel_hat: ArrayView2<'_, f64>, mel: ArrayView2<'_, f64>) -> Result<f64> {
    if mel_hat.ncols() != N_MEL || mel.ncols() != N_MEL {
        return data_err("dtw_mcd needs 25 Mel columns");
    }
    let (path, cost) = dtw_align(mel_hat, mel)?;
    Ok(MCD_SCALE * cost / path.len() as f64)
}

/// MCD of the first 25 columns of two `T × 29` matrices.
pub fn mcd_of_targets(a_hat: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>) -> Result<f64> {
    mcd(a_hat.slice(s![.., ..N_MEL]), a.slice(s![.., ..N_MEL]))
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
