//! Neural-variability augmentation: DTW-align the Mel trajectories of two
//! repetitions of a sentence and remap one repetition's neural features onto
//! the other's timeline.

use std::collections::BTreeMap;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::N_MEL;
use crate::dataset::{FeatureTrial, Provenance};
use crate::error::{data_err, Result};
use crate::rng_for;

/// Monotone alignment from `(0, 0)` to `(I−1, J−1)` with unit steps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WarpPath(pub Vec<(usize, usize)>);

impl WarpPath {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks endpoints and step shapes against `i × j` frames.
    pub fn validate(&self, i: usize, j: usize) -> Result<()> {
        let p = &self.0;
        if p.first() != Some(&(0, 0)) || p.last() != Some(&(i.wrapping_sub(1), j.wrapping_sub(1))) {
            return data_err(format!("path endpoints do not span {i}x{j}"));
        }
        for w in p.windows(2) {
            let (di, dj) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
            if !matches!((di, dj), (1, 0) | (0, 1) | (1, 1)) {
                return data_err(format!("illegal step {:?} -> {:?}", w[0], w[1]));
            }
        }
        Ok(())
    }
}

fn euclid(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Minimal-cost monotone alignment of the rows of `x` (`I × D`) and `y`
/// (`J × D`) under per-pair Euclidean distance. Backtracking prefers the
/// diagonal step on ties.
pub fn dtw_align(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<(WarpPath, f64)> {
    let (ni, nj) = (x.nrows(), y.nrows());
    if ni == 0 || nj == 0 {
        return data_err("DTW needs at least one frame on each side");
    }
    if x.ncols() != y.ncols() {
        return data_err(format!("DTW dimension mismatch {} vs {}", x.ncols(), y.ncols()));
    }
    let mut acc = Array2::from_elem((ni, nj), f64::INFINITY);
    for i in 0..ni {
        for j in 0..nj {
            let d = euclid(x.row(i), y.row(j));
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 {
                    acc[[i - 1, j - 1]]
                } else {
                    f64::INFINITY
                };
                let up = if i > 0 { acc[[i - 1, j]] } else { f64::INFINITY };
                let left = if j > 0 { acc[[i, j - 1]] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[[i, j]] = d + best;
        }
    }
    let mut path = vec![(ni - 1, nj - 1)];
    let (mut i, mut j) = (ni - 1, nj - 1);
    while (i, j) != (0, 0) {
        (i, j) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[[i - 1, j - 1]];
            let up = acc[[i - 1, j]];
            let left = acc[[i, j - 1]];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        path.push((i, j));
    }
    path.reverse();
    Ok((WarpPath(path), acc[[ni - 1, nj - 1]]))
}

/// Remaps source frames (`I × F`) onto `j` target frames: each target frame is
/// the mean of the source frames paired with it.
pub fn warp_neural(e: ArrayView2<'_, f64>, path: &WarpPath, j: usize) -> Result<Array2<f64>> {
    path.validate(e.nrows(), j)?;
    let mut out = Array2::zeros((j, e.ncols()));
    let mut counts = vec![0usize; j];
    for &(si, tj) in path.pairs() {
        let mut row = out.row_mut(tj);
        row += &e.row(si);
        counts[tj] += 1;
    }
    for (mut row, c) in out.outer_iter_mut().zip(counts) {
        row /= c as f64;
    }
    Ok(out)
}

/// Builds an augmented trial pairing `source`'s neural features with
/// `donor`'s acoustic targets.
fn pair(source: &FeatureTrial, donor: &FeatureTrial, tag: usize) -> Result<FeatureTrial> {
    let (path, _) = dtw_align(
        source.targets.slice(s![.., ..N_MEL]),
        donor.targets.slice(s![.., ..N_MEL]),
    )?;
    let features = warp_neural(source.features.view(), &path, donor.n_frames())?;
    Ok(FeatureTrial {
        trial_id: format!("{}~{}#{tag}", source.trial_id, donor.trial_id),
        sentence_id: source.sentence_id.clone(),
        repetition_index: source.repetition_index,
        block_id: source.block_id.clone(),
        features,
        targets: donor.targets.clone(),
        vowel_intervals: donor.vowel_intervals.clone(),
        provenance: Some(Provenance {
            source_trial: source.trial_id.clone(),
            audio_donor_trial: donor.trial_id.clone(),
        }),
    })
}

/// Returns the originals followed by `factor − 1` augmented trials per
/// original that has at least one sibling repetition. Donors are drawn
/// without replacement when enough siblings exist, with replacement
/// otherwise.
pub fn augment_corpus(trials: &[FeatureTrial], factor: usize, seed: u64) -> Result<Vec<FeatureTrial>> {
    if factor == 0 {
        return data_err("augmentation factor must be at least 1");
    }
    if trials.iter().any(FeatureTrial::is_augmented) {
        return data_err("input already contains augmented trials");
    }
    let mut out = trials.to_vec();
    if factor == 1 {
        return Ok(out);
    }
    let mut by_sentence: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (k, t) in trials.iter().enumerate() {
        by_sentence.entry(&t.sentence_id).or_default().push(k);
    }
    let want = factor - 1;
    for (s, members) in by_sentence.values().enumerate() {
        let mut rng = rng_for(seed, s as u64);
        for &i in members {
            let siblings: Vec<usize> = members.iter().copied().filter(|&j| j != i).collect();
            if siblings.is_empty() {
                continue;
            }
            let donors: Vec<usize> = if siblings.len() >= want {
                siblings.choose_multiple(&mut rng, want).copied().collect()
            } else {
                (0..want).map(|_| siblings[rng.gen_range(0..siblings.len())]).collect()
            };
            for (tag, j) in donors.into_iter().enumerate() {
                out.push(pair(&trials[i], &trials[j], tag)?);
            }
        }
    }
    Ok(out)
}
