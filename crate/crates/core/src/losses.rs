//! Masked MSE, the contrastive (CLIP-style) objective and their sum.
//!
//! The contrastive logits default to negated distances so that the true and
//! noisy positives are pulled towards the anchor. [`ClipMode::Literal`] feeds
//! the raw distances to the softmax instead, which pushes positives away; it
//! exists only to reproduce the formula as printed.

use ndarray::{Array2, ArrayView2, Axis};
use neurodecode_autodiff::{Graph, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::N_ACOUSTIC;
use crate::error::{data_err, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    #[default]
    NegatedDistance,
    Literal,
}

/// Mean squared error over valid frames of `T × 29` matrices.
pub fn mse_loss(a_hat: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>, valid: &[bool]) -> Result<f64> {
    if a_hat.dim() != a.dim() || valid.len() != a.nrows() {
        return data_err("mse_loss shape mismatch");
    }
    let n = valid.iter().filter(|v| **v).count();
    if n == 0 {
        return data_err("mse_loss needs at least one valid frame");
    }
    let mut total = 0.0;
    for ((r1, r2), _) in a_hat.outer_iter().zip(a.outer_iter()).zip(valid).filter(|(_, v)| **v) {
        total += r1.iter().zip(r2).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    Ok(total / (n * a.ncols()) as f64)
}

/// Noisy positive built from explicit noise draws:
/// `a_n = a + noise1`, `ã = (a_n − mean_t(a_n))·noise2 + mean_t(a_n)`, means
/// per channel over frames.
pub fn noisy_positive_with(
    a: ArrayView2<'_, f64>,
    noise1: ArrayView2<'_, f64>,
    noise2: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    if a.dim() != noise1.dim() || a.dim() != noise2.dim() || a.nrows() == 0 {
        return data_err("noisy_positive shape mismatch");
    }
    let noised = &a + &noise1;
    let mean = noised.mean_axis(Axis(0)).expect("non-empty");
    let centred = &noised - &mean;
    Ok(centred * noise2 + &mean)
}

/// Noisy positive with independent standard-normal `noise1` and `noise2`.
pub fn noisy_positive<R: Rng>(a: ArrayView2<'_, f64>, rng: &mut R) -> Result<Array2<f64>> {
    let n1 = Array2::from_shape_simple_fn(a.dim(), || rng.sample(StandardNormal));
    let n2 = Array2::from_shape_simple_fn(a.dim(), || rng.sample(StandardNormal));
    noisy_positive_with(a, n1.view(), n2.view())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateRole {
    Negative,
    PositiveTrue,
    PositiveNoisy,
}

/// Candidate list of one anchor: negatives (batch indices), then the true
/// target, then the noisy target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClipRow {
    pub anchor: usize,
    pub candidates: Vec<(usize, CandidateRole)>,
}

impl ClipRow {
    pub fn n_negatives(&self) -> usize {
        self.candidates.len() - 2
    }
}

/// Batch-mates recorded from a different sentence become negatives;
/// repetitions of the anchor's sentence are left out.
pub fn build_candidates(sentence_ids: &[&str], anchor: usize) -> Result<ClipRow> {
    if anchor >= sentence_ids.len() {
        return data_err(format!("anchor {anchor} outside batch of {}", sentence_ids.len()));
    }
    let mut candidates: Vec<(usize, CandidateRole)> = sentence_ids
        .iter()
        .enumerate()
        .filter(|(_, s)| **s != sentence_ids[anchor])
        .map(|(i, _)| (i, CandidateRole::Negative))
        .collect();
    candidates.push((anchor, CandidateRole::PositiveTrue));
    candidates.push((anchor, CandidateRole::PositiveNoisy));
    Ok(ClipRow { anchor, candidates })
}

/// Per-anchor loss from a `[K]` distance vector:
/// `−(ṽ_true + ṽ_noisy)` with `ṽ = log_softmax(∓v)`.
pub fn clip_row_loss(
    g: &mut Graph,
    distances: Var,
    true_idx: usize,
    noisy_idx: usize,
    mode: ClipMode,
) -> Result<(Var, Var)> {
    let logits = match mode {
        ClipMode::NegatedDistance => g.neg(distances)?,
        ClipMode::Literal => distances,
    };
    let lsm = g.log_softmax(logits)?;
    let picked = g.pick(lsm, &[true_idx, noisy_idx])?;
    let s = g.sum(picked)?;
    Ok((g.neg(s)?, lsm))
}

/// Distances and log-probabilities of one evaluation, for inspection.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipLossTrace {
    pub distances: Vec<Vec<f64>>,
    pub log_probs: Vec<Vec<f64>>,
    pub per_anchor: Vec<f64>,
}

impl ClipLossTrace {
    pub fn to_text(&self) -> String {
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        for (m, ((d, l), loss)) in self
            .distances
            .iter()
            .zip(&self.log_probs)
            .zip(&self.per_anchor)
            .enumerate()
        {
            s.push_str(&format!(
                "anchor {m}: loss {loss:.6}\n  v {}\n  log p {}\n",
                fmt(d),
                fmt(l)
            ));
        }
        s
    }
}

/// Contrastive loss summed over anchors. `projected` is `[B, T, 29]`;
/// `targets` and `noisy` are constant `[B, T, 29]` tensors; pair distances
/// are MSEs over the first `min(T_m, T_n)` frames.
pub fn clip_loss(
    g: &mut Graph,
    projected: Var,
    targets: &Tensor,
    noisy: &Tensor,
    lengths: &[usize],
    sentence_ids: &[&str],
    mode: ClipMode,
) -> Result<(Var, ClipLossTrace)> {
    let shape = g.shape(projected).to_vec();
    let b = lengths.len();
    if b == 0 || shape.len() != 3 || shape[0] != b || shape[2] != N_ACOUSTIC {
        return data_err(format!("clip_loss projected shape {shape:?} for batch {b}"));
    }
    if targets.shape() != shape.as_slice() || noisy.shape() != shape.as_slice() || sentence_ids.len() != b {
        return data_err("clip_loss targets do not match the projected batch");
    }
    let t = shape[1];
    let slab = t * N_ACOUSTIC;
    let prefix = |src: &Tensor, n: usize, len: usize| {
        let start = n * slab;
        Tensor::new(
            vec![len, N_ACOUSTIC],
            src.data()[start..start + len * N_ACOUSTIC].to_vec(),
        )
        .expect("prefix shape")
    };
    let mut total: Option<Var> = None;
    let mut trace = ClipLossTrace::default();
    let mut row_losses = Vec::with_capacity(b);
    let mut row_lsm = Vec::with_capacity(b);
    let mut row_dist = Vec::with_capacity(b);
    for m in 0..b {
        let row = build_candidates(sentence_ids, m)?;
        let anchor = g.narrow(projected, 0, m, 1)?;
        let anchor = g.reshape(anchor, &[t, N_ACOUSTIC])?;
        let mut dists = Vec::with_capacity(row.candidates.len());
        for &(n, role) in &row.candidates {
            let len = lengths[m].min(lengths[n]);
            let e = g.narrow(anchor, 0, 0, len)?;
            let src = if role == CandidateRole::PositiveNoisy {
                noisy
            } else {
                targets
            };
            let a = g.constant(prefix(src, n, len));
            dists.push(g.mse(e, a)?);
        }
        let dists = g.stack(&dists)?;
        let k = row.candidates.len();
        let (loss, lsm) = clip_row_loss(g, dists, k - 2, k - 1, mode)?;
        row_losses.push(loss);
        row_lsm.push(lsm);
        row_dist.push(dists);
        total = Some(match total {
            None => loss,
            Some(acc) => g.add(acc, loss)?,
        });
    }
    for ((d, l), loss) in row_dist.iter().zip(&row_lsm).zip(&row_losses) {
        trace.distances.push(g.value(*d).data().to_vec());
        trace.log_probs.push(g.value(*l).data().to_vec());
        trace.per_anchor.push(g.value(*loss).item());
    }
    Ok((total.expect("non-empty batch"), trace))
}

/// Joint objective: MSE plus the contrastive term.
pub fn combined_loss(g: &mut Graph, mse: Var, clip: Option<Var>) -> Result<Var> {
    match clip {
        Some(c) => Ok(g.add(mse, c)?),
        None => Ok(mse),
    }
}
