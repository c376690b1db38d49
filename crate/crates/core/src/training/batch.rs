use ndarray::{Array2, ArrayView2};
use neurodecode_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::corpus::N_ACOUSTIC;
use crate::dataset::FeatureTrial;
use crate::error::{data_err, Result};
use crate::sigproc::FeatureStats;

/// Zero-padded batch. `features` is `[B, T, N_f]`, `targets` `[B, T, 29]`,
/// `mask` one 0/1 flag per `(b, t)` row in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub features: Tensor,
    pub targets: Tensor,
    pub mask: Vec<f64>,
    pub lengths: Vec<usize>,
    pub sentence_ids: Vec<String>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn sentence_refs(&self) -> Vec<&str> {
        self.sentence_ids.iter().map(String::as_str).collect()
    }
}

/// Pads trials to the longest one in the batch.
pub fn pad_batch(trials: &[&FeatureTrial]) -> Result<Batch> {
    let Some(first) = trials.first() else {
        return data_err("pad_batch needs at least one trial");
    };
    let nf = first.features.ncols();
    for t in trials {
        if t.features.ncols() != nf || t.targets.ncols() != N_ACOUSTIC {
            return data_err(format!("{}: inconsistent feature or target width", t.trial_id));
        }
        if t.targets.nrows() != t.features.nrows() || t.n_frames() == 0 {
            return data_err(format!("{}: features and targets differ in length", t.trial_id));
        }
    }
    let b = trials.len();
    let tmax = trials.iter().map(|t| t.n_frames()).max().unwrap_or(0);
    let mut feats = vec![0.0; b * tmax * nf];
    let mut targs = vec![0.0; b * tmax * N_ACOUSTIC];
    let mut mask = vec![0.0; b * tmax];
    for (bi, t) in trials.iter().enumerate() {
        let n = t.n_frames();
        let fo = bi * tmax * nf;
        feats[fo..fo + n * nf]
            .iter_mut()
            .zip(t.features.iter())
            .for_each(|(d, s)| *d = *s);
        let to = bi * tmax * N_ACOUSTIC;
        targs[to..to + n * N_ACOUSTIC]
            .iter_mut()
            .zip(t.targets.iter())
            .for_each(|(d, s)| *d = *s);
        mask[bi * tmax..bi * tmax + n].fill(1.0);
    }
    Ok(Batch {
        features: Tensor::new(vec![b, tmax, nf], feats)?,
        targets: Tensor::new(vec![b, tmax, N_ACOUSTIC], targs)?,
        mask,
        lengths: trials.iter().map(|t| t.n_frames()).collect(),
        sentence_ids: trials.iter().map(|t| t.sentence_id.clone()).collect(),
    })
}

/// Per-column z-scoring of features and targets, fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub features: FeatureStats,
    pub targets: FeatureStats,
}

impl Normalizer {
    pub fn fit(trials: &[FeatureTrial]) -> Result<Self> {
        let f: Vec<ArrayView2<'_, f64>> = trials.iter().map(|t| t.features.view()).collect();
        let a: Vec<ArrayView2<'_, f64>> = trials.iter().map(|t| t.targets.view()).collect();
        Ok(Self {
            features: FeatureStats::fit(&f)?,
            targets: FeatureStats::fit(&a)?,
        })
    }

    pub fn apply(&self, t: &FeatureTrial) -> Result<FeatureTrial> {
        Ok(FeatureTrial {
            features: self.features.apply(t.features.view())?,
            targets: self.targets.apply(t.targets.view())?,
            ..t.clone()
        })
    }

    pub fn features(&self, m: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.features.apply(m)
    }

    /// Maps normalised predictions back to acoustic units.
    pub fn invert_targets(&self, m: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.targets.invert(m)
    }
}
