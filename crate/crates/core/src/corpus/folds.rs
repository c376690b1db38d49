use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{config_err, Result};
use crate::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.72,
            val: 0.18,
            test: 0.10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_index: usize,
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Nominal `(train, val, test)` sizes for `n` trials: the validation and test
/// shares are floored and the training split takes the remainder.
pub fn split_sizes(n: usize, ratios: SplitRatios) -> Result<(usize, usize, usize)> {
    let SplitRatios { train, val, test } = ratios;
    if [train, val, test].iter().any(|r| !(0.0..=1.0).contains(r)) {
        return config_err(format!("split ratios {ratios:?} outside [0, 1]"));
    }
    if (train + val + test - 1.0).abs() > 1e-9 {
        return config_err(format!("split ratios sum to {}", train + val + test));
    }
    let floor = |share: f64| ((n as f64) * share + 1e-9).floor() as usize;
    let (v, t) = (floor(val), floor(test));
    Ok((n - v - t, v, t))
}

/// Fold assignment over a corpus. See [`assign_folds`].
pub fn make_folds(
    corpus: &Corpus,
    n_folds: usize,
    ratios: SplitRatios,
    seed: u64,
    group_by_sentence: bool,
) -> Result<Vec<FoldAssignment>> {
    let items: Vec<(&str, &str)> = corpus
        .trials()
        .iter()
        .map(|t| (t.trial_id.as_str(), t.sentence_id.as_str()))
        .collect();
    assign_folds(&items, n_folds, ratios, seed, group_by_sentence)
}

/// Assigns `(trial_id, sentence_id)` items to folds.
///
/// Items are sorted by id before the seeded shuffle, so the result does not
/// depend on input order. When `n_folds · test` is 1 the test sets partition
/// the items (sizes differ by at most one); otherwise every test set has the
/// nominal size. Validation trials are drawn from the non-test remainder with
/// a per-fold stream. With `group_by_sentence`, whole sentences move together
/// and sizes are met approximately.
pub fn assign_folds(
    items: &[(&str, &str)],
    n_folds: usize,
    ratios: SplitRatios,
    seed: u64,
    group_by_sentence: bool,
) -> Result<Vec<FoldAssignment>> {
    let n = items.len();
    if n == 0 {
        return config_err("cannot split an empty corpus");
    }
    if n_folds == 0 {
        return config_err("n_folds must be at least 1");
    }
    let (_, n_val, n_test) = split_sizes(n, ratios)?;
    let coverage = n_folds as f64 * ratios.test;
    if coverage > 1.0 + 1e-9 {
        return config_err(format!("{n_folds} folds of test share {} overlap", ratios.test));
    }
    let partition = (coverage - 1.0).abs() <= 1e-9;
    if partition && n < n_folds {
        return config_err(format!("{n} trials cannot fill {n_folds} test folds"));
    }
    let test_sizes: Vec<usize> = if partition {
        let (base, extra) = (n / n_folds, n % n_folds);
        (0..n_folds).map(|k| base + usize::from(k >= n_folds - extra)).collect()
    } else {
        vec![n_test; n_folds]
    };

    // Units are single trials or whole sentences.
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for &(id, sentence) in items {
        let key = if group_by_sentence { sentence } else { id };
        groups.entry(key).or_default().push(id);
    }
    let mut units: Vec<Vec<&str>> = groups
        .into_values()
        .map(|mut v| {
            v.sort_unstable();
            v
        })
        .collect();
    units.shuffle(&mut rng_for(seed, 0));

    let mut folds = Vec::with_capacity(n_folds);
    let mut cursor = 0;
    let mut target_end = 0;
    let mut filled = 0;
    for (k, &size) in test_sizes.iter().enumerate() {
        target_end += size;
        let mut test: Vec<String> = Vec::new();
        let start = cursor;
        while cursor < units.len() && filled < target_end {
            filled += units[cursor].len();
            test.extend(units[cursor].iter().map(|s| s.to_string()));
            cursor += 1;
        }
        let mut rest: Vec<&Vec<&str>> = units[..start].iter().chain(&units[cursor..]).collect();
        rest.shuffle(&mut rng_for(seed, 1 + k as u64));
        let mut val: Vec<String> = Vec::new();
        let mut train: Vec<String> = Vec::new();
        for (i, u) in rest.iter().enumerate() {
            // Keep at least one unit for training.
            if val.len() < n_val && i + 1 < rest.len() {
                val.extend(u.iter().map(|s| s.to_string()));
            } else {
                train.extend(u.iter().map(|s| s.to_string()));
            }
        }
        if train.is_empty() || test.is_empty() {
            return config_err(format!("fold {k} would have an empty train or test split"));
        }
        train.sort();
        val.sort();
        test.sort();
        folds.push(FoldAssignment {
            fold_index: k,
            train_ids: train,
            validation_ids: val,
            test_ids: test,
        });
    }
    Ok(folds)
}
