use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::metrics::{dtw_mcd, mcd};
use crate::corpus::N_MEL;
use crate::dataset::FeatureTrial;
use crate::error::{data_err, Result};

/// Ground-truth Mel segment of one vowel instance.
#[derive(Clone, Debug, PartialEq)]
pub struct VowelTemplate {
    pub label: String,
    pub trial_id: String,
    /// `L × 25`.
    pub mel: Array2<f64>,
}

/// Templates from every vowel interval of the given (original) trials, in
/// trial order. Targets must be in raw units.
pub fn collect_templates(trials: &[FeatureTrial]) -> Vec<VowelTemplate> {
    trials
        .iter()
        .filter(|t| !t.is_augmented())
        .flat_map(|t| {
            t.vowel_intervals.iter().map(move |v| VowelTemplate {
                label: v.label.clone(),
                trial_id: t.trial_id.clone(),
                mel: t.targets.slice(s![v.start_frame..v.end_frame, ..N_MEL]).to_owned(),
            })
        })
        .collect()
}

/// Label of the template with the least MCD to `segment` (`L × 25`). Equal
/// lengths compare frame by frame, unequal lengths along the DTW path. Ties
/// go to the earliest template.
pub fn classify_vowel<'a>(
    segment: ArrayView2<'_, f64>,
    templates: impl IntoIterator<Item = &'a VowelTemplate>,
) -> Result<&'a str> {
    let mut best: Option<(f64, &str)> = None;
    for t in templates {
        let d = if t.mel.nrows() == segment.nrows() {
            mcd(segment, t.mel.view())?
        } else {
            dtw_mcd(segment, t.mel.view())?
        };
        if best.is_none_or(|(b, _)| d < b) {
            best = Some((d, &t.label));
        }
    }
    match best {
        Some((_, label)) => Ok(label),
        None => data_err("no vowel templates"),
    }
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let k = classes.len();
        Self {
            classes,
            counts: vec![vec![0; k]; k],
        }
    }

    fn index(&self, label: &str) -> Result<usize> {
        match self.classes.iter().position(|c| c == label) {
            Some(i) => Ok(i),
            None => data_err(format!("unknown class {label:?}")),
        }
    }

    pub fn add(&mut self, truth: &str, predicted: &str) -> Result<()> {
        let (i, j) = (self.index(truth)?, self.index(predicted)?);
        self.counts[i][j] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return data_err("confusion matrices over different classes");
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Comma-separated grid with a header row of predicted labels.
    pub fn to_csv(&self) -> String {
        let mut s = format!("true\\pred,{}\n", self.classes.join(","));
        for (c, row) in self.classes.iter().zip(&self.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            s.push_str(&format!("{c},{}\n", cells.join(",")));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    /// `None` for classes with no true instance and no prediction.
    pub per_class: Vec<Option<f64>>,
    /// Unweighted mean over classes with at least one true instance.
    pub macro_f1: f64,
}

/// Per-class `TP / (TP + (FP + FN)/2)` and the macro average.
pub fn f1_scores(cm: &ConfusionMatrix) -> F1Scores {
    let k = cm.classes.len();
    let mut per_class = Vec::with_capacity(k);
    let mut macro_sum = 0.0;
    let mut macro_n = 0usize;
    for c in 0..k {
        let tp = cm.counts[c][c] as f64;
        let row: f64 = cm.counts[c].iter().sum::<u64>() as f64;
        let col: f64 = cm.counts.iter().map(|r| r[c]).sum::<u64>() as f64;
        let (fn_, fp) = (row - tp, col - tp);
        let denom = tp + 0.5 * (fp + fn_);
        let f1 = (denom > 0.0).then(|| tp / denom);
        if row > 0.0 {
            macro_sum += f1.unwrap_or(0.0);
            macro_n += 1;
        }
        per_class.push(f1);
    }
    F1Scores {
        per_class,
        macro_f1: if macro_n > 0 { macro_sum / macro_n as f64 } else { 0.0 },
    }
}
