use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{predict_trial, train_from, Normalizer, TrainConfig};
use crate::augment::augment_corpus;
use crate::corpus::{assign_folds, FoldAssignment, SplitRatios, N_MEL};
use crate::dataset::{clip_intervals, FeatureSet, FeatureTrial};
use crate::error::{config_err, data_err, Result};
use crate::evaluation::{
    classify_vowel, collect_templates, f1_scores, mcd_of_targets, mean_sd, sentence_pcc, ChannelGroup, ConfusionMatrix,
    F1Scores, VowelTemplate,
};
use crate::models::{EncoderVariant, Model};
use crate::rng_for;

const STREAM_TARGET_SHUFFLE: u64 = 4 << 48;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub train: TrainConfig,
    pub n_folds: usize,
    pub ratios: SplitRatios,
    pub group_by_sentence: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            n_folds: 10,
            ratios: SplitRatios::default(),
            group_by_sentence: false,
        }
    }
}

impl CvConfig {
    /// Row label in the style "ViT+CLIP+Aug".
    pub fn setup_label(&self) -> String {
        let mut s = match self.train.encoder {
            EncoderVariant::Cnn => "CNN".to_string(),
            EncoderVariant::Vit => "ViT".to_string(),
        };
        if self.train.use_clip {
            s.push_str("+CLIP");
        }
        if self.train.augmentation_factor > 1 {
            s.push_str("+Aug");
        }
        s
    }

    pub fn folds(&self, set: &FeatureSet) -> Result<Vec<FoldAssignment>> {
        let items: Vec<(&str, &str)> = set
            .trials
            .iter()
            .filter(|t| !t.is_augmented())
            .map(|t| (t.trial_id.as_str(), t.sentence_id.as_str()))
            .collect();
        assign_folds(
            &items,
            self.n_folds,
            self.ratios,
            self.train.seed,
            self.group_by_sentence,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub test_ids: Vec<String>,
    /// Per test trial, in `test_ids` order.
    pub pcc: Vec<f64>,
    pub mcd: Vec<f64>,
    pub confusion: ConfusionMatrix,
    pub macro_f1: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_mcd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub setup: String,
    pub folds: Vec<FoldResult>,
    pub pcc_mean: f64,
    pub pcc_sd: f64,
    pub mcd_mean: f64,
    pub mcd_sd: f64,
    pub confusion: ConfusionMatrix,
    pub f1: F1Scores,
}

impl CvReport {
    fn from_folds(setup: String, classes: Vec<String>, folds: Vec<FoldResult>) -> Result<Self> {
        let pcc: Vec<f64> = folds.iter().flat_map(|f| f.pcc.iter().copied()).collect();
        let mcd: Vec<f64> = folds.iter().flat_map(|f| f.mcd.iter().copied()).collect();
        let mut confusion = ConfusionMatrix::new(classes);
        for f in &folds {
            confusion.merge(&f.confusion)?;
        }
        let (pcc_mean, pcc_sd) = mean_sd(&pcc);
        let (mcd_mean, mcd_sd) = mean_sd(&mcd);
        Ok(Self {
            setup,
            f1: f1_scores(&confusion),
            folds,
            pcc_mean,
            pcc_sd,
            mcd_mean,
            mcd_sd,
            confusion,
        })
    }

    /// Joins reports over disjoint fold subsets of one configuration.
    pub fn combine(parts: Vec<CvReport>) -> Result<Self> {
        let Some(first) = parts.first() else {
            return data_err("no reports to combine");
        };
        let setup = first.setup.clone();
        let classes = first.confusion.classes.clone();
        let mut folds: Vec<FoldResult> = parts.into_iter().flat_map(|p| p.folds).collect();
        folds.sort_by_key(|f| f.fold_index);
        if folds.windows(2).any(|w| w[0].fold_index == w[1].fold_index) {
            return data_err("reports share a fold");
        }
        Self::from_folds(setup, classes, folds)
    }

    pub fn fold_f1(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.macro_f1).collect()
    }

    pub const TABLE_HEADER: &'static str = "Setup | Avg PCC | Avg MCD | F1";

    pub fn table_row(&self) -> String {
        format!(
            "{} | {:.3}±{:.3} | {:.3}±{:.3} | {:.2}",
            self.setup, self.pcc_mean, self.pcc_sd, self.mcd_mean, self.mcd_sd, self.f1.macro_f1
        )
    }
}

/// Reassigns targets among trials with a seeded permutation. Each trial keeps
/// its features; both sides are cut to the shorter of the two lengths, and
/// the vowel intervals travel with the targets.
pub fn shuffle_targets(trials: &[FeatureTrial], seed: u64) -> Vec<FeatureTrial> {
    let mut perm: Vec<usize> = (0..trials.len()).collect();
    perm.shuffle(&mut rng_for(seed, STREAM_TARGET_SHUFFLE));
    trials
        .iter()
        .zip(&perm)
        .map(|(t, &p)| {
            let donor = &trials[p];
            let n = t.n_frames().min(donor.n_frames());
            FeatureTrial {
                features: t.features.slice(ndarray::s![..n, ..]).to_owned(),
                targets: donor.targets.slice(ndarray::s![..n, ..]).to_owned(),
                vowel_intervals: clip_intervals(&donor.vowel_intervals, n),
                ..t.clone()
            }
        })
        .collect()
}

/// Test-set scores of one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub trial_ids: Vec<String>,
    pub pcc: Vec<f64>,
    pub mcd: Vec<f64>,
    pub confusion: ConfusionMatrix,
}

/// Sentence PCC, MCD and vowel classification on `test`. A trial's own
/// vowels are never among its templates.
pub fn evaluate_test(
    model: &Model,
    normalizer: &Normalizer,
    test: &[FeatureTrial],
    templates: &[VowelTemplate],
    vowel_inventory: &[String],
) -> Result<TestMetrics> {
    let mut pcc = Vec::with_capacity(test.len());
    let mut mcd = Vec::with_capacity(test.len());
    let mut cm = ConfusionMatrix::new(vowel_inventory.to_vec());
    for t in test {
        let pred = predict_trial(model, normalizer, t)?;
        pcc.push(sentence_pcc(pred.view(), t.targets.view(), ChannelGroup::All)?);
        mcd.push(mcd_of_targets(pred.view(), t.targets.view())?);
        let others: Vec<&VowelTemplate> = templates.iter().filter(|v| v.trial_id != t.trial_id).collect();
        for v in &t.vowel_intervals {
            if v.end_frame <= v.start_frame {
                continue;
            }
            let seg = pred.slice(ndarray::s![v.start_frame..v.end_frame, ..N_MEL]);
            let label = classify_vowel(seg, others.iter().copied())?;
            cm.add(&v.label, label)?;
        }
    }
    Ok(TestMetrics {
        trial_ids: test.iter().map(|t| t.trial_id.clone()).collect(),
        pcc,
        mcd,
        confusion: cm,
    })
}

struct FoldInputs<'a> {
    config: &'a CvConfig,
    set: &'a FeatureSet,
    templates: &'a [VowelTemplate],
}

fn run_fold(
    inputs: &FoldInputs<'_>,
    fold: &FoldAssignment,
    shuffle_seed: Option<u64>,
    init: Option<&Model>,
) -> Result<FoldResult> {
    let FoldInputs { config, set, templates } = inputs;
    let tc = &config.train;
    let mut train = set.select(&fold.train_ids)?;
    let mut val = set.select(&fold.validation_ids)?;
    let test = set.select(&fold.test_ids)?;
    if let Some(seed) = shuffle_seed {
        let n_train = train.len();
        let mut joint = train;
        joint.extend(val);
        let shuffled = shuffle_targets(&joint, seed);
        train = shuffled[..n_train].to_vec();
        val = shuffled[n_train..].to_vec();
    }
    if tc.augmentation_factor > 1 {
        train = augment_corpus(&train, tc.augmentation_factor, tc.seed ^ fold.fold_index as u64)?;
    }
    let model = match init {
        Some(m) => m.transfer_init(set.grid, tc.seed)?,
        None => Model::new(tc.model_config(), set.grid, tc.seed)?,
    };
    let outcome = train_from(tc, model, &train, &val)?;
    let m = evaluate_test(
        &outcome.model,
        &outcome.normalizer,
        &test,
        templates,
        &set.vowel_inventory,
    )?;
    Ok(FoldResult {
        fold_index: fold.fold_index,
        test_ids: fold.test_ids.clone(),
        pcc: m.pcc,
        mcd: m.mcd,
        macro_f1: f1_scores(&m.confusion).macro_f1,
        confusion: m.confusion,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.history.len(),
        best_val_mcd: outcome.best_val_mcd,
    })
}

fn check_set(set: &FeatureSet) -> Result<()> {
    if set.trials.iter().any(FeatureTrial::is_augmented) {
        return data_err("cross-validation expects original trials only");
    }
    Ok(())
}

/// Cross-validation over every fold.
pub fn run_cv(config: &CvConfig, set: &FeatureSet) -> Result<CvReport> {
    let all: Vec<usize> = (0..config.n_folds).collect();
    run_cv_folds(config, set, &all)
}

/// Cross-validation restricted to the listed folds.
pub fn run_cv_folds(config: &CvConfig, set: &FeatureSet, which: &[usize]) -> Result<CvReport> {
    run_cv_inner(config, set, which, None, config.setup_label())
}

fn run_cv_inner(
    config: &CvConfig,
    set: &FeatureSet,
    which: &[usize],
    init: Option<&Model>,
    label: String,
) -> Result<CvReport> {
    config.train.validate()?;
    check_set(set)?;
    let folds = config.folds(set)?;
    if let Some(&bad) = which.iter().find(|&&k| k >= folds.len()) {
        return config_err(format!("fold {bad} out of range 0..{}", folds.len()));
    }
    let templates = collect_templates(&set.trials);
    let inputs = FoldInputs {
        config,
        set,
        templates: &templates,
    };
    let results = which
        .iter()
        .map(|&k| run_fold(&inputs, &folds[k], None, init))
        .collect::<Result<Vec<_>>>()?;
    CvReport::from_folds(label, set.vowel_inventory.clone(), results)
}

/// Macro F1 of `n_runs` trainings on shuffled targets. Run `r` uses fold
/// `r mod n_folds` and its own permutation; test trials keep their true
/// targets.
pub fn shuffled_target_baseline(config: &CvConfig, set: &FeatureSet, n_runs: usize) -> Result<Vec<f64>> {
    config.train.validate()?;
    check_set(set)?;
    let folds = config.folds(set)?;
    let templates = collect_templates(&set.trials);
    let inputs = FoldInputs {
        config,
        set,
        templates: &templates,
    };
    (0..n_runs)
        .map(|r| {
            let fold = &folds[r % folds.len()];
            let seed = config.train.seed.wrapping_add(1 + r as u64);
            Ok(run_fold(&inputs, fold, Some(seed), None)?.macro_f1)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub source_best_val_mcd: f64,
    pub transfer: CvReport,
    pub baseline: CvReport,
}

/// Pretrains on the source corpus, then fine-tunes every parameter on each
/// target fold starting from the transferred weights; the baseline is plain
/// cross-validation on the target.
pub fn run_transfer(config: &CvConfig, source: &FeatureSet, target: &FeatureSet) -> Result<TransferReport> {
    if config.train.encoder != EncoderVariant::Vit {
        return config_err("transfer learning needs a ViT encoder");
    }
    check_set(source)?;
    let src_folds = config.folds(source)?;
    let val_ids: HashSet<&str> = src_folds[0].validation_ids.iter().map(String::as_str).collect();
    let (val, mut train): (Vec<FeatureTrial>, Vec<FeatureTrial>) = source
        .trials
        .iter()
        .cloned()
        .partition(|t| val_ids.contains(t.trial_id.as_str()));
    let tc = &config.train;
    if tc.augmentation_factor > 1 {
        train = augment_corpus(&train, tc.augmentation_factor, tc.seed)?;
    }
    let model = Model::new(tc.model_config(), source.grid, tc.seed)?;
    let pre = train_from(tc, model, &train, &val)?;
    let all: Vec<usize> = (0..config.n_folds).collect();
    let transfer = run_cv_inner(
        config,
        target,
        &all,
        Some(&pre.model),
        format!("{}+TL", config.setup_label()),
    )?;
    let baseline = run_cv(config, target)?;
    Ok(TransferReport {
        source_best_val_mcd: pre.best_val_mcd,
        transfer,
        baseline,
    })
}
