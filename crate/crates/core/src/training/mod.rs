//! Joint MSE + contrastive training with early stopping, cross-validation,
//! shuffled-target baselines and transfer learning.

mod batch;
mod cv;
mod early_stop;

use ndarray::Array3;
use neurodecode_autodiff::{Adam, AdamConfig, BatchStats, Graph, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::GridGeometry;
use crate::dataset::FeatureTrial;
use crate::error::{config_err, data_err, Error, Result};
use crate::evaluation::mcd_of_targets;
use crate::losses::{clip_loss, combined_loss, noisy_positive, ClipMode};
use crate::models::{EncoderVariant, Mode, Model, ModelConfig, ModelDims};
use crate::rng_for;

pub use batch::{pad_batch, Batch, Normalizer};
pub use cv::{
    evaluate_test, run_cv, run_cv_folds, run_transfer, shuffle_targets, shuffled_target_baseline, CvConfig, CvReport,
    FoldResult, TestMetrics, TransferReport,
};
pub use early_stop::{early_stop_update, EarlyStopState, StopDecision};

// Stream tags so that shuffling, dropout and contrastive noise never share
// random numbers.
const STREAM_SHUFFLE: u64 = 1 << 48;
const STREAM_DROPOUT: u64 = 2 << 48;
const STREAM_NOISE: u64 = 3 << 48;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub encoder: EncoderVariant,
    pub dims: ModelDims,
    pub use_clip: bool,
    pub clip_mode: ClipMode,
    /// Total trials per original after augmentation; 1 disables it.
    pub augmentation_factor: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// L2 penalty folded into the Adam gradient; 0 disables it.
    pub weight_decay: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderVariant::Vit,
            dims: ModelDims::paper(),
            use_clip: false,
            clip_mode: ClipMode::NegatedDistance,
            augmentation_factor: 1,
            batch_size: 16,
            lr: 4e-4,
            weight_decay: 0.0,
            patience: 20,
            max_epochs: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return config_err("patience must be at least 1");
        }
        if self.batch_size == 0 || (self.use_clip && self.batch_size < 2) {
            return config_err("batch_size must be at least 2 with the contrastive loss, 1 otherwise");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return config_err(format!("learning rate {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return config_err(format!("weight decay {}", self.weight_decay));
        }
        if self.max_epochs == 0 || self.augmentation_factor == 0 {
            return config_err("max_epochs and augmentation_factor must be at least 1");
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            variant: self.encoder,
            dims: self.dims.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub train_clip: f64,
    pub val_mcd: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_mse,train_clip,val_mcd\n");
    for r in history {
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_mse, r.train_clip, r.val_mcd));
    }
    s
}

/// Loss values and parameter gradients of one batch.
pub struct StepGradients {
    pub mse: f64,
    pub clip: Option<f64>,
    /// Parameter order, zeros where nothing flowed.
    pub grads: Vec<Vec<f64>>,
    pub bn_stats: Vec<BatchStats>,
}

/// Forward and backward pass of the joint objective in training mode. The
/// contrastive term reaches the encoder and projector only.
pub fn compute_gradients(
    model: &Model,
    batch: &Batch,
    use_clip: Option<ClipMode>,
    dropout_seed: (u64, u64),
    noise_seed: (u64, u64),
) -> Result<StepGradients> {
    let mut g = Graph::new();
    let w = model.params.bind(&mut g);
    let x = g.constant(batch.features.clone());
    let mut drop_rng = rng_for(dropout_seed.0, dropout_seed.1);
    let mut mode = Mode::Train(&mut drop_rng);
    let (out, enc) = model.forward(&mut g, &w, x, &batch.lengths, &mut mode)?;
    let target = g.constant(batch.targets.clone());
    let mse = g.masked_mse(out, target, &batch.mask)?;
    let mut clip = None;
    if let Some(clip_mode) = use_clip {
        let proj = model.project(&mut g, &w, enc.latent)?;
        let noisy = noisy_batch(batch, noise_seed)?;
        let (c, _) = clip_loss(
            &mut g,
            proj,
            &batch.targets,
            &noisy,
            &batch.lengths,
            &batch.sentence_refs(),
            clip_mode,
        )?;
        clip = Some(c);
    }
    let loss = combined_loss(&mut g, mse, clip)?;
    let lv = g.value(loss).item();
    if !lv.is_finite() {
        return Err(Error::Numerical(format!("loss became {lv}")));
    }
    g.backward(loss)?;
    let grads = w
        .vars()
        .iter()
        .zip(model.params.iter())
        .map(|(&v, p)| g.grad(v).map_or_else(|| vec![0.0; p.value.numel()], <[f64]>::to_vec))
        .collect();
    Ok(StepGradients {
        mse: g.value(mse).item(),
        clip: clip.map(|c| g.value(c).item()),
        grads,
        bn_stats: enc.bn_stats,
    })
}

/// Noisy positives for every trial of the batch, computed over valid frames
/// and zero-padded like the targets.
fn noisy_batch(batch: &Batch, seed: (u64, u64)) -> Result<Tensor> {
    let s = batch.targets.shape();
    let (b, t, c) = (s[0], s[1], s[2]);
    let all = Array3::from_shape_vec((b, t, c), batch.targets.data().to_vec()).expect("shape");
    let mut out = Array3::<f64>::zeros((b, t, c));
    let mut rng = rng_for(seed.0, seed.1);
    for (bi, &len) in batch.lengths.iter().enumerate() {
        let a = all.slice(ndarray::s![bi, ..len, ..]);
        let noisy = noisy_positive(a, &mut rng)?;
        out.slice_mut(ndarray::s![bi, ..len, ..]).assign(&noisy);
    }
    Ok(Tensor::new(vec![b, t, c], out.into_raw_vec_and_offset().0)?)
}

pub fn apply_adam(model: &mut Model, adam: &mut Adam, grads: &[Vec<f64>]) -> Result<()> {
    let g: Vec<Option<&[f64]>> = grads.iter().map(|v| Some(v.as_slice())).collect();
    let mut params: Vec<&mut [f64]> = model.params.iter_mut().map(|p| p.value.data_mut()).collect();
    adam.step(&mut params, &g)?;
    Ok(())
}

/// Mean MCD (acoustic units) of eval-mode predictions on original trials.
pub fn validation_mcd(model: &Model, norm: &Normalizer, trials: &[FeatureTrial]) -> Result<f64> {
    let originals: Vec<&FeatureTrial> = trials.iter().filter(|t| !t.is_augmented()).collect();
    if originals.is_empty() {
        return data_err("validation split has no original trials");
    }
    let mut total = 0.0;
    for t in &originals {
        let pred = predict_trial(model, norm, t)?;
        total += mcd_of_targets(pred.view(), t.targets.view())?;
    }
    Ok(total / originals.len() as f64)
}

/// Decoded acoustic features of one trial in acoustic units.
pub fn predict_trial(model: &Model, norm: &Normalizer, trial: &FeatureTrial) -> Result<ndarray::Array2<f64>> {
    let x = norm.features(trial.features.view())?;
    let y = model.predict(x.view())?;
    norm.invert_targets(y.view())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub normalizer: Normalizer,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mcd: f64,
    pub stopped_early: bool,
}

/// Trains a freshly initialised model. See [`train_from`].
pub fn train_model(
    config: &TrainConfig,
    grid: GridGeometry,
    train: &[FeatureTrial],
    val: &[FeatureTrial],
) -> Result<TrainOutcome> {
    config.validate()?;
    let model = Model::new(config.model_config(), grid, config.seed)?;
    train_from(config, model, train, val)
}

/// Per-epoch loop: seeded shuffle, batches, joint loss, Adam, eval-mode
/// validation MCD, early stopping. Returns the best checkpoint.
pub fn train_from(
    config: &TrainConfig,
    mut model: Model,
    train: &[FeatureTrial],
    val: &[FeatureTrial],
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return data_err("training and validation splits must be non-empty");
    }
    {
        let ids: std::collections::HashSet<&str> = train.iter().map(|t| t.trial_id.as_str()).collect();
        if let Some(t) = val.iter().find(|t| ids.contains(t.trial_id.as_str())) {
            return data_err(format!("trial {} is in both training and validation", t.trial_id));
        }
    }
    let normalizer = Normalizer::fit(train)?;
    let norm_train: Vec<FeatureTrial> = train.iter().map(|t| normalizer.apply(t)).collect::<Result<_>>()?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            weight_decay: config.weight_decay,
            ..AdamConfig::default()
        },
        &model.params.sizes(),
    );
    let clip = config.use_clip.then_some(config.clip_mode);
    let mut state = EarlyStopState::new(config.patience);
    let mut best = model.clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..norm_train.len()).collect();
    let mut step: u64 = 0;
    let mut stopped_early = false;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng_for(config.seed, STREAM_SHUFFLE | epoch as u64));
        let (mut mse_sum, mut clip_sum, mut n_batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let trials: Vec<&FeatureTrial> = chunk.iter().map(|&i| &norm_train[i]).collect();
            let batch = pad_batch(&trials)?;
            let sg = compute_gradients(
                &model,
                &batch,
                clip,
                (config.seed, STREAM_DROPOUT | step),
                (config.seed, STREAM_NOISE | step),
            )
            .map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("{m} (epoch {epoch}, step {step})")),
                other => other,
            })?;
            apply_adam(&mut model, &mut adam, &sg.grads)?;
            model.update_running_stats(&sg.bn_stats);
            mse_sum += sg.mse;
            clip_sum += sg.clip.unwrap_or(0.0);
            n_batches += 1;
            step += 1;
        }
        let val_mcd = validation_mcd(&model, &normalizer, val)?;
        history.push(EpochRecord {
            epoch,
            train_mse: mse_sum / n_batches as f64,
            train_clip: clip_sum / n_batches as f64,
            val_mcd,
        });
        match early_stop_update(&mut state, epoch, val_mcd)? {
            StopDecision::Continue { improved: true } => best = model.clone(),
            StopDecision::Continue { improved: false } => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best,
        normalizer,
        history,
        best_epoch: state.best_epoch.unwrap_or(0),
        best_val_mcd: state.best_val_mcd,
        stopped_early,
    })
}
