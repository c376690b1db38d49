use ndarray::Array2;
use neurodecode::corpus::{generate_synthetic_corpus, GridGeometry, SynthConfig};
use neurodecode::dataset::{preprocess_corpus, FeatureSet, FeatureTrial};
use neurodecode::losses::{mse_loss, ClipMode};
use neurodecode::models::{EncoderVariant, Model, ModelDims};
use neurodecode::training::{
    apply_adam, compute_gradients, early_stop_update, history_csv, pad_batch, run_cv, run_transfer, shuffle_targets,
    shuffled_target_baseline, train_from, train_model, validation_mcd, CvConfig, EarlyStopState, Normalizer,
    StopDecision, TrainConfig,
};
use neurodecode_autodiff::{Adam, AdamConfig, Graph};

fn trial(id: &str, sentence: &str, frames: usize, seed: usize) -> FeatureTrial {
    FeatureTrial {
        trial_id: id.into(),
        sentence_id: sentence.into(),
        repetition_index: 0,
        block_id: "B".into(),
        features: Array2::from_shape_fn((frames, 84), |(t, c)| {
            (((t * 7 + c * 3 + seed * 11) % 17) as f64 - 8.0) / 8.0
        }),
        targets: Array2::from_shape_fn((frames, 29), |(t, c)| {
            (((t * 5 + c + seed * 13) % 11) as f64 - 5.0) / 5.0
        }),
        vowel_intervals: vec![],
        provenance: None,
    }
}

fn tiny_dims() -> ModelDims {
    ModelDims {
        vit_embed: 12,
        vit_latent: 8,
        vit_heads: 2,
        vit_head_dim: 4,
        vit_ffn: 8,
        cnn_channels: [4, 4, 2],
        lstm_hidden: 8,
        lstm_layers: 1,
        head_hidden: 16,
        head_dropout: 0.5,
        projector_hidden: 8,
        ..ModelDims::compact()
    }
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        dims: tiny_dims(),
        batch_size: 4,
        max_epochs: 3,
        lr: 1e-3,
        ..TrainConfig::default()
    }
}

#[test]
fn pad_batch_masks_padding() {
    let a = trial("a", "s", 3, 1);
    let b = trial("b", "t", 5, 2);
    let batch = pad_batch(&[&a, &b]).unwrap();
    assert_eq!(batch.features.shape(), &[2, 5, 84]);
    assert_eq!(batch.mask, vec![1., 1., 1., 0., 0., 1., 1., 1., 1., 1.]);
    assert_eq!(batch.lengths, vec![3, 5]);
    let eq = pad_batch(&[&a, &trial("c", "u", 3, 3)]).unwrap();
    assert!(eq.mask.iter().all(|m| *m == 1.0));
    assert!(pad_batch(&[]).is_err());

    // padded MSE against per-trial losses weighted by frames
    let pa = a.targets.mapv(|v| v * 0.5 + 0.1);
    let pb = b.targets.mapv(|v| -v);
    let la = mse_loss(pa.view(), a.targets.view(), &[true; 3]).unwrap();
    let lb = mse_loss(pb.view(), b.targets.view(), &[true; 5]).unwrap();
    let mut pred = vec![0.0; 2 * 5 * 29];
    pred[..3 * 29].copy_from_slice(pa.as_slice().unwrap());
    pred[5 * 29..].copy_from_slice(pb.as_slice().unwrap());
    let mut g = Graph::new();
    let p = g.constant(neurodecode_autodiff::Tensor::new(vec![2, 5, 29], pred).unwrap());
    let t = g.constant(batch.targets.clone());
    let l = g.masked_mse(p, t, &batch.mask).unwrap();
    assert!((g.value(l).item() - (3.0 * la + 5.0 * lb) / 8.0).abs() < 1e-12);
}

#[test]
fn early_stopping_rules() {
    let mut s = EarlyStopState::new(20);
    for (e, v) in (0..100).map(|e| (e, 10.0 - e as f64 * 0.01)) {
        assert_eq!(
            early_stop_update(&mut s, e, v).unwrap(),
            StopDecision::Continue { improved: true }
        );
    }
    let mut s = EarlyStopState::new(20);
    early_stop_update(&mut s, 0, 5.0).unwrap();
    for e in 1..20 {
        let d = early_stop_update(&mut s, e, if e % 2 == 0 { 5.0 } else { 6.0 }).unwrap();
        assert_eq!(d, StopDecision::Continue { improved: false });
        assert_eq!(s.counter, e);
    }
    assert_eq!(early_stop_update(&mut s, 20, 5.0).unwrap(), StopDecision::Stop);
    assert_eq!(s.best_epoch, Some(0));
    assert!(early_stop_update(&mut s, 21, f64::NAN).is_err());
}

fn small_batch() -> neurodecode::training::Batch {
    let ts: Vec<FeatureTrial> = (0..4)
        .map(|i| trial(&format!("t{i}"), &format!("s{}", i % 3), 5 + i, i))
        .collect();
    let refs: Vec<&FeatureTrial> = ts.iter().collect();
    pad_batch(&refs).unwrap()
}

#[test]
fn contrastive_gradient_skips_the_decoder() {
    let m = Model::new(tiny_config().model_config(), GridGeometry::new(2, 2), 1).unwrap();
    let batch = small_batch();
    let plain = compute_gradients(&m, &batch, None, (1, 1), (2, 2)).unwrap();
    let joint = compute_gradients(&m, &batch, Some(ClipMode::NegatedDistance), (1, 1), (2, 2)).unwrap();
    assert_eq!(plain.mse, joint.mse);
    assert!(joint.clip.unwrap() > 0.0);
    let mut enc_differs = false;
    for ((p, a), b) in m.params.iter().zip(&plain.grads).zip(&joint.grads) {
        if p.name.starts_with("dec.") {
            assert_eq!(a, b, "{}", p.name);
        } else if p.name.starts_with("proj.") {
            assert!(a.iter().all(|v| *v == 0.0));
            assert!(b.iter().any(|v| *v != 0.0), "{}", p.name);
        } else if a != b {
            enc_differs = true;
        }
    }
    assert!(enc_differs);
}

#[test]
fn small_adam_step_lowers_the_loss() {
    let cfg = TrainConfig {
        dims: ModelDims {
            head_dropout: 0.0,
            ..tiny_dims()
        },
        ..tiny_config()
    };
    let mut m = Model::new(cfg.model_config(), GridGeometry::new(2, 2), 2).unwrap();
    let batch = small_batch();
    let before = compute_gradients(&m, &batch, None, (0, 0), (0, 0)).unwrap();
    let mut adam = Adam::new(
        AdamConfig {
            lr: 1e-5,
            ..AdamConfig::default()
        },
        &m.params.sizes(),
    );
    apply_adam(&mut m, &mut adam, &before.grads).unwrap();
    let after = compute_gradients(&m, &batch, None, (0, 0), (0, 0)).unwrap();
    assert!(after.mse < before.mse);
}

fn synth_set(n_sentences: usize, reps: usize, seed: u64) -> FeatureSet {
    let cfg = SynthConfig {
        n_sentences,
        reps_per_sentence: reps,
        grid: GridGeometry::new(2, 2),
        frames_range: (30, 40),
        seed,
        ..SynthConfig::default()
    };
    preprocess_corpus(&generate_synthetic_corpus(&cfg).unwrap()).unwrap()
}

#[test]
fn training_is_deterministic_and_keeps_the_best_checkpoint() {
    let set = synth_set(4, 2, 1);
    let (train, val) = set.trials.split_at(6);
    let cfg = TrainConfig {
        max_epochs: 6,
        use_clip: true,
        ..tiny_config()
    };
    let a = train_model(&cfg, set.grid, train, val).unwrap();
    let b = train_model(&cfg, set.grid, train, val).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model, b.model);
    let best = a.history.iter().map(|r| r.val_mcd).fold(f64::INFINITY, f64::min);
    assert_eq!(a.best_val_mcd, best);
    assert_eq!(a.history[a.best_epoch - 1].val_mcd, best);
    let again = validation_mcd(&a.model, &a.normalizer, val).unwrap();
    assert!((again - best).abs() < 1e-9);
    assert!(history_csv(&a.history).starts_with("epoch,train_mse,train_clip,val_mcd\n1,"));
    assert!(a.history.iter().all(|r| r.train_clip > 0.0));
    assert!(train_model(&cfg, set.grid, train, train).is_err());
}

#[test]
fn patience_stops_training() {
    let set = synth_set(3, 2, 2);
    let (train, val) = set.trials.split_at(4);
    let cfg = TrainConfig {
        max_epochs: 200,
        patience: 2,
        lr: 0.5,
        ..tiny_config()
    };
    let out = train_model(&cfg, set.grid, train, val).unwrap();
    assert!(out.stopped_early);
    assert_eq!(out.history.len(), out.best_epoch + 2);
}

#[test]
fn tiny_set_is_memorised() {
    let set = synth_set(2, 2, 3);
    let train = &set.trials[..3];
    let val = &set.trials[3..];
    let cfg = TrainConfig {
        dims: ModelDims {
            head_dropout: 0.0,
            ..ModelDims::compact()
        },
        max_epochs: 300,
        patience: 300,
        lr: 1e-3,
        ..tiny_config()
    };
    let out = train_model(&cfg, set.grid, train, val).unwrap();
    let first = out.history[0].train_mse;
    let last = out.history.last().unwrap().train_mse;
    assert!(last < 0.01 * first, "{first} -> {last}");
}

#[test]
fn warm_start_converges_faster() {
    let set = synth_set(4, 2, 4);
    let (train, val) = set.trials.split_at(6);
    let cfg = TrainConfig {
        dims: ModelDims::compact(),
        max_epochs: 60,
        patience: 100,
        lr: 1e-3,
        ..tiny_config()
    };
    let pre = train_model(&cfg, set.grid, train, val).unwrap();
    let warm = pre.model.transfer_init(set.grid, 9).unwrap();
    let short = TrainConfig {
        max_epochs: 5,
        ..cfg.clone()
    };
    let tl = train_from(&short, warm, train, val).unwrap();
    let fresh = train_model(&short, set.grid, train, val).unwrap();
    let (w, f) = (tl.history[4].train_mse, fresh.history[4].train_mse);
    assert!(w <= f, "{w} vs {f}");
}

#[test]
fn cv_partitions_the_corpus() {
    let set = synth_set(5, 2, 5);
    let cfg = CvConfig {
        train: TrainConfig {
            max_epochs: 1,
            augmentation_factor: 2,
            ..tiny_config()
        },
        ..CvConfig::default()
    };
    let report = run_cv(&cfg, &set).unwrap();
    assert_eq!(report.folds.len(), 10);
    let mut seen: Vec<&String> = report.folds.iter().flat_map(|f| &f.test_ids).collect();
    seen.sort();
    let mut all: Vec<&String> = set.trials.iter().map(|t| &t.trial_id).collect();
    all.sort();
    assert_eq!(seen, all);
    assert!(seen.iter().all(|id| !id.contains('~')));
    let pccs: Vec<f64> = report.folds.iter().flat_map(|f| f.pcc.clone()).collect();
    assert_eq!(pccs.len(), 10);
    assert!((report.pcc_mean - pccs.iter().sum::<f64>() / 10.0).abs() < 1e-12);
    let vowels: u64 = set.trials.iter().map(|t| t.vowel_intervals.len() as u64).sum();
    assert_eq!(report.confusion.total(), vowels);
    assert!(report.table_row().starts_with("ViT+Aug | "));
    assert_eq!(report.table_row().split(" | ").count(), 4);
}

#[test]
fn shuffling_preserves_the_target_multiset() {
    let ts: Vec<FeatureTrial> = (0..6).map(|i| trial(&format!("t{i}"), "s", 8, i)).collect();
    let sh = shuffle_targets(&ts, 4);
    let key = |a: &Array2<f64>| a.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let mut before: Vec<_> = ts.iter().map(|t| key(&t.targets)).collect();
    let mut after: Vec<_> = sh.iter().map(|t| key(&t.targets)).collect();
    before.sort();
    after.sort();
    assert_eq!(before, after);
    assert!(sh.iter().zip(&ts).all(|(a, b)| a.features == b.features));
    assert!(sh.iter().zip(&ts).any(|(a, b)| a.targets != b.targets));
}

#[test]
fn shuffled_baseline_returns_one_score_per_run() {
    let set = synth_set(5, 2, 6);
    let cfg = CvConfig {
        train: TrainConfig {
            max_epochs: 1,
            ..tiny_config()
        },
        ..CvConfig::default()
    };
    let f1 = shuffled_target_baseline(&cfg, &set, 3).unwrap();
    assert_eq!(f1.len(), 3);
    assert!(f1.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn normalizer_inverts() {
    let ts: Vec<FeatureTrial> = (0..3).map(|i| trial(&format!("t{i}"), "s", 8, i)).collect();
    let n = Normalizer::fit(&ts).unwrap();
    let z = n.apply(&ts[1]).unwrap();
    let back = n.invert_targets(z.targets.view()).unwrap();
    assert!((&back - &ts[1].targets).iter().all(|d| d.abs() < 1e-12));
}

#[test]
fn config_validation() {
    let bad = TrainConfig {
        patience: 0,
        ..tiny_config()
    };
    assert!(bad.validate().is_err());
    let bad = TrainConfig {
        use_clip: true,
        batch_size: 1,
        ..tiny_config()
    };
    assert!(bad.validate().is_err());
    let cnn = TrainConfig {
        encoder: EncoderVariant::Cnn,
        ..tiny_config()
    };
    assert!(cnn.validate().is_ok());
}

#[test]
fn transfer_runs_across_grid_sizes() {
    let source = synth_set(5, 2, 7);
    let cfg = SynthConfig {
        n_sentences: 5,
        reps_per_sentence: 2,
        grid: GridGeometry::new(3, 2),
        frames_range: (30, 40),
        seed: 8,
        ..SynthConfig::default()
    };
    let target = preprocess_corpus(&generate_synthetic_corpus(&cfg).unwrap()).unwrap();
    let cv = CvConfig {
        train: TrainConfig {
            max_epochs: 1,
            ..tiny_config()
        },
        ..CvConfig::default()
    };
    let report = run_transfer(&cv, &source, &target).unwrap();
    assert_eq!(report.transfer.folds.len(), 10);
    assert_eq!(report.baseline.folds.len(), 10);
    assert!(report.source_best_val_mcd.is_finite());
    let cnn = CvConfig {
        train: TrainConfig {
            encoder: EncoderVariant::Cnn,
            ..cv.train.clone()
        },
        ..cv
    };
    assert!(run_transfer(&cnn, &source, &target).is_err());
}
