use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ndarray::{Array1, Array2, Axis};
use neurodecode::augment::augment_corpus;
use neurodecode::contamination::{audit_block, bonferroni_report, format_table};
use neurodecode::corpus::{generate_synthetic_corpus, load_corpus, write_corpus, Corpus};
use neurodecode::dataset::{load_feature_set, preprocess_corpus, write_feature_set, FeatureSet};
use neurodecode::evaluation::{
    aggregate_saliency, collect_templates, f1_scores, mann_whitney_u, mean_sd, smoothgrad, SaliencyAxis,
};
use neurodecode::models::{load_checkpoint, write_checkpoint, Model};
use neurodecode::training::{
    evaluate_test, history_csv, run_cv_folds, run_transfer, shuffled_target_baseline, train_from, CvReport, Normalizer,
    TestMetrics,
};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, RunConfig};
use crate::plot;
use crate::run::Run;

pub const NORMALIZER_FILE: &str = "normalizer.json";

/// An upstream artifact is absent; maps to exit code 3.
#[derive(Debug)]
pub struct MissingInput(pub String);

impl std::fmt::Display for MissingInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for MissingInput {}

pub struct Ctx<'a> {
    pub config: &'a RunConfig,
    pub fold: Option<usize>,
    pub threads: usize,
}

fn input<'p>(path: &'p Option<PathBuf>, key: &str, producer: &str) -> Result<&'p Path> {
    let Some(p) = path else {
        return Err(ConfigError(format!(
            "paths.{key} is not set; point it at the output of `neurodecode {producer}`"
        ))
        .into());
    };
    if !p.exists() {
        return Err(MissingInput(format!("{} not found; run `neurodecode {producer}` first", p.display())).into());
    }
    Ok(p)
}

fn corpus(ctx: &Ctx<'_>) -> Result<Corpus> {
    Ok(load_corpus(input(&ctx.config.paths.corpus, "corpus", "synth")?)?)
}

fn features(path: &Option<PathBuf>, key: &str) -> Result<FeatureSet> {
    Ok(load_feature_set(input(path, key, "preprocess")?)?)
}

fn trained(ctx: &Ctx<'_>) -> Result<(Model, Normalizer)> {
    let manifest = input(&ctx.config.paths.checkpoint, "checkpoint", "train")?;
    let model = load_checkpoint(manifest)?;
    let norm_path = manifest.with_file_name(NORMALIZER_FILE);
    let text = std::fs::read_to_string(&norm_path).map_err(|_| {
        MissingInput(format!(
            "{} not found; run `neurodecode train` first",
            norm_path.display()
        ))
    })?;
    Ok((model, serde_json::from_str(&text)?))
}

fn fold_index(ctx: &Ctx<'_>) -> Result<usize> {
    let k = ctx.fold.unwrap_or(0);
    if k >= ctx.config.cv.n_folds {
        return Err(ConfigError(format!("--fold {k} out of range 0..{}", ctx.config.cv.n_folds)).into());
    }
    Ok(k)
}

pub fn synth(ctx: &Ctx<'_>, run: &mut Run) -> Result<()> {
    let c = generate_synthetic_corpus(&ctx.config.synth)?;
    let manifest = write_corpus(&c, &run.out)?;
    run.record(&manifest);
    for sub in ["neural", "audio", "wave"] {
        run.record_tree(sub);
    }
    println!("wrote {} trials to {}", c.len(), manifest.display());
    Ok(())
}

pub fn preprocess(ctx: &Ctx<'_>, run: &mut Run) -> Result<()> {
    let set = preprocess_corpus(&corpus(ctx)?)?;
    let manifest = write_feature_set(&set, &run.out)?;
    run.record(&manifest);
    run.record_tree("feat");
    println!(
        "wrote features for {} trials to {}",
        set.trials.len(),
        manifest.display()
    );
    Ok(())
}

pub fn contam(ctx: &Ctx<'_>, run: &mut Run) -> Result<()> {
    let c = corpus(ctx)?;
    let s = &ctx.config.contam;
    // Trials of a block are concatenated in corpus order.
    let mut blocks: BTreeMap<&str, (Vec<f64>, Vec<Array2<f32>>)> = BTreeMap::new();
    for t in c.trials() {
        let wave = t.audio_waveform.as_ref().ok_or_else(|| {
            MissingInput(format!(
                "trial {} has no audio waveform; the audit needs one per trial",
                t.trial_id
            ))
        })?;
        let entry = blocks.entry(t.block_id.as_str()).or_default();
        entry.0.extend(wave.iter().map(|&v| f64::from(v)));
        entry.1.push(t.raw_neural.clone());
    }
    let mut reports = Vec::with_capacity(blocks.len());
    for (i, (block, (wave, parts))) in blocks.iter().enumerate() {
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let neural = ndarray::concatenate(Axis(1), &views)?.mapv(f64::from);
        reports.push(audit_block(
            block,
            wave,
            neural.view(),
            c.sample_rate_neural(),
            s.n_surrogates,
            ctx.config.seed.wrapping_add(i as u64),
        )?);
    }
    let reports = bonferroni_report(&reports, s.alpha)?;
    let table = format_table(&reports);
    print!("{table}");
    run.write("contamination.txt", &table)?;
    run.write_json("contamination.json", &reports)?;
    Ok(())
}

pub fn augment(ctx: &Ctx<'_>, run: &mut Run) -> Result<()> {
    let mut set = features(&ctx.config.paths.features, "features")?;
    let t = &ctx.config.cv.train;
    set.trials = augment_corpus(&set.trials, t.augmentation_factor, t.seed)?;
    let manifest = write_feature_set(&set, &run.out)?;
    run.record(&manifest);
    run.record_tree("feat");
    println!("wrote {} trials to {}", set.trials.len(), manifest.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    fold: usize,
    best_epoch: usize,
    best_val_mcd: f64,
    epochs_run: usize,
    stopped_early: bool,
    test_ids: &'a [String],
}

pub fn train(ctx: &Ctx<'_>, run: &mut Run) -> Result<()> {
    let set = features(&ctx.config.paths.features, "features")?;
    let cv = &ctx.config.cv;
    let tc = &cv.train;
    tc.validate()?;
    let k = fold_index(ctx)?;
    let fold = cv.folds(&set)?.swap_remove(k);
    let mut train = set.select(&fold.train_ids)?;
    let val = set.select(&fold.validation_ids)?;
    if tc.augmentation_factor > 1 {
        train = augment_corpus(&train, tc.augmentation_factor, tc.seed ^ k as u64)?;
    }
    let model = Model::new(tc.model_config(), set.grid, tc.seed)?;
    let out = train_from(tc, model, &train, &val)?;
    let manifest = write_checkpoint(&out.model, &run.path("checkpoint"))?;
    run.record(&manifest);
    run.record_tree("checkpoint/params");
    run.write_json(&format!("checkpoint/{NORMALIZER_FILE}"), &out.normalizer)?;
    run.write("history.csv", history_csv(&out.history))?;
    run.write_json(
        "train.json",
        &TrainSummary {
            fold: k,
            best_epoch: out.best_epoch,
            best_val_mcd: out.best_val_mcd,
            epochs_run: out.history.len(),
            stopped_early: out.stopped_early,
            test_ids: &fold.test_ids,
        },
    )?;
    println!(
        "fold {k}: best validation MCD {:.3} dB at epoch {} of {}",
        out.best_val_mcd,
        out.best_epoch,
        out.history.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct Evaluation {
    fold: usize,
    pcc_mean: f64,
    pcc_sd: f64,
    mcd_mean: f64,
    mcd_sd: f64,
    macro_f1: f64,
    metrics: TestMetrics,
}

pub fn evaluate(ctx: &Ctx<'_>, run: &mut Run) -> Result<()> {
    let set = features(&ctx.config.paths.features, "features")?;
    let (model, normalizer) = trained(ctx)?;
    if model.grid != set.grid {
        bail!(MissingInput("checkpoint and features come from different grids".into()));
    }
    let k = fold_index(ctx)?;
    let fold = ctx.config.cv.folds(&set)?.swap_remove(k);
    let test = set.select(&fold.test_ids)?;
    let templates = collect_templates(&set.trials);
    let m = evaluate_test(&model, &normalizer, &test, &templates, &set.vowel_inventory)?;
    let (pcc_mean, pcc_sd) = mean_sd(&m.pcc);
    let (mcd_mean, mcd_sd) = mean_sd(&m.mcd);
    let macro_f1 = f1_scores(&m.confusion).macro_f1;
    println!("fold {k}: PCC {pcc_mean:.3}±{pcc_sd:.3}  MCD {mcd_mean:.3}±{mcd_sd:.3}  F1 {macro_f1:.2}");
    run.write("confusion.csv", m.confusion.to_csv())?;
    run.write_json(
        "evaluation.json",
        &Evaluation {
            fold: k,
            pcc_mean,
            pcc_sd,
            mcd_mean,
            mcd_sd,
            macro_f1,
            metrics: m,
        },
    )?;
    Ok(())
}

fn cv_report(ctx: &Ctx<'_>, set: &FeatureSet) -> Result<CvReport> {
    let cv = &ctx.config.cv;
    let which: Vec<usize> = match ctx.fold {
        Some(_) => vec![fold_index(ctx)?],
        None => (0..cv.n_folds).collect(),
    };
    let workers = ctx.threads.clamp(1, which.len());
    if workers == 1 {
        return Ok(run_cv_folds(cv, set, &which)?);
    }
    let groups: Vec<Vec<usize>> = (0..workers)
        .map(|w| which.iter().copied().skip(w).step_by(workers).collect())
        .collect();
    let parts = std::thread::scope(|s| {
        let handles: Vec<_> = groups
            .iter()
            .map(|g| s.spawn(move || run_cv_folds(cv, set, g)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .map_err(|_| anyhow!("a cross-validation worker panicked"))?
                    .map_err(Into::into)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(CvReport::combine(parts)?)
}

fn folds_csv(r: &CvReport) -> String {
    let mut s = String::from("fold,trial,pcc,mcd\n");
    for f in &r.folds {
        for ((id, p), m) in f.test_ids.iter().zip(&f.pcc).zip(&f.mcd) {
            s.push_str(&format!("{},{id},{p},{m}\n", f.fold_index));
        }
    }
    s
}

pub fn cv(ctx: &Ctx<'_>, run: &mut Run) -> Result<()> {
    let set = features(&ctx.config.paths.features, "features")?;
    let report = cv_report(ctx, &set)?;
    let table = format!("{}\n{}\n", CvReport::TABLE_HEADER, report.table_row());
    print!("{table}");
    run.write("table.txt", &table)?;
    run.write("confusion.csv", report.confusion.to_csv())?;
    run.write("folds.csv", folds_csv(&report))?;
    run.write_json("cv.json", &report)?;
    Ok(())
}

pub fn transfer(ctx: &Ctx<'_>, run: &mut Run) -> Result<()> {
    let source = features(&ctx.config.paths.source_features, "source_features")?;
    let target = features(&ctx.config.paths.features, "features")?;
    let r = run_transfer(&ctx.config.cv, &source, &target)?;
    let table = format!(
        "{}\n{}\n{}\n",
        CvReport::TABLE_HEADER,
        r.baseline.table_row(),
        r.transfer.table_row()
    );
    print!("{table}");
    run.write("table.txt", &table)?;
    run.write_json("transfer.json", &r)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Baseline {
    shuffled_f1: Vec<f64>,
    true_f1: Option<f64>,
    true_fold_f1: Option<Vec<f64>>,
    all_below_true: Option<bool>,
    mann_whitney_p: Option<f64>,
}

pub fn baseline(ctx: &Ctx<'_>, run: &mut Run) -> Result<()> {
    let set = features(&ctx.config.paths.features, "features")?;
    let shuffled = shuffled_target_baseline(&ctx.config.cv, &set, ctx.config.baseline.n_runs)?;
    let truth: Option<CvReport> = match &ctx.config.paths.cv_report {
        Some(_) => {
            let p = input(&ctx.config.paths.cv_report, "cv_report", "cv")?;
            let text = std::fs::read_to_string(p)?;
            Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    let mut b = Baseline {
        shuffled_f1: shuffled,
        true_f1: None,
        true_fold_f1: None,
        all_below_true: None,
        mann_whitney_p: None,
    };
    if let Some(r) = truth {
        let folds = r.fold_f1();
        b.mann_whitney_p = Some(mann_whitney_u(&folds, &b.shuffled_f1)?);
        b.all_below_true = Some(b.shuffled_f1.iter().all(|&f| f < r.f1.macro_f1));
        b.true_f1 = Some(r.f1.macro_f1);
        b.true_fold_f1 = Some(folds);
    }
    let (m, sd) = mean_sd(&b.shuffled_f1);
    println!("shuffled-target F1 {m:.3}±{sd:.3} over {} runs", b.shuffled_f1.len());
    if let (Some(t), Some(p)) = (b.true_f1, b.mann_whitney_p) {
        println!("true F1 {t:.3}; Mann-Whitney p = {p:.3e}");
    }
    run.write_json("baseline.json", &b)?;
    Ok(())
}

#[derive(Serialize)]
struct SaliencySummary {
    trials: Vec<String>,
    n: usize,
    sigma: f64,
    channels_of_interest: Option<Vec<usize>>,
    mass_fraction: Option<f64>,
}

fn grid_csv(a: &Array2<f64>) -> String {
    let mut s = String::new();
    for row in a.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn saliency(ctx: &Ctx<'_>, run: &mut Run) -> Result<()> {
    let set = features(&ctx.config.paths.features, "features")?;
    let (model, normalizer) = trained(ctx)?;
    let s = &ctx.config.saliency;
    let ids = match &s.trial {
        Some(id) => vec![id.clone()],
        None => ctx.config.cv.folds(&set)?.swap_remove(fold_index(ctx)?).test_ids,
    };
    let trials = set.select(&ids)?;
    let mut electrodes = Array2::zeros((set.grid.n_x, set.grid.n_y));
    let mut feats = Array2::zeros((1, neurodecode::corpus::N_FEATURES));
    for (i, t) in trials.iter().enumerate() {
        let z = normalizer.apply(t)?;
        let seed = ctx.config.seed.wrapping_add(i as u64);
        let map = smoothgrad(&model, z.features.view(), z.targets.view(), s.n, s.sigma, seed)?;
        electrodes += &aggregate_saliency(&map, SaliencyAxis::Electrode, set.grid)?;
        feats += &aggregate_saliency(&map, SaliencyAxis::Feature, set.grid)?;
    }
    electrodes /= trials.len() as f64;
    feats /= trials.len() as f64;
    let flat: Array1<f64> = electrodes.iter().copied().collect();
    let mass_fraction = match &s.channels_of_interest {
        Some(ch) => {
            if let Some(bad) = ch.iter().find(|&&c| c >= flat.len()) {
                return Err(ConfigError(format!("electrode {bad} outside the grid")).into());
            }
            Some(ch.iter().map(|&c| flat[c]).sum::<f64>() / flat.sum())
        }
        None => None,
    };
    if let Some(f) = mass_fraction {
        println!("channels of interest hold {:.1}% of the saliency mass", 100.0 * f);
    }
    run.write("saliency_electrodes.csv", grid_csv(&electrodes))?;
    run.write("saliency_features.csv", grid_csv(&feats))?;
    run.write_json(
        "saliency.json",
        &SaliencySummary {
            trials: ids,
            n: s.n,
            sigma: s.sigma,
            channels_of_interest: s.channels_of_interest.clone(),
            mass_fraction,
        },
    )?;
    Ok(())
}

pub fn plot(ctx: &Ctx<'_>, run: &mut Run) -> Result<()> {
    let Some(src) = &ctx.config.plot.input else {
        return Err(ConfigError("plot.input is not set".into()).into());
    };
    if !src.exists() {
        bail!(MissingInput(format!(
            "{} not found; `cv`, `evaluate` and `saliency` write plottable grids",
            src.display()
        )));
    }
    let grid = plot::read_grid(src)?;
    let img = plot::heatmap(&grid, ctx.config.plot.cell_px)?;
    let stem = src.file_stem().and_then(|s| s.to_str()).unwrap_or("grid");
    let name = format!("{stem}.png");
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    run.write(&name, bytes)?;
    println!("wrote {}", run.path(&name).display());
    Ok(())
}
