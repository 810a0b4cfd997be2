//! The four subcommand bodies. Each writes its manifest before doing any
//! real work, so a crashed run still leaves a record of what was asked.

use std::fs;
use std::path::{Path, PathBuf};

use ecg_mamba_core::checkpoint;
use ecg_mamba_core::data::{
    label_vector, load_corpus, synth_generate, write_labels_csv, write_native, EcgRecord,
    LabelMap, SplitPlan, MAX_SYNTH_CLASSES, NATIVE_EXT,
};
use ecg_mamba_core::metrics::macro_report;
use ecg_mamba_core::model::Model;
use ecg_mamba_core::rng::derive_seed;
use ecg_mamba_core::train::{evaluate, train_loop, TrainOutcome};

use crate::config::{usage, write_manifest, CliError, RunSettings};
use crate::plot::{parse_log, render_svg};

pub fn synth(out: PathBuf, records: usize, classes: usize, seed: u64) -> Result<(), CliError> {
    if records == 0 {
        return Err(usage("--records must be at least 1"));
    }
    if classes == 0 || classes > MAX_SYNTH_CLASSES {
        return Err(usage(format!(
            "--classes must be in 1..={MAX_SYNTH_CLASSES}, got {classes}"
        )));
    }
    write_manifest(
        &out,
        "synth",
        &format!("records={records}\nclasses={classes}\nseed={seed}\n"),
    )?;
    let corpus = synth_generate(records, classes, seed)?;
    for rec in &corpus {
        write_native(rec, &out.join(format!("{}.{NATIVE_EXT}", rec.id)))?;
    }
    write_labels_csv(&corpus, &out.join("labels.csv"))?;
    fs::write(
        out.join("label_map.csv"),
        LabelMap::synthetic(classes).serialize(),
    )?;
    println!(
        "wrote {records} records with {classes} classes to {}",
        out.display()
    );
    Ok(())
}

/// Load a corpus directory and its label map, side by side.
fn load_labeled(data: &Path) -> Result<(Vec<EcgRecord>, LabelMap), CliError> {
    let corpus = load_corpus(data)?;
    let map = LabelMap::load(&data.join("label_map.csv"))?;
    Ok((corpus, map))
}

fn owned(ids: Vec<&str>) -> Vec<String> {
    ids.into_iter().map(str::to_owned).collect()
}

pub fn train(
    data: PathBuf,
    config: Option<&Path>,
    out: PathBuf,
    folds: usize,
    seed_flag: Option<u64>,
) -> Result<(), CliError> {
    if folds < 2 {
        return Err(usage("--folds must be at least 2"));
    }
    let mut settings = match config {
        Some(path) => RunSettings::from_file(path)?,
        None => RunSettings::default(),
    };
    if let Some(seed) = seed_flag {
        settings.train.seed = seed;
    }
    let (corpus, map) = load_labeled(&data)?;
    if settings.n_classes_explicit {
        if settings.model.n_classes != map.n_classes() {
            return Err(usage(format!(
                "config pins n_classes={} but the corpus label map has {} classes",
                settings.model.n_classes,
                map.n_classes()
            )));
        }
    } else {
        settings.model.n_classes = map.n_classes();
    }
    settings
        .model
        .validate()
        .map_err(|e| usage(e.to_string()))?;
    settings
        .train
        .validate()
        .map_err(|e| usage(e.to_string()))?;
    if !(settings.test_frac > 0.0 && settings.test_frac < 1.0) {
        return Err(usage(format!(
            "test_frac must be in (0, 1), got {}",
            settings.test_frac
        )));
    }

    write_manifest(
        &out,
        "train",
        &format!(
            "data={}\nfolds={folds}\n{}",
            data.display(),
            settings.to_kv()
        ),
    )?;

    let labeled: Vec<(String, Vec<f64>)> = corpus
        .iter()
        .map(|r| {
            (
                r.id.clone(),
                label_vector(r.dx_codes.iter().map(|s| s.as_str()), &map),
            )
        })
        .collect();
    let plan = SplitPlan::build(&labeled, settings.test_frac, folds, settings.train.seed)?;
    plan.save(&out.join("split.tsv"))?;

    let seed = settings.train.seed;
    let mut fold_rows = Vec::with_capacity(folds);
    for fold in 0..folds {
        let fit = owned(plan.fit_ids(fold));
        let val = owned(plan.val_ids(fold));
        let model = Model::init(&settings.model, derive_seed(seed, 1000 + fold as u64))?;
        let mut cfg = settings.train.clone();
        cfg.seed = derive_seed(seed, 2000 + fold as u64);
        let fold_dir = out.join(format!("fold-{fold}"));
        let TrainOutcome {
            rows, best_epoch, ..
        } = train_loop(model, &corpus, &map, &fit, &val, &cfg, &fold_dir)?;
        let last = rows.last().expect("at least one epoch");
        println!(
            "fold {fold}: best epoch {best_epoch}, final val auprc {:.6}, val auroc {:.6}",
            last.val_auprc, last.val_auroc
        );
        fold_rows.push((fold, best_epoch, last.val_auprc, last.val_auroc));
    }

    let mut summary = String::from("fold\tbest_epoch\tval_auprc\tval_auroc\n");
    for (fold, best, auprc, auroc) in &fold_rows {
        summary.push_str(&format!("{fold}\t{best}\t{auprc}\t{auroc}\n"));
    }
    let column = |pick: fn(&(usize, usize, f64, f64)) -> f64| -> (f64, f64) {
        let vals: Vec<f64> = fold_rows.iter().map(pick).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        (mean, var.sqrt())
    };
    let (ap_mean, ap_std) = column(|r| r.2);
    let (roc_mean, roc_std) = column(|r| r.3);
    summary.push_str(&format!("mean\t-\t{ap_mean}\t{roc_mean}\n"));
    summary.push_str(&format!("std\t-\t{ap_std}\t{roc_std}\n"));
    fs::write(out.join("summary.tsv"), &summary)?;
    println!("cross-fold val auprc {ap_mean:.6} ± {ap_std:.6}, val auroc {roc_mean:.6} ± {roc_std:.6}");
    Ok(())
}

pub fn eval(
    ckpt: PathBuf,
    data: PathBuf,
    split: Option<&Path>,
    fold: Option<usize>,
    out: PathBuf,
) -> Result<(), CliError> {
    if fold.is_some() && split.is_none() {
        return Err(usage("--fold needs --split to locate the fold assignments"));
    }
    write_manifest(
        &out,
        "eval",
        &format!(
            "checkpoint={}\ndata={}\nsplit={}\nfold={}\n",
            ckpt.display(),
            data.display(),
            split.map_or_else(|| "-".into(), |p| p.display().to_string()),
            fold.map_or_else(|| "-".into(), |f| f.to_string()),
        ),
    )?;
    let model = checkpoint::load(&ckpt)?;
    let (corpus, map) = load_labeled(&data)?;
    let ids: Vec<String> = match split {
        None => corpus.iter().map(|r| r.id.clone()).collect(),
        Some(path) => {
            let plan = SplitPlan::load(path)?;
            match fold {
                None => owned(plan.test_ids()),
                Some(f) => {
                    if f >= plan.n_folds() {
                        return Err(usage(format!(
                            "fold {f} out of range: split has {} folds",
                            plan.n_folds()
                        )));
                    }
                    owned(plan.val_ids(f))
                }
            }
        }
    };
    let (scores, labels) = evaluate(&model, &corpus, &ids, &map)?;
    let report = macro_report(&scores, &labels)?;
    fs::write(out.join("metrics.txt"), report.to_text())?;
    fs::write(out.join("metrics.kv"), report.to_kv())?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn plot(log: PathBuf, out: PathBuf) -> Result<(), CliError> {
    let text = fs::read_to_string(&log)?;
    let rows = parse_log(&text).map_err(CliError::Runtime)?;
    let svg = render_svg(&rows, &log.display().to_string());
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(&out, svg)?;
    println!("wrote {}", out.display());
    Ok(())
}
