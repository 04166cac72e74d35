use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{RunConfig, SEED_ENV};
use super::pipeline::{load_epochs, load_stats, prepare, stats_to_text};
use super::{EvalArgs, FeaturesArgs, Overrides, Part, SynthArgs, TrainArgs};
use crate::dataio::{split, synth_dataset, write_dataset, SynthConfig};
use crate::metrics::{project_features, EvalReport};
use crate::model::{load_checkpoint, save_checkpoint, Precision, TransformerClassifier};
use crate::signal::EpochSet;
use crate::tensor::Tensor;
use crate::train::{evaluate, fit, TrainLog};
use crate::{Error, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.eegt";
pub const LOG_FILE: &str = "train_log.tsv";
pub const CONFIG_FILE: &str = "run_config.txt";
pub const STATS_FILE: &str = "standardization.txt";
pub const TEST_REPORT_FILE: &str = "test_report.txt";
pub const FEATURES_FILE: &str = "features.tsv";

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .parse()
            .map(Some)
            .map_err(|_| Error::Parameter(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Writes the recordings and manifest; returns the number of files.
pub fn cmd_synth(a: &SynthArgs) -> Result<usize> {
    let classes: usize = a.classes.parse().map_err(|_| Error::Parameter(format!("bad class count {}", a.classes)))?;
    if !(a.seconds > 0.0 && a.seconds.is_finite()) {
        return Err(Error::Parameter(format!("--seconds must be positive, got {}", a.seconds)));
    }
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(7),
    };
    let (manifest, recordings) = synth_dataset(&SynthConfig::new(classes, a.subjects, a.seconds, seed))?;
    write_dataset(&a.out, &manifest, &recordings)
}

pub struct TrainOutputs {
    pub config: RunConfig,
    pub log: TrainLog,
    pub report: EvalReport,
    pub summary: String,
}

/// Trains on the manifest and writes checkpoint, log, resolved config,
/// standardization statistics and the test report into `--out`.
///
/// Nothing is written unless training succeeds.
pub fn cmd_train(a: &TrainArgs) -> Result<TrainOutputs> {
    let mut flags = Vec::new();
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            flags.push((k.to_string(), v));
        }
    };
    push("data", a.data.as_ref().map(|p| p.display().to_string()));
    push("scheme", a.scheme.clone());
    push("split.mode", a.split_mode.clone());
    push("train.max_epochs", a.max_epochs.map(|v| v.to_string()));
    push("model.num_heads", a.heads.map(|v| v.to_string()));
    flags.extend(a.overrides.pairs());
    let cfg = RunConfig::resolve(a.config.as_deref(), &flags)?;
    cfg.validate()?;
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| Error::Parameter("no data manifest: pass --data or set `data` in the config".into()))?;

    let set = load_epochs(&data, &cfg)?.value;
    let parts = prepare(&set, &cfg)?;
    let model = TransformerClassifier::new(cfg.model_config(set.num_channels()))?;
    log::info!(
        "{} train / {} val / {} test epochs, {} parameters",
        parts.train.len(),
        parts.val.len(),
        parts.test.len(),
        model.parameter_count()
    );
    let (model, log) = fit(model, &parts.train, &parts.val, &cfg.train)?;
    let ev = evaluate(&model, &parts.test, cfg.train.batch_size)?;
    let report = EvalReport::build(&ev.logits, parts.test.labels(), parts.test.class_names())?;

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    save_checkpoint(&a.out.join(CHECKPOINT_FILE), &model, Precision::F64)?;
    write(&a.out.join(LOG_FILE), &log.to_text())?;
    write(&a.out.join(CONFIG_FILE), &cfg.to_text())?;
    write(&a.out.join(STATS_FILE), &stats_to_text(&parts.stats))?;
    write(&a.out.join(TEST_REPORT_FILE), &report.to_text())?;
    let summary = format!(
        "best epoch {} of {}; test {}",
        log.best_epoch,
        log.stopped_epoch,
        report.summary()
    );
    Ok(TrainOutputs { config: cfg, log, report, summary })
}

/// Checkpoint, its resolved config and the standardized epochs of one split part.
fn load_for_model(model_path: &Path, data: &Path, overrides: &Overrides, part: Part) -> Result<(TransformerClassifier, RunConfig, EpochSet)> {
    let model = load_checkpoint(model_path)?;
    let dir: PathBuf = model_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let cfg = RunConfig::resolve(Some(&dir.join(CONFIG_FILE)), &overrides.pairs())?;
    cfg.validate()?;
    let mc = model.config();
    if cfg.signal.window_samples != mc.window_samples {
        return Err(Error::Contract(format!(
            "data window is {} samples but the checkpoint expects {}",
            cfg.signal.window_samples, mc.window_samples
        )));
    }
    if cfg.scheme.num_classes() != mc.num_classes {
        return Err(Error::Contract(format!(
            "scheme {} has {} classes but the checkpoint has {}",
            cfg.scheme,
            cfg.scheme.num_classes(),
            mc.num_classes
        )));
    }
    let stats = load_stats(&dir.join(STATS_FILE))?;
    let set = load_epochs(data, &cfg)?.value;
    if set.num_channels() != mc.num_channels {
        return Err(Error::Contract(format!(
            "data has {} channels but the checkpoint expects {}",
            set.num_channels(),
            mc.num_channels
        )));
    }
    let chosen = match part {
        Part::All => set,
        _ => {
            let (train, val, test) = split(&set, &cfg.split)?;
            match part {
                Part::Train => train,
                Part::Val => val,
                _ => test,
            }
        }
    };
    let chosen = stats.apply(&chosen)?;
    Ok((model, cfg, chosen))
}

/// Writes the evaluation report for the chosen split part.
pub fn cmd_eval(a: &EvalArgs) -> Result<EvalReport> {
    let (model, cfg, set) = load_for_model(&a.model, &a.data, &a.overrides, a.split)?;
    let ev = evaluate(&model, &set, cfg.train.batch_size)?;
    let report = EvalReport::build(&ev.logits, set.labels(), set.class_names())?;
    if let Some(parent) = a.report.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write(&a.report, &report.to_text())?;
    Ok(report)
}

/// Writes `features.tsv` (two projected coordinates, label, class, subject per epoch).
pub fn cmd_features(a: &FeaturesArgs) -> Result<usize> {
    let (model, cfg, set) = load_for_model(&a.model, &a.data, &a.overrides, a.split)?;
    let d = model.config().d_model;
    let mut pooled = Vec::with_capacity(set.len() * d);
    let all: Vec<usize> = (0..set.len()).collect();
    for idx in all.chunks(cfg.train.batch_size) {
        pooled.extend_from_slice(model.features(&set.batch(idx))?.data());
    }
    let projected = project_features(&Tensor::new([set.len(), d], pooled)?)?.value;
    let mut out = String::from("pc1\tpc2\tlabel\tclass\tsubject\n");
    for i in 0..set.len() {
        let l = set.labels()[i];
        let _ = writeln!(
            out,
            "{}\t{}\t{l}\t{}\t{}",
            projected.at(&[i, 0]),
            projected.at(&[i, 1]),
            set.class_names()[l],
            set.group_ids()[i]
        );
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write(&a.out.join(FEATURES_FILE), &out)?;
    Ok(set.len())
}
