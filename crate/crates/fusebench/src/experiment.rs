//! A single training run: load, split, train, evaluate, write artifacts.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use fusebench_core::data::{Bundle, FeatureTable, LabelMatrix, SplitSpec};
use fusebench_core::fusion::{predict, train, BranchInput, EpochLog, FusionPlan};
use fusebench_core::metrics::{label_sets, mean_f1, Averaging};
use fusebench_core::Error as CoreError;

use crate::config::{averaging_name, Config};
use crate::error::{write_atomic, Error, Result};
use crate::feat::read_features;
use crate::labels::{format_label_rows, read_labels};
use crate::mmcm::encode_model;

pub const METRICS_FILE: &str = "metrics.csv";
pub const MODEL_FILE: &str = "model.mmcm";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const REPORT_FILE: &str = "report.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct ExitReport {
    /// Sample-mean validation F1 after the last epoch; 0 after divergence,
    /// `None` without a validation split.
    pub final_val_f1: Option<f64>,
    pub diverged: bool,
    pub wall_time: Duration,
}

/// Rows of labels reordered to follow `ids`.
fn align_labels(ids: &[u32], labels: &LabelMatrix) -> Result<LabelMatrix> {
    if labels.len() != ids.len() {
        return Err(CoreError::Alignment(format!(
            "{} label rows for {} feature rows",
            labels.len(),
            ids.len()
        ))
        .into());
    }
    let pos: HashMap<u32, usize> = labels
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (*id, i))
        .collect();
    let rows = ids
        .iter()
        .map(|id| {
            pos.get(id)
                .copied()
                .ok_or_else(|| CoreError::Alignment(format!("no labels for sample id {id}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(labels.select(&rows))
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::line("config", 0, format!("`{key}` is required")))
}

/// Reads and aligns the configured dataset.
pub fn load_bundle(cfg: &Config) -> Result<Bundle> {
    let image = read_features(required(&cfg.img, "data.img")?)?;
    let text = read_features(required(&cfg.txt, "data.txt")?)?;
    if image.ids() != text.ids() {
        return Err(
            CoreError::Alignment("image and text feature files list different ids".into()).into(),
        );
    }
    let labels = read_labels(required(&cfg.labels, "data.labels")?, cfg.classes)?;
    let labels = align_labels(image.ids(), &labels)?;
    Ok(Bundle::new(image, text, labels)?)
}

/// Branch specs for the loaded widths; rejects a fixed input width that
/// disagrees with the data.
pub fn build_plan(cfg: &Config, d_img: usize, d_txt: usize) -> Result<FusionPlan> {
    if let Some(d) = cfg.head_input {
        for input in cfg.strategy.branch_inputs() {
            let have = match input {
                BranchInput::Image => vec![d_img],
                BranchInput::Text => vec![d_txt],
                BranchInput::Concat => vec![d_img, d_txt],
            };
            if let Some(w) = have.into_iter().find(|w| *w != d) {
                return Err(CoreError::Validation(format!(
                    "head.layers expects input width {d}, features have {w}"
                ))
                .into());
            }
        }
    }
    Ok(FusionPlan::from_template(
        cfg.strategy,
        &cfg.head_template(),
        d_img,
        d_txt,
    )?)
}

pub fn default_n_train(n: usize) -> usize {
    (5 * n / 6).max(1)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn format_metrics(log: &EpochLog) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_f1\n");
    for r in log.records() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.epoch,
            r.train_loss,
            opt(r.val_loss),
            opt(r.val_f1)
        );
    }
    out
}

/// Stage name with its first and last epoch.
fn stage_ranges(log: &EpochLog) -> Vec<(&'static str, usize, usize)> {
    let mut out: Vec<(&'static str, usize, usize)> = Vec::new();
    for r in log.records() {
        match out.last_mut() {
            Some(last) if last.0 == r.stage => last.2 = r.epoch,
            _ => out.push((r.stage, r.epoch, r.epoch)),
        }
    }
    out
}

/// Runs one experiment. Nothing is written unless loading, validation and
/// training all return; a divergence still produces every artifact.
pub fn run_experiment(cfg: &Config, out_dir: &Path) -> Result<ExitReport> {
    let start = Instant::now();
    cfg.check()
        .map_err(|(key, m)| Error::line("config", 0, format!("{key}: {m}")))?;
    let bundle = load_bundle(cfg)?;
    let n_train = cfg.n_train.unwrap_or_else(|| default_n_train(bundle.len()));
    let (train_set, val_set) = bundle.split(SplitSpec {
        n_train,
        seed: cfg.seed,
    })?;
    let plan = build_plan(cfg, bundle.image.dim(), bundle.text.dim())?;
    let tcfg = cfg.train_config()?;
    let outcome = train(&plan, &train_set, &val_set, &tcfg)?;

    let scored = if val_set.is_empty() {
        &train_set
    } else {
        &val_set
    };
    let pred = predict(
        &outcome.model,
        scored.image.features(),
        scored.text.features(),
        &tcfg.threshold,
    )?;
    let model_bytes = encode_model(&outcome.model)?;

    let diverged = outcome.diverged.is_some();
    let final_val_f1 = (!val_set.is_empty()).then(|| outcome.final_val_f1());
    let truth = label_sets(scored.labels.targets());

    let mut report = String::new();
    let _ = writeln!(report, "strategy = {}", plan.strategy.name());
    let _ = writeln!(report, "train_rows = {}", train_set.len());
    let _ = writeln!(report, "val_rows = {}", val_set.len());
    for (stage, a, b) in stage_ranges(&outcome.log) {
        let _ = writeln!(report, "stage {stage} = epochs {a}..={b}");
    }
    let _ = writeln!(
        report,
        "final_val_f1 = {}",
        final_val_f1.map_or("n/a".into(), |f| format!("{f:.6}"))
    );
    if !val_set.is_empty() && !diverged {
        for avg in [Averaging::Samples, Averaging::Macro, Averaging::Micro] {
            let f = mean_f1(&pred.sets, &truth, plan.num_classes(), avg)?;
            let mark = if avg == cfg.averaging {
                " (selected)"
            } else {
                ""
            };
            let _ = writeln!(report, "val_f1_{} = {f:.6}{mark}", averaging_name(avg));
        }
    }
    let _ = writeln!(report, "diverged = {diverged}");
    if let Some(d) = &outcome.diverged {
        let _ = writeln!(
            report,
            "divergence = {} at epoch {}: {}",
            d.stage, d.epoch, d.reason
        );
    }
    let wall_time = start.elapsed();
    let _ = writeln!(report, "wall_time_s = {:.3}", wall_time.as_secs_f64());

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_atomic(
        &out_dir.join(METRICS_FILE),
        format_metrics(&outcome.log).as_bytes(),
    )?;
    write_atomic(&out_dir.join(MODEL_FILE), &model_bytes)?;
    write_atomic(
        &out_dir.join(PREDICTIONS_FILE),
        format_label_rows(scored.image.ids(), &pred.sets).as_bytes(),
    )?;
    write_atomic(&out_dir.join(REPORT_FILE), report.as_bytes())?;
    Ok(ExitReport {
        final_val_f1,
        diverged,
        wall_time,
    })
}

/// Features for the modalities a model consumes; an absent modality becomes
/// a zero-width table with matching rows.
pub fn prediction_inputs(
    image: Option<FeatureTable>,
    text: Option<FeatureTable>,
) -> Result<(
    Vec<u32>,
    fusebench_core::Matrix<f32>,
    fusebench_core::Matrix<f32>,
)> {
    use fusebench_core::Matrix;
    match (image, text) {
        (Some(a), Some(b)) => {
            if a.ids() != b.ids() {
                return Err(CoreError::Alignment(
                    "image and text feature files list different ids".into(),
                )
                .into());
            }
            Ok((a.ids().to_vec(), a.features().clone(), b.features().clone()))
        }
        (Some(a), None) => Ok((
            a.ids().to_vec(),
            a.features().clone(),
            Matrix::zeros(a.len(), 0),
        )),
        (None, Some(b)) => Ok((
            b.ids().to_vec(),
            Matrix::zeros(b.len(), 0),
            b.features().clone(),
        )),
        (None, None) => Err(CoreError::Parameter("no feature files given".into()).into()),
    }
}

/// F1 of predicted rows against truth rows, matched by id. Every truth id
/// needs a prediction and vice versa.
pub fn score_predictions(
    pred: &[(u32, Vec<usize>)],
    truth: &[(u32, Vec<usize>)],
    k: usize,
    averaging: Averaging,
) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(CoreError::Alignment(format!(
            "{} predictions for {} truth rows",
            pred.len(),
            truth.len()
        ))
        .into());
    }
    let by_id: HashMap<u32, &Vec<usize>> = pred.iter().map(|(id, s)| (*id, s)).collect();
    let mut preds = Vec::with_capacity(truth.len());
    for (id, _) in truth {
        let s = by_id
            .get(id)
            .ok_or_else(|| CoreError::Alignment(format!("no prediction for sample id {id}")))?;
        preds.push((*s).clone());
    }
    let truths: Vec<Vec<usize>> = truth.iter().map(|(_, s)| s.clone()).collect();
    Ok(mean_f1(&preds, &truths, k, averaging)?)
}
