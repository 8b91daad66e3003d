//! Run configuration: flat `key = value` files with `#` comments.
//!
//! Every key is optional; an empty file yields the best-pipeline profile
//! (4-layer MLP, GeLU, dropout 0.6, sum fusion, BCE, 300 full-batch epochs
//! at lr 0.001). Later duplicates override earlier ones.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use fusebench_core::fusion::{FusionStrategy, Threshold, TrainConfig};
use fusebench_core::losses::LossSpec;
use fusebench_core::metrics::Averaging;
use fusebench_core::nn::{Activation, HeadKind, HeadSpec};

use crate::error::{Error, Result};

/// Every accepted key, in serialization order.
pub const KEYS: &[&str] = &[
    "data.img",
    "data.txt",
    "data.labels",
    "data.classes",
    "data.n_train",
    "head.kind",
    "head.layers",
    "head.activation",
    "head.dropout",
    "loss.kind",
    "loss.gamma_pos",
    "loss.gamma_neg",
    "loss.clip",
    "optim.lr",
    "optim.ema.enabled",
    "optim.ema.alpha",
    "fusion.strategy",
    "train.epochs",
    "train.batch_size",
    "train.seed",
    "eval.threshold",
    "eval.averaging",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Bce,
    Focal,
    Asl,
}

impl LossKind {
    /// `(γ₊, γ₋, m)` used for keys the config leaves unset.
    pub fn defaults(self) -> (f64, f64, f64) {
        match self {
            LossKind::Bce => (0.0, 0.0, 0.0),
            LossKind::Focal => (3.0, 3.0, 0.0),
            LossKind::Asl => (1.0, 4.0, 0.05),
        }
    }

    fn name(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::Focal => "focal",
            LossKind::Asl => "asl",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub img: Option<PathBuf>,
    pub txt: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub classes: usize,
    /// `None`: five sixths of the samples.
    pub n_train: Option<usize>,
    pub head_kind: HeadKind,
    /// Per-modality input width; `None` takes it from the feature files.
    pub head_input: Option<usize>,
    /// Hidden widths followed by the output width.
    pub head_widths: Vec<usize>,
    pub activation: Activation,
    pub dropout: f32,
    pub loss_kind: LossKind,
    /// Explicit overrides of the loss-kind defaults.
    pub gamma_pos: Option<f64>,
    pub gamma_neg: Option<f64>,
    pub clip: Option<f64>,
    pub lr: f64,
    pub ema_enabled: bool,
    pub ema_alpha: f64,
    pub strategy: FusionStrategy,
    pub epochs: usize,
    /// `None`: full batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub threshold: Threshold,
    pub averaging: Averaging,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            img: None,
            txt: None,
            labels: None,
            classes: 18,
            n_train: None,
            head_kind: HeadKind::Mlp,
            head_input: None,
            head_widths: vec![2048, 512, 18],
            activation: Activation::Gelu,
            dropout: 0.6,
            loss_kind: LossKind::Bce,
            gamma_pos: None,
            gamma_neg: None,
            clip: None,
            lr: 0.001,
            ema_enabled: false,
            ema_alpha: 0.9,
            strategy: FusionStrategy::Sum,
            epochs: 300,
            batch_size: None,
            seed: 0,
            threshold: Threshold::Global(0.5),
            averaging: Averaging::Samples,
        }
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn unit_interval(v: f64, what: &str, closed_top: bool) -> Result<f64, String> {
    let ok = v >= 0.0 && if closed_top { v <= 1.0 } else { v < 1.0 };
    if ok {
        Ok(v)
    } else {
        Err(format!(
            "{what} {v} outside [0, 1{}",
            if closed_top { "]" } else { ")" }
        ))
    }
}

fn non_negative(v: f64, what: &str) -> Result<f64, String> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{what} must be a finite value ≥ 0"))
    }
}

fn positive_count(v: &str, what: &str) -> Result<usize, String> {
    match parse_num::<usize>(v)? {
        0 => Err(format!("{what} must be ≥ 1")),
        n => Ok(n),
    }
}

fn parse_head_kind(v: &str) -> Result<HeadKind, String> {
    match v {
        "mlp" => Ok(HeadKind::Mlp),
        "gmlp" => Ok(HeadKind::Gmlp),
        _ => Err(format!("unknown head kind `{v}` (mlp, gmlp)")),
    }
}

fn parse_activation(v: &str) -> Result<Activation, String> {
    match v {
        "gelu" => Ok(Activation::Gelu),
        "relu" => Ok(Activation::Relu),
        "leaky_relu" => Ok(Activation::LeakyRelu),
        _ => Err(format!("unknown activation `{v}` (gelu, relu, leaky_relu)")),
    }
}

pub fn parse_averaging(v: &str) -> Result<Averaging, String> {
    match v {
        "samples" => Ok(Averaging::Samples),
        "macro" => Ok(Averaging::Macro),
        "micro" => Ok(Averaging::Micro),
        _ => Err(format!("unknown averaging `{v}` (samples, macro, micro)")),
    }
}

pub fn averaging_name(a: Averaging) -> &'static str {
    match a {
        Averaging::Samples => "samples",
        Averaging::Macro => "macro",
        Averaging::Micro => "micro",
    }
}

fn kind_name(k: HeadKind) -> &'static str {
    match k {
        HeadKind::Mlp => "mlp",
        HeadKind::Gmlp => "gmlp",
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Gelu => "gelu",
        Activation::Relu => "relu",
        Activation::LeakyRelu => "leaky_relu",
    }
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl Config {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "data.img" => self.img = Some(PathBuf::from(v)),
            "data.txt" => self.txt = Some(PathBuf::from(v)),
            "data.labels" => self.labels = Some(PathBuf::from(v)),
            "data.classes" => self.classes = positive_count(v, "data.classes")?,
            "data.n_train" => {
                self.n_train = if v == "auto" {
                    None
                } else {
                    Some(positive_count(v, "data.n_train")?)
                }
            }
            "head.kind" => self.head_kind = parse_head_kind(v)?,
            "head.layers" => {
                let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                if parts.len() < 2 {
                    return Err("head.layers needs at least an input and an output width".into());
                }
                self.head_input = if parts[0] == "auto" {
                    None
                } else {
                    Some(positive_count(parts[0], "layer width")?)
                };
                self.head_widths = parts[1..]
                    .iter()
                    .map(|p| positive_count(p, "layer width"))
                    .collect::<Result<_, _>>()?;
            }
            "head.activation" => self.activation = parse_activation(v)?,
            "head.dropout" => {
                self.dropout = unit_interval(parse_num::<f32>(v)? as f64, "dropout", false)? as f32
            }
            "loss.kind" => {
                self.loss_kind = match v {
                    "bce" => LossKind::Bce,
                    "focal" => LossKind::Focal,
                    "asl" => LossKind::Asl,
                    _ => return Err(format!("unknown loss `{v}` (bce, focal, asl)")),
                }
            }
            "loss.gamma_pos" => self.gamma_pos = Some(non_negative(parse_num(v)?, "gamma_pos")?),
            "loss.gamma_neg" => self.gamma_neg = Some(non_negative(parse_num(v)?, "gamma_neg")?),
            "loss.clip" => self.clip = Some(unit_interval(parse_num(v)?, "clip", false)?),
            "optim.lr" => {
                let lr: f64 = parse_num(v)?;
                if !(lr > 0.0 && lr.is_finite()) {
                    return Err(format!("learning rate {lr} must be positive"));
                }
                self.lr = lr;
            }
            "optim.ema.enabled" => self.ema_enabled = parse_bool(v)?,
            "optim.ema.alpha" => self.ema_alpha = unit_interval(parse_num(v)?, "EMA alpha", false)?,
            "fusion.strategy" => {
                self.strategy = FusionStrategy::parse(v).ok_or_else(|| {
                    format!("unknown strategy `{v}` (image_only, text_only, concat, sum, mixed)")
                })?
            }
            "train.epochs" => self.epochs = positive_count(v, "train.epochs")?,
            "train.batch_size" => {
                self.batch_size = if v == "full" {
                    None
                } else {
                    Some(positive_count(v, "train.batch_size")?)
                }
            }
            "train.seed" => self.seed = parse_num(v)?,
            "eval.threshold" => {
                let ts = v
                    .split(',')
                    .map(|t| {
                        parse_num::<f64>(t.trim()).and_then(|x| unit_interval(x, "threshold", true))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                self.threshold = if ts.len() == 1 {
                    Threshold::Global(ts[0])
                } else {
                    Threshold::PerClass(ts)
                };
            }
            "eval.averaging" => self.averaging = parse_averaging(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// The value of `key` as it would be written back to a file; `None` for
    /// unset paths.
    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        Some(match key {
            "data.img" => return path(&self.img),
            "data.txt" => return path(&self.txt),
            "data.labels" => return path(&self.labels),
            "data.classes" => self.classes.to_string(),
            "data.n_train" => self.n_train.map_or("auto".into(), |n| n.to_string()),
            "head.kind" => kind_name(self.head_kind).into(),
            "head.layers" => {
                let input = self.head_input.map_or("auto".into(), |d| d.to_string());
                format!("{input},{}", join(&self.head_widths))
            }
            "head.activation" => activation_name(self.activation).into(),
            "head.dropout" => self.dropout.to_string(),
            "loss.kind" => self.loss_kind.name().into(),
            "loss.gamma_pos" => return self.gamma_pos.map(|v| v.to_string()),
            "loss.gamma_neg" => return self.gamma_neg.map(|v| v.to_string()),
            "loss.clip" => return self.clip.map(|v| v.to_string()),
            "optim.lr" => self.lr.to_string(),
            "optim.ema.enabled" => self.ema_enabled.to_string(),
            "optim.ema.alpha" => self.ema_alpha.to_string(),
            "fusion.strategy" => self.strategy.name().into(),
            "train.epochs" => self.epochs.to_string(),
            "train.batch_size" => self.batch_size.map_or("full".into(), |b| b.to_string()),
            "train.seed" => self.seed.to_string(),
            "eval.threshold" => match &self.threshold {
                Threshold::Global(t) => t.to_string(),
                Threshold::PerClass(ts) => join(ts),
            },
            "eval.averaging" => averaging_name(self.averaging).into(),
            _ => return None,
        })
    }

    /// Checks that span several keys. Returns the offending key with the
    /// message.
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        let out = *self.head_widths.last().expect("non-empty");
        if out != self.classes {
            return Err((
                "head.layers",
                format!(
                    "output width {out} differs from data.classes = {}",
                    self.classes
                ),
            ));
        }
        if self.head_kind == HeadKind::Gmlp {
            if let Some(h) = self.head_widths[..self.head_widths.len() - 1]
                .iter()
                .find(|h| *h % 2 != 0)
            {
                return Err(("head.layers", format!("gmlp hidden width {h} must be even")));
            }
        }
        if let Threshold::PerClass(ts) = &self.threshold {
            if ts.len() != self.classes {
                return Err((
                    "eval.threshold",
                    format!("{} thresholds for {} classes", ts.len(), self.classes),
                ));
            }
        }
        self.loss().map_err(|e| ("loss.kind", e.to_string()))?;
        Ok(())
    }

    pub fn loss(&self) -> fusebench_core::Result<LossSpec> {
        let (gp, gn, m) = self.loss_kind.defaults();
        LossSpec::new(
            self.gamma_pos.unwrap_or(gp),
            self.gamma_neg.unwrap_or(gn),
            self.clip.unwrap_or(m),
        )
    }

    /// Branch template; the input width is filled in per branch.
    pub fn head_template(&self) -> HeadSpec {
        let mut dims = vec![self.head_input.unwrap_or(0)];
        dims.extend(&self.head_widths);
        HeadSpec {
            kind: self.head_kind,
            layer_dims: dims,
            activation: self.activation,
            dropout: self.dropout,
        }
    }

    pub fn train_config(&self) -> fusebench_core::Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size.unwrap_or(usize::MAX),
            lr: self.lr,
            loss: self.loss()?,
            seed: self.seed,
            ema_alpha: self.ema_enabled.then_some(self.ema_alpha),
            threshold: self.threshold.clone(),
            target_val_f1: None,
        })
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            if let Some(v) = self.get(key) {
                let _ = writeln!(out, "{key} = {v}");
            }
        }
        out
    }
}

/// Parses `text`; `what` names the source in error messages.
pub fn parse_config(text: &str, what: &str) -> Result<Config> {
    let mut cfg = Config::default();
    let mut lines_of: HashMap<&'static str, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::line(what, line_no, "expected `key = value`"))?;
        let key = key.trim();
        let known = KEYS
            .iter()
            .find(|k| **k == key)
            .ok_or_else(|| Error::line(what, line_no, format!("unknown key `{key}`")))?;
        cfg.set(key, value)
            .map_err(|m| Error::line(what, line_no, m))?;
        lines_of.insert(known, line_no);
    }
    cfg.check()
        .map_err(|(key, m)| Error::line(what, lines_of.get(key).copied().unwrap_or(0), m))?;
    Ok(cfg)
}

pub fn read_config(path: &std::path::Path) -> Result<Config> {
    let bytes = crate::error::read_file(path)?;
    let what = path.display().to_string();
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| Error::format(&what, e.valid_up_to() as u64, "not UTF-8"))?;
    parse_config(text, &what)
}
