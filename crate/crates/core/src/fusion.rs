//! Fusion plans, training and prediction.
//!
//! Single-stage strategies (`image_only`, `text_only`, `concat`) train one
//! head. `sum` and `mixed` train their branch heads independently, freeze
//! them, and then fit a linear K→K meta-classifier on the summed branch
//! logits.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::Bundle;
use crate::error::{Error, Result};
use crate::losses::{loss_grad, loss_value, sigmoid, LossSpec};
use crate::matrix::Matrix;
use crate::metrics::{mean_f1, Averaging};
use crate::nn::{
    head_forward, head_infer, head_param_grads, param_init, Activation, HeadSpec, LinearLayer,
    Mode, ParamSet,
};
use crate::optim::{AdamState, EmaState};
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionStrategy {
    ImageOnly,
    TextOnly,
    Concat,
    Sum,
    Mixed,
}

/// What a branch head consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchInput {
    Image,
    Text,
    Concat,
}

impl BranchInput {
    pub fn name(self) -> &'static str {
        match self {
            BranchInput::Image => "image",
            BranchInput::Text => "text",
            BranchInput::Concat => "concat",
        }
    }

    pub fn width(self, d_img: usize, d_txt: usize) -> usize {
        match self {
            BranchInput::Image => d_img,
            BranchInput::Text => d_txt,
            BranchInput::Concat => d_img + d_txt,
        }
    }

    /// Stream key; a branch draws the same randomness whichever plan it is in.
    fn stream(self) -> u64 {
        match self {
            BranchInput::Image => 0,
            BranchInput::Text => 1,
            BranchInput::Concat => 2,
        }
    }

    fn features(self, image: &Matrix<f32>, text: &Matrix<f32>) -> Result<Matrix<f32>> {
        match self {
            BranchInput::Image => Ok(image.clone()),
            BranchInput::Text => Ok(text.clone()),
            BranchInput::Concat => fuse_concat(image, text),
        }
    }
}

impl FusionStrategy {
    /// Branch inputs in training (and serialization) order.
    pub fn branch_inputs(self) -> &'static [BranchInput] {
        match self {
            FusionStrategy::ImageOnly => &[BranchInput::Image],
            FusionStrategy::TextOnly => &[BranchInput::Text],
            FusionStrategy::Concat => &[BranchInput::Concat],
            FusionStrategy::Sum => &[BranchInput::Image, BranchInput::Text],
            FusionStrategy::Mixed => &[BranchInput::Concat, BranchInput::Image, BranchInput::Text],
        }
    }

    pub fn has_meta(self) -> bool {
        matches!(self, FusionStrategy::Sum | FusionStrategy::Mixed)
    }

    pub fn name(self) -> &'static str {
        match self {
            FusionStrategy::ImageOnly => "image_only",
            FusionStrategy::TextOnly => "text_only",
            FusionStrategy::Concat => "concat",
            FusionStrategy::Sum => "sum",
            FusionStrategy::Mixed => "mixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "image_only" => FusionStrategy::ImageOnly,
            "text_only" => FusionStrategy::TextOnly,
            "concat" => FusionStrategy::Concat,
            "sum" => FusionStrategy::Sum,
            "mixed" => FusionStrategy::Mixed,
            _ => return None,
        })
    }
}

/// The single linear K→K combiner fitted on summed branch logits.
pub fn meta_spec(k: usize) -> HeadSpec {
    HeadSpec::mlp(vec![k, k], Activation::Gelu, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionPlan {
    pub strategy: FusionStrategy,
    pub branch_specs: Vec<HeadSpec>,
    pub meta_spec: Option<HeadSpec>,
}

impl FusionPlan {
    /// Explicit plan; checked against data widths by [`validate`](Self::validate).
    pub fn new(strategy: FusionStrategy, branch_specs: Vec<HeadSpec>) -> Result<Self> {
        if branch_specs.len() != strategy.branch_inputs().len() {
            return Err(Error::Parameter(format!(
                "{} fusion needs {} branch specs, got {}",
                strategy.name(),
                strategy.branch_inputs().len(),
                branch_specs.len()
            )));
        }
        for s in &branch_specs {
            s.validate()?;
        }
        let k = branch_specs[0].output_dim();
        let meta_spec = strategy.has_meta().then(|| meta_spec(k));
        Ok(FusionPlan {
            strategy,
            branch_specs,
            meta_spec,
        })
    }

    /// Every branch shares `template`'s hidden layers, activation and dropout;
    /// each branch's input width comes from the data.
    pub fn from_template(
        strategy: FusionStrategy,
        template: &HeadSpec,
        d_img: usize,
        d_txt: usize,
    ) -> Result<Self> {
        let specs = strategy
            .branch_inputs()
            .iter()
            .map(|input| {
                let mut spec = template.clone();
                spec.layer_dims[0] = input.width(d_img, d_txt);
                spec
            })
            .collect();
        Self::new(strategy, specs)
    }

    pub fn num_classes(&self) -> usize {
        self.branch_specs[0].output_dim()
    }

    /// Rejects plans whose widths disagree with the data.
    pub fn validate(&self, d_img: usize, d_txt: usize, k: usize) -> Result<()> {
        for (spec, input) in self.branch_specs.iter().zip(self.strategy.branch_inputs()) {
            spec.validate()?;
            let want = input.width(d_img, d_txt);
            if spec.input_dim() != want {
                return Err(Error::Validation(format!(
                    "{} branch expects input width {} but the data provides {want}",
                    input.name(),
                    spec.input_dim()
                )));
            }
            if spec.output_dim() != k {
                return Err(Error::Validation(format!(
                    "{} branch emits {} logits for {k} classes",
                    input.name(),
                    spec.output_dim()
                )));
            }
        }
        match (&self.meta_spec, self.strategy.has_meta()) {
            (Some(m), true) if m.layer_dims == [k, k] => Ok(()),
            (None, false) => Ok(()),
            _ => Err(Error::Validation(
                "meta-classifier does not match the fusion strategy".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub plan: FusionPlan,
    pub branch_params: Vec<ParamSet<f32>>,
    pub meta_params: Option<ParamSet<f32>>,
}

impl ModelGraph {
    pub fn validate(&self) -> Result<()> {
        let ok = self.branch_params.len() == self.plan.branch_specs.len()
            && self
                .branch_params
                .iter()
                .zip(&self.plan.branch_specs)
                .all(|(p, s)| p.same_shape(&ParamSet::zeros(s)))
            && match (&self.meta_params, &self.plan.meta_spec) {
                (Some(p), Some(s)) => p.same_shape(&ParamSet::zeros(s)),
                (None, None) => true,
                _ => false,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(
                "model parameters do not match the fusion plan".into(),
            ))
        }
    }

    /// Eval-mode logits of the full model.
    pub fn logits(&self, image: &Matrix<f32>, text: &Matrix<f32>) -> Result<Matrix<f32>> {
        self.validate()?;
        if image.rows() != text.rows() {
            return Err(Error::shape("logits", image.shape(), text.shape()));
        }
        let mut outs = Vec::with_capacity(self.branch_params.len());
        for ((spec, params), input) in self
            .plan
            .branch_specs
            .iter()
            .zip(&self.branch_params)
            .zip(self.plan.strategy.branch_inputs())
        {
            outs.push(head_infer(spec, params, &input.features(image, text)?)?);
        }
        match (&self.plan.meta_spec, &self.meta_params) {
            (Some(spec), Some(params)) => head_infer(spec, params, &fuse_sum(&outs)?),
            _ => Ok(outs.pop().expect("one branch")),
        }
    }
}

/// Row-wise concatenation, image columns first.
pub fn fuse_concat(image: &Matrix<f32>, text: &Matrix<f32>) -> Result<Matrix<f32>> {
    image.hcat(text)
}

/// Elementwise sum of branch logits.
pub fn fuse_sum(logits: &[Matrix<f32>]) -> Result<Matrix<f32>> {
    if logits.len() < 2 {
        return Err(Error::Parameter(format!(
            "sum fusion needs at least 2 operands, got {}",
            logits.len()
        )));
    }
    let mut acc = logits[0].clone();
    for m in &logits[1..] {
        acc = acc.add(m)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Threshold {
    Global(f64),
    PerClass(Vec<f64>),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Global(0.5)
    }
}

impl Threshold {
    fn for_class(&self, k: usize) -> f64 {
        match self {
            Threshold::Global(t) => *t,
            Threshold::PerClass(v) => v[k],
        }
    }

    fn check(&self, k: usize) -> Result<()> {
        match self {
            Threshold::PerClass(v) if v.len() != k => Err(Error::Parameter(format!(
                "{} thresholds for {k} classes",
                v.len()
            ))),
            _ => Ok(()),
        }
    }
}

/// Class `k` is predicted iff `σ(z_k) ≥ τ_k`.
pub fn threshold_sets(logits: &Matrix<f32>, threshold: &Threshold) -> Result<Vec<Vec<usize>>> {
    threshold.check(logits.cols())?;
    Ok((0..logits.rows())
        .map(|i| {
            logits
                .row(i)
                .iter()
                .enumerate()
                .filter(|(k, z)| sigmoid(**z as f64) >= threshold.for_class(*k))
                .map(|(k, _)| k)
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Matrix<f32>,
    pub sets: Vec<Vec<usize>>,
}

pub fn predict(
    model: &ModelGraph,
    image: &Matrix<f32>,
    text: &Matrix<f32>,
    threshold: &Threshold,
) -> Result<Prediction> {
    let logits = model.logits(image, text)?;
    let sets = threshold_sets(&logits, threshold)?;
    let probabilities = logits.map(|z| sigmoid(z as f64) as f32);
    Ok(Prediction {
        probabilities,
        sets,
    })
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Clamped to the training-set size; values ≥ n train full-batch.
    pub batch_size: usize,
    pub lr: f64,
    pub loss: LossSpec,
    pub seed: u64,
    /// EMA decay; `None` disables the shadow copy entirely.
    pub ema_alpha: Option<f64>,
    pub threshold: Threshold,
    /// Ends a stage early once its validation F1 reaches this value.
    pub target_val_f1: Option<f64>,
}

impl Default for TrainConfig {
    /// 300 full-batch epochs at lr 0.001 with BCE.
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: usize::MAX,
            lr: 0.001,
            loss: LossSpec::bce(),
            seed: 0,
            ema_alpha: None,
            threshold: Threshold::default(),
            target_val_f1: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Parameter(
                "need epochs ≥ 1, batch_size ≥ 1 and lr > 0".into(),
            ));
        }
        if let Some(a) = self.ema_alpha {
            EmaState::<f32>::new(a)?;
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based and increasing across stages.
    pub epoch: usize,
    /// `image`, `text`, `concat` or `meta`.
    pub stage: &'static str,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_f1: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochLog {
    records: Vec<EpochRecord>,
}

impl EpochLog {
    pub fn push(&mut self, record: EpochRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.epoch < record.epoch));
        self.records.push(record);
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn next_epoch(&self) -> usize {
        self.records.last().map_or(1, |r| r.epoch + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub stage: &'static str,
    pub epoch: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Evaluation weights (EMA shadow when enabled).
    pub model: ModelGraph,
    pub log: EpochLog,
    /// Optimizer steps taken per stage, in training order.
    pub steps: Vec<u64>,
    pub diverged: Option<Divergence>,
}

impl TrainOutcome {
    /// Validation sample-mean F1 of the final stage; 0 after divergence.
    pub fn final_val_f1(&self) -> f64 {
        if self.diverged.is_some() {
            return 0.0;
        }
        self.log
            .records()
            .last()
            .and_then(|r| r.val_f1)
            .unwrap_or(0.0)
    }
}

struct StageData<'a> {
    x_train: &'a Matrix<f32>,
    y_train: &'a Matrix<f32>,
    x_val: &'a Matrix<f32>,
    y_val: &'a Matrix<f32>,
}

struct StageResult {
    eval_params: ParamSet<f32>,
    steps: u64,
    diverged: Option<Divergence>,
}

/// Stream tags: every stage draws init, dropout and shuffle randomness from
/// its own derived stream.
const META_STREAM: u64 = 3;
const INIT_STREAM: u64 = 0x100;
const DROPOUT_STREAM: u64 = 0x200;
const SHUFFLE_STREAM: u64 = 0x300;

fn fit_stage(
    stage: &'static str,
    index: u64,
    spec: &HeadSpec,
    init: ParamSet<f32>,
    data: &StageData<'_>,
    cfg: &TrainConfig,
    log: &mut EpochLog,
) -> Result<StageResult> {
    let root = RngState::new(cfg.seed);
    let mut dropout_rng = root.derive(DROPOUT_STREAM + index);
    let mut shuffle_rng = root.derive(SHUFFLE_STREAM + index);
    let mut params = init;
    let mut adam = AdamState::new(&params);
    let mut ema = cfg.ema_alpha.map(EmaState::new).transpose()?;
    let n = data.x_train.rows();
    let batch = cfg.batch_size.min(n);
    let k = data.y_train.cols();
    let val_truth = crate::metrics::label_sets(data.y_val);

    let diverge = |epoch: usize, reason: String, params: ParamSet<f32>, steps: u64| StageResult {
        eval_params: params,
        steps,
        diverged: Some(Divergence {
            stage,
            epoch,
            reason,
        }),
    };

    for _ in 0..cfg.epochs {
        let epoch = log.next_epoch();
        let order: Option<Vec<usize>> = (batch < n).then(|| shuffle_rng.permutation(n));
        let mut total = 0.0f64;
        let mut start = 0;
        while start < n {
            let end = (start + batch).min(n);
            let (xb, yb);
            let (x, y) = match &order {
                None => (data.x_train, data.y_train),
                Some(perm) => {
                    xb = data.x_train.select_rows(&perm[start..end]);
                    yb = data.y_train.select_rows(&perm[start..end]);
                    (&xb, &yb)
                }
            };
            let (logits, cache) = head_forward(spec, &params, x, Mode::Train, &mut dropout_rng)?;
            if !logits.all_finite() {
                return Ok(diverge(
                    epoch,
                    "non-finite logits".into(),
                    params,
                    adam.step_count(),
                ));
            }
            let loss = loss_value(&logits, y, &cfg.loss)?;
            if !loss.is_finite() {
                return Ok(diverge(
                    epoch,
                    format!("training loss {loss}"),
                    params,
                    adam.step_count(),
                ));
            }
            total += loss * (end - start) as f64;
            let dlogits = loss_grad(&logits, y, &cfg.loss)?;
            let grads = head_param_grads(spec, &params, &cache, &dlogits)?;
            match adam.step(&mut params, &grads, cfg.lr) {
                Ok(()) => {}
                Err(Error::Numeric(what)) => {
                    return Ok(diverge(
                        epoch,
                        format!("non-finite {what}"),
                        params,
                        adam.step_count(),
                    ))
                }
                Err(e) => return Err(e),
            }
            if !params.all_finite() {
                return Ok(diverge(
                    epoch,
                    "non-finite parameters".into(),
                    params,
                    adam.step_count(),
                ));
            }
            if let Some(e) = ema.as_mut() {
                e.update(&params)?;
            }
            start = end;
        }
        let train_loss = total / n as f64;

        let (val_loss, val_f1) = if data.x_val.rows() == 0 {
            (None, None)
        } else {
            let eval = match &ema {
                Some(e) => e.materialize()?,
                None => params.clone(),
            };
            let logits = head_infer(spec, &eval, data.x_val)?;
            if !logits.all_finite() {
                return Ok(diverge(
                    epoch,
                    "non-finite validation logits".into(),
                    params,
                    adam.step_count(),
                ));
            }
            let vl = loss_value(&logits, data.y_val, &cfg.loss)?;
            let preds = threshold_sets(&logits, &cfg.threshold)?;
            let f1 = mean_f1(&preds, &val_truth, k, Averaging::Samples)?;
            (Some(vl), Some(f1))
        };
        log.push(EpochRecord {
            epoch,
            stage,
            train_loss,
            val_loss,
            val_f1,
        });
        if !train_loss.is_finite() || val_loss.is_some_and(|v| !v.is_finite()) {
            return Ok(diverge(
                epoch,
                "non-finite epoch loss".into(),
                params,
                adam.step_count(),
            ));
        }
        if cfg
            .target_val_f1
            .is_some_and(|t| val_f1.is_some_and(|f| f >= t))
        {
            break;
        }
    }
    let eval_params = match &ema {
        Some(e) => e.materialize()?,
        None => params,
    };
    Ok(StageResult {
        eval_params,
        steps: adam.step_count(),
        diverged: None,
    })
}

/// Identity weights, zero bias: the combiner starts as a pass-through of the
/// summed logits.
fn meta_init(k: usize) -> ParamSet<f32> {
    ParamSet {
        layers: vec![LinearLayer {
            weight: Matrix::identity(k),
            bias: vec![0.0; k],
        }],
    }
}

/// Trains every stage of `plan` on `train`, scoring on `val` after each epoch.
pub fn train(
    plan: &FusionPlan,
    train: &Bundle,
    val: &Bundle,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (d_img, d_txt, k) = (train.image.dim(), train.text.dim(), train.num_classes());
    plan.validate(d_img, d_txt, k)?;
    if train.is_empty() {
        return Err(Error::Parameter("empty training set".into()));
    }
    if !val.is_empty()
        && (val.image.dim() != d_img || val.text.dim() != d_txt || val.num_classes() != k)
    {
        return Err(Error::Validation(
            "validation widths differ from training widths".into(),
        ));
    }
    cfg.threshold.check(k)?;

    let root = RngState::new(cfg.seed);
    let mut log = EpochLog::default();
    let mut steps = Vec::new();
    let mut branch_params = Vec::new();
    let mut diverged = None;
    let mut train_logits = Vec::new();
    let mut val_logits = Vec::new();

    let inputs = plan.strategy.branch_inputs();
    for (spec, input) in plan.branch_specs.iter().zip(inputs) {
        let x_train = input.features(train.image.features(), train.text.features())?;
        let x_val = input.features(val.image.features(), val.text.features())?;
        let data = StageData {
            x_train: &x_train,
            y_train: train.labels.targets(),
            x_val: &x_val,
            y_val: val.labels.targets(),
        };
        let init = param_init(spec, &mut root.derive(INIT_STREAM + input.stream()))?;
        let result = fit_stage(
            input.name(),
            input.stream(),
            spec,
            init,
            &data,
            cfg,
            &mut log,
        )?;
        steps.push(result.steps);
        if plan.strategy.has_meta() && result.diverged.is_none() {
            train_logits.push(head_infer(spec, &result.eval_params, &x_train)?);
            val_logits.push(head_infer(spec, &result.eval_params, &x_val)?);
        }
        branch_params.push(result.eval_params);
        if result.diverged.is_some() {
            diverged = result.diverged;
            break;
        }
    }

    // Branches that never ran (after a divergence) keep zero parameters.
    for spec in &plan.branch_specs[branch_params.len()..] {
        branch_params.push(ParamSet::zeros(spec));
    }

    let meta_params = match &plan.meta_spec {
        None => None,
        Some(meta) if diverged.is_some() => Some(meta_init(meta.output_dim())),
        Some(meta) => {
            let x_train = fuse_sum(&train_logits)?;
            let x_val = fuse_sum(&val_logits)?;
            let data = StageData {
                x_train: &x_train,
                y_train: train.labels.targets(),
                x_val: &x_val,
                y_val: val.labels.targets(),
            };
            let result = fit_stage(
                "meta",
                META_STREAM,
                meta,
                meta_init(k),
                &data,
                cfg,
                &mut log,
            )?;
            steps.push(result.steps);
            diverged = result.diverged;
            Some(result.eval_params)
        }
    };

    let model = ModelGraph {
        plan: plan.clone(),
        branch_params,
        meta_params,
    };
    Ok(TrainOutcome {
        model,
        log,
        steps,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, FeatureTable, LabelMatrix, SplitSpec};

    fn m(rows: &[&[f32]]) -> Matrix<f32> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn concat_examples() {
        assert_eq!(
            fuse_concat(&m(&[&[1.0, 2.0]]), &m(&[&[3.0, 4.0]]))
                .unwrap()
                .data(),
            &[1.0, 2.0, 3.0, 4.0]
        );
        let a = Matrix::<f32>::zeros(3, 768);
        assert_eq!(fuse_concat(&a, &a).unwrap().cols(), 1536);
        let b = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(fuse_concat(&b, &Matrix::zeros(2, 0)).unwrap(), b);
        assert!(fuse_concat(&b, &Matrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn sum_examples() {
        let a = m(&[&[1.0, -1.0]]);
        let b = m(&[&[0.5, 0.5]]);
        assert_eq!(
            fuse_sum(&[a.clone(), b.clone()]).unwrap().data(),
            &[1.5, -0.5]
        );
        assert_eq!(fuse_sum(&[a.clone(), Matrix::zeros(1, 2)]).unwrap(), a);
        let c = m(&[&[2.0, 2.0]]);
        assert_eq!(fuse_sum(&[a.clone(), b, c]).unwrap().data(), &[3.5, 1.5]);
        assert!(fuse_sum(&[a]).is_err());
    }

    fn logit(p: f64) -> f32 {
        libm::log(p / (1.0 - p)) as f32
    }

    #[test]
    fn threshold_examples() {
        let z = m(&[&[logit(0.7), logit(0.2), logit(0.55)]]);
        assert_eq!(
            threshold_sets(&z, &Threshold::Global(0.5)).unwrap(),
            vec![vec![0, 2]]
        );
        assert_eq!(
            threshold_sets(&Matrix::zeros(1, 3), &Threshold::Global(0.5)).unwrap(),
            vec![vec![0, 1, 2]]
        );
        let per = Threshold::PerClass(vec![0.9, 0.1, 0.5]);
        assert_eq!(threshold_sets(&z, &per).unwrap(), vec![vec![1, 2]]);
        let same = Threshold::PerClass(vec![0.5; 3]);
        assert_eq!(
            threshold_sets(&z, &same).unwrap(),
            threshold_sets(&z, &Threshold::Global(0.5)).unwrap()
        );
        assert!(threshold_sets(&z, &Threshold::PerClass(vec![0.5])).is_err());
    }

    fn tiny_bundle(n: usize, seed: u64) -> Bundle {
        let (a, b, l) = synth_generate(n, 4, 2, 0.3, seed).unwrap();
        Bundle::new(a, b, l).unwrap()
    }

    fn template(dims: Vec<usize>) -> HeadSpec {
        HeadSpec::mlp(dims, Activation::Gelu, 0.5)
    }

    #[test]
    fn concat_plan_rejects_wrong_width() {
        let bundle = tiny_bundle(8, 1);
        let plan = FusionPlan::new(FusionStrategy::Concat, vec![template(vec![4, 6, 2])]).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&plan, &bundle, &bundle, &cfg),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let bundle = tiny_bundle(4, 2);
        let plan =
            FusionPlan::from_template(FusionStrategy::Sum, &template(vec![0, 6, 2]), 4, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train(&plan, &bundle, &bundle, &cfg).unwrap();
        let b = train(&plan, &bundle, &bundle, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.log.len(), 3);
    }

    #[test]
    fn full_batch_takes_one_step_per_epoch() {
        let bundle = tiny_bundle(30, 3);
        let plan =
            FusionPlan::from_template(FusionStrategy::ImageOnly, &template(vec![0, 8, 2]), 4, 4)
                .unwrap();
        let cfg = TrainConfig {
            epochs: 7,
            ..TrainConfig::default()
        };
        let out = train(&plan, &bundle, &bundle, &cfg).unwrap();
        assert_eq!(out.steps, vec![7]);
        let mini = TrainConfig {
            batch_size: 8,
            ..cfg
        };
        assert_eq!(
            train(&plan, &bundle, &bundle, &mini).unwrap().steps,
            vec![7 * 4]
        );
    }

    #[test]
    fn epoch_log_is_monotone_across_stages() {
        let bundle = tiny_bundle(20, 4);
        let (tr, va) = bundle
            .split(SplitSpec {
                n_train: 15,
                seed: 1,
            })
            .unwrap();
        let plan = FusionPlan::from_template(FusionStrategy::Mixed, &template(vec![0, 6, 2]), 4, 4)
            .unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let out = train(&plan, &tr, &va, &cfg).unwrap();
        let epochs: Vec<usize> = out.log.records().iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, (1..=12).collect::<Vec<_>>());
        let stages: Vec<&str> = out.log.records().iter().map(|r| r.stage).collect();
        let want: Vec<&str> = ["concat", "image", "text", "meta"]
            .iter()
            .flat_map(|s| [*s; 3])
            .collect();
        assert_eq!(stages, want);
        assert_eq!(out.steps, vec![3, 3, 3, 3]);
    }

    #[test]
    fn meta_stage_leaves_branches_untouched() {
        let bundle = tiny_bundle(16, 5);
        let plan =
            FusionPlan::from_template(FusionStrategy::Sum, &template(vec![0, 6, 2]), 4, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            seed: 1,
            ..TrainConfig::default()
        };
        let full = train(&plan, &bundle, &bundle, &cfg).unwrap();
        // Branch weights after stage 1 alone, reproduced with a single-modality plan.
        let image_plan = FusionPlan::new(
            FusionStrategy::ImageOnly,
            vec![plan.branch_specs[0].clone()],
        )
        .unwrap();
        let image_only = train(&image_plan, &bundle, &bundle, &cfg).unwrap();
        assert_eq!(
            full.model.branch_params[0],
            image_only.model.branch_params[0]
        );
        let text_plan =
            FusionPlan::new(FusionStrategy::TextOnly, vec![plan.branch_specs[1].clone()]).unwrap();
        let text_only = train(&text_plan, &bundle, &bundle, &cfg).unwrap();
        assert_eq!(
            full.model.branch_params[1],
            text_only.model.branch_params[0]
        );
        assert_ne!(full.model.meta_params, Some(meta_init(2)));
    }

    #[test]
    fn huge_learning_rate_is_reported_as_divergence() {
        let bundle = tiny_bundle(16, 6);
        let plan =
            FusionPlan::from_template(FusionStrategy::Sum, &template(vec![0, 6, 2]), 4, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            lr: 1e38,
            ..TrainConfig::default()
        };
        let out = train(&plan, &bundle, &bundle, &cfg).unwrap();
        assert!(out.diverged.is_some());
        assert_eq!(out.final_val_f1(), 0.0);
        assert!(out.log.len() < 15);
    }

    #[test]
    fn target_f1_stops_a_stage_early() {
        let bundle = tiny_bundle(8, 10);
        let plan =
            FusionPlan::from_template(FusionStrategy::ImageOnly, &template(vec![0, 4, 2]), 4, 4)
                .unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            target_val_f1: Some(0.0),
            ..TrainConfig::default()
        };
        let out = train(&plan, &bundle, &bundle, &cfg).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.steps, vec![1]);
    }

    #[test]
    fn ema_weights_are_used_for_evaluation() {
        let bundle = tiny_bundle(12, 7);
        let plan =
            FusionPlan::from_template(FusionStrategy::TextOnly, &template(vec![0, 6, 2]), 4, 4)
                .unwrap();
        let plain = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let with_ema = TrainConfig {
            ema_alpha: Some(0.9),
            ..plain.clone()
        };
        let a = train(&plan, &bundle, &bundle, &plain).unwrap();
        let b = train(&plan, &bundle, &bundle, &with_ema).unwrap();
        assert_ne!(a.model.branch_params, b.model.branch_params);
        // Same optimizer trajectory: training losses agree.
        let la: Vec<f64> = a.log.records().iter().map(|r| r.train_loss).collect();
        let lb: Vec<f64> = b.log.records().iter().map(|r| r.train_loss).collect();
        assert_eq!(la, lb);
    }

    #[test]
    fn predict_shapes_and_sets() {
        let bundle = tiny_bundle(10, 8);
        let plan =
            FusionPlan::from_template(FusionStrategy::Concat, &template(vec![0, 6, 2]), 4, 4)
                .unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let out = train(&plan, &bundle, &bundle, &cfg).unwrap();
        let p = predict(
            &out.model,
            bundle.image.features(),
            bundle.text.features(),
            &Threshold::Global(0.5),
        )
        .unwrap();
        assert_eq!(p.probabilities.shape(), (10, 2));
        assert_eq!(p.sets.len(), 10);
        assert!(predict(
            &out.model,
            bundle.image.features(),
            &Matrix::zeros(10, 3),
            &Threshold::Global(0.5)
        )
        .is_err());
    }

    #[test]
    fn empty_validation_set_logs_no_scores() {
        let bundle = tiny_bundle(6, 9);
        let (tr, va) = bundle
            .split(SplitSpec {
                n_train: 6,
                seed: 0,
            })
            .unwrap();
        let plan =
            FusionPlan::from_template(FusionStrategy::ImageOnly, &template(vec![0, 4, 2]), 4, 4)
                .unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let out = train(&plan, &tr, &va, &cfg).unwrap();
        assert!(out.log.records().iter().all(|r| r.val_f1.is_none()));
        let _ = (
            FeatureTable::with_sequential_ids(Matrix::zeros(1, 1)),
            LabelMatrix::from_sets(vec![0], &[vec![]], 1),
        );
    }
}
