//! Training loop, metrics, ablation matrix, window sweep and attention export.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{batch, Dataset, PreprocessedExample};
use crate::layers::{AttentionMode, Dropout};
use crate::model::{BnsModel, ChannelMask, LossBreakdown, ModelConfig, ModelError};
use crate::numeric::{AdamW, AdamWConfig, DecayMode, Graph, Tensor, Workspace};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error("cannot evaluate an empty {0} split")]
    Empty(&'static str),
    #[error("non-finite loss at epoch {epoch}, example {example}: {loss:?}")]
    NonFinite {
        epoch: usize,
        example: usize,
        loss: LossBreakdown,
        /// Per-parameter `(name, max |value|)` at the failing step.
        state: Vec<(String, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub decay_mode: DecayMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 42,
            weight_decay: 0.01,
            decay_mode: DecayMode::Decoupled,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail("weight_decay must be non-negative");
        }
        Ok(())
    }

    fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            decay_mode: self.decay_mode,
            ..AdamWConfig::default()
        }
    }
}

/// Binary confusion counts with "sarcastic" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_pairs(predicted: &[usize], gold: &[usize]) -> Self {
        assert_eq!(predicted.len(), gold.len(), "prediction and label counts differ");
        let mut c = Confusion::default();
        for (&p, &y) in predicted.iter().zip(gold) {
            match (p == 1, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl MetricsReport {
    /// Macro averages over the two classes. Undefined ratios count as 0.
    pub fn from_confusion(c: Confusion) -> Self {
        let p1 = ratio(c.tp, c.tp + c.fp);
        let r1 = ratio(c.tp, c.tp + c.fn_);
        let p0 = ratio(c.tn, c.tn + c.fn_);
        let r0 = ratio(c.tn, c.tn + c.fp);
        Self {
            precision: (p0 + p1) / 2.0,
            recall: (r0 + r1) / 2.0,
            macro_f1: (f1(p0, r0) + f1(p1, r1)) / 2.0,
            accuracy: ratio(c.tp + c.tn, c.total()),
            confusion: c,
        }
    }
}

pub fn compute_metrics(predicted: &[usize], gold: &[usize]) -> MetricsReport {
    MetricsReport::from_confusion(Confusion::from_pairs(predicted, gold))
}

/// Metrics plus mean joint loss over a split, without dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub loss: LossBreakdown,
    pub predictions: Vec<usize>,
}

pub fn evaluate_detailed(model: &BnsModel, examples: &[PreprocessedExample]) -> Result<Evaluation, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::Empty("evaluation"));
    }
    let mut loss = LossBreakdown::default();
    let mut predictions = Vec::with_capacity(examples.len());
    let scale = 1.0 / examples.len() as f64;
    for ex in examples {
        let mut g = Graph::new();
        let out = model.forward(&mut g, model.params(), &ex.model_input(), None)?;
        let (_, b) = model.joint_loss(&mut g, &out, &ex.labels)?;
        loss.add_scaled(&b, scale);
        let p = g.value(out.sarcasm_probs).data();
        predictions.push(usize::from(p[1] > p[0]));
    }
    let gold: Vec<usize> = examples.iter().map(|e| usize::from(e.sarcastic())).collect();
    Ok(Evaluation {
        metrics: compute_metrics(&predictions, &gold),
        loss,
        predictions,
    })
}

pub fn evaluate(model: &BnsModel, examples: &[PreprocessedExample]) -> Result<MetricsReport, TrainError> {
    Ok(evaluate_detailed(model, examples)?.metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over training examples, with dropout active.
    pub train_loss: LossBreakdown,
    pub valid: MetricsReport,
    pub valid_loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Per optimizer step, the largest `|gradient|` over the sentiment-head
    /// parameters.
    pub head_grad_max: Vec<f64>,
    /// The kept model on the training split, without dropout.
    pub train_metrics: MetricsReport,
    pub test: Option<MetricsReport>,
}

impl RunRecord {
    pub fn loss_series(&self) -> Vec<LossBreakdown> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

fn better(candidate: &Evaluation, best: &Evaluation) -> bool {
    candidate.metrics.macro_f1 > best.metrics.macro_f1
        || (candidate.metrics.macro_f1 == best.metrics.macro_f1 && candidate.loss.total < best.loss.total)
}

fn state_dump(model: &BnsModel) -> Vec<(String, f64)> {
    model
        .params()
        .iter()
        .map(|(_, name, t)| (name.to_string(), t.data().iter().fold(0.0_f64, |m, v| m.max(v.abs()))))
        .collect()
}

/// Trains with AdamW on mini-batches, keeping the parameters of the epoch
/// with the best validation macro-F1 (ties go to the lower validation loss).
/// An empty `valid` falls back to `train`.
pub fn train(
    mut model: BnsModel,
    train_set: &[PreprocessedExample],
    valid_set: &[PreprocessedExample],
    test_set: &[PreprocessedExample],
    config: &TrainConfig,
) -> Result<(BnsModel, RunRecord), TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::Empty("train"));
    }
    let valid_set = if valid_set.is_empty() { train_set } else { valid_set };
    let mut optimizer = AdamW::new(config.optimizer(), model.params());
    let mut dropout = Dropout::new(model.config().dropout_p, config.seed ^ 0xd50f);
    let heads = model.sentiment_head_params();
    let num_params = model.params().len();

    let mut acc: Vec<Tensor> = model
        .params()
        .iter()
        .map(|(_, _, t)| Tensor::zeros(t.shape()))
        .collect();
    let mut workspace = Workspace::new();
    let mut epochs = Vec::new();
    let mut head_grad_max = Vec::new();
    let mut best: Option<(Evaluation, BnsModel, usize)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let mut epoch_loss = LossBreakdown::default();
        let scale = 1.0 / train_set.len() as f64;
        let seed = config.seed.wrapping_add(epoch as u64);
        for b in batch(train_set, config.batch_size, Some(seed)) {
            for t in &mut acc {
                t.data_mut().fill(0.0);
            }
            for &i in &b.indices {
                let ex = &train_set[i];
                let mut g = Graph::with_workspace(std::mem::take(&mut workspace));
                let out = model.forward(&mut g, model.params(), &ex.model_input(), Some(&mut dropout))?;
                let (total, parts) = model.joint_loss(&mut g, &out, &ex.labels)?;
                if ![parts.j_sar, parts.j_imp, parts.j_exp, parts.total]
                    .iter()
                    .all(|v| v.is_finite())
                {
                    return Err(TrainError::NonFinite {
                        epoch,
                        example: i,
                        loss: parts,
                        state: state_dump(&model),
                    });
                }
                epoch_loss.add_scaled(&parts, scale);
                g.backward(total).map_err(ModelError::from)?;
                g.for_each_param_grad(|id, grad| {
                    for (a, v) in acc[id.index()].data_mut().iter_mut().zip(grad) {
                        *a += v;
                    }
                });
                workspace = g.into_workspace();
            }
            let inv = 1.0 / b.len() as f64;
            let grads: Vec<_> = model
                .params()
                .ids()
                .zip(&acc)
                .map(|(id, t)| (id, t.scaled(inv)))
                .collect();
            debug_assert_eq!(grads.len(), num_params);
            let head_max = heads
                .iter()
                .flat_map(|id| grads[id.index()].1.data().iter().map(|v| v.abs()))
                .fold(0.0_f64, f64::max);
            head_grad_max.push(head_max);
            optimizer.step(model.params_mut(), &grads).map_err(ModelError::from)?;
        }

        let eval = evaluate_detailed(&model, valid_set)?;
        log::info!(
            "epoch {epoch}: J_sar {:.4} J_imp {:.4} J_exp {:.4} total {:.4} | valid F1 {:.4} acc {:.4}",
            epoch_loss.j_sar,
            epoch_loss.j_imp,
            epoch_loss.j_exp,
            epoch_loss.total,
            eval.metrics.macro_f1,
            eval.metrics.accuracy
        );
        epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss,
            valid: eval.metrics,
            valid_loss: eval.loss,
        });
        let improved = best.as_ref().is_none_or(|(b, _, _)| better(&eval, b));
        if improved {
            best = Some((eval, model.clone(), epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (_, best_model, best_epoch) = best.expect("at least one epoch ran");
    let train_metrics = evaluate(&best_model, train_set)?;
    let test = if test_set.is_empty() {
        None
    } else {
        Some(evaluate(&best_model, test_set)?)
    };
    let record = RunRecord {
        model_config: best_model.config().clone(),
        train_config: config.clone(),
        epochs,
        best_epoch,
        stopped_early,
        head_grad_max,
        train_metrics,
        test,
    };
    Ok((best_model, record))
}

/// Builds a fresh model for `dataset` and trains it.
pub fn train_on(
    dataset: &Dataset,
    model_config: &ModelConfig,
    embeddings: Option<&Tensor>,
    config: &TrainConfig,
) -> Result<(BnsModel, RunRecord), TrainError> {
    let model = match embeddings {
        Some(table) => BnsModel::with_embeddings(model_config.clone(), table.clone(), config.seed)?,
        None => BnsModel::new(model_config.clone(), dataset.vocab.len(), config.seed)?,
    };
    train(model, &dataset.train, &dataset.valid, &dataset.test, config)
}

/// The controlled single-axis modifications of the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Full,
    DelS,
    DelB,
    RawAtt,
    NoSubloss,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::DelS,
        Variant::DelB,
        Variant::RawAtt,
        Variant::NoSubloss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::DelS => "del-S",
            Variant::DelB => "del-B",
            Variant::RawAtt => "raw-ATT",
            Variant::NoSubloss => "no-subloss",
        }
    }

    /// `base` with this variant's axis toggled.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        match self {
            Variant::Full => {}
            Variant::DelS => c.channel_mask = ChannelMask::BehaviorOnly,
            Variant::DelB => c.channel_mask = ChannelMask::SentenceOnly,
            Variant::RawAtt => c.attention_mode = AttentionMode::Raw,
            Variant::NoSubloss => c.subtask_loss_enabled = false,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub record: RunRecord,
}

/// Trains every [`Variant`] with the same seed and training config.
pub fn ablate(
    dataset: &Dataset,
    base: &ModelConfig,
    embeddings: Option<&Tensor>,
    config: &TrainConfig,
) -> Result<Vec<AblationRow>, TrainError> {
    let full = Variant::Full.apply(base);
    Variant::ALL
        .iter()
        .map(|v| {
            let (_, record) = train_on(dataset, &v.apply(&full), embeddings, config)?;
            Ok(AblationRow {
                variant: v.name().to_string(),
                record,
            })
        })
        .collect()
}

pub const DEFAULT_SWEEP: [usize; 4] = [2, 3, 4, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub window_size: usize,
    pub record: RunRecord,
}

/// Re-segments and retrains once per window size with a fixed seed.
pub fn window_sweep(
    dataset: &Dataset,
    base: &ModelConfig,
    embeddings: Option<&Tensor>,
    config: &TrainConfig,
    sizes: &[usize],
) -> Result<Vec<SweepRow>, TrainError> {
    sizes
        .iter()
        .map(|&w| {
            let resegmented = dataset.with_window(w)?;
            let model_config = ModelConfig {
                window_size: w,
                ..base.clone()
            };
            let (_, record) = train_on(&resegmented, &model_config, embeddings, config)?;
            Ok(SweepRow { window_size: w, record })
        })
        .collect()
}

/// The metrics of a run on its reporting split: test when present, else the
/// last validation epoch.
pub fn headline_metrics(record: &RunRecord) -> MetricsReport {
    record.test.unwrap_or_else(|| {
        record
            .epochs
            .get(record.best_epoch.saturating_sub(1))
            .map(|e| e.valid)
            .unwrap_or(record.train_metrics)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkWeight {
    pub start: usize,
    pub end: usize,
    pub text: String,
    /// Column sum of the weight matrix, averaged over heads.
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub sentence: String,
    pub mode: AttentionMode,
    pub chunks: Vec<ChunkWeight>,
    /// Per head, the row-stochastic `C × C` matrix.
    pub heads: Vec<Vec<Vec<f64>>>,
}

/// Attention over behavior chunks for each example under `mode`.
pub fn export_attention(
    model: &BnsModel,
    examples: &[PreprocessedExample],
    mode: AttentionMode,
) -> Result<Vec<AttentionRecord>, TrainError> {
    examples
        .iter()
        .map(|ex| {
            let weights = model.attention_weights(&ex.model_input(), mode)?;
            let c = ex.chunk_spans.len();
            let heads: Vec<Vec<Vec<f64>>> = weights
                .iter()
                .map(|w| (0..c).map(|r| w.row(r).to_vec()).collect())
                .collect();
            let chunks = ex
                .chunk_spans
                .iter()
                .enumerate()
                .map(|(j, &(start, end))| {
                    let mass = heads
                        .iter()
                        .map(|h| h.iter().map(|row| row[j]).sum::<f64>())
                        .sum::<f64>()
                        / heads.len() as f64;
                    ChunkWeight {
                        start,
                        end,
                        text: ex.tokens[start..end]
                            .iter()
                            .map(|t| t.surface.as_str())
                            .collect::<Vec<_>>()
                            .join(" "),
                        mass,
                    }
                })
                .collect();
            Ok(AttentionRecord {
                sentence: ex
                    .tokens
                    .iter()
                    .map(|t| t.surface.as_str())
                    .collect::<Vec<_>>()
                    .join(" "),
                mode,
                chunks,
                heads,
            })
        })
        .collect()
}

/// One row per epoch: `epoch J_sar J_imp J_exp total valid_f1 valid_acc`.
pub fn loss_curve_table(record: &RunRecord) -> String {
    let mut out = String::from("epoch\tJ_sar\tJ_imp\tJ_exp\ttotal\tvalid_f1\tvalid_acc\n");
    for e in &record.epochs {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            e.epoch,
            e.train_loss.j_sar,
            e.train_loss.j_imp,
            e.train_loss.j_exp,
            e.train_loss.total,
            e.valid.macro_f1,
            e.valid.accuracy
        ));
    }
    out
}

/// Columnar `name precision recall macro_f1 accuracy` table.
pub fn metrics_table(rows: &[(String, MetricsReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(7);
    let mut out = format!(
        "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}\n",
        "variant", "precision", "recall", "macro_f1", "accuracy"
    );
    for (name, m) in rows {
        out.push_str(&format!(
            "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}\n",
            name, m.precision, m.recall, m.macro_f1, m.accuracy
        ));
    }
    out
}
