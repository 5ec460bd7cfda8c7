//! The dual-channel sarcasm classifier and its joint loss.
//!
//! The behavior channel encodes the sequence of behavior-chunk embeddings
//! with attention and a stacked Bi-LSTM. The sentence channel encodes the
//! explicit and implicit sentences with their own Bi-LSTMs, each feeding a
//! 2-way sentiment head. Both channel vectors are fused by multi-width
//! convolution before the sarcasm head.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layers::{
    cross_entropy, AttentionMode, AttentionOutput, AttentionParams, BiLstm, ConvFusion, Dense, Dropout, Embedding,
    PAD_ID,
};
use crate::numeric::{
    read_checkpoint, write_checkpoint, CheckpointError, Graph, ParamId, Parameters, Tensor, TensorError, Var,
};
use crate::reconstruct::SubtaskLabels;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
    #[error("chunk span [{start}, {end}) outside a sentence of {len} tokens")]
    Span { start: usize, end: usize, len: usize },
    #[error("empty sentence")]
    EmptyInput,
}

/// Which channels feed the fusion layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelMask {
    Both,
    BehaviorOnly,
    SentenceOnly,
}

/// How the two channel vectors are combined before convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fusion {
    /// Two rows, convolved as two input channels.
    Stack,
    /// One row of twice the width.
    Concat,
}

macro_rules! string_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($ty::$variant => $name,)+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err(format!(
                        "unknown value {other:?} (expected {})",
                        [$($name),+].join("|")
                    )),
                }
            }
        }
    };
}

string_enum!(ChannelMask {
    Both => "both",
    BehaviorOnly => "behavior_only",
    SentenceOnly => "sentence_only",
});

string_enum!(Fusion {
    Stack => "stack",
    Concat => "concat",
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_lstm_layers: usize,
    pub window_size: usize,
    pub kernel_widths: Vec<usize>,
    pub feature_maps_per_width: usize,
    pub dropout_p: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub attention_mode: AttentionMode,
    pub channel_mask: ChannelMask,
    pub subtask_loss_enabled: bool,
    pub fusion: Fusion,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 300,
            hidden_dim: 64,
            num_heads: 10,
            num_lstm_layers: 2,
            window_size: 4,
            kernel_widths: vec![3, 4, 5],
            feature_maps_per_width: 32,
            dropout_p: 0.5,
            lambda1: 1.0,
            lambda2: 0.5,
            lambda3: 0.5,
            attention_mode: AttentionMode::Conflict,
            channel_mask: ChannelMask::Both,
            subtask_loss_enabled: true,
            fusion: Fusion::Stack,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return fail("embed_dim and hidden_dim must be positive".into());
        }
        if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return fail(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.num_lstm_layers == 0 {
            return fail("num_lstm_layers must be at least 1".into());
        }
        if self.window_size == 0 {
            return fail("window_size must be at least 1".into());
        }
        if self.kernel_widths.is_empty() || self.kernel_widths.contains(&0) {
            return fail("kernel_widths must be a non-empty list of positive widths".into());
        }
        if self.feature_maps_per_width == 0 {
            return fail("feature_maps_per_width must be positive".into());
        }
        let width = self.fusion_width();
        if let Some(&k) = self.kernel_widths.iter().max() {
            if k > width {
                return fail(format!("kernel width {k} exceeds the fused width {width}"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        Ok(())
    }

    /// Width of the rows entering the convolution.
    pub fn fusion_width(&self) -> usize {
        match self.fusion {
            Fusion::Stack => 2 * self.hidden_dim,
            Fusion::Concat => 4 * self.hidden_dim,
        }
    }

    pub fn uses_behavior(&self) -> bool {
        self.channel_mask != ChannelMask::SentenceOnly
    }

    pub fn uses_sentence(&self) -> bool {
        self.channel_mask != ChannelMask::BehaviorOnly
    }

    /// `(λ₁, λ₂, λ₃)` after applying the subtask switch.
    pub fn effective_lambdas(&self) -> (f64, f64, f64) {
        if self.subtask_loss_enabled {
            (self.lambda1, self.lambda2, self.lambda3)
        } else {
            (self.lambda1, 0.0, 0.0)
        }
    }
}

/// One example as the model sees it. `chunks` are token spans; `explicit`
/// and `implicit` are token positions.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub token_ids: &'a [usize],
    pub chunks: &'a [(usize, usize)],
    pub explicit: &'a [usize],
    pub implicit: &'a [usize],
}

/// Supervision for one example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub sarcastic: bool,
    pub subtasks: SubtaskLabels,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub sarcasm_probs: Var,
    pub explicit_probs: Option<Var>,
    pub implicit_probs: Option<Var>,
    pub behavior_repr: Option<Var>,
    pub sentence_repr: Option<Var>,
    pub attention: Option<AttentionOutput>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub j_sar: f64,
    pub j_imp: f64,
    pub j_exp: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn add_scaled(&mut self, other: &LossBreakdown, alpha: f64) {
        self.j_sar += alpha * other.j_sar;
        self.j_imp += alpha * other.j_imp;
        self.j_exp += alpha * other.j_exp;
        self.total += alpha * other.total;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BehaviorChannel {
    attention: AttentionParams,
    lstm: BiLstm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SentenceChannel {
    explicit_lstm: BiLstm,
    implicit_lstm: BiLstm,
    explicit_head: Dense,
    implicit_head: Dense,
    projection: Dense,
}

#[derive(Debug, Clone)]
pub struct BnsModel {
    config: ModelConfig,
    params: Parameters,
    embedding: Embedding,
    behavior: Option<BehaviorChannel>,
    sentence: Option<SentenceChannel>,
    fusion: ConvFusion,
    classifier: Dense,
}

/// Per-example values read off a forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sarcasm_probs: [f64; 2],
    pub explicit_probs: Option<[f64; 2]>,
    pub implicit_probs: Option<[f64; 2]>,
}

impl Prediction {
    pub fn label(&self) -> usize {
        usize::from(self.sarcasm_probs[1] > self.sarcasm_probs[0])
    }
}

impl BnsModel {
    /// Builds a model with a random `vocab_size × embed_dim` table drawn from
    /// `±0.05`.
    pub fn new(config: ModelConfig, vocab_size: usize, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = vocab_size * config.embed_dim;
        let data = (0..n).map(|_| rng.gen_range(-0.05..=0.05)).collect();
        let table = Tensor::new(vec![vocab_size, config.embed_dim], data)?;
        Self::build(config, table, &mut rng)
    }

    /// Builds a model around a given embedding table.
    pub fn with_embeddings(config: ModelConfig, table: Tensor, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(config, table, &mut rng)
    }

    fn build(config: ModelConfig, table: Tensor, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        config.validate()?;
        match table.dims2() {
            Some((v, d)) if v > PAD_ID && d == config.embed_dim => {}
            _ => {
                return Err(ModelError::Config(format!(
                    "embedding table shape {:?} does not fit embed_dim {}",
                    table.shape(),
                    config.embed_dim
                )))
            }
        }
        let (d, h, layers) = (config.embed_dim, config.hidden_dim, config.num_lstm_layers);
        let mut params = Parameters::new();
        let embedding = Embedding::from_table(&mut params, "embedding", table)?;
        let behavior = if config.uses_behavior() {
            Some(BehaviorChannel {
                attention: AttentionParams::new(&mut params, "behavior.attention", d, config.num_heads, rng)?,
                lstm: BiLstm::new(&mut params, "behavior.lstm", d, h, layers, rng),
            })
        } else {
            None
        };
        let sentence = if config.uses_sentence() {
            Some(SentenceChannel {
                explicit_lstm: BiLstm::new(&mut params, "sentence.explicit_lstm", d, h, layers, rng),
                implicit_lstm: BiLstm::new(&mut params, "sentence.implicit_lstm", d, h, layers, rng),
                explicit_head: Dense::new(&mut params, "sentence.explicit_head", 2 * h, 2, rng),
                implicit_head: Dense::new(&mut params, "sentence.implicit_head", 2 * h, 2, rng),
                projection: Dense::new(&mut params, "sentence.projection", 4 * h, 2 * h, rng),
            })
        } else {
            None
        };
        let channels = match config.fusion {
            Fusion::Stack => 2,
            Fusion::Concat => 1,
        };
        let fusion = ConvFusion::new(
            &mut params,
            "fusion",
            channels,
            &config.kernel_widths,
            config.feature_maps_per_width,
            rng,
        );
        let classifier = Dense::new(&mut params, "classifier", fusion.output_dim(), 2, rng);
        Ok(Self {
            config,
            params,
            embedding,
            behavior,
            sentence,
            fusion,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.vocab_size
    }

    pub fn embedding_table(&self) -> ParamId {
        self.embedding.table
    }

    /// Parameters used only by the two sentiment heads.
    pub fn sentiment_head_params(&self) -> Vec<ParamId> {
        self.sentence
            .as_ref()
            .map(|s| {
                let mut v = s.explicit_head.param_ids().to_vec();
                v.extend(s.implicit_head.param_ids());
                v
            })
            .unwrap_or_default()
    }

    fn behavior_parts(&self) -> Result<&BehaviorChannel, ModelError> {
        self.behavior
            .as_ref()
            .ok_or_else(|| ModelError::Config("behavior channel is disabled".into()))
    }

    /// Behavior embeddings of the chunks, one row per chunk (`C × d`).
    pub fn behavior_embeddings(
        &self,
        g: &mut Graph,
        params: &Parameters,
        input: &ModelInput<'_>,
    ) -> Result<Var, ModelError> {
        let len = input.token_ids.len();
        if len == 0 || input.chunks.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let tokens = self.embedding.lookup(g, params, input.token_ids)?;
        let mut rows = Vec::with_capacity(input.chunks.len());
        for &(start, end) in input.chunks {
            if start >= end || end > len {
                return Err(ModelError::Span { start, end, len });
            }
            let span = g.slice(tokens, 0, start, end)?;
            rows.push(g.sum_rows(span)?);
        }
        Ok(g.stack(&rows)?)
    }

    /// Chunk sequence → attention → Bi-LSTM → final state pair (`2h`).
    pub fn behavior_channel(
        &self,
        g: &mut Graph,
        params: &Parameters,
        input: &ModelInput<'_>,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<(Var, AttentionOutput), ModelError> {
        let channel = self.behavior_parts()?;
        let mut seq = self.behavior_embeddings(g, params, input)?;
        if let Some(d) = dropout.as_deref_mut() {
            seq = d.apply(g, seq)?;
        }
        let attn = channel
            .attention
            .forward(g, params, seq, self.config.attention_mode, None)?;
        let enc = channel.lstm.forward(g, params, attn.out, dropout)?;
        Ok((enc.last, attn))
    }

    /// Returns `(repr, explicit_probs, implicit_probs)`.
    pub fn sentence_channel(
        &self,
        g: &mut Graph,
        params: &Parameters,
        input: &ModelInput<'_>,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<(Var, Var, Var), ModelError> {
        let channel = self
            .sentence
            .as_ref()
            .ok_or_else(|| ModelError::Config("sentence channel is disabled".into()))?;
        let encode = |g: &mut Graph,
                      lstm: &BiLstm,
                      positions: &[usize],
                      dropout: Option<&mut Dropout>|
         -> Result<Var, ModelError> {
            let ids: Vec<usize> = if positions.is_empty() {
                vec![PAD_ID]
            } else {
                positions
                    .iter()
                    .map(|&p| {
                        input.token_ids.get(p).copied().ok_or(ModelError::Span {
                            start: p,
                            end: p + 1,
                            len: input.token_ids.len(),
                        })
                    })
                    .collect::<Result<_, _>>()?
            };
            let mut x = self.embedding.lookup(g, params, &ids)?;
            let mut dropout = dropout;
            if let Some(d) = dropout.as_deref_mut() {
                x = d.apply(g, x)?;
            }
            Ok(lstm.forward(g, params, x, dropout)?.last)
        };
        let e = encode(g, &channel.explicit_lstm, input.explicit, dropout.as_deref_mut())?;
        let m = encode(g, &channel.implicit_lstm, input.implicit, dropout)?;
        let e_logits = channel.explicit_head.forward(g, params, e)?;
        let m_logits = channel.implicit_head.forward(g, params, m)?;
        let e_probs = g.softmax(e_logits)?;
        let m_probs = g.softmax(m_logits)?;
        let joined = g.concat(&[e, m], 0)?;
        let repr = channel.projection.forward(g, params, joined)?;
        Ok((repr, e_probs, m_probs))
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        params: &Parameters,
        input: &ModelInput<'_>,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<ForwardOutput, ModelError> {
        let (behavior_repr, attention) = if self.behavior.is_some() {
            let (b, a) = self.behavior_channel(g, params, input, dropout.as_deref_mut())?;
            (Some(b), Some(a))
        } else {
            (None, None)
        };
        let (sentence_repr, explicit_probs, implicit_probs) = if self.sentence.is_some() {
            let (s, e, m) = self.sentence_channel(g, params, input, dropout)?;
            (Some(s), Some(e), Some(m))
        } else {
            (None, None, None)
        };
        let (top, bottom) = match (behavior_repr, sentence_repr) {
            (Some(b), Some(s)) => (b, s),
            (Some(b), None) => (b, b),
            (None, Some(s)) => (s, s),
            (None, None) => unreachable!("config validation keeps one channel"),
        };
        let fused_input = match self.config.fusion {
            Fusion::Stack => g.stack(&[top, bottom])?,
            Fusion::Concat => {
                let row = g.concat(&[top, bottom], 0)?;
                g.reshape(row, &[1, self.config.fusion_width()])?
            }
        };
        let pooled = self.fusion.forward(g, params, fused_input)?;
        let logits = self.classifier.forward(g, params, pooled)?;
        let sarcasm_probs = g.softmax(logits)?;
        Ok(ForwardOutput {
            sarcasm_probs,
            explicit_probs,
            implicit_probs,
            behavior_repr,
            sentence_repr,
            attention,
        })
    }

    /// `λ₁·J_sar + λ₂·J_imp + λ₃·J_exp`. Subtask terms with zero weight or
    /// without a head are reported but left out of the differentiated total.
    pub fn joint_loss(
        &self,
        g: &mut Graph,
        out: &ForwardOutput,
        labels: &Labels,
    ) -> Result<(Var, LossBreakdown), ModelError> {
        joint_loss(g, out, labels, &self.config)
    }

    /// Inference without dropout.
    pub fn predict(&self, input: &ModelInput<'_>) -> Result<Prediction, ModelError> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, &self.params, input, None)?;
        let pair = |v: Var| {
            let d = g.value(v).data();
            [d[0], d[1]]
        };
        Ok(Prediction {
            sarcasm_probs: pair(out.sarcasm_probs),
            explicit_probs: out.explicit_probs.map(pair),
            implicit_probs: out.implicit_probs.map(pair),
        })
    }

    /// Per-head `C × C` attention weights over the behavior chunks, with the
    /// given normalizer and the trained projections.
    pub fn attention_weights(&self, input: &ModelInput<'_>, mode: AttentionMode) -> Result<Vec<Tensor>, ModelError> {
        let channel = self.behavior_parts()?;
        let mut g = Graph::new();
        let seq = self.behavior_embeddings(&mut g, &self.params, input)?;
        let attn = channel.attention.forward(&mut g, &self.params, seq, mode, None)?;
        Ok(attn.weights.iter().map(|w| g.value(*w).clone()).collect())
    }

    /// Named parameter tensors, in registration order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|(_, name, t)| (name.to_string(), t.clone()))
            .collect()
    }

    /// Replaces every parameter from `entries`, which must match by name and
    /// shape exactly.
    pub fn load_tensors(&mut self, entries: Vec<(String, Tensor)>) -> Result<(), ModelError> {
        if entries.len() != self.params.len() {
            return Err(ModelError::Mismatch(format!(
                "checkpoint has {} tensors, model has {}",
                entries.len(),
                self.params.len()
            )));
        }
        for (name, tensor) in entries {
            let id = self
                .params
                .id(&name)
                .ok_or_else(|| ModelError::Mismatch(format!("unknown tensor {name:?}")))?;
            if self.params.get(id).shape() != tensor.shape() {
                return Err(ModelError::Mismatch(format!(
                    "tensor {name:?} has shape {:?}, model expects {:?}",
                    tensor.shape(),
                    self.params.get(id).shape()
                )));
            }
            self.params.set(id, tensor)?;
        }
        Ok(())
    }
}

/// Sidecar description of a checkpoint: everything needed to rebuild the
/// model skeleton before loading tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub model_config: ModelConfig,
    pub vocab_size: usize,
    pub tensors: Vec<(String, Vec<usize>)>,
}

impl BnsModel {
    pub fn manifest(&self) -> ModelManifest {
        ModelManifest {
            model_config: self.config.clone(),
            vocab_size: self.vocab_size(),
            tensors: self
                .params
                .iter()
                .map(|(_, n, t)| (n.to_string(), t.shape().to_vec()))
                .collect(),
        }
    }

    /// Writes the parameter container to `path`.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(write_checkpoint(path, &self.params)?)
    }

    /// Rebuilds a model from its manifest and loads the container at `path`.
    pub fn load(manifest: &ModelManifest, path: &Path) -> Result<Self, ModelError> {
        let mut model = BnsModel::new(manifest.model_config.clone(), manifest.vocab_size, 0)?;
        let expected = model.manifest().tensors;
        if expected != manifest.tensors {
            return Err(ModelError::Mismatch(
                "manifest tensor list does not match its model config".into(),
            ));
        }
        let stored = read_checkpoint(path)?;
        let entries = stored.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect();
        model.load_tensors(entries)?;
        Ok(model)
    }
}

/// See [`BnsModel::joint_loss`].
pub fn joint_loss(
    g: &mut Graph,
    out: &ForwardOutput,
    labels: &Labels,
    config: &ModelConfig,
) -> Result<(Var, LossBreakdown), ModelError> {
    let (l1, l2, l3) = config.effective_lambdas();
    let j_sar = cross_entropy(g, out.sarcasm_probs, usize::from(labels.sarcastic))?;
    let mut total = g.scale(j_sar, l1)?;
    let mut breakdown = LossBreakdown {
        j_sar: g.value(j_sar).data()[0],
        ..LossBreakdown::default()
    };
    let subtasks = [
        (out.implicit_probs, labels.subtasks.implicit_label.class(), l2),
        (out.explicit_probs, labels.subtasks.explicit_label.class(), l3),
    ];
    for (i, (probs, class, lambda)) in subtasks.into_iter().enumerate() {
        let Some(probs) = probs else { continue };
        let j = cross_entropy(g, probs, class)?;
        let value = g.value(j).data()[0];
        if i == 0 {
            breakdown.j_imp = value;
        } else {
            breakdown.j_exp = value;
        }
        if lambda != 0.0 {
            let weighted = g.scale(j, lambda)?;
            total = g.add(total, weighted)?;
        }
    }
    breakdown.total = g.value(total).data()[0];
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruct::Polarity;

    pub(crate) fn toy_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 20,
            hidden_dim: 8,
            num_heads: 2,
            feature_maps_per_width: 4,
            dropout_p: 0.0,
            ..ModelConfig::default()
        }
    }

    type ToyInput = (Vec<usize>, Vec<(usize, usize)>, Vec<usize>, Vec<usize>);

    fn toy_input() -> ToyInput {
        (
            vec![2, 3, 4, 5, 6, 7],
            vec![(0, 3), (2, 5)],
            vec![1],
            vec![0, 2, 3, 4, 5],
        )
    }

    fn labels() -> Labels {
        Labels {
            sarcastic: true,
            subtasks: SubtaskLabels {
                explicit_label: Polarity::Positive,
                implicit_label: Polarity::Negative,
            },
        }
    }

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
        toy_config().validate().unwrap();
    }

    #[test]
    fn config_violations_are_rejected() {
        let bad = [
            ModelConfig {
                num_heads: 7,
                ..toy_config()
            },
            ModelConfig {
                lambda2: -1.0,
                ..toy_config()
            },
            ModelConfig {
                hidden_dim: 2,
                ..toy_config()
            },
            ModelConfig {
                dropout_p: 1.0,
                ..toy_config()
            },
            ModelConfig {
                kernel_widths: vec![],
                ..toy_config()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(ModelError::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn enum_strings_round_trip() {
        for m in [ChannelMask::Both, ChannelMask::BehaviorOnly, ChannelMask::SentenceOnly] {
            assert_eq!(m.as_str().parse::<ChannelMask>().unwrap(), m);
        }
        for f in [Fusion::Stack, Fusion::Concat] {
            assert_eq!(f.to_string().parse::<Fusion>().unwrap(), f);
        }
        assert!("bogus".parse::<Fusion>().is_err());
    }

    #[test]
    fn zero_parameters_give_uniform_prediction() {
        let mut model = BnsModel::new(toy_config(), 10, 1).unwrap();
        model.params_mut().zero_all();
        let (ids, chunks, e, m) = toy_input();
        let input = ModelInput {
            token_ids: &ids,
            chunks: &chunks,
            explicit: &e,
            implicit: &m,
        };
        let p = model.predict(&input).unwrap();
        assert_eq!(p.sarcasm_probs, [0.5, 0.5]);
        assert_eq!(p.explicit_probs, Some([0.5, 0.5]));
    }

    #[test]
    fn probability_vectors_sum_to_one() {
        let model = BnsModel::new(toy_config(), 10, 2).unwrap();
        let (ids, chunks, e, m) = toy_input();
        let input = ModelInput {
            token_ids: &ids,
            chunks: &chunks,
            explicit: &e,
            implicit: &m,
        };
        let p = model.predict(&input).unwrap();
        for probs in [Some(p.sarcasm_probs), p.explicit_probs, p.implicit_probs] {
            let probs = probs.unwrap();
            assert!((probs[0] + probs[1] - 1.0).abs() < 1e-9);
        }
        assert_eq!(model.predict(&input).unwrap(), p);
    }

    #[test]
    fn ablated_models_have_one_channel() {
        let (ids, chunks, e, m) = toy_input();
        let input = ModelInput {
            token_ids: &ids,
            chunks: &chunks,
            explicit: &e,
            implicit: &m,
        };
        let b = BnsModel::new(
            ModelConfig {
                channel_mask: ChannelMask::BehaviorOnly,
                ..toy_config()
            },
            10,
            3,
        )
        .unwrap();
        assert!(b.sentiment_head_params().is_empty());
        assert_eq!(b.predict(&input).unwrap().explicit_probs, None);
        let s = BnsModel::new(
            ModelConfig {
                channel_mask: ChannelMask::SentenceOnly,
                ..toy_config()
            },
            10,
            3,
        )
        .unwrap();
        assert!(s.params().id("behavior.attention.w_q").is_none());
        assert!(s.predict(&input).unwrap().implicit_probs.is_some());
    }

    #[test]
    fn joint_loss_algebra() {
        let model = BnsModel::new(toy_config(), 10, 4).unwrap();
        let (ids, chunks, e, m) = toy_input();
        let input = ModelInput {
            token_ids: &ids,
            chunks: &chunks,
            explicit: &e,
            implicit: &m,
        };
        let mut g = Graph::new();
        let out = model.forward(&mut g, model.params(), &input, None).unwrap();
        let (_, b) = model.joint_loss(&mut g, &out, &labels()).unwrap();
        assert!((b.total - (b.j_sar + 0.5 * b.j_imp + 0.5 * b.j_exp)).abs() < 1e-12);

        let sar_only = ModelConfig {
            lambda2: 0.0,
            lambda3: 0.0,
            ..toy_config()
        };
        let (_, b1) = joint_loss(&mut g, &out, &labels(), &sar_only).unwrap();
        assert_eq!(b1.total, b1.j_sar);
        let off = ModelConfig {
            subtask_loss_enabled: false,
            ..toy_config()
        };
        let (_, b2) = joint_loss(&mut g, &out, &labels(), &off).unwrap();
        assert_eq!(b2.total, b2.j_sar);
        assert_eq!(b2.j_imp, b.j_imp);
    }

    #[test]
    fn uniform_heads_give_three_ln2() {
        let mut g = Graph::new();
        let half = g.constant(Tensor::vector(vec![0.5, 0.5]));
        let out = ForwardOutput {
            sarcasm_probs: half,
            explicit_probs: Some(half),
            implicit_probs: Some(half),
            behavior_repr: None,
            sentence_repr: None,
            attention: None,
        };
        let (_, b) = joint_loss(&mut g, &out, &labels(), &ModelConfig::default()).unwrap();
        assert!((b.total - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((b.total - 1.38629).abs() < 1e-5);
    }

    #[test]
    fn bad_span_is_reported() {
        let model = BnsModel::new(toy_config(), 10, 5).unwrap();
        let ids = [2, 3];
        let chunks = [(0, 3)];
        let input = ModelInput {
            token_ids: &ids,
            chunks: &chunks,
            explicit: &[],
            implicit: &[0, 1],
        };
        assert!(matches!(model.predict(&input), Err(ModelError::Span { .. })));
    }

    #[test]
    fn tensors_round_trip_and_mismatch_is_rejected() {
        let a = BnsModel::new(toy_config(), 10, 6).unwrap();
        let mut b = BnsModel::new(toy_config(), 10, 7).unwrap();
        b.load_tensors(a.named_tensors()).unwrap();
        assert_eq!(a.named_tensors(), b.named_tensors());
        let mut c = BnsModel::new(
            ModelConfig {
                hidden_dim: 10,
                ..toy_config()
            },
            10,
            7,
        )
        .unwrap();
        assert!(matches!(
            c.load_tensors(a.named_tensors()),
            Err(ModelError::Mismatch(_))
        ));
    }

    #[test]
    fn checkpoint_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let a = BnsModel::new(toy_config(), 10, 8).unwrap();
        a.save(&path).unwrap();
        let b = BnsModel::load(&a.manifest(), &path).unwrap();
        assert_eq!(a.named_tensors(), b.named_tensors());
        let mut other = a.manifest();
        other.model_config.hidden_dim = 10;
        assert!(BnsModel::load(&other, &path).is_err());
    }
}
