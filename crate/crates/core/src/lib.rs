//! Dual-channel sarcasm detection.
//!
//! The behavior channel segments a sentence into verb-centred chunks and
//! relates them with softmin ("conflict") attention. The sentence channel
//! splits a sentence into its explicit sentiment words and the implicit rest
//! and classifies the sentiment of each. Multi-width convolution fuses the two
//! and a three-term loss trains everything jointly.
//!
//! Everything runs in `f64` on a small tape-based autodiff engine
//! ([`numeric::Graph`]).

pub mod config;
pub mod data;
pub mod gradsuite;
pub mod layers;
pub mod model;
pub mod numeric;
pub mod reconstruct;
pub mod segment;
pub mod text;
pub mod train;

pub use config::{config_merge, ConfigError, RunConfig};
pub use data::{
    CacheKey, CacheStatus, Corpus, CorpusFormat, DataError, Dataset, Example, PreprocessConfig, PreprocessedExample,
    Split, Vocabulary,
};
pub use layers::AttentionMode;
pub use model::{
    BnsModel, ChannelMask, ForwardOutput, Fusion, Labels, LossBreakdown, ModelConfig, ModelError, ModelInput,
    ModelManifest, Prediction,
};
pub use numeric::{Graph, ParamId, Parameters, Tensor, TensorError, Var};
pub use reconstruct::{Polarity, SentenceSplit, SubtaskLabels};
pub use segment::{BehaviorChunk, Segmentation, SegmentationConfig};
pub use text::{PosTag, PosTagger, RuleTagger, SentimentLexicon, Token};
pub use train::{AblationRow, EpochRecord, MetricsReport, RunRecord, SweepRow, TrainConfig, TrainError, Variant};

pub(crate) fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
