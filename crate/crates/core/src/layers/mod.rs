//! Parameterized building blocks on top of [`crate::numeric::Graph`].

pub mod attention;
pub mod conv;
pub mod lstm;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numeric::{Graph, ParamId, Parameters, Tensor, TensorError, Var};

pub use attention::{AttentionMode, AttentionOutput, AttentionParams};
pub use conv::ConvFusion;
pub use lstm::{BiLstm, BiLstmOutput, LstmDirection};

/// Reserved vocabulary id of the padding token.
pub const PAD_ID: usize = 0;

/// Floor applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

/// Trainable `V × d` lookup table whose padding row never receives gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl Embedding {
    /// Uses `init` as the table and zeroes the padding row.
    pub fn from_table(params: &mut Parameters, name: &str, mut init: Tensor) -> Result<Self, TensorError> {
        let Some((vocab_size, dim)) = init.dims2() else {
            return Err(TensorError::Rank {
                op: "embedding",
                expected: 2,
                shape: init.shape().to_vec(),
            });
        };
        if vocab_size > PAD_ID {
            init.data_mut()[PAD_ID * dim..(PAD_ID + 1) * dim].fill(0.0);
        }
        Ok(Self {
            table: params.register(name, init),
            vocab_size,
            dim,
        })
    }

    pub fn lookup(&self, g: &mut Graph, params: &Parameters, ids: &[usize]) -> Result<Var, TensorError> {
        let table = g.param(params, self.table);
        g.gather_rows(table, ids, Some(PAD_ID))
    }
}

/// Inverted dropout: kept activations are scaled by `1/(1−p)`.
#[derive(Debug, Clone)]
pub struct Dropout {
    p: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(p: f64, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout rate {p} outside [0, 1)");
        Self {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn rate(&self) -> f64 {
        self.p
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var, TensorError> {
        if self.p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.p;
        let n = g.value(x).len();
        let mask = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        g.mul_const(x, mask)
    }
}

/// Affine map on a vector: `x W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Dense {
    pub fn new(params: &mut Parameters, prefix: &str, input_dim: usize, output_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (input_dim + output_dim) as f64).sqrt();
        Self {
            weight: params.register_uniform(format!("{prefix}.weight"), &[input_dim, output_dim], bound, rng),
            bias: params.register(format!("{prefix}.bias"), Tensor::zeros(&[output_dim])),
            input_dim,
            output_dim,
        }
    }

    /// `x` is a vector of length `input_dim`; returns a vector of length `output_dim`.
    pub fn forward(&self, g: &mut Graph, params: &Parameters, x: Var) -> Result<Var, TensorError> {
        let w = g.param(params, self.weight);
        let b = g.param(params, self.bias);
        let row = g.reshape(x, &[1, self.input_dim])?;
        let y = g.matmul(row, w)?;
        let y = g.reshape(y, &[self.output_dim])?;
        g.add_row(y, b)
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Binary cross-entropy on a 2-class probability vector:
/// `−[y ln ŷ + (1−y) ln(1−ŷ)]` with `ŷ = probs[1]` and `1−ŷ = probs[0]`.
pub fn cross_entropy(g: &mut Graph, probs: Var, label: usize) -> Result<Var, TensorError> {
    let classes = g.value(probs).len();
    if classes != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            left: g.shape(probs).to_vec(),
            right: vec![2],
        });
    }
    if label >= classes {
        return Err(TensorError::InvalidLabel { label, classes });
    }
    let p = g.slice(probs, 0, label, label + 1)?;
    let logp = g.ln_clamped(p, LOG_FLOOR)?;
    let nll = g.neg(logp)?;
    g.sum(nll)
}

/// Mean of [`cross_entropy`] over a batch of `(probs, label)` pairs.
pub fn mean_cross_entropy(g: &mut Graph, items: &[(Var, usize)]) -> Result<Var, TensorError> {
    if items.is_empty() {
        return Err(TensorError::Empty {
            op: "mean_cross_entropy",
        });
    }
    let losses = items
        .iter()
        .map(|&(p, y)| cross_entropy(g, p, y))
        .collect::<Result<Vec<_>, _>>()?;
    let parts = losses
        .iter()
        .map(|&l| g.reshape(l, &[1]))
        .collect::<Result<Vec<_>, _>>()?;
    let stacked = g.concat(&parts, 0)?;
    g.mean(stacked)
}
