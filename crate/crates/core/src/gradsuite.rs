//! Layer-by-layer finite-difference gradient suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{cross_entropy, AttentionMode, AttentionParams, BiLstm, ConvFusion};
use crate::model::{BnsModel, Labels, ModelConfig, ModelError, ModelInput};
use crate::numeric::{check_gradient, check_param_gradients, Parameters, Tensor};
use crate::reconstruct::{Polarity, SubtaskLabels};

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckResult {
    pub name: String,
    pub max_rel_error: f64,
}

impl GradCheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("length matches shape")
}

fn weighted_sum_loss(
    g: &mut crate::numeric::Graph,
    y: crate::numeric::Var,
    c: &Tensor,
) -> Result<crate::numeric::Var, crate::numeric::TensorError> {
    let cv = g.constant(c.clone());
    let p = g.mul(y, cv)?;
    g.sum(p)
}

pub fn softmin(seed: u64) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&[3, 5], &mut rng);
    let c = random(&[3, 5], &mut rng);
    Ok(check_gradient(
        |g, x| {
            let s = g.softmin(x)?;
            weighted_sum_loss(g, s, &c)
        },
        &x,
        STEP,
    )?)
}

pub fn attention(mode: AttentionMode, seed: u64) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Parameters::new();
    let attn = AttentionParams::new(&mut p, "attn", 6, 2, &mut rng)?;
    let x = p.register("x", random(&[3, 6], &mut rng));
    let c = random(&[3, 6], &mut rng);
    Ok(check_param_gradients(
        &p,
        |g, p| {
            let xv = g.param(p, x);
            let out = attn.forward(g, p, xv, mode, None)?;
            weighted_sum_loss(g, out.out, &c)
        },
        STEP,
    )?)
}

pub fn bilstm_layer(layer: usize, seed: u64) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Parameters::new();
    let (d, h) = (5, 8);
    let lstm = BiLstm::new(&mut p, "lstm", d, h, 2, &mut rng);
    let width = if layer == 0 { d } else { 2 * h };
    let x = p.register("x", random(&[4, width], &mut rng));
    let c = random(&[4, 2 * h], &mut rng);
    Ok(check_param_gradients(
        &p,
        |g, p| {
            let xv = g.param(p, x);
            let out = lstm.run_layer(layer, g, p, xv)?;
            let s = weighted_sum_loss(g, out.states, &c)?;
            let l = g.sum(out.last)?;
            g.add(s, l)
        },
        STEP,
    )?)
}

pub fn conv_fuse(seed: u64) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Parameters::new();
    let conv = ConvFusion::new(&mut p, "conv", 2, &[3, 4, 5], 4, &mut rng);
    for k in &conv.kernels {
        p.set(
            k.bias,
            Tensor::vector((0..4).map(|_| rng.gen_range(0.2..0.6)).collect()),
        )?;
    }
    let x = p.register("x", random(&[2, 10], &mut rng));
    let c = random(&[12], &mut rng);
    Ok(check_param_gradients(
        &p,
        |g, p| {
            let xv = g.param(p, x);
            let y = conv.forward(g, p, xv)?;
            weighted_sum_loss(g, y, &c)
        },
        STEP,
    )?)
}

pub fn cross_entropy_head(seed: u64) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = random(&[2], &mut rng);
    let mut worst: f64 = 0.0;
    for label in 0..2 {
        let err = check_gradient(
            |g, z| {
                let probs = g.softmax(z)?;
                cross_entropy(g, probs, label)
            },
            &z,
            STEP,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Toy dimensions for the end-to-end check.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 20,
        hidden_dim: 8,
        num_heads: 2,
        feature_maps_per_width: 4,
        dropout_p: 0.0,
        ..ModelConfig::default()
    }
}

/// Joint loss of a toy model on a six-token sentence with two chunks. The
/// embedding table is drawn from `U(−1, 1)` and biases are made positive so
/// the probe point is away from ReLU kinks.
pub fn end_to_end(config: ModelConfig, seed: u64) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let table = random(&[8, config.embed_dim], &mut rng);
    let mut model = BnsModel::with_embeddings(config, table, seed)?;
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        if model.params().name(id).ends_with("bias") {
            let t = model.params().get(id);
            let fresh = Tensor::new(
                t.shape().to_vec(),
                (0..t.len()).map(|_| rng.gen_range(0.1..0.4)).collect(),
            )?;
            model.params_mut().set(id, fresh)?;
        }
    }
    let token_ids = [2, 3, 4, 5, 6, 7];
    let chunks = [(0, 3), (2, 5)];
    let explicit = [1];
    let implicit = [0, 2, 3, 4, 5];
    let input = ModelInput {
        token_ids: &token_ids,
        chunks: &chunks,
        explicit: &explicit,
        implicit: &implicit,
    };
    let labels = Labels {
        sarcastic: true,
        subtasks: SubtaskLabels {
            explicit_label: Polarity::Positive,
            implicit_label: Polarity::Negative,
        },
    };
    let err = check_param_gradients(
        model.params(),
        |g, p| {
            let out = model.forward(g, p, &input, None).map_err(into_tensor_error)?;
            let (total, _) = model.joint_loss(g, &out, &labels).map_err(into_tensor_error)?;
            Ok(total)
        },
        STEP,
    )?;
    Ok(err)
}

fn into_tensor_error(e: ModelError) -> crate::numeric::TensorError {
    match e {
        ModelError::Tensor(t) => t,
        _ => crate::numeric::TensorError::Empty { op: "model" },
    }
}

/// Runs every check with a fixed seed.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheckResult>, ModelError> {
    let entries: Vec<(&str, f64)> = vec![
        ("softmin", softmin(seed)?),
        ("raw_attention", attention(AttentionMode::Raw, seed)?),
        ("conflict_attention", attention(AttentionMode::Conflict, seed)?),
        ("bilstm_layer1", bilstm_layer(0, seed)?),
        ("bilstm_layer2", bilstm_layer(1, seed)?),
        ("conv_fuse", conv_fuse(seed)?),
        ("cross_entropy", cross_entropy_head(seed)?),
        ("joint_loss_end_to_end", end_to_end(toy_config(), seed)?),
    ];
    Ok(entries
        .into_iter()
        .map(|(name, max_rel_error)| GradCheckResult {
            name: name.to_string(),
            max_rel_error,
        })
        .collect())
}
