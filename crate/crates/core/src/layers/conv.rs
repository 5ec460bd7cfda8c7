use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numeric::{Graph, ParamId, Parameters, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvKernel {
    pub width: usize,
    /// `F × (C·width)`, channel-major.
    pub kernel: ParamId,
    /// `F`
    pub bias: ParamId,
}

/// Multi-width 1-D convolution with ReLU and global max-pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvFusion {
    pub kernels: Vec<ConvKernel>,
    pub channels: usize,
    pub feature_maps: usize,
}

impl ConvFusion {
    pub fn new(
        params: &mut Parameters,
        prefix: &str,
        channels: usize,
        widths: &[usize],
        feature_maps: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let kernels = widths
            .iter()
            .map(|&width| {
                let fan_in = channels * width;
                let bound = (6.0 / (fan_in + feature_maps) as f64).sqrt();
                ConvKernel {
                    width,
                    kernel: params.register_uniform(
                        format!("{prefix}.k{width}.kernel"),
                        &[feature_maps, fan_in],
                        bound,
                        rng,
                    ),
                    bias: params.register(format!("{prefix}.k{width}.bias"), Tensor::zeros(&[feature_maps])),
                }
            })
            .collect();
        Self {
            kernels,
            channels,
            feature_maps,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.kernels.len() * self.feature_maps
    }

    pub fn max_width(&self) -> usize {
        self.kernels.iter().map(|k| k.width).max().unwrap_or(0)
    }

    /// `input` is `channels × d`. Per width: `relu(max_t conv + b)`, which
    /// equals max-pooling of `relu(conv + b)`. Results are concatenated.
    pub fn forward(&self, g: &mut Graph, params: &Parameters, input: Var) -> Result<Var, TensorError> {
        let mut pooled = Vec::with_capacity(self.kernels.len());
        for k in &self.kernels {
            let kernel = g.param(params, k.kernel);
            let bias = g.param(params, k.bias);
            let maps = g.conv1d(input, kernel, k.width)?;
            let peak = g.max_last(maps)?;
            let shifted = g.add_row(peak, bias)?;
            pooled.push(g.relu(shifted)?);
        }
        g.concat(&pooled, 0)
    }

    /// Same as [`forward`](Self::forward) without the bias and ReLU.
    pub fn pooled_pre_bias(&self, g: &mut Graph, params: &Parameters, input: Var) -> Result<Var, TensorError> {
        let mut pooled = Vec::with_capacity(self.kernels.len());
        for k in &self.kernels {
            let kernel = g.param(params, k.kernel);
            let maps = g.conv1d(input, kernel, k.width)?;
            pooled.push(g.max_last(maps)?);
        }
        g.concat(&pooled, 0)
    }
}
