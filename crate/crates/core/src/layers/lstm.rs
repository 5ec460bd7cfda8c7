//! Stacked bidirectional LSTM.
//!
//! Gate layout inside the fused `4h` projection is `[input, forget, cell, output]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dropout;
use crate::numeric::{Graph, ParamId, Parameters, Tensor, TensorError, Var};

/// One direction of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmDirection {
    /// `d_in × 4h`
    pub w_ih: ParamId,
    /// `h × 4h`
    pub w_hh: ParamId,
    /// `4h`
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmDirection {
    pub fn new(params: &mut Parameters, prefix: &str, input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        Self {
            w_ih: params.register_uniform(format!("{prefix}.w_ih"), &[input_dim, 4 * hidden_dim], bound, rng),
            w_hh: params.register_uniform(format!("{prefix}.w_hh"), &[hidden_dim, 4 * hidden_dim], bound, rng),
            bias: params.register_uniform(format!("{prefix}.bias"), &[4 * hidden_dim], bound, rng),
            input_dim,
            hidden_dim,
        }
    }

    /// Runs the recurrence over the rows of `xs` (`L × d_in`). With `reverse`
    /// the sequence is consumed right to left. Returned states are `1 × h`
    /// and indexed by original position.
    pub fn run(&self, g: &mut Graph, params: &Parameters, xs: Var, reverse: bool) -> Result<Vec<Var>, TensorError> {
        let len = g.shape(xs)[0];
        let h = self.hidden_dim;
        let w_ih = g.param(params, self.w_ih);
        let w_hh = g.param(params, self.w_hh);
        let bias = g.param(params, self.bias);
        let projected = g.matmul(xs, w_ih)?;
        let projected = g.add_row(projected, bias)?;

        let mut hidden = g.constant(Tensor::zeros(&[1, h]));
        let mut cell = g.constant(Tensor::zeros(&[1, h]));
        let mut states = vec![hidden; len];
        let order: Vec<usize> = if reverse {
            (0..len).rev().collect()
        } else {
            (0..len).collect()
        };
        for t in order {
            let x_t = g.slice(projected, 0, t, t + 1)?;
            let rec = g.matmul(hidden, w_hh)?;
            let gates = g.add(x_t, rec)?;
            let i_pre = g.slice(gates, 1, 0, h)?;
            let f_pre = g.slice(gates, 1, h, 2 * h)?;
            let c_pre = g.slice(gates, 1, 2 * h, 3 * h)?;
            let o_pre = g.slice(gates, 1, 3 * h, 4 * h)?;
            let i = g.sigmoid(i_pre)?;
            let f = g.sigmoid(f_pre)?;
            let c_new = g.tanh(c_pre)?;
            let o = g.sigmoid(o_pre)?;
            let keep = g.mul(f, cell)?;
            let write = g.mul(i, c_new)?;
            cell = g.add(keep, write)?;
            let squashed = g.tanh(cell)?;
            hidden = g.mul(o, squashed)?;
            states[t] = hidden;
        }
        Ok(states)
    }
}

/// Per-layer forward/backward direction pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstmLayer {
    pub forward: LstmDirection,
    pub backward: LstmDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstm {
    pub layers: Vec<BiLstmLayer>,
    pub hidden_dim: usize,
}

/// `H` holds one `[→h; ←h]` row per step; `last` joins each direction's own
/// final state (forward at step `L−1`, backward at step `0`).
#[derive(Debug, Clone, Copy)]
pub struct BiLstmOutput {
    pub states: Var,
    pub last: Var,
}

impl BiLstm {
    pub fn new(
        params: &mut Parameters,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        num_layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let d_in = if l == 0 { input_dim } else { 2 * hidden_dim };
                BiLstmLayer {
                    forward: LstmDirection::new(params, &format!("{prefix}.l{l}.fwd"), d_in, hidden_dim, rng),
                    backward: LstmDirection::new(params, &format!("{prefix}.l{l}.bwd"), d_in, hidden_dim, rng),
                }
            })
            .collect();
        Self { layers, hidden_dim }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// One bidirectional layer over `xs` (`L × d_in`).
    pub fn run_layer(
        &self,
        layer: usize,
        g: &mut Graph,
        params: &Parameters,
        xs: Var,
    ) -> Result<BiLstmOutput, TensorError> {
        let len = g.shape(xs)[0];
        if len == 0 {
            return Err(TensorError::Empty { op: "bilstm" });
        }
        let l = &self.layers[layer];
        let fwd = l.forward.run(g, params, xs, false)?;
        let bwd = l.backward.run(g, params, xs, true)?;
        let rows: Vec<Var> = fwd
            .iter()
            .zip(&bwd)
            .map(|(f, b)| g.concat(&[*f, *b], 1))
            .collect::<Result<_, _>>()?;
        let states = g.concat(&rows, 0)?;
        let last_pair = g.concat(&[fwd[len - 1], bwd[0]], 1)?;
        let last = g.reshape(last_pair, &[2 * self.hidden_dim])?;
        Ok(BiLstmOutput { states, last })
    }

    /// All layers, with optional dropout on each layer's output.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &Parameters,
        xs: Var,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<BiLstmOutput, TensorError> {
        let mut input = xs;
        let mut out = None;
        for layer in 0..self.layers.len() {
            let mut o = self.run_layer(layer, g, params, input)?;
            if let Some(d) = dropout.as_deref_mut() {
                o.states = d.apply(g, o.states)?;
                o.last = d.apply(g, o.last)?;
            }
            input = o.states;
            out = Some(o);
        }
        out.ok_or(TensorError::Empty { op: "bilstm layers" })
    }
}
