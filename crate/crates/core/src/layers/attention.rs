//! Multi-head scaled dot-product attention with a selectable normalizer.
//!
//! Raw attention normalizes `QKᵀ/√d_k` with softmax. Conflict attention uses
//! softmin on the same logits, so key positions that are *least* similar to the
//! query receive the most weight. Both modes share every step except the
//! normalizer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numeric::{Graph, ParamId, Parameters, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttentionMode {
    /// softmin normalizer
    Conflict,
    /// softmax normalizer
    Raw,
}

impl AttentionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionMode::Conflict => "conflict",
            AttentionMode::Raw => "raw",
        }
    }
}

impl std::str::FromStr for AttentionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conflict" | "cam" => Ok(AttentionMode::Conflict),
            "raw" => Ok(AttentionMode::Raw),
            other => Err(format!("unknown attention mode {other:?} (expected conflict|raw)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub d_model: usize,
    pub num_heads: usize,
}

/// Output of one attention pass.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `L × d_model`, heads concatenated along columns.
    pub out: Var,
    /// Per head, the `L × L` logits `QKᵀ/√d_k` before normalization.
    pub logits: Vec<Var>,
    /// Per head, the `L × L` row-stochastic weights.
    pub weights: Vec<Var>,
}

impl AttentionParams {
    pub fn new(
        params: &mut Parameters,
        prefix: &str,
        d_model: usize,
        num_heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, TensorError> {
        if num_heads == 0 || !d_model.is_multiple_of(num_heads) {
            return Err(TensorError::ShapeMismatch {
                op: "attention heads",
                left: vec![d_model],
                right: vec![num_heads],
            });
        }
        let bound = (1.0 / d_model as f64).sqrt();
        let shape = [d_model, d_model];
        Ok(Self {
            w_q: params.register_uniform(format!("{prefix}.w_q"), &shape, bound, rng),
            w_k: params.register_uniform(format!("{prefix}.w_k"), &shape, bound, rng),
            w_v: params.register_uniform(format!("{prefix}.w_v"), &shape, bound, rng),
            d_model,
            num_heads,
        })
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.num_heads
    }

    /// Runs attention over the rows of `x` (`L × d_model`, `L ≥ 1`).
    ///
    /// `key_mask`, when given, marks valid key positions; masked keys get
    /// exactly zero weight.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &Parameters,
        x: Var,
        mode: AttentionMode,
        key_mask: Option<&[bool]>,
    ) -> Result<AttentionOutput, TensorError> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.d_model || shape[0] == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "attention input",
                left: shape,
                right: vec![0, self.d_model],
            });
        }
        let len = shape[0];
        if let Some(mask) = key_mask {
            if mask.len() != len || !mask.iter().any(|&m| m) {
                return Err(TensorError::ShapeMismatch {
                    op: "attention mask",
                    left: vec![len],
                    right: vec![mask.len()],
                });
            }
        }
        let wq = g.param(params, self.w_q);
        let wk = g.param(params, self.w_k);
        let wv = g.param(params, self.w_v);
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        let dk = self.d_k();
        let scale = 1.0 / (dk as f64).sqrt();

        let mut heads = Vec::with_capacity(self.num_heads);
        let mut all_logits = Vec::with_capacity(self.num_heads);
        let mut all_weights = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let (lo, hi) = (h * dk, (h + 1) * dk);
            let qh = g.slice(q, 1, lo, hi)?;
            let kh = g.slice(k, 1, lo, hi)?;
            let vh = g.slice(v, 1, lo, hi)?;
            let kt = g.transpose(kh)?;
            let raw = g.matmul(qh, kt)?;
            let logits = g.scale(raw, scale)?;
            let weights = normalize(g, logits, mode, key_mask)?;
            heads.push(g.matmul(weights, vh)?);
            all_logits.push(logits);
            all_weights.push(weights);
        }
        let out = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat(&heads, 1)?
        };
        Ok(AttentionOutput {
            out,
            logits: all_logits,
            weights: all_weights,
        })
    }

    /// Per-head `L × L` weight matrices for export.
    pub fn weights(&self, params: &Parameters, x: &Tensor, mode: AttentionMode) -> Result<Vec<Tensor>, TensorError> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, params, xv, mode, None)?;
        Ok(out.weights.iter().map(|w| g.value(*w).clone()).collect())
    }
}

fn normalize(g: &mut Graph, logits: Var, mode: AttentionMode, key_mask: Option<&[bool]>) -> Result<Var, TensorError> {
    let logits = match key_mask {
        // Push masked logits far toward the side the normalizer ignores so
        // their weight underflows to exactly zero.
        Some(mask) => {
            let rows = g.shape(logits)[0];
            let push = match mode {
                AttentionMode::Raw => -MASK_OFFSET,
                AttentionMode::Conflict => MASK_OFFSET,
            };
            let offsets: Vec<f64> = (0..rows)
                .flat_map(|_| mask.iter().map(move |&m| if m { 0.0 } else { push }))
                .collect();
            let offsets = g.constant(Tensor::new(vec![rows, mask.len()], offsets)?);
            g.add(logits, offsets)?
        }
        None => logits,
    };
    match mode {
        AttentionMode::Raw => g.softmax(logits),
        AttentionMode::Conflict => g.softmin(logits),
    }
}

const MASK_OFFSET: f64 = 1e9;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::check_param_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data_mut()[i * n + i] = 1.0;
        }
        t
    }

    fn identity_params(d: usize, heads: usize) -> (Parameters, AttentionParams) {
        let mut p = Parameters::new();
        let a = AttentionParams {
            w_q: p.register("q", identity(d)),
            w_k: p.register("k", identity(d)),
            w_v: p.register("v", identity(d)),
            d_model: d,
            num_heads: heads,
        };
        (p, a)
    }

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = Parameters::new();
        assert!(AttentionParams::new(&mut p, "a", 10, 3, &mut rng).is_err());
        assert!(AttentionParams::new(&mut p, "b", 300, 10, &mut rng).is_ok());
    }

    #[test]
    fn single_row_returns_its_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = Parameters::new();
        let attn = AttentionParams::new(&mut p, "a", 4, 2, &mut rng).unwrap();
        let x = random_tensor(&[1, 4], &mut rng);
        for mode in [AttentionMode::Raw, AttentionMode::Conflict] {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let out = attn.forward(&mut g, &p, xv, mode, None).unwrap();
            let wv = g.param(&p, attn.w_v);
            let v = g.matmul(xv, wv).unwrap();
            for (a, b) in g.value(out.out).data().iter().zip(g.value(v).data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_rows_average_values() {
        let (p, attn) = identity_params(2, 1);
        let x = Tensor::from_rows(&[vec![0.3, -0.4], vec![0.3, -0.4]]).unwrap();
        for mode in [AttentionMode::Raw, AttentionMode::Conflict] {
            let w = attn.weights(&p, &x, mode).unwrap();
            assert_eq!(w[0].data(), &[0.5, 0.5, 0.5, 0.5]);
        }
    }

    #[test]
    fn conflict_favors_dissimilar_key() {
        let (p, attn) = identity_params(2, 1);
        // q = row 0 = (1, 0); key 1 = (-1, 0) has the smaller dot product.
        let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let w = attn.weights(&p, &x, AttentionMode::Conflict).unwrap();
        assert!(w[0].data()[1] > w[0].data()[0]);
        let raw = attn.weights(&p, &x, AttentionMode::Raw).unwrap();
        assert!(raw[0].data()[0] > raw[0].data()[1]);
    }

    #[test]
    fn conflict_equals_raw_on_negated_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = Parameters::new();
        let attn = AttentionParams::new(&mut p, "a", 6, 3, &mut rng).unwrap();
        let x = random_tensor(&[4, 6], &mut rng);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let cam = attn.forward(&mut g, &p, xv, AttentionMode::Conflict, None).unwrap();
        let raw = attn.forward(&mut g, &p, xv, AttentionMode::Raw, None).unwrap();
        for h in 0..3 {
            assert_eq!(g.value(cam.logits[h]), g.value(raw.logits[h]));
            let neg = g.neg(raw.logits[h]).unwrap();
            let flipped = g.softmax(neg).unwrap();
            for (a, b) in g.value(cam.weights[h]).data().iter().zip(g.value(flipped).data()) {
                assert!((a - b).abs() < 1e-12);
            }
            for row in g.value(cam.weights[h]).data().chunks(4) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn equal_logits_give_uniform_weights() {
        let mut p = Parameters::new();
        let attn = AttentionParams {
            w_q: p.register("q", Tensor::zeros(&[2, 2])),
            w_k: p.register("k", Tensor::zeros(&[2, 2])),
            w_v: p.register("v", Tensor::zeros(&[2, 2])),
            d_model: 2,
            num_heads: 1,
        };
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        for mode in [AttentionMode::Raw, AttentionMode::Conflict] {
            assert_eq!(attn.weights(&p, &x, mode).unwrap()[0].data(), &[0.5; 4]);
        }
    }

    #[test]
    fn masked_keys_get_zero_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = Parameters::new();
        let attn = AttentionParams::new(&mut p, "a", 4, 2, &mut rng).unwrap();
        let x = random_tensor(&[3, 4], &mut rng);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let out = attn
            .forward(&mut g, &p, xv, AttentionMode::Conflict, Some(&[true, true, false]))
            .unwrap();
        for w in &out.weights {
            for row in g.value(*w).data().chunks(3) {
                assert_eq!(row[2], 0.0);
                assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = Parameters::new();
        let attn = AttentionParams::new(&mut p, "a", 4, 2, &mut rng).unwrap();
        let x = p.register("x", random_tensor(&[3, 4], &mut rng));
        let c = random_tensor(&[3, 4], &mut rng);
        for mode in [AttentionMode::Raw, AttentionMode::Conflict] {
            let err = check_param_gradients(
                &p,
                |g, p| {
                    let xv = g.param(p, x);
                    let out = attn.forward(g, p, xv, mode, Some(&[true, true, true]))?;
                    let cv = g.constant(c.clone());
                    let prod = g.mul(out.out, cv)?;
                    g.sum(prod)
                },
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "{mode:?}: {err}");
        }
    }
}
