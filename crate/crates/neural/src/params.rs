//! Named parameter tensors of the decoder.

use ndarray::Array2;
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{NeuralError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_g: Array2<f64>,
    pub ln1_b: Array2<f64>,
    pub w_qkv: Array2<f64>,
    pub b_qkv: Array2<f64>,
    pub w_o: Array2<f64>,
    pub b_o: Array2<f64>,
    pub ln2_g: Array2<f64>,
    pub ln2_b: Array2<f64>,
    pub w_ff1: Array2<f64>,
    pub b_ff1: Array2<f64>,
    pub w_ff2: Array2<f64>,
    pub b_ff2: Array2<f64>,
}

/// All trainable tensors. Vectors are stored as single-row matrices so every
/// tensor has the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub blocks: Vec<Block>,
    pub lnf_g: Array2<f64>,
    pub lnf_b: Array2<f64>,
    pub head_w: Array2<f64>,
    pub head_b: Array2<f64>,
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

impl ParamStore {
    /// Random initialization: uniform weights scaled by fan-in, unit
    /// layer-norm gains, zero biases. Residual output projections are
    /// shrunk by the depth.
    pub fn init(config: ModelConfig, vocab_size: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if vocab_size < 4 {
            return Err(NeuralError::InvalidArgument(format!("vocabulary size {vocab_size} below 4")));
        }
        let (d, f) = (config.width, config.ff_width());
        let fan = |n: usize| (3.0 / n as f64).sqrt();
        let depth = (2.0 * config.layers as f64).sqrt();
        let tok_emb = uniform(rng, vocab_size, d, 0.1);
        let pos_emb = uniform(rng, config.max_len, d, 0.1);
        let blocks = (0..config.layers)
            .map(|_| Block {
                ln1_g: Array2::ones((1, d)),
                ln1_b: Array2::zeros((1, d)),
                w_qkv: uniform(rng, d, 3 * d, fan(d)),
                b_qkv: Array2::zeros((1, 3 * d)),
                w_o: uniform(rng, d, d, fan(d) / depth),
                b_o: Array2::zeros((1, d)),
                ln2_g: Array2::ones((1, d)),
                ln2_b: Array2::zeros((1, d)),
                w_ff1: uniform(rng, d, f, fan(d)),
                b_ff1: Array2::zeros((1, f)),
                w_ff2: uniform(rng, f, d, fan(f) / depth),
                b_ff2: Array2::zeros((1, d)),
            })
            .collect();
        Ok(ParamStore {
            config,
            vocab_size,
            tok_emb,
            pos_emb,
            blocks,
            lnf_g: Array2::ones((1, d)),
            lnf_b: Array2::zeros((1, d)),
            head_w: uniform(rng, d, vocab_size, fan(d)),
            head_b: Array2::zeros((1, vocab_size)),
        })
    }

    /// Same shapes, all entries zero. Used for gradients and optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Tensor names, in the order of [`tensors`](Self::tensors).
    pub fn names(&self) -> Vec<String> {
        Self::expected_shapes(&self.config, self.vocab_size).into_iter().map(|(n, _)| n).collect()
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut v = vec![&self.tok_emb, &self.pos_emb];
        for b in &self.blocks {
            v.extend([
                &b.ln1_g, &b.ln1_b, &b.w_qkv, &b.b_qkv, &b.w_o, &b.b_o, &b.ln2_g, &b.ln2_b, &b.w_ff1, &b.b_ff1,
                &b.w_ff2, &b.b_ff2,
            ]);
        }
        v.extend([&self.lnf_g, &self.lnf_b, &self.head_w, &self.head_b]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = vec![&mut self.tok_emb, &mut self.pos_emb];
        for b in &mut self.blocks {
            v.extend([
                &mut b.ln1_g,
                &mut b.ln1_b,
                &mut b.w_qkv,
                &mut b.b_qkv,
                &mut b.w_o,
                &mut b.b_o,
                &mut b.ln2_g,
                &mut b.ln2_b,
                &mut b.w_ff1,
                &mut b.b_ff1,
                &mut b.w_ff2,
                &mut b.b_ff2,
            ]);
        }
        v.extend([&mut self.lnf_g, &mut self.lnf_b, &mut self.head_w, &mut self.head_b]);
        v
    }

    /// Visit matching tensors of `self` and `other`, which must share shapes.
    pub fn zip_mut(&mut self, other: &ParamStore, mut f: impl FnMut(&mut Array2<f64>, &Array2<f64>)) {
        for (mine, theirs) in self.tensors_mut().into_iter().zip(other.tensors()) {
            f(mine, theirs);
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Shapes expected for this config and vocabulary.
    pub fn expected_shapes(config: &ModelConfig, vocab_size: usize) -> Vec<(String, (usize, usize))> {
        let (d, f) = (config.width, config.ff_width());
        let mut out = vec![("tok_emb".to_string(), (vocab_size, d)), ("pos_emb".to_string(), (config.max_len, d))];
        for i in 0..config.layers {
            for (n, s) in [
                ("ln1_g", (1, d)),
                ("ln1_b", (1, d)),
                ("w_qkv", (d, 3 * d)),
                ("b_qkv", (1, 3 * d)),
                ("w_o", (d, d)),
                ("b_o", (1, d)),
                ("ln2_g", (1, d)),
                ("ln2_b", (1, d)),
                ("w_ff1", (d, f)),
                ("b_ff1", (1, f)),
                ("w_ff2", (f, d)),
                ("b_ff2", (1, d)),
            ] {
                out.push((format!("blocks.{i}.{n}"), s));
            }
        }
        out.extend([
            ("lnf_g".to_string(), (1, d)),
            ("lnf_b".to_string(), (1, d)),
            ("head_w".to_string(), (d, vocab_size)),
            ("head_b".to_string(), (1, vocab_size)),
        ]);
        out
    }
}
