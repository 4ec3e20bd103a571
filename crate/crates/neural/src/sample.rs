//! Ancestral sampling with cached keys and values.

use ndarray::{s, Array2};
use rand::distributions::{Distribution, WeightedIndex};
use rand::RngCore;

use crate::error::{NeuralError, Result};
use crate::model::{gelu, mask_unemittable, softmax_in_place, LN_EPS};
use crate::params::ParamStore;
use crate::vocab::{START, STOP};

/// Per-layer keys and values of the tokens seen so far.
struct KvCache {
    keys: Vec<Array2<f64>>,
    values: Vec<Array2<f64>>,
    len: usize,
}

fn layer_norm_row(x: &[f64], g: &Array2<f64>, b: &Array2<f64>) -> Vec<f64> {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    x.iter().enumerate().map(|(i, v)| (v - mean) * rstd * g[[0, i]] + b[[0, i]]).collect()
}

fn dense(x: &[f64], w: &Array2<f64>, b: &Array2<f64>) -> Vec<f64> {
    let row = ndarray::ArrayView1::from(x);
    (row.dot(w) + &b.row(0)).to_vec()
}

impl KvCache {
    fn new(params: &ParamStore) -> Self {
        let (l, d) = (params.config.max_len, params.config.width);
        KvCache {
            keys: vec![Array2::zeros((l, d)); params.config.layers],
            values: vec![Array2::zeros((l, d)); params.config.layers],
            len: 0,
        }
    }

    /// Feed one token and return the next-token logits.
    fn step(&mut self, params: &ParamStore, token: u32) -> Vec<f64> {
        let cfg = &params.config;
        let (d, dh, pos) = (cfg.width, cfg.head_dim(), self.len);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut x: Vec<f64> =
            params.tok_emb.row(token as usize).iter().zip(params.pos_emb.row(pos)).map(|(a, b)| a + b).collect();
        for (l, blk) in params.blocks.iter().enumerate() {
            let h = layer_norm_row(&x, &blk.ln1_g, &blk.ln1_b);
            let qkv = dense(&h, &blk.w_qkv, &blk.b_qkv);
            self.keys[l].row_mut(pos).assign(&ndarray::ArrayView1::from(&qkv[d..2 * d]));
            self.values[l].row_mut(pos).assign(&ndarray::ArrayView1::from(&qkv[2 * d..]));
            let mut o = vec![0.0; d];
            for head in 0..cfg.heads {
                let c = head * dh..(head + 1) * dh;
                let q = ndarray::ArrayView1::from(&qkv[c.clone()]);
                let k = self.keys[l].slice(s![..=pos, c.clone()]);
                let v = self.values[l].slice(s![..=pos, c.clone()]);
                let mut scores = (k.dot(&q) * scale).to_vec();
                softmax_in_place(&mut scores);
                let out = ndarray::ArrayView1::from(&scores).dot(&v);
                o[c].copy_from_slice(out.as_slice().expect("contiguous"));
            }
            let attn = dense(&o, &blk.w_o, &blk.b_o);
            x.iter_mut().zip(&attn).for_each(|(a, b)| *a += b);
            let h2 = layer_norm_row(&x, &blk.ln2_g, &blk.ln2_b);
            let u: Vec<f64> = dense(&h2, &blk.w_ff1, &blk.b_ff1).into_iter().map(gelu).collect();
            let ff = dense(&u, &blk.w_ff2, &blk.b_ff2);
            x.iter_mut().zip(&ff).for_each(|(a, b)| *a += b);
        }
        self.len += 1;
        let xf = layer_norm_row(&x, &params.lnf_g, &params.lnf_b);
        dense(&xf, &params.head_w, &params.head_b)
    }
}

/// Next-token logits after each prefix of `ids`, computed incrementally.
pub fn incremental_logits(params: &ParamStore, ids: &[u32]) -> Vec<Vec<f64>> {
    let mut cache = KvCache::new(params);
    ids.iter().map(|&t| cache.step(params, t)).collect()
}

/// Sample tokens after `context` until the stop token. The stop token is
/// forced once the sequence would otherwise leave no room for it within
/// `max_len`. Returns the sampled tokens without the stop token.
///
/// `temperature` must be positive; zero selects the most likely token.
pub fn sample_sequence(params: &ParamStore, context: &[u32], rng: &mut dyn RngCore, temperature: f64) -> Result<Vec<u32>> {
    if context.first() != Some(&START) {
        return Err(NeuralError::InvalidArgument("sampling context must begin with the start token".into()));
    }
    if !(temperature >= 0.0 && temperature.is_finite()) {
        return Err(NeuralError::InvalidArgument(format!("temperature must be non-negative, got {temperature}")));
    }
    let max_len = params.config.max_len;
    if context.len() >= max_len {
        return Err(NeuralError::InvalidArgument(format!("context of {} tokens fills max_len", context.len())));
    }
    if let Some(&bad) = context.iter().find(|&&i| i as usize >= params.vocab_size) {
        return Err(NeuralError::InvalidArgument(format!("token id {bad} outside vocabulary")));
    }
    let mut cache = KvCache::new(params);
    let mut logits = Vec::new();
    for &t in context {
        logits = cache.step(params, t);
    }
    mask_unemittable(&mut logits);
    let mut out = Vec::new();
    while context.len() + out.len() + 1 < max_len {
        let next = if temperature == 0.0 {
            argmax(&logits)
        } else {
            let mut p: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
            softmax_in_place(&mut p);
            match WeightedIndex::new(&p) {
                Ok(dist) => dist.sample(rng) as u32,
                Err(_) => argmax(&logits),
            }
        };
        if next == STOP {
            return Ok(out);
        }
        out.push(next);
        logits = cache.step(params, next);
        mask_unemittable(&mut logits);
    }
    Ok(out)
}

fn argmax(v: &[f64]) -> u32 {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best as u32
}
