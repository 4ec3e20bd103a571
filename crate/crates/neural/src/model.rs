//! Forward and backward passes of the pre-norm causal decoder.
//!
//! Each block computes `x + Attn(LN(x))` followed by `x + FF(LN(x))`, where
//! FF is two dense layers around a tanh-approximated GELU. A final layer
//! norm and a dense head produce next-token logits. The backward pass takes
//! arbitrary upstream gradients on the logits, so any loss that is a
//! function of per-position log-probabilities can reuse it.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::error::{NeuralError, Result};
use crate::params::ParamStore;
use crate::vocab::{PAD, START};

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Token ids plus the index of the first token whose probability is scored.
/// Positions `completion_start..` are predicted from everything before them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub ids: Vec<u32>,
    pub completion_start: usize,
}

impl Sequence {
    pub fn new(ids: Vec<u32>, completion_start: usize) -> Result<Self> {
        if completion_start == 0 || completion_start >= ids.len() {
            return Err(NeuralError::InvalidArgument(format!(
                "completion start {completion_start} must lie in 1..{}",
                ids.len()
            )));
        }
        if let Some(&bad) = ids[completion_start..].iter().find(|&&i| i == START || i == PAD) {
            return Err(NeuralError::InvalidArgument(format!("scored token {bad} is never emitted")));
        }
        Ok(Sequence { ids, completion_start })
    }

    /// Number of scored tokens.
    pub fn completion_len(&self) -> usize {
        self.ids.len() - self.completion_start
    }
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let rstd = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centered * &rstd.view().insert_axis(Axis(1));
    let y = &xhat * g + b;
    (y, LnCache { xhat, rstd })
}

/// Returns dx and accumulates the gain and bias gradients.
fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: &Array2<f64>,
    dg: &mut Array2<f64>,
    db: &mut Array2<f64>,
) -> Array2<f64> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * g;
    let d = dy.ncols() as f64;
    let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
    let mean_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / d;
    let mut dx = dxhat - &mean_dxhat.insert_axis(Axis(1));
    dx -= &(&cache.xhat * &mean_dxhat_xhat.insert_axis(Axis(1)));
    dx * &cache.rstd.view().insert_axis(Axis(1))
}

pub(crate) fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + 0.044715 * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// Start and padding ids are never emitted: their logits are masked so the
/// next-token distribution covers stop plus the content tokens.
pub(crate) fn mask_unemittable(row: &mut [f64]) {
    row[START as usize] = f64::NEG_INFINITY;
    row[PAD as usize] = f64::NEG_INFINITY;
}

/// Log-probabilities of the next token, with unemittable ids at `-inf`.
pub(crate) fn next_token_log_softmax(row: &[f64]) -> Vec<f64> {
    let mut r = row.to_vec();
    mask_unemittable(&mut r);
    log_softmax(&r)
}

pub(crate) fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

struct BlockCache {
    ln1: LnCache,
    h1: Array2<f64>,
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln2: LnCache,
    h2: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache {
    ids: Vec<u32>,
    blocks: Vec<BlockCache>,
    lnf: LnCache,
    xf: Array2<f64>,
    pub logits: Array2<f64>,
}

fn check_ids(params: &ParamStore, ids: &[u32]) -> Result<()> {
    if ids.is_empty() {
        return Err(NeuralError::InvalidArgument("empty sequence".into()));
    }
    if ids.len() > params.config.max_len {
        return Err(NeuralError::InvalidArgument(format!(
            "sequence length {} exceeds max_len {}",
            ids.len(),
            params.config.max_len
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i as usize >= params.vocab_size) {
        return Err(NeuralError::InvalidArgument(format!("token id {bad} outside vocabulary of {}", params.vocab_size)));
    }
    Ok(())
}

/// Causal attention for one head: probabilities and output.
fn attend(q: ArrayView2<f64>, k: ArrayView2<f64>, v: ArrayView2<f64>, scale: f64) -> (Array2<f64>, Array2<f64>) {
    let t = q.nrows();
    let mut a = q.dot(&k.t()) * scale;
    for i in 0..t {
        let mut row = a.row_mut(i);
        let slice = row.as_slice_mut().expect("contiguous");
        softmax_in_place(&mut slice[..=i]);
        slice[i + 1..].fill(0.0);
    }
    let o = a.dot(&v);
    (a, o)
}

/// Full forward pass over `ids`, keeping activations.
pub fn forward(params: &ParamStore, ids: &[u32]) -> Result<ForwardCache> {
    check_ids(params, ids)?;
    let cfg = &params.config;
    let (t, d, dh) = (ids.len(), cfg.width, cfg.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();
    let mut x = Array2::zeros((t, d));
    for (i, &id) in ids.iter().enumerate() {
        let mut row = x.row_mut(i);
        row += &params.tok_emb.row(id as usize);
        row += &params.pos_emb.row(i);
    }
    let mut blocks = Vec::with_capacity(cfg.layers);
    for blk in &params.blocks {
        let (h1, ln1) = layer_norm(&x, &blk.ln1_g, &blk.ln1_b);
        let qkv = h1.dot(&blk.w_qkv) + &blk.b_qkv;
        let mut o = Array2::zeros((t, d));
        let mut probs = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let cols = h * dh..(h + 1) * dh;
            let q = qkv.slice(s![.., cols.clone()]);
            let k = qkv.slice(s![.., d + cols.start..d + cols.end]);
            let v = qkv.slice(s![.., 2 * d + cols.start..2 * d + cols.end]);
            let (a, oh) = attend(q, k, v, scale);
            o.slice_mut(s![.., cols]).assign(&oh);
            probs.push(a);
        }
        x = x + o.dot(&blk.w_o) + &blk.b_o;
        let (h2, ln2) = layer_norm(&x, &blk.ln2_g, &blk.ln2_b);
        let u = h2.dot(&blk.w_ff1) + &blk.b_ff1;
        let g = u.mapv(gelu);
        x = x + g.dot(&blk.w_ff2) + &blk.b_ff2;
        blocks.push(BlockCache { ln1, h1, qkv, probs, o, ln2, h2, u, g });
    }
    let (xf, lnf) = layer_norm(&x, &params.lnf_g, &params.lnf_b);
    let logits = xf.dot(&params.head_w) + &params.head_b;
    Ok(ForwardCache { ids: ids.to_vec(), blocks, lnf, xf, logits })
}

/// Accumulate into `grads` the parameter gradient of `sum(dlogits * logits)`.
pub fn backward(params: &ParamStore, cache: &ForwardCache, dlogits: &Array2<f64>, grads: &mut ParamStore) {
    let cfg = &params.config;
    let (d, dh) = (cfg.width, cfg.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();

    grads.head_w += &cache.xf.t().dot(dlogits);
    grads.head_b += &dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxf = dlogits.dot(&params.head_w.t());
    let mut dx = layer_norm_backward(&dxf, &cache.lnf, &params.lnf_g, &mut grads.lnf_g, &mut grads.lnf_b);

    for (l, (blk, bc)) in params.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        let gb = &mut grads.blocks[l];
        // feed-forward sublayer
        gb.w_ff2 += &bc.g.t().dot(&dx);
        gb.b_ff2 += &dx.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut du = dx.dot(&blk.w_ff2.t());
        du.zip_mut_with(&bc.u, |a, &u| *a *= gelu_grad(u));
        gb.w_ff1 += &bc.h2.t().dot(&du);
        gb.b_ff1 += &du.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dh2 = du.dot(&blk.w_ff1.t());
        dx += &layer_norm_backward(&dh2, &bc.ln2, &blk.ln2_g, &mut gb.ln2_g, &mut gb.ln2_b);

        // attention sublayer
        gb.w_o += &bc.o.t().dot(&dx);
        gb.b_o += &dx.sum_axis(Axis(0)).insert_axis(Axis(0));
        let d_o = dx.dot(&blk.w_o.t());
        let mut dqkv = Array2::zeros(bc.qkv.raw_dim());
        for h in 0..cfg.heads {
            let (c0, c1) = (h * dh, (h + 1) * dh);
            let q = bc.qkv.slice(s![.., c0..c1]);
            let k = bc.qkv.slice(s![.., d + c0..d + c1]);
            let v = bc.qkv.slice(s![.., 2 * d + c0..2 * d + c1]);
            let a = &bc.probs[h];
            let doh = d_o.slice(s![.., c0..c1]);
            let da = doh.dot(&v.t());
            let dv = a.t().dot(&doh);
            let row_dot = (&da * a).sum_axis(Axis(1));
            let ds = (da - &row_dot.insert_axis(Axis(1))) * a * scale;
            dqkv.slice_mut(s![.., c0..c1]).assign(&ds.dot(&k));
            dqkv.slice_mut(s![.., d + c0..d + c1]).assign(&ds.t().dot(&q));
            dqkv.slice_mut(s![.., 2 * d + c0..2 * d + c1]).assign(&dv);
        }
        gb.w_qkv += &bc.h1.t().dot(&dqkv);
        gb.b_qkv += &dqkv.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dh1 = dqkv.dot(&blk.w_qkv.t());
        dx += &layer_norm_backward(&dh1, &bc.ln1, &blk.ln1_g, &mut gb.ln1_g, &mut gb.ln1_b);
    }

    for (i, &id) in cache.ids.iter().enumerate() {
        let row = dx.row(i);
        let mut te = grads.tok_emb.row_mut(id as usize);
        te += &row;
        let mut pe = grads.pos_emb.row_mut(i);
        pe += &row;
    }
}

/// Log-probabilities of the scored tokens of `seq`.
pub fn token_logprobs(params: &ParamStore, seq: &Sequence) -> Result<Vec<f64>> {
    let cache = forward(params, &seq.ids)?;
    Ok(scored_logprobs(&cache, seq).0)
}

fn scored_logprobs(cache: &ForwardCache, seq: &Sequence) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut lps = Vec::with_capacity(seq.completion_len());
    let mut dists = Vec::with_capacity(seq.completion_len());
    for t in seq.completion_start - 1..seq.ids.len() - 1 {
        let row = cache.logits.row(t);
        let ls = next_token_log_softmax(row.as_slice().expect("contiguous"));
        lps.push(ls[seq.ids[t + 1] as usize]);
        dists.push(ls);
    }
    (lps, dists)
}

/// `log pi(completion | prefix)`: sum of scored token log-probabilities.
pub fn sequence_logprob(params: &ParamStore, seq: &Sequence) -> Result<f64> {
    Ok(token_logprobs(params, seq)?.iter().sum())
}

/// A forward pass over one sequence, kept so the gradient of its
/// log-probability can be taken once the loss coefficient is known.
pub struct LogprobPass {
    cache: ForwardCache,
    seq: Sequence,
    dists: Vec<Vec<f64>>,
    pub logprob: f64,
}

impl LogprobPass {
    pub fn new(params: &ParamStore, seq: &Sequence) -> Result<Self> {
        let cache = forward(params, &seq.ids)?;
        let (lps, dists) = scored_logprobs(&cache, seq);
        Ok(LogprobPass { cache, seq: seq.clone(), dists, logprob: lps.iter().sum() })
    }

    /// Add `coef * d logprob / d params` to `grads`.
    pub fn backward(&self, params: &ParamStore, coef: f64, grads: &mut ParamStore) {
        if coef == 0.0 {
            return;
        }
        let seq = &self.seq;
        let mut dlogits = Array2::zeros(self.cache.logits.raw_dim());
        for (k, t) in (seq.completion_start - 1..seq.ids.len() - 1).enumerate() {
            let mut row = dlogits.row_mut(t);
            for (j, ls) in self.dists[k].iter().enumerate() {
                row[j] = -coef * ls.exp();
            }
            row[seq.ids[t + 1] as usize] += coef;
        }
        backward(params, &self.cache, &dlogits, grads);
    }
}

/// Returns the sequence log-probability and adds `coef` times its gradient
/// to `grads`.
pub fn logprob_with_grad(params: &ParamStore, seq: &Sequence, coef: f64, grads: &mut ParamStore) -> Result<f64> {
    let pass = LogprobPass::new(params, seq)?;
    pass.backward(params, coef, grads);
    Ok(pass.logprob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ParamStore {
        let cfg = ModelConfig { layers: 1, heads: 2, width: 8, max_len: 12, ff_mult: 2 };
        ParamStore::init(cfg, 6, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn distributions_normalize() {
        let p = tiny();
        let cache = forward(&p, &[0, 3, 4, 5, 3]).unwrap();
        for row in cache.logits.rows() {
            let total: f64 = next_token_log_softmax(row.as_slice().unwrap()).iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_head_gives_minus_l_log_v() {
        let mut p = tiny();
        p.head_w.fill(0.0);
        let seq = Sequence::new(vec![0, 3, 4, 5, 1], 1).unwrap();
        let lp = sequence_logprob(&p, &seq).unwrap();
        // six ids, two of them masked
        assert!((lp + 4.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let p = tiny();
        assert!(forward(&p, &[0, 9]).is_err());
        assert!(forward(&p, &[]).is_err());
        assert!(forward(&p, &[0; 13]).is_err());
        assert!(Sequence::new(vec![0, 1], 0).is_err());
        assert!(Sequence::new(vec![0, 1], 2).is_err());
        assert!(Sequence::new(vec![0, 3, 2, 1], 1).is_err());
    }
}
