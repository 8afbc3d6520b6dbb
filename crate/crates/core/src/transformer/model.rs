//! Pre-norm decoder forward and backward passes, plus an incremental decoder.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{gemm, matmul, ModelParameters, Real, View};
use crate::error::{Error, Result};
use crate::loss::{token_loss_and_grad, OrdinalWeightConfig};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` through a single `exp`; libm's `tanhf` dominates the activation cost otherwise.
fn tanh<R: Real>(x: R) -> R {
    let lim = R::lit(20.0);
    if x > lim {
        return R::one();
    }
    if x < -lim {
        return -R::one();
    }
    let e = (x + x).exp();
    (e - R::one()) / (e + R::one())
}

fn gelu<R: Real>(x: R) -> R {
    let (c, a, half) = (R::lit(GELU_C), R::lit(GELU_A), R::lit(0.5));
    half * x * (R::one() + tanh(c * (x + a * x * x * x)))
}

fn gelu_grad<R: Real>(x: R) -> R {
    let (c, a, half) = (R::lit(GELU_C), R::lit(GELU_A), R::lit(0.5));
    let th = tanh(c * (x + a * x * x * x));
    half * (R::one() + th) + half * x * (R::one() - th * th) * c * (R::one() + R::lit(3.0) * a * x * x)
}

fn layer_norm<R: Real>(x: &[R], g: &[R], b: &[R], d: usize, out: &mut [R], mean: &mut [R], rstd: &mut [R]) {
    let inv_d = R::lit(1.0 / d as f64);
    for (r, (xr, or)) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)).enumerate() {
        let mu = xr.iter().copied().sum::<R>() * inv_d;
        let var = xr.iter().map(|&v| (v - mu) * (v - mu)).sum::<R>() * inv_d;
        let rs = R::one() / (var + R::lit(LN_EPS)).sqrt();
        for k in 0..d {
            or[k] = (xr[k] - mu) * rs * g[k] + b[k];
        }
        mean[r] = mu;
        rstd[r] = rs;
    }
}

/// Adds the input gradient into `dx` and accumulates gain and bias gradients.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward<R: Real>(
    dy: &[R],
    x: &[R],
    g: &[R],
    mean: &[R],
    rstd: &[R],
    d: usize,
    dx: &mut [R],
    dg: &mut [R],
    db: &mut [R],
) {
    let inv_d = R::lit(1.0 / d as f64);
    let mut dxhat = vec![R::zero(); d];
    for r in 0..mean.len() {
        let (xr, dyr) = (&x[r * d..(r + 1) * d], &dy[r * d..(r + 1) * d]);
        let (mu, rs) = (mean[r], rstd[r]);
        let (mut s1, mut s2) = (R::zero(), R::zero());
        for k in 0..d {
            let xh = (xr[k] - mu) * rs;
            dg[k] = dg[k] + dyr[k] * xh;
            db[k] = db[k] + dyr[k];
            dxhat[k] = dyr[k] * g[k];
            s1 = s1 + dxhat[k];
            s2 = s2 + dxhat[k] * xh;
        }
        let (m1, m2) = (s1 * inv_d, s2 * inv_d);
        let dxr = &mut dx[r * d..(r + 1) * d];
        for k in 0..d {
            let xh = (xr[k] - mu) * rs;
            dxr[k] = dxr[k] + rs * (dxhat[k] - m1 - xh * m2);
        }
    }
}

fn add_bias<R: Real>(x: &mut [R], b: &[R]) {
    for row in x.chunks_exact_mut(b.len()) {
        for (v, &bb) in row.iter_mut().zip(b) {
            *v = *v + bb;
        }
    }
}

fn col_sum_into<R: Real>(x: &[R], width: usize, out: &mut [R]) {
    for row in x.chunks_exact(width) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
}

/// Dropout applied during training, seeded per chunk.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dropout {
    pub rate: f64,
    pub seed: u64,
}

fn dropout_mask<R: Real>(n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<R> {
    let keep = R::lit(1.0 / (1.0 - rate));
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { R::zero() } else { keep })
        .collect()
}

struct LayerActs<R> {
    x_in: Vec<R>,
    ln1: Vec<R>,
    ln1_mean: Vec<R>,
    ln1_rstd: Vec<R>,
    qkv: Vec<R>,
    probs: Vec<R>,
    att_mask: Option<Vec<R>>,
    att: Vec<R>,
    x_mid: Vec<R>,
    ln2: Vec<R>,
    ln2_mean: Vec<R>,
    ln2_rstd: Vec<R>,
    fc: Vec<R>,
    act: Vec<R>,
    ff_mask: Option<Vec<R>>,
}

/// Everything the backward pass needs from one forward pass.
pub(crate) struct Activations<R> {
    n_seq: usize,
    t: usize,
    tokens: Vec<u32>,
    layers: Vec<LayerActs<R>>,
    x_final: Vec<R>,
    lnf: Vec<R>,
    lnf_mean: Vec<R>,
    lnf_rstd: Vec<R>,
    pub logits: Vec<R>,
}

fn check_tokens<R: Real>(p: &ModelParameters<R>, tokens: &[u32], n_seq: usize, t: usize) -> Result<()> {
    let c = &p.config;
    if t == 0 || t > c.max_len {
        return Err(Error::invalid(format!("sequence length {t} outside 1..={}", c.max_len)));
    }
    if tokens.len() != n_seq * t {
        return Err(Error::invalid(format!(
            "expected {} token ids for {n_seq} sequences of length {t}, got {}",
            n_seq * t,
            tokens.len()
        )));
    }
    if let Some((i, &tok)) = tokens.iter().enumerate().find(|(_, &tok)| tok as usize >= c.vocab) {
        return Err(Error::IdOutOfRange {
            position: i % t,
            id: tok,
            lo: 0,
            hi: c.vocab as u32,
        });
    }
    Ok(())
}

struct HeadViews {
    q: View,
    k: View,
    v: View,
    o: View,
}

fn head_views(s: usize, h: usize, t: usize, d: usize, hd: usize) -> HeadViews {
    let base = View {
        off: 0,
        rows: t,
        cols: hd,
        rs: 3 * d,
        cs: 1,
    };
    let q_off = s * t * 3 * d + h * hd;
    HeadViews {
        q: base.at(q_off),
        k: base.at(q_off + d),
        v: base.at(q_off + 2 * d),
        o: View {
            off: s * t * d + h * hd,
            rows: t,
            cols: hd,
            rs: d,
            cs: 1,
        },
    }
}

/// Runs the model on `n_seq` sequences of length `t` (row-major ids).
pub(crate) fn forward<R: Real>(
    p: &ModelParameters<R>,
    tokens: &[u32],
    n_seq: usize,
    t: usize,
    dropout: Option<Dropout>,
) -> Result<Activations<R>> {
    check_tokens(p, tokens, n_seq, t)?;
    let c = &p.config;
    let (d, f, nh, hd, v) = (c.d_model, c.d_ff, c.n_heads, c.head_dim(), c.vocab);
    let n = n_seq * t;
    let w = &p.data;
    let lay = &p.layout;
    let dropout = dropout.filter(|dr| dr.rate > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(dropout.map_or(0, |dr| dr.seed));

    let mut x = vec![R::zero(); n * d];
    for (r, &tok) in tokens.iter().enumerate() {
        let pos = r % t;
        let e = &w[lay.wte + tok as usize * d..][..d];
        let pe = &w[lay.wpe + pos * d..][..d];
        for k in 0..d {
            x[r * d + k] = e[k] + pe[k];
        }
    }

    let scale = R::lit(1.0 / (hd as f64).sqrt());
    let mut layers = Vec::with_capacity(c.n_layers);
    let mut scores = vec![R::zero(); t * t];
    let mut pd = vec![R::zero(); t * t];
    for lo in &lay.layers {
        let x_in = x.clone();
        let mut ln1 = vec![R::zero(); n * d];
        let (mut ln1_mean, mut ln1_rstd) = (vec![R::zero(); n], vec![R::zero(); n]);
        layer_norm(&x, &w[lo.ln1_g..][..d], &w[lo.ln1_b..][..d], d, &mut ln1, &mut ln1_mean, &mut ln1_rstd);

        let mut qkv = vec![R::zero(); n * 3 * d];
        matmul(n, d, 3 * d, &ln1, false, &w[lo.w_qkv..][..d * 3 * d], false, &mut qkv, R::zero());
        add_bias(&mut qkv, &w[lo.b_qkv..][..3 * d]);

        let mut probs = vec![R::zero(); n_seq * nh * t * t];
        let att_mask = dropout.map(|dr| dropout_mask::<R>(n_seq * nh * t * t, dr.rate, &mut rng));
        let mut att = vec![R::zero(); n * d];
        for s in 0..n_seq {
            for h in 0..nh {
                let hv = head_views(s, h, t, d, hd);
                gemm(&qkv, hv.q, &qkv, hv.k.t(), &mut scores, View::dense(t, t), R::zero());
                let pbase = (s * nh + h) * t * t;
                let pr = &mut probs[pbase..pbase + t * t];
                for i in 0..t {
                    let row = &scores[i * t..i * t + i + 1];
                    let mx = row.iter().fold(R::neg_infinity(), |a, &b| a.max(b * scale));
                    let mut sum = R::zero();
                    for j in 0..=i {
                        let e = (row[j] * scale - mx).exp();
                        pr[i * t + j] = e;
                        sum = sum + e;
                    }
                    for j in 0..=i {
                        pr[i * t + j] = pr[i * t + j] / sum;
                    }
                }
                let src: &[R] = match &att_mask {
                    Some(m) => {
                        for (o, (&a, &b)) in pd.iter_mut().zip(pr.iter().zip(&m[pbase..pbase + t * t])) {
                            *o = a * b;
                        }
                        &pd
                    }
                    None => pr,
                };
                gemm(src, View::dense(t, t), &qkv, hv.v, &mut att, hv.o, R::zero());
            }
        }

        let mut y = vec![R::zero(); n * d];
        matmul(n, d, d, &att, false, &w[lo.w_o..][..d * d], false, &mut y, R::zero());
        add_bias(&mut y, &w[lo.b_o..][..d]);
        for (xv, yv) in x.iter_mut().zip(&y) {
            *xv = *xv + *yv;
        }
        let x_mid = x.clone();

        let mut ln2 = vec![R::zero(); n * d];
        let (mut ln2_mean, mut ln2_rstd) = (vec![R::zero(); n], vec![R::zero(); n]);
        layer_norm(&x, &w[lo.ln2_g..][..d], &w[lo.ln2_b..][..d], d, &mut ln2, &mut ln2_mean, &mut ln2_rstd);
        let mut fc = vec![R::zero(); n * f];
        matmul(n, d, f, &ln2, false, &w[lo.w_fc..][..d * f], false, &mut fc, R::zero());
        add_bias(&mut fc, &w[lo.b_fc..][..f]);
        let act: Vec<R> = fc.iter().map(|&v| gelu(v)).collect();
        let mut out = vec![R::zero(); n * d];
        matmul(n, f, d, &act, false, &w[lo.w_proj..][..f * d], false, &mut out, R::zero());
        add_bias(&mut out, &w[lo.b_proj..][..d]);
        let ff_mask = dropout.map(|dr| dropout_mask::<R>(n * d, dr.rate, &mut rng));
        match &ff_mask {
            Some(m) => {
                for ((xv, &o), &mk) in x.iter_mut().zip(&out).zip(m) {
                    *xv = *xv + o * mk;
                }
            }
            None => {
                for (xv, &o) in x.iter_mut().zip(&out) {
                    *xv = *xv + o;
                }
            }
        }

        layers.push(LayerActs {
            x_in,
            ln1,
            ln1_mean,
            ln1_rstd,
            qkv,
            probs,
            att_mask,
            att,
            x_mid,
            ln2,
            ln2_mean,
            ln2_rstd,
            fc,
            act,
            ff_mask,
        });
    }

    let mut lnf = vec![R::zero(); n * d];
    let (mut lnf_mean, mut lnf_rstd) = (vec![R::zero(); n], vec![R::zero(); n]);
    layer_norm(&x, &w[lay.lnf_g..][..d], &w[lay.lnf_b..][..d], d, &mut lnf, &mut lnf_mean, &mut lnf_rstd);
    let mut logits = vec![R::zero(); n * v];
    matmul(n, d, v, &lnf, false, &w[lay.wte..][..v * d], true, &mut logits, R::zero());

    Ok(Activations {
        n_seq,
        t,
        tokens: tokens.to_vec(),
        layers,
        x_final: x,
        lnf,
        lnf_mean,
        lnf_rstd,
        logits,
    })
}

/// Accumulates `dL/dparams` into `grad` given `dL/dlogits`.
pub(crate) fn backward<R: Real>(p: &ModelParameters<R>, acts: &Activations<R>, dlogits: &[R], grad: &mut [R]) {
    let c = &p.config;
    let (d, f, nh, hd, v) = (c.d_model, c.d_ff, c.n_heads, c.head_dim(), c.vocab);
    let (n_seq, t) = (acts.n_seq, acts.t);
    let n = n_seq * t;
    let w = &p.data;
    let lay = &p.layout;
    assert_eq!(dlogits.len(), n * v);
    assert_eq!(grad.len(), w.len());

    // logits = lnf wte^T
    let mut dlnf = vec![R::zero(); n * d];
    matmul(n, v, d, dlogits, false, &w[lay.wte..][..v * d], false, &mut dlnf, R::zero());
    matmul(v, n, d, dlogits, true, &acts.lnf, false, &mut grad[lay.wte..lay.wte + v * d], R::one());

    let mut dx = vec![R::zero(); n * d];
    {
        let (dg, db) = split_pair(grad, lay.lnf_g, lay.lnf_b, d);
        layer_norm_backward(
            &dlnf,
            &acts.x_final,
            &w[lay.lnf_g..][..d],
            &acts.lnf_mean,
            &acts.lnf_rstd,
            d,
            &mut dx,
            dg,
            db,
        );
    }

    let scale = R::lit(1.0 / (hd as f64).sqrt());
    let mut pd = vec![R::zero(); t * t];
    let mut dpd = vec![R::zero(); t * t];
    for (lo, la) in lay.layers.iter().zip(&acts.layers).rev() {
        // feed-forward branch: x = x_mid + drop(proj(gelu(fc(ln2(x_mid)))))
        let dout: Vec<R> = match &la.ff_mask {
            Some(m) => dx.iter().zip(m).map(|(&a, &b)| a * b).collect(),
            None => dx.clone(),
        };
        matmul(f, n, d, &la.act, true, &dout, false, &mut grad[lo.w_proj..lo.w_proj + f * d], R::one());
        col_sum_into(&dout, d, &mut grad[lo.b_proj..lo.b_proj + d]);
        let mut dfc = vec![R::zero(); n * f];
        matmul(n, d, f, &dout, false, &w[lo.w_proj..][..f * d], true, &mut dfc, R::zero());
        for (g, &x) in dfc.iter_mut().zip(&la.fc) {
            *g = *g * gelu_grad(x);
        }
        matmul(d, n, f, &la.ln2, true, &dfc, false, &mut grad[lo.w_fc..lo.w_fc + d * f], R::one());
        col_sum_into(&dfc, f, &mut grad[lo.b_fc..lo.b_fc + f]);
        let mut dln2 = vec![R::zero(); n * d];
        matmul(n, f, d, &dfc, false, &w[lo.w_fc..][..d * f], true, &mut dln2, R::zero());
        {
            let (dg, db) = split_pair(grad, lo.ln2_g, lo.ln2_b, d);
            layer_norm_backward(
                &dln2,
                &la.x_mid,
                &w[lo.ln2_g..][..d],
                &la.ln2_mean,
                &la.ln2_rstd,
                d,
                &mut dx,
                dg,
                db,
            );
        }

        // attention branch: x_mid = x_in + attn(ln1(x_in)) W_o + b_o
        matmul(d, n, d, &la.att, true, &dx, false, &mut grad[lo.w_o..lo.w_o + d * d], R::one());
        col_sum_into(&dx, d, &mut grad[lo.b_o..lo.b_o + d]);
        let mut datt = vec![R::zero(); n * d];
        matmul(n, d, d, &dx, false, &w[lo.w_o..][..d * d], true, &mut datt, R::zero());

        let mut dqkv = vec![R::zero(); n * 3 * d];
        for s in 0..n_seq {
            for h in 0..nh {
                let hv = head_views(s, h, t, d, hd);
                let pbase = (s * nh + h) * t * t;
                let pr = &la.probs[pbase..pbase + t * t];
                let mask = la.att_mask.as_ref().map(|m| &m[pbase..pbase + t * t]);
                let src: &[R] = match mask {
                    Some(m) => {
                        for (o, (&a, &b)) in pd.iter_mut().zip(pr.iter().zip(m)) {
                            *o = a * b;
                        }
                        &pd
                    }
                    None => pr,
                };
                // dV = Pd^T dO ; dPd = dO V^T
                gemm(src, View::dense(t, t).t(), &datt, hv.o, &mut dqkv, hv.v, R::zero());
                gemm(&datt, hv.o, &la.qkv, hv.v.t(), &mut dpd, View::dense(t, t), R::zero());
                for i in 0..t {
                    let row = i * t..i * t + i + 1;
                    if let Some(m) = mask {
                        for j in row.clone() {
                            dpd[j] = dpd[j] * m[j];
                        }
                    }
                    let dot = row.clone().map(|j| dpd[j] * pr[j]).sum::<R>();
                    for j in row {
                        dpd[j] = pr[j] * (dpd[j] - dot) * scale;
                    }
                    dpd[i * t + i + 1..(i + 1) * t].fill(R::zero());
                }
                // dQ = dS K ; dK = dS^T Q
                gemm(&dpd, View::dense(t, t), &la.qkv, hv.k, &mut dqkv, hv.q, R::zero());
                gemm(&dpd, View::dense(t, t).t(), &la.qkv, hv.q, &mut dqkv, hv.k, R::zero());
            }
        }
        matmul(d, n, 3 * d, &la.ln1, true, &dqkv, false, &mut grad[lo.w_qkv..lo.w_qkv + d * 3 * d], R::one());
        col_sum_into(&dqkv, 3 * d, &mut grad[lo.b_qkv..lo.b_qkv + 3 * d]);
        let mut dln1 = vec![R::zero(); n * d];
        matmul(n, 3 * d, d, &dqkv, false, &w[lo.w_qkv..][..d * 3 * d], true, &mut dln1, R::zero());
        let (dg, db) = split_pair(grad, lo.ln1_g, lo.ln1_b, d);
        layer_norm_backward(
            &dln1,
            &la.x_in,
            &w[lo.ln1_g..][..d],
            &la.ln1_mean,
            &la.ln1_rstd,
            d,
            &mut dx,
            dg,
            db,
        );
    }

    for (r, &tok) in acts.tokens.iter().enumerate() {
        let pos = r % t;
        let dxr = &dx[r * d..(r + 1) * d];
        let e = lay.wte + tok as usize * d;
        for k in 0..d {
            grad[e + k] = grad[e + k] + dxr[k];
        }
        let pe = lay.wpe + pos * d;
        for k in 0..d {
            grad[pe + k] = grad[pe + k] + dxr[k];
        }
    }
}

/// Disjoint mutable views of two adjacent `d`-length tensors (`a < b`).
fn split_pair<R>(grad: &mut [R], a: usize, b: usize, d: usize) -> (&mut [R], &mut [R]) {
    debug_assert!(a + d <= b);
    let (lo, hi) = grad.split_at_mut(b);
    (&mut lo[a..a + d], &mut hi[..d])
}

/// Logits `n_seq x t x V` without dropout.
pub fn forward_logits<R: Real>(p: &ModelParameters<R>, tokens: &[u32], n_seq: usize, t: usize) -> Result<Vec<R>> {
    Ok(forward(p, tokens, n_seq, t, None)?.logits)
}

/// Scoring context for every position of a sequence.
pub(crate) struct LossSpec<'a> {
    /// Quantile group (vocabulary ids) of each position's target, if any.
    pub groups: &'a [Option<Range<usize>>],
    pub cfg: &'a OrdinalWeightConfig,
}

/// Summed next-token loss over all target positions `1..t` and, if `grad`
/// is given, `scale * dL/dparams` accumulated into it.
#[allow(clippy::too_many_arguments)]
pub(crate) fn loss_and_grad<R: Real>(
    p: &ModelParameters<R>,
    inputs: &[u32],
    targets: &[u32],
    n_seq: usize,
    t: usize,
    spec: &LossSpec<'_>,
    dropout: Option<Dropout>,
    scale: f64,
    grad: Option<&mut [R]>,
) -> Result<f64> {
    let acts = forward(p, inputs, n_seq, t, dropout)?;
    let v = p.config.vocab;
    let mut dlogits = vec![R::zero(); n_seq * t * v];
    let mut scratch = Vec::with_capacity(v);
    let mut total = 0.0;
    for s in 0..n_seq {
        for i in 0..t - 1 {
            let r = s * t + i;
            let target = targets[r + 1] as usize;
            total += token_loss_and_grad(
                &acts.logits[r * v..(r + 1) * v],
                target,
                spec.groups[i + 1].as_ref(),
                spec.cfg,
                scale,
                &mut dlogits[r * v..(r + 1) * v],
                &mut scratch,
            );
        }
    }
    if let Some(grad) = grad {
        backward(p, &acts, &dlogits, grad);
    }
    Ok(total)
}

/// Incremental decoder with a key/value cache; all sequences advance in lockstep.
pub struct KvDecoder<'p, R: Real> {
    p: &'p ModelParameters<R>,
    n_seq: usize,
    pos: usize,
    k_cache: Vec<Vec<R>>,
    v_cache: Vec<Vec<R>>,
}

impl<'p, R: Real> KvDecoder<'p, R> {
    pub fn new(p: &'p ModelParameters<R>, n_seq: usize) -> Self {
        let c = &p.config;
        let size = n_seq * c.max_len * c.d_model;
        Self {
            p,
            n_seq,
            pos: 0,
            k_cache: vec![vec![R::zero(); size]; c.n_layers],
            v_cache: vec![vec![R::zero(); size]; c.n_layers],
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    /// Feeds one token per sequence at the current position and returns the
    /// `n_seq x V` logits for the next position.
    pub fn step(&mut self, tokens: &[u32]) -> Result<Vec<R>> {
        let p = self.p;
        let c = &p.config;
        let (d, f, nh, hd, v, lmax) = (c.d_model, c.d_ff, c.n_heads, c.head_dim(), c.vocab, c.max_len);
        let n = self.n_seq;
        if tokens.len() != n {
            return Err(Error::invalid(format!("expected {n} tokens, got {}", tokens.len())));
        }
        if self.pos >= lmax {
            return Err(Error::invalid(format!("decoder is past the maximum length {lmax}")));
        }
        if let Some(&tok) = tokens.iter().find(|&&tok| tok as usize >= v) {
            return Err(Error::IdOutOfRange {
                position: self.pos,
                id: tok,
                lo: 0,
                hi: v as u32,
            });
        }
        let (w, lay, pos) = (&p.data, &p.layout, self.pos);
        let mut x = vec![R::zero(); n * d];
        for (s, &tok) in tokens.iter().enumerate() {
            let e = &w[lay.wte + tok as usize * d..][..d];
            let pe = &w[lay.wpe + pos * d..][..d];
            for k in 0..d {
                x[s * d + k] = e[k] + pe[k];
            }
        }
        let scale = R::lit(1.0 / (hd as f64).sqrt());
        let (mut mean, mut rstd) = (vec![R::zero(); n], vec![R::zero(); n]);
        let mut h = vec![R::zero(); n * d];
        let mut qkv = vec![R::zero(); n * 3 * d];
        let mut att = vec![R::zero(); n * d];
        let mut y = vec![R::zero(); n * d];
        let mut fc = vec![R::zero(); n * f];
        let mut probs = vec![R::zero(); pos + 1];
        for (li, lo) in lay.layers.iter().enumerate() {
            layer_norm(&x, &w[lo.ln1_g..][..d], &w[lo.ln1_b..][..d], d, &mut h, &mut mean, &mut rstd);
            matmul(n, d, 3 * d, &h, false, &w[lo.w_qkv..][..d * 3 * d], false, &mut qkv, R::zero());
            add_bias(&mut qkv, &w[lo.b_qkv..][..3 * d]);
            let (kc, vc) = (&mut self.k_cache[li], &mut self.v_cache[li]);
            for s in 0..n {
                let row = &qkv[s * 3 * d..(s + 1) * 3 * d];
                let slot = (s * lmax + pos) * d;
                kc[slot..slot + d].copy_from_slice(&row[d..2 * d]);
                vc[slot..slot + d].copy_from_slice(&row[2 * d..]);
                for hh in 0..nh {
                    let q = &row[hh * hd..(hh + 1) * hd];
                    let mut mx = R::neg_infinity();
                    for (j, pj) in probs.iter_mut().enumerate() {
                        let k = &kc[(s * lmax + j) * d + hh * hd..][..hd];
                        let dot = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<R>() * scale;
                        *pj = dot;
                        mx = mx.max(dot);
                    }
                    let mut sum = R::zero();
                    for pj in probs.iter_mut() {
                        *pj = (*pj - mx).exp();
                        sum = sum + *pj;
                    }
                    let out = &mut att[s * d + hh * hd..][..hd];
                    out.iter_mut().for_each(|o| *o = R::zero());
                    for (j, &pj) in probs.iter().enumerate() {
                        let vv = &vc[(s * lmax + j) * d + hh * hd..][..hd];
                        let wgt = pj / sum;
                        for (o, &b) in out.iter_mut().zip(vv) {
                            *o = *o + wgt * b;
                        }
                    }
                }
            }
            matmul(n, d, d, &att, false, &w[lo.w_o..][..d * d], false, &mut y, R::zero());
            add_bias(&mut y, &w[lo.b_o..][..d]);
            for (a, &b) in x.iter_mut().zip(&y) {
                *a = *a + b;
            }
            layer_norm(&x, &w[lo.ln2_g..][..d], &w[lo.ln2_b..][..d], d, &mut h, &mut mean, &mut rstd);
            matmul(n, d, f, &h, false, &w[lo.w_fc..][..d * f], false, &mut fc, R::zero());
            add_bias(&mut fc, &w[lo.b_fc..][..f]);
            fc.iter_mut().for_each(|v| *v = gelu(*v));
            matmul(n, f, d, &fc, false, &w[lo.w_proj..][..f * d], false, &mut y, R::zero());
            add_bias(&mut y, &w[lo.b_proj..][..d]);
            for (a, &b) in x.iter_mut().zip(&y) {
                *a = *a + b;
            }
        }
        layer_norm(&x, &w[lay.lnf_g..][..d], &w[lay.lnf_b..][..d], d, &mut h, &mut mean, &mut rstd);
        let mut logits = vec![R::zero(); n * v];
        matmul(n, d, v, &h, false, &w[lay.wte..][..v * d], true, &mut logits, R::zero());
        self.pos += 1;
        Ok(logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::config::{ModelConfig, Preset};

    fn small_config(vocab: usize, max_len: usize, layers: usize) -> ModelConfig {
        ModelConfig {
            preset: Preset::Tiny,
            d_model: 8,
            d_ff: 16,
            n_heads: 2,
            n_layers: layers,
            max_len,
            vocab,
            dropout: 0.1,
        }
    }

    #[test]
    fn single_bos_shape() {
        let p = ModelParameters::<f32>::init(small_config(11, 6, 1), None, 0).unwrap();
        let z = forward_logits(&p, &[8], 1, 1).unwrap();
        assert_eq!(z.len(), 11);
    }

    #[test]
    fn zero_layer_hand_trace() {
        let mut c = small_config(2, 2, 0);
        c.d_model = 2;
        c.n_heads = 1;
        let mut p = ModelParameters::<f64>::zeros(c).unwrap();
        // wte = [[1, 2], [3, -1]], wpe = [[0.5, 0], [0, 0.5]]
        p.data[p.layout.wte..p.layout.wte + 4].copy_from_slice(&[1.0, 2.0, 3.0, -1.0]);
        p.data[p.layout.wpe..p.layout.wpe + 4].copy_from_slice(&[0.5, 0.0, 0.0, 0.5]);
        let g = p.layout.lnf_g;
        p.data[g..g + 2].copy_from_slice(&[1.0, 1.0]);
        let z = forward_logits(&p, &[0, 1], 1, 2).unwrap();
        let wte = [[1.0, 2.0], [3.0, -1.0]];
        let hidden: [[f64; 2]; 2] = [[1.5, 2.0], [3.0, -0.5]];
        for (r, hrow) in hidden.iter().enumerate() {
            let mu = (hrow[0] + hrow[1]) / 2.0;
            let var = ((hrow[0] - mu).powi(2) + (hrow[1] - mu).powi(2)) / 2.0;
            let ln: Vec<f64> = hrow.iter().map(|x| (x - mu) / (var + LN_EPS).sqrt()).collect();
            for (tk, e) in wte.iter().enumerate() {
                let want = ln[0] * e[0] + ln[1] * e[1];
                assert!((z[r * 2 + tk] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn causal_and_batch_independent() {
        let p = ModelParameters::<f64>::init(small_config(13, 7, 2), None, 3).unwrap();
        let a = [10u32, 1, 2, 3, 4, 5, 11];
        let mut b = a;
        b[4] = 9;
        b[6] = 0;
        let za = forward_logits(&p, &a, 1, 7).unwrap();
        let zb = forward_logits(&p, &b, 1, 7).unwrap();
        assert_eq!(&za[..4 * 13], &zb[..4 * 13]);
        assert_ne!(&za[4 * 13..5 * 13], &zb[4 * 13..5 * 13]);

        let both: Vec<u32> = a.iter().chain(&b).copied().collect();
        let swapped: Vec<u32> = b.iter().chain(&a).copied().collect();
        let z1 = forward_logits(&p, &both, 2, 7).unwrap();
        let z2 = forward_logits(&p, &swapped, 2, 7).unwrap();
        for (x, y) in z1[..91].iter().zip(&z2[91..]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn decoder_matches_full_forward() {
        let p = ModelParameters::<f64>::init(small_config(13, 7, 2), None, 5).unwrap();
        let seqs = [[10u32, 1, 2, 3, 4, 5, 11], [10, 3, 3, 0, 12, 7, 11]];
        let flat: Vec<u32> = seqs.iter().flatten().copied().collect();
        let full = forward_logits(&p, &flat, 2, 7).unwrap();
        let mut dec = KvDecoder::new(&p, 2);
        for pos in 0..7 {
            let z = dec.step(&[seqs[0][pos], seqs[1][pos]]).unwrap();
            for s in 0..2 {
                for k in 0..13 {
                    let want = full[(s * 7 + pos) * 13 + k];
                    assert!((z[s * 13 + k] - want).abs() < 1e-10);
                }
            }
        }
        assert!(dec.step(&[0, 0]).is_err());
    }

    #[test]
    fn rejects_bad_ids() {
        let p = ModelParameters::<f32>::init(small_config(5, 4, 1), None, 0).unwrap();
        assert!(forward_logits(&p, &[0, 5], 1, 2).is_err());
        assert!(forward_logits(&p, &[0; 5], 1, 5).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let c = small_config(9, 5, 1);
        let p = ModelParameters::<f64>::init(c, Some(4..8), 11).unwrap();
        let inputs = [7u32, 8, 1, 5, 2, 7, 0, 8, 6, 3];
        let targets = [7u32, 0, 1, 5, 2, 7, 3, 2, 6, 3];
        let groups: Vec<Option<Range<usize>>> = vec![None, None, None, Some(4..8), None];
        let cfg = OrdinalWeightConfig::new(4);
        let spec = LossSpec { groups: &groups, cfg: &cfg };
        let dropout = Some(Dropout { rate: 0.1, seed: 4 });
        let mut grad = vec![0.0; p.n_params()];
        loss_and_grad(&p, &inputs, &targets, 2, 5, &spec, dropout, 1.0, Some(&mut grad)).unwrap();
        let eval = |q: &ModelParameters<f64>| loss_and_grad(q, &inputs, &targets, 2, 5, &spec, dropout, 1.0, None).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in (0..p.n_params()).step_by(7) {
            let mut q = p.clone();
            q.data[i] += h;
            let up = eval(&q);
            q.data[i] -= 2.0 * h;
            let down = eval(&q);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / (fd.abs() + grad[i].abs()).max(1e-4);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }
}
