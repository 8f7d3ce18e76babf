//! Pre-LayerNorm decoder-only transformer with tied embeddings and a
//! hand-written backward pass. Generic over the float type so the same code
//! trains in f32 and is gradient-checked in f64.
//!
//! Weights are stored `(in, out)` row-major in one flat vector; every bias
//! immediately follows its weight matrix.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{LanguageModel, ModelConfig, ModelError};
use crate::tokenize::BOS;

pub trait Scalar:
    Float + FromPrimitive + AddAssign + SubAssign + MulAssign + DivAssign + Sum + Debug + Default + Send + Sync + 'static
{
    /// Raw strided GEMM, `c = alpha * a . b + beta * c`.
    ///
    /// # Safety
    /// Every addressed element of `a`, `b` and `c` must be in bounds.
    #[doc(hidden)]
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

#[inline]
fn s<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("finite constant")
}

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

/// Deliberate backward-pass corruptions for negative-control tests.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None,
    /// Treats GELU as the identity in the backward pass.
    GeluDerivative,
    /// Drops the attention-softmax centering term.
    SoftmaxJacobian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub qkv_w: usize,
    pub qkv_b: usize,
    pub proj_w: usize,
    pub proj_b: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub fc_w: usize,
    pub fc_b: usize,
    pub fc2_w: usize,
    pub fc2_b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zero,
    One,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub wte: usize,
    pub wpe: usize,
    pub blocks: Vec<BlockLayout>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub total: usize,
    tensors: Vec<(String, usize, usize, Init)>,
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let (d, i) = (c.embed_dim, c.intermediate_dim);
        let mut tensors = Vec::new();
        let mut off = 0;
        let mut add = |name: String, len: usize, init: Init| {
            tensors.push((name, off, len, init));
            off += len;
            off - len
        };
        let wte = add("wte".into(), c.vocab_size * d, Init::Normal);
        let wpe = add("wpe".into(), c.max_seq_len * d, Init::Normal);
        let mut blocks = Vec::new();
        for l in 0..c.layers {
            blocks.push(BlockLayout {
                ln1_g: add(format!("h{l}.ln1.g"), d, Init::One),
                ln1_b: add(format!("h{l}.ln1.b"), d, Init::Zero),
                qkv_w: add(format!("h{l}.attn.qkv.w"), d * 3 * d, Init::Normal),
                qkv_b: add(format!("h{l}.attn.qkv.b"), 3 * d, Init::Zero),
                proj_w: add(format!("h{l}.attn.proj.w"), d * d, Init::Normal),
                proj_b: add(format!("h{l}.attn.proj.b"), d, Init::Zero),
                ln2_g: add(format!("h{l}.ln2.g"), d, Init::One),
                ln2_b: add(format!("h{l}.ln2.b"), d, Init::Zero),
                fc_w: add(format!("h{l}.mlp.fc.w"), d * i, Init::Normal),
                fc_b: add(format!("h{l}.mlp.fc.b"), i, Init::Zero),
                fc2_w: add(format!("h{l}.mlp.proj.w"), i * d, Init::Normal),
                fc2_b: add(format!("h{l}.mlp.proj.b"), d, Init::Zero),
            });
        }
        let lnf_g = add("lnf.g".into(), d, Init::One);
        let lnf_b = add("lnf.b".into(), d, Init::Zero);
        Self {
            wte,
            wpe,
            blocks,
            lnf_g,
            lnf_b,
            total: off,
            tensors,
        }
    }

    /// `(name, offset, len)` for every parameter tensor, in storage order.
    pub fn tensors(&self) -> impl Iterator<Item = (&str, usize, usize)> {
        self.tensors.iter().map(|(n, o, l, _)| (n.as_str(), *o, *l))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transformer<F: Scalar> {
    config: ModelConfig,
    layout: Layout,
    params: Vec<F>,
}

struct BlockCache<F> {
    x_in: Vec<F>,
    ln1: Vec<F>,
    ln1_stats: Vec<(F, F)>,
    qkv: Vec<F>,
    att: Vec<F>,
    att_mask: Vec<F>,
    att_out: Vec<F>,
    proj_mask: Vec<F>,
    x_mid: Vec<F>,
    ln2: Vec<F>,
    ln2_stats: Vec<(F, F)>,
    fc_pre: Vec<F>,
    fc_sig: Vec<F>,
    fc_act: Vec<F>,
    fc2_mask: Vec<F>,
}

struct Cache<F> {
    emb_mask: Vec<F>,
    blocks: Vec<BlockCache<F>>,
    x_final: Vec<F>,
    lnf: Vec<F>,
    lnf_stats: Vec<(F, F)>,
}

impl<F: Scalar> Transformer<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![F::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for (_, off, len, init) in &layout.tensors {
            let dst = &mut params[*off..off + len];
            match init {
                Init::Normal => dst.iter_mut().for_each(|p| *p = s(normal.sample(&mut rng))),
                Init::Zero => {}
                Init::One => dst.fill(F::one()),
            }
        }
        Ok(Self { config, layout, params })
    }

    /// Rebuilds a model from stored parameters.
    pub fn from_params(config: ModelConfig, params: Vec<F>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check_ids(&self, ids: &[u32]) -> Result<(), ModelError> {
        if ids.len() > self.config.max_seq_len {
            return Err(ModelError::InvalidConfig(format!(
                "sequence of {} exceeds max_seq_len {}",
                ids.len(),
                self.config.max_seq_len
            )));
        }
        match ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            Some(&id) => Err(ModelError::TokenOutOfRange {
                id,
                vocab: self.config.vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// Logits `[t * vocab]` for an input sequence, without dropout.
    pub fn logits(&self, ids: &[u32]) -> Result<Vec<F>, ModelError> {
        self.check_ids(ids)?;
        let mut rng = None;
        Ok(self.forward(ids, 0.0, &mut rng).1)
    }

    /// Mean next-token cross entropy in nats, without dropout.
    pub fn loss(&self, inputs: &[u32], targets: &[u32]) -> Result<F, ModelError> {
        let logits = self.logits(inputs)?;
        let v = self.config.vocab_size;
        let mut total = F::zero();
        for (row, &tgt) in logits.chunks(v).zip(targets) {
            total += -log_softmax_at(row, tgt as usize);
        }
        Ok(total / s(targets.len() as f64))
    }

    /// Adds `scale * d(sum NLL)/d(params)` into `grads` and returns the
    /// summed NLL in nats. Dropout is active when `dropout > 0`.
    pub(crate) fn accumulate_grads(
        &self,
        inputs: &[u32],
        targets: &[u32],
        dropout: f64,
        rng: &mut Option<&mut ChaCha8Rng>,
        grads: &mut [F],
        scale: F,
        fault: Fault,
    ) -> Result<F, ModelError> {
        self.check_ids(inputs)?;
        self.check_ids(targets)?;
        let (cache, mut logits) = self.forward(inputs, dropout, rng);
        let v = self.config.vocab_size;
        let mut nll = F::zero();
        for (row, &tgt) in logits.chunks_mut(v).zip(targets) {
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            let tgt = tgt as usize;
            nll += sum.ln() - row[tgt].ln();
            let inv = scale / sum;
            for x in row.iter_mut() {
                *x *= inv;
            }
            row[tgt] -= scale;
        }
        self.backward(inputs, &cache, &logits, grads, fault);
        Ok(nll)
    }

    fn forward(&self, ids: &[u32], dropout: f64, rng: &mut Option<&mut ChaCha8Rng>) -> (Cache<F>, Vec<F>) {
        let c = &self.config;
        let (t, d, v, ffn) = (ids.len(), c.embed_dim, c.vocab_size, c.intermediate_dim);
        let p = &self.params;
        let lay = &self.layout;

        let mut x = vec![F::zero(); t * d];
        for (i, &id) in ids.iter().enumerate() {
            let tok = &p[lay.wte + id as usize * d..][..d];
            let pos = &p[lay.wpe + i * d..][..d];
            for j in 0..d {
                x[i * d + j] = tok[j] + pos[j];
            }
        }
        let emb_mask = dropout_mask(t * d, dropout, rng);
        apply_mask(&mut x, &emb_mask);

        let mut blocks = Vec::with_capacity(c.layers);
        for bl in &lay.blocks {
            let x_in = x;
            let (ln1, ln1_stats) = layernorm(&x_in, &p[bl.ln1_g..][..d], &p[bl.ln1_b..][..d], d);
            let mut qkv = vec![F::zero(); t * 3 * d];
            matmul(&mut qkv, &ln1, &p[bl.qkv_w..][..d * 3 * d], &p[bl.qkv_b..][..3 * d], t, d, 3 * d);
            let (att, att_mask, att_out) = self.attention(&qkv, t, dropout, rng);
            let mut proj = vec![F::zero(); t * d];
            matmul(&mut proj, &att_out, &p[bl.proj_w..][..d * d], &p[bl.proj_b..][..d], t, d, d);
            let proj_mask = dropout_mask(t * d, dropout, rng);
            apply_mask(&mut proj, &proj_mask);
            let x_mid: Vec<F> = x_in.iter().zip(&proj).map(|(&a, &b)| a + b).collect();

            let (ln2, ln2_stats) = layernorm(&x_mid, &p[bl.ln2_g..][..d], &p[bl.ln2_b..][..d], d);
            let mut fc_pre = vec![F::zero(); t * ffn];
            matmul(&mut fc_pre, &ln2, &p[bl.fc_w..][..d * ffn], &p[bl.fc_b..][..ffn], t, d, ffn);
            let fc_sig: Vec<F> = fc_pre.iter().map(|&z| gelu_sigmoid(z)).collect();
            let fc_act: Vec<F> = fc_pre.iter().zip(&fc_sig).map(|(&z, &g)| z * g).collect();
            let mut fc2 = vec![F::zero(); t * d];
            matmul(&mut fc2, &fc_act, &p[bl.fc2_w..][..ffn * d], &p[bl.fc2_b..][..d], t, ffn, d);
            let fc2_mask = dropout_mask(t * d, dropout, rng);
            apply_mask(&mut fc2, &fc2_mask);
            x = x_mid.iter().zip(&fc2).map(|(&a, &b)| a + b).collect();

            blocks.push(BlockCache {
                x_in,
                ln1,
                ln1_stats,
                qkv,
                att,
                att_mask,
                att_out,
                proj_mask,
                x_mid,
                ln2,
                ln2_stats,
                fc_pre,
                fc_sig,
                fc_act,
                fc2_mask,
            });
        }
        let (lnf, lnf_stats) = layernorm(&x, &p[lay.lnf_g..][..d], &p[lay.lnf_b..][..d], d);
        let wte = &p[lay.wte..][..v * d];
        let mut logits = vec![F::zero(); t * v];
        gemm(t, d, v, F::one(), view(&lnf, d, 1), view(wte, 1, d), F::zero(), &mut logits, v);
        let cache = Cache {
            emb_mask,
            blocks,
            x_final: x,
            lnf,
            lnf_stats,
        };
        (cache, logits)
    }

    /// Causal multi-head attention. Returns softmax weights `[h][t][t]`
    /// (zero above the diagonal), their dropout factors, and the
    /// concatenated head outputs `[t][d]`.
    fn attention(&self, qkv: &[F], t: usize, dropout: f64, rng: &mut Option<&mut ChaCha8Rng>) -> (Vec<F>, Vec<F>, Vec<F>) {
        let c = &self.config;
        let (d, nh, hs) = (c.embed_dim, c.heads, c.head_size());
        let scale: F = s(1.0 / (hs as f64).sqrt());
        let mut att = vec![F::zero(); nh * t * t];
        let mut out = vec![F::zero(); t * d];
        let mask = dropout_mask(nh * t * t, dropout, rng);
        let mut dropped = Vec::new();
        for h in 0..nh {
            let a = &mut att[h * t * t..][..t * t];
            let (q, k) = (view(&qkv[h * hs..], 3 * d, 1), view(&qkv[d + h * hs..], 1, 3 * d));
            gemm(t, hs, t, scale, q, k, F::zero(), a, t);
            for i in 0..t {
                let row = &mut a[i * t..][..t];
                let max = row[..=i].iter().copied().fold(F::neg_infinity(), F::max);
                let mut sum = F::zero();
                for x in row[..=i].iter_mut() {
                    *x = (*x - max).exp();
                    sum += *x;
                }
                let inv = F::one() / sum;
                row[..=i].iter_mut().for_each(|x| *x *= inv);
                row[i + 1..].fill(F::zero());
            }
            let weights: &[F] = if mask.is_empty() {
                a
            } else {
                dropped.clear();
                dropped.extend(a.iter().zip(&mask[h * t * t..]).map(|(&x, &m)| x * m));
                &dropped
            };
            let val = view(&qkv[2 * d + h * hs..], 3 * d, 1);
            gemm(t, t, hs, F::one(), view(weights, t, 1), val, F::zero(), &mut out[h * hs..], d);
        }
        (att, mask, out)
    }

    fn backward(&self, ids: &[u32], cache: &Cache<F>, dlogits: &[F], grads: &mut [F], fault: Fault) {
        let c = &self.config;
        let (t, d, v, ffn) = (ids.len(), c.embed_dim, c.vocab_size, c.intermediate_dim);
        let p = &self.params;
        let lay = &self.layout;

        let mut dlnf = vec![F::zero(); t * d];
        let wte = &p[lay.wte..][..v * d];
        gemm(t, v, d, F::one(), view(dlogits, v, 1), view(wte, d, 1), F::zero(), &mut dlnf, d);
        let dwte = &mut grads[lay.wte..][..v * d];
        gemm(v, t, d, F::one(), view(dlogits, 1, v), view(&cache.lnf, d, 1), F::one(), dwte, d);
        let mut dx = vec![F::zero(); t * d];
        layernorm_backward(&mut dx, grads, lay.lnf_g, lay.lnf_b, &dlnf, &cache.x_final, &cache.lnf_stats, &p[lay.lnf_g..][..d], d);

        for (bl, bc) in lay.blocks.iter().zip(&cache.blocks).rev() {
            // MLP branch
            let mut dfc2 = dx.clone();
            apply_mask(&mut dfc2, &bc.fc2_mask);
            let mut dact = vec![F::zero(); t * ffn];
            matmul_backward(&mut dact, grads, bl.fc2_w, bl.fc2_b, &dfc2, &bc.fc_act, &p[bl.fc2_w..][..ffn * d], t, ffn, d);
            if fault != Fault::GeluDerivative {
                for ((g, &z), &sg) in dact.iter_mut().zip(&bc.fc_pre).zip(&bc.fc_sig) {
                    *g *= gelu_grad(z, sg);
                }
            }
            let mut dln2 = vec![F::zero(); t * d];
            matmul_backward(&mut dln2, grads, bl.fc_w, bl.fc_b, &dact, &bc.ln2, &p[bl.fc_w..][..d * ffn], t, d, ffn);
            let mut dx_mid = dx;
            layernorm_backward(&mut dx_mid, grads, bl.ln2_g, bl.ln2_b, &dln2, &bc.x_mid, &bc.ln2_stats, &p[bl.ln2_g..][..d], d);

            // attention branch
            let mut dproj = dx_mid.clone();
            apply_mask(&mut dproj, &bc.proj_mask);
            let mut datt_out = vec![F::zero(); t * d];
            matmul_backward(&mut datt_out, grads, bl.proj_w, bl.proj_b, &dproj, &bc.att_out, &p[bl.proj_w..][..d * d], t, d, d);
            let dqkv = self.attention_backward(&datt_out, bc, t, fault);
            let mut dln1 = vec![F::zero(); t * d];
            matmul_backward(&mut dln1, grads, bl.qkv_w, bl.qkv_b, &dqkv, &bc.ln1, &p[bl.qkv_w..][..d * 3 * d], t, d, 3 * d);
            dx = dx_mid;
            layernorm_backward(&mut dx, grads, bl.ln1_g, bl.ln1_b, &dln1, &bc.x_in, &bc.ln1_stats, &p[bl.ln1_g..][..d], d);
        }

        apply_mask(&mut dx, &cache.emb_mask);
        for (i, &id) in ids.iter().enumerate() {
            let g = &dx[i * d..][..d];
            axpy(&mut grads[lay.wte + id as usize * d..][..d], F::one(), g);
            axpy(&mut grads[lay.wpe + i * d..][..d], F::one(), g);
        }
    }

    fn attention_backward(&self, dout: &[F], bc: &BlockCache<F>, t: usize, fault: Fault) -> Vec<F> {
        let c = &self.config;
        let (d, nh, hs) = (c.embed_dim, c.heads, c.head_size());
        let scale: F = s(1.0 / (hs as f64).sqrt());
        let qkv = &bc.qkv;
        let mut dqkv = vec![F::zero(); t * 3 * d];
        let mut ds = vec![F::zero(); t * t];
        let mut dropped = Vec::new();
        for h in 0..nh {
            let p = &bc.att[h * t * t..][..t * t];
            let mask = if bc.att_mask.is_empty() { &[][..] } else { &bc.att_mask[h * t * t..][..t * t] };
            let go = view(&dout[h * hs..], d, 1);
            let (q, k, val) = (h * hs, d + h * hs, 2 * d + h * hs);

            // gradient wrt the dropped-out weights, then wrt V
            gemm(t, hs, t, F::one(), go, view(&qkv[val..], 1, 3 * d), F::zero(), &mut ds, t);
            let weights: &[F] = if mask.is_empty() {
                p
            } else {
                dropped.clear();
                dropped.extend(p.iter().zip(mask).map(|(&x, &m)| x * m));
                &dropped
            };
            gemm(t, t, hs, F::one(), view(weights, 1, t), go, F::one(), &mut dqkv[val..], 3 * d);

            // softmax Jacobian, row by row
            for i in 0..t {
                let row = &mut ds[i * t..][..t];
                let prow = &p[i * t..][..t];
                if !mask.is_empty() {
                    row[..=i].iter_mut().zip(&mask[i * t..]).for_each(|(g, &m)| *g *= m);
                }
                let centre = if fault == Fault::SoftmaxJacobian {
                    F::zero()
                } else {
                    row[..=i].iter().zip(prow).map(|(&g, &a)| g * a).sum::<F>()
                };
                for (g, &a) in row[..=i].iter_mut().zip(prow) {
                    *g = a * (*g - centre) * scale;
                }
                row[i + 1..].fill(F::zero());
            }
            gemm(t, t, hs, F::one(), view(&ds, t, 1), view(&qkv[k..], 3 * d, 1), F::one(), &mut dqkv[q..], 3 * d);
            gemm(t, t, hs, F::one(), view(&ds, 1, t), view(&qkv[q..], 3 * d, 1), F::one(), &mut dqkv[k..], 3 * d);
        }
        dqkv
    }
}

impl<F: Scalar> LanguageModel for Transformer<F> {
    fn context_len(&self) -> usize {
        self.config.max_seq_len
    }

    fn score_window(&self, window: &[u32]) -> Vec<f64> {
        let mut input = Vec::with_capacity(window.len());
        input.push(BOS);
        input.extend_from_slice(&window[..window.len().saturating_sub(1)]);
        let logits = self.logits(&input).expect("window fits the model");
        let v = self.config.vocab_size;
        logits
            .chunks(v)
            .zip(window)
            .map(|(row, &tgt)| {
                let row: Vec<f64> = row.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect();
                log_softmax_at(&row, tgt as usize) / std::f64::consts::LN_2
            })
            .collect()
    }
}

fn log_softmax_at<F: Scalar>(row: &[F], tgt: usize) -> F {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let sum: F = row.iter().map(|&x| (x - max).exp()).sum();
    row[tgt] - max - sum.ln()
}

fn dropout_mask<F: Scalar>(n: usize, p: f64, rng: &mut Option<&mut ChaCha8Rng>) -> Vec<F> {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep: F = s(1.0 / (1.0 - p));
            let threshold = (p * 4_294_967_296.0) as u64;
            (0..n)
                .map(|_| if u64::from(rng.next_u32()) < threshold { F::zero() } else { keep })
                .collect()
        }
        _ => Vec::new(),
    }
}

fn apply_mask<F: Scalar>(x: &mut [F], mask: &[F]) {
    if !mask.is_empty() {
        x.iter_mut().zip(mask).for_each(|(a, &m)| *a *= m);
    }
}

#[inline]
fn axpy<F: Scalar>(y: &mut [F], a: F, x: &[F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Strided matrix view: element `(i, j)` is `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
struct View<'a, F> {
    data: &'a [F],
    rs: usize,
    cs: usize,
}

fn view<F>(data: &[F], rs: usize, cs: usize) -> View<'_, F> {
    View { data, rs, cs }
}

impl<F> View<'_, F> {
    fn covers(&self, rows: usize, cols: usize) -> bool {
        (rows - 1) * self.rs + (cols - 1) * self.cs < self.data.len()
    }
}

/// `c = alpha * a . b + beta * c` with `a` `m x k`, `b` `k x n`, and `c`
/// row-major with row stride `rsc`.
#[allow(clippy::too_many_arguments)]
fn gemm<F: Scalar>(m: usize, k: usize, n: usize, alpha: F, a: View<F>, b: View<F>, beta: F, c: &mut [F], rsc: usize) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k > 0 && a.covers(m, k) && b.covers(k, n), "gemm operand out of bounds");
    assert!((m - 1) * rsc + n <= c.len(), "gemm output out of bounds");
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        )
    }
}

/// `out[t][n] = inp[t][k] . w[k][n] + b[n]`
fn matmul<F: Scalar>(out: &mut [F], inp: &[F], w: &[F], b: &[F], t: usize, k: usize, n: usize) {
    for o in out.chunks_exact_mut(n) {
        o.copy_from_slice(b);
    }
    gemm(t, k, n, F::one(), view(inp, k, 1), view(w, n, 1), F::one(), out, n);
}

/// Accumulates input, weight and bias gradients of [`matmul`]. The bias
/// gradient slot must directly follow the weight slot in `grads`.
#[allow(clippy::too_many_arguments)]
fn matmul_backward<F: Scalar>(
    dinp: &mut [F],
    grads: &mut [F],
    w_off: usize,
    b_off: usize,
    dout: &[F],
    inp: &[F],
    w: &[F],
    t: usize,
    k: usize,
    n: usize,
) {
    debug_assert_eq!(w_off + k * n, b_off);
    let (dw, db) = grads[w_off..b_off + n].split_at_mut(k * n);
    for go in dout.chunks_exact(n) {
        axpy(db, F::one(), go);
    }
    gemm(t, n, k, F::one(), view(dout, n, 1), view(w, 1, n), F::one(), dinp, k);
    gemm(k, t, n, F::one(), view(inp, 1, k), view(dout, n, 1), F::one(), dw, n);
}

fn layernorm<F: Scalar>(x: &[F], g: &[F], b: &[F], d: usize) -> (Vec<F>, Vec<(F, F)>) {
    let mut out = vec![F::zero(); x.len()];
    let mut stats = Vec::with_capacity(x.len() / d);
    let inv_d: F = s(1.0 / d as f64);
    for (row, o) in x.chunks(d).zip(out.chunks_mut(d)) {
        let mean = row.iter().copied().sum::<F>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let rstd = F::one() / (var + s(LN_EPS)).sqrt();
        for j in 0..d {
            o[j] = (row[j] - mean) * rstd * g[j] + b[j];
        }
        stats.push((mean, rstd));
    }
    (out, stats)
}

/// Adds the input gradient into `dx` and the gain/bias gradients into
/// `grads`.
#[allow(clippy::too_many_arguments)]
fn layernorm_backward<F: Scalar>(
    dx: &mut [F],
    grads: &mut [F],
    g_off: usize,
    b_off: usize,
    dy: &[F],
    x: &[F],
    stats: &[(F, F)],
    g: &[F],
    d: usize,
) {
    let inv_d: F = s(1.0 / d as f64);
    let mut xhat = vec![F::zero(); d];
    let mut dxhat = vec![F::zero(); d];
    for (r, &(mean, rstd)) in stats.iter().enumerate() {
        let row = &x[r * d..][..d];
        let gy = &dy[r * d..][..d];
        let mut mean_dxhat = F::zero();
        let mut mean_dxhat_xhat = F::zero();
        for j in 0..d {
            xhat[j] = (row[j] - mean) * rstd;
            dxhat[j] = gy[j] * g[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xhat[j];
            grads[g_off + j] += gy[j] * xhat[j];
            grads[b_off + j] += gy[j];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let out = &mut dx[r * d..][..d];
        for j in 0..d {
            out[j] += rstd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
        }
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044715;

// tanh-approximate GELU written as x * sigmoid(2u), u = k(x + c x^3);
// one exp instead of a tanh.
#[inline]
fn gelu_sigmoid<F: Scalar>(x: F) -> F {
    let u2 = s::<F>(2.0 * GELU_K) * (x + s::<F>(GELU_C) * x * x * x);
    F::one() / (F::one() + (-u2).exp())
}

#[cfg(test)]
fn gelu<F: Scalar>(x: F) -> F {
    x * gelu_sigmoid(x)
}

/// Derivative given `sg = gelu_sigmoid(x)`.
#[inline]
fn gelu_grad<F: Scalar>(x: F, sg: F) -> F {
    let du2 = s::<F>(2.0 * GELU_K) * (F::one() + s::<F>(3.0 * GELU_C) * x * x);
    sg + x * sg * (F::one() - sg) * du2
}
