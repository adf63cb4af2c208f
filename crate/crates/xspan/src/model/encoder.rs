//! Pre-norm transformer encoder: forward pass with explicit caches and a
//! manual backward pass.
//!
//! Layer structure, per layer i:
//!   a   = LN1(x);  attn = Dropout(MHA(a));   x = x + attn
//!   f   = LN2(x);  ffn  = Dropout(W2 gelu(W1 f + b1) + b2);  x = x + ffn
//! followed by a final layer norm. Token and learned absolute position
//! embeddings feed layer 0. Attention masks padded KEY positions only, so a
//! padded position never influences any real row; padded rows themselves are
//! computed but must not be read (and must receive zero upstream gradient).
//!
//! GELU uses the tanh approximation, differentiated exactly, so gradient
//! checks against finite differences are clean.

use ndarray::{s, Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::model::store::TensorStore;
use crate::model::{Model, Scalar};
use crate::util::derive_seed;

/// Seeded inverted-dropout plan; absence means evaluation mode.
#[derive(Debug, Clone, Copy)]
pub struct DropoutPlan {
    pub rate: f64,
    pub seed: u64,
}

/// Which rows of X belong to which sentence.
#[derive(Debug, Clone)]
pub struct SegmentSpec {
    pub source: Range<usize>,
    pub target: Option<Range<usize>>,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput<F> {
    /// L×d final hidden states.
    pub hidden: Array2<F>,
    /// True at real positions, false at padding.
    pub mask: Vec<bool>,
    pub source: Range<usize>,
    pub target: Option<Range<usize>>,
}

struct LnCache<F> {
    xhat: Array2<F>,
    inv_std: Array1<F>,
}

struct LayerCache<F> {
    a: Array2<F>,
    ln1: LnCache<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    probs: Vec<Array2<F>>,
    ctx: Array2<F>,
    attn_drop: Option<Array2<F>>,
    f: Array2<F>,
    ln2: LnCache<F>,
    ffn_pre: Array2<F>,
    ffn_act: Array2<F>,
    ffn_drop: Option<Array2<F>>,
}

pub struct ForwardCache<F> {
    ids: Vec<u32>,
    emb_drop: Option<Array2<F>>,
    layers: Vec<LayerCache<F>>,
    final_ln: LnCache<F>,
}

fn gelu<F: Scalar>(x: F) -> F {
    let c = F::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = F::from_f64(0.044_715);
    let half = F::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (F::one() + u.tanh())
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::from_f64(0.797_884_560_802_865_4);
    let a = F::from_f64(0.044_715);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + three * a * x * x)
}

/// Layer norm over the last axis. Returns the normalized-and-scaled output
/// plus the cache needed for the backward pass.
fn layer_norm<F: Scalar>(
    x: &Array2<F>,
    gain: &ndarray::ArrayView1<'_, F>,
    bias: &ndarray::ArrayView1<'_, F>,
) -> (Array2<F>, LnCache<F>) {
    let d = x.ncols();
    let df = F::from_f64(d as f64);
    let eps = F::from_f64(1e-5);
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / df;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).fold(F::zero(), |s, v| s + v) / df;
        let inv = F::one() / (var + eps).sqrt();
        row.mapv_inplace(|v| v * inv);
        *is = inv;
    }
    let mut out = xhat.clone();
    for mut row in out.rows_mut() {
        for (o, (&g, &b)) in row.iter_mut().zip(gain.iter().zip(bias.iter())) {
            *o = *o * g + b;
        }
    }
    (out, LnCache { xhat, inv_std })
}

/// Backward of layer_norm. Returns dx; accumulates dgain/dbias.
fn layer_norm_backward<F: Scalar>(
    dy: &Array2<F>,
    cache: &LnCache<F>,
    gain: &ndarray::ArrayView1<'_, F>,
    dgain: &mut Array1<F>,
    dbias: &mut Array1<F>,
) -> Array2<F> {
    let d = dy.ncols();
    let df = F::from_f64(d as f64);
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dy_row = dy.row(i);
        let xhat = cache.xhat.row(i);
        for j in 0..d {
            dgain[j] += dy_row[j] * xhat[j];
            dbias[j] += dy_row[j];
        }
        // g = dy ⊙ gain; dx = inv_std (g − mean(g) − xhat·mean(g ⊙ xhat))
        let mut mean_g = F::zero();
        let mut mean_gx = F::zero();
        for j in 0..d {
            let g = dy_row[j] * gain[j];
            mean_g += g;
            mean_gx += g * xhat[j];
        }
        mean_g /= df;
        mean_gx /= df;
        let inv = cache.inv_std[i];
        let mut dx_row = dx.row_mut(i);
        for j in 0..d {
            let g = dy_row[j] * gain[j];
            dx_row[j] = inv * (g - mean_g - xhat[j] * mean_gx);
        }
    }
    dx
}

/// Inverted-dropout multiplier matrix: 0 with probability `rate`, else
/// 1/(1−rate). Pattern drawn as f64 so f32 and f64 models agree.
fn dropout_mask<F: Scalar>(shape: (usize, usize), rate: f64, seed: u64) -> Array2<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = F::from_f64(1.0 / (1.0 - rate));
    let mut m = Array2::zeros(shape);
    for v in m.iter_mut() {
        *v = if rng.random::<f64>() < rate {
            F::zero()
        } else {
            keep
        };
    }
    m
}

/// Row softmax over unmasked key columns; masked columns get probability 0.
/// A fully-masked row becomes all zeros rather than NaN.
fn softmax_rows_masked<F: Scalar>(scores: &mut Array2<F>, mask: &[bool]) {
    for mut row in scores.rows_mut() {
        let mut max = F::neg_infinity();
        for (j, &m) in mask.iter().enumerate() {
            if m && row[j] > max {
                max = row[j];
            }
        }
        if max == F::neg_infinity() {
            row.fill(F::zero());
            continue;
        }
        let mut sum = F::zero();
        for (j, &m) in mask.iter().enumerate() {
            if m {
                row[j] = (row[j] - max).exp();
                sum += row[j];
            } else {
                row[j] = F::zero();
            }
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

impl<F: Scalar> Model<F> {
    /// Encodes one sequence. `ids` and `mask` must have equal length ≤ the
    /// configured maximum; padding must be a mask suffix of `false`.
    pub fn forward(
        &self,
        ids: &[u32],
        mask: &[bool],
        segments: SegmentSpec,
        dropout: Option<&DropoutPlan>,
    ) -> Result<(EncoderOutput<F>, ForwardCache<F>)> {
        let cfg = &self.config;
        let l = ids.len();
        if l == 0 || l != mask.len() {
            return Err(Error::Internal(format!(
                "ids/mask length mismatch: {} vs {}",
                l,
                mask.len()
            )));
        }
        if l > cfg.max_len {
            return Err(Error::SequenceTooLong {
                len: l,
                max: cfg.max_len,
            });
        }
        let d = cfg.hidden;
        let heads = cfg.heads;
        let dh = cfg.head_dim();
        let scale = F::from_f64(1.0 / (dh as f64).sqrt());
        let p = &self.params;

        // Embeddings.
        let tok = p.view2("embed.token");
        let pos = p.view2("embed.pos");
        let mut x = Array2::zeros((l, d));
        for (t, &id) in ids.iter().enumerate() {
            if id as usize >= cfg.vocab_size {
                return Err(Error::CorruptInstance(format!(
                    "token id {id} outside vocabulary of {}",
                    cfg.vocab_size
                )));
            }
            let e = tok.row(id as usize);
            let pe = pos.row(t);
            for j in 0..d {
                x[(t, j)] = e[j] + pe[j];
            }
        }
        let emb_drop = dropout.map(|dp| dropout_mask((l, d), dp.rate, derive_seed(dp.seed, 0)));
        if let Some(m) = &emb_drop {
            x = &x * m;
        }

        let mut layers = Vec::with_capacity(cfg.layers);
        for li in 0..cfg.layers {
            let pre = format!("layer{li}");
            let (a, ln1) = layer_norm(
                &x,
                &p.view1(&format!("{pre}.ln1.gain")),
                &p.view1(&format!("{pre}.ln1.bias")),
            );
            let q = a.dot(&p.view2(&format!("{pre}.attn.wq"))) + p.view1(&format!("{pre}.attn.bq"));
            let k = a.dot(&p.view2(&format!("{pre}.attn.wk"))) + p.view1(&format!("{pre}.attn.bk"));
            let v = a.dot(&p.view2(&format!("{pre}.attn.wv"))) + p.view1(&format!("{pre}.attn.bv"));
            let mut ctx = Array2::zeros((l, d));
            let mut probs = Vec::with_capacity(heads);
            for h in 0..heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let qh = q.slice(cols);
                let kh = k.slice(cols);
                let vh = v.slice(cols);
                let mut scores = qh.dot(&kh.t());
                scores.mapv_inplace(|s| s * scale);
                softmax_rows_masked(&mut scores, mask);
                let ctx_h = scores.dot(&vh);
                ctx.slice_mut(cols).assign(&ctx_h);
                probs.push(scores);
            }
            let mut attn =
                ctx.dot(&p.view2(&format!("{pre}.attn.wo"))) + p.view1(&format!("{pre}.attn.bo"));
            let attn_drop = dropout.map(|dp| {
                dropout_mask((l, d), dp.rate, derive_seed(dp.seed, (2 * li + 1) as u64))
            });
            if let Some(m) = &attn_drop {
                attn = &attn * m;
            }
            let x_mid = &x + &attn;

            let (f, ln2) = layer_norm(
                &x_mid,
                &p.view1(&format!("{pre}.ln2.gain")),
                &p.view1(&format!("{pre}.ln2.bias")),
            );
            let ffn_pre = f.dot(&p.view2(&format!("{pre}.ffn.w1"))) + p.view1(&format!("{pre}.ffn.b1"));
            let ffn_act = ffn_pre.mapv(gelu);
            let mut ffn =
                ffn_act.dot(&p.view2(&format!("{pre}.ffn.w2"))) + p.view1(&format!("{pre}.ffn.b2"));
            let ffn_drop = dropout.map(|dp| {
                dropout_mask((l, d), dp.rate, derive_seed(dp.seed, (2 * li + 2) as u64))
            });
            if let Some(m) = &ffn_drop {
                ffn = &ffn * m;
            }
            let x_out = &x_mid + &ffn;

            layers.push(LayerCache {
                a,
                ln1,
                q,
                k,
                v,
                probs,
                ctx,
                attn_drop,
                f,
                ln2,
                ffn_pre,
                ffn_act,
                ffn_drop,
            });
            x = x_out;
        }

        let (hidden, final_ln) =
            layer_norm(&x, &p.view1("final_ln.gain"), &p.view1("final_ln.bias"));
        Ok((
            EncoderOutput {
                hidden,
                mask: mask.to_vec(),
                source: segments.source,
                target: segments.target,
            },
            ForwardCache {
                ids: ids.to_vec(),
                emb_drop,
                layers,
                final_ln,
            },
        ))
    }

    /// Accumulates parameter gradients for one sequence given dL/dH.
    /// Upstream gradient rows at padded positions must be zero.
    pub fn backward(
        &self,
        cache: &ForwardCache<F>,
        d_hidden: &Array2<F>,
        grads: &mut TensorStore<F>,
    ) {
        let cfg = &self.config;
        let d = cfg.hidden;
        let heads = cfg.heads;
        let dh = cfg.head_dim();
        let scale = F::from_f64(1.0 / (dh as f64).sqrt());
        let p = &self.params;
        let l = cache.ids.len();

        // Final layer norm.
        let mut dgain = Array1::zeros(d);
        let mut dbias = Array1::zeros(d);
        let mut dx = layer_norm_backward(
            d_hidden,
            &cache.final_ln,
            &p.view1("final_ln.gain"),
            &mut dgain,
            &mut dbias,
        );
        grads.add1("final_ln.gain", &dgain.view());
        grads.add1("final_ln.bias", &dbias.view());

        for li in (0..cfg.layers).rev() {
            let pre = format!("layer{li}");
            let lc = &cache.layers[li];

            // x_out = x_mid + Dropout(ffn_raw)
            let mut d_ffn = dx.clone();
            if let Some(m) = &lc.ffn_drop {
                d_ffn = &d_ffn * m;
            }
            // ffn_raw = act · W2 + b2
            let dw2 = lc.ffn_act.t().dot(&d_ffn);
            grads.add2(&format!("{pre}.ffn.w2"), &dw2.view());
            grads.add1(&format!("{pre}.ffn.b2"), &d_ffn.sum_axis(Axis(0)).view());
            let dact = d_ffn.dot(&p.view2(&format!("{pre}.ffn.w2")).t());
            let dpre = &dact * &lc.ffn_pre.mapv(gelu_grad);
            let dw1 = lc.f.t().dot(&dpre);
            grads.add2(&format!("{pre}.ffn.w1"), &dw1.view());
            grads.add1(&format!("{pre}.ffn.b1"), &dpre.sum_axis(Axis(0)).view());
            let df = dpre.dot(&p.view2(&format!("{pre}.ffn.w1")).t());

            let mut dgain2 = Array1::zeros(d);
            let mut dbias2 = Array1::zeros(d);
            let d_from_ln2 = layer_norm_backward(
                &df,
                &lc.ln2,
                &p.view1(&format!("{pre}.ln2.gain")),
                &mut dgain2,
                &mut dbias2,
            );
            grads.add1(&format!("{pre}.ln2.gain"), &dgain2.view());
            grads.add1(&format!("{pre}.ln2.bias"), &dbias2.view());
            let d_x_mid = &dx + &d_from_ln2;

            // x_mid = x_in + Dropout(attn_raw)
            let mut d_attn = d_x_mid.clone();
            if let Some(m) = &lc.attn_drop {
                d_attn = &d_attn * m;
            }
            // attn_raw = ctx · Wo + bo
            let dwo = lc.ctx.t().dot(&d_attn);
            grads.add2(&format!("{pre}.attn.wo"), &dwo.view());
            grads.add1(&format!("{pre}.attn.bo"), &d_attn.sum_axis(Axis(0)).view());
            let dctx = d_attn.dot(&p.view2(&format!("{pre}.attn.wo")).t());

            let mut dq: Array2<F> = Array2::zeros((l, d));
            let mut dk: Array2<F> = Array2::zeros((l, d));
            let mut dv: Array2<F> = Array2::zeros((l, d));
            for h in 0..heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let probs = &lc.probs[h];
                let dctx_h = dctx.slice(cols);
                let vh = lc.v.slice(cols);
                let dprobs = dctx_h.dot(&vh.t());
                dv.slice_mut(cols).assign(&probs.t().dot(&dctx_h));
                // softmax rows: ds = p ⊙ (dp − Σ_j dp_j p_j)
                let mut ds = Array2::zeros((l, l));
                for i in 0..l {
                    let p_row = probs.row(i);
                    let dp_row = dprobs.row(i);
                    let dot = p_row
                        .iter()
                        .zip(dp_row.iter())
                        .fold(F::zero(), |s, (&a, &b)| s + a * b);
                    let mut ds_row = ds.row_mut(i);
                    for j in 0..l {
                        ds_row[j] = p_row[j] * (dp_row[j] - dot);
                    }
                }
                let kh = lc.k.slice(cols);
                let qh = lc.q.slice(cols);
                let mut dqh = ds.dot(&kh);
                dqh.mapv_inplace(|v| v * scale);
                dq.slice_mut(cols).assign(&dqh);
                let mut dkh = ds.t().dot(&qh);
                dkh.mapv_inplace(|v| v * scale);
                dk.slice_mut(cols).assign(&dkh);
            }

            let mut da = dq.dot(&p.view2(&format!("{pre}.attn.wq")).t());
            da = da + dk.dot(&p.view2(&format!("{pre}.attn.wk")).t());
            da = da + dv.dot(&p.view2(&format!("{pre}.attn.wv")).t());
            for (w, b, dmat) in [("wq", "bq", &dq), ("wk", "bk", &dk), ("wv", "bv", &dv)] {
                let dw = lc.a.t().dot(dmat);
                grads.add2(&format!("{pre}.attn.{w}"), &dw.view());
                grads.add1(&format!("{pre}.attn.{b}"), &dmat.sum_axis(Axis(0)).view());
            }

            let mut dgain1 = Array1::zeros(d);
            let mut dbias1 = Array1::zeros(d);
            let d_from_ln1 = layer_norm_backward(
                &da,
                &lc.ln1,
                &p.view1(&format!("{pre}.ln1.gain")),
                &mut dgain1,
                &mut dbias1,
            );
            grads.add1(&format!("{pre}.ln1.gain"), &dgain1.view());
            grads.add1(&format!("{pre}.ln1.bias"), &dbias1.view());
            dx = &d_x_mid + &d_from_ln1;
        }

        let dx0 = match &cache.emb_drop {
            Some(m) => &dx * m,
            None => dx,
        };
        {
            let mut dtok = grads.view2_mut("embed.token");
            for (t, &id) in cache.ids.iter().enumerate() {
                let src = dx0.row(t);
                let mut dst = dtok.row_mut(id as usize);
                dst += &src;
            }
        }
        {
            let mut dpos = grads.view2_mut("embed.pos");
            for t in 0..l {
                let src = dx0.row(t);
                let mut dst = dpos.row_mut(t);
                dst += &src;
            }
        }
    }
}
