//! Training objectives: span-prediction cross-entropy over query slots,
//! threefold contrastive representation consistency, and masked-token
//! recovery. Every objective computes its loss and accumulates gradients in
//! the same call so the trainer never re-runs a forward pass.
//!
//! Batch semantics: span slots are averaged over ALL slots in the batch,
//! masked-token positions over ALL labeled positions in the batch. Callers
//! therefore pass the reciprocal of the batch-wide count into the
//! per-instance functions.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::encoder::EncoderOutput;
use crate::model::store::TensorStore;
use crate::model::{Model, Scalar};

/// Temperature the contrastive similarity is divided by.
pub const CACR_TAU: f64 = 20.0;

/// Which loss terms participate in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossFlags {
    pub clism: bool,
    pub cacr: bool,
    pub mlm: bool,
}

impl LossFlags {
    pub fn all() -> Self {
        Self {
            clism: true,
            cacr: true,
            mlm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.clism && !self.cacr && !self.mlm {
            return Err(Error::NoObjectiveEnabled);
        }
        Ok(())
    }
}

/// Per-batch loss breakdown. Disabled terms stay at zero.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct LossReport {
    pub l_clism: f64,
    pub l_cacr: f64,
    pub l_mlm: f64,
    pub l_total: f64,
    /// Query slots contributing to `l_clism`.
    pub slots: usize,
    /// Labeled positions contributing to `l_mlm`.
    pub labeled: usize,
}

impl LossReport {
    pub fn finish(&mut self, flags: LossFlags) {
        let mut t = 0.0;
        if flags.clism {
            t += self.l_clism;
        }
        if flags.cacr {
            t += self.l_cacr;
        }
        if flags.mlm {
            t += self.l_mlm;
        }
        self.l_total = t;
    }
}

/// Gold span for one query slot: the query position and the answer's
/// inclusive start/end positions in the packed sequence.
#[derive(Debug, Clone, Copy)]
pub struct SlotTarget {
    pub q: usize,
    pub start: usize,
    pub end: usize,
}

/// Max and exp-sum (relative to max) over finite entries. The caller must
/// guarantee at least one finite entry.
fn softmax_stats<F: Scalar>(logits: &Array1<F>) -> (F, F) {
    let mut max = F::neg_infinity();
    for &v in logits.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = F::zero();
    for &v in logits.iter() {
        if v > F::neg_infinity() {
            sum += (v - max).exp();
        }
    }
    (max, sum)
}

/// Cross-entropy of `gold` under softmax(logits), plus d(ce·scale)/dlogits.
/// −∞ logits get probability (and gradient) exactly zero.
pub(crate) fn ce_and_grad<F: Scalar>(logits: &Array1<F>, gold: usize, scale: F) -> (F, Array1<F>) {
    let (max, sum) = softmax_stats(logits);
    let ce = -(logits[gold] - max - sum.ln());
    let mut d = Array1::zeros(logits.len());
    for (k, &v) in logits.iter().enumerate() {
        if v > F::neg_infinity() {
            d[k] = (v - max).exp() / sum * scale;
        }
    }
    d[gold] -= scale;
    (ce, d)
}

/// Span-prediction loss for one instance's query slots. Each slot adds
/// `(ce_start + ce_end) · inv_total_slots` to the returned partial loss;
/// gradients flow into `d_hidden` and the span projection matrices.
pub fn clism_instance<F: Scalar>(
    model: &Model<F>,
    out: &EncoderOutput<F>,
    slots: &[SlotTarget],
    inv_total_slots: F,
    d_hidden: &mut Array2<F>,
    grads: &mut TensorStore<F>,
) -> Result<F> {
    let l = out.hidden.nrows();
    let mut partial = F::zero();
    for t in slots {
        for pos in [t.start, t.end] {
            if pos >= l || !out.mask[pos] {
                return Err(Error::PositionOutOfRange { pos, len: l });
            }
        }
        let slot = model.span_slot(out, t.q)?;
        let (ce_s, d_start) = ce_and_grad(&slot.start_logits, t.start, inv_total_slots);
        let (ce_e, d_end) = ce_and_grad(&slot.end_logits, t.end, inv_total_slots);
        partial += (ce_s + ce_e) * inv_total_slots;
        model.span_slot_backward(out, &slot, &d_start, &d_end, d_hidden, grads);
    }
    Ok(partial)
}

/// Masked-token recovery loss for one instance. `labels[k] < 0` means
/// position k is unlabeled. Each labeled position adds
/// `ce · inv_total_labeled`; gradients flow into `d_hidden`, the tied token
/// embeddings, and the vocabulary bias.
pub fn mlm_instance<F: Scalar>(
    model: &Model<F>,
    out: &EncoderOutput<F>,
    labels: &[i64],
    inv_total_labeled: F,
    d_hidden: &mut Array2<F>,
    grads: &mut TensorStore<F>,
) -> Result<F> {
    if labels.len() != out.hidden.nrows() {
        return Err(Error::CorruptInstance(format!(
            "{} labels for {} positions",
            labels.len(),
            out.hidden.nrows()
        )));
    }
    let vocab = model.config.vocab_size;
    let mut partial = F::zero();
    for (k, &label) in labels.iter().enumerate() {
        if label < 0 {
            continue;
        }
        let gold = label as usize;
        if gold >= vocab {
            return Err(Error::CorruptInstance(format!(
                "label {gold} outside vocabulary of {vocab}"
            )));
        }
        let logits = model.vocab_logits_at(&out.hidden, k);
        let (ce, d_logits) = ce_and_grad(&logits, gold, inv_total_labeled);
        partial += ce * inv_total_labeled;
        model.vocab_logits_backward_at(&out.hidden, k, &d_logits, d_hidden, grads);
    }
    Ok(partial)
}

fn unit_and_norm<F: Scalar>(v: &Array1<F>) -> Result<(Array1<F>, F)> {
    let norm = v.iter().fold(F::zero(), |s, &x| s + x * x).sqrt();
    if norm == F::zero() {
        return Err(Error::ZeroNormVector);
    }
    Ok((v.mapv(|x| x / norm), norm))
}

/// One InfoNCE term: anchor i is scored against every candidate, with the
/// i-th candidate as the positive. Similarity is cosine divided by `tau`.
/// Returns the mean over anchors and accumulates gradients w.r.t. both
/// vector lists. Fewer than two pairs give exactly zero.
pub fn contrastive_term<F: Scalar>(
    anchors: &[Array1<F>],
    candidates: &[Array1<F>],
    tau: F,
    d_anchors: &mut [Array1<F>],
    d_candidates: &mut [Array1<F>],
) -> Result<F> {
    let b = anchors.len();
    assert_eq!(b, candidates.len());
    assert_eq!(b, d_anchors.len());
    assert_eq!(b, d_candidates.len());
    if b < 2 {
        return Ok(F::zero());
    }
    let mut units_a = Vec::with_capacity(b);
    let mut units_c = Vec::with_capacity(b);
    for i in 0..b {
        units_a.push(unit_and_norm(&anchors[i])?);
        units_c.push(unit_and_norm(&candidates[i])?);
    }
    let bf = F::from_f64(b as f64);
    let mut loss = F::zero();
    for i in 0..b {
        let (u, a_norm) = &units_a[i];
        let cos: Vec<F> = (0..b).map(|j| u.dot(&units_c[j].0)).collect();
        let sims = Array1::from_iter(cos.iter().map(|&c| c / tau));
        let (max, sum) = softmax_stats(&sims);
        loss += (-(sims[i] - max - sum.ln())) / bf;
        for j in 0..b {
            let p = (sims[j] - max).exp() / sum;
            let g = (p - if i == j { F::one() } else { F::zero() }) / (bf * tau);
            if g == F::zero() {
                continue;
            }
            let (w, c_norm) = &units_c[j];
            // d cos(a,c)/da = (ĉ − cos·â)/|a|, symmetrically for c.
            for k in 0..u.len() {
                d_anchors[i][k] += g * (w[k] - cos[j] * u[k]) / *a_norm;
                d_candidates[j][k] += g * (u[k] - cos[j] * w[k]) / *c_norm;
            }
        }
    }
    Ok(loss)
}

/// Gradients w.r.t. the three pooled views of every batch item.
#[derive(Debug)]
pub struct CacrGrads<F> {
    pub masked_src: Vec<Array1<F>>,
    pub target: Vec<Array1<F>>,
    pub clean_src: Vec<Array1<F>>,
}

/// Threefold consistency loss over pooled sentence vectors: target↔masked
/// source, clean source↔masked source, and target↔clean source, each an
/// InfoNCE term whose candidate set is the second view across the batch.
pub fn cacr_forward_backward<F: Scalar>(
    masked_src: &[Array1<F>],
    target: &[Array1<F>],
    clean_src: &[Array1<F>],
    tau: F,
) -> Result<(F, CacrGrads<F>)> {
    let b = masked_src.len();
    assert_eq!(b, target.len());
    assert_eq!(b, clean_src.len());
    let zero_like = |vs: &[Array1<F>]| -> Vec<Array1<F>> {
        vs.iter().map(|v| Array1::zeros(v.len())).collect()
    };
    let mut grads = CacrGrads {
        masked_src: zero_like(masked_src),
        target: zero_like(target),
        clean_src: zero_like(clean_src),
    };
    if b < 2 {
        return Ok((F::zero(), grads));
    }
    let mut loss = contrastive_term(target, masked_src, tau, &mut grads.target, &mut grads.masked_src)?;
    loss += contrastive_term(
        clean_src,
        masked_src,
        tau,
        &mut grads.clean_src,
        &mut grads.masked_src,
    )?;
    loss += contrastive_term(target, clean_src, tau, &mut grads.target, &mut grads.clean_src)?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const D: usize = 16;

    fn model() -> Model<f64> {
        Model::<f64>::init(ModelConfig::grad_check(30), 11).unwrap()
    }

    fn fake_output(hidden: Array2<f64>, mask: Vec<bool>) -> EncoderOutput<f64> {
        let l = hidden.nrows();
        EncoderOutput {
            hidden,
            mask,
            source: 0..l,
            target: None,
        }
    }

    #[test]
    fn flags_require_at_least_one_objective() {
        assert!(LossFlags::all().validate().is_ok());
        let none = LossFlags {
            clism: false,
            cacr: false,
            mlm: false,
        };
        assert!(matches!(
            none.validate().unwrap_err(),
            Error::NoObjectiveEnabled
        ));
    }

    // Zeroed projections make every span logit 0, so the distribution over
    // 10 live positions is uniform and start+end cost exactly 2·ln 10.
    #[test]
    fn uniform_ten_positions_costs_two_ln_ten() {
        let mut m = model();
        m.params.view2_mut("span.w_start").fill(0.0);
        m.params.view2_mut("span.w_end").fill(0.0);
        let hidden = Array2::from_shape_fn((10, D), |(i, j)| ((i + j) as f64 * 0.21).cos());
        let out = fake_output(hidden, vec![true; 10]);
        let slots = [SlotTarget {
            q: 0,
            start: 3,
            end: 5,
        }];
        let mut dh = Array2::zeros((10, D));
        let mut g = m.grad_store();
        let loss = clism_instance(&m, &out, &slots, 1.0, &mut dh, &mut g).unwrap();
        assert!((loss - 2.0 * 10f64.ln()).abs() < 1e-12);
    }

    // Averaging a uniform-10 slot with a single-live-position slot (whose
    // cost is exactly zero) halves the loss to ln 10.
    #[test]
    fn slot_average_mixes_certain_and_uniform() {
        let mut m = model();
        m.params.view2_mut("span.w_start").fill(0.0);
        m.params.view2_mut("span.w_end").fill(0.0);
        let mut dh1 = Array2::zeros((10, D));
        let mut dh2 = Array2::zeros((4, D));
        let mut g = m.grad_store();

        let out1 = fake_output(Array2::from_elem((10, D), 0.4), vec![true; 10]);
        let slots1 = [SlotTarget {
            q: 1,
            start: 0,
            end: 9,
        }];
        let l1 = clism_instance(&m, &out1, &slots1, 0.5, &mut dh1, &mut g).unwrap();

        let mut mask2 = vec![false; 4];
        mask2[2] = true;
        let out2 = fake_output(Array2::from_elem((4, D), 0.4), mask2);
        let slots2 = [SlotTarget {
            q: 2,
            start: 2,
            end: 2,
        }];
        let l2 = clism_instance(&m, &out2, &slots2, 0.5, &mut dh2, &mut g).unwrap();

        assert_eq!(l2, 0.0);
        assert!((l1 + l2 - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gold_at_padded_position_is_error() {
        let m = model();
        let out = fake_output(
            Array2::from_elem((5, D), 0.1),
            vec![true, true, true, true, false],
        );
        let slots = [SlotTarget {
            q: 0,
            start: 1,
            end: 4,
        }];
        let mut dh = Array2::zeros((5, D));
        let mut g = m.grad_store();
        assert!(matches!(
            clism_instance(&m, &out, &slots, 1.0, &mut dh, &mut g).unwrap_err(),
            Error::PositionOutOfRange { pos: 4, len: 5 }
        ));
    }

    #[test]
    fn clism_gradients_match_finite_difference() {
        let mut m = model();
        let hidden = Array2::from_shape_fn((6, D), |(i, j)| ((i * 3 + j) as f64 * 0.19).sin());
        let mask = vec![true, true, true, true, true, false];
        let slots = [
            SlotTarget {
                q: 1,
                start: 3,
                end: 4,
            },
            SlotTarget {
                q: 2,
                start: 0,
                end: 0,
            },
        ];
        let eval = |m: &Model<f64>, hidden: &Array2<f64>| {
            let out = fake_output(hidden.clone(), mask.clone());
            let mut dh = Array2::zeros((6, D));
            let mut g = m.grad_store();
            clism_instance(m, &out, &slots, 0.5, &mut dh, &mut g).unwrap()
        };

        let out = fake_output(hidden.clone(), mask.clone());
        let mut dh = Array2::zeros((6, D));
        let mut g = m.grad_store();
        clism_instance(&m, &out, &slots, 0.5, &mut dh, &mut g).unwrap();

        let h = 1e-6;
        let spec = m.params.layout().spec("span.w_end").unwrap().clone();
        for idx in [0, 33, D * D - 1] {
            let flat = spec.offset + idx;
            let orig = m.params.data()[flat];
            m.params.data_mut()[flat] = orig + h;
            let fp = eval(&m, &hidden);
            m.params.data_mut()[flat] = orig - h;
            let fm = eval(&m, &hidden);
            m.params.data_mut()[flat] = orig;
            let fd = (fp - fm) / (2.0 * h);
            assert!((g.data()[flat] - fd).abs() < 1e-7, "w_end[{idx}]");
        }
        let mut hm = hidden.clone();
        for (t, j) in [(0, 2), (1, 7), (4, 15)] {
            let orig = hm[(t, j)];
            hm[(t, j)] = orig + h;
            let fp = eval(&m, &hm);
            hm[(t, j)] = orig - h;
            let fm = eval(&m, &hm);
            hm[(t, j)] = orig;
            let fd = (fp - fm) / (2.0 * h);
            assert!((dh[(t, j)] - fd).abs() < 1e-7, "hidden[{t},{j}]");
        }
    }

    // Zero hidden state and zero bias leave a uniform distribution over the
    // whole vocabulary: cost is exactly ln(vocab).
    #[test]
    fn mlm_uniform_costs_ln_vocab() {
        let mut m = model();
        m.params.view1_mut("mlm.bias").fill(0.0);
        let out = fake_output(Array2::zeros((4, D)), vec![true; 4]);
        let labels = vec![-1, 9, -1, -1];
        let mut dh = Array2::zeros((4, D));
        let mut g = m.grad_store();
        let loss = mlm_instance(&m, &out, &labels, 1.0, &mut dh, &mut g).unwrap();
        assert!((loss - 30f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mlm_no_labels_is_zero_and_touches_nothing() {
        let m = model();
        let out = fake_output(Array2::from_elem((3, D), 0.2), vec![true; 3]);
        let mut dh = Array2::zeros((3, D));
        let mut g = m.grad_store();
        let loss = mlm_instance(&m, &out, &[-1, -1, -1], 1.0, &mut dh, &mut g).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        assert!(dh.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mlm_rejects_bad_labels() {
        let m = model();
        let out = fake_output(Array2::zeros((2, D)), vec![true; 2]);
        let mut dh = Array2::zeros((2, D));
        let mut g = m.grad_store();
        assert!(mlm_instance(&m, &out, &[99, -1], 1.0, &mut dh, &mut g).is_err());
        assert!(mlm_instance(&m, &out, &[1], 1.0, &mut dh, &mut g).is_err());
    }

    #[test]
    fn mlm_gradients_match_finite_difference() {
        let mut m = model();
        let hidden = Array2::from_shape_fn((3, D), |(i, j)| ((i * 5 + j) as f64 * 0.23).cos());
        let labels = vec![-1, 7, 20];
        let eval = |m: &Model<f64>, hidden: &Array2<f64>| {
            let out = fake_output(hidden.clone(), vec![true; 3]);
            let mut dh = Array2::zeros((3, D));
            let mut g = m.grad_store();
            mlm_instance(m, &out, &labels, 0.5, &mut dh, &mut g).unwrap()
        };
        let out = fake_output(hidden.clone(), vec![true; 3]);
        let mut dh = Array2::zeros((3, D));
        let mut g = m.grad_store();
        mlm_instance(&m, &out, &labels, 0.5, &mut dh, &mut g).unwrap();

        let h = 1e-6;
        for (name, idx) in [("embed.token", 7 * D + 3), ("mlm.bias", 7), ("mlm.bias", 0)] {
            let flat = m.params.layout().spec(name).unwrap().offset + idx;
            let orig = m.params.data()[flat];
            m.params.data_mut()[flat] = orig + h;
            let fp = eval(&m, &hidden);
            m.params.data_mut()[flat] = orig - h;
            let fm = eval(&m, &hidden);
            m.params.data_mut()[flat] = orig;
            let fd = (fp - fm) / (2.0 * h);
            assert!((g.data()[flat] - fd).abs() < 1e-7, "{name}[{idx}]");
        }
        let mut hm = hidden.clone();
        for (t, j) in [(1, 0), (2, 9)] {
            let orig = hm[(t, j)];
            hm[(t, j)] = orig + h;
            let fp = eval(&m, &hm);
            hm[(t, j)] = orig - h;
            let fm = eval(&m, &hm);
            hm[(t, j)] = orig;
            let fd = (fp - fm) / (2.0 * h);
            assert!((dh[(t, j)] - fd).abs() < 1e-7, "hidden[{t},{j}]");
        }
    }

    fn basis(k: usize, d: usize) -> Array1<f64> {
        let mut v = Array1::zeros(d);
        v[k] = 1.0;
        v
    }

    // Two orthogonal pairs with perfectly matched views: every anchor has
    // similarity 1/τ with its positive and 0 with the other candidate, so
    // each anchor costs ln(1 + e^(−1/τ)).
    #[test]
    fn contrastive_two_orthogonal_pairs_frozen_value() {
        let a = vec![basis(0, 4), basis(1, 4)];
        let c = vec![basis(0, 4), basis(1, 4)];
        let mut da = vec![Array1::zeros(4), Array1::zeros(4)];
        let mut dc = vec![Array1::zeros(4), Array1::zeros(4)];
        let loss = contrastive_term(&a, &c, 20.0, &mut da, &mut dc).unwrap();
        let expect = (1.0 + (-1.0f64 / 20.0).exp()).ln();
        assert!((loss - expect).abs() < 1e-12, "{loss} vs {expect}");
    }

    #[test]
    fn contrastive_single_pair_is_exactly_zero() {
        let a = vec![basis(0, 4)];
        let c = vec![basis(1, 4)];
        let mut da = vec![Array1::zeros(4)];
        let mut dc = vec![Array1::zeros(4)];
        let loss = contrastive_term(&a, &c, 20.0, &mut da, &mut dc).unwrap();
        assert_eq!(loss, 0.0);
        assert!(da[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn contrastive_rejects_zero_vector() {
        let a = vec![basis(0, 4), Array1::zeros(4)];
        let c = vec![basis(0, 4), basis(1, 4)];
        let mut da = vec![Array1::zeros(4), Array1::zeros(4)];
        let mut dc = vec![Array1::zeros(4), Array1::zeros(4)];
        assert!(matches!(
            contrastive_term(&a, &c, 20.0, &mut da, &mut dc).unwrap_err(),
            Error::ZeroNormVector
        ));
    }

    #[test]
    fn contrastive_gradients_match_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 5;
        let b = 3;
        let mut mk = |scale: f64| -> Vec<Array1<f64>> {
            (0..b)
                .map(|_| Array1::from_shape_fn(d, |_| rng.random::<f64>() * scale - scale / 2.0))
                .collect()
        };
        let anchors = mk(2.0);
        let candidates = mk(1.5);
        let mut da = vec![Array1::zeros(d); b];
        let mut dc = vec![Array1::zeros(d); b];
        contrastive_term(&anchors, &candidates, 20.0, &mut da, &mut dc).unwrap();

        let h = 1e-6;
        let eval = |a: &Vec<Array1<f64>>, c: &Vec<Array1<f64>>| {
            let mut za = vec![Array1::zeros(d); b];
            let mut zc = vec![Array1::zeros(d); b];
            contrastive_term(a, c, 20.0, &mut za, &mut zc).unwrap()
        };
        for i in 0..b {
            for k in 0..d {
                let mut ap = anchors.clone();
                ap[i][k] += h;
                let mut am = anchors.clone();
                am[i][k] -= h;
                let fd = (eval(&ap, &candidates) - eval(&am, &candidates)) / (2.0 * h);
                assert!((da[i][k] - fd).abs() < 1e-9, "anchor[{i}][{k}]");

                let mut cp = candidates.clone();
                cp[i][k] += h;
                let mut cm = candidates.clone();
                cm[i][k] -= h;
                let fd = (eval(&anchors, &cp) - eval(&anchors, &cm)) / (2.0 * h);
                assert!((dc[i][k] - fd).abs() < 1e-9, "cand[{i}][{k}]");
            }
        }
    }

    // All three views identical and orthogonal across the batch: each of the
    // three terms hits the frozen two-pair value.
    #[test]
    fn threefold_consistency_frozen_value() {
        let views = vec![basis(0, 6), basis(3, 6)];
        let (loss, grads) =
            cacr_forward_backward(&views, &views, &views, CACR_TAU).unwrap();
        let expect = 3.0 * (1.0 + (-1.0f64 / CACR_TAU).exp()).ln();
        assert!((loss - expect).abs() < 1e-12, "{loss} vs {expect}");
        assert_eq!(grads.masked_src.len(), 2);
    }

    #[test]
    fn threefold_consistency_single_item_is_zero() {
        let views = vec![basis(0, 6)];
        let (loss, grads) = cacr_forward_backward(&views, &views, &views, CACR_TAU).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.target[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn threefold_gradients_match_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = 4;
        let b = 3;
        let mut mk = || -> Vec<Array1<f64>> {
            (0..b)
                .map(|_| Array1::from_shape_fn(d, |_| rng.random::<f64>() * 2.0 - 1.0))
                .collect()
        };
        let (ms, tg, cs) = (mk(), mk(), mk());
        let (_, grads) = cacr_forward_backward(&ms, &tg, &cs, CACR_TAU).unwrap();
        let eval = |ms: &Vec<Array1<f64>>, tg: &Vec<Array1<f64>>, cs: &Vec<Array1<f64>>| {
            cacr_forward_backward(ms, tg, cs, CACR_TAU).unwrap().0
        };
        let h = 1e-6;
        for i in 0..b {
            for k in 0..d {
                let mut p = ms.clone();
                p[i][k] += h;
                let mut m = ms.clone();
                m[i][k] -= h;
                let fd = (eval(&p, &tg, &cs) - eval(&m, &tg, &cs)) / (2.0 * h);
                assert!((grads.masked_src[i][k] - fd).abs() < 1e-9, "masked[{i}][{k}]");

                let mut p = tg.clone();
                p[i][k] += h;
                let mut m = tg.clone();
                m[i][k] -= h;
                let fd = (eval(&ms, &p, &cs) - eval(&ms, &m, &cs)) / (2.0 * h);
                assert!((grads.target[i][k] - fd).abs() < 1e-9, "target[{i}][{k}]");

                let mut p = cs.clone();
                p[i][k] += h;
                let mut m = cs.clone();
                m[i][k] -= h;
                let fd = (eval(&ms, &tg, &p) - eval(&ms, &tg, &m)) / (2.0 * h);
                assert!((grads.clean_src[i][k] - fd).abs() < 1e-9, "clean[{i}][{k}]");
            }
        }
    }

    #[test]
    fn report_totals_respect_flags() {
        let mut r = LossReport {
            l_clism: 1.0,
            l_cacr: 2.0,
            l_mlm: 4.0,
            ..Default::default()
        };
        r.finish(LossFlags::all());
        assert_eq!(r.l_total, 7.0);
        r.finish(LossFlags {
            clism: true,
            cacr: false,
            mlm: true,
        });
        assert_eq!(r.l_total, 5.0);
    }
}
