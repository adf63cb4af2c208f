//! Output heads on top of the encoder: the bilinear span head, the
//! vocabulary head tied to the token embeddings, and mean pooling.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::model::encoder::EncoderOutput;
use crate::model::store::TensorStore;
use crate::model::{Model, Scalar};

/// One query slot's span distributions. Logits at padded positions are −∞ so
/// they vanish under softmax.
#[derive(Debug, Clone)]
pub struct SpanSlot<F> {
    pub q: usize,
    pub start_logits: Array1<F>,
    pub end_logits: Array1<F>,
    s_q: Array1<F>,
    e_q: Array1<F>,
}

/// Which encoded sentence to pool over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Source,
    Target,
}

impl<F: Scalar> Model<F> {
    /// Start/end pointer logits for the query at position `q`: the query's
    /// hidden state is projected twice (start and end queries), then dotted
    /// against every position's hidden state.
    pub fn span_slot(&self, out: &EncoderOutput<F>, q: usize) -> Result<SpanSlot<F>> {
        let l = out.hidden.nrows();
        if q >= l || !out.mask[q] {
            return Err(Error::PositionOutOfRange { pos: q, len: l });
        }
        let x_q = out.hidden.row(q);
        let s_q = self.params.view2("span.w_start").dot(&x_q);
        let e_q = self.params.view2("span.w_end").dot(&x_q);
        let mut start_logits = out.hidden.dot(&s_q);
        let mut end_logits = out.hidden.dot(&e_q);
        for (k, &m) in out.mask.iter().enumerate() {
            if !m {
                start_logits[k] = F::neg_infinity();
                end_logits[k] = F::neg_infinity();
            }
        }
        Ok(SpanSlot {
            q,
            start_logits,
            end_logits,
            s_q,
            e_q,
        })
    }

    /// Backward of `span_slot`. `d_start`/`d_end` are gradients w.r.t. the
    /// logits and must be zero at padded positions.
    pub fn span_slot_backward(
        &self,
        out: &EncoderOutput<F>,
        slot: &SpanSlot<F>,
        d_start: &Array1<F>,
        d_end: &Array1<F>,
        d_hidden: &mut Array2<F>,
        grads: &mut TensorStore<F>,
    ) {
        let x_q = out.hidden.row(slot.q).to_owned();
        for (name, proj, dz) in [
            ("span.w_start", &slot.s_q, d_start),
            ("span.w_end", &slot.e_q, d_end),
        ] {
            // logits = H proj ⇒ dH += dz projᵀ, dproj = Hᵀ dz
            for (k, &g) in dz.iter().enumerate() {
                if g != F::zero() {
                    let mut row = d_hidden.row_mut(k);
                    row.scaled_add(g, proj);
                }
            }
            let dproj = out.hidden.t().dot(dz);
            // proj = W x_q ⇒ dW += dproj x_qᵀ, dx_q += Wᵀ dproj
            let dw = dproj
                .view()
                .insert_axis(Axis(1))
                .dot(&x_q.view().insert_axis(Axis(0)));
            grads.add2(name, &dw.view());
            let dxq = self.params.view2(name).t().dot(&dproj);
            let mut row = d_hidden.row_mut(slot.q);
            row += &dxq;
        }
    }

    /// Vocabulary logits at one position, tied to the token embedding matrix
    /// plus a per-token bias.
    pub fn vocab_logits_at(&self, hidden: &Array2<F>, k: usize) -> Array1<F> {
        let h_k = hidden.row(k);
        let mut logits = self.params.view2("embed.token").dot(&h_k);
        logits += &self.params.view1("mlm.bias");
        logits
    }

    /// Backward of `vocab_logits_at` given dL/dlogits.
    pub fn vocab_logits_backward_at(
        &self,
        hidden: &Array2<F>,
        k: usize,
        d_logits: &Array1<F>,
        d_hidden: &mut Array2<F>,
        grads: &mut TensorStore<F>,
    ) {
        let h_k = hidden.row(k).to_owned();
        let dh = self.params.view2("embed.token").t().dot(d_logits);
        {
            let mut row = d_hidden.row_mut(k);
            row += &dh;
        }
        let de = d_logits
            .view()
            .insert_axis(Axis(1))
            .dot(&h_k.view().insert_axis(Axis(0)));
        grads.add2("embed.token", &de.view());
        grads.add1("mlm.bias", &d_logits.view());
    }
}

/// Mean of the hidden rows belonging to one sentence.
pub fn pool<F: Scalar>(out: &EncoderOutput<F>, segment: Segment) -> Result<Array1<F>> {
    let range = match segment {
        Segment::Source => out.source.clone(),
        Segment::Target => out
            .target
            .clone()
            .ok_or_else(|| Error::Config("no target segment to pool".into()))?,
    };
    let rows: Vec<usize> = range.filter(|&t| out.mask[t]).collect();
    if rows.is_empty() {
        return Err(Error::Config("cannot pool an empty segment".into()));
    }
    let d = out.hidden.ncols();
    let mut acc = Array1::zeros(d);
    for &t in &rows {
        acc += &out.hidden.row(t);
    }
    let n = F::from_f64(rows.len() as f64);
    acc.mapv_inplace(|v| v / n);
    Ok(acc)
}

/// Backward of `pool`: spreads dL/dr evenly over the pooled rows.
pub fn pool_backward<F: Scalar>(
    out: &EncoderOutput<F>,
    segment: Segment,
    d_vec: &Array1<F>,
    d_hidden: &mut Array2<F>,
) {
    let range = match segment {
        Segment::Source => out.source.clone(),
        Segment::Target => match out.target.clone() {
            Some(r) => r,
            None => return,
        },
    };
    let rows: Vec<usize> = range.filter(|&t| out.mask[t]).collect();
    if rows.is_empty() {
        return;
    }
    let inv_n = F::from_f64(1.0 / rows.len() as f64);
    for &t in &rows {
        let mut row = d_hidden.row_mut(t);
        row.scaled_add(inv_n, d_vec);
    }
}
