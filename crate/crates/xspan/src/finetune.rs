//! Fine-tuning a pre-trained checkpoint on extractive QA and BIO tagging,
//! plus the matching evaluation passes.
//!
//! QA inputs pack question and passage as [CLS] Q [QUE] [SEP] P [SEP]; the
//! [QUE] hidden state drives the same start/end scorer used in pre-training,
//! so its projections transfer directly. An ablation flag omits [QUE] and
//! scores from [CLS] instead. Tagging adds a fresh linear head over the
//! encoder output.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{bio_spans, repair_bio, LabeledSpan, QaRecord, TaggedSentence};
use crate::error::{Error, Result};
use crate::metrics::{exact_match, predict_span, span_f1, MAX_ANSWER_TOKENS};
use crate::model::encoder::{DropoutPlan, EncoderOutput, ForwardCache, SegmentSpec};
use crate::model::store::TensorStore;
use crate::model::{Model, Scalar};
use crate::objectives::{ce_and_grad, clism_instance, SlotTarget};
use crate::optim::{Adam, AdamHyper};
use crate::util::{derive_seed, read_json, write_json};
use crate::vocab::{Vocabulary, CLS, QUE, SEP};

const EPOCH_STREAM: u64 = 0x4650_4f43;
const DROPOUT_STREAM: u64 = 0x4644_524f;
const REINIT_STREAM: u64 = 0x5245_494e;
const TAGGER_STREAM: u64 = 0x5441_4747;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// When set, train for exactly this many optimizer steps instead of
    /// whole epochs (the few-shot protocol).
    pub steps: Option<usize>,
    pub max_len: usize,
    pub seed: u64,
    /// Append [QUE] after the question (QA only); scoring falls back to the
    /// [CLS] state when off.
    pub use_que: bool,
    /// Re-draw the span projections instead of reusing pre-trained ones.
    pub reinit_span_head: bool,
    pub clip_norm: Option<f64>,
}

impl FinetuneConfig {
    pub fn qa_reference(seed: u64) -> Self {
        Self {
            lr: 3e-5,
            batch_size: 32,
            epochs: 5,
            steps: None,
            max_len: 384,
            seed,
            use_que: true,
            reinit_span_head: false,
            clip_norm: Some(1.0),
        }
    }

    // The desk model is ~4 orders of magnitude smaller than the reference
    // encoder; it tolerates (and needs) a much hotter fine-tuning rate —
    // the same one the desk pre-training preset uses.
    pub fn qa_desk(seed: u64) -> Self {
        Self {
            lr: 3e-4,
            batch_size: 8,
            max_len: 256,
            ..Self::qa_reference(seed)
        }
    }

    pub fn ner_reference(seed: u64) -> Self {
        Self {
            lr: 5e-5,
            max_len: 128,
            ..Self::qa_reference(seed)
        }
    }

    pub fn ner_desk(seed: u64) -> Self {
        Self {
            lr: 1e-4,
            batch_size: 8,
            max_len: 128,
            ..Self::qa_reference(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_len < 8 {
            return Err(Error::Config("batch size or max length too small".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.epochs == 0 && self.steps.is_none() {
            return Err(Error::Config("either epochs or steps must be positive".into()));
        }
        if matches!(self.steps, Some(0)) {
            return Err(Error::Config("step count must be positive when set".into()));
        }
        Ok(())
    }
}

/// One packed QA example.
#[derive(Debug, Clone)]
pub struct QaInput {
    pub id: String,
    pub input_ids: Vec<u32>,
    /// Position of [QUE]; None in the no-[QUE] ablation ([CLS] scores).
    pub que_position: Option<usize>,
    pub passage_range: Range<usize>,
    /// Whitespace tokens of the kept passage, for mapping predictions back
    /// to text.
    pub passage_tokens: Vec<String>,
    /// Gold (start, end) in sequence positions; None when truncation cut the
    /// answer off.
    pub gold_positions: Option<(usize, usize)>,
    pub gold_text: String,
}

impl QaInput {
    /// Query position the span scorer reads from.
    pub fn query_pos(&self) -> usize {
        self.que_position.unwrap_or(0)
    }
}

/// Packs one record. The passage is truncated to fit `max_len`; a question
/// so long that no passage fits yields None.
pub fn build_qa_input(
    record: &QaRecord,
    vocab: &Vocabulary,
    max_len: usize,
    use_que: bool,
) -> Option<QaInput> {
    let q_ids = vocab.tokenize(&record.question);
    let p_tokens = crate::vocab::whitespace_tokens(&record.context);
    let overhead = 3 + usize::from(use_que); // [CLS], [SEP], [SEP], maybe [QUE]
    let budget = max_len.checked_sub(overhead + q_ids.len())?;
    if budget == 0 {
        return None;
    }
    let keep = p_tokens.len().min(budget);

    let mut input_ids = Vec::with_capacity(overhead + q_ids.len() + keep);
    input_ids.push(CLS);
    input_ids.extend_from_slice(&q_ids);
    let que_position = use_que.then(|| {
        input_ids.push(QUE);
        input_ids.len() - 1
    });
    input_ids.push(SEP);
    let base = input_ids.len();
    for t in &p_tokens[..keep] {
        input_ids.push(vocab.id(t).unwrap_or(crate::vocab::UNK));
    }
    input_ids.push(SEP);

    let span = &record.answer_span;
    let gold_positions = (span.end < keep).then(|| (base + span.start, base + span.end));
    Some(QaInput {
        id: record.id.clone(),
        input_ids,
        que_position,
        passage_range: base..base + keep,
        passage_tokens: p_tokens[..keep].to_vec(),
        gold_positions,
        gold_text: record.answer_text.clone(),
    })
}

/// Packs a whole training set, dropping examples whose gold span was
/// truncated away (their count is reported).
pub fn prepare_qa_training(
    records: &[QaRecord],
    vocab: &Vocabulary,
    max_len: usize,
    use_que: bool,
) -> (Vec<QaInput>, usize) {
    let mut inputs = Vec::with_capacity(records.len());
    let mut dropped = 0;
    for r in records {
        match build_qa_input(r, vocab, max_len, use_que) {
            Some(input) if input.gold_positions.is_some() => inputs.push(input),
            _ => dropped += 1,
        }
    }
    (inputs, dropped)
}

#[derive(Debug, Clone, Serialize)]
pub struct FinetuneSummary {
    pub steps: usize,
    pub train_examples: usize,
    pub dropped: usize,
    pub final_loss: f64,
}

fn forward_qa<F: Scalar>(
    model: &Model<F>,
    input: &QaInput,
    dropout: Option<&DropoutPlan>,
) -> Result<(EncoderOutput<F>, ForwardCache<F>)> {
    let mask = vec![true; input.input_ids.len()];
    model.forward(
        &input.input_ids,
        &mask,
        SegmentSpec {
            source: input.passage_range.clone(),
            target: None,
        },
        dropout,
    )
}

fn dropout_plan_for<F: Scalar>(model: &Model<F>, seed: u64, stream: u64) -> Option<DropoutPlan> {
    (model.config.dropout > 0.0).then(|| DropoutPlan {
        rate: model.config.dropout,
        seed: derive_seed(seed, stream),
    })
}

/// Iterates seeded epoch shuffles, yielding index batches until `total`
/// steps have been produced.
fn batch_schedule(n: usize, batch_size: usize, total: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut batches = Vec::with_capacity(total);
    let mut epoch = 0u64;
    'outer: loop {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, EPOCH_STREAM), epoch));
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            if batches.len() == total {
                break 'outer;
            }
            batches.push(chunk.to_vec());
        }
        epoch += 1;
    }
    batches
}

fn reinit_span_head(model: &mut Model<f32>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, REINIT_STREAM));
    for name in ["span.w_start", "span.w_end"] {
        for v in model.params.view2_mut(name).iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = (z * 0.02) as f32;
        }
    }
}

/// Fine-tunes the span scorer on QA data with the pre-training loss applied
/// to the single gold slot per example.
pub fn finetune_qa(
    model: &mut Model<f32>,
    records: &[QaRecord],
    vocab: &Vocabulary,
    cfg: &FinetuneConfig,
) -> Result<FinetuneSummary> {
    cfg.validate()?;
    let max_len = cfg.max_len.min(model.config.max_len);
    let (inputs, dropped) = prepare_qa_training(records, vocab, max_len, cfg.use_que);
    if inputs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if cfg.reinit_span_head {
        reinit_span_head(model, cfg.seed);
    }
    let n = inputs.len();
    let total_steps = cfg
        .steps
        .unwrap_or_else(|| cfg.epochs * n.div_ceil(cfg.batch_size));
    let schedule = batch_schedule(n, cfg.batch_size, total_steps, cfg.seed);

    let mut opt = Adam::new(
        model.params.layout_arc(),
        AdamHyper {
            clip_norm: cfg.clip_norm,
            ..AdamHyper::default()
        },
    );
    let mut final_loss = 0.0;
    for (step, batch) in schedule.iter().enumerate() {
        let drop_seed = derive_seed(derive_seed(cfg.seed, DROPOUT_STREAM), step as u64);
        let encoded: Vec<(EncoderOutput<f32>, ForwardCache<f32>)> = batch
            .par_iter()
            .enumerate()
            .map(|(i, &idx)| {
                let plan = dropout_plan_for(model, drop_seed, i as u64);
                forward_qa(model, &inputs[idx], plan.as_ref())
            })
            .collect::<Result<_>>()?;

        let mut grads = model.grad_store();
        let inv = 1.0 / batch.len() as f32;
        let mut loss = 0.0f64;
        for ((out, cache), &idx) in encoded.iter().zip(batch.iter()) {
            let input = &inputs[idx];
            let (start, end) = input.gold_positions.expect("training inputs keep gold");
            let slot = [SlotTarget {
                q: input.query_pos(),
                start,
                end,
            }];
            let mut dh = Array2::zeros(out.hidden.raw_dim());
            loss += clism_instance(model, out, &slot, inv, &mut dh, &mut grads)?.to_f64();
            model.backward(cache, &dh, &mut grads);
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                step: step as u64,
                detail: format!("qa loss {loss}"),
            });
        }
        opt.step(&mut model.params, &grads, cfg.lr);
        final_loss = loss;
    }
    Ok(FinetuneSummary {
        steps: total_steps,
        train_examples: n,
        dropped,
        final_loss,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QaEvalReport {
    pub n: usize,
    /// Percent of exactly matching answers after normalization.
    pub em: f64,
    /// Mean token-overlap F1 in percent.
    pub f1: f64,
}

/// Evaluates every record: predict a span, map it back to passage text, and
/// score against the gold answer text.
pub fn evaluate_qa(
    model: &Model<f32>,
    records: &[QaRecord],
    vocab: &Vocabulary,
    cfg: &FinetuneConfig,
) -> Result<QaEvalReport> {
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let max_len = cfg.max_len.min(model.config.max_len);
    let scores: Vec<(f64, f64)> = records
        .par_iter()
        .map(|r| -> Result<(f64, f64)> {
            let input = build_qa_input(r, vocab, max_len, cfg.use_que)
                .ok_or_else(|| Error::Config(format!("question {} fills the window", r.id)))?;
            let (out, _) = forward_qa(model, &input, None)?;
            let slot = model.span_slot(&out, input.query_pos())?;
            let sl: Vec<f64> = slot.start_logits.iter().map(|&v| v as f64).collect();
            let el: Vec<f64> = slot.end_logits.iter().map(|&v| v as f64).collect();
            let text = match predict_span(&sl, &el, input.passage_range.clone(), MAX_ANSWER_TOKENS)
            {
                Some((s, e)) => {
                    let rel = s - input.passage_range.start..=e - input.passage_range.start;
                    input.passage_tokens[rel].join(" ")
                }
                None => String::new(),
            };
            Ok((
                f64::from(exact_match(&text, &input.gold_text)),
                span_f1(&text, &input.gold_text),
            ))
        })
        .collect::<Result<_>>()?;
    let n = scores.len();
    let em = 100.0 * scores.iter().map(|s| s.0).sum::<f64>() / n as f64;
    let f1 = 100.0 * scores.iter().map(|s| s.1).sum::<f64>() / n as f64;
    Ok(QaEvalReport { n, em, f1 })
}

/// The BIO tag inventory: "O" first, remaining tags sorted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TagSet {
    pub tags: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl TagSet {
    pub fn from_sentences(sentences: &[TaggedSentence]) -> Self {
        let mut tags: Vec<String> = sentences
            .iter()
            .flat_map(|s| s.tags.iter())
            .filter(|t| *t != "O")
            .cloned()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        tags.insert(0, "O".to_string());
        Self::from_tags(tags)
    }

    fn from_tags(tags: Vec<String>) -> Self {
        let index = tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tags, index }
    }

    pub fn id(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.tags)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let tags: Vec<String> = read_json(path)?;
        if tags.first().map(String::as_str) != Some("O") {
            return Err(Error::Config("tag inventory must start with O".into()));
        }
        Ok(Self::from_tags(tags))
    }
}

/// Extends a checkpoint with a fresh linear tagging head sized for `tags`.
pub fn attach_tagger(model: &Model<f32>, tags: &TagSet, seed: u64) -> Model<f32> {
    let d = model.config.hidden;
    model.with_extras(
        &[
            ("tagger.w".to_string(), vec![d, tags.len()]),
            ("tagger.b".to_string(), vec![tags.len()]),
        ],
        derive_seed(seed, TAGGER_STREAM),
    )
}

struct NerInput {
    input_ids: Vec<u32>,
    /// Gold tag id per kept token; token t sits at sequence position 1 + t.
    tag_ids: Vec<usize>,
    /// Entities lost to truncation.
    truncated_entities: usize,
}

fn build_ner_input(
    sentence: &TaggedSentence,
    vocab: &Vocabulary,
    tags: &TagSet,
    max_len: usize,
) -> Result<NerInput> {
    let keep = sentence.tokens.len().min(max_len - 2);
    let mut input_ids = Vec::with_capacity(keep + 2);
    input_ids.push(CLS);
    for t in &sentence.tokens[..keep] {
        input_ids.push(vocab.id(&t.to_lowercase()).unwrap_or(crate::vocab::UNK));
    }
    input_ids.push(SEP);
    let tag_ids = sentence.tags[..keep]
        .iter()
        .map(|t| {
            tags.id(t)
                .ok_or_else(|| Error::Config(format!("tag {t} missing from inventory")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let truncated_entities = sentence.spans.iter().filter(|s| s.end >= keep).count();
    Ok(NerInput {
        input_ids,
        tag_ids,
        truncated_entities,
    })
}

fn tagger_logits<F: Scalar>(model: &Model<F>, hidden: &Array2<F>) -> Array2<F> {
    hidden.dot(&model.params.view2("tagger.w")) + model.params.view1("tagger.b")
}

fn tagger_backward<F: Scalar>(
    model: &Model<F>,
    hidden: &Array2<F>,
    d_logits: &Array2<F>,
    d_hidden: &mut Array2<F>,
    grads: &mut TensorStore<F>,
) {
    let dw = hidden.t().dot(d_logits);
    grads.add2("tagger.w", &dw.view());
    grads.add1("tagger.b", &d_logits.sum_axis(Axis(0)).view());
    *d_hidden += &d_logits.dot(&model.params.view2("tagger.w").t());
}

/// Per-token cross-entropy for one sentence; positions are weighted by the
/// batch-wide reciprocal token count.
fn ner_instance<F: Scalar>(
    model: &Model<F>,
    out: &EncoderOutput<F>,
    tag_ids: &[usize],
    inv_total_tokens: F,
    d_hidden: &mut Array2<F>,
    grads: &mut TensorStore<F>,
) -> Result<F> {
    let logits = tagger_logits(model, &out.hidden);
    let mut d_logits = Array2::zeros(logits.raw_dim());
    let mut partial = F::zero();
    for (t, &gold) in tag_ids.iter().enumerate() {
        let row = logits.row(1 + t).to_owned();
        let (ce, d_row) = ce_and_grad(&row, gold, inv_total_tokens);
        partial += ce * inv_total_tokens;
        d_logits.row_mut(1 + t).assign(&d_row);
    }
    tagger_backward(model, &out.hidden, &d_logits, d_hidden, grads);
    Ok(partial)
}

fn forward_ner<F: Scalar>(
    model: &Model<F>,
    input: &NerInput,
    dropout: Option<&DropoutPlan>,
) -> Result<(EncoderOutput<F>, ForwardCache<F>)> {
    let mask = vec![true; input.input_ids.len()];
    model.forward(
        &input.input_ids,
        &mask,
        SegmentSpec {
            source: 1..input.input_ids.len() - 1,
            target: None,
        },
        dropout,
    )
}

/// Fine-tunes encoder plus tagging head with token-level cross-entropy.
/// The model must already carry a tagger sized for `tags` (see
/// `attach_tagger`).
pub fn finetune_ner(
    model: &mut Model<f32>,
    sentences: &[TaggedSentence],
    vocab: &Vocabulary,
    tags: &TagSet,
    cfg: &FinetuneConfig,
) -> Result<FinetuneSummary> {
    cfg.validate()?;
    if model.params.layout().spec("tagger.w").is_none() {
        return Err(Error::Config("model has no tagging head attached".into()));
    }
    let max_len = cfg.max_len.min(model.config.max_len);
    let inputs = sentences
        .iter()
        .map(|s| build_ner_input(s, vocab, tags, max_len))
        .collect::<Result<Vec<_>>>()?;
    if inputs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let dropped: usize = inputs.iter().map(|i| i.truncated_entities).sum();
    let n = inputs.len();
    let total_steps = cfg
        .steps
        .unwrap_or_else(|| cfg.epochs * n.div_ceil(cfg.batch_size));
    let schedule = batch_schedule(n, cfg.batch_size, total_steps, cfg.seed);

    let mut opt = Adam::new(
        model.params.layout_arc(),
        AdamHyper {
            clip_norm: cfg.clip_norm,
            ..AdamHyper::default()
        },
    );
    let mut final_loss = 0.0;
    for (step, batch) in schedule.iter().enumerate() {
        let drop_seed = derive_seed(derive_seed(cfg.seed, DROPOUT_STREAM), step as u64);
        let encoded: Vec<(EncoderOutput<f32>, ForwardCache<f32>)> = batch
            .par_iter()
            .enumerate()
            .map(|(i, &idx)| {
                let plan = dropout_plan_for(model, drop_seed, i as u64);
                forward_ner(model, &inputs[idx], plan.as_ref())
            })
            .collect::<Result<_>>()?;

        let total_tokens: usize = batch.iter().map(|&i| inputs[i].tag_ids.len()).sum();
        if total_tokens == 0 {
            continue;
        }
        let inv = 1.0 / total_tokens as f32;
        let mut grads = model.grad_store();
        let mut loss = 0.0f64;
        for ((out, cache), &idx) in encoded.iter().zip(batch.iter()) {
            let mut dh = Array2::zeros(out.hidden.raw_dim());
            loss += ner_instance(model, out, &inputs[idx].tag_ids, inv, &mut dh, &mut grads)?
                .to_f64();
            model.backward(cache, &dh, &mut grads);
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                step: step as u64,
                detail: format!("ner loss {loss}"),
            });
        }
        opt.step(&mut model.params, &grads, cfg.lr);
        final_loss = loss;
    }
    Ok(FinetuneSummary {
        steps: total_steps,
        train_examples: n,
        dropped,
        final_loss,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NerEvalReport {
    pub n: usize,
    /// Micro precision/recall/F1 in percent.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Greedy per-token decoding, BIO-repaired, scored against the full gold
/// span sets (entities lost to truncation count against recall).
pub fn evaluate_ner(
    model: &Model<f32>,
    sentences: &[TaggedSentence],
    vocab: &Vocabulary,
    tags: &TagSet,
    cfg: &FinetuneConfig,
) -> Result<NerEvalReport> {
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let max_len = cfg.max_len.min(model.config.max_len);
    let predicted: Vec<Vec<LabeledSpan>> = sentences
        .par_iter()
        .map(|s| -> Result<Vec<LabeledSpan>> {
            let input = build_ner_input(s, vocab, tags, max_len)?;
            let (out, _) = forward_ner(model, &input, None)?;
            let logits = tagger_logits(model, &out.hidden);
            let decoded: Vec<String> = (0..input.tag_ids.len())
                .map(|t| {
                    let row = logits.row(1 + t);
                    let mut best = 0;
                    for (i, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = i;
                        }
                    }
                    tags.tags[best].clone()
                })
                .collect();
            Ok(bio_spans(&repair_bio(&decoded)))
        })
        .collect::<Result<_>>()?;
    let gold: Vec<Vec<LabeledSpan>> = sentences.iter().map(|s| s.spans.clone()).collect();
    let (p, r, f) = crate::metrics::entity_f1(&predicted, &gold);
    Ok(NerEvalReport {
        n: sentences.len(),
        precision: 100.0 * p,
        recall: 100.0 * r,
        f1: 100.0 * f,
    })
}
