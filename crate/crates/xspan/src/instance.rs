//! Pre-training instance assembly.
//!
//! Each instance packs one sentence pair as
//! `X = [CLS] masked-source [SEP] target [SEP]`, where up to `max_spans`
//! selected source spans are each replaced by a single [QUE] token and the
//! corresponding target-side answer spans are recorded. MLM corruption is
//! then applied to 15% of non-special, non-answer positions (80% [MASK],
//! 10% random token, 10% unchanged). Gold answer positions are never
//! corrupted.
//!
//! Construction is a pure function of (pair, spans, vocab, seed, config):
//! the per-instance RNG stream is derived from the global seed and the
//! pair id, so building in parallel cannot change results.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

use crate::corpus::ParallelPair;
use crate::error::{Error, Result};
use crate::spans::{ProjectedSpan, SpanOrigin};
use crate::util::record_seed;
use crate::vocab::{Vocabulary, CLS, PAD, QUE, SEP, UNK};

pub const MLM_LABEL_NONE: i64 = -1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceConfig {
    /// Total padded length of X.
    pub max_len: usize,
    /// Span slots kept per instance (longest-first).
    pub max_spans: usize,
    /// Fraction of eligible positions selected for MLM corruption.
    pub mlm_rate: f64,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        InstanceConfig {
            max_len: 256,
            max_spans: 4,
            mlm_rate: 0.15,
        }
    }
}

/// One pre-training example. `segment_bounds` stores half-open [start, end)
/// token ranges of the source and target segments inside `input_ids`;
/// answer indices are inclusive and point into the target segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClismInstance {
    pub pair_id: String,
    pub input_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub que_positions: Vec<usize>,
    pub answer_starts: Vec<usize>,
    pub answer_ends: Vec<usize>,
    pub mlm_labels: Vec<i64>,
    pub segment_bounds: [[usize; 2]; 2],
    /// Unmasked, uncorrupted source token ids (no specials); input for the
    /// clean-source consistency view.
    pub source_ids: Vec<u32>,
}

impl ClismInstance {
    /// Number of real (non-pad) positions.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn source_range(&self) -> std::ops::Range<usize> {
        self.segment_bounds[0][0]..self.segment_bounds[0][1]
    }

    pub fn target_range(&self) -> std::ops::Range<usize> {
        self.segment_bounds[1][0]..self.segment_bounds[1][1]
    }

    /// Checks the structural invariants; used when reading instances back
    /// from disk.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::CorruptInstance(format!("{}: {msg}", self.pair_id)));
        let n = self.input_ids.len();
        if self.attention_mask.len() != n || self.mlm_labels.len() != n {
            return fail("field lengths disagree".into());
        }
        let real = self.real_len();
        if self.attention_mask[..real].iter().any(|&m| m != 1)
            || self.input_ids[real..].iter().any(|&id| id != PAD)
        {
            return fail("padding is not a suffix".into());
        }
        if self.que_positions.is_empty()
            || self.que_positions.len() != self.answer_starts.len()
            || self.que_positions.len() != self.answer_ends.len()
        {
            return fail("que/answer slot counts disagree or are empty".into());
        }
        for &q in &self.que_positions {
            if q >= real || self.input_ids[q] != QUE {
                return fail(format!("position {q} does not hold [QUE]"));
            }
        }
        let [ts, te] = self.segment_bounds[1];
        if !(self.segment_bounds[0][0] == 1 && ts > self.segment_bounds[0][1] && te <= real) {
            return fail("segment bounds inconsistent".into());
        }
        for (&a, &b) in self.answer_starts.iter().zip(&self.answer_ends) {
            if !(ts <= a && a <= b && b < te) {
                return fail(format!("answer ({a}, {b}) outside target segment"));
            }
            if self.mlm_labels[a..=b].iter().any(|&l| l != MLM_LABEL_NONE) {
                return fail(format!("answer ({a}, {b}) carries MLM corruption"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    /// Every [QUE] slot fell outside after truncation.
    NoSlotsLeft,
    /// A retained slot's answer fell outside after truncation.
    AnswerTruncated,
}

#[derive(Debug)]
pub enum BuildOutcome {
    Built {
        instance: ClismInstance,
        slot_origins: Vec<SpanOrigin>,
    },
    Dropped(DropReason),
}

/// Builds one instance. Preconditions: at least one projected span, spans
/// non-overlapping on the source side.
pub fn build_instance(
    pair: &ParallelPair,
    spans: &[ProjectedSpan],
    vocab: &Vocabulary,
    rng_seed: u64,
    cfg: &InstanceConfig,
) -> Result<BuildOutcome> {
    if spans.is_empty() {
        return Err(Error::InvalidSpans("no projected spans".into()));
    }
    let mut by_pos: Vec<&ProjectedSpan> = spans.iter().collect();
    by_pos.sort_by_key(|s| s.src_start);
    for w in by_pos.windows(2) {
        if w[1].src_start <= w[0].src_end {
            return Err(Error::InvalidSpans(format!(
                "source spans ({}, {}) and ({}, {}) overlap",
                w[0].src_start, w[0].src_end, w[1].src_start, w[1].src_end
            )));
        }
    }
    let n = pair.source_tokens.len();
    if by_pos.last().unwrap().src_end >= n {
        return Err(Error::InvalidSpans("span outside source sentence".into()));
    }

    // Longest-first selection of at most max_spans, then back to position order.
    let mut by_len = by_pos.clone();
    by_len.sort_by_key(|s| (std::cmp::Reverse(s.src_end - s.src_start), s.src_start));
    by_len.truncate(cfg.max_spans);
    let mut selected = by_len;
    selected.sort_by_key(|s| s.src_start);

    // Masked source: each selected span collapses to one [QUE].
    let mut masked_src: Vec<u32> = Vec::with_capacity(n);
    let mut slots: Vec<(usize, &ProjectedSpan)> = Vec::new(); // (index into masked_src, span)
    let mut i = 0;
    let mut next_span = selected.iter().peekable();
    while i < n {
        if let Some(span) = next_span.peek() {
            if span.src_start == i {
                slots.push((masked_src.len(), span));
                masked_src.push(QUE);
                i = span.src_end + 1;
                next_span.next();
                continue;
            }
        }
        masked_src.push(vocab.id(&pair.source_tokens[i]).unwrap_or(UNK));
        i += 1;
    }
    let target_ids: Vec<u32> = pair
        .target_tokens
        .iter()
        .map(|t| vocab.id(t).unwrap_or(UNK))
        .collect();

    // Fit into max_len by trimming the right of the longer segment.
    let budget = cfg.max_len.saturating_sub(3);
    let (mut sl, mut tl) = (masked_src.len(), target_ids.len());
    while sl + tl > budget {
        if sl >= tl {
            sl -= 1;
        } else {
            tl -= 1;
        }
    }
    let retained: Vec<&(usize, &ProjectedSpan)> =
        slots.iter().filter(|(q, _)| *q < sl).collect();
    if retained.is_empty() {
        return Ok(BuildOutcome::Dropped(DropReason::NoSlotsLeft));
    }
    if retained.iter().any(|(_, s)| s.tgt_end >= tl) {
        return Ok(BuildOutcome::Dropped(DropReason::AnswerTruncated));
    }

    let mut input_ids: Vec<u32> = Vec::with_capacity(cfg.max_len);
    input_ids.push(CLS);
    input_ids.extend_from_slice(&masked_src[..sl]);
    input_ids.push(SEP);
    let tgt_base = input_ids.len();
    input_ids.extend_from_slice(&target_ids[..tl]);
    input_ids.push(SEP);
    let real_len = input_ids.len();

    let que_positions: Vec<usize> = retained.iter().map(|(q, _)| 1 + q).collect();
    let answer_starts: Vec<usize> = retained.iter().map(|(_, s)| tgt_base + s.tgt_start).collect();
    let answer_ends: Vec<usize> = retained.iter().map(|(_, s)| tgt_base + s.tgt_end).collect();
    let slot_origins: Vec<SpanOrigin> = retained.iter().map(|(_, s)| s.origin).collect();

    // MLM corruption over non-special, non-answer positions.
    let mut mlm_labels = vec![MLM_LABEL_NONE; cfg.max_len];
    let mut rng = ChaCha8Rng::seed_from_u64(record_seed(rng_seed, &pair.pair_id));
    let in_answer = |pos: usize| {
        answer_starts
            .iter()
            .zip(&answer_ends)
            .any(|(&a, &b)| pos >= a && pos <= b)
    };
    let non_special = vocab.non_special_ids();
    for pos in 1..real_len {
        let id = input_ids[pos];
        let eligible = if pos < 1 + sl {
            id != QUE
        } else {
            pos >= tgt_base && pos < tgt_base + tl && !in_answer(pos)
        };
        if !eligible {
            continue;
        }
        if rng.random::<f64>() < cfg.mlm_rate {
            mlm_labels[pos] = i64::from(id);
            let action: f64 = rng.random();
            if action < 0.8 {
                input_ids[pos] = crate::vocab::MASK;
            } else if action < 0.9 && !non_special.is_empty() {
                input_ids[pos] = rng.random_range(non_special.clone());
            }
        }
    }

    let mut attention_mask = vec![1u8; real_len];
    attention_mask.resize(cfg.max_len, 0);
    input_ids.resize(cfg.max_len, PAD);

    let instance = ClismInstance {
        pair_id: pair.pair_id.clone(),
        input_ids,
        attention_mask,
        que_positions,
        answer_starts,
        answer_ends,
        mlm_labels,
        segment_bounds: [[1, 1 + sl], [tgt_base, tgt_base + tl]],
        source_ids: pair
            .source_tokens
            .iter()
            .map(|t| vocab.id(t).unwrap_or(UNK))
            .collect(),
    };
    debug_assert!(instance.validate().is_ok());
    Ok(BuildOutcome::Built {
        instance,
        slot_origins,
    })
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct BuildStats {
    pub built: usize,
    pub dropped_no_slots: usize,
    pub dropped_answer_truncated: usize,
    /// Histogram of span origins over emitted slots.
    pub span_origins: HashMap<String, usize>,
}

/// Builds instances for many pairs in parallel; output order equals input
/// order and is independent of the thread count.
pub fn build_instances(
    inputs: &[(ParallelPair, Vec<ProjectedSpan>)],
    vocab: &Vocabulary,
    rng_seed: u64,
    cfg: &InstanceConfig,
) -> Result<(Vec<ClismInstance>, BuildStats)> {
    let outcomes: Vec<Result<BuildOutcome>> = inputs
        .par_iter()
        .map(|(pair, spans)| build_instance(pair, spans, vocab, rng_seed, cfg))
        .collect();
    let mut instances = Vec::new();
    let mut stats = BuildStats::default();
    for outcome in outcomes {
        match outcome? {
            BuildOutcome::Built {
                instance,
                slot_origins,
            } => {
                stats.built += 1;
                for origin in slot_origins {
                    let key = match origin {
                        SpanOrigin::Annotation => "annotation",
                        SpanOrigin::Gazetteer => "gazetteer",
                        SpanOrigin::CapitalizationHeuristic => "capitalization-heuristic",
                    };
                    *stats.span_origins.entry(key.to_string()).or_insert(0) += 1;
                }
                instances.push(instance);
            }
            BuildOutcome::Dropped(DropReason::NoSlotsLeft) => stats.dropped_no_slots += 1,
            BuildOutcome::Dropped(DropReason::AnswerTruncated) => {
                stats.dropped_answer_truncated += 1
            }
        }
    }
    Ok((instances, stats))
}

pub fn write_instances(path: &Path, instances: &[ClismInstance]) -> Result<()> {
    crate::util::write_jsonl(path, instances)
}

/// Reads instances back, re-checking every structural invariant.
pub fn read_instances(path: &Path) -> Result<Vec<ClismInstance>> {
    let instances: Vec<ClismInstance> = crate::util::read_jsonl(path)?;
    for inst in &instances {
        inst.validate()?;
    }
    Ok(instances)
}
