//! Span proposal, filtering, and alignment-based projection.
//!
//! Proposals come from three sources: supplied annotations, longest-match
//! gazetteer hits, and maximal runs of capitalized surface tokens.
//! Overlaps are resolved by keeping the longer span, then the earlier one.
//! Filtering removes spans that are all stopwords, spans whose boundary
//! token is not word-like, and spans longer than MAX_SPAN_LEN tokens; it
//! removes nothing else. Projection maps a source span to the envelope of
//! its aligned target indices, rejecting windows where more than half the
//! covered target tokens have no link back into the span.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::Alignment;
use crate::corpus::{LabeledSpan, ParallelPair};
use crate::error::{Error, Result};

/// Maximum span width in tokens after filtering.
pub const MAX_SPAN_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpanOrigin {
    Annotation,
    Gazetteer,
    CapitalizationHeuristic,
}

/// A candidate source span; `start`/`end` are inclusive token indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanProposal {
    pub start: usize,
    pub end: usize,
    pub origin: SpanOrigin,
}

impl SpanProposal {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn overlaps(&self, other: &SpanProposal) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// A source span paired with its projected target-side answer span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectedSpan {
    pub src_start: usize,
    pub src_end: usize,
    pub tgt_start: usize,
    pub tgt_end: usize,
    pub origin: SpanOrigin,
}

/// Multi-token term list for gazetteer matching; terms are stored as
/// lowercased token sequences.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    terms: HashSet<Vec<String>>,
    max_term_len: usize,
}

impl Gazetteer {
    pub fn from_terms<I: IntoIterator<Item = String>>(terms: I) -> Self {
        let mut set = HashSet::new();
        let mut max_term_len = 0;
        for term in terms {
            let toks: Vec<String> = crate::vocab::whitespace_tokens(&term);
            if toks.is_empty() {
                continue;
            }
            max_term_len = max_term_len.max(toks.len());
            set.insert(toks);
        }
        Gazetteer {
            terms: set,
            max_term_len,
        }
    }

    /// One term per line; blank lines ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_terms(
            text.lines().map(str::to_string).filter(|l| !l.trim().is_empty()),
        ))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    fn contains(&self, tokens: &[String]) -> bool {
        self.terms.contains(tokens)
    }
}

/// One stopword per line, lowercased.
pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

/// True when the surface token starts with an uppercase alphabetic char.
fn is_capitalized(raw: &str) -> bool {
    raw.chars()
        .find(|c| c.is_alphabetic())
        .is_some_and(|c| c.is_uppercase())
        && raw.chars().next().is_some_and(|c| c.is_uppercase())
}

/// True when a token counts as a word for boundary purposes: it contains at
/// least one alphanumeric character.
fn is_wordlike(token: &str) -> bool {
    token.chars().any(|c| c.is_alphanumeric())
}

/// Proposes candidate spans from annotations, gazetteer longest matches, and
/// maximal capitalized runs. At least one source must be enabled. Overlaps
/// are resolved longer-first, then earlier-first.
pub fn propose_spans(
    pair: &ParallelPair,
    gazetteer: Option<&Gazetteer>,
    annotations: Option<&[LabeledSpan]>,
    use_capitalization: bool,
) -> Result<Vec<SpanProposal>> {
    if gazetteer.is_none() && annotations.is_none() && !use_capitalization {
        return Err(Error::Config("no span proposal source enabled".into()));
    }
    let n = pair.source_tokens.len();
    let mut proposals: Vec<SpanProposal> = Vec::new();

    if let Some(ann) = annotations {
        for span in ann {
            if span.start > span.end || span.end >= n {
                return Err(Error::InvalidSpans(format!(
                    "annotation ({}, {}) out of range for {}-token sentence",
                    span.start, span.end, n
                )));
            }
            proposals.push(SpanProposal {
                start: span.start,
                end: span.end,
                origin: SpanOrigin::Annotation,
            });
        }
    }

    if let Some(gaz) = gazetteer {
        for i in 0..n {
            let max_len = gaz.max_term_len.min(n - i);
            for len in (1..=max_len).rev() {
                if gaz.contains(&pair.source_tokens[i..i + len]) {
                    proposals.push(SpanProposal {
                        start: i,
                        end: i + len - 1,
                        origin: SpanOrigin::Gazetteer,
                    });
                    break; // longest match at this start position
                }
            }
        }
    }

    if use_capitalization {
        let mut i = 0;
        while i < n {
            if is_capitalized(&pair.source_raw[i]) {
                let mut j = i;
                while j + 1 < n && is_capitalized(&pair.source_raw[j + 1]) {
                    j += 1;
                }
                proposals.push(SpanProposal {
                    start: i,
                    end: j,
                    origin: SpanOrigin::CapitalizationHeuristic,
                });
                i = j + 1;
            } else {
                i += 1;
            }
        }
    }

    // Longer spans win; ties go to the earlier span, then to the more
    // explicit origin (annotations over gazetteer over capitalization).
    proposals.sort_by_key(|p| (std::cmp::Reverse(p.len()), p.start, origin_rank(p.origin)));
    let mut kept: Vec<SpanProposal> = Vec::new();
    for p in proposals {
        if !kept.iter().any(|k| k.overlaps(&p)) {
            kept.push(p);
        }
    }
    kept.sort_by_key(|p| p.start);
    Ok(kept)
}

fn origin_rank(o: SpanOrigin) -> u8 {
    match o {
        SpanOrigin::Annotation => 0,
        SpanOrigin::Gazetteer => 1,
        SpanOrigin::CapitalizationHeuristic => 2,
    }
}

/// Removes spans that are all stopwords, have a non-word boundary token, or
/// exceed MAX_SPAN_LEN. Input order is preserved; nothing else is removed.
pub fn filter_spans(
    proposals: &[SpanProposal],
    source_tokens: &[String],
    stopwords: &HashSet<String>,
) -> Vec<SpanProposal> {
    proposals
        .iter()
        .filter(|p| {
            let toks = &source_tokens[p.start..=p.end];
            let all_stop = toks.iter().all(|t| stopwords.contains(t.as_str()));
            let word_boundaries =
                is_wordlike(&toks[0]) && is_wordlike(&toks[toks.len() - 1]);
            !all_stop && word_boundaries && p.len() <= MAX_SPAN_LEN
        })
        .copied()
        .collect()
}

/// Projects a source span through word alignments to a target-side answer:
/// the envelope (min, max) of all linked target indices. Returns None when
/// no source index in the span is linked, or when more than 50% of the
/// covered target window has no link back into the span.
pub fn project_span(span: &SpanProposal, alignment: &Alignment) -> Option<(usize, usize)> {
    let linked: Vec<usize> = alignment
        .links
        .iter()
        .filter(|(i, _)| *i >= span.start && *i <= span.end)
        .map(|&(_, j)| j)
        .collect();
    let lo = *linked.iter().min()?;
    let hi = *linked.iter().max()?;
    let window = hi - lo + 1;
    let covered: HashSet<usize> = linked.into_iter().collect();
    let unlinked = window - covered.len();
    if (unlinked as f64) > 0.5 * (window as f64) {
        return None;
    }
    Some((lo, hi))
}

/// Full per-pair proposal stage: propose, filter, project. Spans that do not
/// survive projection are silently dropped; an empty result means the pair
/// has no usable spans and should be skipped upstream.
pub fn propose_filter_project(
    pair: &ParallelPair,
    alignment: &Alignment,
    gazetteer: Option<&Gazetteer>,
    annotations: Option<&[LabeledSpan]>,
    use_capitalization: bool,
    stopwords: &HashSet<String>,
) -> Result<Vec<ProjectedSpan>> {
    let proposals = propose_spans(pair, gazetteer, annotations, use_capitalization)?;
    let filtered = filter_spans(&proposals, &pair.source_tokens, stopwords);
    Ok(filtered
        .iter()
        .filter_map(|p| {
            project_span(p, alignment).map(|(ts, te)| ProjectedSpan {
                src_start: p.start,
                src_end: p.end,
                tgt_start: ts,
                tgt_end: te,
                origin: p.origin,
            })
        })
        .collect())
}
