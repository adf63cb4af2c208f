//! Corpus file loaders.
//!
//! Three on-disk formats are supported:
//! - parallel corpus: UTF-8 TSV, one `source<TAB>target` pair per line;
//! - extractive QA: JSONL with `{id, question, context, answer_text,
//!   answer_start}` where `answer_start` is a byte offset into `context`;
//! - tagged sentences: two-column CoNLL (`token<TAB>tag`), blank-line
//!   separated, BIO scheme with `I-` tags lacking a `B-` opener repaired
//!   in place to `B-`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::whitespace_tokens;

/// Hard cap on tokens kept per sentence side; longer sides are truncated.
pub const SENTENCE_TOKEN_CAP: usize = 128;

/// A token span with an inclusive end index and a label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct ParallelPair {
    pub pair_id: String,
    /// Lowercased whitespace tokens, 1..=SENTENCE_TOKEN_CAP per side.
    pub source_tokens: Vec<String>,
    pub target_tokens: Vec<String>,
    /// Original-case source surfaces, index-aligned with `source_tokens`;
    /// kept for the capitalization span heuristic.
    pub source_raw: Vec<String>,
}

impl ParallelPair {
    pub fn source_text(&self) -> String {
        self.source_tokens.join(" ")
    }

    pub fn target_text(&self) -> String {
        self.target_tokens.join(" ")
    }
}

#[derive(Debug, Clone)]
pub struct ParallelCorpus {
    pub pairs: Vec<ParallelPair>,
    /// Lines dropped because one side had no tokens.
    pub skipped_empty: usize,
}

/// Loads a parallel TSV corpus. Lines must have exactly two tab-separated
/// fields; sides longer than the token cap are truncated; lines where either
/// side is empty are skipped and counted.
pub fn load_parallel_corpus(path: &Path) -> Result<ParallelCorpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    let mut skipped_empty = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            skipped_empty += 1;
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::malformed(
                path,
                line_no,
                format!("expected 2 tab-separated fields, found {}", fields.len()),
            ));
        }
        let mut source_raw: Vec<String> =
            fields[0].split_whitespace().map(str::to_string).collect();
        let mut target_tokens = whitespace_tokens(fields[1]);
        if source_raw.is_empty() || target_tokens.is_empty() {
            skipped_empty += 1;
            continue;
        }
        source_raw.truncate(SENTENCE_TOKEN_CAP);
        target_tokens.truncate(SENTENCE_TOKEN_CAP);
        let source_tokens: Vec<String> = source_raw.iter().map(|t| t.to_lowercase()).collect();
        pairs.push(ParallelPair {
            pair_id: format!("L{line_no}"),
            source_tokens,
            target_tokens,
            source_raw,
        });
    }
    Ok(ParallelCorpus {
        pairs,
        skipped_empty,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QaRecord {
    pub id: String,
    pub question: String,
    pub context: String,
    pub answer_text: String,
    /// Byte offset of the answer inside `context`.
    pub answer_start: usize,
    /// Token span of the answer in the whitespace-tokenized context,
    /// derived from the byte offset (not stored on disk).
    #[serde(skip)]
    pub answer_span: LabeledSpan,
}

/// Byte ranges of the whitespace tokens of `text`, in order.
fn token_byte_ranges(text: &str) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                ranges.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        ranges.push((s, text.len()));
    }
    ranges
}

/// Maps an answer byte range onto the enclosing token span (tokens that
/// overlap the range). Returns None when the range matches no token.
fn answer_token_span(context: &str, start: usize, len: usize) -> Option<(usize, usize)> {
    let end = start.checked_add(len)?;
    let mut first = None;
    let mut last = None;
    for (idx, (ts, te)) in token_byte_ranges(context).into_iter().enumerate() {
        if ts < end && te > start {
            if first.is_none() {
                first = Some(idx);
            }
            last = Some(idx);
        }
    }
    Some((first?, last?))
}

/// Loads a flat QA JSONL file, projecting each answer onto token indices and
/// validating that `answer_text` actually occurs at `answer_start` (compared
/// case-insensitively).
pub fn load_qa_corpus(path: &Path) -> Result<Vec<QaRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: QaRecord = serde_json::from_str(line)
            .map_err(|e| Error::malformed(path, i + 1, format!("invalid qa record: {e}")))?;
        let end = rec.answer_start + rec.answer_text.len();
        let found = rec
            .context
            .get(rec.answer_start..end)
            .map(|s| s.to_lowercase() == rec.answer_text.to_lowercase())
            .unwrap_or(false);
        if !found || rec.answer_text.trim().is_empty() {
            return Err(Error::UnlocatableAnswer { id: rec.id });
        }
        let (s, e) = answer_token_span(&rec.context, rec.answer_start, rec.answer_text.len())
            .ok_or(Error::UnlocatableAnswer {
                id: rec.id.clone(),
            })?;
        rec.answer_span = LabeledSpan {
            start: s,
            end: e,
            label: "ANS".to_string(),
        };
        out.push(rec);
    }
    Ok(out)
}

/// Writes QA records back out as JSONL (token spans are recomputed on load).
pub fn save_qa_corpus(path: &Path, records: &[QaRecord]) -> Result<()> {
    crate::util::write_jsonl(path, records)
}

#[derive(Debug, Clone)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    /// BIO tags after repair, index-aligned with `tokens`.
    pub tags: Vec<String>,
    pub spans: Vec<LabeledSpan>,
}

/// Validates a BIO tag and splits it into (prefix, type).
fn split_bio(tag: &str) -> Option<(char, &str)> {
    if tag == "O" {
        return Some(('O', ""));
    }
    let (prefix, rest) = tag.split_at(1);
    let rest = rest.strip_prefix('-')?;
    if rest.is_empty() {
        return None;
    }
    match prefix {
        "B" => Some(('B', rest)),
        "I" => Some(('I', rest)),
        _ => None,
    }
}

/// Repairs `I-X` tags that do not continue a same-type span into `B-X`.
pub fn repair_bio(tags: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(tags.len());
    let mut prev_type: Option<String> = None;
    for tag in tags {
        let (prefix, ty) = split_bio(tag).expect("tags validated at load");
        let repaired = match prefix {
            'I' if prev_type.as_deref() != Some(ty) => format!("B-{ty}"),
            _ => tag.clone(),
        };
        prev_type = match prefix {
            'O' => None,
            _ => Some(ty.to_string()),
        };
        out.push(repaired);
    }
    out
}

/// Decodes BIO tags (assumed repaired) into labeled spans with inclusive
/// end indices.
pub fn bio_spans(tags: &[String]) -> Vec<LabeledSpan> {
    let mut spans: Vec<LabeledSpan> = Vec::new();
    for (i, tag) in tags.iter().enumerate() {
        let (prefix, ty) = split_bio(tag).expect("tags validated at load");
        match prefix {
            'B' => spans.push(LabeledSpan {
                start: i,
                end: i,
                label: ty.to_string(),
            }),
            'I' => {
                // Repair guarantees a same-type opener directly before.
                if let Some(last) = spans.last_mut() {
                    if last.label == ty && last.end + 1 == i {
                        last.end = i;
                        continue;
                    }
                }
                spans.push(LabeledSpan {
                    start: i,
                    end: i,
                    label: ty.to_string(),
                });
            }
            _ => {}
        }
    }
    spans
}

/// Loads a two-column CoNLL file into tagged sentences. Tags must be `O`,
/// `B-<type>`, or `I-<type>`; anything else is a malformed-record error.
pub fn load_tagged_corpus(path: &Path) -> Result<Vec<TaggedSentence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut sentences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<String> = Vec::new();
    let mut flush = |tokens: &mut Vec<String>, tags: &mut Vec<String>| {
        if !tokens.is_empty() {
            let repaired = repair_bio(tags);
            let spans = bio_spans(&repaired);
            sentences.push(TaggedSentence {
                tokens: std::mem::take(tokens),
                tags: repaired,
                spans,
            });
            tags.clear();
        }
    };
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags);
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::malformed(
                path,
                i + 1,
                format!("expected token<TAB>tag, found {} fields", fields.len()),
            ));
        }
        if split_bio(fields[1]).is_none() {
            return Err(Error::malformed(
                path,
                i + 1,
                format!("invalid BIO tag {:?}", fields[1]),
            ));
        }
        tokens.push(fields[0].to_lowercase());
        tags.push(fields[1].to_string());
    }
    flush(&mut tokens, &mut tags);
    Ok(sentences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::Vocabulary;
    use proptest::prelude::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn parallel_load_basic() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.tsv", "The DRM clause\tla clause drm\nB c\td e\n");
        let c = load_parallel_corpus(&p).unwrap();
        assert_eq!(c.pairs.len(), 2);
        assert_eq!(c.skipped_empty, 0);
        assert_eq!(c.pairs[0].pair_id, "L1");
        assert_eq!(c.pairs[0].source_tokens, vec!["the", "drm", "clause"]);
        assert_eq!(c.pairs[0].source_raw, vec!["The", "DRM", "clause"]);
        assert_eq!(c.pairs[0].target_tokens, vec!["la", "clause", "drm"]);
        assert_eq!(c.pairs[1].pair_id, "L2");
    }

    #[test]
    fn parallel_skips_empty_sides_and_blank_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.tsv", "a\tb\n\t x\ny \t\n\nq\tr\n");
        let c = load_parallel_corpus(&p).unwrap();
        assert_eq!(c.pairs.len(), 2);
        assert_eq!(c.skipped_empty, 3);
        assert_eq!(c.pairs[1].pair_id, "L5");
    }

    #[test]
    fn parallel_rejects_wrong_field_count() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.tsv", "a\tb\nno tab here\n");
        let err = load_parallel_corpus(&p).unwrap_err();
        match err {
            Error::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parallel_truncates_to_token_cap() {
        let dir = tempfile::tempdir().unwrap();
        let long: Vec<String> = (0..200).map(|i| format!("w{i}")).collect();
        let p = write(&dir, "c.tsv", &format!("{}\tshort one\n", long.join(" ")));
        let c = load_parallel_corpus(&p).unwrap();
        assert_eq!(c.pairs[0].source_tokens.len(), SENTENCE_TOKEN_CAP);
        assert_eq!(c.pairs[0].source_tokens[127], "w127");
        assert_eq!(c.pairs[0].target_tokens.len(), 2);
    }

    #[test]
    fn parallel_round_trip_retokenizes_identically() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.tsv", "The DRM Clause applies\tla clause drm s'applique\n");
        let c = load_parallel_corpus(&p).unwrap();
        let v = Vocabulary::build(&[p], 1).unwrap();
        for pair in &c.pairs {
            let joined = pair.source_text();
            let direct: Vec<u32> = pair
                .source_tokens
                .iter()
                .map(|t| v.id(t).unwrap())
                .collect();
            assert_eq!(v.tokenize(&joined), direct);
        }
    }

    #[test]
    fn qa_load_projects_answer_to_tokens() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"{"id":"q1","question":"where is it","context":"the capital is New Madrid city","answer_start":15,"answer_text":"New Madrid"}"#;
        let p = write(&dir, "qa.jsonl", body);
        let recs = load_qa_corpus(&p).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].answer_span.start, 3);
        assert_eq!(recs[0].answer_span.end, 4);
    }

    #[test]
    fn qa_partial_token_answer_takes_token_envelope() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"{"id":"q1","question":"q","context":"abc def","answer_start":1,"answer_text":"bc de"}"#;
        let p = write(&dir, "qa.jsonl", body);
        let recs = load_qa_corpus(&p).unwrap();
        assert_eq!((recs[0].answer_span.start, recs[0].answer_span.end), (0, 1));
    }

    #[test]
    fn qa_rejects_unlocatable_answer() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"{"id":"q9","question":"q","context":"abc def","answer_start":0,"answer_text":"zzz"}"#;
        let p = write(&dir, "qa.jsonl", body);
        match load_qa_corpus(&p).unwrap_err() {
            Error::UnlocatableAnswer { id } => assert_eq!(id, "q9"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn qa_answer_match_is_case_insensitive() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"{"id":"q1","question":"q","context":"the DRM clause","answer_start":4,"answer_text":"drm"}"#;
        let p = write(&dir, "qa.jsonl", body);
        let recs = load_qa_corpus(&p).unwrap();
        assert_eq!((recs[0].answer_span.start, recs[0].answer_span.end), (1, 1));
    }

    #[test]
    fn conll_blocks_and_spans() {
        let dir = tempfile::tempdir().unwrap();
        let body = "John\tB-PER\nSmith\tI-PER\nvisited\tO\nParis\tB-LOC\n\nBye\tO\n";
        let p = write(&dir, "t.conll", body);
        let sents = load_tagged_corpus(&p).unwrap();
        assert_eq!(sents.len(), 2);
        assert_eq!(sents[0].tokens, vec!["john", "smith", "visited", "paris"]);
        assert_eq!(
            sents[0].spans,
            vec![
                LabeledSpan { start: 0, end: 1, label: "PER".into() },
                LabeledSpan { start: 3, end: 3, label: "LOC".into() },
            ]
        );
    }

    #[test]
    fn conll_repairs_dangling_i_tags() {
        let dir = tempfile::tempdir().unwrap();
        let body = "x\tI-PER\ny\tI-PER\nz\tI-LOC\n";
        let p = write(&dir, "t.conll", body);
        let sents = load_tagged_corpus(&p).unwrap();
        assert_eq!(sents[0].tags, vec!["B-PER", "I-PER", "B-LOC"]);
        assert_eq!(
            sents[0].spans,
            vec![
                LabeledSpan { start: 0, end: 1, label: "PER".into() },
                LabeledSpan { start: 2, end: 2, label: "LOC".into() },
            ]
        );
    }

    #[test]
    fn conll_rejects_bad_tags_and_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t.conll", "x\tQ-FOO\n");
        assert!(matches!(
            load_tagged_corpus(&p).unwrap_err(),
            Error::Malformed { line: 1, .. }
        ));
        let p2 = write(&dir, "t2.conll", "only-token\n");
        assert!(matches!(
            load_tagged_corpus(&p2).unwrap_err(),
            Error::Malformed { line: 1, .. }
        ));
    }

    proptest! {
        // After repair, decoding tags into spans and re-encoding the spans
        // as BIO reproduces the repaired tags exactly.
        #[test]
        fn bio_spans_round_trip(raw in proptest::collection::vec(
            prop_oneof![
                Just("O".to_string()),
                Just("B-A".to_string()), Just("I-A".to_string()),
                Just("B-B".to_string()), Just("I-B".to_string()),
            ],
            0..12,
        )) {
            let repaired = repair_bio(&raw);
            let spans = bio_spans(&repaired);
            let mut rebuilt = vec!["O".to_string(); raw.len()];
            for s in &spans {
                rebuilt[s.start] = format!("B-{}", s.label);
                for t in rebuilt.iter_mut().take(s.end + 1).skip(s.start + 1) {
                    *t = format!("I-{}", s.label);
                }
            }
            prop_assert_eq!(rebuilt, repaired);
        }
    }
}
