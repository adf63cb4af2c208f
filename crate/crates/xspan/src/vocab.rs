//! Whitespace vocabulary with a fixed special-token block.
//!
//! Ids 0..=5 are reserved: [PAD]=0, [UNK]=1, [CLS]=2, [SEP]=3, [MASK]=4,
//! [QUE]=5. Corpus tokens start at id 6 and are ordered by descending
//! frequency, ties broken by lexicographic order, so the mapping is a pure
//! function of corpus content. Tokenization lowercases, which also guarantees
//! corpus text can never alias the bracketed special names.
//!
//! On disk a vocabulary is a JSON array of the non-special tokens; the token
//! at array index `i` has id `i + 6`.

use std::collections::HashMap;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const QUE: u32 = 5;

pub const SPECIAL_TOKENS: [&str; 6] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[QUE]"];
pub const NUM_SPECIALS: usize = SPECIAL_TOKENS.len();

/// Lowercased whitespace tokens of `text`. Empty and all-whitespace input
/// yields an empty vector.
pub fn whitespace_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from already-counted corpus tokens.
    pub fn from_counts(counts: &HashMap<String, u64>, min_count: u64) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut kept: Vec<(&String, u64)> = counts
            .iter()
            .filter(|(_, &c)| c >= min_count)
            .map(|(t, &c)| (t, c))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t.clone()).collect())
    }

    /// Builds a vocabulary from an ordered list of non-special tokens; the
    /// token at index `i` receives id `i + 6`.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut id_to_token: Vec<String> =
            SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (id, tok) in id_to_token.iter().enumerate() {
            if token_to_id.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Vocabulary {
            id_to_token,
            token_to_id,
        })
    }

    /// Scans corpus files and builds the vocabulary from token frequencies.
    ///
    /// `.jsonl` files are read as QA records and contribute their question,
    /// context, and answer text; all other files are read line-wise with
    /// tab-separated fields (a plain text file is one field per line).
    pub fn build(paths: &[PathBuf], min_count: u64) -> Result<Self> {
        let mut counts: HashMap<String, u64> = HashMap::new();
        let count_text = |text: &str, counts: &mut HashMap<String, u64>| {
            for tok in whitespace_tokens(text) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        };
        for path in paths {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let is_jsonl = path.extension().is_some_and(|e| e == "jsonl");
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                if is_jsonl {
                    #[derive(Deserialize)]
                    struct QaText {
                        question: String,
                        context: String,
                        answer_text: String,
                    }
                    let rec: QaText = serde_json::from_str(line).map_err(|e| {
                        Error::malformed(path, i + 1, format!("invalid qa record: {e}"))
                    })?;
                    count_text(&rec.question, &mut counts);
                    count_text(&rec.context, &mut counts);
                    count_text(&rec.answer_text, &mut counts);
                } else {
                    for field in line.split('\t') {
                        count_text(field, &mut counts);
                    }
                }
            }
        }
        Self::from_counts(&counts, min_count)
    }

    /// Total size including the six specials.
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// The id range holding regular corpus tokens.
    pub fn non_special_ids(&self) -> Range<u32> {
        NUM_SPECIALS as u32..self.size() as u32
    }

    /// Lowercased whitespace tokenization; unknown tokens map to [UNK].
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        whitespace_tokens(text)
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect()
    }

    /// Joins surface forms with single spaces. Unknown ids render as [UNK].
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(SPECIAL_TOKENS[UNK as usize]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Persists the non-special tokens as a JSON array.
    pub fn save(&self, path: &Path) -> Result<()> {
        let body: Vec<&str> = self.id_to_token[NUM_SPECIALS..]
            .iter()
            .map(String::as_str)
            .collect();
        crate::util::write_json(path, &body)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let tokens: Vec<String> = crate::util::read_json(path)?;
        Self::from_tokens(tokens)
    }
}
