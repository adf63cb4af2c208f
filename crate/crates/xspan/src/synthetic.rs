//! Deterministic synthetic copy-language corpus. Each source sentence draws
//! distinct word types; the target side is its word-for-word image under a
//! seeded bijective dictionary, so the true word alignment is the identity.
//! A generator derives QA records from the same dictionary for transfer
//! experiments: the question either names a source word (lookup) or gives a
//! source-sentence prefix (continuation); the passage is a target sentence,
//! and the answer is the image of the queried word.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::Alignment;
use crate::corpus::{LabeledSpan, ParallelPair, QaRecord, SENTENCE_TOKEN_CAP};
use crate::error::{Error, Result};
use crate::util::derive_seed;

const DICT_STREAM: u64 = 0x4449_4354;
const PAIRS_STREAM: u64 = 0x5041_4952;
const GAZ_STREAM: u64 = 0x475a_5452;
const QA_STREAM: u64 = 0x514c_4f5a;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub pairs: usize,
    /// Word types per language side.
    pub vocab_types: usize,
    pub seed: u64,
    pub min_len: usize,
    pub max_len: usize,
}

impl SyntheticSpec {
    pub fn new(pairs: usize, vocab_types: usize, seed: u64) -> Self {
        Self {
            pairs,
            vocab_types,
            seed,
            min_len: 4,
            max_len: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs == 0 {
            return Err(Error::Config("pair count must be positive".into()));
        }
        if self.min_len == 0 || self.max_len < self.min_len {
            return Err(Error::Config("sentence length bounds are inverted or zero".into()));
        }
        if self.max_len > SENTENCE_TOKEN_CAP {
            return Err(Error::Config(format!(
                "max sentence length {} exceeds the {SENTENCE_TOKEN_CAP}-token cap",
                self.max_len
            )));
        }
        if self.vocab_types < self.max_len {
            return Err(Error::Config(format!(
                "need at least {} word types to fill a {}-token sentence without repeats",
                self.max_len, self.max_len
            )));
        }
        Ok(())
    }
}

/// Which question flavor `qa_records` emits. Lookup probes the dictionary;
/// continuation probes positional structure; mixed sets contain both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QaKind {
    Lookup,
    Continuation,
    Mixed,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub spec: SyntheticSpec,
    pub pairs: Vec<ParallelPair>,
    /// Identity alignment per pair.
    pub alignments: Vec<Alignment>,
    /// Entity terms (source surfaces), sorted.
    pub gazetteer_terms: Vec<String>,
    /// dictionary[i] = target type of source type i (a permutation).
    dictionary: Vec<usize>,
}

pub fn src_surface(type_id: usize) -> String {
    format!("s{type_id:03}")
}

pub fn tgt_surface(type_id: usize) -> String {
    format!("t{type_id:03}")
}

fn sentence_types(rng: &mut ChaCha8Rng, spec: &SyntheticSpec) -> Vec<usize> {
    let len = rng.random_range(spec.min_len..=spec.max_len);
    sample(rng, spec.vocab_types, len).into_vec()
}

/// Generates the corpus: sentences of distinct types, dictionary-image
/// targets, identity alignments, and a gazetteer covering half the types.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let v = spec.vocab_types;

    let mut dictionary: Vec<usize> = (0..v).collect();
    dictionary.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, DICT_STREAM)));

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, PAIRS_STREAM));
    let mut pairs = Vec::with_capacity(spec.pairs);
    let mut alignments = Vec::with_capacity(spec.pairs);
    for n in 0..spec.pairs {
        let types = sentence_types(&mut rng, spec);
        let source_tokens: Vec<String> = types.iter().map(|&t| src_surface(t)).collect();
        let target_tokens: Vec<String> =
            types.iter().map(|&t| tgt_surface(dictionary[t])).collect();
        alignments.push(Alignment {
            links: (0..types.len()).map(|i| (i, i)).collect(),
        });
        pairs.push(ParallelPair {
            pair_id: format!("syn{n:05}"),
            source_raw: source_tokens.clone(),
            source_tokens,
            target_tokens,
        });
    }

    let mut gaz_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, GAZ_STREAM));
    let picks = (v / 2).max(1);
    let mut gazetteer_terms: Vec<String> = sample(&mut gaz_rng, v, picks)
        .into_iter()
        .map(src_surface)
        .collect();
    gazetteer_terms.sort_unstable();

    Ok(SyntheticCorpus {
        spec: spec.clone(),
        pairs,
        alignments,
        gazetteer_terms,
        dictionary,
    })
}

impl SyntheticCorpus {
    pub fn pairs_tsv(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            writeln!(out, "{}\t{}", p.source_text(), p.target_text()).expect("string write");
        }
        out
    }

    pub fn gazetteer_text(&self) -> String {
        let mut out = self.gazetteer_terms.join("\n");
        out.push('\n');
        out
    }

    /// Target surface a source type translates to.
    pub fn translate(&self, type_id: usize) -> String {
        tgt_surface(self.dictionary[type_id])
    }

    /// QA records from fresh sentences over the same dictionary. Lookup
    /// (`id` ends in `l`): the question names one source word and the answer
    /// is its image in the target sentence. Continuation (`id` ends in `c`):
    /// the question is a source-sentence prefix and the answer is the target
    /// word where the remainder starts. `Mixed` interleaves both 50/50.
    /// Neither is solvable on unseen sentences by memorizing training pairs.
    pub fn qa_records(
        &self,
        n: usize,
        stream: u64,
        id_prefix: &str,
        kind: QaKind,
    ) -> Vec<QaRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            derive_seed(self.spec.seed, QA_STREAM),
            stream,
        ));
        (0..n)
            .map(|i| {
                let types = sentence_types(&mut rng, &self.spec);
                let target: Vec<String> =
                    types.iter().map(|&t| self.translate(t)).collect();
                let lookup = match kind {
                    QaKind::Lookup => true,
                    QaKind::Continuation => false,
                    QaKind::Mixed => rng.random::<bool>(),
                };
                let (k, question, flavor) = if lookup {
                    let k = rng.random_range(0..types.len());
                    (k, src_surface(types[k]), 'l')
                } else {
                    let k = rng.random_range(1..types.len());
                    let prefix: Vec<String> =
                        types[..k].iter().map(|&t| src_surface(t)).collect();
                    (k, prefix.join(" "), 'c')
                };
                let answer_text = target[k].clone();
                let answer_start = target[..k].iter().map(|t| t.len() + 1).sum();
                QaRecord {
                    id: format!("{id_prefix}{i:05}{flavor}"),
                    question,
                    context: target.join(" "),
                    answer_text,
                    answer_start,
                    answer_span: LabeledSpan {
                        start: k,
                        end: k,
                        label: "ANS".to_string(),
                    },
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SyntheticFiles {
    pub pairs_tsv: PathBuf,
    pub alignments: PathBuf,
    pub gazetteer: PathBuf,
    pub stopwords: PathBuf,
}

/// Writes the corpus files into `dir`: the parallel TSV, the identity
/// Pharaoh alignments, the gazetteer, and an empty stopword list (the copy
/// language has none) so downstream commands have a complete input set.
pub fn write_corpus(dir: &Path, corpus: &SyntheticCorpus) -> Result<SyntheticFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = SyntheticFiles {
        pairs_tsv: dir.join("pairs.tsv"),
        alignments: dir.join("alignment.pharaoh"),
        gazetteer: dir.join("gazetteer.txt"),
        stopwords: dir.join("stopwords.txt"),
    };
    let pharaoh = crate::align::write_pharaoh(&corpus.alignments);
    for (path, text) in [
        (&files.pairs_tsv, corpus.pairs_tsv()),
        (&files.alignments, pharaoh),
        (&files.gazetteer, corpus.gazetteer_text()),
        (&files.stopwords, String::new()),
    ] {
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(files)
}
