//! IBM Model 1 word alignment trained with EM, plus Pharaoh-format i/o.
//!
//! A NULL token is prepended to every source sentence; t(f|e) is initialized
//! uniformly over each source token's co-occurring target tokens. The E-step
//! accumulates expected counts in corpus order and the M-step is a pure
//! per-entry division, so repeated runs produce bit-identical tables.
//!
//! Viterbi decoding links each source index i to argmax_j t(f_j|e_i) when
//! that probability beats the NULL alignment t(f_j|NULL); ties break toward
//! the smaller target index. The direction is source → target only, which is
//! what span projection needs.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::ParallelPair;
use crate::error::{Error, Result};

/// Word links for one sentence pair, sorted ascending by (source, target).
/// Model-1 Viterbi produces at most one link per source index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub links: Vec<(usize, usize)>,
}

/// Internal source-token index 0 is the NULL token.
const NULL_SRC: usize = 0;

#[derive(Debug, Clone)]
pub struct TranslationTable {
    src_tokens: Vec<String>,
    src_index: HashMap<String, usize>,
    tgt_tokens: Vec<String>,
    tgt_index: HashMap<String, usize>,
    /// probs[s][t] = t(target t | source s); keys are exactly the support.
    probs: Vec<HashMap<usize, f64>>,
}

impl TranslationTable {
    fn new() -> Self {
        TranslationTable {
            src_tokens: vec!["<NULL>".to_string()],
            src_index: HashMap::new(),
            tgt_tokens: Vec::new(),
            tgt_index: HashMap::new(),
            probs: vec![HashMap::new()],
        }
    }

    fn intern_src(&mut self, tok: &str) -> usize {
        if let Some(&i) = self.src_index.get(tok) {
            return i;
        }
        let i = self.src_tokens.len();
        self.src_tokens.push(tok.to_string());
        self.src_index.insert(tok.to_string(), i);
        self.probs.push(HashMap::new());
        i
    }

    fn intern_tgt(&mut self, tok: &str) -> usize {
        if let Some(&i) = self.tgt_index.get(tok) {
            return i;
        }
        let i = self.tgt_tokens.len();
        self.tgt_tokens.push(tok.to_string());
        self.tgt_index.insert(tok.to_string(), i);
        i
    }

    fn src_id(&self, source: Option<&str>) -> Option<usize> {
        match source {
            None => Some(NULL_SRC),
            Some(tok) => self.src_index.get(tok).copied(),
        }
    }

    /// t(target|source); `None` source is the NULL token. Unseen
    /// combinations have probability 0.
    pub fn prob(&self, source: Option<&str>, target: &str) -> f64 {
        let (Some(s), Some(&t)) = (self.src_id(source), self.tgt_index.get(target)) else {
            return 0.0;
        };
        self.probs[s].get(&t).copied().unwrap_or(0.0)
    }

    /// Number of distinct co-occurring targets for a source token.
    pub fn support_size(&self, source: Option<&str>) -> usize {
        self.src_id(source).map_or(0, |s| self.probs[s].len())
    }

    /// Max |Σ_t t(t|s) − 1| over all source tokens with non-empty support.
    pub fn max_normalization_deviation(&self) -> f64 {
        self.probs
            .iter()
            .filter(|m| !m.is_empty())
            .map(|m| {
                let mut keys: Vec<&usize> = m.keys().collect();
                keys.sort_unstable();
                let sum: f64 = keys.iter().map(|k| m[k]).sum();
                (sum - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Persists entries as JSONL `{"source": token-or-null, "target": token,
    /// "prob": p}` sorted by (source, target), NULL first.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            source: Option<&'a str>,
            target: &'a str,
            prob: f64,
        }
        let mut src_order: Vec<usize> = (0..self.src_tokens.len()).collect();
        src_order.sort_by_key(|&s| (s != NULL_SRC, self.src_tokens[s].clone()));
        let mut rows = Vec::new();
        for s in src_order {
            let mut tgts: Vec<&usize> = self.probs[s].keys().collect();
            tgts.sort_by_key(|&&t| self.tgt_tokens[t].clone());
            for &t in tgts {
                rows.push(Row {
                    source: (s != NULL_SRC).then_some(self.src_tokens[s].as_str()),
                    target: &self.tgt_tokens[t],
                    prob: self.probs[s][&t],
                });
            }
        }
        crate::util::write_jsonl(path, &rows)
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            source: Option<String>,
            target: String,
            prob: f64,
        }
        let rows: Vec<Row> = crate::util::read_jsonl(path)?;
        let mut table = TranslationTable::new();
        for row in rows {
            let s = match &row.source {
                None => NULL_SRC,
                Some(tok) => table.intern_src(tok),
            };
            let t = table.intern_tgt(&row.target);
            table.probs[s].insert(t, row.prob);
        }
        Ok(table)
    }
}

/// Trains IBM Model 1 with `iterations` EM steps and returns the table and
/// the per-iteration corpus log-likelihood (computed under the table each
/// iteration starts with; non-decreasing by EM theory).
pub fn train_model1(
    pairs: &[ParallelPair],
    iterations: usize,
) -> Result<(TranslationTable, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if iterations == 0 {
        return Err(Error::Config("alignment iterations must be >= 1".into()));
    }

    let mut table = TranslationTable::new();
    // Intern in corpus order and collect co-occurrence support.
    let interned: Vec<(Vec<usize>, Vec<usize>)> = pairs
        .iter()
        .map(|p| {
            let src: Vec<usize> = p.source_tokens.iter().map(|t| table.intern_src(t)).collect();
            let tgt: Vec<usize> = p.target_tokens.iter().map(|t| table.intern_tgt(t)).collect();
            (src, tgt)
        })
        .collect();
    for (src, tgt) in &interned {
        for &t in tgt {
            table.probs[NULL_SRC].insert(t, 0.0);
            for &s in src {
                table.probs[s].insert(t, 0.0);
            }
        }
    }
    for m in table.probs.iter_mut() {
        let u = 1.0 / m.len() as f64;
        for v in m.values_mut() {
            *v = u;
        }
    }

    let mut log_likelihoods = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let mut counts: Vec<HashMap<usize, f64>> = vec![HashMap::new(); table.probs.len()];
        let mut totals: Vec<f64> = vec![0.0; table.probs.len()];
        let mut ll = 0.0;
        for (src, tgt) in &interned {
            let norm = ((src.len() + 1) as f64).ln();
            for &f in tgt {
                let mut denom = table.probs[NULL_SRC][&f];
                for &e in src {
                    denom += table.probs[e][&f];
                }
                ll += denom.ln() - norm;
                let mut bump = |e: usize| {
                    let delta = table.probs[e][&f] / denom;
                    *counts[e].entry(f).or_insert(0.0) += delta;
                    totals[e] += delta;
                };
                bump(NULL_SRC);
                for &e in src {
                    bump(e);
                }
            }
        }
        for (e, cmap) in counts.iter().enumerate() {
            for (&f, &c) in cmap {
                table.probs[e].insert(f, c / totals[e]);
            }
        }
        log_likelihoods.push(ll);
    }
    Ok((table, log_likelihoods))
}

/// Viterbi decoding under Model 1, source → target.
pub fn viterbi_align(pair: &ParallelPair, table: &TranslationTable) -> Alignment {
    let mut links = Vec::new();
    for (i, src_tok) in pair.source_tokens.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, tgt_tok) in pair.target_tokens.iter().enumerate() {
            let p = table.prob(Some(src_tok), tgt_tok);
            if best.map_or(true, |(_, bp)| p > bp) {
                best = Some((j, p));
            }
        }
        if let Some((j, p)) = best {
            if p > table.prob(None, &pair.target_tokens[j]) {
                links.push((i, j));
            }
        }
    }
    links.sort_unstable();
    Alignment { links }
}

/// One line per alignment, links as "i-j" space-separated ascending.
pub fn write_pharaoh(alignments: &[Alignment]) -> String {
    let mut out = String::new();
    for a in alignments {
        let mut links = a.links.clone();
        links.sort_unstable();
        let line: Vec<String> = links.iter().map(|(i, j)| format!("{i}-{j}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Parses Pharaoh text; blank lines are pairs with no links.
pub fn read_pharaoh(text: &str) -> Result<Vec<Alignment>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let mut links = Vec::new();
        for part in line.split_whitespace() {
            let (i, j) = part
                .split_once('-')
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                .ok_or_else(|| {
                    Error::malformed("<pharaoh>", idx + 1, format!("bad link {part:?}"))
                })?;
            links.push((i, j));
        }
        links.sort_unstable();
        out.push(Alignment { links });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn pair_of(id: &str, src: &str, tgt: &str) -> ParallelPair {
        ParallelPair {
            pair_id: id.to_string(),
            source_tokens: src.split_whitespace().map(str::to_string).collect(),
            target_tokens: tgt.split_whitespace().map(str::to_string).collect(),
            source_raw: src.split_whitespace().map(str::to_string).collect(),
        }
    }

    /// Independent dense reference implementation of Model 1 EM, used as an
    /// oracle for the production code.
    mod reference {
        use std::collections::BTreeSet;

        pub struct RefModel {
            pub src: Vec<String>, // index 0 = NULL
            pub tgt: Vec<String>,
            pub t: Vec<Vec<f64>>,
            pub lls: Vec<f64>,
        }

        pub fn train(pairs: &[(Vec<&str>, Vec<&str>)], iterations: usize) -> RefModel {
            let mut src_set = BTreeSet::new();
            let mut tgt_set = BTreeSet::new();
            for (s, t) in pairs {
                src_set.extend(s.iter().map(|x| x.to_string()));
                tgt_set.extend(t.iter().map(|x| x.to_string()));
            }
            let mut src: Vec<String> = vec!["<NULL>".into()];
            src.extend(src_set);
            let tgt: Vec<String> = tgt_set.into_iter().collect();
            let sidx = |tok: &str| src.iter().position(|x| x == tok).unwrap();
            let tidx = |tok: &str| tgt.iter().position(|x| x == tok).unwrap();

            // support[s][t] = co-occurrence indicator (NULL co-occurs with all).
            let mut support = vec![vec![false; tgt.len()]; src.len()];
            for (s_toks, t_toks) in pairs {
                for f in t_toks {
                    support[0][tidx(f)] = true;
                    for e in s_toks {
                        support[sidx(e)][tidx(f)] = true;
                    }
                }
            }
            let mut t = vec![vec![0.0; tgt.len()]; src.len()];
            for (si, row) in support.iter().enumerate() {
                let n = row.iter().filter(|&&b| b).count();
                for (ti, &b) in row.iter().enumerate() {
                    if b {
                        t[si][ti] = 1.0 / n as f64;
                    }
                }
            }

            let mut lls = Vec::new();
            for _ in 0..iterations {
                let mut count = vec![vec![0.0; tgt.len()]; src.len()];
                let mut total = vec![0.0; src.len()];
                let mut ll = 0.0;
                for (s_toks, t_toks) in pairs {
                    for f in t_toks {
                        let fi = tidx(f);
                        let mut denom = t[0][fi];
                        for e in s_toks {
                            denom += t[sidx(e)][fi];
                        }
                        ll += denom.ln() - ((s_toks.len() + 1) as f64).ln();
                        let mut bump = |ei: usize| {
                            let d = t[ei][fi] / denom;
                            count[ei][fi] += d;
                            total[ei] += d;
                        };
                        bump(0);
                        for e in s_toks {
                            bump(sidx(e));
                        }
                    }
                }
                for si in 0..src.len() {
                    for ti in 0..tgt.len() {
                        if count[si][ti] > 0.0 {
                            t[si][ti] = count[si][ti] / total[si];
                        }
                    }
                }
                lls.push(ll);
            }
            RefModel { src, tgt, t, lls }
        }
    }

    #[test]
    fn single_cooccurrence_is_certain() {
        let pairs = vec![pair_of("p", "a", "x")];
        let (table, _) = train_model1(&pairs, 5).unwrap();
        assert!((table.prob(Some("a"), "x") - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_iterations_is_an_error() {
        let pairs = vec![pair_of("p", "a", "x")];
        assert!(matches!(
            train_model1(&pairs, 0).unwrap_err(),
            Error::Config(_)
        ));
        assert!(matches!(
            train_model1(&[], 5).unwrap_err(),
            Error::EmptyCorpus
        ));
    }

    #[test]
    fn three_pair_corpus_em_matches_reference() {
        let pairs = vec![
            pair_of("1", "a", "x"),
            pair_of("2", "a b", "x y"),
            pair_of("3", "b", "y"),
        ];
        let (table, lls) = train_model1(&pairs, 5).unwrap();

        // Hand-checked: under the uniform init every conditional is 0.5, so
        // the first-iteration log-likelihood is -4 ln 2.
        assert!((lls[0] - (-4.0 * std::f64::consts::LN_2)).abs() < 1e-12);

        // argmax target for each source token after 5 iterations.
        assert!(table.prob(Some("a"), "x") > table.prob(Some("a"), "y"));
        assert!(table.prob(Some("b"), "y") > table.prob(Some("b"), "x"));

        let r = reference::train(
            &[
                (vec!["a"], vec!["x"]),
                (vec!["a", "b"], vec!["x", "y"]),
                (vec!["b"], vec!["y"]),
            ],
            5,
        );
        for (si, s_tok) in r.src.iter().enumerate() {
            for (ti, t_tok) in r.tgt.iter().enumerate() {
                if r.t[si][ti] > 0.0 {
                    let source = (si != 0).then_some(s_tok.as_str());
                    assert!(
                        (table.prob(source, t_tok) - r.t[si][ti]).abs() < 1e-12,
                        "t({t_tok}|{s_tok}) diverges from reference"
                    );
                }
            }
        }
        for (a, b) in lls.iter().zip(&r.lls) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn log_likelihood_non_decreasing_and_normalized() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut pairs = Vec::new();
        for k in 0..60 {
            let len = rng.random_range(2..8usize);
            let src: Vec<String> = (0..len)
                .map(|_| format!("s{}", rng.random_range(0..30)))
                .collect();
            let tgt: Vec<String> = src.iter().map(|s| s.replace('s', "t")).collect();
            pairs.push(pair_of(&format!("p{k}"), &src.join(" "), &tgt.join(" ")));
        }
        let (table, lls) = train_model1(&pairs, 5).unwrap();
        for w in lls.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "log-likelihood decreased: {lls:?}");
        }
        assert!(table.max_normalization_deviation() < 1e-9);
    }

    #[test]
    fn viterbi_rules() {
        // t(x|a)=1, t(x|NULL)=0: forced single link.
        let mut forced = TranslationTable::new();
        let s = forced.intern_src("a");
        let x = forced.intern_tgt("x");
        forced.probs[s].insert(x, 1.0);
        let a = viterbi_align(&pair_of("p", "a", "x"), &forced);
        assert_eq!(a.links, vec![(0, 0)]);

        // Tie between equal targets goes to the smaller index.
        let mut tie = TranslationTable::new();
        let s = tie.intern_src("a");
        let x = tie.intern_tgt("x");
        let y = tie.intern_tgt("y");
        tie.probs[s].insert(x, 0.5);
        tie.probs[s].insert(y, 0.5);
        tie.probs[NULL_SRC].insert(x, 0.1);
        tie.probs[NULL_SRC].insert(y, 0.1);
        let a = viterbi_align(&pair_of("p", "a", "x y"), &tie);
        assert_eq!(a.links, vec![(0, 0)]);

        // NULL dominance produces no links.
        let mut null_wins = TranslationTable::new();
        let s = null_wins.intern_src("a");
        let x = null_wins.intern_tgt("x");
        null_wins.probs[s].insert(x, 0.2);
        null_wins.probs[NULL_SRC].insert(x, 0.9);
        let a = viterbi_align(&pair_of("p", "a", "x"), &null_wins);
        assert!(a.links.is_empty());
    }

    #[test]
    fn table_jsonl_round_trip_deterministic() {
        let pairs = vec![
            pair_of("1", "a", "x"),
            pair_of("2", "a b", "x y"),
            pair_of("3", "b", "y"),
        ];
        let (table, _) = train_model1(&pairs, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("t1.jsonl");
        let p2 = dir.path().join("t2.jsonl");
        table.save_jsonl(&p1).unwrap();
        table.save_jsonl(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let loaded = TranslationTable::load_jsonl(&p1).unwrap();
        assert!((loaded.prob(Some("a"), "x") - table.prob(Some("a"), "x")).abs() < 1e-15);
        assert!((loaded.prob(None, "y") - table.prob(None, "y")).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn pharaoh_round_trip(linksets in proptest::collection::vec(
            proptest::collection::vec((0usize..20, 0usize..20), 0..8),
            0..6,
        )) {
            let alignments: Vec<Alignment> = linksets
                .into_iter()
                .map(|mut links| {
                    links.sort_unstable();
                    links.dedup();
                    Alignment { links }
                })
                .collect();
            let text = write_pharaoh(&alignments);
            let parsed = read_pharaoh(&text).unwrap();
            prop_assert_eq!(parsed, alignments);
        }
    }
}
