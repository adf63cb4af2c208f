//! Few-shot transfer protocol: train on nested subsets of increasing size
//! with a fixed small step budget, several seeds per size, and report
//! per-seed and mean test scores.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::QaRecord;
use crate::error::{Error, Result};
use crate::finetune::{evaluate_qa, finetune_qa, FinetuneConfig};
use crate::model::Model;
use crate::util::derive_seed;
use crate::vocab::Vocabulary;

const SAMPLE_STREAM: u64 = 0x5355_4253;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FewShotPlan {
    pub sizes: Vec<usize>,
    pub seeds: usize,
    pub steps: usize,
}

impl Default for FewShotPlan {
    fn default() -> Self {
        Self {
            sizes: vec![64, 128, 256, 512, 1024],
            seeds: 5,
            steps: 200,
        }
    }
}

impl FewShotPlan {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::Config("subset sizes must be positive".into()));
        }
        if self.seeds == 0 || self.steps == 0 {
            return Err(Error::Config("seed count and step budget must be positive".into()));
        }
        Ok(())
    }
}

/// First `k` positions of a seeded shuffle of `0..n`. Subsets for the same
/// seed are nested across sizes and duplicate-free.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::Config(format!(
            "subset size {k} exceeds training set size {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.truncate(k);
    Ok(order)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FewShotCell {
    /// Span-F1 percent per seed, in seed order.
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub per_seed_em: Vec<f64>,
    pub mean_em: f64,
}

/// Results keyed by subset size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FewShotReport(pub BTreeMap<usize, FewShotCell>);

impl FewShotReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("size,mean_f1\n");
        for (size, cell) in &self.0 {
            writeln!(out, "{size},{:.4}", cell.mean).expect("string write");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Task-level result file: per-dataset metrics plus the optional few-shot
/// grid, serialized as `metrics.json` by the command-line tool.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub dataset: String,
    pub per_eval_file: BTreeMap<String, serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fewshot: Option<FewShotReport>,
}

/// Runs the full grid: for every (size, seed) pair, fine-tune a clone of
/// `base` on a nested subset for `plan.steps` optimizer steps and score it
/// on `test`. Runs are independent and execute in parallel; the report
/// aggregates in (size, seed) order.
pub fn run_qa_fewshot(
    base: &Model<f32>,
    train: &[QaRecord],
    test: &[QaRecord],
    vocab: &Vocabulary,
    cfg: &FinetuneConfig,
    plan: &FewShotPlan,
) -> Result<FewShotReport> {
    plan.validate()?;
    cfg.validate()?;
    let runs: Vec<(usize, usize)> = plan
        .sizes
        .iter()
        .flat_map(|&size| (0..plan.seeds).map(move |s| (size, s)))
        .collect();
    let scores: Vec<(f64, f64)> = runs
        .par_iter()
        .map(|&(size, seed_idx)| -> Result<(f64, f64)> {
            let run_seed = derive_seed(cfg.seed, seed_idx as u64);
            let subset = sample_indices(train.len(), size, derive_seed(run_seed, SAMPLE_STREAM))?;
            let records: Vec<QaRecord> = subset.iter().map(|&i| train[i].clone()).collect();
            let mut run_cfg = cfg.clone();
            run_cfg.steps = Some(plan.steps);
            run_cfg.seed = run_seed;
            let mut model = base.clone();
            finetune_qa(&mut model, &records, vocab, &run_cfg)?;
            let report = evaluate_qa(&model, test, vocab, &run_cfg)?;
            Ok((report.f1, report.em))
        })
        .collect::<Result<_>>()?;

    let mut table = BTreeMap::new();
    for (chunk, &size) in scores.chunks(plan.seeds).zip(plan.sizes.iter()) {
        let per_seed: Vec<f64> = chunk.iter().map(|s| s.0).collect();
        let per_seed_em: Vec<f64> = chunk.iter().map(|s| s.1).collect();
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        let mean_em = per_seed_em.iter().sum::<f64>() / per_seed_em.len() as f64;
        table.insert(
            size,
            FewShotCell {
                per_seed,
                mean,
                per_seed_em,
                mean_em,
            },
        );
    }
    Ok(FewShotReport(table))
}
