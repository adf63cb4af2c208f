//! Multi-task pre-training: batch assembly, the combined
//! span/consistency/masked-token loss, Adam updates, per-step JSONL logging,
//! checkpointing, and a finite-difference gradient checker.
//!
//! Determinism contract: identical (data, config, seed) produce an identical
//! final checkpoint, byte for byte, regardless of the rayon thread count.
//! Forward passes run in parallel but gradients are accumulated strictly in
//! batch order.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::ClismInstance;
use crate::model::encoder::{DropoutPlan, EncoderOutput, ForwardCache, SegmentSpec};
use crate::model::heads::{pool, pool_backward, Segment};
use crate::model::store::TensorStore;
use crate::model::{Model, Scalar};
use crate::objectives::{
    cacr_forward_backward, clism_instance, mlm_instance, LossFlags, LossReport, SlotTarget,
    CACR_TAU,
};
use crate::optim::{lr_at, Adam, AdamHyper};
use crate::util::{derive_seed, write_json};
use crate::vocab::{CLS, SEP};

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const DROPOUT_STREAM: u64 = 0x4452_4f50;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: usize,
    pub lr: f64,
    pub warmup: usize,
    pub seed: u64,
    pub flags: LossFlags,
    pub checkpoint_interval: usize,
    pub clip_norm: Option<f64>,
    pub tau: f64,
}

impl TrainConfig {
    /// Scaled-down defaults for training from scratch on one machine.
    pub fn desk(seed: u64) -> Self {
        Self {
            batch_size: 16,
            total_steps: 2000,
            lr: 3e-4,
            warmup: 200,
            seed,
            flags: LossFlags::all(),
            checkpoint_interval: 500,
            clip_norm: Some(1.0),
            tau: CACR_TAU,
        }
    }

    /// Reference defaults matching the usual large-encoder recipe.
    pub fn reference(seed: u64) -> Self {
        Self {
            batch_size: 64,
            total_steps: 15_000,
            lr: 1e-5,
            warmup: 1500,
            seed,
            flags: LossFlags::all(),
            checkpoint_interval: 1000,
            clip_norm: Some(1.0),
            tau: CACR_TAU,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.batch_size == 0 || self.total_steps == 0 || self.checkpoint_interval == 0 {
            return bad("batch size, total steps, and checkpoint interval must be positive");
        }
        if self.lr <= 0.0 || self.tau <= 0.0 {
            return bad("learning rate and tau must be positive");
        }
        if self.warmup > self.total_steps {
            return bad("warmup must not exceed total steps");
        }
        if matches!(self.clip_norm, Some(c) if c <= 0.0) {
            return bad("clip norm must be positive when set");
        }
        self.flags.validate()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub l_clism: f64,
    pub l_cacr: f64,
    pub l_mlm: f64,
    pub l_total: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub slots: usize,
    pub labeled: usize,
}

struct Encoded<F: Scalar> {
    out: EncoderOutput<F>,
    cache: ForwardCache<F>,
    clean: Option<(EncoderOutput<F>, ForwardCache<F>)>,
}

fn encode_item<F: Scalar>(
    model: &Model<F>,
    inst: &ClismInstance,
    item: usize,
    want_clean: bool,
    dropout_seed: Option<u64>,
) -> Result<Encoded<F>> {
    let len = inst.real_len();
    let ids = &inst.input_ids[..len];
    let mask = vec![true; len];
    let rate = model.config.dropout;
    let plan_for = |stream: u64| -> Option<DropoutPlan> {
        dropout_seed
            .filter(|_| rate > 0.0)
            .map(|s| DropoutPlan {
                rate,
                seed: derive_seed(s, stream),
            })
    };
    let (out, cache) = model.forward(
        ids,
        &mask,
        SegmentSpec {
            source: inst.source_range(),
            target: Some(inst.target_range()),
        },
        plan_for(2 * item as u64).as_ref(),
    )?;
    let clean = if want_clean {
        let keep = inst.source_ids.len().min(model.config.max_len - 2);
        let mut clean_ids = Vec::with_capacity(keep + 2);
        clean_ids.push(CLS);
        clean_ids.extend_from_slice(&inst.source_ids[..keep]);
        clean_ids.push(SEP);
        let clean_mask = vec![true; clean_ids.len()];
        Some(model.forward(
            &clean_ids,
            &clean_mask,
            SegmentSpec {
                source: 1..1 + keep,
                target: None,
            },
            plan_for(2 * item as u64 + 1).as_ref(),
        )?)
    } else {
        None
    };
    Ok(Encoded { out, cache, clean })
}

/// Combined loss and gradients for one batch. Forward passes run in
/// parallel; losses and the backward sweep run in batch order so results do
/// not depend on the thread count.
pub fn batch_grads<F: Scalar>(
    model: &Model<F>,
    batch: &[&ClismInstance],
    flags: LossFlags,
    tau: f64,
    dropout_seed: Option<u64>,
    grads: &mut TensorStore<F>,
) -> Result<LossReport> {
    flags.validate()?;
    if batch.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    let encoded: Vec<Encoded<F>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, inst)| encode_item(model, inst, i, flags.cacr, dropout_seed))
        .collect::<Result<_>>()?;

    let mut d_hidden: Vec<Array2<F>> = encoded
        .iter()
        .map(|e| Array2::zeros(e.out.hidden.raw_dim()))
        .collect();
    let mut report = LossReport::default();
    report.slots = batch.iter().map(|i| i.que_positions.len()).sum();
    report.labeled = batch
        .iter()
        .map(|i| {
            let len = i.real_len();
            i.mlm_labels[..len].iter().filter(|&&l| l >= 0).count()
        })
        .sum();

    if flags.clism && report.slots > 0 {
        let inv = F::from_f64(1.0 / report.slots as f64);
        for (i, e) in encoded.iter().enumerate() {
            let inst = batch[i];
            let slots: Vec<SlotTarget> = inst
                .que_positions
                .iter()
                .zip(inst.answer_starts.iter().zip(&inst.answer_ends))
                .map(|(&q, (&start, &end))| SlotTarget { q, start, end })
                .collect();
            let partial = clism_instance(model, &e.out, &slots, inv, &mut d_hidden[i], grads)?;
            report.l_clism += partial.to_f64();
        }
    }

    if flags.mlm && report.labeled > 0 {
        let inv = F::from_f64(1.0 / report.labeled as f64);
        for (i, e) in encoded.iter().enumerate() {
            let len = batch[i].real_len();
            let partial = mlm_instance(
                model,
                &e.out,
                &batch[i].mlm_labels[..len],
                inv,
                &mut d_hidden[i],
                grads,
            )?;
            report.l_mlm += partial.to_f64();
        }
    }

    let mut d_clean: Vec<Option<Array2<F>>> = encoded
        .iter()
        .map(|e| e.clean.as_ref().map(|(o, _)| Array2::zeros(o.hidden.raw_dim())))
        .collect();
    if flags.cacr {
        let mut masked_src = Vec::with_capacity(batch.len());
        let mut target = Vec::with_capacity(batch.len());
        let mut clean_src = Vec::with_capacity(batch.len());
        for e in &encoded {
            masked_src.push(pool(&e.out, Segment::Source)?);
            target.push(pool(&e.out, Segment::Target)?);
            let (clean_out, _) = e.clean.as_ref().expect("clean view requested");
            clean_src.push(pool(clean_out, Segment::Source)?);
        }
        let (loss, vg) =
            cacr_forward_backward(&masked_src, &target, &clean_src, F::from_f64(tau))?;
        report.l_cacr = loss.to_f64();
        for (i, e) in encoded.iter().enumerate() {
            pool_backward(&e.out, Segment::Source, &vg.masked_src[i], &mut d_hidden[i]);
            pool_backward(&e.out, Segment::Target, &vg.target[i], &mut d_hidden[i]);
            let (clean_out, _) = e.clean.as_ref().expect("clean view requested");
            pool_backward(
                clean_out,
                Segment::Source,
                &vg.clean_src[i],
                d_clean[i].as_mut().expect("clean gradient buffer"),
            );
        }
    }

    for (i, e) in encoded.iter().enumerate() {
        model.backward(&e.cache, &d_hidden[i], grads);
        if let (Some((_, clean_cache)), Some(dc)) = (&e.clean, &d_clean[i]) {
            model.backward(clean_cache, dc, grads);
        }
    }

    report.finish(flags);
    Ok(report)
}

/// One optimization step. Aborts with the loss breakdown if anything goes
/// non-finite.
pub fn train_step(
    model: &mut Model<f32>,
    opt: &mut Adam<f32>,
    batch: &[&ClismInstance],
    cfg: &TrainConfig,
    step: usize,
) -> Result<StepRecord> {
    let mut grads = model.grad_store();
    let dropout_seed = Some(derive_seed(
        derive_seed(cfg.seed, DROPOUT_STREAM),
        step as u64,
    ));
    let report = batch_grads(model, batch, cfg.flags, cfg.tau, dropout_seed, &mut grads)?;
    let detail = format!(
        "clism {:.6} cacr {:.6} mlm {:.6}",
        report.l_clism, report.l_cacr, report.l_mlm
    );
    if !report.l_total.is_finite() {
        return Err(Error::NonFinite {
            step: step as u64,
            detail,
        });
    }
    let lr = lr_at(step, cfg.lr, cfg.warmup);
    let grad_norm = opt.step(&mut model.params, &grads, lr);
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite {
            step: step as u64,
            detail: format!("gradient norm {grad_norm}; {detail}"),
        });
    }
    Ok(StepRecord {
        step,
        l_clism: report.l_clism,
        l_cacr: report.l_cacr,
        l_mlm: report.l_mlm,
        l_total: report.l_total,
        lr,
        grad_norm,
        slots: report.slots,
        labeled: report.labeled,
    })
}

fn save_checkpoint(model: &Model<f32>, opt: &Adam<f32>, cfg: &TrainConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    model.save(dir)?;
    opt.save(dir)?;
    write_json(&dir.join("train_config.json"), cfg)
}

#[derive(Debug, Serialize)]
pub struct PretrainSummary {
    pub steps: usize,
    pub final_dir: PathBuf,
    pub log_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub last: StepRecord,
}

/// Runs the full pre-training loop: per-epoch seeded shuffling, periodic and
/// final checkpoints (model + optimizer + config snapshot), JSONL step log.
pub fn pretrain(
    model: &mut Model<f32>,
    instances: &[ClismInstance],
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<PretrainSummary> {
    cfg.validate()?;
    if instances.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join("train_log.jsonl");
    let mut log = std::io::BufWriter::new(
        fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?,
    );

    let mut opt = Adam::new(
        model.params.layout_arc(),
        AdamHyper {
            clip_norm: cfg.clip_norm,
            ..AdamHyper::default()
        },
    );
    let n = instances.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch: u64 = 0;
    let mut cursor = n; // force a shuffle before the first batch
    let mut checkpoints = Vec::new();
    let mut last = None;

    for step in 0..cfg.total_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor >= n {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(cfg.seed, SHUFFLE_STREAM), epoch));
                order.shuffle(&mut rng);
                epoch += 1;
                cursor = 0;
            }
            batch.push(&instances[order[cursor]]);
            cursor += 1;
        }
        let rec = train_step(model, &mut opt, &batch, cfg, step)?;
        let line = serde_json::to_string(&rec).map_err(|e| Error::json(&log_path, e))?;
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        if cfg.flags.mlm && rec.labeled == 0 {
            eprintln!("warning: step {step} had no masked positions to recover");
        }
        if (step + 1) % cfg.checkpoint_interval == 0 && step + 1 < cfg.total_steps {
            let dir = out_dir.join(format!("step{:06}", step + 1));
            save_checkpoint(model, &opt, cfg, &dir)?;
            checkpoints.push(dir);
        }
        last = Some(rec);
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;

    let final_dir = out_dir.join("final");
    save_checkpoint(model, &opt, cfg, &final_dir)?;
    checkpoints.push(final_dir.clone());
    Ok(PretrainSummary {
        steps: cfg.total_steps,
        final_dir,
        log_path,
        checkpoints,
        last: last.expect("at least one step"),
    })
}

/// Finite-difference gradient check of the combined objective on a tiny
/// 64-bit model: central differences with h = 1e-5, sampling roughly 100
/// parameters stratified across tensors (at least two per tensor).
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst_rel_err: f64,
    pub worst_param: String,
    pub pass: bool,
}

pub fn grad_check(
    model: &mut Model<f64>,
    batch: &[&ClismInstance],
    flags: LossFlags,
    tau: f64,
) -> Result<GradCheckReport> {
    let dropout_seed = Some(derive_seed(0x4743, 0));
    let mut grads = model.grad_store();
    batch_grads(model, batch, flags, tau, dropout_seed, &mut grads)?;

    let eval = |model: &Model<f64>| -> Result<f64> {
        let mut scratch = model.grad_store();
        Ok(batch_grads(model, batch, flags, tau, dropout_seed, &mut scratch)?.l_total)
    };

    let layout = model.params.layout_arc();
    let total = layout.total_len();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let h = 1e-5;
    let mut worst_rel_err = 0.0;
    let mut worst_param = String::new();
    let mut checked = 0;
    for spec in layout.iter() {
        let len: usize = spec.shape.iter().product();
        let k = (((100 * len) as f64 / total as f64).round() as usize).max(2);
        let picks = rand::seq::index::sample(&mut rng, len, k.min(len));
        for idx in picks.iter() {
            let flat = spec.offset + idx;
            let orig = model.params.data()[flat];
            model.params.data_mut()[flat] = orig + h;
            let f_plus = eval(model)?;
            model.params.data_mut()[flat] = orig - h;
            let f_minus = eval(model)?;
            model.params.data_mut()[flat] = orig;
            let fd = (f_plus - f_minus) / (2.0 * h);
            let an = grads.data()[flat];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1.0);
            if rel > worst_rel_err {
                worst_rel_err = rel;
                worst_param = format!("{}[{}]", spec.name, idx);
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        checked,
        worst_rel_err,
        worst_param,
        pass: worst_rel_err < 1e-6,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::vocab::{MASK, QUE};

    // [CLS] [QUE] w [SEP] w w [SEP]: one slot pointing at the first target
    // token, one masked source position.
    fn tiny_instance(id: &str, with_label: bool) -> ClismInstance {
        let input_ids = vec![CLS, QUE, if with_label { MASK } else { 8 }, SEP, 9, 10, SEP];
        let mut mlm_labels = vec![-1i64; 7];
        if with_label {
            mlm_labels[2] = 8;
        }
        ClismInstance {
            pair_id: id.to_string(),
            input_ids,
            attention_mask: vec![1; 7],
            que_positions: vec![1],
            answer_starts: vec![4],
            answer_ends: vec![5],
            mlm_labels,
            segment_bounds: [[1, 3], [4, 6]],
            source_ids: vec![7, 8],
        }
    }

    fn cfg(flags: LossFlags) -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            total_steps: 4,
            lr: 1e-3,
            warmup: 0,
            seed: 5,
            flags,
            checkpoint_interval: 2,
            clip_norm: Some(1.0),
            tau: CACR_TAU,
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::desk(1).validate().is_ok());
        assert!(TrainConfig::reference(1).validate().is_ok());
        let mut c = TrainConfig::desk(1);
        c.warmup = c.total_steps + 1;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk(1);
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk(1);
        c.flags = LossFlags {
            clism: false,
            cacr: false,
            mlm: false,
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn combined_objective_passes_gradient_check() {
        let mut model = Model::<f64>::init(ModelConfig::grad_check(20), 3).unwrap();
        let a = tiny_instance("a", true);
        let b = tiny_instance("b", false);
        let report = grad_check(&mut model, &[&a, &b], LossFlags::all(), CACR_TAU).unwrap();
        assert!(report.checked >= 2 * 4);
        assert!(
            report.pass,
            "worst {} at {}",
            report.worst_rel_err, report.worst_param
        );
    }

    #[test]
    fn gradients_do_not_depend_on_thread_count() {
        let model = Model::<f32>::init(ModelConfig::grad_check(20), 9).unwrap();
        let insts: Vec<ClismInstance> = (0..6)
            .map(|i| tiny_instance(&format!("i{i}"), i % 2 == 0))
            .collect();
        let batch: Vec<&ClismInstance> = insts.iter().collect();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let mut grads = model.grad_store();
                batch_grads(&model, &batch, LossFlags::all(), CACR_TAU, Some(7), &mut grads)
                    .unwrap();
                grads.data().to_vec()
            })
        };
        let g1 = run(1);
        let g4 = run(4);
        assert_eq!(g1.len(), g4.len());
        for (a, b) in g1.iter().zip(&g4) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn disabled_objectives_leave_their_heads_untouched() {
        let insts = [tiny_instance("a", true), tiny_instance("b", true)];
        let batch: Vec<&ClismInstance> = insts.iter().collect();

        let run = |flags: LossFlags| -> Model<f32> {
            let mut model = Model::<f32>::init(ModelConfig::grad_check(20), 21).unwrap();
            let mut opt = Adam::new(model.params.layout_arc(), AdamHyper::default());
            for step in 0..3 {
                train_step(&mut model, &mut opt, &batch, &cfg(flags), step).unwrap();
            }
            model
        };
        let fresh = Model::<f32>::init(ModelConfig::grad_check(20), 21).unwrap();

        let no_clism = run(LossFlags {
            clism: false,
            cacr: true,
            mlm: true,
        });
        for name in ["span.w_start", "span.w_end"] {
            assert_eq!(
                no_clism.params.view2(name),
                fresh.params.view2(name),
                "{name} moved without its objective"
            );
        }
        assert_ne!(no_clism.params.view1("mlm.bias"), fresh.params.view1("mlm.bias"));

        let no_mlm = run(LossFlags {
            clism: true,
            cacr: true,
            mlm: false,
        });
        assert_eq!(no_mlm.params.view1("mlm.bias"), fresh.params.view1("mlm.bias"));
        assert_ne!(no_mlm.params.view2("span.w_start"), fresh.params.view2("span.w_start"));
    }

    #[test]
    fn batch_without_labels_trains_cleanly() {
        let insts = [tiny_instance("a", false), tiny_instance("b", false)];
        let batch: Vec<&ClismInstance> = insts.iter().collect();
        let mut model = Model::<f32>::init(ModelConfig::grad_check(20), 2).unwrap();
        let mut opt = Adam::new(model.params.layout_arc(), AdamHyper::default());
        let rec = train_step(&mut model, &mut opt, &batch, &cfg(LossFlags::all()), 0).unwrap();
        assert_eq!(rec.labeled, 0);
        assert_eq!(rec.l_mlm, 0.0);
        assert!(rec.l_total.is_finite());
    }

    #[test]
    fn warmup_first_step_only_advances_optimizer() {
        let insts = [tiny_instance("a", true), tiny_instance("b", true)];
        let batch: Vec<&ClismInstance> = insts.iter().collect();
        let mut model = Model::<f32>::init(ModelConfig::grad_check(20), 4).unwrap();
        let before = model.params.data().to_vec();
        let mut opt = Adam::new(model.params.layout_arc(), AdamHyper::default());
        let mut c = cfg(LossFlags::all());
        c.warmup = 2;
        let rec = train_step(&mut model, &mut opt, &batch, &c, 0).unwrap();
        assert_eq!(rec.lr, 0.0);
        assert_eq!(model.params.data(), &before[..]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn non_finite_loss_aborts_with_step() {
        let insts = [tiny_instance("a", true), tiny_instance("b", true)];
        let batch: Vec<&ClismInstance> = insts.iter().collect();
        let mut model = Model::<f32>::init(ModelConfig::grad_check(20), 4).unwrap();
        model.params.view2_mut("embed.token")[(8, 0)] = f32::NAN;
        let mut opt = Adam::new(model.params.layout_arc(), AdamHyper::default());
        match train_step(&mut model, &mut opt, &batch, &cfg(LossFlags::all()), 7) {
            Err(Error::NonFinite { step, .. }) => assert_eq!(step, 7),
            other => panic!("expected non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn pretrain_writes_log_and_checkpoints_deterministically() {
        let insts: Vec<ClismInstance> = (0..5)
            .map(|i| tiny_instance(&format!("p{i}"), i % 2 == 0))
            .collect();
        let run = |dir: &Path| {
            let mut model = Model::<f32>::init(ModelConfig::grad_check(20), 13).unwrap();
            pretrain(&mut model, &insts, &cfg(LossFlags::all()), dir).unwrap()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let s1 = run(d1.path());
        let s2 = run(d2.path());
        assert_eq!(s1.steps, 4);
        assert!(d1.path().join("step000002").join("checkpoint.bin").exists());

        let log = fs::read_to_string(&s1.log_path).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines.len(), 4);
        let rec: StepRecord = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(rec.step, 0);
        assert!(rec.l_total.is_finite());

        let b1 = fs::read(s1.final_dir.join("checkpoint.bin")).unwrap();
        let b2 = fs::read(s2.final_dir.join("checkpoint.bin")).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(
            fs::read_to_string(s1.log_path).unwrap(),
            fs::read_to_string(s2.log_path).unwrap()
        );
    }

    #[test]
    fn checkpoint_resume_matches_uninterrupted_run() {
        let insts = [tiny_instance("a", true), tiny_instance("b", false)];
        let batch: Vec<&ClismInstance> = insts.iter().collect();
        let c = cfg(LossFlags::all());

        let mut model = Model::<f32>::init(ModelConfig::grad_check(20), 31).unwrap();
        let mut opt = Adam::new(model.params.layout_arc(), AdamHyper::default());
        train_step(&mut model, &mut opt, &batch, &c, 0).unwrap();

        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, &opt, &c, dir.path()).unwrap();
        let mut model2 = Model::<f32>::load(dir.path()).unwrap();
        let mut opt2 = Adam::<f32>::load(dir.path(), model2.params.layout()).unwrap();

        train_step(&mut model, &mut opt, &batch, &c, 1).unwrap();
        train_step(&mut model2, &mut opt2, &batch, &c, 1).unwrap();
        for (a, b) in model.params.data().iter().zip(model2.params.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
