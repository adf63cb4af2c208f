//! Command-line front end over the whole pipeline: synthetic corpus
//! generation, data building, pre-training, fine-tuning, evaluation,
//! few-shot grids, and gradient checking. Every command resolves its
//! configuration (preset → optional JSON config file → flags), writes its
//! outputs plus a provenance manifest, and prints one machine-readable JSON
//! summary line to stdout.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{de::DeserializeOwned, Serialize};
use serde_json::json;

use xspan::align::{read_pharaoh, train_model1, viterbi_align, write_pharaoh, Alignment};
use xspan::corpus::{load_parallel_corpus, load_qa_corpus, load_tagged_corpus, save_qa_corpus};
use xspan::error::{Error, Result};
use xspan::fewshot::{run_qa_fewshot, FewShotPlan, MetricsReport};
use xspan::finetune::{
    attach_tagger, evaluate_ner, evaluate_qa, finetune_ner, finetune_qa, FinetuneConfig, TagSet,
};
use xspan::instance::{build_instances, read_instances, write_instances, InstanceConfig};
use xspan::manifest::ManifestBuilder;
use xspan::model::{Model, ModelConfig};
use xspan::objectives::{LossFlags, CACR_TAU};
use xspan::spans::{load_stopwords, propose_filter_project, Gazetteer};
use xspan::synthetic::{self, QaKind, SyntheticSpec};
use xspan::trainer::{self, TrainConfig};
use xspan::util::{read_json, write_json};
use xspan::vocab::Vocabulary;

/// Output directories default to `$XSPAN_OUT_ROOT/<command>` when `--out`
/// is not given.
const OUT_ROOT_ENV: &str = "XSPAN_OUT_ROOT";

#[derive(Parser)]
#[command(name = "xspan", version, about = "Span-masking pre-training and span-labeling experiments")]
struct Cli {
    /// Master seed; fully determines every output.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads (0 = all cores); never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// JSON object whose keys override the selected preset (flags still win).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Reference,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Task {
    Qa,
    Ner,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AblateTerm {
    Clism,
    Cacr,
    Mlm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossChoice {
    Clism,
    Cacr,
    Mlm,
    Total,
}

#[derive(Subcommand)]
enum Command {
    /// Align a parallel corpus, mine and project spans, and emit training
    /// instances plus the vocabulary and a build-statistics report.
    BuildData {
        /// Parallel corpus TSV: source<TAB>target per line.
        #[arg(long)]
        parallel: PathBuf,
        /// Entity term list, one per line.
        #[arg(long)]
        gazetteer: PathBuf,
        /// Stopword list, one per line (may be empty).
        #[arg(long)]
        stopwords: PathBuf,
        /// Pre-computed Pharaoh alignments; omit to train the aligner.
        #[arg(long)]
        alignments: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Span slots kept per instance.
        #[arg(long, default_value_t = 4)]
        max_spans: usize,
        /// Aligner EM iterations when no alignment file is given.
        #[arg(long, default_value_t = 5)]
        em_iterations: usize,
    },
    /// Pre-train an encoder on built instances.
    Pretrain {
        #[arg(long)]
        instances: PathBuf,
        /// Vocabulary JSON written by build-data.
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        /// Loss terms to disable (repeatable).
        #[arg(long, value_enum)]
        ablate: Vec<AblateTerm>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune a checkpoint on QA span extraction or BIO tagging.
    Finetune {
        /// Checkpoint directory (model + vocabulary).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        task: Task,
        /// Training file: QA JSONL or two-column CoNLL.
        #[arg(long)]
        train: PathBuf,
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        #[arg(long)]
        out: Option<PathBuf>,
        /// QA ablation: omit [QUE] and score from [CLS] instead.
        #[arg(long)]
        no_que: bool,
        /// Re-draw the span projections instead of reusing pre-trained ones.
        #[arg(long)]
        reinit_span_head: bool,
    },
    /// Score a fine-tuned checkpoint on one or more evaluation files.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long, num_args = 1.., required = true)]
        eval_files: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Few-shot grid: nested subsets × seeds, fixed step budget, mean F1.
    Fewshot {
        #[arg(long)]
        checkpoint: PathBuf,
        /// QA JSONL training pool to sample from.
        #[arg(long)]
        train: PathBuf,
        /// QA JSONL test set.
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![64, 128, 256, 512, 1024])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_que: bool,
    },
    /// Check analytic gradients against central finite differences on a
    /// small 64-bit model fed through the real data pipeline.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = LossChoice::Total)]
        loss: LossChoice,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the deterministic copy-language corpus: parallel TSV,
    /// identity Pharaoh alignments, gazetteer, and optional QA sets.
    MakeSynthetic {
        #[arg(long)]
        pairs: usize,
        /// Word types per language side.
        #[arg(long, default_value_t = 200)]
        vocab: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also emit a QA training file with this many records.
        #[arg(long, default_value_t = 0)]
        qa_train: usize,
        /// Also emit a QA test file with this many records.
        #[arg(long, default_value_t = 0)]
        qa_test: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Bounds parallelism; results are thread-count-invariant by design.
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: failed to build thread pool: {e}");
            return ExitCode::from(6);
        }
    }
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn resolve_out(flag: Option<PathBuf>, command: &str) -> Result<PathBuf> {
    if let Some(path) = flag {
        return Ok(path);
    }
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) => Ok(PathBuf::from(root).join(command)),
        None => Err(Error::Config(format!(
            "no --out given and {OUT_ROOT_ENV} is not set"
        ))),
    }
}

/// Overlays keys from a JSON config file onto a serializable preset.
/// Unknown keys are rejected so typos fail loudly.
fn merge_config<T: Serialize + DeserializeOwned>(base: T, file: Option<&Path>) -> Result<T> {
    let Some(path) = file else {
        return Ok(base);
    };
    let mut value = serde_json::to_value(&base).map_err(|e| Error::json(path, e))?;
    let overlay: serde_json::Value = read_json(path)?;
    let serde_json::Value::Object(overlay) = overlay else {
        return Err(Error::Config(format!(
            "config file {} must hold a JSON object",
            path.display()
        )));
    };
    let fields = value.as_object_mut().expect("presets serialize to objects");
    for (key, val) in overlay {
        if !fields.contains_key(&key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        fields.insert(key, val);
    }
    serde_json::from_value(value).map_err(|e| Error::json(path, e))
}

fn load_model_and_vocab(dir: &Path) -> Result<(Model<f32>, Vocabulary)> {
    let model = Model::<f32>::load(dir)?;
    let vocab = Vocabulary::load(&dir.join("vocab.json"))?;
    if vocab.size() != model.config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary size {} does not match model vocabulary {}",
            vocab.size(),
            model.config.vocab_size
        )));
    }
    Ok((model, vocab))
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn run(cli: Cli) -> Result<String> {
    let seed = cli.seed;
    let config_file = cli.config.as_deref();
    match cli.command {
        Command::BuildData {
            parallel,
            gazetteer,
            stopwords,
            alignments,
            out,
            max_spans,
            em_iterations,
        } => {
            let out = resolve_out(out, "build-data")?;
            let corpus = load_parallel_corpus(&parallel)?;
            let vocab = Vocabulary::build(&[parallel.clone()], 1)?;
            let gaz = Gazetteer::load(&gazetteer)?;
            let stop = load_stopwords(&stopwords)?;

            let aligned: Vec<Alignment> = match &alignments {
                Some(path) => {
                    let text =
                        std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    let parsed = read_pharaoh(&text)?;
                    if parsed.len() != corpus.pairs.len() {
                        return Err(Error::Config(format!(
                            "{} alignments for {} pairs",
                            parsed.len(),
                            corpus.pairs.len()
                        )));
                    }
                    parsed
                }
                None => {
                    let (table, _ll) = train_model1(&corpus.pairs, em_iterations)?;
                    corpus.pairs.iter().map(|p| viterbi_align(p, &table)).collect()
                }
            };

            let mut dropped_zero_spans = 0usize;
            let mut inputs = Vec::new();
            for (pair, alignment) in corpus.pairs.iter().zip(&aligned) {
                let spans =
                    propose_filter_project(pair, alignment, Some(&gaz), None, true, &stop)?;
                if spans.is_empty() {
                    dropped_zero_spans += 1;
                } else {
                    inputs.push((pair.clone(), spans));
                }
            }

            let icfg = merge_config(
                InstanceConfig {
                    max_spans,
                    ..InstanceConfig::default()
                },
                config_file,
            )?;
            let (instances, stats) = build_instances(&inputs, &vocab, seed, &icfg)?;

            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let instances_path = out.join("instances.jsonl");
            let vocab_path = out.join("vocab.json");
            write_instances(&instances_path, &instances)?;
            vocab.save(&vocab_path)?;
            if alignments.is_none() {
                let path = out.join("alignment.pharaoh");
                std::fs::write(&path, write_pharaoh(&aligned)).map_err(|e| Error::io(&path, e))?;
            }
            let report = json!({
                "pairs_in": corpus.pairs.len(),
                "skipped_empty_lines": corpus.skipped_empty,
                "dropped_zero_spans": dropped_zero_spans,
                "dropped_no_slots": stats.dropped_no_slots,
                "dropped_answer_truncated": stats.dropped_answer_truncated,
                "instances_out": stats.built,
                "span_origins": stats.span_origins,
                "vocab_size": vocab.size(),
            });
            write_json(&out.join("stats.json"), &report)?;

            let mut manifest = ManifestBuilder::new(
                "build-data",
                json!({"seed": seed, "instance_config": icfg, "em_iterations": em_iterations}),
            );
            manifest.input(&parallel).input(&gazetteer).input(&stopwords);
            if let Some(path) = &alignments {
                manifest.input(path);
            }
            manifest.output(&instances_path).output(&vocab_path);
            manifest.finish(&out)?;
            Ok(json!({"command": "build-data", "out": out, "instances": stats.built,
                      "dropped_zero_spans": dropped_zero_spans})
            .to_string())
        }

        Command::Pretrain {
            instances,
            vocab,
            preset,
            ablate,
            out,
        } => {
            let out = resolve_out(out, "pretrain")?;
            let data = read_instances(&instances)?;
            let voc = Vocabulary::load(&vocab)?;
            let model_cfg = match preset {
                Preset::Desk => ModelConfig::desk(voc.size()),
                Preset::Reference => ModelConfig::reference(voc.size()),
            };
            let mut tcfg = match preset {
                Preset::Desk => TrainConfig::desk(seed),
                Preset::Reference => TrainConfig::reference(seed),
            };
            tcfg.seed = seed;
            tcfg = merge_config(tcfg, config_file)?;
            for term in &ablate {
                match term {
                    AblateTerm::Clism => tcfg.flags.clism = false,
                    AblateTerm::Cacr => tcfg.flags.cacr = false,
                    AblateTerm::Mlm => tcfg.flags.mlm = false,
                }
            }
            let mut model = Model::<f32>::init(model_cfg, seed)?;
            let summary = trainer::pretrain(&mut model, &data, &tcfg, &out)?;
            for dir in summary.checkpoints.iter().chain([&summary.final_dir]) {
                voc.save(&dir.join("vocab.json"))?;
            }

            let mut manifest =
                ManifestBuilder::new("pretrain", serde_json::to_value(&tcfg).unwrap());
            manifest.input(&instances).input(&vocab);
            manifest.output(&summary.final_dir).output(&summary.log_path);
            manifest.finish(&out)?;
            Ok(json!({"command": "pretrain", "steps": summary.steps,
                      "final_loss": summary.last.l_total,
                      "checkpoint": summary.final_dir})
            .to_string())
        }

        Command::Finetune {
            checkpoint,
            task,
            train,
            preset,
            out,
            no_que,
            reinit_span_head,
        } => {
            let out = resolve_out(out, "finetune")?;
            let (model, voc) = load_model_and_vocab(&checkpoint)?;
            let preset_cfg = match (task, preset) {
                (Task::Qa, Preset::Desk) => FinetuneConfig::qa_desk(seed),
                (Task::Qa, Preset::Reference) => FinetuneConfig::qa_reference(seed),
                (Task::Ner, Preset::Desk) => FinetuneConfig::ner_desk(seed),
                (Task::Ner, Preset::Reference) => FinetuneConfig::ner_reference(seed),
            };
            let mut cfg = merge_config(preset_cfg, config_file)?;
            cfg.seed = seed;
            if no_que {
                cfg.use_que = false;
            }
            if reinit_span_head {
                cfg.reinit_span_head = true;
            }

            let summary = match task {
                Task::Qa => {
                    let records = load_qa_corpus(&train)?;
                    let mut model = model;
                    let summary = finetune_qa(&mut model, &records, &voc, &cfg)?;
                    model.save(&out)?;
                    summary
                }
                Task::Ner => {
                    let sentences = load_tagged_corpus(&train)?;
                    let tags = TagSet::from_sentences(&sentences);
                    let mut model = attach_tagger(&model, &tags, cfg.seed);
                    let summary = finetune_ner(&mut model, &sentences, &voc, &tags, &cfg)?;
                    model.save(&out)?;
                    tags.save(&out.join("tags.json"))?;
                    summary
                }
            };
            voc.save(&out.join("vocab.json"))?;
            write_json(&out.join("finetune_config.json"), &cfg)?;
            write_json(&out.join("finetune_summary.json"), &summary)?;

            let mut manifest =
                ManifestBuilder::new("finetune", serde_json::to_value(&cfg).unwrap());
            manifest.input(&checkpoint).input(&train);
            manifest.output(&out.join("checkpoint.bin"));
            manifest.finish(&out)?;
            Ok(json!({"command": "finetune", "task": task_name(task), "out": out,
                      "steps": summary.steps, "train_examples": summary.train_examples,
                      "dropped": summary.dropped, "final_loss": summary.final_loss})
            .to_string())
        }

        Command::Eval {
            checkpoint,
            task,
            eval_files,
            out,
        } => {
            let out = resolve_out(out, "eval")?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let (model, voc) = load_model_and_vocab(&checkpoint)?;
            let snapshot = checkpoint.join("finetune_config.json");
            let cfg: FinetuneConfig = if snapshot.exists() {
                merge_config(read_json(&snapshot)?, config_file)?
            } else {
                merge_config(
                    match task {
                        Task::Qa => FinetuneConfig::qa_desk(seed),
                        Task::Ner => FinetuneConfig::ner_desk(seed),
                    },
                    config_file,
                )?
            };

            let mut per_eval_file = BTreeMap::new();
            match task {
                Task::Qa => {
                    for file in &eval_files {
                        let records = load_qa_corpus(file)?;
                        let r = evaluate_qa(&model, &records, &voc, &cfg)?;
                        per_eval_file
                            .insert(file_stem(file), json!({"n": r.n, "em": r.em, "f1": r.f1}));
                    }
                }
                Task::Ner => {
                    let tags = TagSet::load(&checkpoint.join("tags.json"))?;
                    for file in &eval_files {
                        let sentences = load_tagged_corpus(file)?;
                        let r = evaluate_ner(&model, &sentences, &voc, &tags, &cfg)?;
                        per_eval_file.insert(
                            file_stem(file),
                            json!({"n": r.n, "precision": r.precision,
                                   "recall": r.recall, "entity_f1": r.f1}),
                        );
                    }
                }
            }
            let report = MetricsReport {
                task: task_name(task).to_string(),
                dataset: file_stem(&checkpoint),
                per_eval_file,
                fewshot: None,
            };
            write_json(&out.join("metrics.json"), &report)?;

            let mut manifest = ManifestBuilder::new("eval", serde_json::to_value(&cfg).unwrap());
            manifest.input(&checkpoint);
            for file in &eval_files {
                manifest.input(file);
            }
            manifest.output(&out.join("metrics.json"));
            manifest.finish(&out)?;
            Ok(serde_json::to_string(&json!({
                "command": "eval", "task": task_name(task),
                "out": out, "files": report.per_eval_file,
            }))
            .expect("summary serializes"))
        }

        Command::Fewshot {
            checkpoint,
            train,
            test,
            sizes,
            seeds,
            steps,
            preset,
            out,
            no_que,
        } => {
            let out = resolve_out(out, "fewshot")?;
            let (model, voc) = load_model_and_vocab(&checkpoint)?;
            let preset_cfg = match preset {
                Preset::Desk => FinetuneConfig::qa_desk(seed),
                Preset::Reference => FinetuneConfig::qa_reference(seed),
            };
            let mut cfg = merge_config(preset_cfg, config_file)?;
            cfg.seed = seed;
            if no_que {
                cfg.use_que = false;
            }
            let plan = FewShotPlan { sizes, seeds, steps };
            let train_records = load_qa_corpus(&train)?;
            let test_records = load_qa_corpus(&test)?;
            let grid = run_qa_fewshot(&model, &train_records, &test_records, &voc, &cfg, &plan)?;

            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let csv_path = out.join("fewshot.csv");
            grid.write_csv(&csv_path)?;
            let report = MetricsReport {
                task: "qa".to_string(),
                dataset: file_stem(&train),
                per_eval_file: BTreeMap::new(),
                fewshot: Some(grid),
            };
            write_json(&out.join("metrics.json"), &report)?;

            let mut manifest = ManifestBuilder::new(
                "fewshot",
                json!({"finetune": cfg, "plan": plan}),
            );
            manifest.input(&checkpoint).input(&train).input(&test);
            manifest.output(&out.join("metrics.json")).output(&csv_path);
            manifest.finish(&out)?;
            let means: BTreeMap<usize, f64> = report
                .fewshot
                .as_ref()
                .expect("just set")
                .0
                .iter()
                .map(|(k, v)| (*k, v.mean))
                .collect();
            Ok(json!({"command": "fewshot", "out": out, "mean_f1": means}).to_string())
        }

        Command::Gradcheck { loss, out } => {
            let out = resolve_out(out, "gradcheck")?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let flags = match loss {
                LossChoice::Clism => LossFlags { clism: true, cacr: false, mlm: false },
                LossChoice::Cacr => LossFlags { clism: false, cacr: true, mlm: false },
                LossChoice::Mlm => LossFlags { clism: false, cacr: false, mlm: true },
                LossChoice::Total => LossFlags::all(),
            };
            // Small corpus through the real pipeline, then a 64-bit model.
            let spec = SyntheticSpec::new(8, 24, seed);
            let corpus = synthetic::generate(&spec)?;
            let tokens: Vec<String> = corpus
                .pairs
                .iter()
                .flat_map(|p| p.source_tokens.iter().chain(&p.target_tokens))
                .cloned()
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            let voc = Vocabulary::from_tokens(tokens)?;
            let gaz = Gazetteer::from_terms(corpus.gazetteer_terms.clone());
            let stop = std::collections::HashSet::new();
            let mut inputs = Vec::new();
            for (pair, alignment) in corpus.pairs.iter().zip(&corpus.alignments) {
                let spans =
                    propose_filter_project(pair, alignment, Some(&gaz), None, false, &stop)?;
                if !spans.is_empty() {
                    inputs.push((pair.clone(), spans));
                }
            }
            let icfg = InstanceConfig {
                max_len: 64,
                max_spans: 2,
                mlm_rate: 0.15,
            };
            let (instances, _) = build_instances(&inputs, &voc, seed, &icfg)?;
            let batch: Vec<_> = instances.iter().take(4).collect();
            if batch.len() < 2 {
                return Err(Error::Internal("gradcheck corpus built too few instances".into()));
            }
            let mut model = Model::<f64>::init(ModelConfig::grad_check(voc.size()), seed)?;
            let report = trainer::grad_check(&mut model, &batch, flags, CACR_TAU)?;
            write_json(&out.join("gradcheck.json"), &report)?;

            let mut manifest = ManifestBuilder::new(
                "gradcheck",
                json!({"loss": format!("{loss:?}").to_lowercase(), "seed": seed}),
            );
            manifest.output(&out.join("gradcheck.json"));
            manifest.finish(&out)?;
            if !report.pass {
                return Err(Error::Internal(format!(
                    "gradient check failed: worst {} at {}",
                    report.worst_rel_err, report.worst_param
                )));
            }
            Ok(json!({"command": "gradcheck", "checked": report.checked,
                      "worst_rel_err": report.worst_rel_err,
                      "worst_param": report.worst_param, "pass": report.pass})
            .to_string())
        }

        Command::MakeSynthetic {
            pairs,
            vocab,
            out,
            qa_train,
            qa_test,
        } => {
            let out = resolve_out(out, "make-synthetic")?;
            let spec = merge_config(SyntheticSpec::new(pairs, vocab, seed), config_file)?;
            let corpus = synthetic::generate(&spec)?;
            let files = synthetic::write_corpus(&out, &corpus)?;

            let mut manifest =
                ManifestBuilder::new("make-synthetic", serde_json::to_value(&spec).unwrap());
            manifest
                .output(&files.pairs_tsv)
                .output(&files.alignments)
                .output(&files.gazetteer);
            let mut qa_files = Vec::new();
            for (n, stream, name) in [(qa_train, 0, "qa_train"), (qa_test, 1, "qa_test")] {
                if n > 0 {
                    let records = corpus.qa_records(n, stream, name, QaKind::Mixed);
                    let path = out.join(format!("{name}.jsonl"));
                    save_qa_corpus(&path, &records)?;
                    manifest.output(&path);
                    qa_files.push(path);
                }
            }
            manifest.finish(&out)?;
            Ok(json!({"command": "make-synthetic", "out": out, "pairs": corpus.pairs.len(),
                      "gazetteer_terms": corpus.gazetteer_terms.len(),
                      "qa_files": qa_files})
            .to_string())
        }
    }
}

fn task_name(task: Task) -> &'static str {
    match task {
        Task::Qa => "qa",
        Task::Ner => "ner",
    }
}
