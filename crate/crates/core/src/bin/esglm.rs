use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use esglm::baselines::{fit_naive_bayes, token_bag, CommonClassModel};
use esglm::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, Stage};
use esglm::config::{parse_split, RunConfig};
use esglm::data::{
    build_dataset_from_records, derive_all_labels, eda_stats, load_filings, load_scores, load_splits, read_jsonl,
    save_splits, split_dataset, write_eda, write_json, write_jsonl, DatasetMeta, EdaConfig, ExtractedRecord,
    LabeledExample, Splits, Task,
};
use esglm::encoder::ParameterSet;
use esglm::finetune::{evaluate, finetuned_stage, run_finetune};
use esglm::metrics::{emit_report, Metrics, SplitMetrics};
use esglm::mlm::run_pretraining;
use esglm::relevance::{DanEmbedder, Extractor};
use esglm::synth::{run_lexicon_experiment, write_pipeline_fixture, ExperimentConfig};
use esglm::tokenizer::{train_vocab, Vocab};
use esglm::{Error, Result};

#[derive(Parser)]
#[command(name = "esglm", version, about = "Domain-adapted encoder pipeline for quarterly filing classification")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set seq_len=128
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    A,
    B,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::A => Task::A,
            TaskArg::B => Task::B,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Common,
    Nb,
}

#[derive(Subcommand)]
enum Command {
    /// Train a WordPiece vocabulary on a directory of text files
    Vocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Masked-language-model pre-training from a fresh or given initialisation
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint instead of a fresh initialisation
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Select the most relevant sentences of every filing
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Join extracted filings with score-change labels and split
    Dataset {
        #[arg(long)]
        extracted: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        /// train,validation,test fractions
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score-change and sentence-length statistics
    Eda {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune a classifier from a pretrained checkpoint or a fresh model
    Finetune {
        #[arg(long, conflicts_with = "fresh", required_unless_present = "fresh")]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        fresh: bool,
        /// Vocabulary that sizes a fresh model
        #[arg(long, required_if_eq("fresh", "true"))]
        vocab: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
        /// Row name in reports (default domain_lm, or base_lm with --fresh)
        #[arg(long)]
        name: Option<String>,
    },
    /// Common-class or Naive Bayes baseline
    Baseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        model: BaselineArg,
        #[arg(long)]
        metrics: PathBuf,
        /// Needed for nb_features=pieces
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Evaluate a fine-tuned checkpoint on every split
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value = "domain_lm")]
        name: String,
    },
    /// Render metrics files as a results table
    Report {
        #[arg(long, num_args = 1.., required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the small filing fixture (corpus, filings, manifest, scores)
    GenFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Synthetic lexicon experiment: fresh vs MLM-adapted initialisation
    LexiconExperiment {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&common.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn read_corpus(dir: &Path) -> Result<Vec<String>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!("no files in corpus directory {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e)))
        .collect()
}

fn check_vocab(vocab: &Vocab, meta: &CheckpointMeta) -> Result<()> {
    if vocab.len() != meta.config.vocab_size {
        return Err(Error::CheckpointMismatch(format!(
            "vocabulary has {} tokens, checkpoint expects {}",
            vocab.len(),
            meta.config.vocab_size
        )));
    }
    Ok(())
}

fn check_task(meta: &DatasetMeta, task: Task) -> Result<()> {
    if meta.task != task {
        return Err(Error::InvalidConfig(format!(
            "dataset was built for task {}, requested task {}",
            meta.task.tag(),
            task.tag()
        )));
    }
    Ok(())
}

fn constant_metrics(split: &[LabeledExample], predict: impl Fn(&LabeledExample) -> u32 + Sync) -> Result<SplitMetrics> {
    let preds: Vec<u32> = split.par_iter().map(&predict).collect();
    let labels: Vec<u32> = split.iter().map(|e| e.label).collect();
    SplitMetrics::from_predictions(&preds, &labels)
}

fn baseline_metrics(
    name: &str,
    task: Task,
    splits: &Splits<LabeledExample>,
    config: serde_json::Value,
    predict: impl Fn(&LabeledExample) -> u32 + Sync,
) -> Result<Metrics> {
    Ok(Metrics {
        model: name.to_string(),
        task,
        train: constant_metrics(&splits.train, &predict)?,
        validation: constant_metrics(&splits.val, &predict)?,
        test: constant_metrics(&splits.test, &predict)?,
        config,
    })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Vocab { corpus, out, size } => {
            let docs = read_corpus(&corpus)?;
            let vocab = train_vocab(&docs, size.unwrap_or(cfg.vocab_size), cfg.min_freq)?;
            vocab.save(&out)?;
            eprintln!("vocabulary of {} tokens written to {}", vocab.len(), out.display());
        }
        Command::Pretrain { corpus, vocab, out, init } => {
            let docs = read_corpus(&corpus)?;
            let vocab = Vocab::load(&vocab)?;
            let (model, params) = match init {
                Some(p) => {
                    let c = load_checkpoint(&p)?;
                    check_vocab(&vocab, &c.meta)?;
                    (c.meta.config, c.params)
                }
                None => {
                    let model = cfg.model_config(vocab.len())?;
                    let p = ParameterSet::init(&model, cfg.seed)?;
                    (model, p)
                }
            };
            let tc = cfg.pretrain_config()?;
            let outcome = run_pretraining(&docs, &vocab, params, &model, &tc, &cfg.masking_config()?)?;
            for (i, l) in outcome.epoch_losses.iter().enumerate() {
                eprintln!("epoch {}: mlm loss {l:.4}", i + 1);
            }
            let mut params = outcome.params;
            params.round_to_f32();
            let meta = CheckpointMeta {
                config: model,
                stage: Stage::Pretrained,
                seed: cfg.seed,
                train_config: Some(tc),
            };
            save_checkpoint(&params, &meta, &out)?;
        }
        Command::Extract { manifest, vocab, ckpt, out } => {
            let vocab = Vocab::load(&vocab)?;
            let c = load_checkpoint(&ckpt)?;
            check_vocab(&vocab, &c.meta)?;
            let filings = load_filings(&manifest)?;
            let embedder = DanEmbedder::from_params(&vocab, &c.params, cfg.dan_dim(), cfg.seed)?;
            let extractor = Extractor::new(&embedder, cfg.extraction_config()?)?;
            let records = filings
                .par_iter()
                .map(|f| Ok(ExtractedRecord::new(f.doc_id(), extractor.extract(&f.text, &vocab)?)))
                .collect::<Result<Vec<_>>>()?;
            write_jsonl(&out, &records)?;
            eprintln!("{} filings extracted to {}", records.len(), out.display());
        }
        Command::Dataset { extracted, scores, task, split, seed, out } => {
            let task = Task::from(task);
            let mut cfg = cfg;
            if let Some(s) = split {
                cfg.split = parse_split(&s)?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let spec = cfg.split_spec()?;
            let records: Vec<ExtractedRecord> = read_jsonl(&extracted)?;
            let labels = derive_all_labels(&load_scores(&scores)?, cfg.change_epsilon)?;
            let (examples, join) = build_dataset_from_records(&records, &labels, task, cfg.seq_len)?;
            eprintln!(
                "joined {} examples ({} filings and {} labels unmatched)",
                join.matched, join.unmatched_filings, join.unmatched_labels
            );
            let splits = split_dataset(&examples, &spec)?;
            let counts = splits.named().iter().map(|(n, s)| (n.to_string(), s.len())).collect();
            let meta = DatasetMeta {
                task,
                max_seq_len: cfg.seq_len,
                split: spec,
                join,
                counts,
            };
            save_splits(&out, &splits, &meta)?;
        }
        Command::Eda { manifest, scores, vocab, out } => {
            let vocab = Vocab::load(&vocab)?;
            let labels = derive_all_labels(&load_scores(&scores)?, cfg.change_epsilon)?;
            let filings = load_filings(&manifest)?;
            let stats = eda_stats(&labels, &filings, &vocab, &EdaConfig::default())?;
            write_eda(&stats, &out)?;
            eprintln!(
                "{} labels, zero-change fraction {:.4}",
                stats.label_count, stats.zero_delta_fraction
            );
        }
        Command::Finetune { ckpt, fresh, vocab, data, task, out, metrics, name } => {
            let task = Task::from(task);
            let (splits, meta) = load_splits(&data)?;
            check_task(&meta, task)?;
            let (model, params, stage) = if fresh {
                let vocab = Vocab::load(vocab.as_deref().expect("clap enforces --vocab with --fresh"))?;
                let model = cfg.model_config(vocab.len())?;
                let mut p = ParameterSet::init(&model, cfg.seed)?;
                p.round_to_f32();
                (model, p, Stage::Initial)
            } else {
                let c = load_checkpoint(ckpt.as_deref().expect("clap enforces --ckpt"))?;
                if let Some(v) = &vocab {
                    check_vocab(&Vocab::load(v)?, &c.meta)?;
                }
                (c.meta.config, c.params, c.meta.stage)
            };
            let name = name.unwrap_or_else(|| if fresh { "base_lm" } else { "domain_lm" }.to_string());
            let tc = cfg.train_config()?;
            let outcome = run_finetune(params, stage, &model, &splits, task, &tc, &name)?;
            for (i, l) in outcome.epoch_losses.iter().enumerate() {
                eprintln!("epoch {}: loss {l:.4}", i + 1);
            }
            let ck_meta = CheckpointMeta {
                config: model,
                stage: finetuned_stage(task),
                seed: cfg.seed,
                train_config: Some(tc),
            };
            save_checkpoint(&outcome.params, &ck_meta, &out)?;
            outcome.metrics.save(&metrics)?;
        }
        Command::Baseline { data, model, metrics, vocab } => {
            let (splits, meta) = load_splits(&data)?;
            let m = match model {
                BaselineArg::Common => {
                    let labels: Vec<u32> = splits.train.iter().map(|e| e.label).collect();
                    let cc = CommonClassModel::fit(&labels)?;
                    let echo = serde_json::json!({ "class_counts": cc.class_counts, "predicted_class": cc.predicted_class });
                    baseline_metrics("common_class", meta.task, &splits, echo, |_| cc.predict())?
                }
                BaselineArg::Nb => {
                    let vocab = vocab.map(|v| Vocab::load(&v)).transpose()?;
                    let features = cfg.nb_features;
                    let bag = |e: &LabeledExample| token_bag(&e.text, features, vocab.as_ref());
                    let train = splits
                        .train
                        .iter()
                        .map(|e| Ok((bag(e)?, e.label)))
                        .collect::<Result<Vec<_>>>()?;
                    let nb = fit_naive_bayes(&train, cfg.alpha)?;
                    let echo = serde_json::json!({ "alpha": cfg.alpha, "features": features, "vocabulary": nb.vocabulary.len() });
                    baseline_metrics("naive_bayes", meta.task, &splits, echo, |e| {
                        nb.predict(&bag(e).expect("features validated on the training split"))
                    })?
                }
            };
            m.save(&metrics)?;
        }
        Command::Evaluate { ckpt, data, metrics, name } => {
            let c = load_checkpoint(&ckpt)?;
            let (splits, meta) = load_splits(&data)?;
            let m = Metrics {
                model: name,
                task: meta.task,
                train: evaluate(&c, &splits.train)?,
                validation: evaluate(&c, &splits.val)?,
                test: evaluate(&c, &splits.test)?,
                config: serde_json::json!({ "model": c.meta.config, "stage": c.meta.stage, "seed": c.meta.seed }),
            };
            m.save(&metrics)?;
        }
        Command::Report { metrics, task, out } => {
            let ms = metrics.iter().map(|p| Metrics::load(p)).collect::<Result<Vec<_>>>()?;
            let (_, md) = emit_report(&ms, task.into(), &out)?;
            print!("{}", fs::read_to_string(&md).map_err(|e| Error::io("reading report", e))?);
        }
        Command::GenFixture { out, seed } => write_pipeline_fixture(&out, seed)?,
        Command::LexiconExperiment { seeds, out } => {
            let ec = ExperimentConfig::default();
            let mut outcomes = Vec::new();
            for seed in 0..seeds {
                let o = run_lexicon_experiment(&ec, seed)?;
                println!(
                    "seed {seed}: base_lm test {:.4}, domain_lm test {:.4}",
                    o.base.test.accuracy, o.domain.test.accuracy
                );
                outcomes.push(o);
            }
            let n = outcomes.len().max(1) as f64;
            let base = outcomes.iter().map(|o| o.base.test.accuracy).sum::<f64>() / n;
            let domain = outcomes.iter().map(|o| o.domain.test.accuracy).sum::<f64>() / n;
            println!("mean test accuracy: base_lm {base:.4}, domain_lm {domain:.4}");
            if let Some(p) = out {
                write_json(&p, &outcomes)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
