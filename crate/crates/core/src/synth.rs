//! Synthetic data: a hidden two-group "domain lexicon" that drives both an
//! unlabeled corpus and a binary downstream task, plus the small filing
//! fixture used by the end-to-end pipeline.
//!
//! In the lexicon task, every unlabeled document draws its lexicon words from
//! one group and the downstream label is the group of the lexicon words in an
//! example. Labeled training examples only use part of each group's lexicon,
//! while validation and test examples use the rest, so the only route to the
//! held-out words' group is co-occurrence in the unlabeled corpus.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Stage;
use crate::data::{ChangeLabel, LabeledExample, ManifestEntry, Splits, Task};
use crate::encoder::{ModelConfig, ParameterSet, TrainConfig};
use crate::error::{Error, Result};
use crate::finetune::run_finetune;
use crate::metrics::Metrics;
use crate::mlm::{run_pretraining, MaskingConfig};
use crate::tokenizer::{prepare_input, train_vocab, Vocab};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Deterministic pronounceable word for index `i`; distinct indices give
/// distinct words.
pub fn pseudo_word(i: usize) -> String {
    let syllables = CONSONANTS.len() * VOWELS.len();
    let space = syllables.pow(3);
    // 7919 is coprime with 70^3, so this permutes the index space
    let mut k = (i % space) * 7919 % space;
    let mut w = String::with_capacity(6);
    for _ in 0..3 {
        let s = k % syllables;
        k /= syllables;
        w.push(CONSONANTS[s / VOWELS.len()] as char);
        w.push(VOWELS[s % VOWELS.len()] as char);
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconConfig {
    /// Lexicon words per group.
    pub lexicon_size: usize,
    /// Group-neutral words.
    pub filler_size: usize,
    /// Fraction of each lexicon that labeled training examples may use.
    pub seen_fraction: f64,
    pub corpus_docs: usize,
    pub doc_len: usize,
    /// Share of lexicon words in an unlabeled document.
    pub doc_lexicon_share: f64,
    pub example_len: usize,
    pub lexicon_per_example: usize,
    pub train_examples: usize,
    pub val_examples: usize,
    pub test_examples: usize,
}

impl Default for LexiconConfig {
    fn default() -> Self {
        Self {
            lexicon_size: 24,
            filler_size: 24,
            seen_fraction: 0.5,
            corpus_docs: 600,
            doc_len: 14,
            doc_lexicon_share: 0.5,
            example_len: 10,
            lexicon_per_example: 3,
            train_examples: 40,
            val_examples: 100,
            test_examples: 200,
        }
    }
}

impl LexiconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lexicon_size < 2 || self.filler_size == 0 {
            return Err(Error::InvalidConfig("lexicon needs at least 2 words per group and 1 filler".into()));
        }
        if !(self.seen_fraction > 0.0 && self.seen_fraction < 1.0) {
            return Err(Error::InvalidConfig("seen_fraction must be in (0, 1)".into()));
        }
        if self.lexicon_per_example == 0 || self.lexicon_per_example > self.example_len {
            return Err(Error::InvalidConfig("lexicon_per_example must be in 1..=example_len".into()));
        }
        if self.corpus_docs == 0 || self.doc_len == 0 {
            return Err(Error::InvalidConfig("corpus must be non-empty".into()));
        }
        if self.train_examples < 2 || self.val_examples == 0 || self.test_examples == 0 {
            return Err(Error::InvalidConfig("every split needs examples".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LexiconWorld {
    pub config: LexiconConfig,
    /// `groups[g]` lists group g's lexicon; the first `seen` words are the
    /// ones labeled training examples use.
    pub groups: [Vec<String>; 2],
    pub filler: Vec<String>,
    pub seen: usize,
}

impl LexiconWorld {
    pub fn new(config: LexiconConfig) -> Result<Self> {
        config.validate()?;
        let n = config.lexicon_size;
        let groups = [
            (0..n).map(pseudo_word).collect(),
            (n..2 * n).map(pseudo_word).collect(),
        ];
        let filler = (2 * n..2 * n + config.filler_size).map(pseudo_word).collect();
        let seen = ((n as f64 * config.seen_fraction).round() as usize).clamp(1, n - 1);
        Ok(Self { config, groups, filler, seen })
    }

    fn sentence(&self, len: usize, lexicon_count: usize, pool: &[String], rng: &mut impl Rng) -> String {
        let mut words: Vec<&str> = (0..lexicon_count).map(|_| pool.choose(rng).expect("pool").as_str()).collect();
        words.extend((lexicon_count..len).map(|_| self.filler.choose(rng).expect("filler").as_str()));
        words.shuffle(rng);
        format!("{}.", words.join(" "))
    }

    /// Unlabeled documents; each uses one group's whole lexicon.
    pub fn corpus(&self, seed: u64) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &self.config;
        let k = ((c.doc_len as f64 * c.doc_lexicon_share).round() as usize).clamp(1, c.doc_len);
        (0..c.corpus_docs)
            .map(|_| {
                let g = rng.random_range(0..2);
                self.sentence(c.doc_len, k, &self.groups[g], &mut rng)
            })
            .collect()
    }

    /// Labeled (text, group) pairs for train, validation and test. Classes
    /// alternate so every split is balanced.
    pub fn labeled(&self, seed: u64) -> Splits<(String, u32)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1abe);
        let c = &self.config;
        let mut make = |n: usize, seen_words: bool| -> Vec<(String, u32)> {
            (0..n)
                .map(|i| {
                    let g = i % 2;
                    let pool = if seen_words { &self.groups[g][..self.seen] } else { &self.groups[g][self.seen..] };
                    (self.sentence(c.example_len, c.lexicon_per_example, pool, &mut rng), g as u32)
                })
                .collect()
        };
        Splits {
            train: make(c.train_examples, true),
            val: make(c.val_examples, false),
            test: make(c.test_examples, false),
        }
    }
}

fn to_examples(rows: &[(String, u32)], vocab: &Vocab, seq_len: usize, split: &str) -> Result<Vec<LabeledExample>> {
    rows.iter()
        .enumerate()
        .map(|(i, (text, label))| {
            Ok(LabeledExample {
                doc_id: format!("SYN{split}{i}-2000Q1"),
                delta: *label as f64,
                task_a: if *label == 1 { ChangeLabel::Change } else { ChangeLabel::NoChange },
                task_b: None,
                label: *label,
                text: text.clone(),
                input: prepare_input(&vocab.encode(text), seq_len)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub lexicon: LexiconConfig,
    pub vocab_target: usize,
    pub seq_len: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub mask_rate: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            lexicon: LexiconConfig::default(),
            vocab_target: 600,
            seq_len: 16,
            hidden_dim: 32,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 64,
            dropout: 0.1,
            pretrain: TrainConfig {
                learning_rate: 1e-3,
                epochs: 30,
                batch_size: 16,
                ..Default::default()
            },
            finetune: TrainConfig {
                learning_rate: 1e-3,
                epochs: 20,
                batch_size: 8,
                ..Default::default()
            },
            mask_rate: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub seed: u64,
    pub base: Metrics,
    pub domain: Metrics,
    pub pretrain_losses: Vec<f64>,
}

/// Fine-tunes a fresh model and an MLM-adapted copy of the same
/// initialisation on identical data, order and seeds.
pub fn run_lexicon_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentOutcome> {
    let world = LexiconWorld::new(cfg.lexicon.clone())?;
    let corpus = world.corpus(seed);
    let vocab = train_vocab(&corpus, cfg.vocab_target, 2)?;
    let model = ModelConfig {
        vocab_size: vocab.len(),
        max_seq_len: cfg.seq_len,
        hidden_dim: cfg.hidden_dim,
        num_layers: cfg.num_layers,
        num_heads: cfg.num_heads,
        ffn_dim: cfg.ffn_dim,
        dropout_rate: cfg.dropout,
    };
    let mut init = ParameterSet::init(&model, seed)?;
    init.round_to_f32();
    let pre_tc = TrainConfig { seed, ..cfg.pretrain.clone() };
    let mc = MaskingConfig {
        mask_rate: cfg.mask_rate,
        seed,
        ..Default::default()
    };
    let pre = run_pretraining(&corpus, &vocab, init.clone(), &model, &pre_tc, &mc)?;
    let mut adapted = pre.params;
    adapted.round_to_f32();

    let rows = world.labeled(seed);
    let splits = Splits {
        train: to_examples(&rows.train, &vocab, cfg.seq_len, "train")?,
        val: to_examples(&rows.val, &vocab, cfg.seq_len, "val")?,
        test: to_examples(&rows.test, &vocab, cfg.seq_len, "test")?,
    };
    let ft = TrainConfig { seed, ..cfg.finetune.clone() };
    let base = run_finetune(init, Stage::Initial, &model, &splits, Task::A, &ft, "base_lm")?;
    let domain = run_finetune(adapted, Stage::Pretrained, &model, &splits, Task::A, &ft, "domain_lm")?;
    Ok(ExperimentOutcome {
        seed,
        base: base.metrics,
        domain: domain.metrics,
        pretrain_losses: pre.epoch_losses,
    })
}

const ENV_SENTENCES: &[&str] = &[
    "Our greenhouse gas emissions declined as we expanded renewable energy use at the plants.",
    "The company is subject to climate regulation and may face carbon pricing costs.",
    "We reduced water consumption and hazardous waste at our manufacturing sites.",
    "Environmental remediation costs for contaminated sites increased during the quarter.",
    "New emissions standards from the Environmental Protection Agency may require capital spending.",
    "We invested in energy efficiency projects to lower fuel consumption and pollution.",
    "Severe weather events linked to climate change disrupted operations at coastal facilities.",
    "Our sustainability program targets lower carbon intensity and more recycling.",
];

const GENERIC_SENTENCES: &[&str] = &[
    "Revenue increased compared with the prior year period.",
    "Operating expenses were in line with management expectations.",
    "The board of directors declared a quarterly dividend.",
    "Interest expense decreased due to lower average borrowings.",
    "We repurchased shares under the existing authorization.",
    "Selling, general and administrative expenses rose modestly.",
    "Cash provided by operating activities was sufficient to fund capital expenditures.",
    "The effective tax rate was lower than the statutory rate.",
    "Inventory levels were reduced to match customer demand.",
    "Foreign currency movements affected reported results.",
    "Legal proceedings are described in the notes to the financial statements.",
    "We expect to fund future obligations from available liquidity.",
];

fn io_err(p: &Path) -> impl FnOnce(std::io::Error) -> Error {
    let shown = p.display().to_string();
    move |e| Error::io(format!("writing {shown}"), e)
}

/// Writes a small self-contained pipeline fixture into `dir`:
/// `corpus/*.txt`, `filings/*.txt`, `filings.jsonl`, `scores.csv`.
pub fn write_pipeline_fixture(dir: &Path, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus_dir = dir.join("corpus");
    let filings_dir = dir.join("filings");
    fs::create_dir_all(&corpus_dir).map_err(io_err(&corpus_dir))?;
    fs::create_dir_all(&filings_dir).map_err(io_err(&filings_dir))?;

    for d in 0..24 {
        let mut text = String::new();
        for _ in 0..12 {
            let pool = if rng.random_bool(0.7) { ENV_SENTENCES } else { GENERIC_SENTENCES };
            text.push_str(pool.choose(&mut rng).expect("pool"));
            text.push(' ');
        }
        let p = corpus_dir.join(format!("doc{d:02}.txt"));
        fs::write(&p, text.trim_end().to_string() + "\n").map_err(io_err(&p))?;
    }

    let tickers = ["ACME", "BOLT", "CRUX", "DYNA", "ECHO", "FERN"];
    let quarters: Vec<(i32, u8)> = (0..8).map(|i| (2016 + i / 4, (i % 4 + 1) as u8)).collect();
    let mut manifest = String::new();
    let mut scores = String::from("ticker,year,quarter,env_score\n");
    for t in tickers {
        let mut score: f64 = rng.random_range(40..70) as f64;
        for (qi, &(year, quarter)) in quarters.iter().enumerate() {
            // leave one gap per ticker so the chain breaks somewhere
            if qi == 5 && t == "CRUX" {
                continue;
            }
            let r: f64 = rng.random();
            if r > 0.6 {
                score += if rng.random_bool(0.5) { 1.0 } else { -1.0 } * rng.random_range(1..4) as f64;
            }
            writeln!(scores, "{t},{year},{quarter},{score}").expect("string write");
            let env_n = if r > 0.6 { 4 } else { 2 };
            let mut sentences: Vec<&str> = ENV_SENTENCES.choose_multiple(&mut rng, env_n).copied().collect();
            sentences.extend(GENERIC_SENTENCES.choose_multiple(&mut rng, 8));
            sentences.shuffle(&mut rng);
            let name = format!("{t}_{year}Q{quarter}.txt");
            let p = filings_dir.join(&name);
            fs::write(&p, format!("{} Inc. quarterly report. {}\n", t, sentences.join(" "))).map_err(io_err(&p))?;
            let entry = ManifestEntry {
                ticker: t.to_string(),
                year,
                quarter,
                path: Path::new("filings").join(name),
            };
            manifest.push_str(&serde_json::to_string(&entry)?);
            manifest.push('\n');
        }
    }
    let p = dir.join("filings.jsonl");
    fs::write(&p, manifest).map_err(io_err(&p))?;
    let p = dir.join("scores.csv");
    fs::write(&p, scores).map_err(io_err(&p))?;
    Ok(())
}
