//! Flat `key = value` run configuration shared by every CLI stage.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are rejected.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `seq_len` | 512 | model input length |
//! | `vocab_size` | 8000 | WordPiece target size |
//! | `min_freq` | 2 | minimum pair count for a merge |
//! | `hidden_dim`, `num_layers`, `num_heads`, `ffn_dim` | 32, 2, 2, 64 | encoder shape |
//! | `dropout` | 0.1 | dropout rate during training |
//! | `mask_rate` | 0.15 | MLM selection rate |
//! | `top_k` | 3 | sentences kept per filing |
//! | `benchmark` | built-in | benchmark sentences separated by `\|` |
//! | `aggregation` | max | `max` or `mean` over benchmarks |
//! | `dan_dim` | hidden_dim | sentence-embedding width |
//! | `lr`, `eps`, `beta1`, `beta2` | 2e-5, 1e-8, 0.9, 0.999 | Adam |
//! | `epochs`, `batch` | 8, 8 | loop settings |
//! | `pretrain_lr`, `pretrain_epochs`, `pretrain_batch` | unset | MLM-stage overrides |
//! | `seed` | 0 | every generator is derived from it |
//! | `change_epsilon` | 0 | abs(delta) above this is a change |
//! | `split` | 0.7,0.15,0.15 | train/validation/test fractions |
//! | `split_strategy` | stratified | `stratified`, `group_by_ticker` or `temporal` |
//! | `alpha` | 1.0 | Naive Bayes smoothing |
//! | `nb_features` | words | `words` or `pieces` |

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::BagFeatures;
use crate::data::{SplitSpec, SplitStrategy};
use crate::encoder::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::mlm::MaskingConfig;
use crate::relevance::{Aggregation, ExtractionConfig, DEFAULT_BENCHMARK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seq_len: usize,
    pub vocab_size: usize,
    pub min_freq: u64,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub mask_rate: f64,
    pub top_k: usize,
    pub benchmark: Vec<String>,
    pub aggregation: Aggregation,
    pub dan_dim: Option<usize>,
    pub lr: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch: usize,
    pub pretrain_lr: Option<f64>,
    pub pretrain_epochs: Option<usize>,
    pub pretrain_batch: Option<usize>,
    pub seed: u64,
    pub change_epsilon: f64,
    pub split: [f64; 3],
    pub split_strategy: SplitStrategy,
    pub alpha: f64,
    pub nb_features: BagFeatures,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        Self {
            seq_len: m.max_seq_len,
            vocab_size: m.vocab_size,
            min_freq: 2,
            hidden_dim: m.hidden_dim,
            num_layers: m.num_layers,
            num_heads: m.num_heads,
            ffn_dim: m.ffn_dim,
            dropout: m.dropout_rate,
            mask_rate: 0.15,
            top_k: 3,
            benchmark: vec![DEFAULT_BENCHMARK.to_string()],
            aggregation: Aggregation::Max,
            dan_dim: None,
            lr: t.learning_rate,
            eps: t.adam_epsilon,
            beta1: t.adam_beta1,
            beta2: t.adam_beta2,
            epochs: t.epochs,
            batch: t.batch_size,
            pretrain_lr: None,
            pretrain_epochs: None,
            pretrain_batch: None,
            seed: 0,
            change_epsilon: 0.0,
            split: [0.7, 0.15, 0.15],
            split_strategy: SplitStrategy::Stratified,
            alpha: 1.0,
            nb_features: BagFeatures::Words,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seq_len" => self.seq_len = num(key, value)?,
            "vocab_size" => self.vocab_size = num(key, value)?,
            "min_freq" => self.min_freq = num(key, value)?,
            "hidden_dim" => self.hidden_dim = num(key, value)?,
            "num_layers" => self.num_layers = num(key, value)?,
            "num_heads" => self.num_heads = num(key, value)?,
            "ffn_dim" => self.ffn_dim = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "mask_rate" => self.mask_rate = num(key, value)?,
            "top_k" => self.top_k = num(key, value)?,
            "benchmark" => {
                self.benchmark = value
                    .split('|')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            "aggregation" => {
                self.aggregation = match value {
                    "max" => Aggregation::Max,
                    "mean" => Aggregation::Mean,
                    _ => return Err(Error::InvalidConfig(format!("aggregation must be max or mean, got {value:?}"))),
                }
            }
            "dan_dim" => self.dan_dim = Some(num(key, value)?),
            "lr" => self.lr = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "pretrain_lr" => self.pretrain_lr = Some(num(key, value)?),
            "pretrain_epochs" => self.pretrain_epochs = Some(num(key, value)?),
            "pretrain_batch" => self.pretrain_batch = Some(num(key, value)?),
            "seed" => self.seed = num(key, value)?,
            "change_epsilon" => self.change_epsilon = num(key, value)?,
            "split" => self.split = parse_split(value)?,
            "split_strategy" => {
                self.split_strategy = match value {
                    "stratified" => SplitStrategy::Stratified,
                    "group_by_ticker" => SplitStrategy::GroupByTicker,
                    "temporal" => SplitStrategy::Temporal,
                    _ => return Err(Error::InvalidConfig(format!("unknown split_strategy {value:?}"))),
                }
            }
            "alpha" => self.alpha = num(key, value)?,
            "nb_features" => {
                self.nb_features = match value {
                    "words" => BagFeatures::Words,
                    "pieces" => BagFeatures::Pieces,
                    _ => return Err(Error::InvalidConfig(format!("nb_features must be words or pieces, got {value:?}"))),
                }
            }
            _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` strings, e.g. from repeated `--set` flags.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override {:?} is not key=value", o.as_ref())))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Model shape for a given vocabulary size.
    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let c = ModelConfig {
            vocab_size,
            max_seq_len: self.seq_len,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            dropout_rate: self.dropout,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = TrainConfig {
            learning_rate: self.lr,
            adam_epsilon: self.eps,
            adam_beta1: self.beta1,
            adam_beta2: self.beta2,
            epochs: self.epochs,
            batch_size: self.batch,
            seed: self.seed,
        };
        t.validate()?;
        Ok(t)
    }

    /// Fine-tuning settings with the MLM-stage overrides applied.
    pub fn pretrain_config(&self) -> Result<TrainConfig> {
        let mut t = self.train_config()?;
        t.learning_rate = self.pretrain_lr.unwrap_or(t.learning_rate);
        t.epochs = self.pretrain_epochs.unwrap_or(t.epochs);
        t.batch_size = self.pretrain_batch.unwrap_or(t.batch_size);
        t.validate()?;
        Ok(t)
    }

    pub fn masking_config(&self) -> Result<MaskingConfig> {
        let m = MaskingConfig {
            mask_rate: self.mask_rate,
            seed: self.seed,
            ..Default::default()
        };
        m.validate()?;
        Ok(m)
    }

    pub fn extraction_config(&self) -> Result<ExtractionConfig> {
        let e = ExtractionConfig {
            top_k: self.top_k,
            benchmark_sentences: self.benchmark.clone(),
            aggregation: self.aggregation,
        };
        e.validate()?;
        Ok(e)
    }

    /// Checks every derived setting up front, so a bad value fails before any work.
    pub fn validate(&self) -> Result<()> {
        self.model_config(self.vocab_size)?;
        self.pretrain_config()?;
        self.masking_config()?;
        self.extraction_config()?;
        self.split_spec()?;
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.change_epsilon >= 0.0) {
            return Err(Error::InvalidConfig(format!("change_epsilon must be >= 0, got {}", self.change_epsilon)));
        }
        if self.dan_dim() == 0 {
            return Err(Error::InvalidConfig("dan_dim must be at least 1".into()));
        }
        Ok(())
    }

    pub fn dan_dim(&self) -> usize {
        self.dan_dim.unwrap_or(self.hidden_dim)
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        let s = SplitSpec {
            train_frac: self.split[0],
            val_frac: self.split[1],
            test_frac: self.split[2],
            seed: self.seed,
            strategy: self.split_strategy,
        };
        s.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(s)
    }
}

/// Parses `train,val,test` fractions.
pub fn parse_split(value: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = value
        .split(',')
        .map(|p| num::<f64>("split", p.trim()))
        .collect::<Result<_>>()?;
    <[f64; 3]>::try_from(parts)
        .map_err(|_| Error::InvalidConfig(format!("split needs three comma-separated fractions, got {value:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.seq_len, 512);
        assert_eq!(c.mask_rate, 0.15);
        assert_eq!(c.top_k, 3);
        let t = c.train_config().unwrap();
        assert_eq!((t.learning_rate, t.adam_epsilon, t.epochs, t.batch_size), (2e-5, 1e-8, 8, 8));
        assert_eq!(c.pretrain_config().unwrap(), t);
    }

    #[test]
    fn parse_and_override() {
        let text = "# tiny\nseq_len = 64\nlr=1e-3 # faster\nbenchmark = carbon emissions | water use\n\npretrain_epochs=2\nsplit=0.6,0.2,0.2\n";
        let mut c = RunConfig::parse(text).unwrap();
        assert_eq!(c.seq_len, 64);
        assert_eq!(c.lr, 1e-3);
        assert_eq!(c.benchmark, ["carbon emissions", "water use"]);
        assert_eq!(c.pretrain_config().unwrap().epochs, 2);
        assert_eq!(c.train_config().unwrap().epochs, 8);
        assert_eq!(c.split_spec().unwrap().val_frac, 0.2);
        c.apply_overrides(&["seed=9", "aggregation=mean"]).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.masking_config().unwrap().seed, 9);
        assert_eq!(c.extraction_config().unwrap().aggregation, Aggregation::Mean);
    }

    #[test]
    fn errors_are_config_errors() {
        for bad in ["nonsense", "unknown=1", "epochs=two", "split=0.5,0.5", "aggregation=median"] {
            let e = RunConfig::parse(bad).unwrap_err();
            assert!(matches!(e, Error::InvalidConfig(_)), "{bad}: {e}");
            assert_eq!(e.exit_code(), 1);
        }
        let c = RunConfig::parse("num_heads=3").unwrap();
        assert!(c.model_config(100).is_err());
    }

    #[test]
    fn validate_checks_derived_settings() {
        RunConfig::default().validate().unwrap();
        for bad in ["num_heads=3", "top_k=0", "alpha=0", "mask_rate=1.5", "split=0.5,0.5,0", "pretrain_batch=0", "change_epsilon=-1"] {
            let c = RunConfig::parse(bad).unwrap();
            assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))), "{bad}");
        }
    }
}
