//! Majority-class and multinomial Naive Bayes comparison models.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{pre_tokenize, Vocab};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommonClassModel {
    pub predicted_class: u32,
    pub class_counts: BTreeMap<u32, usize>,
}

impl CommonClassModel {
    pub fn fit(train_labels: &[u32]) -> Result<Self> {
        if train_labels.is_empty() {
            return Err(Error::EmptyDataset("no training labels".into()));
        }
        let mut class_counts = BTreeMap::new();
        for &l in train_labels {
            *class_counts.entry(l).or_insert(0usize) += 1;
        }
        // ascending label order + strict comparison: ties keep the smaller label
        let mut predicted_class = 0;
        let mut best = 0;
        for (&label, &count) in &class_counts {
            if count > best {
                best = count;
                predicted_class = label;
            }
        }
        Ok(Self {
            predicted_class,
            class_counts,
        })
    }

    pub fn predict(&self) -> u32 {
        self.predicted_class
    }

    pub fn accuracy(&self, labels: &[u32]) -> Result<f64> {
        if labels.is_empty() {
            return Err(Error::EmptySplit);
        }
        let hits = labels.iter().filter(|&&l| l == self.predicted_class).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

pub fn fit_predict_common_class(train_labels: &[u32], eval_labels: &[u32]) -> Result<(CommonClassModel, f64)> {
    let model = CommonClassModel::fit(train_labels)?;
    let acc = model.accuracy(eval_labels)?;
    Ok((model, acc))
}

/// Token counts for one document.
pub type TokenBag = BTreeMap<String, usize>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BagFeatures {
    /// Word-level pre-tokenization.
    #[default]
    Words,
    /// WordPiece pieces.
    Pieces,
}

pub fn word_bag(text: &str) -> TokenBag {
    let mut bag = TokenBag::new();
    for w in pre_tokenize(text) {
        *bag.entry(w).or_insert(0) += 1;
    }
    bag
}

pub fn piece_bag(text: &str, vocab: &Vocab) -> TokenBag {
    let mut bag = TokenBag::new();
    for id in vocab.encode(text) {
        let tok = vocab.token(id).unwrap_or("[UNK]");
        *bag.entry(tok.to_string()).or_insert(0) += 1;
    }
    bag
}

pub fn token_bag(text: &str, features: BagFeatures, vocab: Option<&Vocab>) -> Result<TokenBag> {
    match (features, vocab) {
        (BagFeatures::Words, _) => Ok(word_bag(text)),
        (BagFeatures::Pieces, Some(v)) => Ok(piece_bag(text, v)),
        (BagFeatures::Pieces, None) => Err(Error::InvalidConfig("piece features need a vocabulary".into())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    pub alpha: f64,
    /// Training vocabulary, sorted.
    pub vocabulary: Vec<String>,
    pub classes: Vec<u32>,
    pub log_priors: Vec<f64>,
    /// `log_likelihoods[c][t]` for class index c and vocabulary index t.
    pub log_likelihoods: Vec<Vec<f64>>,
}

impl NaiveBayesModel {
    pub fn fit(train: &[(TokenBag, u32)], alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidConfig(format!("naive bayes alpha must be > 0, got {alpha}")));
        }
        if train.is_empty() {
            return Err(Error::EmptyDataset("no training documents".into()));
        }
        let mut docs_per_class: BTreeMap<u32, usize> = BTreeMap::new();
        let mut counts: BTreeMap<u32, BTreeMap<&str, usize>> = BTreeMap::new();
        let mut vocab: BTreeMap<&str, usize> = BTreeMap::new();
        for (bag, label) in train {
            *docs_per_class.entry(*label).or_insert(0) += 1;
            let per = counts.entry(*label).or_default();
            for (tok, &c) in bag {
                if c == 0 {
                    continue;
                }
                *per.entry(tok.as_str()).or_insert(0) += c;
                vocab.entry(tok.as_str()).or_insert(0);
            }
        }
        let vocabulary: Vec<String> = vocab.keys().map(|s| s.to_string()).collect();
        let v = vocabulary.len() as f64;
        let n = train.len() as f64;
        let classes: Vec<u32> = docs_per_class.keys().copied().collect();
        let log_priors = docs_per_class.values().map(|&d| (d as f64 / n).ln()).collect();
        let log_likelihoods = classes
            .iter()
            .map(|c| {
                let per = counts.get(c);
                let total: usize = per.map_or(0, |m| m.values().sum());
                let denom = total as f64 + alpha * v;
                vocabulary
                    .iter()
                    .map(|t| {
                        let n_tc = per.and_then(|m| m.get(t.as_str())).copied().unwrap_or(0);
                        ((n_tc as f64 + alpha) / denom).ln()
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            alpha,
            vocabulary,
            classes,
            log_priors,
            log_likelihoods,
        })
    }

    /// Unnormalised log P(c) + sum of count * log P(t|c), per class.
    /// Tokens outside the training vocabulary are ignored.
    pub fn log_joint(&self, bag: &TokenBag) -> Vec<(u32, f64)> {
        let known: Vec<(usize, f64)> = bag
            .iter()
            .filter_map(|(t, &c)| self.vocabulary.binary_search(t).ok().map(|i| (i, c as f64)))
            .collect();
        self.classes
            .iter()
            .enumerate()
            .map(|(ci, &label)| {
                let ll = &self.log_likelihoods[ci];
                let s = known.iter().fold(self.log_priors[ci], |acc, &(i, c)| acc + c * ll[i]);
                (label, s)
            })
            .collect()
    }

    /// Normalised class posterior.
    pub fn posterior(&self, bag: &TokenBag) -> Vec<(u32, f64)> {
        let joint = self.log_joint(bag);
        let max = joint.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = joint.iter().map(|&(_, s)| (s - max).exp()).sum();
        joint.into_iter().map(|(l, s)| (l, (s - max).exp() / z)).collect()
    }

    /// Argmax class; ties go to the smaller label.
    pub fn predict(&self, bag: &TokenBag) -> u32 {
        let mut best = (self.classes[0], f64::NEG_INFINITY);
        for (label, s) in self.log_joint(bag) {
            if s > best.1 {
                best = (label, s);
            }
        }
        best.0
    }
}

pub fn fit_naive_bayes(train: &[(TokenBag, u32)], alpha: f64) -> Result<NaiveBayesModel> {
    NaiveBayesModel::fit(train, alpha)
}
