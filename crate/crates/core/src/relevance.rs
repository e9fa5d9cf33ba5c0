//! Relevance-ranked excerpts from long filings.
//!
//! Sentences are embedded with a deep averaging network over the (MLM-adapted)
//! token embeddings, scored by cosine similarity against benchmark sentences,
//! and the top-k are concatenated in descending score order.

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::ParameterSet;
use crate::error::{Error, Result};
use crate::tokenizer::Vocab;

pub const DEFAULT_BENCHMARK: &str =
    "climate emissions environmental regulation carbon energy water waste pollution sustainability remediation";

pub const DEFAULT_ABBREVIATIONS: [&str; 8] = ["Inc", "Corp", "No", "U.S", "Mr", "Ms", "Dr", "et al"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    /// Character (not byte) offset of the trimmed sentence in the document.
    pub doc_offset: usize,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct Segmenter {
    abbreviations: Vec<Vec<char>>,
}

impl Default for Segmenter {
    fn default() -> Self {
        Self::new(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

fn is_delim(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

impl Segmenter {
    pub fn new<'a>(abbreviations: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            abbreviations: abbreviations
                .into_iter()
                .map(|a| a.chars().collect())
                .collect(),
        }
    }

    /// True when the text before `dot` ends with a listed abbreviation that
    /// starts at a word boundary.
    fn ends_with_abbreviation(&self, chars: &[char], dot: usize) -> bool {
        let before = &chars[..dot];
        self.abbreviations.iter().any(|abbr| {
            if abbr.len() > before.len() {
                return false;
            }
            let start = before.len() - abbr.len();
            let tail = &before[start..];
            tail == abbr.as_slice() && (start == 0 || !before[start - 1].is_alphanumeric())
        })
    }

    pub fn segment(&self, text: &str) -> Vec<Sentence> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut start = 0;
        let mut i = 0;
        while i < chars.len() {
            if !is_delim(chars[i]) {
                i += 1;
                continue;
            }
            let mut j = i;
            while j < chars.len() && is_delim(chars[j]) {
                j += 1;
            }
            let at_break = j == chars.len() || chars[j].is_whitespace();
            let single_period = chars[i] == '.' && j == i + 1;
            let between_digits = single_period
                && i > 0
                && chars[i - 1].is_ascii_digit()
                && j < chars.len()
                && chars[j].is_ascii_digit();
            let abbreviation = single_period && self.ends_with_abbreviation(&chars, i);
            if at_break && !between_digits && !abbreviation {
                push_sentence(&chars, start, j, &mut out);
                start = j;
            }
            i = j;
        }
        push_sentence(&chars, start, chars.len(), &mut out);
        out
    }
}

fn push_sentence(chars: &[char], start: usize, end: usize, out: &mut Vec<Sentence>) {
    let seg = &chars[start..end];
    let Some(first) = seg.iter().position(|c| !c.is_whitespace()) else {
        return;
    };
    let last = seg.iter().rposition(|c| !c.is_whitespace()).expect("non-empty");
    out.push(Sentence {
        text: seg[first..=last].iter().collect(),
        doc_offset: start + first,
        index: out.len(),
    });
}

/// Splits on `.`, `!`, `?` runs followed by whitespace or end of text, except
/// after the default abbreviations and inside numbers.
pub fn segment_sentences(text: &str) -> Vec<Sentence> {
    Segmenter::default().segment(text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbedding {
    pub vector: Array1<f64>,
    pub norm: f64,
    /// Set for sentences with no known tokens; such sentences rank last.
    pub is_zero: bool,
}

impl SentenceEmbedding {
    pub fn zero(dim: usize) -> Self {
        Self {
            vector: Array1::zeros(dim),
            norm: 0.0,
            is_zero: true,
        }
    }

    pub fn from_vector(vector: Array1<f64>) -> Self {
        let norm = vector.dot(&vector).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Self::zero(vector.len());
        }
        Self {
            vector,
            norm,
            is_zero: false,
        }
    }

    pub fn normalized(vector: Array1<f64>) -> Self {
        let e = Self::from_vector(vector);
        if e.is_zero {
            return e;
        }
        Self::from_vector(&e.vector / e.norm)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_vector(&self.vector * factor)
    }
}

/// Cosine of the angle between two vectors; `-inf` when either is zero.
pub fn cosine(u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return f64::NEG_INFINITY;
    }
    (u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0)
}

pub fn cosine_similarity(u: &SentenceEmbedding, v: &SentenceEmbedding) -> f64 {
    if u.is_zero || v.is_zero {
        return f64::NEG_INFINITY;
    }
    cosine(u.vector.view(), v.vector.view())
}

/// Frozen two-layer feedforward head: `d -> d_e` with GELU, then `d_e -> d_e`.
#[derive(Debug, Clone, PartialEq)]
pub struct DanHead {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl DanHead {
    /// Gaussian weights with variance 1/fan_in and zero biases.
    pub fn random(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |rows: usize, cols: usize| {
            let n = Normal::new(0.0, 1.0 / (rows as f64).sqrt()).expect("valid std");
            Array2::from_shape_simple_fn((rows, cols), || n.sample(&mut rng))
        };
        Self {
            w1: gauss(input_dim, output_dim),
            b1: Array1::zeros(output_dim),
            w2: gauss(output_dim, output_dim),
            b2: Array1::zeros(output_dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            w1: Array2::eye(dim),
            b1: Array1::zeros(dim),
            w2: Array2::eye(dim),
            b2: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.w1.nrows() || self.w1.ncols() != self.w2.nrows() {
            return Err(Error::Shape(format!(
                "DAN input width {} vs head {:?}/{:?}",
                x.len(),
                self.w1.dim(),
                self.w2.dim()
            )));
        }
        let h = (x.dot(&self.w1) + &self.b1).mapv(crate::encoder::gelu);
        Ok(h.dot(&self.w2) + &self.b2)
    }
}

/// Mean of the embedding rows of the non-special ids, or `None` if there are none.
pub fn average_embedding(ids: &[u32], embeddings: &Array2<f64>) -> Option<Array1<f64>> {
    let kept: Vec<u32> = ids.iter().copied().filter(|&id| !Vocab::is_special(id)).collect();
    if kept.is_empty() {
        return None;
    }
    let mut sum = Array1::zeros(embeddings.ncols());
    for &id in &kept {
        sum += &embeddings.row(id as usize);
    }
    Some(sum / kept.len() as f64)
}

pub trait SentenceEmbedder: Sync {
    fn embed(&self, text: &str) -> Result<SentenceEmbedding>;
}

/// Averaging encoder over a vocabulary's token embeddings.
#[derive(Debug, Clone)]
pub struct DanEmbedder<'a> {
    pub vocab: &'a Vocab,
    pub token_embeddings: &'a Array2<f64>,
    pub head: DanHead,
}

impl<'a> DanEmbedder<'a> {
    pub fn new(vocab: &'a Vocab, token_embeddings: &'a Array2<f64>, head: DanHead) -> Result<Self> {
        if token_embeddings.nrows() != vocab.len() {
            return Err(Error::Shape(format!(
                "{} embedding rows for a {}-token vocabulary",
                token_embeddings.nrows(),
                vocab.len()
            )));
        }
        if head.w1.nrows() != token_embeddings.ncols() {
            return Err(Error::Shape("DAN head width differs from embedding width".into()));
        }
        Ok(Self {
            vocab,
            token_embeddings,
            head,
        })
    }

    /// Embedder over a model's token embeddings with a seeded random head.
    pub fn from_params(vocab: &'a Vocab, params: &'a ParameterSet, output_dim: usize, seed: u64) -> Result<Self> {
        let d = params.token_embeddings.ncols();
        Self::new(vocab, &params.token_embeddings, DanHead::random(d, output_dim, seed))
    }
}

/// Tokenize, average non-special token embeddings, feed forward, L2-normalize.
pub fn dan_embed(text: &str, vocab: &Vocab, token_embeddings: &Array2<f64>, head: &DanHead) -> Result<SentenceEmbedding> {
    let ids = vocab.encode(text);
    match average_embedding(&ids, token_embeddings) {
        None => Ok(SentenceEmbedding::zero(head.w2.ncols())),
        Some(avg) => Ok(SentenceEmbedding::normalized(head.forward(&avg)?)),
    }
}

impl SentenceEmbedder for DanEmbedder<'_> {
    fn embed(&self, text: &str) -> Result<SentenceEmbedding> {
        dan_embed(text, self.vocab, self.token_embeddings, &self.head)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub top_k: usize,
    pub benchmark_sentences: Vec<String>,
    pub aggregation: Aggregation,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            top_k: 3,
            benchmark_sentences: vec![DEFAULT_BENCHMARK.to_string()],
            aggregation: Aggregation::Max,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be at least 1".into()));
        }
        if self.benchmark_sentences.is_empty() {
            return Err(Error::InvalidConfig("at least one benchmark sentence is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSentence {
    pub index: usize,
    pub score: f64,
    pub text: String,
}

/// Selected sentences in descending score order and their concatenated ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedInput {
    pub selected: Vec<ScoredSentence>,
    pub token_ids: Vec<u32>,
}

impl ExtractedInput {
    pub fn text(&self) -> String {
        self.selected.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ")
    }
}

/// Relevance scorer with pre-embedded benchmark sentences.
pub struct Extractor<'e, E: SentenceEmbedder> {
    embedder: &'e E,
    benchmarks: Vec<SentenceEmbedding>,
    config: ExtractionConfig,
    segmenter: Segmenter,
}

impl<'e, E: SentenceEmbedder> Extractor<'e, E> {
    pub fn new(embedder: &'e E, config: ExtractionConfig) -> Result<Self> {
        config.validate()?;
        let benchmarks = config
            .benchmark_sentences
            .iter()
            .map(|b| embedder.embed(b))
            .collect::<Result<Vec<_>>>()?;
        if benchmarks.iter().all(|b| b.is_zero) {
            return Err(Error::InvalidConfig(
                "no benchmark sentence contains a known token".into(),
            ));
        }
        Ok(Self {
            embedder,
            benchmarks,
            config,
            segmenter: Segmenter::default(),
        })
    }

    pub fn config(&self) -> &ExtractionConfig {
        &self.config
    }

    /// Relevance of one embedded sentence against the benchmark set.
    pub fn score(&self, e: &SentenceEmbedding) -> f64 {
        let sims = self.benchmarks.iter().map(|b| cosine_similarity(e, b));
        match self.config.aggregation {
            Aggregation::Max => sims.fold(f64::NEG_INFINITY, f64::max),
            Aggregation::Mean => {
                let v: Vec<f64> = sims.collect();
                v.iter().sum::<f64>() / v.len() as f64
            }
        }
    }

    pub fn score_sentences(&self, sentences: &[Sentence]) -> Result<Vec<f64>> {
        sentences
            .par_iter()
            .map(|s| self.embedder.embed(&s.text).map(|e| self.score(&e)))
            .collect()
    }

    /// Top-k sentences by score (ties to the earlier sentence), concatenated in
    /// descending score order.
    pub fn extract(&self, text: &str, vocab: &Vocab) -> Result<ExtractedInput> {
        let sentences = self.segmenter.segment(text);
        if sentences.is_empty() {
            return Err(Error::EmptyDocument);
        }
        let scores = self.score_sentences(&sentences)?;
        let mut order: Vec<usize> = (0..sentences.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        order.truncate(self.config.top_k);
        let mut token_ids = Vec::new();
        let selected = order
            .into_iter()
            .map(|i| {
                token_ids.extend(vocab.encode(&sentences[i].text));
                ScoredSentence {
                    index: sentences[i].index,
                    score: scores[i],
                    text: sentences[i].text.clone(),
                }
            })
            .collect();
        Ok(ExtractedInput { selected, token_ids })
    }
}

/// One-shot convenience wrapper around [`Extractor::extract`].
pub fn extract_top_k<E: SentenceEmbedder>(text: &str, cfg: &ExtractionConfig, embedder: &E, vocab: &Vocab) -> Result<ExtractedInput> {
    Extractor::new(embedder, cfg.clone())?.extract(text, vocab)
}
