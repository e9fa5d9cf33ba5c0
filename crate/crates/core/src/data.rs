//! Filings, quarterly score series, labels, datasets and descriptive statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relevance::{segment_sentences, ExtractedInput, ScoredSentence};
use crate::tokenizer::{prepare_input, EncodedInput, Vocab};

/// Calendar quarter, ordered chronologically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Quarter {
    pub year: i32,
    pub quarter: u8,
}

impl Quarter {
    pub fn new(year: i32, quarter: u8) -> Result<Self> {
        if !(1..=4).contains(&quarter) {
            return Err(Error::InvalidInput(format!("quarter {quarter} outside 1..=4")));
        }
        Ok(Self { year, quarter })
    }

    pub fn ordinal(self) -> i64 {
        self.year as i64 * 4 + (self.quarter as i64 - 1)
    }

    pub fn next(self) -> Self {
        if self.quarter == 4 {
            Self { year: self.year + 1, quarter: 1 }
        } else {
            Self { year: self.year, quarter: self.quarter + 1 }
        }
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.quarter)
    }
}

pub fn doc_id(ticker: &str, q: Quarter) -> String {
    format!("{ticker}-{q}")
}

/// Splits `"{ticker}-{year}Q{quarter}"`; the ticker itself may contain dashes.
pub fn parse_doc_id(id: &str) -> Result<(String, Quarter)> {
    let bad = || Error::InvalidInput(format!("malformed document id {id:?}"));
    let (ticker, period) = id.rsplit_once('-').ok_or_else(bad)?;
    let (year, quarter) = period.split_once('Q').ok_or_else(bad)?;
    let year: i32 = year.parse().map_err(|_| bad())?;
    let quarter: u8 = quarter.parse().map_err(|_| bad())?;
    if ticker.is_empty() {
        return Err(bad());
    }
    Ok((ticker.to_string(), Quarter::new(year, quarter)?))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilingDoc {
    pub ticker: String,
    pub period: Quarter,
    pub text: String,
}

impl FilingDoc {
    pub fn new(ticker: impl Into<String>, year: i32, quarter: u8, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let ticker = ticker.into();
        if text.trim().is_empty() {
            return Err(Error::InvalidInput(format!("filing {ticker} {year}Q{quarter} has no text")));
        }
        Ok(Self {
            period: Quarter::new(year, quarter)?,
            ticker,
            text,
        })
    }

    pub fn doc_id(&self) -> String {
        doc_id(&self.ticker, self.period)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub ticker: String,
    pub year: i32,
    pub quarter: u8,
    pub path: PathBuf,
}

/// Reads a JSON Lines filing manifest and the filing bodies it points to.
/// Relative paths resolve against the manifest's directory.
pub fn load_filings(manifest: &Path) -> Result<Vec<FilingDoc>> {
    let text = fs::read_to_string(manifest)
        .map_err(|e| Error::io(format!("reading manifest {}", manifest.display()), e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: manifest.to_path_buf(),
            line: i + 1,
            msg,
        };
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let period = Quarter::new(entry.year, entry.quarter).map_err(|e| parse_err(e.to_string()))?;
        if !seen.insert((entry.ticker.clone(), period)) {
            return Err(Error::Duplicate(doc_id(&entry.ticker, period)));
        }
        let path = if entry.path.is_absolute() { entry.path.clone() } else { base.join(&entry.path) };
        let body = fs::read_to_string(&path)
            .map_err(|e| Error::io(format!("reading filing {}", path.display()), e))?;
        out.push(FilingDoc::new(entry.ticker, entry.year, entry.quarter, body).map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorePoint {
    pub period: Quarter,
    pub env_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub ticker: String,
    /// Strictly increasing in period.
    pub points: Vec<ScorePoint>,
}

pub const SCORES_HEADER: [&str; 4] = ["ticker", "year", "quarter", "env_score"];

/// Loads `ticker,year,quarter,env_score` rows into chronologically sorted series.
pub fn load_scores(path: &Path) -> Result<BTreeMap<String, ScoreSeries>> {
    let file = fs::File::open(path).map_err(|e| Error::io(format!("opening scores {}", path.display()), e))?;
    parse_scores(file, path)
}

pub fn parse_scores(reader: impl std::io::Read, path: &Path) -> Result<BTreeMap<String, ScoreSeries>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != SCORES_HEADER {
        return Err(parse_err(1, format!("expected header {}", SCORES_HEADER.join(","))));
    }
    let mut by_ticker: BTreeMap<String, BTreeMap<Quarter, f64>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, found {}", record.len())));
        }
        let ticker = record[0].to_string();
        if ticker.is_empty() {
            return Err(parse_err(line, "empty ticker".into()));
        }
        let year: i32 = record[1].parse().map_err(|_| parse_err(line, format!("bad year {:?}", &record[1])))?;
        let quarter: u8 = record[2]
            .parse()
            .map_err(|_| parse_err(line, format!("bad quarter {:?}", &record[2])))?;
        let period = Quarter::new(year, quarter).map_err(|e| parse_err(line, e.to_string()))?;
        let score: f64 = record[3]
            .parse()
            .map_err(|_| parse_err(line, format!("bad env_score {:?}", &record[3])))?;
        if !score.is_finite() {
            return Err(parse_err(line, format!("non-finite env_score {score}")));
        }
        if by_ticker.entry(ticker.clone()).or_default().insert(period, score).is_some() {
            return Err(Error::Duplicate(format!("{} (line {line})", doc_id(&ticker, period))));
        }
    }
    Ok(by_ticker
        .into_iter()
        .map(|(ticker, pts)| {
            let points = pts.into_iter().map(|(period, env_score)| ScorePoint { period, env_score }).collect();
            (ticker.clone(), ScoreSeries { ticker, points })
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeLabel {
    NoChange,
    Change,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionLabel {
    Negative,
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// change vs no change
    A,
    /// positive vs negative, among changes
    B,
}

impl Task {
    pub fn tag(self) -> &'static str {
        match self {
            Task::A => "a",
            Task::B => "b",
        }
    }

    /// Human-readable names of class 0 and class 1.
    pub fn class_names(self) -> [&'static str; 2] {
        match self {
            Task::A => ["no_change", "change"],
            Task::B => ["negative", "positive"],
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "A" => Ok(Task::A),
            "b" | "B" => Ok(Task::B),
            _ => Err(Error::InvalidConfig(format!("task must be a or b, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterLabel {
    pub ticker: String,
    pub period: Quarter,
    pub delta: f64,
    pub task_a: ChangeLabel,
    pub task_b: Option<DirectionLabel>,
}

impl QuarterLabel {
    /// Class id for `task` (1 = change / positive), or `None` when the row
    /// does not belong to the task.
    pub fn class(&self, task: Task) -> Option<u32> {
        match task {
            Task::A => Some(u32::from(self.task_a == ChangeLabel::Change)),
            Task::B => self.task_b.map(|d| u32::from(d == DirectionLabel::Positive)),
        }
    }
}

/// One label per pair of adjacent quarters present in the series; a missing
/// quarter breaks the chain.
pub fn derive_labels(series: &ScoreSeries, change_epsilon: f64) -> Result<Vec<QuarterLabel>> {
    if series.points.len() < 2 {
        return Err(Error::InsufficientHistory {
            ticker: series.ticker.clone(),
        });
    }
    if !(change_epsilon >= 0.0) {
        return Err(Error::InvalidConfig(format!("change_epsilon {change_epsilon} must be >= 0")));
    }
    let mut out = Vec::new();
    for pair in series.points.windows(2) {
        let (prev, cur) = (pair[0], pair[1]);
        if prev.period >= cur.period {
            return Err(Error::InvalidInput(format!("series {} is not strictly increasing", series.ticker)));
        }
        if prev.period.next() != cur.period {
            continue;
        }
        let delta = cur.env_score - prev.env_score;
        let changed = delta.abs() > change_epsilon;
        out.push(QuarterLabel {
            ticker: series.ticker.clone(),
            period: cur.period,
            delta,
            task_a: if changed { ChangeLabel::Change } else { ChangeLabel::NoChange },
            task_b: changed.then_some(if delta > 0.0 { DirectionLabel::Positive } else { DirectionLabel::Negative }),
        });
    }
    Ok(out)
}

/// Labels for every series with at least two points, in ticker order.
pub fn derive_all_labels(series: &BTreeMap<String, ScoreSeries>, change_epsilon: f64) -> Result<Vec<QuarterLabel>> {
    let mut out = Vec::new();
    for s in series.values() {
        match derive_labels(s, change_epsilon) {
            Ok(labels) => out.extend(labels),
            Err(Error::InsufficientHistory { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// One line of `extracted.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedRecord {
    pub doc_id: String,
    pub selected: Vec<ScoredSentence>,
    pub token_count: usize,
    pub token_ids: Vec<u32>,
}

impl ExtractedRecord {
    pub fn new(doc_id: String, extracted: ExtractedInput) -> Self {
        Self {
            doc_id,
            token_count: extracted.token_ids.len(),
            selected: extracted.selected,
            token_ids: extracted.token_ids,
        }
    }

    pub fn text(&self) -> String {
        self.selected.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub doc_id: String,
    pub delta: f64,
    pub task_a: ChangeLabel,
    pub task_b: Option<DirectionLabel>,
    /// Class id for the dataset's task.
    pub label: u32,
    /// Excerpt text, used by the bag-of-words baseline.
    pub text: String,
    pub input: EncodedInput,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinReport {
    pub filings: usize,
    pub labels: usize,
    pub matched: usize,
    pub unmatched_filings: usize,
    pub unmatched_labels: usize,
}

/// Inner join of extracted filings with the labels eligible for `task`.
/// Examples come out in (ticker, period) order.
pub fn build_dataset_from_records(
    records: &[ExtractedRecord],
    labels: &[QuarterLabel],
    task: Task,
    max_seq_len: usize,
) -> Result<(Vec<LabeledExample>, JoinReport)> {
    let eligible: HashMap<(String, Quarter), &QuarterLabel> = labels
        .iter()
        .filter(|l| l.class(task).is_some())
        .map(|l| ((l.ticker.clone(), l.period), l))
        .collect();
    let mut report = JoinReport {
        filings: records.len(),
        labels: eligible.len(),
        ..Default::default()
    };
    let mut joined = Vec::new();
    let mut seen = BTreeSet::new();
    for r in records {
        let key = parse_doc_id(&r.doc_id)?;
        if !seen.insert(key.clone()) {
            return Err(Error::Duplicate(r.doc_id.clone()));
        }
        match eligible.get(&key) {
            Some(label) => joined.push((key, r, *label)),
            None => report.unmatched_filings += 1,
        }
    }
    report.matched = joined.len();
    report.unmatched_labels = report.labels - report.matched;
    if joined.is_empty() {
        return Err(Error::EmptyDataset("no filing matched a label".into()));
    }
    joined.sort_by(|a, b| a.0.cmp(&b.0));
    let examples = joined
        .into_iter()
        .map(|(_, r, l)| {
            Ok(LabeledExample {
                doc_id: r.doc_id.clone(),
                delta: l.delta,
                task_a: l.task_a,
                task_b: l.task_b,
                label: l.class(task).expect("eligible"),
                text: r.text(),
                input: prepare_input(&r.token_ids, max_seq_len)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((examples, report))
}

/// Extracts every filing with `extract`, then joins with labels.
pub fn build_dataset(
    filings: &[FilingDoc],
    labels: &[QuarterLabel],
    extract: impl Fn(&FilingDoc) -> Result<ExtractedInput>,
    task: Task,
    max_seq_len: usize,
) -> Result<(Vec<LabeledExample>, JoinReport)> {
    let records = filings
        .iter()
        .map(|f| Ok(ExtractedRecord::new(f.doc_id(), extract(f)?)))
        .collect::<Result<Vec<_>>>()?;
    build_dataset_from_records(&records, labels, task, max_seq_len)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    /// Per-class seeded shuffle, then fractional allocation.
    #[default]
    Stratified,
    /// Whole tickers are assigned to one split (no company spans two splits).
    GroupByTicker,
    /// Chronological: earliest quarters train, latest test.
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
    pub strategy: SplitStrategy,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.7,
            val_frac: 0.15,
            test_frac: 0.15,
            seed: 0,
            strategy: SplitStrategy::Stratified,
        }
    }
}

impl SplitSpec {
    pub fn fractions(&self) -> [f64; 3] {
        [self.train_frac, self.val_frac, self.test_frac]
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.fractions();
        if f.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Stratification(format!("every split fraction must be > 0, got {f:?}")));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Stratification(format!("split fractions {f:?} do not sum to 1")));
        }
        Ok(())
    }
}

/// Allocates `n` items to the fractions: floors first, then the remaining
/// items to the largest fractional parts (earlier split on ties).
pub fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

impl<T> Splits<T> {
    pub fn named(&self) -> [(&'static str, &Vec<T>); 3] {
        [("train", &self.train), ("validation", &self.val), ("test", &self.test)]
    }
}

fn assign<T: Clone>(dataset: &[T], buckets: [Vec<usize>; 3]) -> Splits<T> {
    let pick = |mut idx: Vec<usize>| {
        idx.sort_unstable();
        idx.into_iter().map(|i| dataset[i].clone()).collect()
    };
    let [a, b, c] = buckets;
    Splits {
        train: pick(a),
        val: pick(b),
        test: pick(c),
    }
}

/// Partitions the dataset into train/validation/test. Each split keeps the
/// dataset's original order.
pub fn split_dataset(dataset: &[LabeledExample], spec: &SplitSpec) -> Result<Splits<LabeledExample>> {
    spec.validate()?;
    if dataset.len() < 3 {
        return Err(Error::Stratification(format!("{} examples cannot fill three splits", dataset.len())));
    }
    let fractions = spec.fractions();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut buckets: [Vec<usize>; 3] = Default::default();
    match spec.strategy {
        SplitStrategy::Stratified => {
            let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for (i, ex) in dataset.iter().enumerate() {
                by_class.entry(ex.label).or_default().push(i);
            }
            if by_class.len() < 2 {
                return Err(Error::Stratification("both classes must be present".into()));
            }
            for (class, mut idx) in by_class {
                if idx.len() < 3 {
                    return Err(Error::Stratification(format!(
                        "class {class} has {} examples, fewer than the 3 splits",
                        idx.len()
                    )));
                }
                idx.shuffle(&mut rng);
                let counts = largest_remainder(idx.len(), &fractions);
                let mut it = idx.into_iter();
                for (b, &c) in buckets.iter_mut().zip(&counts) {
                    b.extend(it.by_ref().take(c));
                }
            }
        }
        SplitStrategy::GroupByTicker => {
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, ex) in dataset.iter().enumerate() {
                let ticker = ex.doc_id.rsplit_once('-').map_or(ex.doc_id.as_str(), |(t, _)| t);
                groups.entry(ticker).or_default().push(i);
            }
            if groups.len() < 3 {
                return Err(Error::Stratification(format!("{} tickers cannot fill three splits", groups.len())));
            }
            let mut tickers: Vec<Vec<usize>> = groups.into_values().collect();
            tickers.shuffle(&mut rng);
            let counts = largest_remainder(tickers.len(), &fractions);
            let mut it = tickers.into_iter();
            for (b, &c) in buckets.iter_mut().zip(&counts) {
                for g in it.by_ref().take(c) {
                    b.extend(g);
                }
            }
        }
        SplitStrategy::Temporal => {
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            let period = |i: usize| parse_doc_id(&dataset[i].doc_id).map(|(_, q)| q).ok();
            idx.sort_by_key(|&i| (period(i), i));
            let counts = largest_remainder(idx.len(), &fractions);
            let mut it = idx.into_iter();
            for (b, &c) in buckets.iter_mut().zip(&counts) {
                b.extend(it.by_ref().take(c));
            }
        }
    }
    if buckets.iter().any(Vec::is_empty) {
        return Err(Error::Stratification("a split came out empty".into()));
    }
    Ok(assign(dataset, buckets))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_start: f64,
    pub bin_end: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<HistogramBin>,
}

impl Histogram {
    /// `bins` equal-width bins spanning [min, max]; the last bin is closed.
    pub fn equal_width(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        if values.is_empty() {
            return Self { bins: Vec::new() };
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if min == max {
            return Self {
                bins: vec![HistogramBin { bin_start: min, bin_end: max, count: values.len() }],
            };
        }
        let width = (max - min) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &v in values {
            let b = (((v - min) / width).floor() as usize).min(bins - 1);
            counts[b] += 1;
        }
        Self {
            bins: counts
                .into_iter()
                .enumerate()
                .map(|(i, count)| HistogramBin {
                    bin_start: min + i as f64 * width,
                    bin_end: if i + 1 == bins { max } else { min + (i + 1) as f64 * width },
                    count,
                })
                .collect(),
        }
    }

    /// Bins `[k*w, (k+1)*w)` from zero up to the largest value.
    pub fn fixed_width(values: &[usize], width: usize) -> Self {
        let width = width.max(1);
        let Some(&max) = values.iter().max() else {
            return Self { bins: Vec::new() };
        };
        let mut counts = vec![0usize; max / width + 1];
        for &v in values {
            counts[v / width] += 1;
        }
        Self {
            bins: counts
                .into_iter()
                .enumerate()
                .map(|(i, count)| HistogramBin {
                    bin_start: (i * width) as f64,
                    bin_end: ((i + 1) * width) as f64,
                    count,
                })
                .collect(),
        }
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("bin_start,bin_end,count\n");
        for b in &self.bins {
            out.push_str(&format!("{},{},{}\n", b.bin_start, b.bin_end, b.count));
        }
        fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdaConfig {
    pub delta_bins: usize,
    pub sentence_bin_width: usize,
}

impl Default for EdaConfig {
    fn default() -> Self {
        Self {
            delta_bins: 20,
            sentence_bin_width: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdaStats {
    pub label_count: usize,
    pub zero_delta_count: usize,
    pub zero_delta_fraction: f64,
    pub change_count: usize,
    pub positive_count: usize,
    pub negative_count: usize,
    pub filing_count: usize,
    pub sentence_count: usize,
    pub mean_sentence_tokens: f64,
    pub delta_histogram: Histogram,
    pub sentence_length_histogram: Histogram,
}

/// Score-change distribution and filing sentence-length distribution
/// (WordPiece tokens per sentence).
pub fn eda_stats(labels: &[QuarterLabel], filings: &[FilingDoc], vocab: &Vocab, cfg: &EdaConfig) -> Result<EdaStats> {
    if labels.is_empty() || filings.is_empty() {
        return Err(Error::EmptyDataset("statistics need labels and filings".into()));
    }
    let deltas: Vec<f64> = labels.iter().map(|l| l.delta).collect();
    let zero = deltas.iter().filter(|&&d| d == 0.0).count();
    let lengths: Vec<usize> = filings
        .iter()
        .flat_map(|f| segment_sentences(&f.text))
        .map(|s| vocab.encode(&s.text).len())
        .collect();
    let count_dir = |d| labels.iter().filter(|l| l.task_b == Some(d)).count();
    Ok(EdaStats {
        label_count: labels.len(),
        zero_delta_count: zero,
        zero_delta_fraction: zero as f64 / labels.len() as f64,
        change_count: labels.iter().filter(|l| l.task_a == ChangeLabel::Change).count(),
        positive_count: count_dir(DirectionLabel::Positive),
        negative_count: count_dir(DirectionLabel::Negative),
        filing_count: filings.len(),
        sentence_count: lengths.len(),
        mean_sentence_tokens: if lengths.is_empty() {
            0.0
        } else {
            lengths.iter().sum::<usize>() as f64 / lengths.len() as f64
        },
        delta_histogram: Histogram::equal_width(&deltas, cfg.delta_bins),
        sentence_length_histogram: Histogram::fixed_width(&lengths, cfg.sentence_bin_width),
    })
}

/// Writes `eda.json`, `delta_hist.csv` and `sentlen_hist.csv` into `dir`.
pub fn write_eda(stats: &EdaStats, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    write_json(&dir.join("eda.json"), stats)?;
    stats.delta_histogram.write_csv(&dir.join("delta_hist.csv"))?;
    stats.sentence_length_histogram.write_csv(&dir.join("sentlen_hist.csv"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// On-disk dataset summary written next to the split files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub task: Task,
    pub max_seq_len: usize,
    pub split: SplitSpec,
    pub join: JoinReport,
    pub counts: BTreeMap<String, usize>,
}

pub fn save_splits(dir: &Path, splits: &Splits<LabeledExample>, meta: &DatasetMeta) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    write_jsonl(&dir.join("train.jsonl"), &splits.train)?;
    write_jsonl(&dir.join("val.jsonl"), &splits.val)?;
    write_jsonl(&dir.join("test.jsonl"), &splits.test)?;
    write_json(&dir.join("meta.json"), meta)
}

pub fn load_splits(dir: &Path) -> Result<(Splits<LabeledExample>, DatasetMeta)> {
    let meta: DatasetMeta = read_json(&dir.join("meta.json"))?;
    let splits = Splits {
        train: read_jsonl(&dir.join("train.jsonl"))?,
        val: read_jsonl(&dir.join("val.jsonl"))?,
        test: read_jsonl(&dir.join("test.jsonl"))?,
    };
    Ok((splits, meta))
}
