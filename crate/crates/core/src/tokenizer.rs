//! WordPiece vocabulary, greedy longest-match encoding and fixed-length inputs.
//!
//! Text is lowercased and split on whitespace, with every punctuation character
//! split off as its own word. Each word is then covered left to right by the
//! longest matching vocabulary piece; pieces after the first carry the `##`
//! continuation prefix. A word that cannot be covered becomes a single `[UNK]`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;

pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const NUM_SPECIAL: usize = SPECIAL_TOKENS.len();

const CONTINUATION: &str = "##";
const MAX_CHARS_PER_WORD: usize = 100;

/// Ordered token inventory; the line number in a vocab file is the id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from an ordered token list. The first five entries
    /// must be the special tokens in their fixed order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_SPECIAL {
            return Err(Error::InvalidInput(format!(
                "vocabulary has {} tokens, the five specials are required",
                tokens.len()
            )));
        }
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[i] != *special {
                return Err(Error::InvalidInput(format!(
                    "token {i} must be {special}, found {:?}",
                    tokens[i]
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok == CONTINUATION {
                return Err(Error::InvalidInput(format!("empty token at id {i}")));
            }
            if index.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::Duplicate(format!("vocabulary token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIAL
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading vocab {}", path.display()), e))?;
        let tokens = text
            .lines()
            .map(|l| l.trim_end_matches('\r').to_string())
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        fs::write(path, out).map_err(|e| Error::io(format!("writing vocab {}", path.display()), e))
    }

    /// Lowercase, pre-tokenize and WordPiece-encode `text`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for word in pre_tokenize(text) {
            self.encode_word(&word, &mut ids);
        }
        ids
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_CHARS_PER_WORD {
            out.push(UNK);
            return;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        let mut candidate = String::with_capacity(word.len() + CONTINUATION.len());
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION);
                }
                candidate.extend(&chars[start..end]);
                if let Some(id) = self.id(&candidate) {
                    // specials are never produced by matching text
                    if !Self::is_special(id) {
                        found = Some(id);
                        break;
                    }
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => {
                    out.push(UNK);
                    return;
                }
            }
        }
        out.extend(pieces);
    }

    /// Inverse of [`Vocab::encode`] up to lowercasing and unknown words.
    ///
    /// `##` pieces attach to the previous piece, other pieces are separated by
    /// one space. `[PAD]`, `[CLS]`, `[SEP]` and `[MASK]` are dropped; `[UNK]`
    /// is kept so out-of-vocabulary words stay visible.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(Error::InvalidId {
                id,
                size: self.len(),
            })?;
            if Self::is_special(id) && id != UNK {
                continue;
            }
            match tok.strip_prefix(CONTINUATION) {
                Some(rest) if !out.is_empty() => out.push_str(rest),
                _ => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(tok);
                }
            }
        }
        Ok(out)
    }
}

fn is_punctuation(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Lowercases and splits text into words; punctuation characters become
/// single-character words.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        } else if is_punctuation(c) {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            words.push(c.to_string());
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Trains a WordPiece vocabulary by frequency-based pair merging.
///
/// Words start as their first character followed by `##`-prefixed
/// continuation characters. The most frequent adjacent pair (ties broken by
/// the lexicographically smallest pair) is merged until the vocabulary holds
/// `target_size` tokens or no pair reaches `min_freq`.
pub fn train_vocab<S: AsRef<str>>(corpus: &[S], target_size: usize, min_freq: u64) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("vocabulary corpus is empty".into()));
    }
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for doc in corpus {
        for w in pre_tokenize(doc.as_ref()) {
            *word_counts.entry(w).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::InvalidInput("vocabulary corpus contains no words".into()));
    }

    let alphabet: std::collections::BTreeSet<char> =
        word_counts.keys().flat_map(|w| w.chars()).collect();
    if target_size < alphabet.len() + NUM_SPECIAL {
        return Err(Error::InvalidConfig(format!(
            "target vocabulary size {target_size} is below {} specials + {} characters",
            NUM_SPECIAL,
            alphabet.len()
        )));
    }

    let mut words: Vec<(Vec<String>, u64)> = word_counts
        .into_iter()
        .map(|(w, n)| {
            let syms = w
                .chars()
                .enumerate()
                .map(|(i, c)| if i == 0 { c.to_string() } else { format!("{CONTINUATION}{c}") })
                .collect();
            (syms, n)
        })
        .collect();

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    let initial: std::collections::BTreeSet<String> =
        words.iter().flat_map(|(s, _)| s.iter().cloned()).collect();
    tokens.extend(initial);
    let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();

    let min_freq = min_freq.max(1);
    while tokens.len() < target_size {
        let mut pairs: BTreeMap<(&str, &str), u64> = BTreeMap::new();
        for (syms, n) in &words {
            for w in syms.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += n;
            }
        }
        // BTreeMap iterates in lexicographic order, so the first maximum wins ties.
        let mut best: Option<((&str, &str), u64)> = None;
        for (pair, &n) in &pairs {
            if n >= min_freq && best.is_none_or(|(_, b)| n > b) {
                best = Some((*pair, n));
            }
        }
        let Some(((left, right), _)) = best else { break };
        let (left, right) = (left.to_string(), right.to_string());
        let merged = format!("{left}{}", right.strip_prefix(CONTINUATION).unwrap_or(&right));
        for (syms, _) in words.iter_mut() {
            let mut i = 0;
            while i + 1 < syms.len() {
                if syms[i] == left && syms[i + 1] == right {
                    syms[i] = merged.clone();
                    syms.remove(i + 1);
                }
                i += 1;
            }
        }
        if seen.insert(merged.clone()) {
            tokens.push(merged);
        }
    }
    Vocab::from_tokens(tokens)
}

/// A fixed-length model input: `[CLS] body [SEP]` followed by padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedInput {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub real_len: usize,
}

impl EncodedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids of the non-padding prefix.
    pub fn real_ids(&self) -> &[u32] {
        &self.ids[..self.real_len]
    }
}

/// Wraps `token_ids` with `[CLS]`/`[SEP]`, keeping the head of the body when it
/// does not fit, and pads to exactly `max_seq_len`.
pub fn prepare_input(token_ids: &[u32], max_seq_len: usize) -> Result<EncodedInput> {
    if max_seq_len < 3 {
        return Err(Error::InvalidConfig(format!(
            "max_seq_len must be at least 3, got {max_seq_len}"
        )));
    }
    let body = &token_ids[..token_ids.len().min(max_seq_len - 2)];
    let real_len = body.len() + 2;
    let mut ids = Vec::with_capacity(max_seq_len);
    ids.push(CLS);
    ids.extend_from_slice(body);
    ids.push(SEP);
    ids.resize(max_seq_len, PAD);
    let mut attention_mask = vec![1u8; real_len];
    attention_mask.resize(max_seq_len, 0);
    Ok(EncodedInput {
        ids,
        attention_mask,
        real_len,
    })
}
