//! Masked batches and the domain-adaptation pre-training loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{adam_step, compute_gradients, Batch, Mode, ModelConfig, OptimizerState, ParameterSet, TrainConfig, IGNORE};
use crate::error::{Error, Result};
use crate::tokenizer::{prepare_input, EncodedInput, Vocab, MASK, NUM_SPECIAL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingConfig {
    pub mask_rate: f64,
    pub replace_with_mask: f64,
    pub replace_with_random: f64,
    pub keep_original: f64,
    pub seed: u64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            mask_rate: 0.15,
            replace_with_mask: 0.8,
            replace_with_random: 0.1,
            keep_original: 0.1,
            seed: 0,
        }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<()> {
        // a zero rate is accepted so the degenerate case can be exercised
        if !(0.0..1.0).contains(&self.mask_rate) {
            return Err(Error::InvalidConfig(format!("mask_rate {} outside [0, 1)", self.mask_rate)));
        }
        let parts = [self.replace_with_mask, self.replace_with_random, self.keep_original];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "replacement fractions {parts:?} must be in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }
}

/// Corrupted inputs with per-position prediction targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    pub inputs: Vec<EncodedInput>,
    /// Original id at selected positions, [`IGNORE`] elsewhere.
    pub targets: Vec<Vec<u32>>,
    pub selection_mask: Vec<Vec<u8>>,
}

impl MaskedBatch {
    pub fn selected_count(&self) -> usize {
        self.selection_mask.iter().flatten().filter(|&&s| s == 1).count()
    }

    pub fn as_batch(&self) -> Batch<'_> {
        Batch::Mlm {
            inputs: &self.inputs,
            targets: &self.targets,
        }
    }
}

/// Selects each real, non-special position with probability `mask_rate` and
/// corrupts it to `[MASK]`, a random non-special token, or leaves it as is.
pub fn mask_batch(batch: &[EncodedInput], vocab_size: usize, mc: &MaskingConfig, rng: &mut impl Rng) -> Result<MaskedBatch> {
    mc.validate()?;
    if vocab_size <= NUM_SPECIAL {
        return Err(Error::InvalidConfig(format!(
            "vocabulary of {vocab_size} tokens has no non-special tokens to sample"
        )));
    }
    let mut out = MaskedBatch {
        inputs: Vec::with_capacity(batch.len()),
        targets: Vec::with_capacity(batch.len()),
        selection_mask: Vec::with_capacity(batch.len()),
    };
    let mask_cut = mc.replace_with_mask;
    let random_cut = mc.replace_with_mask + mc.replace_with_random;
    for input in batch {
        let mut corrupted = input.clone();
        let mut targets = vec![IGNORE; input.len()];
        let mut selected = vec![0u8; input.len()];
        for pos in 0..input.real_len {
            let original = input.ids[pos];
            if Vocab::is_special(original) || rng.random::<f64>() >= mc.mask_rate {
                continue;
            }
            selected[pos] = 1;
            targets[pos] = original;
            let r: f64 = rng.random();
            if r < mask_cut {
                corrupted.ids[pos] = MASK;
            } else if r < random_cut {
                corrupted.ids[pos] = rng.random_range(NUM_SPECIAL as u32..vocab_size as u32);
            }
        }
        out.inputs.push(corrupted);
        out.targets.push(targets);
        out.selection_mask.push(selected);
    }
    Ok(out)
}

/// Splits a token stream into consecutive non-overlapping windows of at most
/// `max_body` tokens.
pub fn windows(ids: &[u32], max_body: usize) -> Vec<Vec<u32>> {
    if max_body == 0 {
        return Vec::new();
    }
    ids.chunks(max_body).map(<[u32]>::to_vec).collect()
}

/// Tokenizes documents and prepares one input per window.
pub fn corpus_windows<S: AsRef<str>>(docs: &[S], vocab: &Vocab, max_seq_len: usize) -> Result<Vec<EncodedInput>> {
    if max_seq_len < 3 {
        return Err(Error::InvalidConfig(format!("max_seq_len must be at least 3, got {max_seq_len}")));
    }
    let mut out = Vec::new();
    for doc in docs {
        for w in windows(&vocab.encode(doc.as_ref()), max_seq_len - 2) {
            out.push(prepare_input(&w, max_seq_len)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: ParameterSet,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Continues training `params` with the MLM objective on `corpus_docs`.
///
/// Windows are reshuffled and re-masked every epoch. Batches in which no
/// position was selected are skipped.
pub fn run_pretraining<S: AsRef<str>>(
    corpus_docs: &[S],
    vocab: &Vocab,
    params: ParameterSet,
    config: &ModelConfig,
    tc: &TrainConfig,
    mc: &MaskingConfig,
) -> Result<PretrainOutcome> {
    config.validate()?;
    tc.validate()?;
    mc.validate()?;
    if corpus_docs.is_empty() {
        return Err(Error::InvalidInput("pre-training corpus is empty".into()));
    }
    if vocab.len() != config.vocab_size {
        return Err(Error::CheckpointMismatch(format!(
            "vocabulary has {} tokens, model expects {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    let mut data = corpus_windows(corpus_docs, vocab, config.max_seq_len)?;
    if data.is_empty() {
        return Err(Error::InvalidInput("pre-training corpus has no tokens".into()));
    }

    let mut params = params;
    let mut state = OptimizerState::new(&params);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(mc.seed);
    let mut train_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut epoch_losses = Vec::with_capacity(tc.epochs);
    let mut steps = 0;
    for _ in 0..tc.epochs {
        data.shuffle(&mut train_rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in data.chunks(tc.batch_size) {
            let masked = mask_batch(chunk, config.vocab_size, mc, &mut mask_rng)?;
            if masked.selected_count() == 0 {
                continue;
            }
            let (loss, grads) = compute_gradients(&masked.as_batch(), &params, config, Mode::Train, &mut train_rng)?;
            adam_step(&mut params, &grads, &mut state, tc)?;
            sum += loss;
            batches += 1;
            steps += 1;
        }
        epoch_losses.push(if batches == 0 { f64::NAN } else { sum / batches as f64 });
    }
    Ok(PretrainOutcome {
        params,
        epoch_losses,
        steps,
    })
}
