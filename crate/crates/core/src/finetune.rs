//! Classification fine-tuning and evaluation.

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::{Checkpoint, Stage};
use crate::data::{LabeledExample, Splits, Task};
use crate::encoder::forward::{check_input, run_encoder};
use crate::encoder::{
    adam_step, compute_gradients, forward_classify, Batch, Mode, ModelConfig, OptimizerState,
    ParameterSet, TrainConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{Metrics, SplitMetrics};
use crate::tokenizer::EncodedInput;

/// Eval-mode logits for one prepared input.
pub fn classify_logits(params: &ParameterSet, config: &ModelConfig, input: &EncodedInput) -> Result<Array1<f64>> {
    check_input(input, params, config)?;
    // padding is masked out of attention, so the non-padding prefix gives
    // the same [CLS] state as the full-length pass
    let n = input.real_len;
    let h = run_encoder(params, config, input.real_ids(), &vec![true; n], None).hidden;
    forward_classify(&h, params)
}

/// Eval-mode class predictions; ties go to class 0.
pub fn predict(params: &ParameterSet, config: &ModelConfig, inputs: &[&EncodedInput]) -> Result<Vec<u32>> {
    inputs
        .par_iter()
        .map(|input| {
            let logits = classify_logits(params, config, input)?;
            Ok(u32::from(logits[1] > logits[0]))
        })
        .collect()
}

pub fn evaluate_split(params: &ParameterSet, config: &ModelConfig, split: &[LabeledExample]) -> Result<SplitMetrics> {
    if split.is_empty() {
        return Err(Error::EmptySplit);
    }
    let inputs: Vec<&EncodedInput> = split.iter().map(|e| &e.input).collect();
    let labels: Vec<u32> = split.iter().map(|e| e.label).collect();
    SplitMetrics::from_predictions(&predict(params, config, &inputs)?, &labels)
}

/// Evaluates a fine-tuned checkpoint on one split without touching it.
pub fn evaluate(ckpt: &Checkpoint, split: &[LabeledExample]) -> Result<SplitMetrics> {
    if !ckpt.meta.stage.is_finetuned() {
        return Err(Error::CheckpointMismatch(format!(
            "evaluation needs a fine-tuned checkpoint, found stage {:?}",
            ckpt.meta.stage
        )));
    }
    evaluate_split(&ckpt.params, &ckpt.meta.config, split)
}

pub fn finetuned_stage(task: Task) -> Stage {
    match task {
        Task::A => Stage::FinetunedA,
        Task::B => Stage::FinetunedB,
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    /// Trained parameters, rounded to checkpoint precision.
    pub params: ParameterSet,
    pub metrics: Metrics,
    pub epoch_losses: Vec<f64>,
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    init_stage: Stage,
    train_size: usize,
}

/// Trains encoder and classifier end to end on the training split, then
/// evaluates all three splits.
///
/// The training order and dropout masks depend only on `tc.seed` and the
/// split, so two runs that differ only in `params` see identical batches.
pub fn run_finetune(
    params: ParameterSet,
    init_stage: Stage,
    config: &ModelConfig,
    splits: &Splits<LabeledExample>,
    task: Task,
    tc: &TrainConfig,
    model_name: &str,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    tc.validate()?;
    if init_stage.is_finetuned() {
        return Err(Error::CheckpointMismatch(format!(
            "fine-tuning starts from a pretrained or fresh model, found stage {init_stage:?}"
        )));
    }
    params.check_shapes(config).map_err(|e| Error::CheckpointMismatch(e.to_string()))?;
    for (name, split) in splits.named() {
        if split.is_empty() {
            return Err(Error::EmptySplit);
        }
        for ex in split {
            if ex.input.len() != config.max_seq_len {
                return Err(Error::CheckpointMismatch(format!(
                    "{name} example {} has length {}, model takes {}",
                    ex.doc_id,
                    ex.input.len(),
                    config.max_seq_len
                )));
            }
            if let Some(&id) = ex.input.ids.iter().find(|&&id| id as usize >= config.vocab_size) {
                return Err(Error::CheckpointMismatch(format!(
                    "token id {id} in {name} split exceeds model vocabulary of {}",
                    config.vocab_size
                )));
            }
        }
    }

    let mut params = params;
    let mut state = OptimizerState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(tc.epochs);
    for _ in 0..tc.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(tc.batch_size) {
            let inputs: Vec<EncodedInput> = chunk.iter().map(|&i| splits.train[i].input.clone()).collect();
            let labels: Vec<u32> = chunk.iter().map(|&i| splits.train[i].label).collect();
            let batch = Batch::Classify {
                inputs: &inputs,
                labels: &labels,
            };
            let (loss, grads) = compute_gradients(&batch, &params, config, Mode::Train, &mut rng)?;
            adam_step(&mut params, &grads, &mut state, tc)?;
            sum += loss;
            batches += 1;
        }
        epoch_losses.push(sum / batches as f64);
    }
    params.round_to_f32();

    let metrics = Metrics {
        model: model_name.to_string(),
        task,
        train: evaluate_split(&params, config, &splits.train)?,
        validation: evaluate_split(&params, config, &splits.val)?,
        test: evaluate_split(&params, config, &splits.test)?,
        config: serde_json::to_value(ConfigEcho {
            model: config,
            train: tc,
            init_stage,
            train_size: splits.train.len(),
        })?,
    };
    Ok(FinetuneOutcome {
        params,
        metrics,
        epoch_losses,
    })
}
