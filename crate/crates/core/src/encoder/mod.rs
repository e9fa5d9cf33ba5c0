//! Post-LN transformer encoder with a tied MLM head and a CLS classification
//! head, exact reverse-mode gradients, and Adam.

mod adam;
mod backward;
mod config;
pub(crate) mod forward;
mod loss;
mod params;

pub use adam::{adam_step, OptimizerState};
pub use backward::{batch_loss, compute_gradients, Batch, Objective};
pub use config::{Mode, ModelConfig, TrainConfig};
pub use forward::{gelu, forward_classify, forward_encoder, forward_mlm, trace_encoder, EncoderTrace};
pub use loss::{cross_entropy, IGNORE};
pub use params::{LayerParams, ParameterSet};
