//! Cross-lingual span-masking pre-training, word alignment, and span-labeling
//! fine-tuning, small enough to run on a single CPU.
//!
//! The crate is organized as a data pipeline (corpus -> alignment -> span
//! projection -> training instances), a from-scratch transformer encoder with
//! manual backprop, pre-training objectives, and a fine-tune / evaluation
//! harness for extractive QA and sequence tagging.

pub mod align;
pub mod corpus;
pub mod error;
pub mod fewshot;
pub mod finetune;
pub mod instance;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod spans;
pub mod synthetic;
pub mod trainer;
pub mod util;
pub mod vocab;

pub use error::{Error, Result};
