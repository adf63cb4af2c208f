//! Transformer encoder with manual backprop, its heads, and checkpoint i/o.
//!
//! Parameters live in a single flat buffer described by a named layout
//! (see [`store`]), which makes Adam updates, gradient checking, and
//! bit-exact checkpointing straightforward. All math is generic over f32
//! (training) and f64 (gradient checks).

pub mod encoder;
pub mod heads;
pub mod store;

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::derive_seed;
use store::{Layout, LayoutBuilder, TensorStore};

/// Float element usable for model math: everything ndarray needs plus
/// explicit f64 conversion, so RNG streams can always draw f64 and both
/// dtypes see identical sampled values.
pub trait Scalar: ndarray::NdFloat {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// Small configuration that trains from scratch on one CPU.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            layers: 2,
            hidden: 64,
            heads: 4,
            ffn: 256,
            max_len: 256,
            vocab_size,
            dropout: 0.1,
        }
    }

    /// Reference configuration mirroring the usual base-encoder shape.
    pub fn reference(vocab_size: usize) -> Self {
        ModelConfig {
            layers: 12,
            hidden: 768,
            heads: 12,
            ffn: 3072,
            max_len: 256,
            vocab_size,
            dropout: 0.1,
        }
    }

    /// Tiny configuration used by gradient checks.
    pub fn grad_check(vocab_size: usize) -> Self {
        ModelConfig {
            layers: 2,
            hidden: 16,
            heads: 4,
            ffn: 32,
            max_len: 64,
            vocab_size,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.layers == 0 || self.ffn == 0 || self.max_len == 0 {
            return Err(Error::Config("zero-sized model dimension".into()));
        }
        if self.vocab_size <= crate::vocab::NUM_SPECIALS {
            return Err(Error::Config(format!(
                "vocab size {} leaves no corpus tokens",
                self.vocab_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// Builds the parameter layout for a configuration. `extra` appends
/// task-specific tensors (e.g. a tagging head) after the base ones.
pub fn build_layout(config: &ModelConfig, extra: &[(String, Vec<usize>)]) -> Layout {
    let d = config.hidden;
    let mut b = LayoutBuilder::new();
    b.push("embed.token", &[config.vocab_size, d]);
    b.push("embed.pos", &[config.max_len, d]);
    for i in 0..config.layers {
        for t in ["ln1.gain", "ln1.bias"] {
            b.push(&format!("layer{i}.{t}"), &[d]);
        }
        for t in ["wq", "wk", "wv", "wo"] {
            b.push(&format!("layer{i}.attn.{t}"), &[d, d]);
        }
        for t in ["bq", "bk", "bv", "bo"] {
            b.push(&format!("layer{i}.attn.{t}"), &[d]);
        }
        for t in ["ln2.gain", "ln2.bias"] {
            b.push(&format!("layer{i}.{t}"), &[d]);
        }
        b.push(&format!("layer{i}.ffn.w1"), &[d, config.ffn]);
        b.push(&format!("layer{i}.ffn.b1"), &[config.ffn]);
        b.push(&format!("layer{i}.ffn.w2"), &[config.ffn, d]);
        b.push(&format!("layer{i}.ffn.b2"), &[d]);
    }
    b.push("final_ln.gain", &[d]);
    b.push("final_ln.bias", &[d]);
    b.push("span.w_start", &[d, d]);
    b.push("span.w_end", &[d, d]);
    b.push("mlm.bias", &[config.vocab_size]);
    for (name, shape) in extra {
        b.push(name, shape);
    }
    b.build()
}

/// Fills a parameter store deterministically: layer-norm gains are 1, every
/// bias is 0, and all other tensors draw from N(0, 0.02²) in layout order.
pub fn init_params<F: Scalar>(store: &mut TensorStore<F>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x494e4954)); // "INIT"
    let specs: Vec<(String, usize, usize)> = store
        .layout()
        .iter()
        .map(|s| (s.name.clone(), s.offset, s.len()))
        .collect();
    for (name, offset, len) in specs {
        let kind = name.rsplit('.').next().unwrap_or("");
        let data = &mut store.data_mut()[offset..offset + len];
        if kind == "gain" {
            data.fill(F::one());
        } else if kind.starts_with('b') {
            data.fill(F::zero());
        } else {
            for v in data.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = F::from_f64(z * 0.02);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model<F: Scalar> {
    pub config: ModelConfig,
    pub params: TensorStore<F>,
}

impl<F: Scalar> Model<F> {
    /// Fresh model with seeded initialization.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = std::sync::Arc::new(build_layout(&config, &[]));
        let mut params = TensorStore::zeros(layout);
        init_params(&mut params, seed);
        Ok(Model { config, params })
    }

    /// A zeroed store with the same layout, for gradients.
    pub fn grad_store(&self) -> TensorStore<F> {
        TensorStore::zeros(self.params.layout_arc())
    }

    /// A copy whose layout gains `extra` tensors. Shared tensors keep their
    /// current values; the new ones are seeded like a fresh initialization.
    pub fn with_extras(&self, extra: &[(String, Vec<usize>)], seed: u64) -> Model<F> {
        let layout = std::sync::Arc::new(build_layout(&self.config, extra));
        let mut params = TensorStore::zeros(layout);
        init_params(&mut params, seed);
        params.copy_common_from(&self.params);
        Model {
            config: self.config.clone(),
            params,
        }
    }
}

impl Model<f32> {
    /// Writes `checkpoint.json`, `checkpoint.bin`, and `config.json` into
    /// `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        store::save_store(
            &self.params,
            &dir.join("checkpoint.json"),
            &dir.join("checkpoint.bin"),
        )?;
        crate::util::write_json(&dir.join("config.json"), &self.config)
    }

    /// Loads a checkpoint directory, validating that every tensor the
    /// configuration requires is present with the right shape. Extra tensors
    /// (e.g. a tagging head) are kept.
    pub fn load(dir: &Path) -> Result<Self> {
        let config: ModelConfig = crate::util::read_json(&dir.join("config.json"))?;
        config.validate()?;
        let params = store::load_store(&dir.join("checkpoint.json"), &dir.join("checkpoint.bin"))?;
        let required = build_layout(&config, &[]);
        for spec in required.iter() {
            match params.layout().spec(&spec.name) {
                Some(found) if found.shape == spec.shape => {}
                Some(found) => {
                    return Err(Error::Checkpoint(format!(
                        "tensor {} has shape {:?}, expected {:?}",
                        spec.name, found.shape, spec.shape
                    )))
                }
                None => {
                    return Err(Error::Checkpoint(format!("missing tensor {}", spec.name)))
                }
            }
        }
        Ok(Model { config, params })
    }
}
