//! Adam with bias correction, optional global-norm gradient clipping, and a
//! linear-warmup-then-constant learning-rate schedule. Optimizer state can be
//! checkpointed so a resumed run continues bit-for-bit.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::store::{load_store, save_store, Layout, TensorStore};
use crate::model::Scalar;
use crate::util::{read_json, write_json};

/// lr · min(1, step/warmup); constant afterwards. Steps are 0-based, so the
/// very first step of a warmed-up run applies no update.
pub fn lr_at(step: usize, lr: f64, warmup: usize) -> f64 {
    if warmup == 0 {
        return lr;
    }
    lr * (step as f64 / warmup as f64).min(1.0)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Scale gradients down when their global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug)]
pub struct Adam<F: Scalar> {
    pub hyper: AdamHyper,
    m: TensorStore<F>,
    v: TensorStore<F>,
    step: usize,
}

impl<F: Scalar> Adam<F> {
    pub fn new(layout: Arc<Layout>, hyper: AdamHyper) -> Self {
        Self {
            hyper,
            m: TensorStore::zeros(layout.clone()),
            v: TensorStore::zeros(layout),
            step: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Applies one update in place. Returns the pre-clip global gradient
    /// norm. A parameter whose gradient is exactly zero never moves.
    pub fn step(&mut self, params: &mut TensorStore<F>, grads: &TensorStore<F>, lr: f64) -> f64 {
        let norm_sq: f64 = grads.data().iter().map(|&g| g.to_f64() * g.to_f64()).sum();
        let norm = norm_sq.sqrt();
        let scale = match self.hyper.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let b1 = F::from_f64(self.hyper.beta1);
        let b2 = F::from_f64(self.hyper.beta2);
        let one_m_b1 = F::one() - b1;
        let one_m_b2 = F::one() - b2;
        let corr1 = F::from_f64(1.0 - self.hyper.beta1.powi(t));
        let corr2 = F::from_f64(1.0 - self.hyper.beta2.powi(t));
        let eps = F::from_f64(self.hyper.eps);
        let lr_f = F::from_f64(lr);
        let scale_f = F::from_f64(scale);

        let mdata = self.m.data_mut();
        let vdata = self.v.data_mut();
        for ((p, &g0), (m, v)) in params
            .data_mut()
            .iter_mut()
            .zip(grads.data().iter())
            .zip(mdata.iter_mut().zip(vdata.iter_mut()))
        {
            let g = g0 * scale_f;
            *m = b1 * *m + one_m_b1 * g;
            *v = b2 * *v + one_m_b2 * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p = *p - lr_f * m_hat / (v_hat.sqrt() + eps);
        }
        norm
    }
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    step: usize,
    hyper: AdamHyper,
}

impl Adam<f32> {
    /// Writes step counter, hyperparameters, and both moment buffers.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(
            &dir.join("optimizer.json"),
            &OptimizerMeta {
                step: self.step,
                hyper: self.hyper,
            },
        )?;
        save_store(&self.m, &dir.join("moments1.json"), &dir.join("moments1.bin"))?;
        save_store(&self.v, &dir.join("moments2.json"), &dir.join("moments2.bin"))?;
        Ok(())
    }

    /// Restores optimizer state; the moment layouts must match `layout`.
    pub fn load(dir: &Path, layout: &Layout) -> Result<Self> {
        let meta: OptimizerMeta = read_json(&dir.join("optimizer.json"))?;
        let m = load_store(&dir.join("moments1.json"), &dir.join("moments1.bin"))?;
        let v = load_store(&dir.join("moments2.json"), &dir.join("moments2.bin"))?;
        for store in [&m, &v] {
            if !store.layout().iter().eq(layout.iter()) {
                return Err(Error::Checkpoint(
                    "optimizer moment layout does not match the model".into(),
                ));
            }
        }
        Ok(Self {
            hyper: meta.hyper,
            m,
            v,
            step: meta.step,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::store::LayoutBuilder;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn tiny_layout() -> Arc<Layout> {
        let mut b = LayoutBuilder::default();
        b.push("a", &[4]);
        b.push("b", &[2, 3]);
        Arc::new(b.build())
    }

    #[test]
    fn warmup_schedule_examples() {
        assert_eq!(lr_at(0, 3e-4, 200), 0.0);
        assert!((lr_at(100, 3e-4, 200) - 1.5e-4).abs() < 1e-18);
        assert_eq!(lr_at(200, 3e-4, 200), 3e-4);
        assert_eq!(lr_at(5000, 3e-4, 200), 3e-4);
        assert_eq!(lr_at(0, 1e-5, 0), 1e-5);
    }

    // Independent scalar Adam, written from the update equations, as the
    // reference for the vectorized implementation.
    fn adam_scalar(x0: f64, grad: impl Fn(f64) -> f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        for t in 1..=steps {
            let g = grad(x);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        x
    }

    #[test]
    fn matches_scalar_reference_on_quadratic() {
        let layout = tiny_layout();
        let mut params = TensorStore::<f64>::zeros(layout.clone());
        params.data_mut()[0] = 5.0;
        let mut opt = Adam::new(
            layout.clone(),
            AdamHyper {
                clip_norm: None,
                ..AdamHyper::default()
            },
        );
        let steps = 10;
        for _ in 0..steps {
            let mut grads = TensorStore::<f64>::zeros(layout.clone());
            grads.data_mut()[0] = 2.0 * (params.data()[0] - 3.0);
            opt.step(&mut params, &grads, 0.05);
        }
        let expect = adam_scalar(5.0, |x| 2.0 * (x - 3.0), 0.05, steps);
        assert!((params.data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_never_moves_a_parameter() {
        let layout = tiny_layout();
        let mut params = TensorStore::<f64>::zeros(layout.clone());
        for (i, p) in params.data_mut().iter_mut().enumerate() {
            *p = i as f64 * 0.1 + 1.0;
        }
        let frozen = params.data()[3];
        let mut opt = Adam::new(layout.clone(), AdamHyper::default());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for step in 0..25 {
            let mut grads = TensorStore::<f64>::zeros(layout.clone());
            for (i, g) in grads.data_mut().iter_mut().enumerate() {
                *g = if i == 3 { 0.0 } else { rng.random::<f64>() - 0.5 };
            }
            opt.step(&mut params, &grads, lr_at(step, 1e-3, 5));
        }
        assert_eq!(params.data()[3].to_bits(), frozen.to_bits());
        assert_ne!(params.data()[0], 1.0);
    }

    #[test]
    fn clipping_equals_prescaled_gradients() {
        let layout = tiny_layout();
        let grads_raw: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let norm: f64 = grads_raw.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm > 1.0);

        let mut p1 = TensorStore::<f64>::zeros(layout.clone());
        let mut opt1 = Adam::new(layout.clone(), AdamHyper::default());
        let mut g1 = TensorStore::<f64>::zeros(layout.clone());
        g1.data_mut().copy_from_slice(&grads_raw);
        let reported = opt1.step(&mut p1, &g1, 1e-3);
        assert!((reported - norm).abs() < 1e-12);

        let mut p2 = TensorStore::<f64>::zeros(layout.clone());
        let mut opt2 = Adam::new(
            layout.clone(),
            AdamHyper {
                clip_norm: None,
                ..AdamHyper::default()
            },
        );
        let mut g2 = TensorStore::<f64>::zeros(layout.clone());
        for (dst, g) in g2.data_mut().iter_mut().zip(&grads_raw) {
            *dst = g / norm;
        }
        opt2.step(&mut p2, &g2, 1e-3);
        for (a, b) in p1.data().iter().zip(p2.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    // With bias correction the first update has magnitude ≈ lr whatever the
    // gradient scale.
    #[test]
    fn first_step_size_is_learning_rate() {
        let layout = tiny_layout();
        let mut params = TensorStore::<f64>::zeros(layout.clone());
        let mut opt = Adam::new(layout.clone(), AdamHyper::default());
        let mut grads = TensorStore::<f64>::zeros(layout.clone());
        grads.data_mut()[2] = 1e-3;
        opt.step(&mut params, &grads, 0.01);
        let delta = params.data()[2].abs();
        assert!((delta - 0.01).abs() < 0.01 * 1e-3, "delta {delta}");
    }

    #[test]
    fn zero_lr_advances_state_but_not_params() {
        let layout = tiny_layout();
        let mut params = TensorStore::<f64>::zeros(layout.clone());
        params.fill(1.0);
        let mut opt = Adam::new(layout.clone(), AdamHyper::default());
        let mut grads = TensorStore::<f64>::zeros(layout.clone());
        grads.fill(0.5);
        opt.step(&mut params, &grads, 0.0);
        assert!(params.data().iter().all(|&p| p == 1.0));
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn save_load_resume_is_bit_exact() {
        let layout = tiny_layout();
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let grad_at = |rng: &mut ChaCha8Rng, layout: &Arc<Layout>| {
            let mut g = TensorStore::<f32>::zeros(layout.clone());
            for v in g.data_mut() {
                *v = rng.random::<f32>() - 0.5;
            }
            g
        };

        let mut p_full = TensorStore::<f32>::zeros(layout.clone());
        p_full.fill(0.25);
        let mut opt_full = Adam::new(layout.clone(), AdamHyper::default());
        let mut grad_seq = Vec::new();
        for _ in 0..5 {
            grad_seq.push(grad_at(&mut rng, &layout));
        }
        for g in &grad_seq[..3] {
            opt_full.step(&mut p_full, g, 2e-3);
        }
        opt_full.save(dir.path()).unwrap();
        let mut p_resumed = p_full.clone();
        let mut opt_resumed = Adam::<f32>::load(dir.path(), &layout).unwrap();
        assert_eq!(opt_resumed.step_count(), 3);

        for g in &grad_seq[3..] {
            opt_full.step(&mut p_full, g, 2e-3);
            opt_resumed.step(&mut p_resumed, g, 2e-3);
        }
        for (a, b) in p_full.data().iter().zip(p_resumed.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn load_rejects_mismatched_layout() {
        let dir = tempfile::tempdir().unwrap();
        let opt = Adam::<f32>::new(tiny_layout(), AdamHyper::default());
        opt.save(dir.path()).unwrap();
        let mut other = LayoutBuilder::default();
        other.push("different", &[7]);
        assert!(matches!(
            Adam::<f32>::load(dir.path(), &other.build()).unwrap_err(),
            Error::Checkpoint(_)
        ));
    }
}
