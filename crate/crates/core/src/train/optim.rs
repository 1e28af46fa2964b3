use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{read_arrays, CheckpointWriter};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

const OPTIMIZER_KIND: &str = "optimizer";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
            grad_clip: Some(1.0),
        }
    }
}

/// One parameter array and its gradient for a single update.
pub struct ParamSlot<'a, T> {
    pub name: String,
    pub param: &'a mut Tensor<T>,
    pub grad: &'a Tensor<T>,
    pub lr: f64,
    pub decay: bool,
}

/// Weight decay skips normalization parameters and embedding rows.
pub fn decays(name: &str) -> bool {
    !name.starts_with("embeddings.") && !name.split('.').any(|p| p.starts_with("norm"))
}

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: u64,
    moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Applies one update to every slot. Fails before touching any parameter
    /// if a gradient is not finite.
    pub fn update(&mut self, slots: &mut [ParamSlot<'_, T>]) -> Result<()> {
        let next = self.step + 1;
        let mut sq = 0.0f64;
        for s in slots.iter() {
            if s.param.shape != s.grad.shape {
                return Err(Error::Shape(format!(
                    "gradient for '{}' has shape {:?}, parameter has {:?}",
                    s.name, s.grad.shape, s.param.shape
                )));
            }
            for &g in &s.grad.data {
                if !g.is_finite() {
                    return Err(Error::Numeric {
                        step: next,
                        param: s.name.clone(),
                    });
                }
                let g = g.f64();
                sq += g * g;
            }
        }
        let norm = sq.sqrt();
        let clip = match self.config.grad_clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step = next;
        let c = &self.config;
        let t = next as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let clip = T::of(clip);
        let eps = T::of(c.eps);
        for s in slots.iter_mut() {
            let (m, v) = self
                .moments
                .entry(s.name.clone())
                .or_insert_with(|| (s.param.zeros_like(), s.param.zeros_like()));
            let lr_m = T::of(s.lr / bc1);
            let inv_bc2 = T::of(1.0 / bc2);
            let shrink = if s.decay { T::of(1.0 - s.lr * c.weight_decay) } else { T::one() };
            for i in 0..s.param.data.len() {
                let g = s.grad.data[i] * clip;
                m.data[i] = b1 * m.data[i] + one_b1 * g;
                v.data[i] = b2 * v.data[i] + one_b2 * g * g;
                let denom = (v.data[i] * inv_bc2).sqrt() + eps;
                let p = &mut s.param.data[i];
                *p = *p * shrink - lr_m * m.data[i] / denom;
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut arrays = Vec::with_capacity(self.moments.len() * 2);
        for (name, (m, v)) in &self.moments {
            arrays.push((format!("m.{name}"), m));
            arrays.push((format!("v.{name}"), v));
        }
        let mut extra = BTreeMap::new();
        extra.insert("step".to_string(), serde_json::json!(self.step));
        CheckpointWriter {
            kind: OPTIMIZER_KIND,
            config: serde_json::to_value(&self.config)?,
            checksummed: arrays.len(),
            arrays,
            seeds: BTreeMap::new(),
            extra,
        }
        .write(dir)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut ck = read_arrays::<T>(dir, OPTIMIZER_KIND)?;
        let config: AdamWConfig = serde_json::from_value(ck.manifest.config.clone())?;
        let step: u64 = ck.extra("step")?;
        let names: Vec<String> = ck
            .arrays
            .keys()
            .filter_map(|k| k.strip_prefix("m.").map(str::to_string))
            .collect();
        let mut moments = BTreeMap::new();
        for n in names {
            let m = ck.take(&format!("m.{n}"))?;
            let v = ck.take(&format!("v.{n}"))?;
            moments.insert(n, (m, v));
        }
        Ok(AdamW { config, step, moments })
    }
}
