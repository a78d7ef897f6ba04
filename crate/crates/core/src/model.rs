//! The complete conditional network: temporal aggregator feeding the FIM of the
//! separation U-Net, with all weights in one parameter store.

use avsep_autograd::{Real, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Session};
use crate::unet::{UNet, UNetConfig, UNetInputs};
use crate::visual::{AggregatorConfig, TemporalAggregator};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub unet: UNetConfig,
    pub aggregator: AggregatorConfig,
}

impl ModelConfig {
    pub fn with_base(base: usize) -> Self {
        let unet = UNetConfig::with_base(base);
        let aggregator = AggregatorConfig::new(unet.cond_dim);
        Self { unet, aggregator }
    }
}

/// A batch of conditioning inputs for `N` items: per-item `(K_i, C)` frame
/// embeddings, or already-aggregated `(C)` vectors.
#[derive(Clone, Debug)]
pub enum Condition<T> {
    Frames(Vec<Tensor<T>>),
    Vectors(Tensor<T>),
}

impl<T: Real> Condition<T> {
    pub fn len(&self) -> usize {
        match self {
            Condition::Frames(f) => f.len(),
            Condition::Vectors(v) => v.shape().first().copied().unwrap_or(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct SeparationModel<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub unet: UNet,
    pub aggregator: TemporalAggregator,
}

impl<T: Real> SeparationModel<T> {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        if config.aggregator.dim != config.unet.cond_dim {
            return Err(Error::invalid(format!(
                "aggregator width {} must equal the U-Net condition width {}",
                config.aggregator.dim, config.unet.cond_dim
            )));
        }
        let mut params = ParamStore::new();
        let unet = UNet::new(&mut params, config.unet.clone(), rng)?;
        let aggregator = TemporalAggregator::new(&mut params, "visual", config.aggregator.clone(), rng)?;
        Ok(Self {
            config,
            params,
            unet,
            aggregator,
        })
    }

    pub fn cond_dim(&self) -> usize {
        self.config.unet.cond_dim
    }

    /// Builds the `(N, C)` condition node.
    pub fn condition(&self, s: &mut Session<T>, cond: &Condition<T>) -> Result<Var> {
        match cond {
            Condition::Vectors(v) => {
                if v.rank() != 2 || v.dim(1) != self.cond_dim() {
                    return Err(Error::invalid(format!(
                        "condition vectors must be (N, {}), got {:?}",
                        self.cond_dim(),
                        v.shape()
                    )));
                }
                Ok(s.input(v.clone()))
            }
            Condition::Frames(frames) => {
                let mut pooled = Vec::with_capacity(frames.len());
                for f in frames {
                    let e = s.input(f.clone());
                    pooled.push(self.aggregator.aggregate(s, e)?);
                }
                if pooled.is_empty() {
                    return Err(Error::invalid("empty condition batch"));
                }
                Ok(s.g.concat(&pooled, 0)?)
            }
        }
    }

    /// Network prediction for `x_t, x_mix: (N, 1, H, W)`.
    pub fn forward(
        &self,
        s: &mut Session<T>,
        x_t: &Tensor<T>,
        x_mix: &Tensor<T>,
        time: &[f64],
        cond: &Condition<T>,
    ) -> Result<Var> {
        if cond.len() != x_t.shape().first().copied().unwrap_or(0) {
            return Err(Error::LengthMismatch {
                left: x_t.shape().first().copied().unwrap_or(0),
                right: cond.len(),
            });
        }
        let c = self.condition(s, cond)?;
        let inputs = UNetInputs {
            x_t: s.input(x_t.clone()),
            x_mix: s.input(x_mix.clone()),
            time: time.to_vec(),
            cond: c,
        };
        self.unet.forward(s, &inputs)
    }

    /// Inference-mode prediction as a plain tensor.
    pub fn predict(&self, x_t: &Tensor<T>, x_mix: &Tensor<T>, time: &[f64], cond: &Condition<T>) -> Result<Tensor<T>> {
        let mut s = Session::new(&self.params, false);
        let y = self.forward(&mut s, x_t, x_mix, time, cond)?;
        Ok(s.value(y).clone())
    }

    /// Aggregated condition vectors `(N, C)` without a gradient tape.
    pub fn pooled_condition(&self, cond: &Condition<T>) -> Result<Tensor<T>> {
        let mut s = Session::new(&self.params, false);
        let v = self.condition(&mut s, cond)?;
        Ok(s.value(v).clone())
    }
}
