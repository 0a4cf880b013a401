use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::Gradients;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Upper bound on the number of trainable scalars.
pub const PARAM_BUDGET: usize = 12_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    /// `softplus(x - shift)` with the shift chosen so that `x = 1` maps to 1.
    ShiftedSoftplus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
}

/// Architecture of the atmospheric-component estimator. Every layer is a
/// stride-1 3x3 convolution with bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
    /// Multiplier on the He standard deviation of the last layer's weights.
    #[serde(default = "default_final_gain")]
    pub final_gain: f64,
}

fn default_final_gain() -> f64 {
    0.1
}

impl Default for NetConfig {
    /// Six layers, 3 -> 16 -> 16 -> 16 -> 16 -> 16 -> 3, ReLU between and a
    /// shifted softplus on the output. 10,163 parameters.
    fn default() -> Self {
        let widths = [3, 16, 16, 16, 16, 16, 3];
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, pair)| LayerSpec {
                in_channels: pair[0],
                out_channels: pair[1],
                activation: if i == last {
                    Activation::ShiftedSoftplus
                } else {
                    Activation::Relu
                },
            })
            .collect();
        Self {
            layers,
            seed: 0,
            final_gain: default_final_gain(),
        }
    }
}

impl NetConfig {
    /// A single linear 3 -> 3 layer; handy for exact gradient checks.
    pub fn linear() -> Self {
        Self {
            layers: vec![LayerSpec {
                in_channels: 3,
                out_channels: 3,
                activation: Activation::Identity,
            }],
            seed: 0,
            final_gain: 1.0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Sum of `9 * in * out + out` over layers.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| 9 * l.in_channels * l.out_channels + l.out_channels)
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .layers
            .first()
            .ok_or_else(|| Error::Config("network needs at least one layer".into()))?;
        if first.in_channels != 3 {
            return Err(Error::Config(format!(
                "first layer must take 3 channels, got {}",
                first.in_channels
            )));
        }
        if self.layers.last().map(|l| l.out_channels) != Some(3) {
            return Err(Error::Config("last layer must emit 3 channels".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(Error::Config(format!(
                    "layer emits {} channels but the next expects {}",
                    pair[0].out_channels, pair[1].in_channels
                )));
            }
        }
        if self.layers.iter().any(|l| l.out_channels == 0) {
            return Err(Error::Config("layers must have at least one output channel".into()));
        }
        let count = self.param_count();
        if count > PARAM_BUDGET {
            return Err(Error::ParamBudget {
                count,
                limit: PARAM_BUDGET,
            });
        }
        Ok(())
    }
}

/// Named parameter tensors with same-shaped gradient slots, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.grads.push(Tensor::zeros(value.shape().to_vec()));
        self.values.push(value);
        self.names.push(name.into());
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn value(&self, index: usize) -> &Tensor<T> {
        &self.values[index]
    }

    pub fn value_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.values[index]
    }

    pub fn grad(&self, index: usize) -> &Tensor<T> {
        &self.grads[index]
    }

    pub fn grad_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.grads[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Exact number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v = T::ZERO);
        }
    }

    /// `grad += scale * g` for every parameter reached by `grads`.
    pub fn accumulate(&mut self, grads: &Gradients<T>, scale: f64) {
        for (index, g) in grads.param_grads() {
            let s = T::from_f64(scale);
            for (slot, &v) in self.grads[index].data_mut().iter_mut().zip(g) {
                *slot += s * v;
            }
        }
    }

    /// All parameter values concatenated in store order.
    pub fn flat_values(&self) -> Vec<T> {
        self.values.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn grads_all_zero(&self) -> bool {
        self.grads
            .iter()
            .all(|g| g.data().iter().all(|&v| v == T::ZERO))
    }

    /// Converts element type, e.g. for double-precision checks.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let conv = |t: &Tensor<T>| {
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| U::from_f64(v.to_f64())).collect())
                .expect("same shape")
        };
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(conv).collect(),
            grads: self.grads.iter().map(conv).collect(),
        }
    }
}

/// Exact sum of element counts.
pub fn count_params<T: Real>(params: &ParamStore<T>) -> usize {
    params.count()
}

/// He-normal weights scaled by `sqrt(2 / fan_in)`, the last layer further
/// scaled by `final_gain`; zero biases except a last-layer bias of 1 so the
/// untrained network emits `h` close to 1.
pub fn init_params<T: Real>(config: &NetConfig, seed: u64) -> Result<ParamStore<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let last = config.layers.len() - 1;
    for (i, layer) in config.layers.iter().enumerate() {
        let fan_in = (9 * layer.in_channels) as f64;
        let mut std = (2.0 / fan_in).sqrt();
        if i == last {
            std *= config.final_gain;
        }
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let n = 9 * layer.in_channels * layer.out_channels;
        let weights: Vec<T> = (0..n).map(|_| T::from_f64(normal.sample(&mut rng))).collect();
        store.push(
            format!("conv{i}.weight"),
            Tensor::new(vec![layer.out_channels, layer.in_channels, 3, 3], weights)?,
        );
        let bias = if i == last { T::ONE } else { T::ZERO };
        store.push(
            format!("conv{i}.bias"),
            Tensor::filled(vec![layer.out_channels], bias),
        );
    }
    Ok(store)
}
