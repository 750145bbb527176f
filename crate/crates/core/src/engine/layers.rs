//! Parameterised layers and the store that owns their parameters.

use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::{Conv2dSpec, Conv3dSpec};
use super::graph::{BnStats, Graph, Mode, ParamRef, Parameter, Var};
use crate::error::{bail, Result};
use crate::tensor::{Element, Tensor};

pub const LEAKY_SLOPE: f64 = 0.1;

/// Kaiming-uniform bound for a LeakyReLU(0.1) network.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
    gain * (3.0 / fan_in as f64).sqrt()
}

pub type SharedStats<T> = Arc<Mutex<BnStats<T>>>;

/// Owns every parameter and batch-norm buffer of a model in creation order,
/// which is also checkpoint order.
pub struct ParamStore<T> {
    params: Vec<ParamRef<T>>,
    buffers: Vec<(String, SharedStats<T>)>,
    rng: ChaCha8Rng,
}

impl<T: Element> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            buffers: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn params(&self) -> &[ParamRef<T>] {
        &self.params
    }

    pub fn buffers(&self) -> &[(String, SharedStats<T>)] {
        &self.buffers
    }

    pub fn find(&self, name: &str) -> Option<&ParamRef<T>> {
        self.params.iter().find(|p| p.name() == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.read(Tensor::len)).sum()
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamRef<T>> {
        let name = name.into();
        if self.find(&name).is_some() || self.buffers.iter().any(|(n, _)| *n == name) {
            bail!(Config, "duplicate parameter name {name}");
        }
        let p = Parameter::new(name, value);
        self.params.push(Arc::clone(&p));
        Ok(p)
    }

    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor<T> {
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..=bound)))
    }

    pub fn conv2d(&mut self, name: &str, spec: Conv2dSpec, bias: bool) -> Result<Conv2d<T>> {
        spec.validate()?;
        let w = self.uniform(&spec.weight_shape(), kaiming_bound(spec.fan_in()));
        let weight = self.register(format!("{name}.weight"), w)?;
        let bias = if bias {
            Some(self.register(format!("{name}.bias"), Tensor::zeros(&[spec.out_channels]))?)
        } else {
            None
        };
        Ok(Conv2d { spec, weight, bias })
    }

    pub fn conv3d(&mut self, name: &str, spec: Conv3dSpec, bias: bool) -> Result<Conv3d<T>> {
        spec.validate()?;
        let w = self.uniform(&spec.weight_shape(), kaiming_bound(spec.fan_in()));
        let weight = self.register(format!("{name}.weight"), w)?;
        let bias = if bias {
            Some(self.register(format!("{name}.bias"), Tensor::zeros(&[spec.out_channels]))?)
        } else {
            None
        };
        Ok(Conv3d { spec, weight, bias })
    }

    pub fn batch_norm(&mut self, name: &str, channels: usize) -> Result<BatchNorm<T>> {
        let gamma = self.register(format!("{name}.gamma"), Tensor::ones(&[channels]))?;
        let beta = self.register(format!("{name}.beta"), Tensor::zeros(&[channels]))?;
        let stats = Arc::new(Mutex::new(BnStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::ones(&[channels]),
        }));
        self.buffers.push((name.to_string(), Arc::clone(&stats)));
        Ok(BatchNorm { gamma, beta, stats })
    }
}

pub struct Conv2d<T> {
    pub spec: Conv2dSpec,
    pub weight: ParamRef<T>,
    pub bias: Option<ParamRef<T>>,
}

impl<T: Element> Conv2d<T> {
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(&self.weight);
        let b = self.bias.as_ref().map(|b| g.param(b));
        g.conv2d(x, w, b, &self.spec)
    }
}

pub struct Conv3d<T> {
    pub spec: Conv3dSpec,
    pub weight: ParamRef<T>,
    pub bias: Option<ParamRef<T>>,
}

impl<T: Element> Conv3d<T> {
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(&self.weight);
        let b = self.bias.as_ref().map(|b| g.param(b));
        g.conv3d(x, w, b, &self.spec)
    }
}

pub struct BatchNorm<T> {
    pub gamma: ParamRef<T>,
    pub beta: ParamRef<T>,
    pub stats: SharedStats<T>,
}

impl<T: Element> BatchNorm<T> {
    pub fn forward(&self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        let gamma = g.param(&self.gamma);
        let beta = g.param(&self.beta);
        g.batch_norm(x, gamma, beta, &self.stats, mode)
    }
}
