use crate::engine::graph::ParamRef;
use crate::error::{bail, Result};
use crate::tensor::{Element, Tensor};

/// Adam with bias correction. Moment buffers are matched to parameters by
/// position in the slice passed to [`Adam::new`].
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(params: &[ParamRef<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(&p.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &[ParamRef<T>], lr: f64) -> Result<()> {
        if params.len() != self.first.len() {
            bail!(
                InvalidArgument,
                "optimizer tracks {} parameters, got {}",
                self.first.len(),
                params.len()
            );
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for ((p, m), v) in params.iter().zip(&mut self.first).zip(&mut self.second) {
            let g = p.grad();
            if g.shape() != m.shape() {
                bail!(Shape, "parameter {} changed shape", p.name());
            }
            p.update(|w| {
                let w = w.data_mut();
                let (m, v) = (m.data_mut(), v.data_mut());
                for i in 0..w.len() {
                    let gi = g.data()[i].as_f64();
                    let mi = b1 * m[i].as_f64() + (1.0 - b1) * gi;
                    let vi = b2 * v[i].as_f64() + (1.0 - b2) * gi * gi;
                    m[i] = T::of(mi);
                    v[i] = T::of(vi);
                    let delta = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                    w[i] = T::of(w[i].as_f64() - delta);
                }
            });
        }
        Ok(())
    }
}
