//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass in execution
//! order, so the tape is already topologically sorted and `backward` is a
//! single reverse sweep. Trainable state lives in [`Parameter`]s shared via
//! `Arc`; a graph snapshots their values when they enter the tape and
//! accumulates gradients into them on `backward`. Gradients are never reset
//! implicitly.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use super::conv::{self, Conv2dSpec, Conv3dSpec};
use super::shuffle::{self, Axis};
use crate::error::{bail, Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug)]
pub struct Parameter<T> {
    name: String,
    value: RwLock<Tensor<T>>,
    grad: Mutex<Tensor<T>>,
}

pub type ParamRef<T> = Arc<Parameter<T>>;

fn lock<G>(m: &Mutex<G>) -> MutexGuard<'_, G> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

impl<T: Element> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> ParamRef<T> {
        let grad = Tensor::zeros(value.shape());
        Arc::new(Self {
            name: name.into(),
            value: RwLock::new(value),
            grad: Mutex::new(grad),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> Vec<usize> {
        self.read(|t| t.shape().to_vec())
    }

    pub fn value(&self) -> Tensor<T> {
        self.read(Tensor::clone)
    }

    pub fn read<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.value.read().unwrap_or_else(|p| p.into_inner()))
    }

    pub fn update(&self, f: impl FnOnce(&mut Tensor<T>)) {
        f(&mut self.value.write().unwrap_or_else(|p| p.into_inner()))
    }

    pub fn set_value(&self, value: Tensor<T>) -> Result<()> {
        let mut guard = self.value.write().unwrap_or_else(|p| p.into_inner());
        if guard.shape() != value.shape() {
            bail!(
                Shape,
                "parameter {}: {:?} cannot take {:?}",
                self.name,
                guard.shape(),
                value.shape()
            );
        }
        *guard = value;
        Ok(())
    }

    pub fn grad(&self) -> Tensor<T> {
        lock(&self.grad).clone()
    }

    pub fn zero_grad(&self) {
        lock(&self.grad).fill(T::zero());
    }

    pub fn accumulate_grad(&self, g: &Tensor<T>) -> Result<()> {
        let mut grad = lock(&self.grad);
        if grad.shape() != g.shape() {
            bail!(Shape, "gradient {:?} for parameter {} of shape {:?}", g.shape(), self.name, grad.shape());
        }
        grad.add_assign(g);
        Ok(())
    }
}

/// Running mean/variance of a batch-norm layer.
#[derive(Debug)]
pub struct BnStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op<T> {
    Constant,
    Input,
    Param(ParamRef<T>),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: Conv2dSpec,
    },
    Conv3d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: Conv3dSpec,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        x_hat: Tensor<T>,
        inv_std: Vec<T>,
        mode: Mode,
    },
    PixelShuffle2d {
        x: Var,
        r: usize,
    },
    PixelShuffle1d {
        x: Var,
        r: usize,
        axis: Axis,
    },
    MacpiToSai {
        x: Var,
        a: usize,
    },
    SaiToMacpi {
        x: Var,
        a: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Reshape {
        x: Var,
    },
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Flip {
        x: Var,
        axes: Vec<usize>,
    },
    L1 {
        pred: Var,
        target: Var,
    },
    Sum {
        x: Var,
    },
    Regress {
        logits: Var,
        levels: Vec<T>,
        probs: Tensor<T>,
    },
    Opaque {
        label: String,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<usize, Var>,
}

/// Gradients of one `backward` call for every node that received one.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Input | Op::Param(_) => true,
            Op::Constant => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, &[])
    }

    /// Value whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, &[])
    }

    /// Snapshot of a parameter; repeated calls for the same parameter return
    /// the same node.
    pub fn param(&mut self, p: &ParamRef<T>) -> Var {
        let key = Arc::as_ptr(p) as usize;
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.push(p.value(), Op::Param(Arc::clone(p)), &[]);
        self.params.insert(key, v);
        v
    }

    /// Records a value computed outside the differentiable op set. Any
    /// attempt to back-propagate through it fails.
    pub fn opaque(&mut self, label: impl Into<String>, inputs: &[Var], value: Tensor<T>) -> Var {
        self.push(
            value,
            Op::Opaque {
                label: label.into(),
            },
            inputs,
        )
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &Conv2dSpec) -> Result<Var> {
        let y = conv::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            spec,
        )?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(y, Op::Conv2d { x, w, b, spec: *spec }, &inputs))
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &Conv3dSpec) -> Result<Var> {
        let y = conv::conv3d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            spec,
        )?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(y, Op::Conv3d { x, w, b, spec: *spec }, &inputs))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let slope = T::of(slope);
        let y = self
            .value(x)
            .map(|v| if v >= T::zero() { v } else { slope * v });
        self.push(y, Op::LeakyRelu { x, slope }, &[x])
    }

    /// Per-channel normalisation of `[N, C, ...]`. Train mode uses batch
    /// statistics and updates `stats`; eval mode reads `stats`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &Mutex<BnStats<T>>,
        mode: Mode,
    ) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if shape.len() < 2 {
            bail!(Shape, "batch_norm needs [N, C, ...], got {shape:?}");
        }
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            bail!(Shape, "batch_norm affine parameters must be [{c}]");
        }
        let m = n * inner;
        let eps = T::of(BN_EPS);
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let vals = (0..n).flat_map(|b| {
                        let o = (b * c + ch) * inner;
                        xv.data()[o..o + inner].iter().copied()
                    });
                    let mu = vals.clone().sum::<T>() / T::of(m as f64);
                    let sq = vals.map(|v| (v - mu) * (v - mu)).sum::<T>();
                    mean[ch] = mu;
                    var[ch] = sq / T::of(m as f64);
                }
                let mut st = lock(stats);
                let mom = T::of(BN_MOMENTUM);
                let unbias = if m > 1 {
                    T::of(m as f64 / (m - 1) as f64)
                } else {
                    T::one()
                };
                for ch in 0..c {
                    let rm = &mut st.mean.data_mut()[ch];
                    *rm = (T::one() - mom) * *rm + mom * mean[ch];
                    let rv = &mut st.var.data_mut()[ch];
                    *rv = (T::one() - mom) * *rv + mom * var[ch] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => {
                let st = lock(stats);
                (st.mean.data().to_vec(), st.var.data().to_vec())
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut x_hat = xv.clone();
        let mut y = xv.clone();
        for b in 0..n {
            for ch in 0..c {
                let o = (b * c + ch) * inner;
                for i in o..o + inner {
                    let h = (xv.data()[i] - mean[ch]) * inv_std[ch];
                    x_hat.data_mut()[i] = h;
                    y.data_mut()[i] = g[ch] * h + bt[ch];
                }
            }
        }
        Ok(self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                mode,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn pixel_shuffle_2d(&mut self, x: Var, r: usize) -> Result<Var> {
        let y = shuffle::pixel_shuffle_2d(self.value(x), r)?;
        Ok(self.push(y, Op::PixelShuffle2d { x, r }, &[x]))
    }

    pub fn pixel_shuffle_1d(&mut self, x: Var, r: usize, axis: Axis) -> Result<Var> {
        let y = shuffle::pixel_shuffle_1d(self.value(x), r, axis)?;
        Ok(self.push(y, Op::PixelShuffle1d { x, r, axis }, &[x]))
    }

    pub fn macpi_to_sai(&mut self, x: Var, a: usize) -> Result<Var> {
        let y = shuffle::macpi_to_sai_nchw(self.value(x), a)?;
        Ok(self.push(y, Op::MacpiToSai { x, a }, &[x]))
    }

    pub fn sai_to_macpi(&mut self, x: Var, a: usize) -> Result<Var> {
        let y = shuffle::sai_to_macpi_nchw(self.value(x), a)?;
        Ok(self.push(y, Op::SaiToMacpi { x, a }, &[x]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let y = Tensor::concat(&refs, axis)?;
        Ok(self.push(
            y,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        Ok(self.push(y, Op::Add { a, b }, &[a, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape { x }, &[x]))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let y = self.value(x).permute(axes)?;
        Ok(self.push(
            y,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            &[x],
        ))
    }

    pub fn flip(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        if axes.iter().any(|&a| a >= self.value(x).ndim()) {
            bail!(InvalidArgument, "flip axes {axes:?} out of range");
        }
        let y = self.value(x).flip(axes);
        Ok(self.push(
            y,
            Op::Flip {
                x,
                axes: axes.to_vec(),
            },
            &[x],
        ))
    }

    /// Mean absolute error, as a one-element tensor.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let diff = self.value(pred).zip_map(self.value(target), |p, t| (p - t).abs())?;
        let y = Tensor::scalar(diff.mean());
        Ok(self.push(y, Op::L1 { pred, target }, &[pred, target]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum { x }, &[x])
    }

    /// Softmax-weighted mean of `levels` along axis 1 of `[N, D, H, W]` logits.
    pub fn regress_disparity(&mut self, logits: Var, levels: &[f64]) -> Result<Var> {
        let (y, probs) = regress_forward(self.value(logits), levels)?;
        Ok(self.push(
            y,
            Op::Regress {
                logits,
                levels: levels.iter().map(|&l| T::of(l)).collect(),
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse sweep from a one-element `loss`. Parameter gradients are added
    /// to whatever the parameters already hold.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            bail!(
                Graph,
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            );
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            let contributions = self.local_grads(&node.op, &node.value, &gy)?;
            for (v, g) in contributions {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
            if let Op::Param(p) = &node.op {
                p.accumulate_grad(&gy)?;
            }
            grads[idx] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn local_grads(&self, op: &Op<T>, out: &Tensor<T>, gy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let mut res = Vec::new();
        match op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::Conv2d { x, w, b, spec } => {
                let g = conv::conv2d_backward(self.value(*x), self.value(*w), gy, spec, self.wants(*x))?;
                if let Some(gx) = g.input {
                    res.push((*x, gx));
                }
                res.push((*w, g.weight));
                if let Some(b) = b {
                    res.push((*b, g.bias));
                }
            }
            Op::Conv3d { x, w, b, spec } => {
                let g = conv::conv3d_backward(self.value(*x), self.value(*w), gy, spec, self.wants(*x))?;
                if let Some(gx) = g.input {
                    res.push((*x, gx));
                }
                res.push((*w, g.weight));
                if let Some(b) = b {
                    res.push((*b, g.bias));
                }
            }
            Op::LeakyRelu { x, slope } => {
                let g = self
                    .value(*x)
                    .zip_map(gy, |v, g| if v >= T::zero() { g } else { *slope * g })?;
                res.push((*x, g));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                mode,
            } => {
                let shape = x_hat.shape();
                let (n, c) = (shape[0], shape[1]);
                let inner: usize = shape[2..].iter().product();
                let m = T::of((n * inner) as f64);
                let gam = self.value(*gamma).data();
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xh = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let o = (b * c + ch) * inner;
                        for i in o..o + inner {
                            sum_dy[ch] += gy.data()[i];
                            sum_dy_xh[ch] += gy.data()[i] * x_hat.data()[i];
                        }
                    }
                }
                let mut gx = gy.clone();
                for b in 0..n {
                    for ch in 0..c {
                        let o = (b * c + ch) * inner;
                        let k = gam[ch] * inv_std[ch];
                        for i in o..o + inner {
                            let dy = gy.data()[i];
                            gx.data_mut()[i] = match mode {
                                Mode::Train => {
                                    k * (dy - sum_dy[ch] / m - x_hat.data()[i] * sum_dy_xh[ch] / m)
                                }
                                Mode::Eval => k * dy,
                            };
                        }
                    }
                }
                res.push((*x, gx));
                res.push((*gamma, Tensor::from_parts(vec![c], sum_dy_xh)));
                res.push((*beta, Tensor::from_parts(vec![c], sum_dy)));
            }
            Op::PixelShuffle2d { x, r } => {
                res.push((*x, shuffle::pixel_unshuffle_2d(gy, *r)?));
            }
            Op::PixelShuffle1d { x, r, axis } => {
                res.push((*x, shuffle::pixel_unshuffle_1d(gy, *r, *axis)?));
            }
            Op::MacpiToSai { x, a } => {
                res.push((*x, shuffle::sai_to_macpi_nchw(gy, *a)?));
            }
            Op::SaiToMacpi { x, a } => {
                res.push((*x, shuffle::macpi_to_sai_nchw(gy, *a)?));
            }
            Op::Concat { parts, axis } => {
                let sizes: Vec<usize> = parts.iter().map(|&p| self.shape(p)[*axis]).collect();
                for (p, g) in parts.iter().zip(gy.split(*axis, &sizes)?) {
                    res.push((*p, g));
                }
            }
            Op::Add { a, b } => {
                res.push((*a, gy.clone()));
                res.push((*b, gy.clone()));
            }
            Op::Reshape { x } => {
                res.push((*x, gy.clone().reshape(self.shape(*x))?));
            }
            Op::Permute { x, axes } => {
                let mut inv = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inv[a] = i;
                }
                res.push((*x, gy.permute(&inv)?));
            }
            Op::Flip { x, axes } => {
                res.push((*x, gy.flip(axes)));
            }
            Op::L1 { pred, target } => {
                let scale = gy.data()[0] / T::of(self.value(*pred).len() as f64);
                let sign = self.value(*pred).zip_map(self.value(*target), |p, t| {
                    if p > t {
                        scale
                    } else if p < t {
                        -scale
                    } else {
                        T::zero()
                    }
                })?;
                res.push((*target, sign.map(|v| -v)));
                res.push((*pred, sign));
            }
            Op::Sum { x } => {
                res.push((*x, Tensor::full(self.shape(*x), gy.data()[0])));
            }
            Op::Regress {
                logits,
                levels,
                probs,
            } => {
                let shape = probs.shape();
                let (n, d, inner) = (shape[0], shape[1], shape[2] * shape[3]);
                let mut g = Tensor::zeros(shape);
                for b in 0..n {
                    for i in 0..inner {
                        let est = out.data()[b * inner + i];
                        let up = gy.data()[b * inner + i];
                        for (k, &lvl) in levels.iter().enumerate() {
                            let o = (b * d + k) * inner + i;
                            g.data_mut()[o] = up * probs.data()[o] * (lvl - est);
                        }
                    }
                }
                res.push((*logits, g));
            }
            Op::Opaque { label } => {
                return Err(Error::Graph(format!(
                    "cannot differentiate through unsupported op `{label}`"
                )));
            }
        }
        Ok(res)
    }
}

/// Returns the `[N, H, W]` estimate and the softmax probabilities.
pub(crate) fn regress_forward<T: Element>(
    logits: &Tensor<T>,
    levels: &[f64],
) -> Result<(Tensor<T>, Tensor<T>)> {
    let &[n, d, h, w] = logits.shape() else {
        bail!(Shape, "disparity logits must be [N, D, H, W], got {:?}", logits.shape());
    };
    if d != levels.len() {
        bail!(Shape, "{d} logit planes for {} disparity levels", levels.len());
    }
    let inner = h * w;
    let mut probs = logits.clone();
    let mut est = Tensor::zeros(&[n, h, w]);
    for b in 0..n {
        for i in 0..inner {
            let at = |k: usize| (b * d + k) * inner + i;
            let max = (0..d)
                .map(|k| logits.data()[at(k)])
                .fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for k in 0..d {
                let e = (logits.data()[at(k)] - max).exp();
                probs.data_mut()[at(k)] = e;
                z += e;
            }
            let mut acc = T::zero();
            for (k, &lvl) in levels.iter().enumerate() {
                let p = probs.data()[at(k)] / z;
                probs.data_mut()[at(k)] = p;
                acc += p * T::of(lvl);
            }
            est.data_mut()[b * inner + i] = acc;
        }
    }
    Ok((est, probs))
}
