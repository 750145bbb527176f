//! Spatial SR, angular SR and disparity networks assembled from the
//! subspace extractors.

pub mod asr;
pub mod config;
pub mod disp;
pub mod ssr;
pub mod toy;

pub use asr::{AsrBlock, DistgAsr, DistgAsrConfig};
pub use disp::{regress_disparity, DistgDisp, DistgDispConfig, SpatialResBlock};
pub use ssr::{BranchToggles, DistgSsr, DistgSsrConfig, SsrBlock};

use crate::engine::{Adam, Axis, Conv2d, Graph, Mode, ParamStore, Var, LEAKY_SLOPE};
use crate::error::{bail, Result};
use crate::kernels::{self, EvenAngular};
use crate::lightfield::{EpiOrientation, LightField};
use crate::tensor::{Element, Tensor};

/// A model whose parameters live in one [`ParamStore`] and whose forward
/// pass is recorded on a [`Graph`].
pub trait Network<T: Element> {
    fn store(&self) -> &ParamStore<T>;

    fn forward(&self, g: &mut Graph<T>, input: Var, mode: Mode) -> Result<Var>;

    /// Forward pass outside training, returning the output value.
    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let y = self.forward(&mut g, x, Mode::Eval)?;
        Ok(g.value(y).clone())
    }
}

/// One fixed batch of network inputs and targets.
#[derive(Clone, Debug)]
pub struct TrainBatch<T> {
    pub input: Tensor<T>,
    pub target: Tensor<T>,
}

/// L1 loss of the model on `batch`, recorded on `g`.
pub fn l1_objective<T: Element, N: Network<T> + ?Sized>(
    net: &N,
    g: &mut Graph<T>,
    batch: &TrainBatch<T>,
    mode: Mode,
) -> Result<Var> {
    let x = g.constant(batch.input.clone());
    let y = net.forward(g, x, mode)?;
    let t = g.constant(batch.target.clone());
    g.l1_loss(y, t)
}

/// Forward, L1, backward and an Adam update for `steps` iterations on one
/// batch. Returns the loss before each update.
pub fn train_overfit<T: Element, N: Network<T> + ?Sized>(
    net: &N,
    batch: &TrainBatch<T>,
    steps: usize,
    lr: f64,
) -> Result<Vec<f64>> {
    let params = net.store().params().to_vec();
    let mut adam = Adam::new(&params);
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        net.store().zero_grad();
        let mut g = Graph::new();
        let loss = l1_objective(net, &mut g, batch, Mode::Train)?;
        losses.push(g.value(loss).data()[0].as_f64());
        g.backward(loss)?;
        adam.step(&params, lr)?;
    }
    Ok(losses)
}

/// `[N, 1, A·H, A·W]` MacPI batch of single-channel light fields.
pub fn macpi_batch<T: Element>(lfs: &[LightField<T>]) -> Result<Tensor<T>> {
    let parts = lfs.iter().map(channel_check).collect::<Result<Vec<_>>>()?;
    let macs = parts
        .iter()
        .map(|lf| lf.to_macpi_tensor())
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&macs)
}

/// `[N, 1, U·H, V·W]` tiled-SAI batch of single-channel light fields.
pub fn sai_batch<T: Element>(lfs: &[LightField<T>]) -> Result<Tensor<T>> {
    let parts = lfs.iter().map(channel_check).collect::<Result<Vec<_>>>()?;
    Tensor::stack(&parts.iter().map(|lf| lf.to_sai_tensor()).collect::<Vec<_>>())
}

/// Splits an `[N, 1, A·H, A·W]` tiled-SAI batch back into light fields.
pub fn unbatch_sai<T: Element>(t: &Tensor<T>, ang_res: usize) -> Result<Vec<LightField<T>>> {
    if t.ndim() != 4 {
        bail!(Shape, "expected [N, C, AH, AW], got {:?}", t.shape());
    }
    (0..t.shape()[0])
        .map(|i| LightField::from_sai_tensor(&t.slice0(i), ang_res, ang_res))
        .collect()
}

fn channel_check<T: Element>(lf: &LightField<T>) -> Result<&LightField<T>> {
    if lf.channels() != 1 {
        bail!(InvalidArgument, "networks take grayscale light fields, got {} channels", lf.channels());
    }
    lf.ang_res()?;
    Ok(lf)
}

pub(crate) fn lrelu<T: Element>(g: &mut Graph<T>, x: Var) -> Var {
    g.leaky_relu(x, LEAKY_SLOPE)
}

pub(crate) fn sfe<T: Element>(
    store: &mut ParamStore<T>,
    name: &str,
    a: usize,
    cin: usize,
    cout: usize,
    bias: bool,
) -> Result<Conv2d<T>> {
    store.conv2d(name, kernels::make_sfe(a, cin, cout)?.conv, bias)
}

pub(crate) fn pointwise<T: Element>(
    store: &mut ParamStore<T>,
    name: &str,
    cin: usize,
    cout: usize,
) -> Result<Conv2d<T>> {
    store.conv2d(name, crate::engine::Conv2dSpec::new(cin, cout, [1, 1]), true)
}

/// AFE, 1×1 expansion to `A²·width` and 2D pixel shuffle back to the MacPI.
pub struct AngularBranch<T> {
    pub afe: Conv2d<T>,
    pub up: Conv2d<T>,
    ang_res: usize,
}

impl<T: Element> AngularBranch<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, a: usize, cin: usize, width: usize) -> Result<Self> {
        let afe = store.conv2d(&format!("{name}.afe"), kernels::make_afe(a, cin, width)?.conv, true)?;
        let up = pointwise(store, &format!("{name}.up"), width, a * a * width)?;
        Ok(Self { afe, up, ang_res: a })
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let y = self.afe.forward(g, x)?;
        let y = lrelu(g, y);
        let y = self.up.forward(g, y)?;
        let y = lrelu(g, y);
        g.pixel_shuffle_2d(y, self.ang_res)
    }
}

/// EFE, 1×1 expansion to `A·width` and 1D pixel shuffle along the stride
/// axis, for one EPI orientation.
struct EpiPath<T> {
    efe: Conv2d<T>,
    up: Conv2d<T>,
}

/// Horizontal and vertical EPI branches. With sharing, both orientations use
/// one set of parameters and the vertical extractor reads the horizontal
/// kernel reshaped from `1×A²` to `A²×1`.
pub struct EpiBranches<T> {
    horizontal: EpiPath<T>,
    vertical: Option<EpiPath<T>>,
    vertical_spec: crate::engine::Conv2dSpec,
    ang_res: usize,
}

impl<T: Element> EpiBranches<T> {
    pub fn new(
        store: &mut ParamStore<T>,
        name: &str,
        a: usize,
        cin: usize,
        width: usize,
        shared: bool,
    ) -> Result<Self> {
        let spec = |o| kernels::make_efe(a, o, cin, width, EvenAngular::Asymmetric);
        let hspec = spec(EpiOrientation::Horizontal)?.conv;
        let vertical_spec = spec(EpiOrientation::Vertical)?.conv;
        let path = |store: &mut ParamStore<T>, prefix: String, s| -> Result<EpiPath<T>> {
            Ok(EpiPath {
                efe: store.conv2d(&format!("{prefix}.efe"), s, true)?,
                up: pointwise(store, &format!("{prefix}.up"), width, a * width)?,
            })
        };
        let (horizontal, vertical) = if shared {
            (path(store, name.to_string(), hspec)?, None)
        } else {
            (
                path(store, format!("{name}_h"), hspec)?,
                Some(path(store, format!("{name}_v"), vertical_spec)?),
            )
        };
        Ok(Self {
            horizontal,
            vertical,
            vertical_spec,
            ang_res: a,
        })
    }

    pub fn is_shared(&self) -> bool {
        self.vertical.is_none()
    }

    pub fn horizontal_weight(&self) -> &crate::engine::ParamRef<T> {
        &self.horizontal.efe.weight
    }

    pub fn vertical_weight(&self) -> &crate::engine::ParamRef<T> {
        match &self.vertical {
            Some(v) => &v.efe.weight,
            None => &self.horizontal.efe.weight,
        }
    }

    /// Returns the horizontal and vertical branch outputs.
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<(Var, Var)> {
        let a = self.ang_res;
        let h = self.horizontal.efe.forward(g, x)?;
        let h = lrelu(g, h);
        let h = self.horizontal.up.forward(g, h)?;
        let h = lrelu(g, h);
        let h = g.pixel_shuffle_1d(h, a, Axis::W)?;

        let v = match &self.vertical {
            Some(path) => path.efe.forward(g, x)?,
            None => {
                let w = g.param(&self.horizontal.efe.weight);
                let shape = self.vertical_spec.weight_shape();
                let w = g.reshape(w, &shape)?;
                let b = self.horizontal.efe.bias.as_ref().map(|b| g.param(b));
                g.conv2d(x, w, b, &self.vertical_spec)?
            }
        };
        let up = self.vertical.as_ref().map_or(&self.horizontal.up, |p| &p.up);
        let v = lrelu(g, v);
        let v = up.forward(g, v)?;
        let v = lrelu(g, v);
        let v = g.pixel_shuffle_1d(v, a, Axis::H)?;
        Ok((h, v))
    }
}
