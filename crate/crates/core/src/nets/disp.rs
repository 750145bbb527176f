//! Disparity estimation network.

use super::config::{format_levels, parse_levels, KeyValues};
use super::{lrelu, sfe, Network};
use crate::engine::{BatchNorm, Conv2d, Conv3d, Conv3dSpec, Graph, Mode, ParamRef, ParamStore, Var};
use crate::error::{bail, Result};
use crate::kernels::{self, DisparityLevelSet};
use crate::lightfield::LightField;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistgDispConfig {
    pub ang_res: usize,
    pub channels: usize,
    pub n_spatial_blocks: usize,
    pub levels: DisparityLevelSet,
    pub n_agg_convs: usize,
    pub share_cost_weights: bool,
}

impl Default for DistgDispConfig {
    fn default() -> Self {
        Self {
            ang_res: 9,
            channels: 16,
            n_spatial_blocks: 8,
            levels: DisparityLevelSet::default(),
            n_agg_convs: 8,
            share_cost_weights: true,
        }
    }
}

const KEYS: [&str; 6] = [
    "ang_res",
    "channels",
    "n_spatial_blocks",
    "levels",
    "n_agg_convs",
    "share_cost_weights",
];

impl DistgDispConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ang_res < 3 || self.ang_res % 2 == 0 {
            bail!(Config, "ang_res must be odd and at least 3, got {}", self.ang_res);
        }
        if self.levels.len() < 2 {
            bail!(Config, "need at least two disparity levels");
        }
        if self.channels == 0 || self.n_agg_convs == 0 {
            bail!(Config, "channels and n_agg_convs must be positive");
        }
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(&KEYS)?;
        let d = Self::default();
        let levels = match kv.get::<String>("levels")? {
            Some(s) => parse_levels(&s)?,
            None => d.levels,
        };
        let cfg = Self {
            ang_res: kv.get("ang_res")?.unwrap_or(d.ang_res),
            channels: kv.get("channels")?.unwrap_or(d.channels),
            n_spatial_blocks: kv.get("n_spatial_blocks")?.unwrap_or(d.n_spatial_blocks),
            levels,
            n_agg_convs: kv.get("n_agg_convs")?.unwrap_or(d.n_agg_convs),
            share_cost_weights: kv.get("share_cost_weights")?.unwrap_or(true),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.insert("ang_res", self.ang_res);
        kv.insert("channels", self.channels);
        kv.insert("n_spatial_blocks", self.n_spatial_blocks);
        kv.insert("levels", format_levels(&self.levels));
        kv.insert("n_agg_convs", self.n_agg_convs);
        kv.insert("share_cost_weights", self.share_cost_weights);
        kv
    }
}

/// SFE, BN, LeakyReLU, SFE, BN, plus the input.
pub struct SpatialResBlock<T> {
    pub first: Conv2d<T>,
    pub bn_first: BatchNorm<T>,
    pub second: Conv2d<T>,
    pub bn_second: BatchNorm<T>,
}

impl<T: Element> SpatialResBlock<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, a: usize, c: usize) -> Result<Self> {
        Ok(Self {
            first: sfe(store, &format!("{name}.sfe.0"), a, c, c, false)?,
            bn_first: store.batch_norm(&format!("{name}.bn.0"), c)?,
            second: sfe(store, &format!("{name}.sfe.1"), a, c, c, false)?,
            bn_second: store.batch_norm(&format!("{name}.bn.1"), c)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        let y = self.first.forward(g, x)?;
        let y = self.bn_first.forward(g, y, mode)?;
        let y = lrelu(g, y);
        let y = self.second.forward(g, y)?;
        let y = self.bn_second.forward(g, y, mode)?;
        g.add(y, x)
    }
}

/// DS-AFE weights: one tensor shared by all levels, or one per level.
pub struct CostVolumeBuilder<T> {
    pub weights: Vec<ParamRef<T>>,
    pub bias: ParamRef<T>,
    ang_res: usize,
    levels: DisparityLevelSet,
}

impl<T: Element> CostVolumeBuilder<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, cfg: &DistgDispConfig) -> Result<Self> {
        let (a, c) = (cfg.ang_res, cfg.channels);
        let proto = kernels::make_ds_afe(a, 0, c, c)?;
        let count = if cfg.share_cost_weights { 1 } else { cfg.levels.len() };
        let weights = (0..count)
            .map(|i| {
                let label = if count == 1 {
                    format!("{name}.weight")
                } else {
                    format!("{name}.level{i}.weight")
                };
                let conv = store.conv2d(&label, proto.conv, false)?;
                Ok(conv.weight)
            })
            .collect::<Result<Vec<_>>>()?;
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[c]))?;
        Ok(Self {
            weights,
            bias,
            ang_res: a,
            levels: cfg.levels.clone(),
        })
    }

    /// `[N, C, AH, AW]` features to a `[N, C, |D|, H, W]` volume, levels in
    /// order along axis 2.
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let c = self.bias.shape()[0];
        let b = g.param(&self.bias);
        let mut slices = Vec::with_capacity(self.levels.len());
        for (i, &d) in self.levels.levels().iter().enumerate() {
            let spec = kernels::make_ds_afe(self.ang_res, d, c, c)?;
            let w = g.param(&self.weights[i.min(self.weights.len() - 1)]);
            let w = if spec.taps_reversed() { g.flip(w, &[2, 3])? } else { w };
            let y = g.conv2d(x, w, Some(b), &spec.conv)?;
            let s = g.shape(y).to_vec();
            slices.push(g.reshape(y, &[s[0], s[1], 1, s[2], s[3]])?);
        }
        g.concat(&slices, 2)
    }
}

pub struct DistgDisp<T> {
    pub cfg: DistgDispConfig,
    store: ParamStore<T>,
    pub init: Conv2d<T>,
    pub blocks: Vec<SpatialResBlock<T>>,
    pub cost: CostVolumeBuilder<T>,
    pub aggregation: Vec<Conv3d<T>>,
}

impl<T: Element> DistgDisp<T> {
    pub fn new(cfg: DistgDispConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(seed);
        let (a, c) = (cfg.ang_res, cfg.channels);
        let init = sfe(&mut store, "init", a, 1, c, true)?;
        let blocks = (0..cfg.n_spatial_blocks)
            .map(|i| SpatialResBlock::new(&mut store, &format!("blocks.{i}"), a, c))
            .collect::<Result<Vec<_>>>()?;
        let cost = CostVolumeBuilder::new(&mut store, "cost", &cfg)?;
        let aggregation = (0..cfg.n_agg_convs)
            .map(|i| {
                let out = if i + 1 == cfg.n_agg_convs { 1 } else { c };
                let spec = Conv3dSpec::new(c, out, [3, 3, 3]).with_padding([1, 1, 1]);
                store.conv3d(&format!("aggregate.{i}"), spec, true)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            store,
            init,
            blocks,
            cost,
            aggregation,
        })
    }

    /// Disparity map `[H, W]` of the centre view.
    pub fn estimate(&self, lf: &LightField<T>) -> Result<Tensor<T>> {
        let a = lf.ang_res()?;
        if a != self.cfg.ang_res {
            bail!(Config, "model expects {0}x{0} views, got {a}x{a}", self.cfg.ang_res);
        }
        let x = super::macpi_batch(std::slice::from_ref(lf))?;
        Ok(self.infer(&x)?.slice0(0))
    }
}

impl<T: Element> Network<T> for DistgDisp<T> {
    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    /// `[N, 1, AH, AW]` MacPI in, `[N, H, W]` disparity out.
    fn forward(&self, g: &mut Graph<T>, input: Var, mode: Mode) -> Result<Var> {
        let mut x = self.init.forward(g, input)?;
        x = lrelu(g, x);
        for block in &self.blocks {
            x = block.forward(g, x, mode)?;
        }
        let mut v = self.cost.forward(g, x)?;
        let last = self.aggregation.len() - 1;
        for (i, conv) in self.aggregation.iter().enumerate() {
            v = conv.forward(g, v)?;
            if i != last {
                v = lrelu(g, v);
            }
        }
        let s = g.shape(v).to_vec();
        let logits = g.reshape(v, &[s[0], s[2], s[3], s[4]])?;
        g.regress_disparity(logits, &self.cfg.levels.as_f64())
    }
}

/// Softmax over axis 1 of `[N, |D|, H, W]` logits, then the probability
/// weighted mean of `levels`.
pub fn regress_disparity<T: Element>(logits: &Tensor<T>, levels: &DisparityLevelSet) -> Result<Tensor<T>> {
    Ok(crate::engine::graph::regress_forward(logits, &levels.as_f64())?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DistgDispConfig {
        DistgDispConfig {
            ang_res: 3,
            channels: 4,
            n_spatial_blocks: 1,
            levels: DisparityLevelSet::range(-2, 2).unwrap(),
            n_agg_convs: 2,
            share_cost_weights: true,
        }
    }

    #[test]
    fn config_round_trip() {
        let cfg = tiny();
        assert_eq!(DistgDispConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        assert!(DistgDispConfig { ang_res: 4, ..tiny() }.validate().is_err());
        assert!(DistgDispConfig {
            levels: DisparityLevelSet::new(vec![0]).unwrap(),
            ..tiny()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn output_in_level_range() {
        let net = DistgDisp::<f32>::new(tiny(), 3).unwrap();
        let lf = LightField::from_fn(3, 3, 6, 7, |u, v, h, w| ((u * 7 + v * 3 + h * 5 + w) % 9) as f32 / 9.0);
        let d = net.estimate(&lf).unwrap();
        assert_eq!(d.shape(), &[6, 7]);
        assert!(d.data().iter().all(|v| (-2.0..=2.0).contains(v)));
    }

    #[test]
    fn zero_gamma_block_is_identity() {
        let mut store = ParamStore::<f64>::new(0);
        let block = SpatialResBlock::new(&mut store, "b", 3, 2).unwrap();
        block.bn_first.gamma.update(|t| t.fill(0.0));
        block.bn_second.gamma.update(|t| t.fill(0.0));
        let mut g = Graph::new();
        let x = g.input(Tensor::from_fn(&[2, 2, 6, 6], |i| (i[0] + i[1] * 2 + i[2] * i[3]) as f64));
        let y = block.forward(&mut g, x, Mode::Train).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn uniform_logits_give_mean_level() {
        let logits = Tensor::<f64>::full(&[1, 9, 2, 2], 0.3);
        let d = regress_disparity(&logits, &DisparityLevelSet::default()).unwrap();
        assert!(d.data().iter().all(|v| v.abs() < 1e-12));
    }
}
