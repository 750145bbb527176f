//! Angular super-resolution network.

use super::config::KeyValues;
use super::{lrelu, pointwise, sfe, AngularBranch, EpiBranches, Network};
use crate::engine::{Conv2d, Graph, Mode, ParamStore, Var};
use crate::error::{bail, Result};
use crate::kernels;
use crate::lightfield::LightField;
use crate::tensor::Element;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistgAsrConfig {
    pub ang_res_in: usize,
    pub ang_res_out: usize,
    pub channels: usize,
    pub n_groups: usize,
    pub n_blocks: usize,
    pub epi_weight_sharing: bool,
}

impl Default for DistgAsrConfig {
    fn default() -> Self {
        Self {
            ang_res_in: 2,
            ang_res_out: 7,
            channels: 64,
            n_groups: 4,
            n_blocks: 4,
            epi_weight_sharing: true,
        }
    }
}

const KEYS: [&str; 6] = [
    "ang_res_in",
    "ang_res_out",
    "channels",
    "n_groups",
    "n_blocks",
    "epi_weight_sharing",
];

impl DistgAsrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ang_res_in == 0 || self.ang_res_out <= self.ang_res_in {
            bail!(
                Config,
                "output angular resolution {} must exceed input {}",
                self.ang_res_out,
                self.ang_res_in
            );
        }
        if self.channels == 0 || self.n_groups == 0 || self.n_blocks == 0 {
            bail!(Config, "channels, n_groups and n_blocks must be positive");
        }
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(&KEYS)?;
        let d = Self::default();
        let cfg = Self {
            ang_res_in: kv.get("ang_res_in")?.unwrap_or(d.ang_res_in),
            ang_res_out: kv.get("ang_res_out")?.unwrap_or(d.ang_res_out),
            channels: kv.get("channels")?.unwrap_or(d.channels),
            n_groups: kv.get("n_groups")?.unwrap_or(d.n_groups),
            n_blocks: kv.get("n_blocks")?.unwrap_or(d.n_blocks),
            epi_weight_sharing: kv.get("epi_weight_sharing")?.unwrap_or(true),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.insert("ang_res_in", self.ang_res_in);
        kv.insert("ang_res_out", self.ang_res_out);
        kv.insert("channels", self.channels);
        kv.insert("n_groups", self.n_groups);
        kv.insert("n_blocks", self.n_blocks);
        kv.insert("epi_weight_sharing", self.epi_weight_sharing);
        kv
    }
}

/// Angular and EPI branches at full width concatenated with the input,
/// reduced by a 1×1 convolution and refined by a two-SFE residual block.
pub struct AsrBlock<T> {
    pub angular: AngularBranch<T>,
    pub epi: EpiBranches<T>,
    pub fuse: Conv2d<T>,
    pub res_first: Conv2d<T>,
    pub res_second: Conv2d<T>,
}

impl<T: Element> AsrBlock<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, a: usize, c: usize, shared: bool) -> Result<Self> {
        Ok(Self {
            angular: AngularBranch::new(store, &format!("{name}.angular"), a, c, c)?,
            epi: EpiBranches::new(store, &format!("{name}.epi"), a, c, c, shared)?,
            fuse: pointwise(store, &format!("{name}.fuse"), 4 * c, c)?,
            res_first: sfe(store, &format!("{name}.res.0"), a, c, c, true)?,
            res_second: sfe(store, &format!("{name}.res.1"), a, c, c, true)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let ang = self.angular.forward(g, x)?;
        let (h, v) = self.epi.forward(g, x)?;
        let y = g.concat(&[x, ang, h, v], 1)?;
        let y = self.fuse.forward(g, y)?;
        let fused = lrelu(g, y);
        let r = self.res_first.forward(g, fused)?;
        let r = lrelu(g, r);
        let r = self.res_second.forward(g, r)?;
        g.add(fused, r)
    }
}

pub struct AsrGroup<T> {
    pub blocks: Vec<AsrBlock<T>>,
    pub fuse: Conv2d<T>,
}

impl<T: Element> AsrGroup<T> {
    /// Runs the blocks in sequence and fuses all their outputs.
    fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.blocks.len());
        let mut y = x;
        for block in &self.blocks {
            y = block.forward(g, y)?;
            outs.push(y);
        }
        let cat = g.concat(&outs, 1)?;
        let fused = self.fuse.forward(g, cat)?;
        g.add(fused, x)
    }
}

/// AFE down to one sample per macro-pixel, 1×1 expansion to `(βA)²·C'`
/// channels, 2D pixel shuffle to the target angular resolution and an SFE
/// reducing to one channel.
pub struct AngularUpsampler<T> {
    pub down: Conv2d<T>,
    pub expand: Conv2d<T>,
    pub reduce: Conv2d<T>,
    target: usize,
}

impl<T: Element> AngularUpsampler<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, a: usize, target: usize, c: usize) -> Result<Self> {
        Ok(Self {
            down: store.conv2d(&format!("{name}.down"), kernels::make_afe(a, c, c)?.conv, true)?,
            expand: pointwise(store, &format!("{name}.expand"), c, target * target * c)?,
            reduce: sfe(store, &format!("{name}.reduce"), target, c, 1, true)?,
            target,
        })
    }

    /// MacPI features at angular resolution `A` to a one-channel MacPI at
    /// the target resolution.
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let y = self.down.forward(g, x)?;
        let y = lrelu(g, y);
        let y = self.expand.forward(g, y)?;
        let y = g.pixel_shuffle_2d(y, self.target)?;
        self.reduce.forward(g, y)
    }
}

pub struct DistgAsr<T> {
    pub cfg: DistgAsrConfig,
    store: ParamStore<T>,
    pub init: Conv2d<T>,
    pub groups: Vec<AsrGroup<T>>,
    pub fuse: Conv2d<T>,
    pub upsampler: AngularUpsampler<T>,
}

impl<T: Element> DistgAsr<T> {
    pub fn new(cfg: DistgAsrConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(seed);
        let (a, c) = (cfg.ang_res_in, cfg.channels);
        let init = sfe(&mut store, "init", a, 1, c, true)?;
        let mut groups = Vec::with_capacity(cfg.n_groups);
        for gi in 0..cfg.n_groups {
            let blocks = (0..cfg.n_blocks)
                .map(|bi| {
                    AsrBlock::new(
                        &mut store,
                        &format!("groups.{gi}.blocks.{bi}"),
                        a,
                        c,
                        cfg.epi_weight_sharing,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let fuse = pointwise(&mut store, &format!("groups.{gi}.fuse"), cfg.n_blocks * c, c)?;
            groups.push(AsrGroup { blocks, fuse });
        }
        let fuse = pointwise(&mut store, "cascade.fuse", cfg.n_groups * c, c)?;
        let upsampler = AngularUpsampler::new(&mut store, "upsample", a, cfg.ang_res_out, c)?;
        Ok(Self {
            cfg,
            store,
            init,
            groups,
            fuse,
            upsampler,
        })
    }

    /// Reconstructs every view of the dense light field.
    pub fn reconstruct(&self, lf: &LightField<T>) -> Result<LightField<T>> {
        let a = lf.ang_res()?;
        if a != self.cfg.ang_res_in {
            bail!(Config, "model expects {0}x{0} input views, got {a}x{a}", self.cfg.ang_res_in);
        }
        let x = super::macpi_batch(std::slice::from_ref(lf))?;
        let y = self.infer(&x)?;
        Ok(super::unbatch_sai(&y, self.cfg.ang_res_out)?.remove(0))
    }
}

impl<T: Element> Network<T> for DistgAsr<T> {
    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    /// `[N, 1, AH, AW]` MacPI in, `[N, 1, βA·H, βA·W]` tiled SAIs out.
    fn forward(&self, g: &mut Graph<T>, input: Var, _mode: Mode) -> Result<Var> {
        let shallow = self.init.forward(g, input)?;
        let mut outs = Vec::with_capacity(self.groups.len());
        let mut x = shallow;
        for group in &self.groups {
            x = group.forward(g, x)?;
            outs.push(x);
        }
        let cat = g.concat(&outs, 1)?;
        let fused = self.fuse.forward(g, cat)?;
        let x = g.add(fused, shallow)?;
        let mac = self.upsampler.forward(g, x)?;
        g.macpi_to_sai(mac, self.cfg.ang_res_out)
    }
}

/// Views of `dense` at the corners of its angular grid, as a 2×2 light field.
pub fn corner_views<T: Element>(dense: &LightField<T>) -> Result<LightField<T>> {
    let a = dense.ang_res()?;
    if a < 2 {
        bail!(InvalidArgument, "need at least 2x2 views for corner sampling");
    }
    let corners = [0, a - 1];
    let mut data = Vec::new();
    for &u in &corners {
        for &v in &corners {
            data.extend_from_slice(dense.view(u, v));
        }
    }
    LightField::new(2, 2, dense.height(), dense.width(), dense.channels(), data)
}
