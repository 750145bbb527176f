//! Spatial super-resolution network.

use super::config::KeyValues;
use super::{lrelu, pointwise, sfe, AngularBranch, EpiBranches, Network};
use crate::engine::{Conv2d, Graph, Mode, ParamStore, Var};
use crate::error::{bail, Result};
use crate::lightfield::LightField;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchToggles {
    pub spatial: bool,
    pub angular: bool,
    pub epi: bool,
}

impl Default for BranchToggles {
    fn default() -> Self {
        Self {
            spatial: true,
            angular: true,
            epi: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistgSsrConfig {
    pub ang_res: usize,
    pub channels: usize,
    pub n_groups: usize,
    pub n_blocks: usize,
    pub upscale: usize,
    pub branches: BranchToggles,
    pub epi_weight_sharing: bool,
}

impl Default for DistgSsrConfig {
    fn default() -> Self {
        Self {
            ang_res: 5,
            channels: 64,
            n_groups: 4,
            n_blocks: 4,
            upscale: 2,
            branches: BranchToggles::default(),
            epi_weight_sharing: true,
        }
    }
}

const KEYS: [&str; 9] = [
    "ang_res",
    "channels",
    "n_groups",
    "n_blocks",
    "upscale",
    "spatial_branch",
    "angular_branch",
    "epi_branch",
    "epi_weight_sharing",
];

impl DistgSsrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ang_res == 0 {
            bail!(Config, "ang_res must be positive");
        }
        if self.channels == 0 || self.channels % 4 != 0 {
            bail!(Config, "channels must be a positive multiple of 4, got {}", self.channels);
        }
        if self.upscale == 0 {
            bail!(Config, "upscale must be at least 1");
        }
        if self.n_groups == 0 || self.n_blocks == 0 {
            bail!(Config, "need at least one group and one block");
        }
        let b = self.branches;
        if !(b.spatial || b.angular || b.epi) {
            bail!(Config, "at least one branch must be enabled");
        }
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(&KEYS)?;
        let d = Self::default();
        let cfg = Self {
            ang_res: kv.get("ang_res")?.unwrap_or(d.ang_res),
            channels: kv.get("channels")?.unwrap_or(d.channels),
            n_groups: kv.get("n_groups")?.unwrap_or(d.n_groups),
            n_blocks: kv.get("n_blocks")?.unwrap_or(d.n_blocks),
            upscale: kv.get("upscale")?.unwrap_or(d.upscale),
            branches: BranchToggles {
                spatial: kv.get("spatial_branch")?.unwrap_or(true),
                angular: kv.get("angular_branch")?.unwrap_or(true),
                epi: kv.get("epi_branch")?.unwrap_or(true),
            },
            epi_weight_sharing: kv.get("epi_weight_sharing")?.unwrap_or(true),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.insert("ang_res", self.ang_res);
        kv.insert("channels", self.channels);
        kv.insert("n_groups", self.n_groups);
        kv.insert("n_blocks", self.n_blocks);
        kv.insert("upscale", self.upscale);
        kv.insert("spatial_branch", self.branches.spatial);
        kv.insert("angular_branch", self.branches.angular);
        kv.insert("epi_branch", self.branches.epi);
        kv.insert("epi_weight_sharing", self.epi_weight_sharing);
        kv
    }
}

pub struct SpatialBranch<T> {
    pub first: Conv2d<T>,
    pub second: Conv2d<T>,
}

/// Four parallel branches fused by a 1×1 convolution and an SFE, with a
/// residual connection around the block.
pub struct SsrBlock<T> {
    pub spatial: Option<SpatialBranch<T>>,
    pub angular: Option<AngularBranch<T>>,
    pub epi: Option<EpiBranches<T>>,
    pub fuse: Conv2d<T>,
    pub out: Conv2d<T>,
}

impl<T: Element> SsrBlock<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, cfg: &DistgSsrConfig) -> Result<Self> {
        let (a, c) = (cfg.ang_res, cfg.channels);
        let b = cfg.branches;
        let spatial = if b.spatial {
            Some(SpatialBranch {
                first: sfe(store, &format!("{name}.spatial.0"), a, c, c, true)?,
                second: sfe(store, &format!("{name}.spatial.1"), a, c, c, true)?,
            })
        } else {
            None
        };
        let angular = if b.angular {
            Some(AngularBranch::new(store, &format!("{name}.angular"), a, c, c / 4)?)
        } else {
            None
        };
        let epi = if b.epi {
            Some(EpiBranches::new(
                store,
                &format!("{name}.epi"),
                a,
                c,
                c / 2,
                cfg.epi_weight_sharing,
            )?)
        } else {
            None
        };
        let width = [(b.spatial, c), (b.angular, c / 4), (b.epi, c)]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, w)| w)
            .sum();
        Ok(Self {
            spatial,
            angular,
            epi,
            fuse: pointwise(store, &format!("{name}.fuse"), width, c)?,
            out: sfe(store, &format!("{name}.out"), a, c, c, true)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let mut parts = Vec::with_capacity(4);
        if let Some(s) = &self.spatial {
            let y = s.first.forward(g, x)?;
            let y = lrelu(g, y);
            let y = s.second.forward(g, y)?;
            parts.push(lrelu(g, y));
        }
        if let Some(ang) = &self.angular {
            parts.push(ang.forward(g, x)?);
        }
        if let Some(epi) = &self.epi {
            let (h, v) = epi.forward(g, x)?;
            parts.push(h);
            parts.push(v);
        }
        let y = g.concat(&parts, 1)?;
        let y = self.fuse.forward(g, y)?;
        let y = lrelu(g, y);
        let y = self.out.forward(g, y)?;
        g.add(y, x)
    }
}

pub struct SsrGroup<T> {
    pub blocks: Vec<SsrBlock<T>>,
    pub out: Conv2d<T>,
}

pub struct DistgSsr<T> {
    pub cfg: DistgSsrConfig,
    store: ParamStore<T>,
    pub init: Conv2d<T>,
    pub groups: Vec<SsrGroup<T>>,
    pub cascade_out: Conv2d<T>,
    pub expand: Conv2d<T>,
    pub squeeze: Conv2d<T>,
}

impl<T: Element> DistgSsr<T> {
    pub fn new(cfg: DistgSsrConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(seed);
        let (a, c, s) = (cfg.ang_res, cfg.channels, cfg.upscale);
        let init = sfe(&mut store, "init", a, 1, c, true)?;
        let mut groups = Vec::with_capacity(cfg.n_groups);
        for gi in 0..cfg.n_groups {
            let blocks = (0..cfg.n_blocks)
                .map(|bi| SsrBlock::new(&mut store, &format!("groups.{gi}.blocks.{bi}"), &cfg))
                .collect::<Result<Vec<_>>>()?;
            let out = sfe(&mut store, &format!("groups.{gi}.out"), a, c, c, true)?;
            groups.push(SsrGroup { blocks, out });
        }
        let cascade_out = sfe(&mut store, "cascade.out", a, c, c, true)?;
        let expand = pointwise(&mut store, "upsample.expand", c, s * s * c)?;
        let squeeze = pointwise(&mut store, "upsample.squeeze", c, 1)?;
        Ok(Self {
            cfg,
            store,
            init,
            groups,
            cascade_out,
            expand,
            squeeze,
        })
    }

    /// Super-resolves one grayscale light field.
    pub fn super_resolve(&self, lf: &LightField<T>) -> Result<LightField<T>> {
        self.check_input(lf)?;
        let x = super::macpi_batch(std::slice::from_ref(lf))?;
        let y = self.infer(&x)?;
        Ok(super::unbatch_sai(&y, self.cfg.ang_res)?.remove(0))
    }

    fn check_input(&self, lf: &LightField<T>) -> Result<()> {
        let a = lf.ang_res()?;
        if a != self.cfg.ang_res {
            bail!(Config, "model expects {0}x{0} views, got {a}x{a}", self.cfg.ang_res);
        }
        Ok(())
    }
}

impl<T: Element> Network<T> for DistgSsr<T> {
    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    /// `[N, 1, AH, AW]` MacPI in, `[N, 1, αAH, αAW]` tiled SAIs out.
    fn forward(&self, g: &mut Graph<T>, input: Var, _mode: Mode) -> Result<Var> {
        let a = self.cfg.ang_res;
        let shallow = self.init.forward(g, input)?;
        let mut x = shallow;
        for group in &self.groups {
            let mut y = x;
            for block in &group.blocks {
                y = block.forward(g, y)?;
            }
            let y = group.out.forward(g, y)?;
            x = g.add(y, x)?;
        }
        let deep = self.cascade_out.forward(g, x)?;
        let x = g.add(deep, shallow)?;
        let x = g.macpi_to_sai(x, a)?;
        let x = self.expand.forward(g, x)?;
        let x = g.pixel_shuffle_2d(x, self.cfg.upscale)?;
        let x = lrelu(g, x);
        self.squeeze.forward(g, x)
    }
}

/// Bicubic-downsampled copy of every view, for building training pairs.
pub fn downsample_views<T: Element>(lf: &LightField<T>, factor: usize) -> Result<LightField<T>> {
    let scale = crate::lightfield::Scale::new(1, factor)?;
    let (u, v) = (lf.ang_u(), lf.ang_v());
    let mut data = Vec::new();
    let (mut h, mut w) = (0, 0);
    for i in 0..u {
        for j in 0..v {
            if lf.channels() != 1 {
                bail!(InvalidArgument, "downsample_views expects one channel");
            }
            let view = Tensor::new(vec![lf.height(), lf.width()], lf.view(i, j).to_vec())?;
            let small = crate::lightfield::bicubic_resize(&view, scale)?;
            h = small.shape()[0];
            w = small.shape()[1];
            data.extend(small.into_data());
        }
    }
    LightField::new(u, v, h, w, 1, data)
}
