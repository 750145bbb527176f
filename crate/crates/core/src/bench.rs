//! Cost-volume construction timing: DS-AFE against explicit
//! shift-and-concat on identical inputs and weights.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::conv::{conv3d_forward, Conv3dSpec};
use crate::error::{bail, Error, Result};
use crate::kernels::{
    apply_extractor, ds_afe_cost_volume, make_sfe, oracle_shift_and_concat, CostVolume,
    DisparityLevelSet,
};
use crate::nets::regress_disparity;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub ang_res: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub levels: DisparityLevelSet,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            ang_res: 9,
            height: 64,
            width: 64,
            channels: 8,
            levels: DisparityLevelSet::default(),
            repeats: 5,
            seed: 0,
        }
    }
}

pub const WARMUP_RUNS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    DsAfe,
    ShiftAndConcat,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::DsAfe => "ds_afe",
            Method::ShiftAndConcat => "shift_and_concat",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    FeatureExtraction,
    CostVolume,
    Aggregation,
    Regression,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::FeatureExtraction,
        Stage::CostVolume,
        Stage::Aggregation,
        Stage::Regression,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Stage::FeatureExtraction => "feature_extraction",
            Stage::CostVolume => "cost_volume",
            Stage::Aggregation => "aggregation",
            Stage::Regression => "regression",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchResult {
    pub method: Method,
    /// Median wall time per stage, in `Stage::ALL` order.
    pub stage_ms: [f64; 4],
    /// Median wall time of the whole pipeline run.
    pub total_ms: f64,
    /// Shift-and-concat cost-volume time divided by this method's.
    pub speedup: f64,
    /// Explicit view shifts per run (zero for DS-AFE).
    pub shifts: usize,
}

impl BenchResult {
    pub fn stage(&self, s: Stage) -> f64 {
        self.stage_ms[s as usize]
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct Inputs<T> {
    image: Tensor<T>,
    sfe_weight: Tensor<T>,
    angular_weight: Tensor<T>,
    agg_weight: Tensor<T>,
}

impl Inputs<f32> {
    fn to_f64(&self) -> Inputs<f64> {
        Inputs {
            image: self.image.cast(),
            sfe_weight: self.sfe_weight.cast(),
            angular_weight: self.angular_weight.cast(),
            agg_weight: self.agg_weight.cast(),
        }
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Largest interior difference between two volumes, ignoring a border of
/// `|d|·(A-1)/2 + 1` pixels per level.
pub fn interior_max_diff<T: Element>(a: &CostVolume<T>, b: &CostVolume<T>, ang_res: usize) -> Result<f64> {
    if a.data.shape() != b.data.shape() || a.levels != b.levels {
        bail!(Shape, "cost volumes differ in shape or levels");
    }
    let s = a.data.shape();
    let (h, w) = (s[3], s[4]);
    let mut worst = 0f64;
    for (li, &d) in a.levels.levels().iter().enumerate() {
        let border = d.unsigned_abs() as usize * (ang_res - 1) / 2 + 1;
        let (x, y) = (a.level(li), b.level(li));
        for n in 0..s[0] {
            for c in 0..s[2] {
                for i in border..h.saturating_sub(border) {
                    for j in border..w.saturating_sub(border) {
                        let idx = [n, c, i, j];
                        worst = worst.max((x.get(&idx).as_f64() - y.get(&idx).as_f64()).abs());
                    }
                }
            }
        }
    }
    Ok(worst)
}

pub const EQUALITY_TOLERANCE: f64 = 1e-6;

fn run_once<T: Element>(
    method: Method,
    inp: &Inputs<T>,
    cfg: &BenchConfig,
) -> Result<([f64; 4], f64, CostVolume<T>, usize)> {
    let a = cfg.ang_res;
    let c = cfg.channels;
    let start = Instant::now();
    let mut t = Instant::now();
    let lap = |t: &mut Instant| {
        let ms = t.elapsed().as_secs_f64() * 1e3;
        *t = Instant::now();
        ms
    };

    let feats = apply_extractor(&make_sfe(a, 1, c)?, &inp.image, &inp.sfe_weight, None)?;
    let fe = lap(&mut t);

    let (volume, shifts) = match method {
        Method::DsAfe => (ds_afe_cost_volume(&feats, a, &cfg.levels, &inp.angular_weight, None)?, 0),
        Method::ShiftAndConcat => {
            let out = oracle_shift_and_concat(&feats, a, &cfg.levels, &inp.angular_weight, None)?;
            (out.volume, out.shifts)
        }
    };
    let cv = lap(&mut t);

    let s = volume.data.shape().to_vec();
    let nchw = volume.data.permute(&[0, 2, 1, 3, 4])?;
    let spec = Conv3dSpec::new(s[2], 1, [3, 3, 3]).with_padding([1, 1, 1]);
    let agg = conv3d_forward(&nchw, &inp.agg_weight, None, &spec)?;
    let ag = lap(&mut t);

    let logits = agg.reshape(&[s[0], s[1], s[3], s[4]])?;
    let disparity = regress_disparity(&logits, &cfg.levels)?;
    std::hint::black_box(&disparity);
    let rg = lap(&mut t);

    let total = start.elapsed().as_secs_f64() * 1e3;
    Ok(([fe, cv, ag, rg], total, volume, shifts))
}

/// Times both methods and returns `(ds_afe, shift_and_concat)`.
///
/// Timing runs in `f32`. Before timing, both routes are evaluated in `f64`
/// on the same inputs and the call fails if their interiors disagree by more
/// than [`EQUALITY_TOLERANCE`].
pub fn bench_cost_volume(cfg: &BenchConfig) -> Result<(BenchResult, BenchResult)> {
    if cfg.repeats == 0 {
        bail!(InvalidArgument, "repeats must be at least 1");
    }
    let (a, c) = (cfg.ang_res, cfg.channels);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inp = Inputs {
        image: random(&mut rng, &[1, 1, a * cfg.height, a * cfg.width], 1.0),
        sfe_weight: random(&mut rng, &[c, 1, 3, 3], 0.5),
        angular_weight: random(&mut rng, &[c, c, a, a], 0.1),
        agg_weight: random(&mut rng, &[1, c, 3, 3, 3], 0.1),
    };

    let exact = inp.to_f64();
    let (_, _, fast, _) = run_once(Method::DsAfe, &exact, cfg)?;
    let (_, _, slow, shifts) = run_once(Method::ShiftAndConcat, &exact, cfg)?;
    let diff = interior_max_diff(&fast, &slow, a)?;
    if diff > EQUALITY_TOLERANCE {
        return Err(Error::Verification(format!(
            "DS-AFE and shift-and-concat cost volumes differ by {diff:e} on the interior"
        )));
    }

    let measure = |method: Method| -> Result<(Vec<[f64; 4]>, Vec<f64>)> {
        for _ in 0..WARMUP_RUNS {
            run_once(method, &inp, cfg)?;
        }
        let mut stages = Vec::with_capacity(cfg.repeats);
        let mut totals = Vec::with_capacity(cfg.repeats);
        for _ in 0..cfg.repeats {
            let (s, t, _, _) = run_once(method, &inp, cfg)?;
            stages.push(s);
            totals.push(t);
        }
        Ok((stages, totals))
    };
    let summarise = |method, (stages, totals): (Vec<[f64; 4]>, Vec<f64>), shifts| {
        let mut stage_ms = [0.0; 4];
        for (i, slot) in stage_ms.iter_mut().enumerate() {
            *slot = median(stages.iter().map(|s| s[i]).collect());
        }
        BenchResult {
            method,
            stage_ms,
            total_ms: median(totals),
            speedup: 1.0,
            shifts,
        }
    };
    let mut ds = summarise(Method::DsAfe, measure(Method::DsAfe)?, 0);
    let sc = summarise(Method::ShiftAndConcat, measure(Method::ShiftAndConcat)?, shifts);
    ds.speedup = sc.stage(Stage::CostVolume) / ds.stage(Stage::CostVolume);
    Ok((ds, sc))
}

/// `method,stage,time_ms,speedup` rows, one per stage plus a `total` row.
pub fn to_csv(results: &[BenchResult]) -> String {
    let mut out = String::from("method,stage,time_ms,speedup\n");
    for r in results {
        for s in Stage::ALL {
            let _ = writeln!(out, "{},{},{:.4},{:.4}", r.method.label(), s.label(), r.stage(s), r.speedup);
        }
        let _ = writeln!(out, "{},total,{:.4},{:.4}", r.method.label(), r.total_ms, r.speedup);
    }
    out
}
