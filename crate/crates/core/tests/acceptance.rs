//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use distg::bench::{bench_cost_volume, interior_max_diff, BenchConfig, Stage};
use distg::engine::checkpoint::write_checkpoint;
use distg::engine::read_manifest;
use distg::engine::shuffle::{pixel_shuffle_1d, pixel_shuffle_2d, pixel_unshuffle_1d, pixel_unshuffle_2d};
use distg::engine::Axis;
use distg::gradcheck::{network_suite, op_suite, Tolerances};
use distg::kernels::{
    apply_extractor, ds_afe_cost_volume, ds_afe_geometry, make_afe, make_efe, make_sfe, oracle_shift_and_concat,
    CostVolume, DisparityLevelSet, EvenAngular,
};
use distg::lightfield::synth::{plane_lf, smooth_texture};
use distg::lightfield::{extract_epi, macpi_to_sai, sai_to_macpi, EpiOrientation};
use distg::metrics::{badpix, mse100, psnr, ssim};
use distg::nets::{
    toy, train_overfit, BranchToggles, DistgAsr, DistgAsrConfig, DistgDisp, DistgDispConfig, DistgSsr,
    DistgSsrConfig, Network,
};
use distg::{LightField, Tensor};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: distg::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn kaiming(rng: &mut rand_chacha::ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    let fan_in: usize = shape[1..].iter().product();
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound) as f32)
}

fn unit_image(rng: &mut rand_chacha::ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
}

fn kernel_oracles() -> Outcome {
    let mut r = rng(101);
    let mut worst = 0f64;
    let mut cases = 0;
    for a in [2usize, 3, 5, 9] {
        for h in 4..=8 {
            for w in 4..=8 {
                let x = unit_image(&mut r, &[1, 2, a * h, a * w]);
                let sfe = lib(make_sfe(a, 2, 2))?;
                let wt = kaiming(&mut r, &sfe.weight_shape());
                worst = worst.max(max_abs_diff(
                    &lib(apply_extractor(&sfe, &x, &wt, None))?.cast::<f64>(),
                    &sfe_per_view(&x.cast::<f64>(), a, &wt.cast::<f64>(), None),
                ));
                let afe = lib(make_afe(a, 2, 2))?;
                let wt = kaiming(&mut r, &afe.weight_shape());
                worst = worst.max(max_abs_diff(
                    &lib(apply_extractor(&afe, &x, &wt, None))?.cast::<f64>(),
                    &afe_per_macropixel(&x.cast::<f64>(), a, &wt.cast::<f64>(), None),
                ));
                cases += 2;
                if a % 2 == 1 {
                    let hs = lib(make_efe(a, EpiOrientation::Horizontal, 2, 2, EvenAngular::Reject))?;
                    let wt = kaiming(&mut r, &hs.weight_shape());
                    worst = worst.max(max_abs_diff(
                        &lib(apply_extractor(&hs, &x, &wt, None))?.cast::<f64>(),
                        &efe_h_per_epi(&x.cast::<f64>(), a, &wt.cast::<f64>(), None),
                    ));
                    let vs = lib(make_efe(a, EpiOrientation::Vertical, 2, 2, EvenAngular::Reject))?;
                    let wt = kaiming(&mut r, &vs.weight_shape());
                    worst = worst.max(max_abs_diff(
                        &lib(apply_extractor(&vs, &x, &wt, None))?.cast::<f64>(),
                        &efe_v_per_epi(&x.cast::<f64>(), a, &wt.cast::<f64>(), None),
                    ));
                    cases += 2;
                }
            }
        }
    }
    check(worst <= 1e-6, || format!("max abs diff {worst:e} > 1e-6"))?;
    Ok(format!("{cases} extractor cases, f32 output vs f64 oracle max abs diff {worst:.2e}"))
}

fn ds_afe_correctness() -> Outcome {
    for ((a, d), want) in [((9, 1), (8, 28)), ((9, 0), (1, 0)), ((5, -1), (6, 10))] {
        let got = lib(ds_afe_geometry(a, d))?;
        check(got == want, || format!("A={a} d={d}: geometry {got:?}, expected {want:?}"))?;
    }
    let levels: Vec<i64> = (-4..=4).collect();
    let set = lib(DisparityLevelSet::new(levels.clone()))?;
    let mut r = rng(202);
    let (mut worst, mut worst_naive, mut worst_f32) = (0f64, 0f64, 0f64);
    for a in [3usize, 5, 9] {
        let (h, w) = (8, 8);
        let x = random::<f64>(&mut r, &[1, 2, a * h, a * w]);
        let wt = random::<f64>(&mut r, &[2, 2, a, a]);
        let ds = lib(ds_afe_cost_volume(&x, a, &set, &wt, None))?;
        let oracle = lib(oracle_shift_and_concat(&x, a, &set, &wt, None))?;
        worst = worst.max(lib(interior_max_diff(&ds, &oracle.volume, a))?);
        let naive = CostVolume::new(set.clone(), naive_shift_and_concat(&x, a, &levels, &wt, None)).unwrap();
        worst_naive = worst_naive.max(lib(interior_max_diff(&ds, &naive, a))?);

        let (x32, w32) = (x.cast::<f32>(), wt.cast::<f32>());
        let ds32 = lib(ds_afe_cost_volume(&x32, a, &set, &w32, None))?;
        let or32 = lib(oracle_shift_and_concat(&x32, a, &set, &w32, None))?;
        worst_f32 = worst_f32.max(lib(interior_max_diff(&ds32, &or32.volume, a))?);
    }
    check(worst <= 1e-6 && worst_naive <= 1e-6, || {
        format!("interior diff {worst:e} (library oracle), {worst_naive:e} (naive oracle)")
    })?;
    Ok(format!(
        "geometry exact; f64 interior diff {worst:.2e} / {worst_naive:.2e} (library / naive oracle), f32 {worst_f32:.2e}"
    ))
}

fn layout_round_trips() -> Outcome {
    let mut r = rng(303);
    let cases = 1000;
    for case in 0..cases {
        let (a, h, w) = (r.random_range(1..=9), r.random_range(1..=12), r.random_range(1..=12));
        let data: Vec<f32> = (0..a * a * h * w).map(|_| r.random_range(-1.0..1.0)).collect();
        let lf = lib(LightField::new(a, a, h, w, 1, data))?;
        let mac = lib(sai_to_macpi(&lf))?;
        let back = lib(macpi_to_sai(&mac))?;
        let same_bits = back.data().iter().zip(lf.data()).all(|(p, q)| p.to_bits() == q.to_bits());
        check(same_bits, || format!("case {case}: A={a} {h}x{w} round trip not bit exact"))?;
        check(sorted_bits(mac.data()) == sorted_bits(lf.data()), || format!("case {case}: multiset changed"))?;
    }
    for case in 0..200 {
        let (c, s, h, w) = (r.random_range(1..=3), r.random_range(1..=4), r.random_range(1..=6), r.random_range(1..=6));
        let x = random::<f32>(&mut r, &[1, c * s * s, h, w]);
        let y = lib(pixel_shuffle_2d(&x, s))?;
        check(lib(pixel_unshuffle_2d(&y, s))? == x, || format!("shuffle 2D case {case}"))?;
        check(sorted_bits(y.data()) == sorted_bits(x.data()), || format!("shuffle 2D multiset case {case}"))?;
        let x = random::<f32>(&mut r, &[1, c * s, h, w]);
        for axis in [Axis::H, Axis::W] {
            let y = lib(pixel_shuffle_1d(&x, s, axis))?;
            check(lib(pixel_unshuffle_1d(&y, s, axis))? == x, || format!("shuffle 1D case {case}"))?;
            check(sorted_bits(y.data()) == sorted_bits(x.data()), || format!("shuffle 1D multiset case {case}"))?;
        }
    }
    Ok(format!("{cases} SAI/MacPI cases, 200 shuffle cases per kind, all bit exact"))
}

fn differentiation() -> Outcome {
    let tol = Tolerances::default();
    let ops = lib(op_suite(404, tol))?;
    let (worst_op, worst_name) = ops
        .iter()
        .map(|c| (c.max_rel_err, c.name.as_str()))
        .fold((0.0, ""), |acc, x| if x.0 > acc.0 { x } else { acc });
    check(worst_op <= 1e-4, || format!("op {worst_name}: rel err {worst_op:e}"))?;
    let mut worst_net = 0f64;
    for (name, checks) in lib(network_suite(404, 12, tol))? {
        let mut params: Vec<&str> = checks.iter().map(|c| c.param.as_str()).collect();
        params.sort_unstable();
        params.dedup();
        check(params.len() >= 10, || format!("{name}: only {} distinct parameters", params.len()))?;
        for c in &checks {
            check(c.rel_err <= 1e-3, || format!("{name} {}[{}]: rel err {:e}", c.param, c.index, c.rel_err))?;
            worst_net = worst_net.max(c.rel_err);
        }
    }
    Ok(format!(
        "{} ops, worst {worst_op:.2e} ({worst_name}); 3 networks x 12 spot checks, worst {worst_net:.2e}",
        ops.len()
    ))
}

fn shape_contracts() -> Outcome {
    let (h, w) = (8, 6);
    for scale in [2, 4] {
        let cfg = DistgSsrConfig {
            ang_res: 5,
            channels: 8,
            n_groups: 1,
            n_blocks: 1,
            upscale: scale,
            ..DistgSsrConfig::default()
        };
        let net = lib(DistgSsr::<f32>::new(cfg, 1))?;
        let lf = LightField::from_fn(5, 5, h, w, |u, v, y, x| ((u + v + y + x) % 4) as f32 / 4.0);
        let out = lib(net.super_resolve(&lf))?;
        let dims = (out.ang_u(), out.ang_v(), out.height(), out.width());
        check(dims == (5, 5, scale * h, scale * w), || format!("SSR x{scale}: {dims:?}"))?;
    }

    let cfg = DistgAsrConfig {
        ang_res_in: 2,
        ang_res_out: 7,
        channels: 8,
        n_groups: 1,
        n_blocks: 1,
        epi_weight_sharing: true,
    };
    let net = lib(DistgAsr::<f32>::new(cfg, 1))?;
    let lf = LightField::from_fn(2, 2, h, w, |u, v, y, x| ((u * 2 + v + y * x) % 5) as f32 / 5.0);
    let out = lib(net.reconstruct(&lf))?;
    let dims = (out.ang_u(), out.ang_v(), out.height(), out.width());
    check(dims == (7, 7, h, w), || format!("ASR: {dims:?}"))?;

    let cfg = DistgDispConfig {
        ang_res: 9,
        channels: 4,
        n_spatial_blocks: 1,
        levels: DisparityLevelSet::default(),
        n_agg_convs: 2,
        share_cost_weights: true,
    };
    let net = lib(DistgDisp::<f32>::new(cfg, 1))?;
    let data = random::<f32>(&mut rng(505), &[81 * h * w]).into_data();
    let lf = lib(LightField::new(9, 9, h, w, 1, data))?;
    let d = lib(net.estimate(&lf))?;
    check(d.shape() == [h, w], || format!("Disp: {:?}", d.shape()))?;
    let (lo, hi) = d.data().iter().fold((f32::MAX, f32::MIN), |(l, u), &v| (l.min(v), u.max(v)));
    check(lo >= -4.0 && hi <= 4.0, || format!("Disp range [{lo}, {hi}]"))?;
    Ok(format!("SSR x2/x4, ASR 2x2->7x7, Disp 9x9 -> {h}x{w} in [{lo:.3}, {hi:.3}]"))
}

fn trainability() -> Outcome {
    let lr = 2e-4;
    let ssr = lib(DistgSsr::<f32>::new(
        DistgSsrConfig {
            ang_res: 3,
            channels: 8,
            n_groups: 1,
            n_blocks: 1,
            upscale: 2,
            ..DistgSsrConfig::default()
        },
        1,
    ))?;
    let losses = lib(train_overfit(&ssr, &lib(toy::ssr_batch(3, 8, 8, 2, 2, 7))?, 200, lr))?;
    let ssr_ratio = losses[199] / losses[0];
    check(ssr_ratio < 0.5, || format!("SSR loss ratio {ssr_ratio:.3}"))?;

    let asr = lib(DistgAsr::<f32>::new(
        DistgAsrConfig {
            ang_res_in: 2,
            ang_res_out: 7,
            channels: 8,
            n_groups: 1,
            n_blocks: 1,
            epi_weight_sharing: true,
        },
        1,
    ))?;
    let losses = lib(train_overfit(&asr, &lib(toy::asr_batch(7, 8, 8, 2, 7))?, 200, lr))?;
    let asr_ratio = losses[199] / losses[0];
    check(asr_ratio < 0.5, || format!("ASR loss ratio {asr_ratio:.3}"))?;

    let disp = lib(DistgDisp::<f32>::new(
        DistgDispConfig {
            ang_res: 5,
            channels: 8,
            n_spatial_blocks: 2,
            levels: DisparityLevelSet::default(),
            n_agg_convs: 3,
            share_cost_weights: true,
        },
        1,
    ))?;
    let batch = lib(toy::disp_batch(5, 16, 16, &[-2, -1, 0, 1, 2], 7))?;
    lib(train_overfit(&disp, &batch, 500, 1e-3))?;
    let pred = lib(disp.infer(&batch.input))?;
    let flat = |t: &Tensor<f32>| t.clone().reshape(&[t.shape()[0] * t.shape()[1], t.shape()[2]]);
    let mae = lib(distg::metrics::mae(&lib(flat(&pred))?, &lib(flat(&batch.target))?))?;
    check(mae < 0.25, || format!("Disp MAE {mae:.4} px"))?;
    Ok(format!(
        "SSR loss ratio {ssr_ratio:.3}, ASR {asr_ratio:.3} after 200 steps; Disp MAE {mae:.4} px after 500"
    ))
}

fn ablation_structure() -> Outcome {
    let (a, h, w) = (3, 5, 5);
    let spatial_only = DistgSsrConfig {
        ang_res: a,
        channels: 4,
        n_groups: 1,
        n_blocks: 2,
        upscale: 2,
        branches: BranchToggles {
            spatial: true,
            angular: false,
            epi: false,
        },
        epi_weight_sharing: true,
    };
    let net = lib(DistgSsr::<f64>::new(spatial_only.clone(), 3))?;
    let data = random::<f64>(&mut rng(606), &[a * a * h * w]).into_data();
    let lf = lib(LightField::new(a, a, h, w, 1, data.clone()))?;
    let base = lib(net.super_resolve(&lf))?;
    for (pu, pv) in [(0, 0), (1, 2), (2, 1)] {
        let mut bumped = data.clone();
        bumped[((pu * a + pv) * h + 2) * w + 3] += 0.5;
        let out = lib(net.super_resolve(&lib(LightField::new(a, a, h, w, 1, bumped))?))?;
        for u in 0..a {
            for v in 0..a {
                let changed = base.view(u, v) != out.view(u, v);
                check(changed == ((u, v) == (pu, pv)), || {
                    format!("perturbing view ({pu},{pv}) changed={changed} at view ({u},{v})")
                })?;
            }
        }
    }

    let no_epi = DistgSsrConfig {
        branches: BranchToggles {
            spatial: true,
            angular: true,
            epi: false,
        },
        ..spatial_only
    };
    let net = lib(DistgSsr::<f32>::new(no_epi, 0))?;
    let mut buf = Vec::new();
    write_checkpoint(net.store(), &mut buf).map_err(|e| e.to_string())?;
    let names: Vec<String> = lib(read_manifest(&mut &buf[..]))?.into_iter().map(|e| e.name).collect();
    let leaked: Vec<&String> = names.iter().filter(|n| n.contains("efe")).collect();
    check(leaked.is_empty(), || format!("EFE parameters present: {leaked:?}"))?;
    Ok(format!("3 perturbed views stayed local; {} manifest entries without EFE", names.len()))
}

fn efficiency() -> Outcome {
    let cfg = BenchConfig::default();
    let (ds, sc) = lib(bench_cost_volume(&cfg))?;
    let (fast, slow) = (ds.stage(Stage::CostVolume), sc.stage(Stage::CostVolume));
    check(ds.speedup >= 1.5, || format!("speedup {:.2}x ({fast:.1} ms vs {slow:.1} ms)", ds.speedup))?;
    Ok(format!(
        "A=9 |D|=9 64x64 C=8: DS-AFE {fast:.1} ms vs shift-and-concat {slow:.1} ms ({} shifts), {:.2}x",
        sc.shifts, ds.speedup
    ))
}

fn metric_sanity() -> Outcome {
    let mut r = rng(707);
    let a = Tensor::<f64>::from_fn(&[32, 32], |_| r.random_range(0.0..0.99));
    let b = a.map(|v| v + 0.01);
    let p = lib(psnr(&a, &b, 1.0))?;
    check((p - 40.0).abs() <= 1e-6, || format!("PSNR {p}"))?;
    let s = lib(ssim(&a, &a))?;
    check((s - 1.0).abs() <= 1e-12, || format!("SSIM(a, a) = {s}"))?;

    let c = Tensor::<f64>::from_fn(&[32, 32], |_| r.random_range(0.0..1.0));
    let (x, y) = (a.data(), c.data());
    let n = x.len() as f64;
    let mse = 100.0 * x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / n;
    let got = lib(mse100(&a, &c))?;
    check((got - mse).abs() <= 1e-9, || format!("MSE x100 {got} vs {mse}"))?;
    for eps in [0.07, 0.03, 0.01] {
        let bad = 100.0 * x.iter().zip(y).filter(|(p, q)| (*p - *q).abs() > eps).count() as f64 / n;
        let got = lib(badpix(&a, &c, eps))?;
        check((got - bad).abs() <= 1e-9, || format!("BadPix {eps}: {got} vs {bad}"))?;
    }

    let (ang, h, w, d) = (7usize, 6usize, 12usize, 1i64);
    let margin = d.unsigned_abs() as usize * (ang - 1);
    let tex = lib(smooth_texture(h + margin, w + margin, 2, &mut rng(708)))?;
    let lf: LightField<f64> = lib(plane_lf(&tex, ang, h, w, d))?;
    let mut compared = 0;
    for u in 0..ang {
        for y in 0..h {
            let epi = lib(extract_epi(&lf, EpiOrientation::Horizontal, u, y))?;
            for v in 0..ang - 1 {
                for x in 0..w - d as usize {
                    let (next, shifted) = (epi.at(v + 1, x), epi.at(v, x + d as usize));
                    check(next == shifted, || format!("EPI u={u} y={y} v={v} x={x}: {next} vs {shifted}"))?;
                    compared += 1;
                }
            }
        }
    }
    Ok(format!("PSNR {p:.9} dB, SSIM(a, a) {s}, {compared} EPI samples follow the shift"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("kernel-oracle equivalence", kernel_oracles),
        ("DS-AFE correctness", ds_afe_correctness),
        ("layout round trips", layout_round_trips),
        ("differentiation", differentiation),
        ("shape contracts", shape_contracts),
        ("trainability", trainability),
        ("ablation structure", ablation_structure),
        ("efficiency", efficiency),
        ("metric sanity", metric_sanity),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed == 0 {
        println!("acceptance: all {} criteria passed", criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of {} criteria failed", criteria.len());
        ExitCode::FAILURE
    }
}
