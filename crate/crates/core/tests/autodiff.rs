mod common;

use common::*;
use distg::engine::{Conv2dSpec, Conv3dSpec};
use distg::gradcheck::{check_network, check_op, op_suite, Tolerances};
use distg::kernels::DisparityLevelSet;
use distg::nets::{regress_disparity, toy, DistgAsr, DistgAsrConfig, DistgDisp, DistgDispConfig, DistgSsr, DistgSsrConfig};
use distg::Tensor;
use proptest::prelude::*;

const OP_TOL: f64 = 1e-4;
const NET_TOL: f64 = 1e-3;

#[test]
fn every_op_passes_finite_differences() {
    let report = op_suite(17, Tolerances::default()).unwrap();
    assert!(report.len() >= 15);
    for check in report {
        assert!(check.max_rel_err <= OP_TOL, "{}: {:e}", check.name, check.max_rel_err);
    }
}

fn spot_check_distinct(checks: &[distg::gradcheck::SpotCheck]) {
    let mut names: Vec<&str> = checks.iter().map(|c| c.param.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    assert!(names.len() >= 10, "only {} distinct parameters", names.len());
    for c in checks {
        assert!(c.rel_err <= NET_TOL, "{}[{}]: analytic {} numeric {}", c.param, c.index, c.analytic, c.numeric);
    }
}

#[test]
fn ssr_parameter_gradients() {
    let cfg = DistgSsrConfig {
        ang_res: 3,
        channels: 4,
        n_groups: 1,
        n_blocks: 1,
        upscale: 2,
        ..DistgSsrConfig::default()
    };
    let net = DistgSsr::<f64>::new(cfg, 2).unwrap();
    let batch = toy::ssr_batch(3, 3, 3, 2, 1, 5).unwrap();
    spot_check_distinct(&check_network(&net, &batch, 16, Tolerances::default(), 1).unwrap());
}

#[test]
fn asr_parameter_gradients() {
    let cfg = DistgAsrConfig {
        ang_res_in: 2,
        ang_res_out: 3,
        channels: 4,
        n_groups: 1,
        n_blocks: 1,
        epi_weight_sharing: false,
    };
    let net = DistgAsr::<f64>::new(cfg, 3).unwrap();
    let batch = toy::asr_batch(3, 3, 3, 1, 6).unwrap();
    spot_check_distinct(&check_network(&net, &batch, 16, Tolerances::default(), 2).unwrap());
}

#[test]
fn disp_parameter_gradients() {
    let cfg = DistgDispConfig {
        ang_res: 3,
        channels: 4,
        n_spatial_blocks: 1,
        levels: DisparityLevelSet::range(-1, 1).unwrap(),
        n_agg_convs: 2,
        share_cost_weights: true,
    };
    let net = DistgDisp::<f64>::new(cfg, 4).unwrap();
    let batch = toy::disp_batch(3, 4, 4, &[-1, 1], 7).unwrap();
    spot_check_distinct(&check_network(&net, &batch, 16, Tolerances::default(), 3).unwrap());
}

#[test]
fn regression_ignores_constant_logit_offset() {
    let mut r = rng(8);
    let levels = DisparityLevelSet::default();
    let logits = random::<f64>(&mut r, &[2, levels.len(), 3, 4]);
    let base = regress_disparity(&logits, &levels).unwrap();
    for shift in [-30.0, 0.25, 50.0] {
        let moved = regress_disparity(&logits.map(|v| v + shift), &levels).unwrap();
        assert!(max_abs_diff(&base, &moved) <= 1e-12, "shift {shift}");
    }
    // a dominant level pulls the estimate onto it
    let mut peaked = Tensor::<f64>::zeros(&[1, levels.len(), 1, 1]);
    peaked.set(&[0, 6, 0, 0], 60.0);
    let d = regress_disparity(&peaked, &levels).unwrap();
    assert!((d.data()[0] - 2.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv2d_gradients_for_random_geometry(
        (h, w) in (2usize..=5, 2usize..=5),
        k in (1usize..=3, 1usize..=3),
        stride in (1usize..=2, 1usize..=2),
        dilation in (1usize..=3, 1usize..=3),
        pad in (0usize..=3, 0usize..=3, 0usize..=3, 0usize..=3),
        seed in any::<u64>(),
    ) {
        let spec = Conv2dSpec::new(2, 2, [k.0, k.1])
            .with_stride([stride.0, stride.1])
            .with_dilation([dilation.0, dilation.1])
            .with_asymmetric_padding([pad.0, pad.1], [pad.2, pad.3]);
        prop_assume!(spec.output_extent([h, w]).is_ok());
        let mut r = rng(seed);
        let inputs = [
            random::<f64>(&mut r, &[1, 2, h, w]),
            random::<f64>(&mut r, &spec.weight_shape()),
            random::<f64>(&mut r, &[2]),
        ];
        let report = check_op(&inputs, |g, v| g.conv2d(v[0], v[1], Some(v[2]), &spec), Tolerances::default(), seed).unwrap();
        prop_assert!(report.max_rel_err <= OP_TOL, "{:e} at {:?}", report.max_rel_err, report.worst);
    }

    #[test]
    fn conv3d_gradients_for_random_geometry(
        d in 2usize..=4,
        k in 1usize..=3,
        pad in 0usize..=1,
        dilation in 1usize..=2,
        seed in any::<u64>(),
    ) {
        let spec = Conv3dSpec::new(2, 1, [k, k, k]).with_padding([pad; 3]).with_dilation([dilation; 3]);
        prop_assume!(d.min(3) + 2 * pad > dilation * (k - 1));
        let mut r = rng(seed);
        let inputs = [
            random::<f64>(&mut r, &[1, 2, d, 3, 3]),
            random::<f64>(&mut r, &spec.weight_shape()),
        ];
        let report = check_op(&inputs, |g, v| g.conv3d(v[0], v[1], None, &spec), Tolerances::default(), seed).unwrap();
        prop_assert!(report.max_rel_err <= OP_TOL, "{:e}", report.max_rel_err);
    }
}
