//! Central finite-difference checks of the reverse-mode gradients, for single
//! ops and for whole networks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{Graph, Mode, Var};
use crate::error::{bail, Result};
use crate::nets::{l1_objective, Network, TrainBatch};
use crate::tensor::Tensor;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// `(f(x + eps·e_i) - f(x - eps·e_i)) / 2eps` for every element `i`.
pub fn numeric_gradient(
    mut f: impl FnMut(&Tensor<f64>) -> Result<f64>,
    x: &Tensor<f64>,
    eps: f64,
) -> Result<Tensor<f64>> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    pub eps: f64,
    pub floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { eps: 1e-5, floor: 1e-5 }
    }
}

#[derive(Clone, Debug)]
pub struct OpCheck {
    /// Worst relative error over every element of every input.
    pub max_rel_err: f64,
    /// `(input, element)` where the worst error occurred.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Checks the gradient of `build` with respect to every input.
///
/// The scalar objective is the mean absolute difference to a fixed target
/// placed between 0.5 and 1.5 away from each output element, on a random
/// side, so the upstream gradient has random signs and no element sits near
/// the kink of `|·|`.
pub fn check_op(
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    tol: Tolerances,
    seed: u64,
) -> Result<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let forward = |xs: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let y = build(&mut g, &vars)?;
        Ok((g, vars, y))
    };
    let (g0, _, y0) = forward(inputs)?;
    let y = g0.value(y0);
    let target = Tensor::new(
        y.shape().to_vec(),
        y.data()
            .iter()
            .map(|&v| {
                let off = rng.random_range(0.5..1.5);
                if rng.random_bool(0.5) {
                    v + off
                } else {
                    v - off
                }
            })
            .collect(),
    )?;
    let loss_of = |xs: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let (mut g, vars, y) = forward(xs)?;
        let t = g.constant(target.clone());
        let loss = g.l1_loss(y, t)?;
        Ok((g, vars, loss))
    };

    let (g, vars, loss) = loss_of(inputs)?;
    let grads = g.backward(loss)?;
    let mut report = OpCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let numeric = numeric_gradient(
            |probe| {
                let mut xs = inputs.to_vec();
                xs[k] = probe.clone();
                let (g, _, l) = loss_of(&xs)?;
                Ok(g.value(l).data()[0])
            },
            &inputs[k],
            tol.eps,
        )?;
        for (i, (a, n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
            let e = relative_error(*a, *n, tol.floor);
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = (k, i);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct SpotCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Compares the L1-objective gradient of `count` randomly chosen parameter
/// entries with central differences. Entries are drawn from as many distinct
/// parameter tensors as possible.
pub fn check_network<N: Network<f64> + ?Sized>(
    net: &N,
    batch: &TrainBatch<f64>,
    count: usize,
    tol: Tolerances,
    seed: u64,
) -> Result<Vec<SpotCheck>> {
    let params = net.store().params().to_vec();
    if params.is_empty() {
        bail!(InvalidArgument, "network has no parameters");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..params.len()).collect();
    order.shuffle(&mut rng);
    let picks: Vec<(usize, usize)> = (0..count)
        .map(|k| {
            let p = order[k % order.len()];
            (p, rng.random_range(0..params[p].read(Tensor::len)))
        })
        .collect();

    let loss = || -> Result<f64> {
        let mut g = Graph::new();
        let l = l1_objective(net, &mut g, batch, Mode::Train)?;
        Ok(g.value(l).data()[0])
    };

    net.store().zero_grad();
    let mut g = Graph::new();
    let l = l1_objective(net, &mut g, batch, Mode::Train)?;
    g.backward(l)?;

    let mut out = Vec::with_capacity(count);
    for (p, i) in picks {
        let param = &params[p];
        let analytic = param.grad().data()[i];
        let orig = param.read(|t| t.data()[i]);
        param.update(|t| t.data_mut()[i] = orig + tol.eps);
        let up = loss()?;
        param.update(|t| t.data_mut()[i] = orig - tol.eps);
        let down = loss()?;
        param.update(|t| t.data_mut()[i] = orig);
        let numeric = (up - down) / (2.0 * tol.eps);
        out.push(SpotCheck {
            param: param.name().to_string(),
            index: i,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric, tol.floor),
        });
    }
    Ok(out)
}

/// Worst-case result of one named op check.
#[derive(Clone, Debug)]
pub struct NamedCheck {
    pub name: String,
    pub max_rel_err: f64,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Gradient checks of every differentiable graph op, including each
/// extractor geometry, on small random inputs.
pub fn op_suite(seed: u64, tol: Tolerances) -> Result<Vec<NamedCheck>> {
    use crate::engine::graph::BnStats;
    use crate::engine::{Axis, Conv3dSpec};
    use crate::kernels::{make_afe, make_ds_afe, make_efe, make_sfe, EvenAngular};
    use crate::lightfield::EpiOrientation;
    use std::sync::Mutex;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut run = |name: &str,
                   inputs: Vec<Tensor<f64>>,
                   build: &dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
                   rng: &mut ChaCha8Rng|
     -> Result<()> {
        let r = check_op(&inputs, build, tol, rng.random())?;
        out.push(NamedCheck {
            name: name.to_string(),
            max_rel_err: r.max_rel_err,
        });
        Ok(())
    };

    let a = 3;
    let mac = |rng: &mut ChaCha8Rng, c: usize| rand_tensor(rng, &[2, c, a * 3, a * 4]);
    let extractors = [
        ("conv2d_sfe", make_sfe(a, 2, 3)?),
        ("conv2d_afe", make_afe(a, 2, 3)?),
        ("conv2d_efe_h", make_efe(a, EpiOrientation::Horizontal, 2, 3, EvenAngular::Reject)?),
        ("conv2d_efe_v", make_efe(a, EpiOrientation::Vertical, 2, 3, EvenAngular::Reject)?),
        ("conv2d_ds_afe_neg", make_ds_afe(a, -1, 2, 3)?),
        ("conv2d_ds_afe_pos", make_ds_afe(a, 2, 2, 3)?),
    ];
    for (name, spec) in extractors {
        let inputs = vec![mac(&mut rng, 2), rand_tensor(&mut rng, &spec.weight_shape()), rand_tensor(&mut rng, &[3])];
        let conv = spec.conv;
        run(name, inputs, &|g, v| g.conv2d(v[0], v[1], Some(v[2]), &conv), &mut rng)?;
    }
    let even = make_efe(2, EpiOrientation::Horizontal, 1, 2, EvenAngular::Asymmetric)?;
    let inputs = vec![rand_tensor(&mut rng, &[1, 1, 6, 8]), rand_tensor(&mut rng, &even.weight_shape())];
    run("conv2d_efe_even", inputs, &|g, v| g.conv2d(v[0], v[1], None, &even.conv), &mut rng)?;

    let c3 = Conv3dSpec::new(2, 2, [3, 3, 3]).with_padding([1, 1, 1]);
    let inputs = vec![rand_tensor(&mut rng, &[1, 2, 3, 4, 4]), rand_tensor(&mut rng, &[2, 2, 3, 3, 3]), rand_tensor(&mut rng, &[2])];
    run("conv3d", inputs, &|g, v| g.conv3d(v[0], v[1], Some(v[2]), &c3), &mut rng)?;

    run("leaky_relu", vec![mac(&mut rng, 2)], &|g, v| Ok(g.leaky_relu(v[0], 0.1)), &mut rng)?;

    let stats = Mutex::new(BnStats {
        mean: Tensor::zeros(&[2]),
        var: Tensor::ones(&[2]),
    });
    let inputs = vec![mac(&mut rng, 2), rand_tensor(&mut rng, &[2]), rand_tensor(&mut rng, &[2])];
    run(
        "batch_norm_train",
        inputs.clone(),
        &|g, v| g.batch_norm(v[0], v[1], v[2], &stats, crate::engine::Mode::Train),
        &mut rng,
    )?;
    run(
        "batch_norm_eval",
        inputs,
        &|g, v| g.batch_norm(v[0], v[1], v[2], &stats, crate::engine::Mode::Eval),
        &mut rng,
    )?;

    let x = rand_tensor(&mut rng, &[1, 8, 2, 3]);
    run("pixel_shuffle_2d", vec![x], &|g, v| g.pixel_shuffle_2d(v[0], 2), &mut rng)?;
    let x = rand_tensor(&mut rng, &[1, 6, 2, 3]);
    run("pixel_shuffle_1d_w", vec![x.clone()], &|g, v| g.pixel_shuffle_1d(v[0], 3, Axis::W), &mut rng)?;
    run("pixel_shuffle_1d_h", vec![x], &|g, v| g.pixel_shuffle_1d(v[0], 3, Axis::H), &mut rng)?;
    run("macpi_to_sai", vec![mac(&mut rng, 2)], &|g, v| g.macpi_to_sai(v[0], a), &mut rng)?;
    run("sai_to_macpi", vec![mac(&mut rng, 2)], &|g, v| g.sai_to_macpi(v[0], a), &mut rng)?;
    let inputs = vec![mac(&mut rng, 1), mac(&mut rng, 2)];
    run("concat", inputs, &|g, v| g.concat(&[v[0], v[1]], 1), &mut rng)?;
    let inputs = vec![mac(&mut rng, 2), mac(&mut rng, 2)];
    run("add", inputs, &|g, v| g.add(v[0], v[1]), &mut rng)?;
    run("reshape", vec![mac(&mut rng, 2)], &|g, v| g.reshape(v[0], &[4, 9, 12]), &mut rng)?;
    let x = rand_tensor(&mut rng, &[2, 3, 4, 5]);
    run("permute", vec![x.clone()], &|g, v| g.permute(v[0], &[2, 0, 3, 1]), &mut rng)?;
    run("flip", vec![x.clone()], &|g, v| g.flip(v[0], &[1, 3]), &mut rng)?;
    run(
        "sum",
        vec![x],
        &|g, v| {
            let s = g.sum(v[0]);
            g.reshape(s, &[1])
        },
        &mut rng,
    )?;
    let inputs = vec![rand_tensor(&mut rng, &[2, 3, 3]), rand_tensor(&mut rng, &[2, 3, 3])];
    run("l1_loss", inputs, &|g, v| g.l1_loss(v[0], v[1]), &mut rng)?;
    let levels = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let x = rand_tensor(&mut rng, &[2, 5, 3, 3]);
    run("regress_disparity", vec![x], &|g, v| g.regress_disparity(v[0], &levels), &mut rng)?;
    Ok(out)
}

/// Worst spot-check error for each tiny network, `count` entries each.
pub fn network_suite(seed: u64, count: usize, tol: Tolerances) -> Result<Vec<(String, Vec<SpotCheck>)>> {
    use crate::kernels::DisparityLevelSet;
    use crate::nets::ssr::BranchToggles;
    use crate::nets::{toy, DistgAsr, DistgAsrConfig, DistgDisp, DistgDispConfig, DistgSsr, DistgSsrConfig};

    let ssr = DistgSsr::<f64>::new(
        DistgSsrConfig {
            ang_res: 3,
            channels: 4,
            n_groups: 1,
            n_blocks: 1,
            upscale: 2,
            branches: BranchToggles::default(),
            epi_weight_sharing: true,
        },
        seed,
    )?;
    let ssr_batch = toy::ssr_batch::<f64>(3, 4, 4, 2, 2, seed)?;
    let asr = DistgAsr::<f64>::new(
        DistgAsrConfig {
            ang_res_in: 2,
            ang_res_out: 3,
            channels: 4,
            n_groups: 1,
            n_blocks: 1,
            epi_weight_sharing: true,
        },
        seed,
    )?;
    let asr_batch = toy::asr_batch::<f64>(3, 4, 4, 2, seed)?;
    let disp = DistgDisp::<f64>::new(
        DistgDispConfig {
            ang_res: 3,
            channels: 4,
            n_spatial_blocks: 1,
            levels: DisparityLevelSet::range(-1, 1)?,
            n_agg_convs: 2,
            share_cost_weights: true,
        },
        seed,
    )?;
    let disp_batch = toy::disp_batch::<f64>(3, 4, 4, &[-1, 1], seed)?;
    Ok(vec![
        ("ssr".to_string(), check_network(&ssr, &ssr_batch, count, tol, seed)?),
        ("asr".to_string(), check_network(&asr, &asr_batch, count, tol, seed)?),
        ("disp".to_string(), check_network(&disp, &disp_batch, count, tol, seed)?),
    ])
}
