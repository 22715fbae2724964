//! Gradient cases for every differentiable op, plus the end-to-end model
//! check.

use rand::Rng;
use siamflood::loss::{LossConfig, LossSums};
use siamflood::model::{ModelConfig, ModelParams, Network};
use siamflood::tensor::{BatchNormState, BnMode, Tape, Tensor, Var};
use siamflood::Result;

use super::{normal, rel_err, rng, separated, uniform, FD_STEP};

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

pub struct GradCase {
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

pub const GRAD_OPS: [&str; 17] = [
    "conv2d",
    "conv2d_strided_padded",
    "maxpool2",
    "global_avg_pool",
    "upsample_nearest2x",
    "batchnorm_train",
    "batchnorm_eval",
    "relu",
    "sigmoid",
    "dice_loss",
    "focal_loss",
    "combined_loss",
    "conv_relu",
    "mean",
    "concat_and_slice",
    "scale_channels_spatial",
    "add_mul_scale",
];

fn binary(r: &mut impl Rng, shape: &[usize], p_one: f64) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| if r.random_bool(p_one) { 1.0 } else { 0.0 }).collect()).unwrap()
}

/// Direct 3×3, pad 1, stride 1 convolution of one sample.
fn naive_conv3(x: &Tensor, w: &Tensor) -> Vec<f32> {
    let [_, c, h, wd] = x.dims4().unwrap();
    let k = w.shape()[0];
    let mut out = vec![0.0f32; k * h * wd];
    for o in 0..k {
        for y in 0..h {
            for xx in 0..wd {
                let mut acc = 0.0f32;
                for ch in 0..c {
                    for i in 0..3 {
                        for j in 0..3 {
                            let (sy, sx) = ((y + i) as isize - 1, (xx + j) as isize - 1);
                            if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                                acc += x.data()[(ch * h + sy as usize) * wd + sx as usize]
                                    * w.data()[((o * c + ch) * 3 + i) * 3 + j];
                            }
                        }
                    }
                }
                out[(o * h + y) * wd + xx] = acc;
            }
        }
    }
    out
}

/// Conv input and weights whose outputs all stay 0.05 away from the ReLU
/// kink, far beyond what a `FD_STEP` probe can move them.
fn conv_clear_of_zero(r: &mut rand_chacha::ChaCha8Rng) -> Vec<Tensor> {
    loop {
        let x = normal(r, &[1, 2, 6, 6]);
        let w = normal(r, &[3, 2, 3, 3]);
        if naive_conv3(&x, &w).iter().all(|v| v.abs() > 0.05) {
            return vec![x, w];
        }
    }
}

/// Inputs and graph for `op` under `seed`.
pub fn grad_case(op: &str, seed: u64) -> GradCase {
    let mut r = rng(seed);
    let case = |inputs: Vec<Tensor>, build: Build| GradCase { inputs, build };
    match op {
        "conv2d" => case(
            vec![normal(&mut r, &[2, 3, 8, 8]), normal(&mut r, &[4, 3, 3, 3]), normal(&mut r, &[4])],
            Box::new(|t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 1)),
        ),
        "conv2d_strided_padded" => {
            let k = [1, 2, 3, 5][(seed % 4) as usize];
            let stride = 1 + (seed / 4 % 2) as usize;
            let pad = (seed / 8 % 3) as usize;
            case(
                vec![normal(&mut r, &[1, 2, 7, 6]), normal(&mut r, &[3, 2, k, k])],
                Box::new(move |t, v| t.conv2d(v[0], v[1], None, stride, pad)),
            )
        }
        "maxpool2" => case(vec![separated(&mut r, &[1, 2, 8, 8])], Box::new(|t, v| t.maxpool2(v[0]))),
        "global_avg_pool" => case(vec![normal(&mut r, &[2, 3, 5, 5])], Box::new(|t, v| t.global_avg_pool(v[0]))),
        "upsample_nearest2x" => case(vec![normal(&mut r, &[1, 2, 4, 4])], Box::new(|t, v| t.upsample_nearest2x(v[0]))),
        "batchnorm_train" | "batchnorm_eval" => {
            let mode = if op == "batchnorm_train" { BnMode::Train } else { BnMode::Eval };
            let mut state = BatchNormState::new(3);
            state.running_mean = uniform(&mut r, &[3], -0.5, 0.5).into_data();
            state.running_var = uniform(&mut r, &[3], 0.5, 2.0).into_data();
            case(
                vec![normal(&mut r, &[2, 3, 4, 4]), normal(&mut r, &[3]), normal(&mut r, &[3])],
                Box::new(move |t, v| t.batchnorm(v[0], v[1], v[2], &mut state.clone(), mode)),
            )
        }
        "relu" => case(vec![separated(&mut r, &[2, 3, 4, 4])], Box::new(|t, v| t.relu(v[0]))),
        "sigmoid" => case(vec![normal(&mut r, &[2, 3, 4, 4])], Box::new(|t, v| t.sigmoid(v[0]))),
        "dice_loss" | "focal_loss" | "combined_loss" => {
            let shape = [2, 1, 3, 3];
            let probs = uniform(&mut r, &shape, 0.05, 0.95);
            let target = binary(&mut r, &shape, 0.4);
            let mask = binary(&mut r, &shape, 0.85);
            let cfg = LossConfig {
                alpha: r.random_range(0.0..1.0),
                gamma: [0.0, 1.0, 2.0, 3.5][(seed % 4) as usize],
                smooth: 1.0,
            };
            let op = op.to_string();
            case(
                vec![probs],
                Box::new(move |t, v| {
                    let term = match op.as_str() {
                        "dice_loss" => t.dice_loss(v[0], &target, &mask, cfg.smooth)?,
                        "focal_loss" => t.focal_loss(v[0], &target, &mask, cfg.gamma)?,
                        _ => t.combined_loss(v[0], &target, &mask, &cfg)?,
                    };
                    Ok(term.value)
                }),
            )
        }
        "conv_relu" => case(
            conv_clear_of_zero(&mut r),
            Box::new(|t, v| {
                let y = t.conv2d(v[0], v[1], None, 1, 1)?;
                t.relu(y)
            }),
        ),
        "mean" => case(vec![normal(&mut r, &[2, 3, 4])], Box::new(|t, v| t.mean(v[0]))),
        "concat_and_slice" => case(
            vec![normal(&mut r, &[2, 2, 3, 3]), normal(&mut r, &[2, 1, 3, 3])],
            Box::new(|t, v| {
                let c = t.concat_channels(v[0], v[1])?;
                let b = t.concat_batch(c, c)?;
                t.slice_batch(b, 1, 2)
            }),
        ),
        "scale_channels_spatial" => case(
            vec![normal(&mut r, &[2, 3, 4, 4]), normal(&mut r, &[2, 3, 1, 1]), normal(&mut r, &[2, 1, 4, 4])],
            Box::new(|t, v| {
                let a = t.scale_channels(v[0], v[1])?;
                t.scale_spatial(a, v[2])
            }),
        ),
        "add_mul_scale" => case(
            vec![normal(&mut r, &[2, 3, 4]), normal(&mut r, &[2, 3, 4])],
            Box::new(|t, v| {
                let s = t.add(v[0], v[1])?;
                let p = t.mul(s, v[0])?;
                t.scale(p, -1.5)
            }),
        ),
        other => panic!("no gradient case for {other}"),
    }
}

/// Worst relative error of `op` over `seeds`.
pub fn worst_grad_error(op: &str, seeds: std::ops::Range<u64>) -> f64 {
    seeds
        .map(|seed| {
            let case = grad_case(op, seed);
            super::grad_check(&case.inputs, seed ^ 0x9e37_79b9, |t, v| (case.build)(t, v))
        })
        .fold(0.0, f64::max)
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        input_size: 16,
        widths: [2, 2, 2, 2],
        reduction: 2,
    }
}

/// Outcome of one end-to-end gradient check.
#[derive(Clone, Copy, Debug)]
pub struct ModelGradCheck {
    /// Analytic vs. numeric over the probes where the loss is smooth.
    pub rel_err: f64,
    pub smooth_probes: usize,
    pub probes: usize,
}

/// Finite-difference check of the combined loss of the whole network with
/// respect to one random coordinate of every trainable parameter.
///
/// The analytic gradient comes from one train-mode backward pass; the
/// numeric side evaluates the loss sums in `f64` from the network's
/// probabilities. Each probe takes one-sided quotients at `FD_STEP`,
/// `FD_STEP / 2` and `FD_STEP / 4` on both sides. A side counts as smooth when
/// its quotients move linearly with the step, and is then
/// Richardson-extrapolated. A ReLU or max-pool switch inside the interval
/// breaks that linearity or makes the two sides disagree, and such probes are
/// excluded. The decision never looks at the analytic gradient.
pub fn model_grad_check(seed: u64) -> ModelGradCheck {
    let cfg = tiny_config();
    let loss_cfg = LossConfig::default();
    let mut r = rng(seed);
    let params = ModelParams::init(&cfg, seed).unwrap();
    let shape = [2, 3, 16, 16];
    let pre = uniform(&mut r, &shape, 0.0, 1.0);
    let post = uniform(&mut r, &shape, 0.0, 1.0);
    let target = binary(&mut r, &[2, 1, 16, 16], 0.3);
    let mask = binary(&mut r, &[2, 1, 16, 16], 0.95);

    let probs_of = |params: &ModelParams, requires_grad: bool| {
        let mut params = params.clone();
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, requires_grad);
        let a = tape.constant(pre.clone());
        let b = tape.constant(post.clone());
        let probs = Network::new(&mut params, BnMode::Train).forward(&mut tape, &vars, a, b).unwrap();
        (tape, vars, probs, params)
    };

    let (mut tape, vars, probs, params_after) = probs_of(&params, true);
    let loss = tape.combined_loss(probs, &target, &mask, &loss_cfg).unwrap();
    tape.backward(loss.value).unwrap();

    let mut analytic = Vec::new();
    let mut probes = Vec::new();
    for (name, var) in vars.iter(&params_after) {
        let g = tape.grad(var).unwrap();
        let i = r.random_range(0..g.len());
        analytic.push(g.data()[i] as f64);
        probes.push((name.to_string(), i));
    }

    let objective = |p: &ModelParams| {
        let (tape, _, probs, _) = probs_of(p, false);
        LossSums::from_slices(tape.value(probs).data(), target.data(), mask.data(), loss_cfg.gamma).combined(&loss_cfg)
    };
    let base = objective(&params);
    let mut kept_analytic = Vec::new();
    let mut kept_numeric = Vec::new();
    for ((name, i), &a) in probes.iter().zip(&analytic) {
        let mut work = params.clone();
        let orig = work.get(name).unwrap().data()[*i];
        let mut quotient = |d: f32| {
            work.get_mut(name).unwrap().data_mut()[*i] = orig + d;
            (objective(&work) - base) / ((orig + d) as f64 - orig as f64)
        };
        let mut side = |sign: f32| {
            let q = [1.0, 0.5, 0.25].map(|f| quotient(sign * f * FD_STEP));
            // a smooth side is linear in the step: successive gaps halve
            let residual = ((q[0] - q[1]) - 2.0 * (q[1] - q[2])).abs();
            let estimate = 2.0 * q[2] - q[1];
            (residual <= close(estimate, estimate)).then_some(estimate)
        };
        if let (Some(right), Some(left)) = (side(1.0), side(-1.0)) {
            if (right - left).abs() <= close(right, left) {
                kept_analytic.push(a);
                kept_numeric.push((right + left) / 2.0);
            }
        }
    }
    ModelGradCheck {
        rel_err: rel_err(&kept_analytic, &kept_numeric),
        smooth_probes: kept_numeric.len(),
        probes: probes.len(),
    }
}

/// Slack allowed between finite-difference estimates of a smooth probe:
/// 1% relative plus a floor above the `f32` evaluation noise.
fn close(a: f64, b: f64) -> f64 {
    0.01 * a.abs().max(b.abs()) + 1e-4
}
