//! Siamese and scSE contract checks shared by the model and acceptance tests.

use rand::Rng;
use siamflood::loss::LossConfig;
use siamflood::model::{ModelConfig, ModelParams, Network};
use siamflood::tensor::{BnMode, Tape, Tensor, Var};

use super::{normal, rel_err, rng, uniform};

pub fn config(size: usize, widths: [usize; 4]) -> ModelConfig {
    ModelConfig {
        input_size: size,
        widths,
        reduction: 2,
    }
}

pub fn bits(t: &Tensor) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// Encodes a batch holding the same random tile pair twice and reports
/// whether the two halves of every tap agree bit for bit.
pub fn identical_streams_match(seed: u64, mode: BnMode) -> bool {
    let c = config(32, [4, 8, 8, 8]);
    let mut params = ModelParams::init(&c, seed).unwrap();
    let x = uniform(&mut rng(seed + 1), &[2, 3, 32, 32], 0.0, 1.0);
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let stacked = tape.constant(Tensor::new(&[4, 3, 32, 32], [x.data(), x.data()].concat()).unwrap());
    let taps = Network::new(&mut params, mode).encoder_forward(&mut tape, &vars, stacked).unwrap();
    taps.iter().all(|&tap| {
        let d = tape.value(tap).data();
        let half = d.len() / 2;
        d[..half].iter().zip(&d[half..]).all(|(a, b)| a.to_bits() == b.to_bits())
    })
}

/// Relative gap between the encoder gradient of the shared network and the
/// sum of the gradients of two private encoder copies, one per stream.
///
/// Uses eval-mode batch norm: in train mode the shared pass normalizes the
/// stacked pair with joint statistics, which private copies cannot share.
pub fn siamese_gradient_gap(seed: u64) -> f64 {
    let c = config(16, [4, 4, 8, 8]);
    let loss_cfg = LossConfig::default();
    let mut r = rng(seed);
    let mut params = ModelParams::init(&c, seed).unwrap();
    let pre = uniform(&mut r, &[2, 3, 16, 16], 0.0, 1.0);
    let post = uniform(&mut r, &[2, 3, 16, 16], 0.0, 1.0);
    let target = Tensor::new(&[2, 1, 16, 16], (0..512).map(|_| r.random_range(0..2) as f32).collect()).unwrap();
    let mask = Tensor::full(&[2, 1, 16, 16], 1.0);

    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, true);
    let (a, b) = (tape.constant(pre.clone()), tape.constant(post.clone()));
    let probs = Network::new(&mut params, BnMode::Eval).forward(&mut tape, &vars, a, b).unwrap();
    let loss = tape.combined_loss(probs, &target, &mask, &loss_cfg).unwrap();
    tape.backward(loss.value).unwrap();

    let mut split = Tape::new();
    let vars_pre = params.bind(&mut split, true);
    let vars_post = params.bind(&mut split, true);
    let (a, b) = (split.constant(pre), split.constant(post));
    let mut net = Network::new(&mut params, BnMode::Eval);
    let ta = net.encoder_forward(&mut split, &vars_pre, a).unwrap();
    let tb = net.encoder_forward(&mut split, &vars_post, b).unwrap();
    let fused = net.fuse(&mut split, &vars_pre, &ta, &tb).unwrap();
    let logits = net.decoder_forward(&mut split, &vars_pre, &fused).unwrap();
    let probs = split.sigmoid(logits).unwrap();
    let loss = split.combined_loss(probs, &target, &mask, &loss_cfg).unwrap();
    split.backward(loss.value).unwrap();

    let grads = |t: &Tape, v: Var| t.grad(v).unwrap().data().iter().map(|&x| x as f64).collect::<Vec<_>>();
    let mut shared = Vec::new();
    let mut summed = Vec::new();
    for ((name, v), ((_, va), (_, vb))) in vars.iter(&params).zip(vars_pre.iter(&params).zip(vars_post.iter(&params))) {
        if name.starts_with("enc") {
            shared.extend(grads(&tape, v));
            summed.extend(grads(&split, va).iter().zip(grads(&split, vb)).map(|(x, y)| x + y));
        }
    }
    rel_err(&shared, &summed)
}

pub fn scse_of(params: &mut ModelParams, stage: usize, x: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let y = Network::new(params, BnMode::Eval).scse(&mut tape, &vars, stage, xv).unwrap();
    tape.value(y).clone()
}

/// scSE with every excitation parameter zeroed returns its input bit for bit
/// at all four stages.
pub fn zeroed_scse_is_identity(seed: u64) -> bool {
    let c = config(32, [4, 8, 8, 16]);
    let mut params = ModelParams::init(&c, seed).unwrap();
    let names: Vec<String> = params
        .entries()
        .iter()
        .filter(|e| e.name.starts_with("scse"))
        .map(|e| e.name.clone())
        .collect();
    for n in names {
        params.get_mut(&n).unwrap().data_mut().fill(0.0);
    }
    (1..=4).all(|stage| {
        let s = 32 >> stage;
        let x = normal(&mut rng(seed * 4 + stage as u64), &[2, c.widths[stage - 1], s, s]);
        bits(&scse_of(&mut params, stage, &x)) == bits(&x)
    })
}

/// Random widths, batch and spatial size; scSE output shape equals input
/// shape and stays within twice the input's largest magnitude.
pub fn scse_preserves_shape(seed: u64) -> bool {
    let mut r = rng(seed);
    let widths = [2, 4, 6, 8].map(|w: usize| w * r.random_range(1..3));
    let size = 16 * r.random_range(1..4);
    let mut params = ModelParams::init(&config(size, widths), seed).unwrap();
    (1..=4).all(|stage| {
        let s = size >> stage;
        let n = r.random_range(1..3);
        let x = normal(&mut r, &[n, widths[stage - 1], s, s]);
        let y = scse_of(&mut params, stage, &x);
        let max_in = x.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        y.shape() == x.shape() && y.data().iter().all(|v| v.abs() <= 2.0 * max_in)
    })
}
