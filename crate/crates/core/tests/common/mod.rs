//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use siamflood::tensor::{Tape, Tensor, Var};
use siamflood::Result;

pub mod contracts;
pub mod oracles;
pub mod runs;
pub mod suite;

pub const FD_STEP: f32 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Standard normal values whose pairwise gaps all exceed `4·FD_STEP` and
/// which stay that far from zero, so max/relu kinks are never crossed by a
/// finite-difference probe.
pub fn separated(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len: usize = shape.iter().product();
    let margin = 4.0 * FD_STEP;
    let mut out: Vec<f32> = Vec::with_capacity(len);
    while out.len() < len {
        let v: f32 = rng.sample(StandardNormal);
        if v.abs() > margin && out.iter().all(|o| (o - v).abs() > margin) {
            out.push(v);
        }
    }
    Tensor::new(shape, out).unwrap()
}

/// ‖a − b‖₂ / max(‖a‖₂, ‖b‖₂), zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Finite-difference gradient check of `build` with respect to every input.
///
/// The scalar objective is `Σ weight · output`, with `weight` a fixed random
/// projection. The analytic side backpropagates through the tape; the
/// numeric side evaluates the projection in `f64` from the forward values at
/// `x ± h` and takes central differences. Returns the norm-wise relative
/// error over all input coordinates.
pub fn grad_check<F>(inputs: &[Tensor], projection_seed: u64, build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (analytic, projection) = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = build(&mut tape, &vars).unwrap();
        let projection = normal(&mut rng(projection_seed), tape.shape(out));
        let w = tape.constant(projection.clone());
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum(prod).unwrap();
        tape.backward(loss).unwrap();
        let g: Vec<f64> = vars
            .iter()
            .flat_map(|v| tape.grad(*v).unwrap().data().iter().map(|&x| x as f64).collect::<Vec<_>>())
            .collect();
        (g, projection)
    };

    let objective = |inputs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.value(out)
            .data()
            .iter()
            .zip(projection.data())
            .map(|(&y, &w)| y as f64 * w as f64)
            .sum()
    };

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for t in 0..inputs.len() {
        for i in 0..inputs[t].len() {
            let orig = inputs[t].data()[i];
            work[t].data_mut()[i] = orig + FD_STEP;
            let plus = objective(&work);
            work[t].data_mut()[i] = orig - FD_STEP;
            let minus = objective(&work);
            work[t].data_mut()[i] = orig;
            let step = (orig + FD_STEP) as f64 - (orig - FD_STEP) as f64;
            numeric.push((plus - minus) / step);
        }
    }
    rel_err(&analytic, &numeric)
}
