//! Direct loss formulas and a pixel-enumeration metric oracle.

use rand::Rng;
use siamflood::loss::{LossConfig, PROB_CLAMP};
use siamflood::tensor::{Tape, Tensor};

use super::{rng, uniform};

pub struct Case {
    pub probs: Tensor,
    pub target: Tensor,
    pub mask: Tensor,
}

pub fn case(seed: u64, shape: &[usize]) -> Case {
    let mut r = rng(seed);
    let n: usize = shape.iter().product();
    let target = (0..n).map(|_| if r.random_bool(0.35) { 1.0 } else { 0.0 }).collect();
    let mask = (0..n).map(|_| if r.random_bool(0.9) { 1.0 } else { 0.0 }).collect();
    Case {
        probs: uniform(&mut r, shape, 0.0, 1.0),
        target: Tensor::new(shape, target).unwrap(),
        mask: Tensor::new(shape, mask).unwrap(),
    }
}

/// (dice, focal, combined) through the tape.
pub fn losses(c: &Case, cfg: &LossConfig) -> (f32, f32, f32) {
    let mut tape = Tape::new();
    let p = tape.constant(c.probs.clone());
    let dice = tape.dice_loss(p, &c.target, &c.mask, cfg.smooth).unwrap().value;
    let focal = tape.focal_loss(p, &c.target, &c.mask, cfg.gamma).unwrap().value;
    let combined = tape.combined_loss(p, &c.target, &c.mask, cfg).unwrap().value;
    let v = |x| tape.value(x).item().unwrap();
    (v(dice), v(focal), v(combined))
}

/// Direct evaluation of the dice formula over valid pixels.
pub fn dice_oracle(c: &Case, smooth: f64) -> f64 {
    let (mut inter, mut p_sum, mut g_sum, mut valid) = (0.0, 0.0, 0.0, 0);
    for ((&p, &g), &m) in c.probs.data().iter().zip(c.target.data()).zip(c.mask.data()) {
        if m == 1.0 {
            inter += p as f64 * g as f64;
            p_sum += p as f64;
            g_sum += g as f64;
            valid += 1;
        }
    }
    if valid == 0 {
        0.0
    } else {
        1.0 - (2.0 * inter + smooth) / (p_sum + g_sum + smooth)
    }
}

/// Mean over valid pixels of −(1 − p_t)^γ · ln p_t with clamped p.
pub fn focal_oracle(c: &Case, gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut valid = 0;
    for ((&p, &g), &m) in c.probs.data().iter().zip(c.target.data()).zip(c.mask.data()) {
        if m == 1.0 {
            let p = (p as f64).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let pt = if g == 1.0 { p } else { 1.0 - p };
            total += -(1.0 - pt).powf(gamma) * pt.ln();
            valid += 1;
        }
    }
    if valid == 0 {
        0.0
    } else {
        total / valid as f64
    }
}

/// Binary cross-entropy averaged over valid pixels.
pub fn bce_oracle(c: &Case) -> f64 {
    let mut total = 0.0;
    let mut valid = 0.0;
    for ((&p, &g), &m) in c.probs.data().iter().zip(c.target.data()).zip(c.mask.data()) {
        let p = (p as f64).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let g = g as f64;
        total += m as f64 * -(g * p.ln() + (1.0 - g) * (1.0 - p).ln());
        valid += m as f64;
    }
    total / valid
}

/// Pixel-by-pixel enumeration of IoU and F1.
pub fn brute_force(pred: &[f32], target: &[f32], mask: &[f32]) -> (f64, f64) {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for i in 0..pred.len() {
        if mask[i] != 1.0 {
            continue;
        }
        match (pred[i] == 1.0, target[i] == 1.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fn_ == 0 {
        return (1.0, 1.0);
    }
    let (tp, fp, fn_) = (tp as f64, fp as f64, fn_ as f64);
    (tp / (tp + fp + fn_), 2.0 * tp / (2.0 * tp + fp + fn_))
}

