use super::LossConfig;
use crate::error::{Error, Result};
use crate::tensor::{Backward, BackwardCtx, Tape, Tensor, Var};

/// Focal loss evaluates probabilities clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

/// A scalar loss on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LossTerm {
    pub value: Var,
    /// No pixel was valid; the value is 0 and carries no gradient signal.
    pub no_valid_pixels: bool,
}

fn check_shapes(probs: &Tensor, target: &Tensor, mask: &Tensor) -> Result<()> {
    if probs.shape() != target.shape() || probs.shape() != mask.shape() {
        return Err(Error::dim(format!(
            "loss inputs differ in shape: probs {:?}, target {:?}, mask {:?}",
            probs.shape(),
            target.shape(),
            mask.shape()
        )));
    }
    Ok(())
}

fn clamp_prob(p: f32) -> f64 {
    (p as f64).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Per-pixel focal term −(1−p_t)^γ·ln p_t.
fn focal_term(p: f32, g: f32, gamma: f64) -> f64 {
    let pc = clamp_prob(p);
    let pt = if g == 1.0 { pc } else { 1.0 - pc };
    -(1.0 - pt).powf(gamma) * pt.ln()
}

/// d(focal_term)/dp; zero where the clamp is active.
fn focal_term_grad(p: f32, g: f32, gamma: f64) -> f64 {
    let pf = p as f64;
    if pf < PROB_CLAMP || pf > 1.0 - PROB_CLAMP {
        return 0.0;
    }
    let pt = if g == 1.0 { pf } else { 1.0 - pf };
    let q = 1.0 - pt;
    let mut d = -q.powf(gamma) / pt;
    if gamma != 0.0 {
        d += gamma * q.powf(gamma - 1.0) * pt.ln();
    }
    if g == 1.0 {
        d
    } else {
        -d
    }
}

/// Running sums from which dice and focal losses over any set of pixels
/// follow; adding tiles one by one gives the same result as one big batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossSums {
    /// Σ p·g over valid pixels.
    pub intersection: f64,
    /// Σ p over valid pixels.
    pub prob: f64,
    /// Σ g over valid pixels.
    pub target: f64,
    /// Σ focal term over valid pixels.
    pub focal: f64,
    pub valid: u64,
}

impl LossSums {
    pub fn add(&mut self, probs: &[f32], target: &[f32], mask: &[f32], gamma: f32) {
        for ((&p, &g), &m) in probs.iter().zip(target).zip(mask) {
            if m != 1.0 {
                continue;
            }
            self.intersection += p as f64 * g as f64;
            self.prob += p as f64;
            self.target += g as f64;
            self.focal += focal_term(p, g, gamma as f64);
            self.valid += 1;
        }
    }

    pub fn from_slices(probs: &[f32], target: &[f32], mask: &[f32], gamma: f32) -> Self {
        let mut s = LossSums::default();
        s.add(probs, target, mask, gamma);
        s
    }

    pub fn merge(&mut self, other: &LossSums) {
        self.intersection += other.intersection;
        self.prob += other.prob;
        self.target += other.target;
        self.focal += other.focal;
        self.valid += other.valid;
    }

    /// 1 − (2·Σpg + s)/(Σp + Σg + s); 0 without valid pixels.
    pub fn dice(&self, smooth: f32) -> f64 {
        if self.valid == 0 {
            return 0.0;
        }
        let s = smooth as f64;
        1.0 - (2.0 * self.intersection + s) / (self.prob + self.target + s)
    }

    /// Mean focal term; 0 without valid pixels.
    pub fn focal(&self) -> f64 {
        if self.valid == 0 {
            return 0.0;
        }
        self.focal / self.valid as f64
    }

    pub fn combined(&self, cfg: &LossConfig) -> f64 {
        let a = cfg.alpha as f64;
        a * self.dice(cfg.smooth) + (1.0 - a) * self.focal()
    }
}

struct DiceBackward {
    smooth: f64,
}

impl Backward for DiceBackward {
    fn name(&self) -> &'static str {
        "dice_loss"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Vec<f32>>>> {
        let (p, t, m) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.inputs[2].data());
        let sums = LossSums::from_slices(p, t, m, 0.0);
        let up = ctx.grad[0] as f64;
        let num = 2.0 * sums.intersection + self.smooth;
        let den = sums.prob + sums.target + self.smooth;
        let dp = p
            .iter()
            .zip(t)
            .zip(m)
            .map(|((_, &g), &mask)| {
                if mask != 1.0 || sums.valid == 0 {
                    0.0
                } else {
                    (up * (num - 2.0 * g as f64 * den) / (den * den)) as f32
                }
            })
            .collect();
        Ok(vec![Some(dp), None, None])
    }
}

struct FocalBackward {
    gamma: f64,
}

impl Backward for FocalBackward {
    fn name(&self) -> &'static str {
        "focal_loss"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Vec<f32>>>> {
        let (p, t, m) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.inputs[2].data());
        let valid = m.iter().filter(|&&v| v == 1.0).count();
        let scale = if valid == 0 { 0.0 } else { ctx.grad[0] as f64 / valid as f64 };
        let dp = p
            .iter()
            .zip(t)
            .zip(m)
            .map(|((&p, &g), &mask)| {
                if mask != 1.0 {
                    0.0
                } else {
                    (scale * focal_term_grad(p, g, self.gamma)) as f32
                }
            })
            .collect();
        Ok(vec![Some(dp), None, None])
    }
}

impl Tape {
    fn loss_inputs(&mut self, probs: Var, target: &Tensor, mask: &Tensor) -> Result<[Var; 3]> {
        check_shapes(self.value(probs), target, mask)?;
        let t = self.constant(target.clone());
        let m = self.constant(mask.clone());
        Ok([probs, t, m])
    }

    /// Soft dice loss over valid pixels.
    pub fn dice_loss(&mut self, probs: Var, target: &Tensor, mask: &Tensor, smooth: f32) -> Result<LossTerm> {
        let inputs = self.loss_inputs(probs, target, mask)?;
        let sums = LossSums::from_slices(self.value(probs).data(), target.data(), mask.data(), 0.0);
        let value = Tensor::scalar(sums.dice(smooth) as f32);
        let op = DiceBackward { smooth: smooth as f64 };
        Ok(LossTerm {
            value: self.push(value, &inputs, Box::new(op))?,
            no_valid_pixels: sums.valid == 0,
        })
    }

    /// Mean focal loss over valid pixels.
    pub fn focal_loss(&mut self, probs: Var, target: &Tensor, mask: &Tensor, gamma: f32) -> Result<LossTerm> {
        let inputs = self.loss_inputs(probs, target, mask)?;
        let sums = LossSums::from_slices(self.value(probs).data(), target.data(), mask.data(), gamma);
        let value = Tensor::scalar(sums.focal() as f32);
        let op = FocalBackward { gamma: gamma as f64 };
        Ok(LossTerm {
            value: self.push(value, &inputs, Box::new(op))?,
            no_valid_pixels: sums.valid == 0,
        })
    }

    /// `alpha · dice + (1 − alpha) · focal`.
    pub fn combined_loss(&mut self, probs: Var, target: &Tensor, mask: &Tensor, cfg: &LossConfig) -> Result<LossTerm> {
        let dice = self.dice_loss(probs, target, mask, cfg.smooth)?;
        let focal = self.focal_loss(probs, target, mask, cfg.gamma)?;
        let a = self.scale(dice.value, cfg.alpha)?;
        let b = self.scale(focal.value, 1.0 - cfg.alpha)?;
        Ok(LossTerm {
            value: self.add(a, b)?,
            no_valid_pixels: dice.no_valid_pixels,
        })
    }
}
