use super::tape::{Backward, BackwardCtx, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalise with batch statistics and update the running estimates.
    Train,
    /// Normalise with the running estimates.
    Eval,
}

/// Running mean and (unbiased) variance of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

struct BatchNormBackward {
    dims: [usize; 4],
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    train: bool,
}

impl Backward for BatchNormBackward {
    fn name(&self) -> &'static str {
        "batchnorm"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Vec<f32>>>> {
        let [n, c, h, w] = self.dims;
        let hw = h * w;
        let m = (n * hw) as f64;
        let gamma = ctx.inputs[1].data();
        let dy = ctx.grad;

        let mut sum_dy = vec![0.0f64; c];
        let mut sum_dy_xhat = vec![0.0f64; c];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * hw;
                for i in off..off + hw {
                    sum_dy[ch] += dy[i] as f64;
                    sum_dy_xhat[ch] += (dy[i] * self.xhat[i]) as f64;
                }
            }
        }

        let dx = ctx.needs[0].then(|| {
            let mut dx = vec![0.0f32; dy.len()];
            for s in 0..n {
                for ch in 0..c {
                    let off = (s * c + ch) * hw;
                    let g = gamma[ch] * self.inv_std[ch];
                    if self.train {
                        let mean_dy = (sum_dy[ch] / m) as f32;
                        let mean_dy_xhat = (sum_dy_xhat[ch] / m) as f32;
                        for i in off..off + hw {
                            dx[i] = g * (dy[i] - mean_dy - self.xhat[i] * mean_dy_xhat);
                        }
                    } else {
                        for i in off..off + hw {
                            dx[i] = g * dy[i];
                        }
                    }
                }
            }
            dx
        });
        let dgamma = ctx.needs[1].then(|| sum_dy_xhat.iter().map(|&v| v as f32).collect());
        let dbeta = ctx.needs[2].then(|| sum_dy.iter().map(|&v| v as f32).collect());
        Ok(vec![dx, dgamma, dbeta])
    }
}

impl Tape {
    /// Per-channel batch normalisation with affine `gamma`/`beta`.
    ///
    /// Train mode uses the biased batch variance for normalisation and
    /// folds the unbiased variance into `state` with momentum
    /// [`BN_MOMENTUM`]; eval mode reads `state` only.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        mode: BnMode,
    ) -> Result<Var> {
        let input = self.value(x);
        let dims @ [n, c, h, w] = input.dims4()?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(Error::dim(format!(
                    "batchnorm {name} shape {:?}, input has {c} channels",
                    self.shape(v)
                )));
            }
        }
        if state.channels() != c {
            return Err(Error::dim(format!(
                "batchnorm state has {} channels, input has {c}",
                state.channels()
            )));
        }
        let hw = h * w;
        let m = n * hw;
        let data = input.data();

        let (mean, var) = match mode {
            BnMode::Train => {
                if m <= 1 {
                    return Err(Error::dim(format!(
                        "batchnorm in train mode needs more than one value per channel, got {m}"
                    )));
                }
                let mut mean = vec![0.0f64; c];
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * hw;
                        mean[ch] += data[off..off + hw].iter().map(|&v| v as f64).sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m as f64);
                let mut var = vec![0.0f64; c];
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * hw;
                        var[ch] += data[off..off + hw]
                            .iter()
                            .map(|&v| (v as f64 - mean[ch]).powi(2))
                            .sum::<f64>();
                    }
                }
                let biased: Vec<f64> = var.iter().map(|v| v / m as f64).collect();
                let unbiased_scale = m as f64 / (m - 1) as f64;
                for ch in 0..c {
                    let mom = BN_MOMENTUM as f64;
                    state.running_mean[ch] =
                        ((1.0 - mom) * state.running_mean[ch] as f64 + mom * mean[ch]) as f32;
                    state.running_var[ch] = ((1.0 - mom) * state.running_var[ch] as f64
                        + mom * biased[ch] * unbiased_scale) as f32;
                }
                (mean, biased)
            }
            BnMode::Eval => (
                state.running_mean.iter().map(|&v| v as f64).collect(),
                state.running_var.iter().map(|&v| v as f64).collect(),
            ),
        };

        let inv_std: Vec<f32> = var
            .iter()
            .map(|&v| (1.0 / (v + BN_EPS as f64).sqrt()) as f32)
            .collect();
        let mean: Vec<f32> = mean.iter().map(|&v| v as f32).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0f32; data.len()];
        let mut out = vec![0.0f32; data.len()];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * hw;
                for i in off..off + hw {
                    xhat[i] = (data[i] - mean[ch]) * inv_std[ch];
                    out[i] = g[ch] * xhat[i] + b[ch];
                }
            }
        }
        let out = Tensor::new(&dims, out)?;
        let op = BatchNormBackward {
            dims,
            xhat,
            inv_std,
            train: mode == BnMode::Train,
        };
        self.push(out, &[x, gamma, beta], Box::new(op))
    }
}
