use super::{ModelConfig, ModelParams, ParamVars, INPUT_CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::{BnMode, Tape, Var};

/// One forward pass over [`ModelParams`].
///
/// Train mode updates the batch-norm running statistics held in the
/// parameters; eval mode leaves them untouched.
pub struct Network<'a> {
    params: &'a mut ModelParams,
    mode: BnMode,
}

impl<'a> Network<'a> {
    pub fn new(params: &'a mut ModelParams, mode: BnMode) -> Self {
        Network { params, mode }
    }

    pub fn config(&self) -> &ModelConfig {
        self.params.config()
    }

    fn check_input(&self, tape: &Tape, x: Var, what: &str) -> Result<usize> {
        let s = self.params.config().input_size;
        let shape = tape.shape(x);
        match shape {
            [n, c, h, w] if *c == INPUT_CHANNELS && *h == s && *w == s => Ok(*n),
            _ => Err(Error::dim(format!(
                "{what} input has shape {shape:?}, expected N x {INPUT_CHANNELS} x {s} x {s}"
            ))),
        }
    }

    fn bn(&mut self, tape: &mut Tape, vars: &ParamVars, x: Var, prefix: &str) -> Result<Var> {
        let gamma = vars.get(&format!("{prefix}.gamma"))?;
        let beta = vars.get(&format!("{prefix}.beta"))?;
        let mut state = self.params.bn_state(prefix)?;
        let y = tape.batchnorm(x, gamma, beta, &mut state, self.mode)?;
        if self.mode == BnMode::Train {
            self.params.set_bn_state(prefix, state);
        }
        Ok(y)
    }

    fn double_conv(&mut self, tape: &mut Tape, vars: &ParamVars, x: Var, prefix: &str) -> Result<Var> {
        let mut h = x;
        for k in 1..=2 {
            h = tape.conv2d(h, vars.get(&format!("{prefix}.conv{k}.weight"))?, None, 1, 1)?;
            h = self.bn(tape, vars, h, &format!("{prefix}.bn{k}"))?;
            h = tape.relu(h)?;
        }
        Ok(h)
    }

    /// Shared encoder: four taps at S/2, S/4, S/8 and S/16.
    pub fn encoder_forward(&mut self, tape: &mut Tape, vars: &ParamVars, x: Var) -> Result<[Var; 4]> {
        self.check_input(tape, x, "encoder")?;
        let mut h = x;
        let mut taps = [x; 4];
        for (stage, tap) in taps.iter_mut().enumerate() {
            h = self.double_conv(tape, vars, h, &format!("enc{}", stage + 1))?;
            h = tape.maxpool2(h)?;
            *tap = h;
        }
        Ok(taps)
    }

    /// Concurrent spatial and channel squeeze-and-excitation of the tap at
    /// `stage` (1-based).
    pub fn scse(&self, tape: &mut Tape, vars: &ParamVars, stage: usize, x: Var) -> Result<Var> {
        let p = |name: &str| vars.get(&format!("scse{stage}.{name}"));
        let c = self.params.config().widths[stage - 1];
        if tape.shape(x).get(1) != Some(&c) {
            return Err(Error::dim(format!(
                "scse{stage} expects {c} channels, got shape {:?}",
                tape.shape(x)
            )));
        }
        let z = tape.global_avg_pool(x)?;
        let z = tape.conv2d(z, p("fc1.weight")?, Some(p("fc1.bias")?), 1, 0)?;
        let z = tape.relu(z)?;
        let z = tape.conv2d(z, p("fc2.weight")?, Some(p("fc2.bias")?), 1, 0)?;
        let channel_gate = tape.sigmoid(z)?;
        let channel = tape.scale_channels(x, channel_gate)?;

        let q = tape.conv2d(x, p("spatial.weight")?, Some(p("spatial.bias")?), 1, 0)?;
        let spatial_gate = tape.sigmoid(q)?;
        let spatial = tape.scale_spatial(x, spatial_gate)?;
        tape.add(channel, spatial)
    }

    /// Per-stream attention followed by channel concatenation, pre stream
    /// first.
    pub fn fuse(&self, tape: &mut Tape, vars: &ParamVars, pre: &[Var; 4], post: &[Var; 4]) -> Result<[Var; 4]> {
        let mut fused = [pre[0]; 4];
        for stage in 0..4 {
            let a = self.scse(tape, vars, stage + 1, pre[stage])?;
            let b = self.scse(tape, vars, stage + 1, post[stage])?;
            fused[stage] = tape.concat_channels(a, b)?;
        }
        Ok(fused)
    }

    /// Decoder from the fused taps to per-pixel logits at S×S.
    pub fn decoder_forward(&mut self, tape: &mut Tape, vars: &ParamVars, fused: &[Var; 4]) -> Result<Var> {
        let mut h = fused[3];
        for level in (1..=3).rev() {
            h = tape.upsample_nearest2x(h)?;
            h = tape.concat_channels(h, fused[level - 1])?;
            h = self.double_conv(tape, vars, h, &format!("dec{level}"))?;
        }
        h = tape.upsample_nearest2x(h)?;
        tape.conv2d(h, vars.get("head.weight")?, Some(vars.get("head.bias")?), 1, 0)
    }

    /// Logits N×1×S×S. Both acquisitions share one encoder pass over the
    /// batch-stacked pair, so weights and batch statistics are common to
    /// the two streams.
    pub fn forward_logits(&mut self, tape: &mut Tape, vars: &ParamVars, pre: Var, post: Var) -> Result<Var> {
        let n = self.check_input(tape, pre, "pre")?;
        let m = self.check_input(tape, post, "post")?;
        if n != m {
            return Err(Error::dim(format!("pre batch {n} and post batch {m} differ")));
        }
        let stacked = tape.concat_batch(pre, post)?;
        let taps = self.encoder_forward(tape, vars, stacked)?;
        let mut pre_taps = taps;
        let mut post_taps = taps;
        for stage in 0..4 {
            pre_taps[stage] = tape.slice_batch(taps[stage], 0, n)?;
            post_taps[stage] = tape.slice_batch(taps[stage], n, n)?;
        }
        let fused = self.fuse(tape, vars, &pre_taps, &post_taps)?;
        self.decoder_forward(tape, vars, &fused)
    }

    /// Water probabilities N×1×S×S, strictly inside (0, 1).
    pub fn forward(&mut self, tape: &mut Tape, vars: &ParamVars, pre: Var, post: Var) -> Result<Var> {
        let logits = self.forward_logits(tape, vars, pre, post)?;
        tape.sigmoid(logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn tiny() -> ModelConfig {
        ModelConfig {
            input_size: 16,
            widths: [2, 4, 4, 6],
            reduction: 2,
        }
    }

    fn ramp(shape: &[usize], phase: f32) -> Tensor {
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|i| ((i as f32 * 0.37 + phase).sin() + 1.0) * 0.5).collect()).unwrap()
    }

    #[test]
    fn output_shape_and_range() {
        let cfg = tiny();
        let mut params = ModelParams::init(&cfg, 5).unwrap();
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let pre = tape.constant(ramp(&[2, 3, 16, 16], 0.0));
        let post = tape.constant(ramp(&[2, 3, 16, 16], 1.0));
        let y = Network::new(&mut params, BnMode::Train).forward(&mut tape, &vars, pre, post).unwrap();
        assert_eq!(tape.shape(y), &[2, 1, 16, 16]);
        assert!(tape.value(y).data().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn wrong_input_size_is_dimension_error() {
        let cfg = tiny();
        let mut params = ModelParams::init(&cfg, 5).unwrap();
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let pre = tape.constant(ramp(&[1, 3, 32, 32], 0.0));
        let post = tape.constant(ramp(&[1, 3, 32, 32], 0.0));
        let r = Network::new(&mut params, BnMode::Eval).forward(&mut tape, &vars, pre, post);
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn eval_mode_leaves_running_stats() {
        let cfg = tiny();
        let mut params = ModelParams::init(&cfg, 5).unwrap();
        let before = params.clone();
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let pre = tape.constant(ramp(&[1, 3, 16, 16], 0.0));
        let post = tape.constant(ramp(&[1, 3, 16, 16], 2.0));
        Network::new(&mut params, BnMode::Eval).forward(&mut tape, &vars, pre, post).unwrap();
        assert_eq!(params, before);
        Network::new(&mut params, BnMode::Train).forward(&mut tape, &vars, pre, post).unwrap();
        assert_ne!(params, before);
    }
}
