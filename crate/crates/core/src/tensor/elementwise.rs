use super::tape::{Backward, BackwardCtx, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// Largest `f32` below one; sigmoid outputs are kept in `(0, 1)` in 32-bit arithmetic.
const SIGMOID_MAX: f32 = 1.0 - f32::EPSILON / 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

struct ActivationBackward(Activation);

impl Backward for ActivationBackward {
    fn name(&self) -> &'static str {
        match self.0 {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Vec<f32>>>> {
        let dx = match self.0 {
            Activation::Relu => ctx
                .inputs[0]
                .data()
                .iter()
                .zip(ctx.grad)
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect(),
            Activation::Sigmoid => ctx
                .output
                .data()
                .iter()
                .zip(ctx.grad)
                .map(|(&s, &g)| g * s * (1.0 - s))
                .collect(),
        };
        Ok(vec![Some(dx)])
    }
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f32::MIN_POSITIVE, SIGMOID_MAX)
}

struct AddBackward;

impl Backward for AddBackward {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Vec<f32>>>> {
        Ok(vec![
            ctx.needs[0].then(|| ctx.grad.to_vec()),
            ctx.needs[1].then(|| ctx.grad.to_vec()),
        ])
    }
}

struct MulBackward;

impl Backward for MulBackward {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Vec<f32>>>> {
        let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let times = |other: &[f32]| other.iter().zip(ctx.grad).map(|(o, g)| o * g).collect();
        Ok(vec![
            ctx.needs[0].then(|| times(b)),
            ctx.needs[1].then(|| times(a)),
        ])
    }
}

struct ScaleBackward(f32);

impl Backward for ScaleBackward {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Vec<f32>>>> {
        Ok(vec![Some(ctx.grad.iter().map(|g| g * self.0).collect())])
    }
}

struct ReduceBackward {
    len: usize,
    scale: f32,
}

impl Backward for ReduceBackward {
    fn name(&self) -> &'static str {
        "reduce"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Vec<f32>>>> {
        Ok(vec![Some(vec![ctx.grad[0] * self.scale; self.len])])
    }
}

impl Tape {
    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let out: Vec<f32> = match kind {
            Activation::Relu => self.value(x).data().iter().map(|&v| v.max(0.0)).collect(),
            Activation::Sigmoid => self.value(x).data().iter().map(|&v| sigmoid(v)).collect(),
        };
        let out = Tensor::new(self.shape(x), out)?;
        self.push(out, &[x], Box::new(ActivationBackward(kind)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(self.shape(a), out)?;
        self.push(out, &[a, b], Box::new(AddBackward))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(self.shape(a), out)?;
        self.push(out, &[a, b], Box::new(MulBackward))
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Result<Var> {
        let out: Vec<f32> = self.value(x).data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(self.shape(x), out)?;
        self.push(out, &[x], Box::new(ScaleBackward(factor)))
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let len = self.value(x).len();
        let s: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        self.push(
            Tensor::scalar(s as f32),
            &[x],
            Box::new(ReduceBackward { len, scale: 1.0 }),
        )
    }

    /// Mean of all elements as a one-element tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let len = self.value(x).len();
        if len == 0 {
            return Err(Error::Usage("mean of an empty tensor".into()));
        }
        let s: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        self.push(
            Tensor::scalar((s / len as f64) as f32),
            &[x],
            Box::new(ReduceBackward {
                len,
                scale: 1.0 / len as f32,
            }),
        )
    }
}
