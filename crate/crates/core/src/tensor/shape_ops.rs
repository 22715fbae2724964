use super::tape::{Backward, BackwardCtx, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

struct ConcatChannelsBackward {
    n: usize,
    a_len: usize,
    b_len: usize,
}

impl Backward for ConcatChannelsBackward {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Vec<f32>>>> {
        let mut da = Vec::with_capacity(self.n * self.a_len);
        let mut db = Vec::with_capacity(self.n * self.b_len);
        for chunk in ctx.grad.chunks(self.a_len + self.b_len).take(self.n) {
            da.extend_from_slice(&chunk[..self.a_len]);
            db.extend_from_slice(&chunk[self.a_len..]);
        }
        Ok(vec![Some(da), Some(db)])
    }
}

struct ConcatBatchBackward {
    split: usize,
}

impl Backward for ConcatBatchBackward {
    fn name(&self) -> &'static str {
        "concat_batch"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Vec<f32>>>> {
        let (a, b) = ctx.grad.split_at(self.split);
        Ok(vec![
            ctx.needs[0].then(|| a.to_vec()),
            ctx.needs[1].then(|| b.to_vec()),
        ])
    }
}

struct SliceBatchBackward {
    offset: usize,
    total: usize,
}

impl Backward for SliceBatchBackward {
    fn name(&self) -> &'static str {
        "slice_batch"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Vec<f32>>>> {
        let mut dx = vec![0.0f32; self.total];
        dx[self.offset..self.offset + ctx.grad.len()].copy_from_slice(ctx.grad);
        Ok(vec![Some(dx)])
    }
}

/// Gate broadcast over spatial positions (per channel) or over channels
/// (per position).
#[derive(Clone, Copy)]
enum GateAxis {
    Channel,
    Spatial,
}

struct GateBackward {
    axis: GateAxis,
    dims: [usize; 4],
}

impl Backward for GateBackward {
    fn name(&self) -> &'static str {
        match self.axis {
            GateAxis::Channel => "scale_channels",
            GateAxis::Spatial => "scale_spatial",
        }
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Vec<f32>>>> {
        let [n, c, h, w] = self.dims;
        let hw = h * w;
        let (x, gate) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let dy = ctx.grad;
        let gate_index = |s: usize, ch: usize, p: usize| match self.axis {
            GateAxis::Channel => s * c + ch,
            GateAxis::Spatial => s * hw + p,
        };
        let dx = ctx.needs[0].then(|| {
            let mut dx = vec![0.0f32; dy.len()];
            for s in 0..n {
                for ch in 0..c {
                    let off = (s * c + ch) * hw;
                    for p in 0..hw {
                        dx[off + p] = dy[off + p] * gate[gate_index(s, ch, p)];
                    }
                }
            }
            dx
        });
        let dgate = ctx.needs[1].then(|| {
            let mut acc = vec![0.0f64; gate.len()];
            for s in 0..n {
                for ch in 0..c {
                    let off = (s * c + ch) * hw;
                    for p in 0..hw {
                        acc[gate_index(s, ch, p)] += (dy[off + p] * x[off + p]) as f64;
                    }
                }
            }
            acc.into_iter().map(|v| v as f32).collect()
        });
        Ok(vec![dx, dgate])
    }
}

impl Tape {
    /// Channel concatenation: `a` fills channels `[0, C1)`, `b` the rest.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, c1, h, w] = self.value(a).dims4()?;
        let [n2, c2, h2, w2] = self.value(b).dims4()?;
        if (n, h, w) != (n2, h2, w2) {
            return Err(Error::dim(format!(
                "concat_channels: batch/spatial extents {:?} and {:?} differ",
                (n, h, w),
                (n2, h2, w2)
            )));
        }
        let (a_len, b_len) = (c1 * h * w, c2 * h * w);
        let mut out = Vec::with_capacity(n * (a_len + b_len));
        for s in 0..n {
            out.extend_from_slice(&self.value(a).data()[s * a_len..(s + 1) * a_len]);
            out.extend_from_slice(&self.value(b).data()[s * b_len..(s + 1) * b_len]);
        }
        let out = Tensor::new(&[n, c1 + c2, h, w], out)?;
        self.push(out, &[a, b], Box::new(ConcatChannelsBackward { n, a_len, b_len }))
    }

    /// Batch concatenation: the samples of `a` followed by those of `b`.
    pub fn concat_batch(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n1, c, h, w] = self.value(a).dims4()?;
        let [n2, c2, h2, w2] = self.value(b).dims4()?;
        if (c, h, w) != (c2, h2, w2) {
            return Err(Error::dim(format!(
                "concat_batch: sample shapes {:?} and {:?} differ",
                (c, h, w),
                (c2, h2, w2)
            )));
        }
        let mut out = self.value(a).data().to_vec();
        out.extend_from_slice(self.value(b).data());
        let split = self.value(a).len();
        let out = Tensor::new(&[n1 + n2, c, h, w], out)?;
        self.push(out, &[a, b], Box::new(ConcatBatchBackward { split }))
    }

    /// Samples `[start, start + len)` of an N×C×H×W tensor.
    pub fn slice_batch(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if start + len > n {
            return Err(Error::dim(format!(
                "slice_batch {start}..{} out of range for batch {n}",
                start + len
            )));
        }
        let per = c * h * w;
        let out = self.value(x).data()[start * per..(start + len) * per].to_vec();
        let total = self.value(x).len();
        let out = Tensor::new(&[len, c, h, w], out)?;
        self.push(
            out,
            &[x],
            Box::new(SliceBatchBackward {
                offset: start * per,
                total,
            }),
        )
    }

    /// `x[n,c,h,w] * gate[n,c]` with `gate` shaped N×C×1×1.
    pub fn scale_channels(&mut self, x: Var, gate: Var) -> Result<Var> {
        self.gate(x, gate, GateAxis::Channel)
    }

    /// `x[n,c,h,w] * gate[n,h,w]` with `gate` shaped N×1×H×W.
    pub fn scale_spatial(&mut self, x: Var, gate: Var) -> Result<Var> {
        self.gate(x, gate, GateAxis::Spatial)
    }

    fn gate(&mut self, x: Var, gate: Var, axis: GateAxis) -> Result<Var> {
        let dims @ [n, c, h, w] = self.value(x).dims4()?;
        let expected = match axis {
            GateAxis::Channel => [n, c, 1, 1],
            GateAxis::Spatial => [n, 1, h, w],
        };
        if self.shape(gate) != expected {
            return Err(Error::dim(format!(
                "gate shape {:?}, expected {expected:?}",
                self.shape(gate)
            )));
        }
        let hw = h * w;
        let (xs, gs) = (self.value(x).data(), self.value(gate).data());
        let mut out = vec![0.0f32; xs.len()];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * hw;
                for p in 0..hw {
                    let g = match axis {
                        GateAxis::Channel => gs[s * c + ch],
                        GateAxis::Spatial => gs[s * hw + p],
                    };
                    out[off + p] = xs[off + p] * g;
                }
            }
        }
        let out = Tensor::new(&dims, out)?;
        self.push(out, &[x, gate], Box::new(GateBackward { axis, dims }))
    }
}
