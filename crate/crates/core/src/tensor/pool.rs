use super::tape::{Backward, BackwardCtx, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

struct MaxPool2Backward {
    /// Flat input index of the selected element, one per output element.
    argmax: Vec<u32>,
    input_len: usize,
}

impl Backward for MaxPool2Backward {
    fn name(&self) -> &'static str {
        "maxpool2"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Vec<f32>>>> {
        let mut dx = vec![0.0f32; self.input_len];
        for (&src, &g) in self.argmax.iter().zip(ctx.grad) {
            dx[src as usize] += g;
        }
        Ok(vec![Some(dx)])
    }
}

struct GlobalAvgPoolBackward {
    hw: usize,
}

impl Backward for GlobalAvgPoolBackward {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Vec<f32>>>> {
        let scale = 1.0 / self.hw as f32;
        let dx = ctx
            .grad
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g * scale, self.hw))
            .collect();
        Ok(vec![Some(dx)])
    }
}

struct Upsample2xBackward {
    dims: [usize; 4],
}

impl Backward for Upsample2xBackward {
    fn name(&self) -> &'static str {
        "upsample_nearest2x"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Vec<f32>>>> {
        let [n, c, h, w] = self.dims;
        let ow = 2 * w;
        let mut dx = vec![0.0f32; n * c * h * w];
        for (plane, dy) in dx.chunks_mut(h * w).zip(ctx.grad.chunks(4 * h * w)) {
            for y in 0..h {
                for x in 0..w {
                    let top = 2 * y * ow + 2 * x;
                    let bottom = top + ow;
                    plane[y * w + x] = (dy[top] + dy[top + 1]) + (dy[bottom] + dy[bottom + 1]);
                }
            }
        }
        Ok(vec![Some(dx)])
    }
}

impl Tape {
    /// 2×2 max pooling with stride 2. Ties resolve to the first element in
    /// scan order (top-left, top-right, bottom-left, bottom-right).
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let input = self.value(x);
        let [n, c, h, w] = input.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim(format!(
                "maxpool2 needs even spatial extents, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let data = input.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xo in 0..ow {
                    let top = base + 2 * y * w + 2 * xo;
                    let mut best = top;
                    for idx in [top + 1, top + w, top + w + 1] {
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let input_len = input.len();
        let out = Tensor::new(&[n, c, oh, ow], out)?;
        self.push(out, &[x], Box::new(MaxPool2Backward { argmax, input_len }))
    }

    /// Per-channel spatial mean, N×C×H×W → N×C×1×1.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let input = self.value(x);
        let [n, c, h, w] = input.dims4()?;
        if h == 0 || w == 0 {
            return Err(Error::dim("global_avg_pool on an empty spatial extent"));
        }
        let hw = h * w;
        let out: Vec<f32> = input
            .data()
            .chunks(hw)
            .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / hw as f64) as f32)
            .collect();
        let out = Tensor::new(&[n, c, 1, 1], out)?;
        self.push(out, &[x], Box::new(GlobalAvgPoolBackward { hw }))
    }

    /// Nearest-neighbour 2× upsampling: each pixel becomes a 2×2 block.
    pub fn upsample_nearest2x(&mut self, x: Var) -> Result<Var> {
        let input = self.value(x);
        let dims @ [n, c, h, w] = input.dims4()?;
        let ow = 2 * w;
        let mut out = vec![0.0f32; n * c * 4 * h * w];
        for (dst, src) in out.chunks_mut(4 * h * w).zip(input.data().chunks(h * w)) {
            for y in 0..2 * h {
                let row = &src[(y / 2) * w..][..w];
                for (xo, d) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                    *d = row[xo / 2];
                }
            }
        }
        let out = Tensor::new(&[n, c, 2 * h, 2 * w], out)?;
        self.push(out, &[x], Box::new(Upsample2xBackward { dims }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_picks_window_max() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true);
        let y = tape.maxpool2(x).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
        assert_eq!(tape.value(y).shape(), &[1, 1, 1, 1]);
    }

    #[test]
    fn maxpool_tie_routes_to_first_element() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 4, 4], 2.5), true);
        let y = tape.maxpool2(x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 2.5));
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        let g = tape.grad(x).unwrap().data();
        let expected: Vec<f32> = (0..16)
            .map(|i| {
                let (r, c) = (i / 4, i % 4);
                if r % 2 == 0 && c % 2 == 0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        assert_eq!(g, expected.as_slice());
    }

    #[test]
    fn maxpool_rejects_odd_extent() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 3, 4]));
        assert!(matches!(tape.maxpool2(x), Err(Error::Dimension(_))));
    }

    #[test]
    fn global_avg_pool_means() {
        let mut tape = Tape::new();
        let x = tape.constant(
            Tensor::new(&[1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 7.0, 7.0, 7.0, 7.0]).unwrap(),
        );
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(y).data(), &[2.5, 7.0]);
        assert_eq!(tape.value(y).shape(), &[1, 2, 1, 1]);
    }

    #[test]
    fn upsample_replicates_blocks() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.upsample_nearest2x(x).unwrap();
        #[rustfmt::skip]
        let expected = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(tape.value(y).data(), &expected);
    }
}
