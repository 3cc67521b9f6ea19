use crate::error::{shape_err, Result};
use crate::graph::{Backward, BackwardCtx, Graph, Var};
use crate::real::Real;
use crate::tensor::{numel, Tensor};

/// `(outer, extent, inner)` split of a shape around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

struct ReshapeRule;

impl<T: Real> Backward<T> for ReshapeRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(ctx.grad.clone().reshape(ctx.inputs[0].shape())?)])
    }
}

fn permute_data<T: Real>(src: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let shape = src.shape();
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut src_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        src_strides[i] = src_strides[i + 1] * shape[i + 1];
    }
    // Stride in the source for each output axis.
    let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let data = src.data();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        // Odometer increment over the output index.
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Tensor::from_parts(out_shape, out)
}

struct PermuteRule {
    inverse: Vec<usize>,
}

impl<T: Real> Backward<T> for PermuteRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(permute_data(ctx.grad, &self.inverse))])
    }
}

struct ConcatRule {
    axis: usize,
}

impl<T: Real> Backward<T> for ConcatRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let gshape = ctx.grad.shape();
        let (outer, total, inner) = split_at_axis(gshape, self.axis);
        let g = ctx.grad.data();
        let mut start = 0;
        let mut out = Vec::with_capacity(ctx.inputs.len());
        for (input, &need) in ctx.inputs.iter().zip(ctx.needs) {
            let ext = input.shape()[self.axis];
            if need {
                let mut data = Vec::with_capacity(input.len());
                for o in 0..outer {
                    let base = (o * total + start) * inner;
                    data.extend_from_slice(&g[base..base + ext * inner]);
                }
                out.push(Some(Tensor::from_parts(input.shape().to_vec(), data)));
            } else {
                out.push(None);
            }
            start += ext;
        }
        Ok(out)
    }
}

struct SliceRule {
    axis: usize,
    start: usize,
}

impl<T: Real> Backward<T> for SliceRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let ishape = ctx.inputs[0].shape();
        let (outer, ext, inner) = split_at_axis(ishape, self.axis);
        let len = ctx.grad.shape()[self.axis];
        let mut data = vec![T::zero(); numel(ishape)];
        let g = ctx.grad.data();
        for o in 0..outer {
            let dst = (o * ext + self.start) * inner;
            let src = o * len * inner;
            data[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
        }
        Ok(vec![Some(Tensor::from_parts(ishape.to_vec(), data))])
    }
}

struct MeanAxisRule {
    axis: usize,
}

impl<T: Real> Backward<T> for MeanAxisRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let ishape = ctx.inputs[0].shape();
        let (outer, ext, inner) = split_at_axis(ishape, self.axis);
        let scale = T::one() / T::of(ext as f64);
        let g = ctx.grad.data();
        let mut data = Vec::with_capacity(numel(ishape));
        for o in 0..outer {
            let row = &g[o * inner..(o + 1) * inner];
            for _ in 0..ext {
                data.extend(row.iter().map(|&v| v * scale));
            }
        }
        Ok(vec![Some(Tensor::from_parts(ishape.to_vec(), data))])
    }
}

impl<T: Real> Graph<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(x) == shape {
            return Ok(x);
        }
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.op(&[x], out, ReshapeRule))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let rank = self.shape(x).len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return shape_err("permute", format!("{perm:?} for rank {rank}"));
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(x);
        }
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let out = permute_data(self.value(x), perm);
        Ok(self.op(&[x], out, PermuteRule { inverse }))
    }

    /// Joins tensors that agree on every axis except `axis`.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return shape_err("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return shape_err("concat", format!("axis {axis} for {base:?}"));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return shape_err("concat", format!("{s:?} vs {base:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_at_axis(&out_shape, axis);
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for &x in xs {
                let v = self.value(x);
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let out = Tensor::from_parts(out_shape, data);
        Ok(self.op(xs, out, ConcatRule { axis }))
    }

    /// `x[.., start..start+len, ..]` along `axis`.
    pub fn slice_axis(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return shape_err(
                "slice_axis",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            );
        }
        let (outer, ext, inner) = split_at_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let b = (o * ext + start) * inner;
            data.extend_from_slice(&src[b..b + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::from_parts(out_shape, data);
        Ok(self.op(&[x], out, SliceRule { axis, start }))
    }

    /// Mean over `axis`, keeping it with extent 1.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return shape_err("mean_axis", format!("axis {axis} for {shape:?}"));
        }
        let (outer, ext, inner) = split_at_axis(&shape, axis);
        let src = self.value(x).data();
        let scale = T::one() / T::of(ext as f64);
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let acc = &mut data[o * inner..(o + 1) * inner];
            for e in 0..ext {
                let b = (o * ext + e) * inner;
                for (a, &v) in acc.iter_mut().zip(&src[b..b + inner]) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a *= scale);
        }
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let out = Tensor::from_parts(out_shape, data);
        Ok(self.op(&[x], out, MeanAxisRule { axis }))
    }

    /// Averages a channel-last tensor `[B, ..., C]` over every axis between
    /// batch and channel, giving `[B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return shape_err("global_avg_pool", format!("{shape:?}"));
        }
        let (b, c) = (shape[0], shape[shape.len() - 1]);
        let mid = numel(&shape[1..shape.len() - 1]);
        let flat = self.reshape(x, &[b, mid, c])?;
        let m = self.mean_axis(flat, 1)?;
        self.reshape(m, &[b, c])
    }
}
