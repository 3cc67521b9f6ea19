use crate::error::{shape_err, Result};
use crate::graph::{Backward, BackwardCtx, Graph, Var};
use crate::real::{gemm, Real};
use crate::tensor::Tensor;

struct MatmulRule {
    m: usize,
    k: usize,
    n: usize,
}

impl<T: Real> Backward<T> for MatmulRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let (a, b, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
        let da = ctx.needs[0].then(|| {
            let mut out = vec![T::zero(); m * k];
            gemm(m, n, k, g.data(), false, b.data(), true, T::zero(), &mut out);
            Tensor::from_parts(vec![m, k], out)
        });
        let db = ctx.needs[1].then(|| {
            let mut out = vec![T::zero(); k * n];
            gemm(k, m, n, a.data(), true, g.data(), false, T::zero(), &mut out);
            Tensor::from_parts(vec![k, n], out)
        });
        Ok(vec![da, db])
    }
}

struct BiasRule;

impl<T: Real> Backward<T> for BiasRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let n = ctx.inputs[1].len();
        let db = ctx.needs[1].then(|| {
            let mut acc = vec![T::zero(); n];
            for row in ctx.grad.data().chunks(n) {
                for (a, &g) in acc.iter_mut().zip(row) {
                    *a += g;
                }
            }
            Tensor::from_parts(vec![n], acc)
        });
        Ok(vec![ctx.needs[0].then(|| ctx.grad.clone()), db])
    }
}

impl<T: Real> Graph<T> {
    /// `[m, k] · [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err("matmul", format!("{sa:?} · {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            T::zero(),
            &mut out,
        );
        Ok(self.op(
            &[a, b],
            Tensor::from_parts(vec![m, n], out),
            MatmulRule { m, k, n },
        ))
    }

    /// Adds a `[n]` bias along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return shape_err("add_bias", format!("{sx:?} + {sb:?}"));
        }
        let n = sb[0];
        let b = self.value(bias).data().to_vec();
        let xv = self.value(x);
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            for (v, &bv) in row.iter_mut().zip(&b) {
                *v += bv;
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        Ok(self.op(&[x, bias], out, BiasRule))
    }

    /// `x · w + b` for `x: [m, k]`, `w: [k, n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }
}
