use crate::error::{shape_err, Result};
use crate::graph::{Backward, BackwardCtx, Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// Per-channel statistics of a training-mode batch normalization.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance of the batch.
    pub var: Vec<T>,
    /// Number of values reduced per channel.
    pub count: usize,
}

struct BnTrainRule<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> Backward<T> for BnTrainRule<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let c = self.inv_std.len();
        let g = ctx.grad.data();
        let gamma = ctx.inputs[1].data();
        let n = g.len() / c;
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for (grow, xrow) in g.chunks(c).zip(self.xhat.chunks(c)) {
            for j in 0..c {
                sum_g[j] += grow[j];
                sum_gx[j] += grow[j] * xrow[j];
            }
        }
        let dx = ctx.needs[0].then(|| {
            let nf = T::of(n as f64);
            let mut dx = Vec::with_capacity(g.len());
            for (grow, xrow) in g.chunks(c).zip(self.xhat.chunks(c)) {
                for j in 0..c {
                    let k = gamma[j] * self.inv_std[j] / nf;
                    dx.push(k * (nf * grow[j] - sum_g[j] - xrow[j] * sum_gx[j]));
                }
            }
            Tensor::from_parts(ctx.inputs[0].shape().to_vec(), dx)
        });
        let dgamma = ctx.needs[1].then(|| Tensor::from_parts(vec![c], sum_gx.clone()));
        let dbeta = ctx.needs[2].then(|| Tensor::from_parts(vec![c], sum_g.clone()));
        Ok(vec![dx, dgamma, dbeta])
    }
}

struct BnInferRule<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> Backward<T> for BnInferRule<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let c = self.inv_std.len();
        let g = ctx.grad.data();
        let gamma = ctx.inputs[1].data();
        let dx = ctx.needs[0].then(|| {
            let data = g
                .chunks(c)
                .flat_map(|row| (0..c).map(move |j| row[j] * gamma[j] * self.inv_std[j]))
                .collect();
            Tensor::from_parts(ctx.inputs[0].shape().to_vec(), data)
        });
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for (grow, xrow) in g.chunks(c).zip(self.xhat.chunks(c)) {
            for j in 0..c {
                dgamma[j] += grow[j] * xrow[j];
                dbeta[j] += grow[j];
            }
        }
        Ok(vec![
            dx,
            ctx.needs[1].then(|| Tensor::from_parts(vec![c], dgamma)),
            ctx.needs[2].then(|| Tensor::from_parts(vec![c], dbeta)),
        ])
    }
}

impl<T: Real> Graph<T> {
    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<usize> {
        let c = *self.shape(x).last().unwrap_or(&0);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return shape_err(
                "batch_norm",
                format!(
                    "input {:?}, gamma {:?}, beta {:?}",
                    self.shape(x),
                    self.shape(gamma),
                    self.shape(beta)
                ),
            );
        }
        Ok(c)
    }

    fn normalize(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], inv_std: &[T]) -> (Tensor<T>, Vec<T>) {
        let c = mean.len();
        let xv = self.value(x);
        let (gm, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(xv.len());
        let mut y = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(c) {
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                y.push(gm[j] * h + bt[j]);
            }
        }
        (Tensor::from_parts(xv.shape().to_vec(), y), xhat)
    }

    /// Normalizes a channel-last tensor with the statistics of the batch
    /// itself (all axes but the last are reduced).
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats<T>)> {
        let c = self.check_bn(x, gamma, beta)?;
        let data = self.value(x).data();
        let n = data.len() / c;
        let nf = T::of(n as f64);
        let mut mean = vec![T::zero(); c];
        for row in data.chunks(c) {
            for j in 0..c {
                mean[j] += row[j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut var = vec![T::zero(); c];
        for row in data.chunks(c) {
            for j in 0..c {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= nf);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
        let (y, xhat) = self.normalize(x, gamma, beta, &mean, &inv_std);
        let out = self.op(&[x, gamma, beta], y, BnTrainRule { xhat, inv_std });
        Ok((out, BatchStats { mean, var, count: n }))
    }

    /// Normalizes with fixed (running) statistics.
    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let c = self.check_bn(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return shape_err("batch_norm", "running statistics length");
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
        let (y, xhat) = self.normalize(x, gamma, beta, mean, &inv_std);
        Ok(self.op(&[x, gamma, beta], y, BnInferRule { xhat, inv_std }))
    }
}
