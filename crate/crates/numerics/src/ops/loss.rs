use crate::error::{shape_err, Result};
use crate::graph::{Backward, BackwardCtx, Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-7;

/// Class-weighted binary cross-entropy terms for one prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassWeights {
    pub positive: f64,
    pub negative: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self {
            positive: 1.0,
            negative: 1.0,
        }
    }
}

struct BceRule<T> {
    labels: Vec<T>,
    weights: ClassWeights,
}

fn clamp_prob<T: Real>(p: T) -> T {
    let eps = T::of(PROB_EPS);
    p.max(eps).min(T::one() - eps)
}

impl<T: Real> Backward<T> for BceRule<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let p = ctx.inputs[0];
        let n = T::of(p.len() as f64);
        let scale = ctx.grad.item() / n;
        let (wp, wn) = (T::of(self.weights.positive), T::of(self.weights.negative));
        // Straight-through the clamp: saturated sigmoids keep a gradient.
        let data = p
            .data()
            .iter()
            .zip(&self.labels)
            .map(|(&pv, &y)| {
                let pc = clamp_prob(pv);
                scale * (-wp * y / pc + wn * (T::one() - y) / (T::one() - pc))
            })
            .collect();
        Ok(vec![Some(Tensor::from_parts(p.shape().to_vec(), data))])
    }
}

impl<T: Real> Graph<T> {
    /// Mean over the batch of `-[w+ y ln p + w- (1-y) ln(1-p)]`.
    pub fn bce_weighted(&mut self, p: Var, labels: &[T], weights: ClassWeights) -> Result<Var> {
        let pv = self.value(p);
        if pv.len() != labels.len() {
            return shape_err(
                "bce_weighted",
                format!("{} predictions, {} labels", pv.len(), labels.len()),
            );
        }
        let (wp, wn) = (T::of(weights.positive), T::of(weights.negative));
        let mut total = T::zero();
        for (&pr, &y) in pv.data().iter().zip(labels) {
            let pc = clamp_prob(pr);
            total += -(wp * y * pc.ln() + wn * (T::one() - y) * (T::one() - pc).ln());
        }
        let loss = total / T::of(labels.len() as f64);
        let rule = BceRule {
            labels: labels.to_vec(),
            weights,
        };
        Ok(self.op(&[p], Tensor::scalar(loss), rule))
    }
}
