//! Central finite-difference gradient checks (64-bit only).

use crate::error::{NumericsError, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so that coordinates with a
/// near-zero gradient are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input or parameter index, flat coordinate)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Default)]
struct Tracker {
    max: f64,
    worst: Option<(usize, usize)>,
    checked: usize,
}

impl Tracker {
    fn record(&mut self, which: usize, coord: usize, analytic: f64, numeric: f64) -> Result<()> {
        if !analytic.is_finite() || !numeric.is_finite() {
            return Err(NumericsError::NonFiniteGradient { input: which, coord });
        }
        let e = relative_error(analytic, numeric);
        if e > self.max || self.worst.is_none() {
            self.max = e;
            self.worst = Some((which, coord));
        }
        self.checked += 1;
        Ok(())
    }

    fn finish(self, tolerance: f64) -> GradCheckReport {
        GradCheckReport {
            max_rel_error: self.max,
            worst: self.worst,
            checked: self.checked,
            tolerance,
            passed: self.max <= tolerance,
        }
    }
}

/// Checks the gradient of a scalar function of `inputs`.
///
/// `f` is rebuilt on a fresh training-mode graph with a fixed seed for every
/// evaluation, so dropout masks repeat between the perturbed runs.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new(true, 0);
        let vars: Vec<Var> = vals.iter().map(|t| g.input(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::new(true, 0);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut tracker = Tracker::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            tracker.record(i, j, analytic.data()[j], (up - down) / (2.0 * FD_STEP))?;
        }
    }
    Ok(tracker.finish(tolerance))
}

/// Checks the gradient of a scalar model loss with respect to every
/// trainable, unfrozen parameter in `store`.
///
/// `stride` checks every `stride`-th coordinate of each parameter (1 = all).
pub fn grad_check_params<F>(
    store: &mut ParamStore<f64>,
    mut f: F,
    tolerance: f64,
    stride: usize,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &mut ParamStore<f64>) -> Result<Var>,
{
    let stride = stride.max(1);
    store.zero_grad();
    {
        let mut g = Graph::new(true, 0);
        let loss = f(&mut g, store)?;
        let grads = g.backward(loss)?;
        store.accumulate(&grads);
    }
    let mut eval = |store: &mut ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(true, 0);
        let loss = f(&mut g, store)?;
        Ok(g.value(loss).item())
    };
    let targets: Vec<_> = store
        .iter()
        .filter(|(_, e)| e.trainable && !e.frozen)
        .map(|(id, e)| (id, e.grad.clone()))
        .collect();

    let mut tracker = Tracker::default();
    for (k, (id, analytic)) in targets.into_iter().enumerate() {
        for j in (0..analytic.len()).step_by(stride) {
            let orig = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = orig + FD_STEP;
            let up = eval(store)?;
            store.value_mut(id).data_mut()[j] = orig - FD_STEP;
            let down = eval(store)?;
            store.value_mut(id).data_mut()[j] = orig;
            tracker.record(k, j, analytic.data()[j], (up - down) / (2.0 * FD_STEP))?;
        }
    }
    Ok(tracker.finish(tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Backward, BackwardCtx};

    #[test]
    fn linear_map_agrees_to_machine_precision() {
        let a = Tensor::from_fn(&[3, 2], |i| i as f64 - 2.5);
        let x = Tensor::from_fn(&[2, 1], |i| 0.3 + i as f64);
        let report = grad_check(
            |g, v| {
                let y = g.matmul(v[0], v[1])?;
                g.sum_all(y)
            },
            &[a, x],
            1e-4,
        )
        .unwrap();
        assert!(report.passed);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        assert_eq!(report.checked, 8);
    }

    /// y = x², but the backward rule claims dy/dx = 3x.
    struct WrongSquare;

    impl Backward<f64> for WrongSquare {
        fn backward(&self, ctx: &BackwardCtx<'_, f64>) -> Result<Vec<Option<Tensor<f64>>>> {
            let x = ctx.inputs[0];
            let g = ctx.grad;
            let data = x.data().iter().zip(g.data()).map(|(x, g)| 3.0 * x * g).collect();
            Ok(vec![Some(Tensor::new(x.shape(), data)?)])
        }
    }

    #[test]
    fn corrupted_backward_is_reported() {
        let x = Tensor::from_fn(&[4], |i| 0.5 + i as f64);
        let report = grad_check(
            |g, v| {
                let sq = g.value(v[0]).map(|x| x * x);
                let y = g.custom(&[v[0]], sq, Box::new(WrongSquare));
                g.sum_all(y)
            },
            &[x],
            1e-4,
        )
        .unwrap();
        assert!(!report.passed);
        assert!((report.max_rel_error - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let x = Tensor::from_fn(&[1], |_| 1.0);
        let res = grad_check(
            |g, v| {
                let inf = g.value(v[0]).map(|_| f64::INFINITY);
                let y = g.custom(&[v[0]], inf, Box::new(WrongSquare));
                g.sum_all(y)
            },
            &[x],
            1e-4,
        );
        assert!(matches!(res, Err(NumericsError::NonFiniteGradient { .. })));
    }
}
