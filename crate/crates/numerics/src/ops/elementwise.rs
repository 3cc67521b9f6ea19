use rand::Rng;

use crate::error::{shape_err, Result};
use crate::graph::{Backward, BackwardCtx, Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

struct BinaryRule(Binary);

impl<T: Real> Backward<T> for BinaryRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let g = ctx.grad;
        let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
        let out = match self.0 {
            Binary::Add => vec![Some(g.clone()), Some(g.clone())],
            Binary::Sub => vec![Some(g.clone()), Some(g.map(|v| -v))],
            Binary::Mul => {
                let da = ctx.needs[0].then(|| zip_map(g, b, |g, b| g * b));
                let db = ctx.needs[1].then(|| zip_map(g, a, |g, a| g * a));
                vec![da, db]
            }
        };
        Ok(out)
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

#[derive(Clone, Copy)]
enum Unary {
    Relu,
    Sigmoid,
    Tanh,
}

struct UnaryRule(Unary);

impl<T: Real> Backward<T> for UnaryRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let y = ctx.output;
        let one = T::one();
        let dx = match self.0 {
            Unary::Relu => zip_map(ctx.grad, y, |g, y| if y > T::zero() { g } else { T::zero() }),
            Unary::Sigmoid => zip_map(ctx.grad, y, |g, y| g * y * (one - y)),
            Unary::Tanh => zip_map(ctx.grad, y, |g, y| g * (one - y * y)),
        };
        Ok(vec![Some(dx)])
    }
}

struct AffineRule<T> {
    scale: T,
}

impl<T: Real> Backward<T> for AffineRule<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let s = self.scale;
        Ok(vec![Some(ctx.grad.map(|g| g * s))])
    }
}

/// Multiplies by a saved mask (dropout).
struct MaskRule<T> {
    mask: Vec<T>,
}

impl<T: Real> Backward<T> for MaskRule<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let data = ctx
            .grad
            .data()
            .iter()
            .zip(&self.mask)
            .map(|(&g, &m)| g * m)
            .collect();
        Ok(vec![Some(Tensor::from_parts(ctx.grad.shape().to_vec(), data))])
    }
}

struct SumRule;

impl<T: Real> Backward<T> for SumRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let g = ctx.grad.item();
        Ok(vec![Some(Tensor::full(ctx.inputs[0].shape(), g))])
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Graph<T> {
    fn binary(&mut self, a: Var, b: Var, kind: Binary, name: &'static str) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err(name, format!("{:?} vs {:?}", ta.shape(), tb.shape()));
        }
        let out = match kind {
            Binary::Add => zip_map(ta, tb, |x, y| x + y),
            Binary::Sub => zip_map(ta, tb, |x, y| x - y),
            Binary::Mul => zip_map(ta, tb, |x, y| x * y),
        };
        Ok(self.op(&[a, b], out, BinaryRule(kind)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul, "mul")
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        self.op(&[x], out, AffineRule { scale })
    }

    fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let f = match kind {
            Unary::Relu => |v: T| v.max(T::zero()),
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => |v: T| v.tanh(),
        };
        let out = self.value(x).map(f);
        self.op(&[x], out, UnaryRule(kind))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`;
    /// otherwise the identity.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if !self.is_training() || rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let scale = T::of(1.0 / keep);
        let n = self.value(x).len();
        let rng = self.rng();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        self.op(&[x], out, MaskRule { mask })
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        Ok(self.op(&[x], Tensor::scalar(s), SumRule))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum_all(x)?;
        Ok(self.affine(s, T::one() / T::of(n as f64), T::zero()))
    }
}
