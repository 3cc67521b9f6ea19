//! Define-by-run tape. Every forward op appends a node holding its output
//! value, its parents and a backward rule; [`Graph::backward`] walks the
//! nodes in exact reverse order of execution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Result};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Inputs handed to a backward rule.
pub struct BackwardCtx<'a, T> {
    /// Upstream gradient, shaped like `output`.
    pub grad: &'a Tensor<T>,
    pub inputs: &'a [&'a Tensor<T>],
    pub output: &'a Tensor<T>,
    /// Which inputs need a gradient; rules may skip the others.
    pub needs: &'a [bool],
}

/// Vector-Jacobian product of one recorded operation.
pub trait Backward<T: Real> {
    /// Returns one entry per input; `None` means "no gradient".
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>>;
}

#[derive(Clone, Copy, Debug)]
enum Source {
    Op,
    Input,
    Param { store: u64, id: ParamId },
}

struct Node<T: Real> {
    value: Tensor<T>,
    parents: Vec<Var>,
    rule: Option<Box<dyn Backward<T>>>,
    needs_grad: bool,
    source: Source,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    training: bool,
    rng: ChaCha8Rng,
}

impl<T: Real> Graph<T> {
    pub fn new(training: bool, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Vec::new(), None, false, Source::Input)
    }

    /// Leaf whose gradient can be queried from [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Vec::new(), None, requires_grad, Source::Input)
    }

    /// Leaf bound to a stored parameter. Frozen parameters and buffers are
    /// recorded as constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let entry = store.entry(id);
        let needs = entry.trainable && !entry.frozen;
        self.push(
            entry.value.clone(),
            Vec::new(),
            None,
            needs,
            Source::Param {
                store: store.uid(),
                id,
            },
        )
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a custom operation. The backward rule is dropped when no
    /// parent needs a gradient.
    pub fn custom(
        &mut self,
        parents: &[Var],
        value: Tensor<T>,
        rule: Box<dyn Backward<T>>,
    ) -> Var {
        let needs = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        let rule = if needs { Some(rule) } else { None };
        self.push(value, parents.to_vec(), rule, needs, Source::Op)
    }

    pub(crate) fn op(
        &mut self,
        parents: &[Var],
        value: Tensor<T>,
        rule: impl Backward<T> + 'static,
    ) -> Var {
        self.custom(parents, value, Box::new(rule))
    }

    fn push(
        &mut self,
        value: Tensor<T>,
        parents: Vec<Var>,
        rule: Option<Box<dyn Backward<T>>>,
        needs_grad: bool,
        source: Source,
    ) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            rule,
            needs_grad,
            source,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes[loss.0].value.len() != 1 {
            return shape_err(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            );
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(rule) = node.rule.as_ref() else {
                continue;
            };
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> =
                node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|p| self.nodes[p.0].needs_grad)
                .collect();
            let ctx = BackwardCtx {
                grad: &grad,
                inputs: &inputs,
                output: &node.value,
                needs: &needs,
            };
            let parent_grads = rule.backward(&ctx)?;
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((parent, pg), need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let (Some(pg), true) = (pg, *need) else {
                    continue;
                };
                if pg.shape() != self.shape(*parent) {
                    return shape_err(
                        "backward",
                        format!(
                            "gradient {:?} for input of shape {:?}",
                            pg.shape(),
                            self.shape(*parent)
                        ),
                    );
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.source {
                Source::Param { store, id } => Some((store, id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}

/// Result of a reverse sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(u64, ParamId, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to a leaf (input or parameter).
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub(crate) fn for_store(&self, store: u64) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().filter_map(move |&(s, id, node)| {
            if s != store {
                return None;
            }
            self.grads[node].as_ref().map(|g| (id, g))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fan_out_accumulates_gradients() {
        let mut g = Graph::<f64>::new(false, 0);
        let x = g.leaf(Tensor::new(&[2], vec![1.5, -2.0]).unwrap(), true);
        // y = x*x + x  => dy/dx = 2x + 1
        let sq = g.mul(x, x).unwrap();
        let y = g.add(sq, x).unwrap();
        let loss = g.sum_all(y).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[4.0, -3.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::<f64>::new(false, 0);
        let c = g.input(Tensor::scalar(3.0));
        let x = g.leaf(Tensor::scalar(2.0), true);
        let y = g.mul(c, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.wrt(c).is_none());
        assert_eq!(grads.wrt(x).unwrap().item(), 3.0);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::<f32>::new(false, 0);
        let x = g.leaf(Tensor::zeros(&[3]), true);
        assert!(g.backward(x).is_err());
    }
}
