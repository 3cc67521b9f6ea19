use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{NumericsError, Result};
use crate::graph::Gradients;
use crate::real::Real;
use crate::tensor::Tensor;

static NEXT_STORE_UID: AtomicU64 = AtomicU64::new(1);

fn next_uid() -> u64 {
    NEXT_STORE_UID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Excluded from optimizer updates; still a model weight.
    pub frozen: bool,
    /// `false` for running statistics and other non-learned buffers.
    pub trainable: bool,
}

/// Parameter counts split by role.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParamCount {
    pub trainable: usize,
    pub frozen: usize,
    pub buffers: usize,
}

impl ParamCount {
    /// Learned weights, frozen or not.
    pub fn weights(&self) -> usize {
        self.trainable + self.frozen
    }
}

/// Named model parameters with their accumulated gradients.
#[derive(Debug)]
pub struct ParamStore<T> {
    uid: u64,
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Clone for ParamStore<T> {
    /// A clone is an independent store and gets its own identity.
    fn clone(&self) -> Self {
        Self {
            uid: next_uid(),
            entries: self.entries.clone(),
            by_name: self.by_name.clone(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            uid: next_uid(),
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    fn insert(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(NumericsError::DuplicateParameter(name.to_string()));
        }
        let id = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            grad: Tensor::zeros(value.shape()),
            value,
            frozen: false,
            trainable,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        self.insert(name, value, false)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].grad
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry<T>> {
        self.entries.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds the parameter gradients of a sweep that read from this store.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.for_store(self.uid) {
            let entry = &mut self.entries[id.0];
            if entry.trainable && !entry.frozen {
                entry.grad.add_assign(g);
            }
        }
    }

    /// Freezes (or unfreezes) every parameter whose name starts with `prefix`.
    /// Returns how many entries changed.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) -> usize {
        let mut n = 0;
        for e in &mut self.entries {
            if e.name.starts_with(prefix) {
                e.frozen = frozen;
                n += 1;
            }
        }
        n
    }

    pub fn count(&self) -> ParamCount {
        let mut c = ParamCount::default();
        for e in &self.entries {
            let n = e.value.len();
            match (e.trainable, e.frozen) {
                (false, _) => c.buffers += n,
                (true, true) => c.frozen += n,
                (true, false) => c.trainable += n,
            }
        }
        c
    }

    /// Copies every value whose name (after stripping `from_prefix` and
    /// prepending `to_prefix`) exists in `self` with the same shape.
    pub fn copy_from(
        &mut self,
        other: &ParamStore<T>,
        from_prefix: &str,
        to_prefix: &str,
    ) -> Result<usize> {
        let mut copied = 0;
        for e in &other.entries {
            let Some(rest) = e.name.strip_prefix(from_prefix) else {
                continue;
            };
            let name = format!("{to_prefix}{rest}");
            let Some(&idx) = self.by_name.get(&name) else {
                continue;
            };
            let dst = &mut self.entries[idx];
            if dst.value.shape() != e.value.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "copy_from",
                    detail: format!(
                        "{name}: {:?} vs {:?}",
                        dst.value.shape(),
                        e.value.shape()
                    ),
                });
            }
            dst.value = e.value.clone();
            copied += 1;
        }
        Ok(copied)
    }

    /// Overwrites all values from a list of named tensors.
    pub fn load_named(&mut self, named: &[(String, Tensor<T>)]) -> Result<()> {
        for (name, value) in named {
            let idx = *self
                .by_name
                .get(name)
                .ok_or_else(|| NumericsError::UnknownParameter(name.clone()))?;
            let dst = &mut self.entries[idx];
            if dst.value.shape() != value.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "load_named",
                    detail: format!("{name}: {:?} vs {:?}", dst.value.shape(), value.shape()),
                });
            }
            dst.value = value.clone();
        }
        if let Some(missing) = self
            .entries
            .iter()
            .find(|e| !named.iter().any(|(n, _)| n == &e.name))
        {
            return Err(NumericsError::Checkpoint(format!(
                "checkpoint lacks parameter `{}`",
                missing.name
            )));
        }
        Ok(())
    }

    /// Snapshot of all values (for keeping best weights).
    pub fn values(&self) -> Vec<Tensor<T>> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn restore_values(&mut self, values: Vec<Tensor<T>>) {
        assert_eq!(values.len(), self.entries.len());
        for (e, v) in self.entries.iter_mut().zip(values) {
            assert_eq!(e.value.shape(), v.shape());
            e.value = v;
        }
    }

    /// Same parameters in another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            uid: next_uid(),
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    grad: e.grad.cast(),
                    frozen: e.frozen,
                    trainable: e.trainable,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add("a", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(
            s.add("a", Tensor::zeros(&[2])),
            Err(NumericsError::DuplicateParameter(_))
        ));
    }

    #[test]
    fn count_splits_roles() {
        let mut s = ParamStore::<f32>::new();
        s.add("sub.w", Tensor::zeros(&[3, 4])).unwrap();
        s.add("head.w", Tensor::zeros(&[5])).unwrap();
        s.add_buffer("sub.mean", Tensor::zeros(&[4])).unwrap();
        assert_eq!(s.set_frozen("sub.", true), 2);
        let c = s.count();
        assert_eq!(c, ParamCount { trainable: 5, frozen: 12, buffers: 4 });
        assert_eq!(c.weights(), 17);
    }

    #[test]
    fn clones_have_distinct_identity() {
        let s = ParamStore::<f32>::new();
        assert_ne!(s.uid(), s.clone().uid());
    }

    #[test]
    fn copy_from_maps_prefixes() {
        let mut a = ParamStore::<f32>::new();
        a.add("pre.x", Tensor::full(&[2], 3.0)).unwrap();
        a.add("head.y", Tensor::full(&[1], 1.0)).unwrap();
        let mut b = ParamStore::<f32>::new();
        b.add("model.x", Tensor::zeros(&[2])).unwrap();
        assert_eq!(b.copy_from(&a, "pre.", "model.").unwrap(), 1);
        assert_eq!(b.value(b.id("model.x").unwrap()).data(), &[3.0, 3.0]);
    }
}
