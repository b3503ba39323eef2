use super::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoreEntry<T: Scalar> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Buffers such as running statistics are stored alongside weights but never trained.
    pub trainable: bool,
}

/// Named, ordered weight store. Insertion order is the serialization order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    entries: Vec<StoreEntry<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { entries: Vec::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        let tensor = tensor.with_requires_grad(trainable);
        self.entries.push(StoreEntry {
            name,
            tensor,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[StoreEntry<T>] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &StoreEntry<T> {
        &self.entries[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Element count over trainable tensors.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.numel())
            .sum()
    }

    /// Places every entry on the tape; trainable entries become differentiable leaves.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.entries
            .iter()
            .map(|e| {
                let mut t = e.tensor.clone();
                t.zero_grad();
                t.set_requires_grad(e.trainable);
                tape.leaf(t)
            })
            .collect()
    }

    /// Adds leaf gradients recorded on `tape` into the stored tensors.
    pub fn collect_grads(&mut self, tape: &Tape<T>, bound: &[Var]) -> Result<()> {
        if bound.len() != self.entries.len() {
            return Err(Error::InvalidArgument(format!(
                "binding has {} entries, store has {}",
                bound.len(),
                self.entries.len()
            )));
        }
        for (e, &v) in self.entries.iter_mut().zip(bound) {
            if !e.trainable {
                continue;
            }
            match tape.grad(v) {
                Some(g) => e.tensor.accumulate_grad(g)?,
                None => e.tensor.accumulate_grad(&vec![T::zero(); e.tensor.numel()])?,
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.zero_grad();
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| StoreEntry {
                    name: e.name.clone(),
                    tensor: e.tensor.cast(),
                    trainable: e.trainable,
                })
                .collect(),
        }
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut StoreEntry<T>> {
        self.entries.iter_mut()
    }
}
