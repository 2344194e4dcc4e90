use std::collections::HashMap;

use super::rng::{hash_str, mix_seed, Rng};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A named parameter tensor. `trainable` is the only thing the optimizer
/// consults when deciding what to update.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub tensor: Tensor<f32>,
    pub trainable: bool,
}

impl ParamGroup {
    pub fn new(name: impl Into<String>, tensor: Tensor<f32>, trainable: bool) -> Self {
        ParamGroup {
            name: name.into(),
            tensor,
            trainable,
        }
    }

    pub fn count(&self) -> usize {
        self.tensor.numel()
    }
}

/// Ordered collection of uniquely named parameter groups.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    groups: Vec<ParamGroup>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_groups(groups: Vec<ParamGroup>) -> Result<Self> {
        let mut store = ParamStore::new();
        for g in groups {
            store.insert(g)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, group: ParamGroup) -> Result<()> {
        if self.index.contains_key(&group.name) {
            return Err(Error::Contract(format!(
                "duplicate parameter group {}",
                group.name
            )));
        }
        self.index.insert(group.name.clone(), self.groups.len());
        self.groups.push(group);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&ParamGroup> {
        self.index
            .get(name)
            .map(|&i| &self.groups[i])
            .ok_or_else(|| Error::Wiring(format!("no parameter group named {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamGroup> {
        self.index.get(name).map(|&i| &mut self.groups[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamGroup> {
        self.groups.iter_mut()
    }

    pub fn into_groups(self) -> Vec<ParamGroup> {
        self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Sets `trainable` on every group whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for g in &mut self.groups {
            if g.name.starts_with(prefix) {
                g.trainable = trainable;
            }
        }
    }

    pub fn count(&self) -> usize {
        self.groups.iter().map(ParamGroup::count).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.groups.iter().filter(|g| g.trainable).map(ParamGroup::count).sum()
    }

    /// Removes and returns every group whose name starts with `prefix`.
    pub fn remove_prefix(&mut self, prefix: &str) -> Vec<ParamGroup> {
        let (taken, kept): (Vec<_>, Vec<_>) = std::mem::take(&mut self.groups)
            .into_iter()
            .partition(|g| g.name.starts_with(prefix));
        self.index = kept
            .iter()
            .enumerate()
            .map(|(i, g)| (g.name.clone(), i))
            .collect();
        self.groups = kept;
        taken
    }
}

/// How a freshly created parameter is filled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

/// Shape and initializer of a parameter, known before any allocation.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn count(&self) -> usize {
        self.shape.iter().product()
    }

    /// Allocates the tensor. Random draws come from a stream keyed by
    /// `(seed, name)`, so a parameter's initial value does not depend on
    /// which other parameters exist.
    pub fn materialize(&self, seed: u64, trainable: bool) -> ParamGroup {
        let tensor = match self.init {
            Init::Zeros => Tensor::zeros(&self.shape),
            Init::Ones => Tensor::ones(&self.shape),
            Init::Normal(std) => {
                let mut rng = Rng::new(mix_seed(seed, hash_str(&self.name)));
                rng.normal_tensor(&self.shape, std)
            }
        };
        ParamGroup::new(self.name.clone(), tensor, trainable)
    }
}
