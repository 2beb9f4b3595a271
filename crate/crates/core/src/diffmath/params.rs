use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DiffError, Tensor};

/// Index of a trainable tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradients keyed by parameter, in deterministic id order.
pub type Gradients = BTreeMap<ParamId, Tensor>;

/// Named, ordered collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// One entry of the flat checkpoint map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name; parameter names are fixed by network construction.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn to_entries(&self) -> BTreeMap<String, ParamEntry> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(name, t)| {
                (
                    name.clone(),
                    ParamEntry {
                        shape: [t.rows(), t.cols()],
                        values: t.data().to_vec(),
                    },
                )
            })
            .collect()
    }

    /// Overwrites every parameter from `entries`; names and shapes must match exactly.
    pub fn load_entries(&mut self, entries: &BTreeMap<String, ParamEntry>) -> Result<(), DiffError> {
        if entries.len() != self.names.len() {
            return Err(DiffError::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.names.len(),
                entries.len()
            )));
        }
        for (name, tensor) in self.names.iter().zip(self.tensors.iter_mut()) {
            let entry = entries
                .get(name)
                .ok_or_else(|| DiffError::Checkpoint(format!("missing parameter {name}")))?;
            let [rows, cols] = entry.shape;
            if (rows, cols) != tensor.shape() || entry.values.len() != rows * cols {
                return Err(DiffError::Checkpoint(format!(
                    "parameter {name}: expected shape {:?}, found {:?} with {} values",
                    tensor.shape(),
                    entry.shape,
                    entry.values.len()
                )));
            }
            *tensor = Tensor::from_vec(rows, cols, entry.values.clone());
        }
        Ok(())
    }
}
