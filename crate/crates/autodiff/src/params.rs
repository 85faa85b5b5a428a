use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::AdError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub trainable: bool,
}

/// Named tensors, iterated in sorted name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    params: BTreeMap<String, Param>,
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), Param { value, trainable: true });
    }

    pub fn insert_frozen(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), Param { value, trainable: false });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(|p| p.value.is_finite())
    }

    /// JSON object mapping each name to `{shape, values}`; keys sorted.
    pub fn to_json(&self) -> serde_json::Value {
        let map: BTreeMap<&str, StoredTensor> = self
            .params
            .iter()
            .map(|(k, p)| {
                (k.as_str(), StoredTensor { shape: p.value.shape().to_vec(), values: p.value.data().to_vec() })
            })
            .collect();
        serde_json::to_value(map).expect("tensor map serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, AdError> {
        let map: BTreeMap<String, StoredTensor> =
            serde_json::from_value(value.clone()).map_err(|e| AdError::Checkpoint(e.to_string()))?;
        let mut out = Self::new();
        for (name, t) in map {
            let value = Tensor::new(t.shape, t.values).map_err(|e| AdError::Checkpoint(format!("{name}: {e}")))?;
            out.insert(name, value);
        }
        Ok(out)
    }

    /// Replaces values of existing entries, checking that names and shapes
    /// match exactly.
    pub fn load_values(&mut self, other: &ParameterSet) -> Result<(), AdError> {
        for name in other.params.keys() {
            if !self.params.contains_key(name) {
                return Err(AdError::Checkpoint(format!("unexpected parameter `{name}`")));
            }
        }
        for (name, p) in self.params.iter_mut() {
            let src = other.params.get(name).ok_or_else(|| AdError::Checkpoint(format!("missing parameter `{name}`")))?;
            if src.value.shape() != p.value.shape() {
                return Err(AdError::Checkpoint(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    src.value.shape(),
                    p.value.shape()
                )));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), AdError> {
        let text = serde_json::to_string(&self.to_json()).map_err(|e| AdError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| AdError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, AdError> {
        let text = std::fs::read_to_string(path).map_err(|e| AdError::Checkpoint(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| AdError::Checkpoint(e.to_string()))?;
        Self::from_json(&value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_exact() {
        let mut ps = ParameterSet::new();
        ps.insert("b", Tensor::vector(vec![0.1, -2.5e-17, 3.0]));
        ps.insert("a", Tensor::new(vec![2, 2], vec![1.0 / 3.0, 2.0, -7.0, 1e300]).unwrap());
        let json = ps.to_json();
        let text = serde_json::to_string(&json).unwrap();
        assert!(text.find("\"a\"").unwrap() < text.find("\"b\"").unwrap());
        let back = ParameterSet::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, ps);
    }

    #[test]
    fn load_values_rejects_shape_mismatch() {
        let mut ps = ParameterSet::new();
        ps.insert("w", Tensor::zeros(&[2, 3]));
        let mut other = ParameterSet::new();
        other.insert("w", Tensor::zeros(&[3, 2]));
        assert!(ps.load_values(&other).is_err());
        let mut extra = ps.clone();
        extra.insert("v", Tensor::zeros(&[1]));
        assert!(ps.load_values(&extra).is_err());
    }
}
