//! Flat parameter storage with named tensor views.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl TensorMeta {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All trainable parameters of a model as one flat `f64` vector. The layout
/// is fixed at construction; afterwards only the values change.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    values: Vec<f64>,
    tensors: Vec<TensorMeta>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Appends a named tensor and returns its offset into the flat vector.
    pub fn register(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> usize {
        let len: usize = shape.iter().product();
        assert_eq!(len, values.len(), "tensor shape/value mismatch");
        let offset = self.values.len();
        self.tensors.push(TensorMeta {
            name: name.into(),
            offset,
            shape: shape.to_vec(),
        });
        self.values.extend_from_slice(&values);
        offset
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn set_values(&mut self, values: Vec<f64>) {
        assert_eq!(values.len(), self.values.len(), "parameter count is fixed");
        self.values = values;
    }

    pub fn tensors(&self) -> &[TensorMeta] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorMeta> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor_values(&self, name: &str) -> Option<&[f64]> {
        let t = self.tensor(name)?;
        Some(&self.values[t.offset..t.offset + t.len()])
    }

    /// Name of the tensor owning flat index `idx` (for error reporting).
    pub fn tensor_name_at(&self, idx: usize) -> &str {
        for t in &self.tensors {
            if idx >= t.offset && idx < t.offset + t.len() {
                return &t.name;
            }
        }
        "<unknown>"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_and_lookup() {
        let mut p = ParamSet::new();
        let off = p.register("layer.weight", &[2, 3], vec![1.0; 6]);
        assert_eq!(off, 0);
        let off2 = p.register("layer.bias", &[2], vec![0.5, 0.5]);
        assert_eq!(off2, 6);
        assert_eq!(p.len(), 8);
        assert_eq!(p.tensor_values("layer.bias").unwrap(), &[0.5, 0.5]);
        assert_eq!(p.tensor_name_at(7), "layer.bias");
        assert_eq!(p.tensor_name_at(3), "layer.weight");
    }
}
