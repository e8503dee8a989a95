use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

/// A named dense tensor, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, value: f64) -> Self {
        let mut t = Self::zeros(name, shape);
        t.data.iter_mut().for_each(|x| *x = value);
        t
    }

    /// Uniform in `[-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: Vec<usize>,
        bound: f64,
        rng: &mut R,
    ) -> Self {
        let mut t = Self::zeros(name, shape);
        for x in &mut t.data {
            *x = rng.gen_range(-bound..bound);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered collection of named tensors. Order is insertion order and is part
/// of the checkpoint format.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: Tensor) -> usize {
        assert!(
            self.index_of(&t.name).is_none(),
            "duplicate tensor {}",
            t.name
        );
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    /// Index of `name`, checking its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<usize, ModelError> {
        let i = self
            .index_of(name)
            .ok_or_else(|| ModelError::MissingTensor(name.to_string()))?;
        if self.tensors[i].shape != shape {
            return Err(ModelError::Shape {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: self.tensors[i].shape.clone(),
            });
        }
        Ok(i)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Zeroed buffers with the same layout, used for gradients and optimizer state.
    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| vec![0.0; t.len()]).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.tensors.iter()
    }
}

impl std::ops::Index<usize> for ParamStore {
    type Output = [f64];

    fn index(&self, i: usize) -> &[f64] {
        &self.tensors[i].data
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn lookup_and_shapes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        s.push(Tensor::uniform("w", vec![2, 3], 0.5, &mut rng));
        s.push(Tensor::zeros("b", vec![3]));
        assert_eq!(s.expect("w", &[2, 3]).unwrap(), 0);
        assert!(matches!(
            s.expect("w", &[3, 2]),
            Err(ModelError::Shape { .. })
        ));
        assert!(matches!(
            s.expect("x", &[1]),
            Err(ModelError::MissingTensor(_))
        ));
        assert_eq!(s.num_values(), 9);
        assert!(s[0].iter().all(|v| v.abs() < 0.5));
    }
}
