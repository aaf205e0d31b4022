//! Named parameter storage shared by the encoder, classifier and
//! embedding table. Parameters live outside any graph; each batch binds
//! them as leaves and reads gradients back out after the reverse sweep.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Var};
use rand::Rng;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamTensor<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<T>, trainable: bool) -> ParamId {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "parameter {name}: shape/data length mismatch"
        );
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.by_name.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamTensor {
            name: name.to_string(),
            shape,
            data,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor<T> {
        &mut self.entries[id.0]
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamTensor<T>)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Number of trainable scalars actually allocated.
    pub fn trainable_scalars(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.data.len())
            .sum()
    }

    /// Register every parameter as a graph leaf; trainable parameters
    /// request gradients.
    pub fn bind(&self, graph: &mut Graph<T>) -> Result<Binding> {
        let mut vars = Vec::with_capacity(self.entries.len());
        for p in &self.entries {
            vars.push(graph.leaf(p.data.clone(), p.shape.clone(), p.trainable)?);
        }
        Ok(Binding { vars })
    }

    /// Collect gradients after backward, aligned with store order.
    /// Missing gradients (parameter unused in this graph) come back as
    /// zeros. NaN/Inf gradients are an error naming the parameter.
    pub fn grads(&self, graph: &Graph<T>, binding: &Binding) -> Result<Vec<Vec<T>>> {
        let mut out = Vec::with_capacity(self.entries.len());
        for (p, &v) in self.entries.iter().zip(&binding.vars) {
            let g = match graph.grad(v) {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); p.data.len()],
            };
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in parameter {}",
                    p.name
                )));
            }
            out.push(g);
        }
        Ok(out)
    }

    /// Convert precision, e.g. an f32 training model into an f64 copy for
    /// gradient checking.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut store = ParamStore::new();
        for p in &self.entries {
            store.add(
                &p.name,
                p.shape.clone(),
                p.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
                p.trainable,
            );
        }
        store
    }
}

/// Graph leaves for one forward/backward pass, aligned with store order.
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// Glorot-uniform initialization: U(-l, l) with l = sqrt(6/(fan_in+fan_out)).
pub fn glorot_uniform<T: Scalar, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Vec<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols)
        .map(|_| T::from_f64(rng.gen_range(-limit..limit)))
        .collect()
}
