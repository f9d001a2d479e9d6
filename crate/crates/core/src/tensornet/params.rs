//! Named trainable parameters with freeze flags, gradient and momentum buffers.

use sha2::{Digest, Sha256};

use super::graph::{Gradients, Graph, Var};
use super::tensor::{Shape, Tensor};
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Shape,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub momentum: Vec<T>,
    pub frozen: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, shape: Shape, value: Vec<T>) -> Self {
        let n = value.len();
        assert_eq!(n, shape.numel(), "param value length");
        Self {
            name: name.into(),
            shape,
            value,
            grad: vec![T::zero(); n],
            momentum: vec![T::zero(); n],
            frozen: false,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
}

/// Tape handles of each parameter for one forward pass, in `ParamSet` order.
#[derive(Debug, Clone)]
pub struct Bindings(pub Vec<Var>);

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Append a parameter; names must be unique.
    pub fn push(&mut self, p: Param<T>) -> Result<usize> {
        if self.params.iter().any(|q| q.name == p.name) {
            return invalid(format!("duplicate parameter name {}", p.name));
        }
        self.params.push(p);
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, i: usize) -> &Param<T> {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param<T> {
        &mut self.params[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for p in &mut self.params {
            p.frozen = frozen;
        }
    }

    pub fn all_frozen(&self) -> bool {
        self.params.iter().all(|p| p.frozen)
    }

    /// Put every parameter on the tape. Frozen parameters are plain inputs,
    /// so their weight gradients are never formed.
    pub fn bind(&self, g: &mut Graph<T>) -> Bindings {
        Bindings(
            self.params
                .iter()
                .map(|p| g.leaf(Tensor::new(p.shape, p.value.clone()).expect("param shape"), !p.frozen))
                .collect(),
        )
    }

    /// Overwrite `grad` buffers from a backward pass; parameters without a
    /// gradient (frozen or unused) get zeros.
    pub fn load_grads(&mut self, grads: &Gradients<T>, b: &Bindings) {
        for (p, &v) in self.params.iter_mut().zip(&b.0) {
            match grads.get(v) {
                Some(g) if !p.frozen => p.grad.copy_from_slice(g),
                _ => p.grad.fill(T::zero()),
            }
        }
    }

    pub fn zero_momentum(&mut self) {
        for p in &mut self.params {
            p.momentum.fill(T::zero());
        }
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for d in [p.shape.n, p.shape.c, p.shape.z, p.shape.y, p.shape.x] {
                h.update((d as u64).to_le_bytes());
            }
            for &v in &p.value {
                h.update(v.as_f64().to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| {
                    let conv = |v: &Vec<T>| v.iter().map(|&x| U::from(x).expect("cast")).collect::<Vec<U>>();
                    Param {
                        name: p.name.clone(),
                        shape: p.shape,
                        value: conv(&p.value),
                        grad: conv(&p.grad),
                        momentum: conv(&p.momentum),
                        frozen: p.frozen,
                    }
                })
                .collect(),
        }
    }
}
