use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// One named learnable array together with its gradient buffer.
#[derive(Clone, Debug)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Vec<F>,
    /// Frozen parameters never receive gradients and are skipped by the optimizer.
    pub frozen: bool,
    /// Optimizer parameter group (selects learning rate and weight decay).
    pub group: usize,
}

/// Ordered collection of named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<F> {
    params: Vec<Param<F>>,
    by_name: HashMap<String, ParamId>,
}

impl<F: Float> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::Param(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.params.len());
        let grad = vec![F::zero(); value.numel()];
        self.params.push(Param { name: name.clone(), value, grad, frozen: false, group: 0 });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<F> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<F>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.params.iter_mut()
    }

    /// Total scalar count, optionally restricted to trainable parameters.
    pub fn numel(&self, trainable_only: bool) -> usize {
        self.params
            .iter()
            .filter(|p| !trainable_only || !p.frozen)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = F::zero());
        }
    }

    /// Freezes or unfreezes every parameter whose name satisfies `pred`.
    pub fn set_frozen_where(&mut self, frozen: bool, pred: impl Fn(&str) -> bool) {
        for p in &mut self.params {
            if pred(&p.name) {
                p.frozen = frozen;
            }
        }
    }

    pub fn set_group_where(&mut self, group: usize, pred: impl Fn(&str) -> bool) {
        for p in &mut self.params {
            if pred(&p.name) {
                p.group = group;
            }
        }
    }

    /// Global L2 norm over gradients of trainable parameters.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| !p.frozen)
            .flat_map(|p| p.grad.iter())
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = F::from_f64(max_norm / norm);
            for p in self.params.iter_mut().filter(|p| !p.frozen) {
                p.grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        norm
    }

    pub fn scale_grads(&mut self, s: f64) {
        let s = F::from_f64(s);
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g *= s);
        }
    }

    /// Copies values from `other` for every parameter with a matching name
    /// and shape. Returns the number of parameters copied.
    pub fn copy_matching<G: Float>(&mut self, other: &ParamSet<G>) -> usize {
        let mut copied = 0;
        for p in &mut self.params {
            if let Some(src) = other.by_name(&p.name) {
                if src.value.shape() == p.value.shape() {
                    p.value = src.value.cast();
                    copied += 1;
                }
            }
        }
        copied
    }

    pub fn cast<G: Float>(&self) -> ParamSet<G> {
        let params = self
            .params
            .iter()
            .map(|p| Param {
                name: p.name.clone(),
                value: p.value.cast(),
                grad: p.grad.iter().map(|g| G::from_f64(g.as_f64())).collect(),
                frozen: p.frozen,
                group: p.group,
            })
            .collect();
        ParamSet { params, by_name: self.by_name.clone() }
    }
}
