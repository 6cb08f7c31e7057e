//! Named parameters, their gradients and momentum buffers.

use std::collections::HashMap;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed::Rng;

use super::tensor::{Real, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct Entry<T> {
    pub name: String,
    pub value: Tensor4<T>,
    pub grad: Tensor4<T>,
    pub velocity: Tensor4<T>,
    /// Running statistics are stored alongside parameters but never optimized.
    pub trainable: bool,
    grad_ready: bool,
}

/// Flat store of every tensor a network owns, addressed by [`ParamId`].
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T = f32> {
    entries: Vec<Entry<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    fn insert(&mut self, name: String, value: Tensor4<T>, trainable: bool) -> ParamId {
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name {name}");
        let shape = value.shape();
        self.by_name.insert(name.clone(), self.entries.len());
        self.entries.push(Entry {
            name,
            grad: Tensor4::zeros(shape),
            velocity: Tensor4::zeros(shape),
            value,
            trainable,
            grad_ready: false,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor4<T>) -> ParamId {
        self.insert(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor4<T>) -> ParamId {
        self.insert(name.into(), value, false)
    }

    /// Kaiming-uniform initialization with bound `sqrt(6 / fan_in)`.
    pub fn add_kaiming(&mut self, name: impl Into<String>, shape: [usize; 4], fan_in: usize, rng: &mut Rng) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data = (0..shape.iter().product::<usize>())
            .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
            .collect();
        self.add_param(name, Tensor4::from_vec(shape, data).expect("sized"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Entry<T>] {
        &mut self.entries
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &Tensor4<T> {
        &self.entries[id.0].value
    }

    #[inline]
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor4<T> {
        &mut self.entries[id.0].value
    }

    #[inline]
    pub fn grad(&self, id: ParamId) -> &Tensor4<T> {
        &self.entries[id.0].grad
    }

    /// Gradient buffer for accumulation; marks the gradient as populated.
    #[inline]
    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor4<T> {
        let e = &mut self.entries[id.0];
        e.grad_ready = true;
        &mut e.grad
    }

    /// Borrow a value and another entry's gradient at once.
    pub fn value_and_grad(&mut self, value: ParamId, grad: ParamId) -> (&Tensor4<T>, &mut Tensor4<T>) {
        assert_ne!(value.0, grad.0);
        let (lo, hi) = (value.0.min(grad.0), value.0.max(grad.0));
        let (a, b) = self.entries.split_at_mut(hi);
        let (first, second) = (&mut a[lo], &mut b[0]);
        let (v, g) = if value.0 < grad.0 { (first, second) } else { (second, first) };
        g.grad_ready = true;
        (&v.value, &mut g.grad)
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(T::zero());
            e.grad_ready = false;
        }
    }

    pub fn grad_ready(&self, id: ParamId) -> bool {
        self.entries[id.0].grad_ready
    }

    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// `v <- momentum * v + grad + weight_decay * p; p <- p - lr * v`, then
/// gradients are cleared.
pub fn sgd_step<T: Real>(params: &mut ParamSet<T>, cfg: SgdConfig) -> Result<()> {
    if let Some(e) = params.entries.iter().find(|e| e.trainable && !e.grad_ready) {
        return Err(Error::State(format!("parameter {} has no gradient", e.name)));
    }
    let (lr, mom, wd) = (T::from_f64(cfg.lr), T::from_f64(cfg.momentum), T::from_f64(cfg.weight_decay));
    for e in params.entries.iter_mut().filter(|e| e.trainable) {
        let Entry {
            value, grad, velocity, ..
        } = e;
        for ((p, g), v) in value.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
            *v = mom * *v + *g + wd * *p;
            *p = *p - lr * *v;
        }
    }
    params.zero_grads();
    Ok(())
}
