use rand::Rng;

use crate::tensor::{Gradients, Real, Tape, Tensor, Var};

/// Index of a tensor inside [`Params`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for Params<T> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }
}

impl<T: Real> Params<T> {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }
}

/// Uniform in `(-bound, bound)`.
pub(crate) fn uniform<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
}

/// A tape plus lazily registered parameter leaves.
pub struct Graph<'p, T: Real> {
    pub tape: Tape<T>,
    params: &'p Params<T>,
    vars: Vec<Option<Var>>,
    trainable: bool,
}

impl<'p, T: Real> Graph<'p, T> {
    /// Parameters become tape params (gradients tracked) when `trainable`,
    /// constants otherwise.
    pub fn new(params: &'p Params<T>, trainable: bool) -> Self {
        Self { tape: Tape::new(), params, vars: vec![None; params.len()], trainable }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let t = self.params.get(id).clone();
        let v = if self.trainable { self.tape.param(t) } else { self.tape.constant(t) };
        self.vars[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.tape.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }

    /// Per-parameter gradients; parameters that never entered the graph get zeros.
    pub fn param_grads(&self, mut grads: Gradients<T>) -> Vec<Tensor<T>> {
        self.params
            .ids()
            .map(|id| {
                self.vars[id.0]
                    .and_then(|v| grads.take(v))
                    .unwrap_or_else(|| Tensor::zeros(self.params.get(id).shape()))
            })
            .collect()
    }

    /// Backward from `loss` and collect per-parameter gradients.
    pub fn gradients(&self, loss: Var) -> Vec<Tensor<T>> {
        self.param_grads(self.tape.backward(loss))
    }
}
