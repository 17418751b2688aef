use std::cell::RefCell;
use std::collections::HashMap;

use crate::autodiff::graph::{Graph, Gradients, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{config_err, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BufferId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub momentum: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub trainable: bool,
}

/// Named non-trainable state such as batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Buffer<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Named parameters with SGD momentum buffers, plus named state buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet<T> {
    params: Vec<Parameter<T>>,
    buffers: Vec<Buffer<T>>,
    names: HashMap<String, usize>,
    buffer_names: HashMap<String, usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        ParameterSet {
            params: Vec::new(),
            buffers: Vec::new(),
            names: HashMap::new(),
            buffer_names: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains_key(&name) {
            return Err(config_err!("duplicate parameter name {name}"));
        }
        self.names.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            momentum: Tensor::zeros(value.shape()),
            value,
            grad: None,
            trainable: true,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<BufferId> {
        let name = name.into();
        if self.buffer_names.contains_key(&name) {
            return Err(config_err!("duplicate buffer name {name}"));
        }
        self.buffer_names.insert(name.clone(), self.buffers.len());
        self.buffers.push(Buffer { name, value });
        Ok(BufferId(self.buffers.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer<T> {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Buffer<T> {
        &mut self.buffers[id.0]
    }

    pub fn buffer_id(&self, name: &str) -> Option<BufferId> {
        self.buffer_names.get(name).map(|&i| BufferId(i))
    }

    pub fn buffers(&self) -> impl Iterator<Item = &Buffer<T>> {
        self.buffers.iter()
    }

    pub fn buffers_mut(&mut self) -> impl Iterator<Item = &mut Buffer<T>> {
        self.buffers.iter_mut()
    }

    /// Marks each parameter trainable or frozen by name.
    pub fn set_trainable(&mut self, mut pred: impl FnMut(&str) -> bool) {
        for p in &mut self.params {
            p.trainable = pred(&p.name);
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds `scale ×` the gradients from a backward pass to every bound
    /// trainable parameter. Bound parameters the loss never reached receive zeros.
    pub fn accumulate_grads(&mut self, bindings: &Bindings, grads: &mut Gradients<T>, scale: T) {
        for (p, slot) in self.params.iter_mut().zip(&bindings.nodes) {
            let Some(node) = *slot else { continue };
            if !p.trainable {
                continue;
            }
            let g = grads
                .take_id(node)
                .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
            let g = if scale == T::one() { g } else { g.map(|v| v * scale) };
            match &mut p.grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
    }

    /// `v ← μ·v + grad + λ·θ; θ ← θ − lr·v`, then clears gradients.
    pub fn sgd_step(&mut self, cfg: &SgdConfig) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| p.trainable && p.grad.is_none()) {
            return Err(Error::Internal(format!(
                "trainable parameter {} has no gradient; the graph does not reach it",
                p.name
            )));
        }
        let (lr, mu, wd) = (T::lit(cfg.lr), T::lit(cfg.momentum), T::lit(cfg.weight_decay));
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            let grad = p.grad.take().expect("checked above");
            for ((v, &g), theta) in p
                .momentum
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(p.value.data_mut().iter_mut())
            {
                *v = mu * *v + g + wd * *theta;
                *theta -= lr * *v;
            }
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

/// Graph node ids of parameters bound during one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    nodes: Vec<Option<usize>>,
}

impl Bindings {
    pub fn node(&self, id: ParamId) -> Option<usize> {
        self.nodes.get(id.0).copied().flatten()
    }
}

/// Lazily places parameters on a graph as leaves.
pub struct Binder<'g, 'p, T: Scalar> {
    graph: &'g Graph<T>,
    params: &'p ParameterSet<T>,
    vars: RefCell<Vec<Option<Var<'g, T>>>>,
    grad: bool,
}

impl<'g, 'p, T: Scalar> Binder<'g, 'p, T> {
    /// With `grad == false` every parameter is bound as a constant.
    pub fn new(graph: &'g Graph<T>, params: &'p ParameterSet<T>, grad: bool) -> Self {
        Binder {
            graph,
            params,
            vars: RefCell::new(vec![None; params.len()]),
            grad,
        }
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn params(&self) -> &'p ParameterSet<T> {
        self.params
    }

    pub fn var(&self, id: ParamId) -> Var<'g, T> {
        if let Some(v) = self.vars.borrow()[id.0] {
            return v;
        }
        let p = self.params.get(id);
        let v = self.graph.leaf(p.value.clone(), self.grad && p.trainable);
        self.vars.borrow_mut()[id.0] = Some(v);
        v
    }

    /// Binds parameter `id` to an existing node instead of a fresh leaf.
    pub fn bind(&self, id: ParamId, var: Var<'g, T>) -> Result<()> {
        let p = self.params.get(id);
        if var.value().shape() != p.value.shape() {
            return Err(config_err!(
                "cannot bind {:?} to parameter {} of shape {:?}",
                var.value().shape(),
                p.name,
                p.value.shape()
            ));
        }
        let mut vars = self.vars.borrow_mut();
        if vars[id.0].is_some() {
            return Err(config_err!("parameter {} is already bound", p.name));
        }
        vars[id.0] = Some(var);
        Ok(())
    }

    pub fn buffer(&self, id: BufferId) -> &'p Tensor<T> {
        &self.params.buffer(id).value
    }

    pub fn bindings(&self) -> Bindings {
        Bindings {
            nodes: self.vars.borrow().iter().map(|v| v.map(|v| v.id())).collect(),
        }
    }
}
