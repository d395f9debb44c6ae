//! Reverse-mode autodiff over a flat operation tape.
//!
//! Every differentiable op appends a node holding its output value, its
//! parent node ids, and a closure that maps the incoming output gradient to
//! per-parent gradients. Node ids grow monotonically, so walking the tape in
//! reverse id order is a reverse topological traversal: `backward` visits
//! each recorded op exactly once, accumulating gradients deterministically.
//!
//! Parameters live outside the tape in a [`ParamStore`]; leasing one onto a
//! tape copies its current value into a leaf node. The same parameter leased
//! twice resolves to the same node, so weight sharing (e.g. one encoder run
//! on two views) accumulates both contributions naturally.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor and the gradient accumulated for it by the most recent
/// backward pass (zeros when untouched). Shapes always match.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub value: Tensor<T>,
    pub gradient: Tensor<T>,
}

/// Named parameter registry. Registration order is the canonical order used
/// by the optimizer and the checkpoint format.
#[derive(Clone)]
pub struct ParamStore<T> {
    names: Vec<String>,
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        let gradient = Tensor::zeros(value.shape());
        self.params.push(Parameter { value, gradient });
        ParamId(id)
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

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter<T>)> {
        self.names
            .iter()
            .map(|s| s.as_str())
            .zip(self.params.iter())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_gradients(&mut self) {
        for p in &mut self.params {
            p.gradient = Tensor::zeros(p.value.shape());
        }
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "ParamStore::set_value",
                detail: format!(
                    "{}: {:?} vs {:?}",
                    self.names[id.0],
                    p.value.shape(),
                    value.shape()
                ),
            });
        }
        p.value = value;
        Ok(())
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-parameter gradients detached from the store, so independent tapes
/// (e.g. the samples of a batch) can run backward separately and be reduced
/// in a fixed order afterwards.
pub struct GradBuffer<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> GradBuffer<T> {
    pub fn new(n_params: usize) -> Self {
        GradBuffer {
            grads: (0..n_params).map(|_| None).collect(),
        }
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor<T>) -> Result<()> {
        match &mut self.grads[id.0] {
            Some(existing) => existing.add_scaled(g, T::one()),
            slot @ None => {
                *slot = Some(g.clone());
                Ok(())
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    /// Adds `other` into `self` (missing entries stay missing on both sides).
    pub fn merge(&mut self, other: &GradBuffer<T>) -> Result<()> {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g)?;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, c: T) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= c;
            }
        }
    }

    /// Accumulates the buffered gradients into `Parameter::gradient`.
    pub fn apply_to_store(&self, store: &mut ParamStore<T>) -> Result<()> {
        for (i, g) in self.grads.iter().enumerate() {
            if let Some(g) = g {
                store.params[i].gradient.add_scaled(g, T::one())?;
            }
        }
        Ok(())
    }
}

/// Maps (gradient w.r.t. output, output value, parent values) to per-parent
/// gradients; `None` entries mark non-differentiable parents (e.g. masks).
pub(crate) type GradFn<T> =
    Box<dyn Fn(&Tensor<T>, &Tensor<T>, &[&Tensor<T>]) -> Vec<Option<Tensor<T>>> + Send>;

pub(crate) struct Node<T: Scalar> {
    pub value: Tensor<T>,
    pub parents: Vec<NodeId>,
    pub grad_fn: Option<GradFn<T>>,
    pub param: Option<ParamId>,
    pub label: &'static str,
}

/// The computation record for one forward pass.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    leased: HashMap<ParamId, NodeId>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            leased: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant input. No gradient flows into leaves.
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            grad_fn: None,
            param: None,
            label: "leaf",
        });
        id
    }

    /// Leases a parameter onto the tape (copying its current value). Repeat
    /// leases of the same parameter return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        if let Some(&node) = self.leased.get(&id) {
            return node;
        }
        let node = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value: store.get(id).value.clone(),
            parents: Vec::new(),
            grad_fn: None,
            param: Some(id),
            label: "param",
        });
        self.leased.insert(id, node);
        node
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> T {
        self.nodes[id.0].value.item()
    }

    /// Appends an op node. Every op output is checked for finiteness here, so
    /// a NaN or infinity is reported at the op that produced it.
    pub(crate) fn push(
        &mut self,
        label: &'static str,
        value: Tensor<T>,
        parents: Vec<NodeId>,
        grad_fn: GradFn<T>,
    ) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: label });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            parents,
            grad_fn: Some(grad_fn),
            param: None,
            label,
        });
        Ok(id)
    }

    /// Runs reverse-mode accumulation from the scalar node `loss` and adds
    /// the result into `Parameter::gradient` for every reached parameter.
    /// Consumes the tape: the record is cleared by the pass.
    pub fn backward(self, loss: NodeId, store: &mut ParamStore<T>) -> Result<()> {
        let n = store.len();
        let (buf, _) = self.backward_impl(loss, n, &[])?;
        buf.apply_to_store(store)
    }

    /// Like [`Tape::backward`] but returns the gradients detached instead of
    /// touching the store.
    pub fn backward_detached(self, loss: NodeId, n_params: usize) -> Result<GradBuffer<T>> {
        let (buf, _) = self.backward_impl(loss, n_params, &[])?;
        Ok(buf)
    }

    /// Backward that additionally reports the gradient arriving at each
    /// watched node (useful for gradients w.r.t. inputs).
    pub fn backward_watched(
        self,
        loss: NodeId,
        n_params: usize,
        watch: &[NodeId],
    ) -> Result<(GradBuffer<T>, Vec<Option<Tensor<T>>>)> {
        self.backward_impl(loss, n_params, watch)
    }

    fn backward_impl(
        mut self,
        loss: NodeId,
        n_params: usize,
        watch: &[NodeId],
    ) -> Result<(GradBuffer<T>, Vec<Option<Tensor<T>>>)> {
        let loss_node = &self.nodes[loss.0];
        if !loss_node.value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_node.value.shape(), T::one()));

        let mut buf = GradBuffer::new(n_params);
        let mut watched: Vec<Option<Tensor<T>>> = (0..watch.len()).map(|_| None).collect();
        let profile = std::env::var_os("VODEPTH_PROFILE").is_some();
        let mut times: std::collections::HashMap<&'static str, (f64, usize)> =
            std::collections::HashMap::new();

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            if let Some(pos) = watch.iter().position(|w| w.0 == id) {
                watched[pos] = Some(g.clone());
            }
            let node = &self.nodes[id];
            if let Some(pid) = node.param {
                buf.accumulate(pid, &g)?;
            }
            if let Some(grad_fn) = &node.grad_fn {
                let t0 = profile.then(std::time::Instant::now);
                let parent_values: Vec<&Tensor<T>> = node
                    .parents
                    .iter()
                    .map(|p| &self.nodes[p.0].value)
                    .collect();
                let parent_grads = grad_fn(&g, &node.value, &parent_values);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                let label = node.label;
                for (parent, pg) in node.parents.clone().into_iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !pg.all_finite() {
                        return Err(Error::NonFinite { op: label });
                    }
                    match &mut grads[parent.0] {
                        Some(existing) => existing.add_scaled(&pg, T::one())?,
                        slot @ None => *slot = Some(pg),
                    }
                }
                if let Some(t0) = t0 {
                    let e = times.entry(label).or_insert((0.0, 0));
                    e.0 += t0.elapsed().as_secs_f64();
                    e.1 += 1;
                }
            }
        }
        if profile {
            let mut rows: Vec<_> = times.into_iter().collect();
            rows.sort_by(|a, b| b.1 .0.total_cmp(&a.1 .0));
            for (label, (secs, count)) in rows {
                eprintln!("bwd {label:24} {:8.2} ms  x{count}", secs * 1e3);
            }
        }
        self.nodes.clear();
        self.leased.clear();
        Ok((buf, watched))
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}
