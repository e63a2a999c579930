//! Reverse-mode gradient tape.
//!
//! A [`Graph`] records every operation applied to tracked [`Var`]s. Values
//! live in reference-counted tensors owned by the `Var`s and by the backward
//! closures that need them, so a graph built with [`Graph::no_grad`] keeps no
//! intermediate state at all.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Result, RstError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

/// A tensor value, optionally attached to a node on the tape.
#[derive(Clone, Debug)]
pub struct Var<T> {
    value: Rc<Tensor<T>>,
    node: Option<NodeId>,
}

impl<T: Scalar> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub(crate) fn rc(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }
}

/// Receives the upstream gradient and a flag per input telling whether that
/// input needs a gradient; returns one entry per input.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    op: &'static str,
    scope: String,
    inputs: Vec<NodeId>,
    shape: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// One executed operation, recorded when tracing is on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpRecord {
    pub op: &'static str,
    pub scope: String,
}

/// Deliberate corruption of a backward rule, used to prove that the audit
/// harness detects broken gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    Conv2dKernelGrad,
}

struct Inner<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
    scope: Vec<String>,
    trace: Option<Vec<OpRecord>>,
    fault: Option<Fault>,
}

pub struct Graph<T> {
    inner: RefCell<Inner<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self::with_recording(true)
    }

    /// Inference mode: ops compute values only.
    pub fn no_grad() -> Self {
        Self::with_recording(false)
    }

    fn with_recording(recording: bool) -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                recording,
                scope: Vec::new(),
                trace: None,
                fault: None,
            }),
        }
    }

    /// Also keep an [`OpRecord`] for every executed op (tracked or not).
    pub fn with_trace(self) -> Self {
        self.inner.borrow_mut().trace = Some(Vec::new());
        self
    }

    pub fn with_fault(self, fault: Fault) -> Self {
        self.inner.borrow_mut().fault = Some(fault);
        self
    }

    pub(crate) fn fault(&self) -> Option<Fault> {
        self.inner.borrow().fault
    }

    pub fn is_recording(&self) -> bool {
        self.inner.borrow().recording
    }

    pub fn trace(&self) -> Vec<OpRecord> {
        self.inner.borrow().trace.clone().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Op names in recording order.
    pub fn ops(&self) -> Vec<&'static str> {
        self.inner.borrow().nodes.iter().map(|n| n.op).collect()
    }

    /// Op and scope of a recorded node.
    pub fn record_of(&self, id: NodeId) -> Option<OpRecord> {
        self.inner.borrow().nodes.get(id.0).map(|n| OpRecord {
            op: n.op,
            scope: n.scope.clone(),
        })
    }

    /// Recorded nodes that take `id` as an input.
    pub fn consumers(&self, id: NodeId) -> Vec<OpRecord> {
        self.inner
            .borrow()
            .nodes
            .iter()
            .filter(|n| n.inputs.contains(&id))
            .map(|n| OpRecord {
                op: n.op,
                scope: n.scope.clone(),
            })
            .collect()
    }

    pub fn push_scope(&self, name: impl Into<String>) {
        self.inner.borrow_mut().scope.push(name.into());
    }

    pub fn pop_scope(&self) {
        self.inner.borrow_mut().scope.pop();
    }

    /// Runs `f` with `name` appended to the scope path.
    pub fn scoped<R>(&self, name: impl Into<String>, f: impl FnOnce() -> R) -> R {
        self.push_scope(name);
        let out = f();
        self.pop_scope();
        out
    }

    pub fn scope(&self) -> String {
        self.inner.borrow().scope.join(".")
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var<T> {
        let value = Rc::new(value);
        let mut inner = self.inner.borrow_mut();
        if !inner.recording {
            return Var { value, node: None };
        }
        let id = NodeId(inner.nodes.len());
        let scope = inner.scope.join(".");
        inner.nodes.push(Node {
            op: "leaf",
            scope,
            inputs: Vec::new(),
            shape: value.shape().to_vec(),
            backward: None,
        });
        Var {
            value,
            node: Some(id),
        }
    }

    /// Untracked value; receives no gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        Var {
            value: Rc::new(value),
            node: None,
        }
    }

    pub(crate) fn record(
        &self,
        op: &'static str,
        inputs: &[&Var<T>],
        value: Tensor<T>,
        backward: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<T> {
        let mut inner = self.inner.borrow_mut();
        if inner.trace.is_some() {
            let scope = inner.scope.join(".");
            inner.trace.as_mut().unwrap().push(OpRecord { op, scope });
        }
        let value = Rc::new(value);
        let tracked = inner.recording && inputs.iter().any(|v| v.node.is_some());
        if !tracked {
            return Var { value, node: None };
        }
        let id = NodeId(inner.nodes.len());
        let scope = inner.scope.join(".");
        inner.nodes.push(Node {
            op,
            scope,
            inputs: inputs
                .iter()
                .map(|v| v.node.unwrap_or(NodeId(usize::MAX)))
                .collect(),
            shape: value.shape().to_vec(),
            backward: Some(Box::new(backward)),
        });
        Var {
            value,
            node: Some(id),
        }
    }

    /// Reverse sweep from a scalar loss. Nodes are appended in execution
    /// order, so walking the tape backwards is a valid topological order.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.value.numel() != 1 {
            return Err(RstError::NonScalarLoss(loss.shape().to_vec()));
        }
        let root = loss.node.ok_or(RstError::DisconnectedTape)?;
        let inner = self.inner.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::ones(loss.shape()));
        for id in (0..=root.0).rev() {
            let node = &inner.nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(|i| i.0 != usize::MAX).collect();
            let input_grads = backward(&g, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "op {}", node.op);
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let (Some(ig), true) = (ig, input.0 != usize::MAX) else {
                    continue;
                };
                debug_assert_eq!(ig.shape(), inner.nodes[input.0].shape.as_slice(), "op {}", node.op);
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&ig),
                    slot => *slot = Some(ig),
                }
            }
        }
        let mut leaves = HashMap::new();
        for (id, g) in grads.into_iter().enumerate() {
            if let (Some(g), None) = (g, inner.nodes[id].backward.as_ref()) {
                leaves.insert(NodeId(id), g);
            }
        }
        Ok(Gradients { leaves })
    }
}

/// Gradients of a loss with respect to the tracked leaves.
#[derive(Debug, Default)]
pub struct Gradients<T> {
    leaves: HashMap<NodeId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `var`; zeros when the loss does not depend on it.
    pub fn get(&self, var: &Var<T>) -> Tensor<T> {
        var.node
            .and_then(|id| self.leaves.get(&id).cloned())
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}
