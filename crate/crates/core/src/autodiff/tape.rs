use indexmap::IndexMap;

use crate::error::{dim_err, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Maps the upstream gradient of a node to one gradient per input. Receives
/// (upstream, input values, output value).
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[&Tensor<T>], &Tensor<T>) -> Result<Vec<Tensor<T>>>>;

pub(crate) struct Node<T: Real> {
    pub(crate) op: &'static str,
    pub(crate) inputs: Vec<Var>,
    pub(crate) value: Tensor<T>,
    pub(crate) backward: Option<BackwardFn<T>>,
}

/// A Wengert list of recorded operations. Node ids increase monotonically,
/// so inputs always precede their outputs.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
    grad_enabled: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records values only; `backward` yields zero gradients.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant or input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push("leaf", vec![], value, None)
    }

    /// Records a named trainable parameter.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Var {
        let v = self.leaf(value);
        self.params.push((name.into(), v));
        v
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op
    }

    pub fn inputs(&self, v: Var) -> &[Var] {
        &self.nodes[v.0].inputs
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn push(
        &mut self,
        op: &'static str,
        inputs: Vec<Var>,
        value: Tensor<T>,
        backward: Option<BackwardFn<T>>,
    ) -> Var {
        debug_assert!(inputs.iter().all(|i| i.0 < self.nodes.len()));
        let backward = if self.grad_enabled { backward } else { None };
        self.nodes.push(Node {
            op,
            inputs,
            value,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Propagates `seed` from `output` back through the tape, accumulating
    /// vector-Jacobian products at every node.
    pub fn backward(&self, output: Var, seed: &Tensor<T>) -> Result<Grads<T>> {
        let out_shape = self.shape(output);
        if seed.shape() != out_shape {
            return dim_err(format!(
                "backward: seed shape {:?} does not match output shape {out_shape:?}",
                seed.shape()
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed.clone());
        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|i| &self.nodes[i.0].value).collect();
            let input_grads = backward(&upstream, &inputs, &node.value)?;
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "op {}", node.op);
            for (inp, g) in node.inputs.iter().zip(input_grads) {
                if g.shape() != self.nodes[inp.0].value.shape() {
                    return dim_err(format!(
                        "backward rule of `{}` produced gradient {:?} for input {:?}",
                        node.op,
                        g.shape(),
                        self.nodes[inp.0].value.shape()
                    ));
                }
                match &mut grads[inp.0] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot => *slot = Some(g),
                }
            }
            grads[id] = Some(upstream);
        }
        Ok(Grads { grads })
    }

    /// Backward from a one-element output with seed 1.
    pub fn backward_scalar(&self, output: Var) -> Result<Grads<T>> {
        let seed = Tensor::ones(self.shape(output));
        self.backward(output, &seed)
    }
}

/// Per-node gradients from one backward pass.
pub struct Grads<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient at `v`, or zeros shaped like `v` if it was not reached.
    pub fn wrt(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
    }

    /// Gradients of every named parameter recorded on `tape`.
    pub fn params(&self, tape: &Tape<T>) -> Gradients<T> {
        let map = tape
            .params()
            .iter()
            .map(|(name, v)| (name.clone(), self.wrt(tape, *v)))
            .collect();
        Gradients { map }
    }
}

/// Parameter name → gradient, same shape as the parameter.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T: Real> {
    map: IndexMap<String, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.map
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v.to_f64().unwrap().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}
