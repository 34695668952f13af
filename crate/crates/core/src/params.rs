//! Named parameter storage and the per-pass graph that binds parameters to
//! tape leaves.

use std::collections::BTreeMap;
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::init::seeded_init;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{Dims, Tensor};

/// Index of a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// All learnable tensors of a model, addressable by unique name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.tensors.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
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

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    /// Ids in lexicographic name order. Every iteration that must be
    /// reproducible (optimizer updates, serialization) uses this order.
    pub fn sorted_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.by_name.values().copied()
    }

    /// Ids in creation order.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Per-parameter gradients, indexed by [`ParamId`]. Parameters that do not
/// reach the loss hold zeros.
#[derive(Clone, Debug)]
pub struct ParamGrads<T> {
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        ParamGrads {
            grads: store
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.dims()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// One forward pass: a fresh tape plus lazily bound parameter leaves.
pub struct Graph<'a, T> {
    tape: Tape<T>,
    store: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new(store: &'a ParamStore<T>) -> Self {
        Graph {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    /// Tape leaf for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.tape.constant(value)
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    /// Backpropagates from `loss` and collects gradients for every
    /// parameter in the store.
    pub fn param_grads(&self, loss: Var) -> Result<ParamGrads<T>> {
        let mut g = self.tape.backward(loss)?;
        let grads = self
            .bound
            .iter()
            .zip(&self.store.tensors)
            .map(|(bound, t)| {
                bound
                    .and_then(|v| g.take(v))
                    .unwrap_or_else(|| Tensor::zeros(t.dims()))
            })
            .collect();
        Ok(ParamGrads { grads })
    }
}

impl<T> Deref for Graph<'_, T> {
    type Target = Tape<T>;

    fn deref(&self) -> &Tape<T> {
        &self.tape
    }
}

impl<T> DerefMut for Graph<'_, T> {
    fn deref_mut(&mut self) -> &mut Tape<T> {
        &mut self.tape
    }
}

/// Handles of a convolution's weight (out, in, k, k) and bias (1, out, 1, 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv {
    /// He-initialized weight, zero bias.
    pub fn create<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        seed: u64,
    ) -> Result<Self> {
        Self::create_scaled(store, name, in_channels, out_channels, kernel, seed, 1.0)
    }

    /// Like [`Conv::create`] with the initial weights multiplied by `gain`.
    pub fn create_scaled<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        seed: u64,
        gain: f64,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size {kernel} must be odd")));
        }
        let wname = format!("{name}.w");
        let w = seeded_init(
            Dims::new(out_channels, in_channels, kernel, kernel),
            in_channels * kernel * kernel,
            seed,
            &wname,
        );
        let w = if gain == 1.0 {
            w
        } else {
            w.map(|v| v * T::lit(gain))
        };
        let weight = store.insert(wname, w)?;
        let bias = store.insert(
            format!("{name}.b"),
            Tensor::zeros(Dims::new(1, out_channels, 1, 1)),
        )?;
        Ok(Conv {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        g.conv2d(x, w, b)
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Fully connected layer on flattened batch items.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn create<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        seed: u64,
    ) -> Result<Self> {
        let wname = format!("{name}.w");
        let w = seeded_init(Dims::new(outputs, inputs, 1, 1), inputs, seed, &wname);
        let weight = store.insert(wname, w)?;
        let bias = store.insert(
            format!("{name}.b"),
            Tensor::zeros(Dims::new(1, outputs, 1, 1)),
        )?;
        Ok(Linear {
            weight,
            bias,
            inputs,
            outputs,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        g.linear(x, w, b)
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}
