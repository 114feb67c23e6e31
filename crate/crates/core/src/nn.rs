//! Named parameters, per-graph parameter binding, and basic layers.

use std::cell::RefCell;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Activation, Gradients, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces every tensor, checking names and shapes line up.
    pub fn load(&mut self, named: Vec<(String, Tensor)>) -> Result<()> {
        if named.len() != self.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                self.len(),
                named.len()
            )));
        }
        for (i, (name, t)) in named.into_iter().enumerate() {
            if name != self.names[i] || t.shape() != self.tensors[i].shape() {
                return Err(Error::Config(format!(
                    "parameter {i}: expected {} {:?}, got {name} {:?}",
                    self.names[i],
                    self.tensors[i].shape(),
                    t.shape()
                )));
            }
            self.tensors[i] = t;
        }
        Ok(())
    }
}

/// Binds parameters to a tape lazily, so only parameters a forward pass
/// touches appear in the graph.
pub struct Ctx<'a> {
    pub tape: &'a Tape,
    params: &'a ParamStore,
    bound: RefCell<Vec<Option<Var>>>,
    trainable: bool,
}

impl<'a> Ctx<'a> {
    /// Parameters become differentiable leaves.
    pub fn train(tape: &'a Tape, params: &'a ParamStore) -> Self {
        Self::with_mode(tape, params, true)
    }

    /// Parameters become constants.
    pub fn eval(tape: &'a Tape, params: &'a ParamStore) -> Self {
        Self::with_mode(tape, params, false)
    }

    fn with_mode(tape: &'a Tape, params: &'a ParamStore, trainable: bool) -> Self {
        Ctx {
            tape,
            params,
            bound: RefCell::new(vec![None; params.len()]),
            trainable,
        }
    }

    pub fn param(&self, id: ParamId) -> Var {
        if let Some(v) = self.bound.borrow()[id.0] {
            return v;
        }
        let value = self.params.get(id).clone();
        let v = if self.trainable {
            self.tape.leaf(value)
        } else {
            self.tape.constant(value)
        };
        self.bound.borrow_mut()[id.0] = Some(v);
        v
    }

    /// Parameter gradients in store order; parameters the loss never
    /// touched get zeros.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<Tensor> {
        let bound = self.bound.borrow();
        self.params
            .tensors()
            .iter()
            .zip(bound.iter())
            .map(|(t, v)| match v {
                Some(v) => grads.wrt(*v, t.shape()),
                None => Tensor::zeros(t.shape()),
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(3 / fan_in)`: fan-in Kaiming with unit gain.
    KaimingUniform,
    Zeros,
}

fn init_tensor(shape: &[usize], fan_in: usize, init: Init, rng: &mut impl Rng) -> Tensor {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::KaimingUniform => {
            let bound = (3.0 / fan_in as Scalar).sqrt();
            Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
            dilation: 1,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    /// Dilated 3×3-style conv with "same" padding.
    pub fn dilated(mut self, rate: usize) -> Self {
        self.dilation = rate;
        self.padding = rate * (self.kernel / 2);
        self
    }
}

impl Conv2d {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, spec: ConvSpec, init: Init) -> Self {
        let k = spec.kernel;
        let shape = [spec.out_channels, spec.in_channels, k, k];
        let weight = store.add(
            format!("{name}.weight"),
            init_tensor(&shape, spec.in_channels * k * k, init, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[spec.out_channels]));
        Conv2d {
            weight,
            bias: Some(bias),
            stride: spec.stride,
            padding: spec.padding,
            dilation: spec.dilation,
        }
    }

    pub fn forward(&self, ctx: &Ctx<'_>, x: Var) -> Result<Var> {
        let bias = self.bias.map(|b| ctx.param(b));
        ctx.tape.conv2d(
            x,
            ctx.param(self.weight),
            bias,
            self.stride,
            self.padding,
            self.dilation,
        )
    }
}

/// Affine map over the last axis of a `[tokens, in]` matrix; weight is `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, input: usize, output: usize, bias: bool) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init_tensor(&[input, output], input, Init::KaimingUniform, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[1, output])));
        Linear { weight, bias }
    }

    pub fn forward(&self, ctx: &Ctx<'_>, x: Var) -> Result<Var> {
        let y = ctx.tape.matmul(x, ctx.param(self.weight))?;
        match self.bias {
            Some(b) => ctx.tape.add(y, ctx.param(b)),
            None => Ok(y),
        }
    }
}

/// Two affine layers with a nonlinearity between them.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        dims: (usize, usize, usize),
        activation: Activation,
    ) -> Self {
        Mlp {
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), dims.0, dims.1, true),
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), dims.1, dims.2, true),
            activation,
        }
    }

    pub fn forward(&self, ctx: &Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(ctx, x)?;
        let h = ctx.tape.activation(self.activation, h);
        self.fc2.forward(ctx, h)
    }
}
