//! Parameters, the session that binds them into a graph, and the neural
//! layers the model is assembled from.
//!
//! A layer owns named parameter tensors and knows how to record its forward
//! computation on a session. Binding is deduplicated by name, so a parameter
//! used several times accumulates one gradient, and a name filter can freeze
//! chosen parameters for head-only finetuning.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::graph::{Graph, NodeId};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Whether a tensor is updated by the optimizer or carried along as state
/// (running statistics); both kinds are serialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    Trainable,
    State,
}

#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self { name: name.into(), value }
    }
}

/// Walks every tensor a model owns, in a fixed order with unique names.
pub trait ParamModule<T: Scalar> {
    fn visit_tensors(&self, f: &mut dyn FnMut(&str, TensorRole, &Tensor<T>));
    fn visit_tensors_mut(&mut self, f: &mut dyn FnMut(&str, TensorRole, &mut Tensor<T>));
}

type NameFilter = Box<dyn Fn(&str) -> bool>;

/// One forward (and optional backward) pass: a graph plus the bookkeeping
/// that connects parameter names to their leaf nodes.
pub struct Session<T: Scalar> {
    pub graph: Graph<T>,
    mode: Mode,
    rng: Rng,
    bound: HashMap<String, NodeId>,
    trainable: Option<NameFilter>,
}

impl<T: Scalar> Session<T> {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self { graph: Graph::new(), mode, rng: Rng::new(seed), bound: HashMap::new(), trainable: None }
    }

    /// Parameters whose names fail the filter are bound without gradient
    /// tracking and excluded from [`Session::collect_grads`].
    pub fn with_trainable_filter(
        mode: Mode,
        seed: u64,
        filter: impl Fn(&str) -> bool + 'static,
    ) -> Self {
        let mut s = Self::new(mode, seed);
        s.trainable = Some(Box::new(filter));
        s
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn rng(&mut self) -> &mut Rng {
        &mut self.rng
    }

    fn is_trainable(&self, name: &str) -> bool {
        self.trainable.as_ref().map_or(true, |f| f(name))
    }

    pub fn bind(&mut self, param: &Param<T>) -> NodeId {
        if let Some(&id) = self.bound.get(&param.name) {
            return id;
        }
        let requires = self.is_trainable(&param.name);
        let id = self.graph.leaf(param.value.clone(), requires);
        self.bound.insert(param.name.clone(), id);
        id
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.graph.constant(value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        self.graph.value(id)
    }

    pub fn backward(&mut self, loss: NodeId) {
        self.graph.backward(loss);
    }

    /// Gradients for every trainable parameter that passes the filter;
    /// parameters that never touched the loss get zeros.
    pub fn collect_grads<M: ParamModule<T>>(&self, model: &M) -> HashMap<String, Tensor<T>> {
        let mut out = HashMap::new();
        model.visit_tensors(&mut |name, role, value| {
            if role != TensorRole::Trainable || !self.is_trainable(name) {
                return;
            }
            let grad = self
                .bound
                .get(name)
                .and_then(|&id| self.graph.grad(id))
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(value.shape()));
            out.insert(name.to_string(), grad);
        });
        out
    }
}

/// Affine map on the last axis; leading axes are flattened and restored.
pub struct Linear<T: Scalar> {
    weight: Param<T>,
    bias: Param<T>,
    d_in: usize,
    d_out: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn new(name: &str, d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        let bound = (1.0 / d_in as f64).sqrt();
        let weight: Vec<f64> = (0..d_in * d_out).map(|_| rng.range(-bound, bound)).collect();
        Self {
            weight: Param::new(format!("{name}.weight"), Tensor::from_f64_slice(vec![d_in, d_out], &weight)),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[d_out])),
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, s: &mut Session<T>, x: NodeId) -> NodeId {
        let w = s.bind(&self.weight);
        let b = s.bind(&self.bias);
        let in_shape = s.graph.value(x).shape().to_vec();
        let rows: usize = in_shape[..in_shape.len() - 1].iter().product();
        let flat = s.graph.reshape(x, &[rows, self.d_in]);
        let y = s.graph.matmul(flat, w);
        let y = s.graph.add_bias(y, b);
        let mut out_shape = in_shape;
        *out_shape.last_mut().unwrap() = self.d_out;
        s.graph.reshape(y, &out_shape)
    }
}

impl<T: Scalar> ParamModule<T> for Linear<T> {
    fn visit_tensors(&self, f: &mut dyn FnMut(&str, TensorRole, &Tensor<T>)) {
        f(&self.weight.name, TensorRole::Trainable, &self.weight.value);
        f(&self.bias.name, TensorRole::Trainable, &self.bias.value);
    }

    fn visit_tensors_mut(&mut self, f: &mut dyn FnMut(&str, TensorRole, &mut Tensor<T>)) {
        f(&self.weight.name, TensorRole::Trainable, &mut self.weight.value);
        f(&self.bias.name, TensorRole::Trainable, &mut self.bias.value);
    }
}

pub struct LayerNorm<T: Scalar> {
    gamma: Param<T>,
    beta: Param<T>,
    eps: f64,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(name: &str, dim: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Tensor::full(&[dim], T::ONE)),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[dim])),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, s: &mut Session<T>, x: NodeId) -> NodeId {
        let g = s.bind(&self.gamma);
        let b = s.bind(&self.beta);
        s.graph.layer_norm(x, g, b, self.eps)
    }
}

impl<T: Scalar> ParamModule<T> for LayerNorm<T> {
    fn visit_tensors(&self, f: &mut dyn FnMut(&str, TensorRole, &Tensor<T>)) {
        f(&self.gamma.name, TensorRole::Trainable, &self.gamma.value);
        f(&self.beta.name, TensorRole::Trainable, &self.beta.value);
    }

    fn visit_tensors_mut(&mut self, f: &mut dyn FnMut(&str, TensorRole, &mut Tensor<T>)) {
        f(&self.gamma.name, TensorRole::Trainable, &mut self.gamma.value);
        f(&self.beta.name, TensorRole::Trainable, &mut self.beta.value);
    }
}

/// Channel normalization over the flattened leading axes, with running
/// statistics updated in train mode and used verbatim in eval mode.
pub struct BatchNorm<T: Scalar> {
    gamma: Param<T>,
    beta: Param<T>,
    running_mean: RefCell<Tensor<T>>,
    running_var: RefCell<Tensor<T>>,
    mean_name: String,
    var_name: String,
    momentum: f64,
    eps: f64,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(name: &str, dim: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Tensor::full(&[dim], T::ONE)),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[dim])),
            running_mean: RefCell::new(Tensor::zeros(&[dim])),
            running_var: RefCell::new(Tensor::full(&[dim], T::ONE)),
            mean_name: format!("{name}.running_mean"),
            var_name: format!("{name}.running_var"),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, s: &mut Session<T>, x: NodeId) -> NodeId {
        self.forward_mode(s, x, s.mode())
    }

    /// Forward with an explicit mode, overriding the session's. Lets a
    /// frozen backbone keep its running statistics untouched while head
    /// layers in the same session train normally.
    pub fn forward_mode(&self, s: &mut Session<T>, x: NodeId, mode: Mode) -> NodeId {
        let g = s.bind(&self.gamma);
        let b = s.bind(&self.beta);
        match mode {
            Mode::Train => {
                let (y, mean, var) = s.graph.batch_norm_train(x, g, b, self.eps);
                let mut rm = self.running_mean.borrow_mut();
                for (slot, &fresh) in rm.data_mut().iter_mut().zip(&mean) {
                    *slot = T::from_f64((1.0 - self.momentum) * slot.to_f64() + self.momentum * fresh);
                }
                let mut rv = self.running_var.borrow_mut();
                for (slot, &fresh) in rv.data_mut().iter_mut().zip(&var) {
                    *slot = T::from_f64((1.0 - self.momentum) * slot.to_f64() + self.momentum * fresh);
                }
                y
            }
            Mode::Eval => {
                let rm = self.running_mean.borrow().to_f64_vec();
                let rv = self.running_var.borrow().to_f64_vec();
                s.graph.batch_norm_eval(x, g, b, &rm, &rv, self.eps)
            }
        }
    }
}

impl<T: Scalar> ParamModule<T> for BatchNorm<T> {
    fn visit_tensors(&self, f: &mut dyn FnMut(&str, TensorRole, &Tensor<T>)) {
        f(&self.gamma.name, TensorRole::Trainable, &self.gamma.value);
        f(&self.beta.name, TensorRole::Trainable, &self.beta.value);
        f(&self.mean_name, TensorRole::State, &self.running_mean.borrow());
        f(&self.var_name, TensorRole::State, &self.running_var.borrow());
    }

    fn visit_tensors_mut(&mut self, f: &mut dyn FnMut(&str, TensorRole, &mut Tensor<T>)) {
        f(&self.gamma.name, TensorRole::Trainable, &mut self.gamma.value);
        f(&self.beta.name, TensorRole::Trainable, &mut self.beta.value);
        f(&self.mean_name, TensorRole::State, self.running_mean.get_mut());
        f(&self.var_name, TensorRole::State, self.running_var.get_mut());
    }
}

/// Inverted dropout: kept elements are rescaled by 1/(1-p) in train mode,
/// and eval mode is the identity.
pub struct Dropout {
    p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout probability {p} outside [0, 1)");
        Self { p }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: NodeId) -> NodeId {
        if self.p == 0.0 || s.mode() == Mode::Eval {
            return x;
        }
        let shape = s.graph.value(x).shape().to_vec();
        let numel = s.graph.value(x).numel();
        let keep_scale = T::from_f64(1.0 / (1.0 - self.p));
        let mask: Vec<T> = (0..numel)
            .map(|_| if s.rng().uniform() < self.p { T::ZERO } else { keep_scale })
            .collect();
        let m = s.graph.constant(Tensor::new(shape, mask));
        s.graph.mul(x, m)
    }
}

/// Scaled dot-product attention over [B, T, D] with the heads split off the
/// feature axis.
pub struct MultiHeadAttention<T: Scalar> {
    wq: Linear<T>,
    wk: Linear<T>,
    wv: Linear<T>,
    wo: Linear<T>,
    heads: usize,
    dim: usize,
}

impl<T: Scalar> MultiHeadAttention<T> {
    pub fn new(name: &str, dim: usize, heads: usize, rng: &mut Rng) -> Self {
        assert!(heads >= 1 && dim % heads == 0, "attention width {dim} not divisible by {heads} heads");
        Self {
            wq: Linear::new(&format!("{name}.wq"), dim, dim, rng),
            wk: Linear::new(&format!("{name}.wk"), dim, dim, rng),
            wv: Linear::new(&format!("{name}.wv"), dim, dim, rng),
            wo: Linear::new(&format!("{name}.wo"), dim, dim, rng),
            heads,
            dim,
        }
    }

    fn split_heads(&self, s: &mut Session<T>, x: NodeId, bsz: usize, t: usize) -> NodeId {
        let dk = self.dim / self.heads;
        let x = s.graph.reshape(x, &[bsz, t, self.heads, dk]);
        let x = s.graph.swap_axes(x, 1, 2);
        s.graph.reshape(x, &[bsz * self.heads, t, dk])
    }

    pub fn forward(&self, s: &mut Session<T>, x: NodeId) -> NodeId {
        let shape = s.graph.value(x).shape().to_vec();
        assert_eq!(shape.len(), 3, "attention input must be rank 3, got {:?}", shape);
        let (bsz, t, d) = (shape[0], shape[1], shape[2]);
        assert_eq!(d, self.dim, "attention input width {d} does not match layer width {}", self.dim);
        let dk = self.dim / self.heads;

        let q = self.wq.forward(s, x);
        let k = self.wk.forward(s, x);
        let v = self.wv.forward(s, x);
        let q = self.split_heads(s, q, bsz, t);
        let k = self.split_heads(s, k, bsz, t);
        let v = self.split_heads(s, v, bsz, t);

        let scores = s.graph.bmm(q, k, false, true);
        let scores = s.graph.scale(scores, 1.0 / (dk as f64).sqrt());
        let attn = s.graph.softmax_lastdim(scores);
        let ctx = s.graph.bmm(attn, v, false, false);

        let ctx = s.graph.reshape(ctx, &[bsz, self.heads, t, dk]);
        let ctx = s.graph.swap_axes(ctx, 1, 2);
        let ctx = s.graph.reshape(ctx, &[bsz, t, self.dim]);
        self.wo.forward(s, ctx)
    }
}

impl<T: Scalar> ParamModule<T> for MultiHeadAttention<T> {
    fn visit_tensors(&self, f: &mut dyn FnMut(&str, TensorRole, &Tensor<T>)) {
        self.wq.visit_tensors(f);
        self.wk.visit_tensors(f);
        self.wv.visit_tensors(f);
        self.wo.visit_tensors(f);
    }

    fn visit_tensors_mut(&mut self, f: &mut dyn FnMut(&str, TensorRole, &mut Tensor<T>)) {
        self.wq.visit_tensors_mut(f);
        self.wk.visit_tensors_mut(f);
        self.wv.visit_tensors_mut(f);
        self.wo.visit_tensors_mut(f);
    }
}

/// Position-wise feed-forward: widen by 4, GELU, project back.
pub struct FeedForward<T: Scalar> {
    lift: Linear<T>,
    project: Linear<T>,
}

impl<T: Scalar> FeedForward<T> {
    pub fn new(name: &str, dim: usize, rng: &mut Rng) -> Self {
        Self {
            lift: Linear::new(&format!("{name}.lift"), dim, 4 * dim, rng),
            project: Linear::new(&format!("{name}.project"), 4 * dim, dim, rng),
        }
    }

    pub fn forward(&self, s: &mut Session<T>, x: NodeId) -> NodeId {
        let h = self.lift.forward(s, x);
        let h = s.graph.gelu(h);
        self.project.forward(s, h)
    }
}

impl<T: Scalar> ParamModule<T> for FeedForward<T> {
    fn visit_tensors(&self, f: &mut dyn FnMut(&str, TensorRole, &Tensor<T>)) {
        self.lift.visit_tensors(f);
        self.project.visit_tensors(f);
    }

    fn visit_tensors_mut(&mut self, f: &mut dyn FnMut(&str, TensorRole, &mut Tensor<T>)) {
        self.lift.visit_tensors_mut(f);
        self.project.visit_tensors_mut(f);
    }
}

/// Pre-norm residual block: x + attn(ln(x)), then h + ffn(ln(h)).
pub struct TransformerBlock<T: Scalar> {
    ln_attn: LayerNorm<T>,
    attn: MultiHeadAttention<T>,
    ln_ffn: LayerNorm<T>,
    ffn: FeedForward<T>,
}

impl<T: Scalar> TransformerBlock<T> {
    pub fn new(name: &str, dim: usize, heads: usize, rng: &mut Rng) -> Self {
        Self {
            ln_attn: LayerNorm::new(&format!("{name}.ln_attn"), dim),
            attn: MultiHeadAttention::new(&format!("{name}.attn"), dim, heads, rng),
            ln_ffn: LayerNorm::new(&format!("{name}.ln_ffn"), dim),
            ffn: FeedForward::new(&format!("{name}.ffn"), dim, rng),
        }
    }

    pub fn forward(&self, s: &mut Session<T>, x: NodeId) -> NodeId {
        let h = self.ln_attn.forward(s, x);
        let h = self.attn.forward(s, h);
        let x = s.graph.add(x, h);
        let h = self.ln_ffn.forward(s, x);
        let h = self.ffn.forward(s, h);
        s.graph.add(x, h)
    }
}

impl<T: Scalar> ParamModule<T> for TransformerBlock<T> {
    fn visit_tensors(&self, f: &mut dyn FnMut(&str, TensorRole, &Tensor<T>)) {
        self.ln_attn.visit_tensors(f);
        self.attn.visit_tensors(f);
        self.ln_ffn.visit_tensors(f);
        self.ffn.visit_tensors(f);
    }

    fn visit_tensors_mut(&mut self, f: &mut dyn FnMut(&str, TensorRole, &mut Tensor<T>)) {
        self.ln_attn.visit_tensors_mut(f);
        self.attn.visit_tensors_mut(f);
        self.ln_ffn.visit_tensors_mut(f);
        self.ffn.visit_tensors_mut(f);
    }
}
