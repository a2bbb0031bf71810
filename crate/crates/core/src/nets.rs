//! Layer primitives: parameter storage, dense layers, the GRU cell and the
//! Gaussian output head.
//!
//! Layers do not own their arrays. Every parameter lives in a [`ParamStore`]
//! and a layer keeps [`ParamId`]s into it; a forward pass first binds the store
//! into a fresh [`Graph`] and then looks the bound nodes up by id. Two models
//! that hold the same `ParamId`s therefore share weights by construction.

use std::ops::Index;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng::Stream;

/// Bound applied to head log-variances before they are exponentiated.
pub const LOGVAR_LIMIT: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered parameter arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Adds every array as a leaf of `g`. With `trainable = false` the leaves
    /// are constants and the graph records no gradient work.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let nodes = self
            .values
            .iter()
            .map(|v| {
                if trainable {
                    g.param(v.clone())
                } else {
                    g.constant(v.clone())
                }
            })
            .collect();
        Bound(nodes)
    }
}

/// Graph nodes of a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<NodeId>);

impl Bound {
    /// Wraps leaves created elsewhere, in `ParamStore` order. Used when a
    /// caller such as `gradient_check` owns the leaves.
    pub fn from_nodes(nodes: Vec<NodeId>) -> Self {
        Self(nodes)
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.0
    }
}

impl Index<ParamId> for Bound {
    type Output = NodeId;

    fn index(&self, id: ParamId) -> &NodeId {
        &self.0[id.0]
    }
}

/// Uniform in ±1/√fan_in.
pub fn init_weight(rows: usize, cols: usize, rng: &mut Stream) -> Array2<f64> {
    let bound = 1.0 / (cols as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.uniform_range(-bound, bound))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply_value(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    fn apply(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl DenseLayer {
    /// Registers `{prefix}.w` (`out × in`) and `{prefix}.b` (`1 × out`). Biases
    /// start at zero.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut Stream,
    ) -> Self {
        let w = store.add(format!("{prefix}.w"), init_weight(out_dim, in_dim, rng));
        let b = store.add(format!("{prefix}.b"), Array2::zeros((1, out_dim)));
        Self {
            w,
            b,
            activation,
            in_dim,
            out_dim,
        }
    }

    /// `activation(x · Wᵀ + b)` row by row.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: NodeId) -> Result<NodeId> {
        let (_, cols) = g.shape(x);
        if cols != self.in_dim {
            return Err(Error::ShapeMismatch {
                op: "dense",
                lhs: (self.out_dim, self.in_dim),
                rhs: g.shape(x),
            });
        }
        let a = g.affine(x, p[self.w], Some(p[self.b]))?;
        Ok(self.activation.apply(g, a))
    }

    /// Graph-free forward pass for inference.
    pub fn eval(&self, store: &ParamStore, x: &Array2<f64>) -> Array2<f64> {
        let mut a = x.dot(&store.get(self.w).t());
        a += store.get(self.b);
        let act = self.activation;
        if act != Activation::Identity {
            a.mapv_inplace(|v| act.apply_value(v));
        }
        a
    }
}

/// A chain of dense layers sharing one activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`; an empty chain when `dims.len() == 1`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        activation: Activation,
        rng: &mut Stream,
    ) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer::new(store, &format!("{prefix}.{i}"), w[0], w[1], activation, rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: NodeId) -> Result<NodeId> {
        self.layers.iter().try_fold(x, |h, l| l.forward(g, p, h))
    }

    pub fn eval(&self, store: &ParamStore, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.eval(store, &h);
        }
        h
    }

    pub fn out_dim(&self) -> Option<usize> {
        self.layers.last().map(|l| l.out_dim)
    }
}

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// h̃  = tanh(W_h x + U_h (r ∘ h) + b_h)
/// h' = (1 − z) ∘ h + z ∘ h̃
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, prefix: &str, input_dim: usize, hidden_dim: usize, rng: &mut Stream) -> Self {
        let mut w = |gate: &str| store.add(format!("{prefix}.w_{gate}"), init_weight(hidden_dim, input_dim, rng));
        let (w_z, w_r, w_h) = (w("z"), w("r"), w("h"));
        let mut u = |gate: &str| store.add(format!("{prefix}.u_{gate}"), init_weight(hidden_dim, hidden_dim, rng));
        let (u_z, u_r, u_h) = (u("z"), u("r"), u("h"));
        let mut b = |gate: &str| store.add(format!("{prefix}.b_{gate}"), Array2::zeros((1, hidden_dim)));
        let (b_z, b_r, b_h) = (b("z"), b("r"), b("h"));
        Self {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z,
            b_r,
            b_h,
            input_dim,
            hidden_dim,
        }
    }

    pub fn param_ids(&self) -> [ParamId; 9] {
        [
            self.w_z, self.w_r, self.w_h, self.u_z, self.u_r, self.u_h, self.b_z, self.b_r, self.b_h,
        ]
    }

    pub fn step(&self, g: &mut Graph, p: &Bound, x: NodeId, h_prev: NodeId) -> Result<NodeId> {
        let (xr, xc) = g.shape(x);
        let (hr, hc) = g.shape(h_prev);
        if xc != self.input_dim || hc != self.hidden_dim || xr != hr {
            return Err(Error::ShapeMismatch {
                op: "gru_step",
                lhs: (xr, xc),
                rhs: (hr, hc),
            });
        }
        let gate = |g: &mut Graph, w, u, b, h| -> Result<NodeId> {
            let a = g.affine(x, w, Some(b))?;
            let c = g.affine(h, u, None)?;
            g.add(a, c)
        };
        let z_pre = gate(g, p[self.w_z], p[self.u_z], p[self.b_z], h_prev)?;
        let z = g.sigmoid(z_pre);
        let r_pre = gate(g, p[self.w_r], p[self.u_r], p[self.b_r], h_prev)?;
        let r = g.sigmoid(r_pre);
        let rh = g.mul(r, h_prev)?;
        let c_pre = gate(g, p[self.w_h], p[self.u_h], p[self.b_h], rh)?;
        let candidate = g.tanh(c_pre);
        let one = g.scalar(1.0);
        let keep = g.sub(one, z)?;
        let kept = g.mul(keep, h_prev)?;
        let fresh = g.mul(z, candidate)?;
        g.add(kept, fresh)
    }
}

/// Mean and log-variance nodes of a diagonal Gaussian, one row per sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GaussianNodes {
    pub mean: NodeId,
    pub logvar: NodeId,
}

/// Diagonal-Gaussian output layer: two identity-activated dense maps from the
/// representation, the log-variance clamped to ±[`LOGVAR_LIMIT`].
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianHead {
    pub mean: DenseLayer,
    pub logvar: DenseLayer,
}

impl GaussianHead {
    pub fn new(store: &mut ParamStore, prefix: &str, in_dim: usize, out_dim: usize, rng: &mut Stream) -> Self {
        let mean = DenseLayer::new(store, &format!("{prefix}.mean"), in_dim, out_dim, Activation::Identity, rng);
        let logvar = DenseLayer::new(store, &format!("{prefix}.logvar"), in_dim, out_dim, Activation::Identity, rng);
        Self { mean, logvar }
    }

    pub fn in_dim(&self) -> usize {
        self.mean.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.mean.out_dim
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.mean.w, self.mean.b, self.logvar.w, self.logvar.b]
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, phi: NodeId) -> Result<GaussianNodes> {
        let mean = self.mean.forward(g, p, phi)?;
        let raw = self.logvar.forward(g, p, phi)?;
        let logvar = g.clamp(raw, -LOGVAR_LIMIT, LOGVAR_LIMIT);
        Ok(GaussianNodes { mean, logvar })
    }

    /// Graph-free `(mean, logvar)`.
    pub fn eval(&self, store: &ParamStore, phi: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mean = self.mean.eval(store, phi);
        let logvar = self
            .logvar
            .eval(store, phi)
            .mapv_into(|v| v.clamp(-LOGVAR_LIMIT, LOGVAR_LIMIT));
        (mean, logvar)
    }
}
