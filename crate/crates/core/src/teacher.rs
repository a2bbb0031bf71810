//! Variational recurrent teacher over output sequences.
//!
//! One step of the rollout, for a batch of sequences stored as rows:
//!
//! ```text
//! h_t   = GRU([y_{t-1}; z_{t-1}], h_{t-1})      h_0 = y_0 = z_0 = 0
//! prior = N(prior_net(h_t))
//! post  = N(encoder_net([y_t; h_t]))
//! z_t   = mean(post) + exp(logvar(post) / 2) ∘ eps_t
//! phi_t = projection([h_t; z_t])
//! y_t  ~ head(phi_t)                              (the head shared with the student)
//! ```

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Axis, Graph, NodeId};
use crate::error::{Error, Result};
use crate::nets::{Activation, Bound, DenseLayer, GaussianHead, GaussianNodes, GruCell, Mlp, ParamStore, LOGVAR_LIMIT};
use crate::rng::Stream;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal Gaussian as plain values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, logvar: Vec<f64>) -> Result<Self> {
        if mean.len() != logvar.len() {
            return Err(Error::ShapeMismatch {
                op: "gaussian",
                lhs: (1, mean.len()),
                rhs: (1, logvar.len()),
            });
        }
        Ok(Self { mean, logvar })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            logvar: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `KL(q ‖ p)` between diagonal Gaussians.
pub fn kl_diag(q: &GaussianParams, p: &GaussianParams) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::ShapeMismatch {
            op: "kl_gaussian",
            lhs: (1, q.dim()),
            rhs: (1, p.dim()),
        });
    }
    let mut acc = 0.0;
    for d in 0..q.dim() {
        let (mq, lq, mp, lp) = (q.mean[d], q.logvar[d], p.mean[d], p.logvar[d]);
        acc += lp - lq - 1.0 + (mq - mp).powi(2) * (-lp).exp() + (lq - lp).exp();
    }
    Ok(0.5 * acc)
}

/// `−log N(y | mean, exp(logvar))`, summed over dimensions.
pub fn nll_diag(y: &[f64], g: &GaussianParams) -> Result<f64> {
    if y.len() != g.dim() {
        return Err(Error::ShapeMismatch {
            op: "nll_gaussian",
            lhs: (1, y.len()),
            rhs: (1, g.dim()),
        });
    }
    let mut acc = 0.0;
    for d in 0..y.len() {
        acc += LN_2PI + g.logvar[d] + (y[d] - g.mean[d]).powi(2) * (-g.logvar[d]).exp();
    }
    Ok(0.5 * acc)
}

fn same_shape(g: &Graph, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::ShapeMismatch {
            op,
            lhs: g.shape(a),
            rhs: g.shape(b),
        });
    }
    Ok(())
}

/// Elementwise `log σ²_p − log σ²_q − 1 + (μ_q − μ_p)²/σ²_p + σ²_q/σ²_p`; half
/// its sum is the KL divergence.
pub fn kl_terms(g: &mut Graph, q: GaussianNodes, p: GaussianNodes) -> Result<NodeId> {
    same_shape(g, "kl_gaussian", q.mean, p.mean)?;
    same_shape(g, "kl_gaussian", q.logvar, p.logvar)?;
    let log_ratio = g.sub(p.logvar, q.logvar)?;
    let diff = g.sub(q.mean, p.mean)?;
    let diff_sq = g.square(diff);
    let neg_lp = g.scale(p.logvar, -1.0);
    let inv_vp = g.exp(neg_lp);
    let maha = g.mul(diff_sq, inv_vp)?;
    let neg_ratio = g.scale(log_ratio, -1.0);
    let var_ratio = g.exp(neg_ratio);
    let a = g.add(log_ratio, maha)?;
    let b = g.add(a, var_ratio)?;
    let one = g.scalar(1.0);
    g.sub(b, one)
}

/// `KL(q ‖ p)` summed over every row and dimension.
pub fn kl_gaussian(g: &mut Graph, q: GaussianNodes, p: GaussianNodes) -> Result<NodeId> {
    let terms = kl_terms(g, q, p)?;
    let s = g.sum(terms);
    Ok(g.scale(s, 0.5))
}

/// Gaussian negative log-likelihood summed over every row and dimension.
pub fn nll_gaussian(g: &mut Graph, y: NodeId, pred: GaussianNodes) -> Result<NodeId> {
    same_shape(g, "nll_gaussian", y, pred.mean)?;
    same_shape(g, "nll_gaussian", y, pred.logvar)?;
    let n = g.value(y).len() as f64;
    let r = g.sub(y, pred.mean)?;
    let r2 = g.square(r);
    let neg_lv = g.scale(pred.logvar, -1.0);
    let prec = g.exp(neg_lv);
    let maha = g.mul(r2, prec)?;
    let inner = g.add(maha, pred.logvar)?;
    let s = g.sum(inner);
    let c = g.scalar(n * LN_2PI);
    let total = g.add(s, c)?;
    Ok(g.scale(total, 0.5))
}

/// `mean + exp(logvar / 2) ∘ eps`.
pub fn reparam_sample(g: &mut Graph, dist: GaussianNodes, eps: NodeId) -> Result<NodeId> {
    same_shape(g, "reparam_sample", dist.mean, eps)?;
    let half = g.scale(dist.logvar, 0.5);
    let std = g.exp(half);
    let noise = g.mul(std, eps)?;
    g.add(dist.mean, noise)
}

/// Widths of a teacher network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherDims {
    pub y_dim: usize,
    pub hidden: usize,
    pub z_dim: usize,
    /// Hidden widths of the prior and inference networks.
    pub prior_hidden: Vec<usize>,
    /// Hidden widths between `[h; z]` and the representation.
    pub projection_hidden: Vec<usize>,
    pub rep_dim: usize,
    /// Use `[h; z]` itself as the representation (requires
    /// `rep_dim == hidden + z_dim` and no projection widths).
    #[serde(default)]
    pub raw_representation: bool,
}

impl TeacherDims {
    /// Reads a tuple `(y, gru, p_1, ..., p_k, rep, out)`: GRU width `gru`, latent
    /// width equal to it, projection widths `p_i`, representation `rep` and
    /// head output `out`.
    pub fn from_tuple(tuple: &[usize]) -> Result<Self> {
        if tuple.len() < 4 {
            return Err(Error::Config(format!(
                "teacher tuple {tuple:?} needs at least (y, gru, representation, output)"
            )));
        }
        let n = tuple.len();
        if tuple[n - 1] != tuple[0] {
            return Err(Error::Config(format!(
                "teacher tuple {tuple:?}: output width must equal the output dimension"
            )));
        }
        let hidden = tuple[1];
        Ok(Self {
            y_dim: tuple[0],
            hidden,
            z_dim: hidden,
            prior_hidden: vec![hidden],
            projection_hidden: tuple[2..n - 2].to_vec(),
            rep_dim: tuple[n - 2],
            raw_representation: false,
        })
    }

    fn validate(&self) -> Result<()> {
        if [self.y_dim, self.hidden, self.z_dim, self.rep_dim].contains(&0) {
            return Err(Error::Config("teacher widths must be positive".into()));
        }
        if self.raw_representation
            && (!self.projection_hidden.is_empty() || self.rep_dim != self.hidden + self.z_dim)
        {
            return Err(Error::Config(
                "raw teacher representation needs rep_dim = hidden + z_dim and no projection widths".into(),
            ));
        }
        Ok(())
    }
}

/// Dense stack whose last layer emits `[mean; logvar]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianNet {
    pub body: Mlp,
    pub out: DenseLayer,
    pub dim: usize,
}

impl GaussianNet {
    fn new(store: &mut ParamStore, prefix: &str, in_dim: usize, hidden: &[usize], dim: usize, rng: &mut Stream) -> Self {
        let mut dims = vec![in_dim];
        dims.extend_from_slice(hidden);
        let body = Mlp::new(store, &format!("{prefix}.body"), &dims, Activation::Tanh, rng);
        let last = *dims.last().unwrap();
        let out = DenseLayer::new(store, &format!("{prefix}.out"), last, 2 * dim, Activation::Identity, rng);
        Self { body, out, dim }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: NodeId) -> Result<GaussianNodes> {
        let h = self.body.forward(g, p, x)?;
        let o = self.out.forward(g, p, h)?;
        let mean = g.slice(o, Axis::Cols, 0, self.dim)?;
        let raw = g.slice(o, Axis::Cols, self.dim, 2 * self.dim)?;
        let logvar = g.clamp(raw, -LOGVAR_LIMIT, LOGVAR_LIMIT);
        Ok(GaussianNodes { mean, logvar })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Teacher {
    pub dims: TeacherDims,
    pub gru: GruCell,
    pub prior_net: GaussianNet,
    pub encoder_net: GaussianNet,
    pub projection: Mlp,
    pub head: GaussianHead,
}

/// Result of a batched rollout. Stacked nodes hold `steps × batch` rows in
/// time-major order: row `t * batch + b` is step `t` of sequence `b`.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub steps: usize,
    pub batch: usize,
    pub phi: NodeId,
    pub decoded: GaussianNodes,
    pub posterior: GaussianNodes,
    pub prior: GaussianNodes,
    /// Elementwise KL terms (see [`kl_terms`]).
    pub kl_terms: NodeId,
    /// Total KL over steps and batch.
    pub kl: NodeId,
}

impl Rollout {
    /// KL of each step, summed over the batch.
    pub fn kl_per_step(&self, g: &Graph) -> Vec<f64> {
        let terms = g.value(self.kl_terms);
        (0..self.steps)
            .map(|t| {
                0.5 * terms
                    .slice(ndarray::s![t * self.batch..(t + 1) * self.batch, ..])
                    .sum()
            })
            .collect()
    }
}

impl Teacher {
    /// Registers the teacher's own parameters in `store`; `head` is the shared
    /// output layer created by the caller.
    pub fn new(store: &mut ParamStore, dims: TeacherDims, head: GaussianHead, rng: &mut Stream) -> Result<Self> {
        dims.validate()?;
        if head.in_dim() != dims.rep_dim || head.out_dim() != dims.y_dim {
            return Err(Error::Config(format!(
                "shared head maps {} -> {} but the teacher needs {} -> {}",
                head.in_dim(),
                head.out_dim(),
                dims.rep_dim,
                dims.y_dim
            )));
        }
        let gru = GruCell::new(store, "teacher.gru", dims.y_dim + dims.z_dim, dims.hidden, rng);
        let prior_net = GaussianNet::new(store, "teacher.prior", dims.hidden, &dims.prior_hidden, dims.z_dim, rng);
        let encoder_net = GaussianNet::new(
            store,
            "teacher.encoder",
            dims.y_dim + dims.hidden,
            &dims.prior_hidden,
            dims.z_dim,
            rng,
        );
        let projection = if dims.raw_representation {
            Mlp { layers: Vec::new() }
        } else {
            let mut pd = vec![dims.hidden + dims.z_dim];
            pd.extend_from_slice(&dims.projection_hidden);
            pd.push(dims.rep_dim);
            Mlp::new(store, "teacher.projection", &pd, Activation::Tanh, rng)
        };
        Ok(Self {
            dims,
            gru,
            prior_net,
            encoder_net,
            projection,
            head,
        })
    }

    pub fn hidden_update(&self, g: &mut Graph, p: &Bound, h_prev: NodeId, y_prev: NodeId, z_prev: NodeId) -> Result<NodeId> {
        let x = g.concat(&[y_prev, z_prev], Axis::Cols)?;
        self.gru.step(g, p, x, h_prev)
    }

    pub fn prior(&self, g: &mut Graph, p: &Bound, h: NodeId) -> Result<GaussianNodes> {
        self.prior_net.forward(g, p, h)
    }

    pub fn encode(&self, g: &mut Graph, p: &Bound, y: NodeId, h: NodeId) -> Result<GaussianNodes> {
        let x = g.concat(&[y, h], Axis::Cols)?;
        self.encoder_net.forward(g, p, x)
    }

    pub fn represent(&self, g: &mut Graph, p: &Bound, h: NodeId, z: NodeId) -> Result<NodeId> {
        let hz = g.concat(&[h, z], Axis::Cols)?;
        self.projection.forward(g, p, hz)
    }

    /// Runs the teacher over `y_steps` (each `batch × y_dim`) with
    /// reparameterization noise `eps_steps` (each `batch × z_dim`). Zero noise
    /// uses posterior means.
    pub fn rollout(&self, g: &mut Graph, p: &Bound, y_steps: &[NodeId], eps_steps: &[NodeId]) -> Result<Rollout> {
        let steps = y_steps.len();
        if steps == 0 {
            return Err(Error::InvalidInput("teacher rollout over an empty sequence".into()));
        }
        if eps_steps.len() != steps {
            return Err(Error::ShapeMismatch {
                op: "teacher_rollout",
                lhs: (steps, 0),
                rhs: (eps_steps.len(), 0),
            });
        }
        let batch = g.shape(y_steps[0]).0;
        let mut h = g.constant(Array2::zeros((batch, self.dims.hidden)));
        let mut y_prev = g.constant(Array2::zeros((batch, self.dims.y_dim)));
        let mut z_prev = g.constant(Array2::zeros((batch, self.dims.z_dim)));
        // Only the GRU and the encoder sit on the recurrent path; the prior and
        // the projection act row-wise and run once on the stacked steps.
        let (mut h_steps, mut z_steps) = (Vec::with_capacity(steps), Vec::with_capacity(steps));
        let (mut post_m, mut post_l) = (Vec::with_capacity(steps), Vec::with_capacity(steps));
        for (&y, &eps) in y_steps.iter().zip(eps_steps) {
            h = self.hidden_update(g, p, h, y_prev, z_prev)?;
            let post = self.encode(g, p, y, h)?;
            let z = reparam_sample(g, post, eps)?;
            h_steps.push(h);
            z_steps.push(z);
            post_m.push(post.mean);
            post_l.push(post.logvar);
            y_prev = y;
            z_prev = z;
        }
        let stack = |g: &mut Graph, parts: &[NodeId]| g.concat(parts, Axis::Rows);
        let hs = stack(g, &h_steps)?;
        let zs = stack(g, &z_steps)?;
        let prior = self.prior(g, p, hs)?;
        let phi = self.represent(g, p, hs, zs)?;
        let posterior = GaussianNodes {
            mean: stack(g, &post_m)?,
            logvar: stack(g, &post_l)?,
        };
        let decoded = self.head.forward(g, p, phi)?;
        let terms = kl_terms(g, posterior, prior)?;
        let s = g.sum(terms);
        let kl = g.scale(s, 0.5);
        Ok(Rollout {
            steps,
            batch,
            phi,
            decoded,
            posterior,
            prior,
            kl_terms: terms,
            kl,
        })
    }

    /// Parameters owned by the teacher alone (the shared head excluded).
    pub fn own_param_count(&self, store: &ParamStore) -> usize {
        let head: Vec<_> = self.head.param_ids().to_vec();
        let mut ids = self.gru.param_ids().to_vec();
        for net in [&self.prior_net, &self.encoder_net] {
            for l in net.body.layers.iter().chain(std::iter::once(&net.out)) {
                ids.extend([l.w, l.b]);
            }
        }
        for l in &self.projection.layers {
            ids.extend([l.w, l.b]);
        }
        ids.iter()
            .filter(|id| !head.contains(id))
            .map(|&id| store.get(id).len())
            .sum()
    }
}

#[cfg(test)]
mod tests;
