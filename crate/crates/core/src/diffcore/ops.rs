use ndarray::{s, Array2, Axis as NdAxis, Zip};

use super::{Axis, Graph, Node, NodeId, Op};
use crate::error::{Error, Result};

fn mismatch(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Error {
    Error::ShapeMismatch { op, lhs, rhs }
}

fn is_scalar(a: &Array2<f64>) -> bool {
    a.dim() == (1, 1)
}

/// Elementwise combination with scalar-to-array broadcasting.
fn zip_broadcast(
    op: &'static str,
    a: &Array2<f64>,
    b: &Array2<f64>,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Array2<f64>> {
    if a.dim() == b.dim() {
        let mut out = a.clone();
        Zip::from(&mut out).and(b).for_each(|x, &y| *x = f(*x, y));
        Ok(out)
    } else if is_scalar(b) {
        let y = b[[0, 0]];
        Ok(a.mapv(|x| f(x, y)))
    } else if is_scalar(a) {
        let x = a[[0, 0]];
        Ok(b.mapv(|y| f(x, y)))
    } else {
        Err(mismatch(op, a.dim(), b.dim()))
    }
}

/// Reduces a broadcast gradient back to the shape of its operand.
fn reduce_to(grad: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    if grad.dim() == shape {
        grad
    } else {
        Array2::from_elem((1, 1), grad.sum())
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let value = self.value(a).mapv(f);
        let rg = self.requires_grad(a);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = zip_broadcast("add", self.value(a), self.value(b), |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = zip_broadcast("sub", self.value(a), self.value(b), |x, y| x - y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = zip_broadcast("mul", self.value(a), self.value(b), |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// Multiplication by a fixed real.
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(mismatch("matmul", va.dim(), vb.dim()));
        }
        let v = va.dot(vb);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).t().to_owned();
        let rg = self.requires_grad(a);
        self.push(v, Op::Transpose(a), rg)
    }

    /// `x · wᵀ + b` for a batch of row vectors `x` (`n × in`), weights `w`
    /// (`out × in`) and an optional bias row `b` (`1 × out`) added to every row.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (vx, vw) = (self.value(x), self.value(w));
        if vx.ncols() != vw.ncols() {
            return Err(mismatch("affine", vx.dim(), vw.dim()));
        }
        let mut v = vx.dot(&vw.t());
        if let Some(b) = b {
            let vb = self.value(b);
            if vb.dim() != (1, vw.nrows()) {
                return Err(mismatch("affine.bias", vw.dim(), vb.dim()));
            }
            v += vb;
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        Ok(self.push(v, Op::Affine { x, w, b }, rg))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: Axis) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidInput("concat of zero parts".into()));
        };
        let (r0, c0) = self.shape(first);
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            let ok = match axis {
                Axis::Cols => r == r0,
                Axis::Rows => c == c0,
            };
            if !ok {
                return Err(mismatch("concat", (r0, c0), (r, c)));
            }
            total += match axis {
                Axis::Cols => c,
                Axis::Rows => r,
            };
        }
        let shape = match axis {
            Axis::Cols => (r0, total),
            Axis::Rows => (total, c0),
        };
        let mut v = Array2::zeros(shape);
        let mut off = 0;
        for &p in parts {
            let pv = &self.nodes[p.0].value;
            match axis {
                Axis::Cols => {
                    v.slice_mut(s![.., off..off + pv.ncols()]).assign(pv);
                    off += pv.ncols();
                }
                Axis::Rows => {
                    v.slice_mut(s![off..off + pv.nrows(), ..]).assign(pv);
                    off += pv.nrows();
                }
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(
            v,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(&mut self, src: NodeId, axis: Axis, start: usize, end: usize) -> Result<NodeId> {
        let vs = self.value(src);
        let len = match axis {
            Axis::Rows => vs.nrows(),
            Axis::Cols => vs.ncols(),
        };
        if start >= end || end > len {
            return Err(mismatch("slice", vs.dim(), (start, end)));
        }
        let v = match axis {
            Axis::Rows => vs.slice(s![start..end, ..]).to_owned(),
            Axis::Cols => vs.slice(s![.., start..end]).to_owned(),
        };
        let rg = self.requires_grad(src);
        Ok(self.push(v, Op::Slice { src, axis, start }, rg))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.requires_grad(a);
        self.push(v, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let v = Array2::from_elem((1, 1), va.sum() / va.len() as f64);
        let rg = self.requires_grad(a);
        self.push(v, Op::Mean(a), rg)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid(a), stable_sigmoid)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Softplus(a), stable_softplus)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(a, Op::Clamp { src: a, lo, hi }, |x| x.clamp(lo, hi))
    }
}

fn accumulate(pending: &mut [Option<Array2<f64>>], id: NodeId, g: Array2<f64>) {
    match &mut pending[id.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Pushes `upstream` (the gradient of node `idx`) to that node's parents.
pub(super) fn propagate(
    nodes: &[Node],
    idx: usize,
    up: &Array2<f64>,
    pending: &mut [Option<Array2<f64>>],
) {
    let needs = |id: NodeId| nodes[id.0].requires_grad;
    let val = |id: NodeId| &nodes[id.0].value;
    let out = &nodes[idx].value;
    let mut send = |id: NodeId, g: Array2<f64>| {
        if needs(id) {
            accumulate(pending, id, g);
        }
    };
    match &nodes[idx].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            let (a, b) = (*a, *b);
            if needs(a) {
                send(a, reduce_to(up.clone(), val(a).dim()));
            }
            if needs(b) {
                send(b, reduce_to(up.clone(), val(b).dim()));
            }
        }
        Op::Sub(a, b) => {
            let (a, b) = (*a, *b);
            if needs(a) {
                send(a, reduce_to(up.clone(), val(a).dim()));
            }
            if needs(b) {
                send(b, reduce_to(-up, val(b).dim()));
            }
        }
        Op::Mul(a, b) => {
            let (a, b) = (*a, *b);
            if needs(a) {
                let g = zip_broadcast("mul", up, val(b), |u, y| u * y).expect("checked forward");
                send(a, reduce_to(g, val(a).dim()));
            }
            if needs(b) {
                let g = zip_broadcast("mul", up, val(a), |u, x| u * x).expect("checked forward");
                send(b, reduce_to(g, val(b).dim()));
            }
        }
        Op::Scale(a, c) => send(*a, up * *c),
        Op::MatMul(a, b) => {
            let (a, b) = (*a, *b);
            if needs(a) {
                send(a, up.dot(&val(b).t()));
            }
            if needs(b) {
                send(b, val(a).t().dot(up));
            }
        }
        Op::Transpose(a) => send(*a, up.t().to_owned()),
        Op::Affine { x, w, b } => {
            let (x, w, b) = (*x, *w, *b);
            if needs(x) {
                send(x, up.dot(val(w)));
            }
            if needs(w) {
                send(w, up.t().dot(val(x)));
            }
            if let Some(b) = b {
                if needs(b) {
                    send(b, up.sum_axis(NdAxis(0)).insert_axis(NdAxis(0)));
                }
            }
        }
        Op::Concat { parts, axis } => {
            let mut off = 0;
            for &p in parts {
                let (r, c) = val(p).dim();
                let g = match axis {
                    Axis::Cols => {
                        let g = up.slice(s![.., off..off + c]).to_owned();
                        off += c;
                        g
                    }
                    Axis::Rows => {
                        let g = up.slice(s![off..off + r, ..]).to_owned();
                        off += r;
                        g
                    }
                };
                send(p, g);
            }
        }
        Op::Slice { src, axis, start } => {
            let mut g = Array2::zeros(val(*src).dim());
            let start = *start;
            match axis {
                Axis::Rows => g
                    .slice_mut(s![start..start + up.nrows(), ..])
                    .assign(up),
                Axis::Cols => g
                    .slice_mut(s![.., start..start + up.ncols()])
                    .assign(up),
            }
            send(*src, g);
        }
        Op::Sum(a) => send(*a, Array2::from_elem(val(*a).dim(), up[[0, 0]])),
        Op::Mean(a) => {
            let va = val(*a);
            send(*a, Array2::from_elem(va.dim(), up[[0, 0]] / va.len() as f64));
        }
        Op::Square(a) => {
            let mut g = val(*a) * 2.0;
            g *= up;
            send(*a, g);
        }
        Op::Exp(a) => send(*a, out * up),
        Op::Log(a) => send(*a, up / val(*a)),
        Op::Tanh(a) => {
            let mut g = out.mapv(|y| 1.0 - y * y);
            g *= up;
            send(*a, g);
        }
        Op::Sigmoid(a) => {
            let mut g = out.mapv(|y| y * (1.0 - y));
            g *= up;
            send(*a, g);
        }
        Op::Softplus(a) => {
            let mut g = val(*a).mapv(stable_sigmoid);
            g *= up;
            send(*a, g);
        }
        Op::Relu(a) => {
            let mut g = val(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
            g *= up;
            send(*a, g);
        }
        Op::Clamp { src, lo, hi } => {
            let (lo, hi) = (*lo, *hi);
            let mut g = val(*src).mapv(|x| if x >= lo && x <= hi { 1.0 } else { 0.0 });
            g *= up;
            send(*src, g);
        }
    }
}
