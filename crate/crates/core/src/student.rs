//! The shallow lag-vector student.
//!
//! A student maps `x_t = [u_{t-n_b}, ..., u_{t-1}, y_{t-n_a}, ..., y_{t-1}]`
//! through a tanh dense stack to its representation and then through a
//! [`GaussianHead`]. The baseline model is the same network trained without a
//! teacher, so both are built from this type.

use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::nets::{Activation, Bound, GaussianHead, GaussianNodes, Mlp, ParamId, ParamStore};
use crate::rng::Stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagSpec {
    /// Input lags.
    pub n_b: usize,
    /// Output lags.
    pub n_a: usize,
}

impl LagSpec {
    pub fn new(n_b: usize, n_a: usize) -> Result<Self> {
        let spec = Self { n_b, n_a };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_a + self.n_b == 0 {
            return Err(Error::Config("lag spec needs n_a + n_b >= 1".into()));
        }
        Ok(())
    }

    /// Regressor width for scalar channels.
    pub fn dim(&self) -> usize {
        self.n_a + self.n_b
    }

    pub fn max_lag(&self) -> usize {
        self.n_a.max(self.n_b)
    }
}

/// Writes `x_t` into `out` (length `spec.dim()`). `u` and `y` must cover `t - 1`.
fn fill_lag_vector(u: &[f64], y: &[f64], t: usize, spec: LagSpec, out: &mut [f64]) {
    let (nb, na) = (spec.n_b, spec.n_a);
    out[..nb].copy_from_slice(&u[t - nb..t]);
    out[nb..].copy_from_slice(&y[t - na..t]);
}

fn check_bounds(u: &[f64], y: &[f64], t: usize, spec: LagSpec) -> Result<()> {
    if t < spec.max_lag() {
        return Err(Error::LagBoundary {
            t,
            max_lag: spec.max_lag(),
        });
    }
    if t > u.len() || t > y.len() {
        return Err(Error::InvalidInput(format!(
            "lag vector at t = {t} needs {t} samples, have u: {}, y: {}",
            u.len(),
            y.len()
        )));
    }
    Ok(())
}

/// `x_t`, oldest sample first within each block, inputs before outputs.
pub fn build_lag_vector(u: &[f64], y: &[f64], t: usize, spec: LagSpec) -> Result<Vec<f64>> {
    check_bounds(u, y, t, spec)?;
    let mut x = vec![0.0; spec.dim()];
    fill_lag_vector(u, y, t, spec, &mut x);
    Ok(x)
}

/// One row `x_t` per `t` in `times`.
pub fn lag_matrix(u: &[f64], y: &[f64], times: Range<usize>, spec: LagSpec) -> Result<Array2<f64>> {
    let n = times.len();
    let mut x = Array2::zeros((n, spec.dim()));
    if n == 0 {
        return Ok(x);
    }
    check_bounds(u, y, times.start, spec)?;
    check_bounds(u, y, times.end - 1, spec)?;
    for (row, t) in x.rows_mut().into_iter().zip(times) {
        fill_lag_vector(u, y, t, spec, row.into_slice().expect("standard layout"));
    }
    Ok(x)
}

/// Rows `x_t` for an arbitrary list of time indices.
pub fn lag_rows(u: &[f64], y: &[f64], times: &[usize], spec: LagSpec) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((times.len(), spec.dim()));
    for (row, &t) in x.rows_mut().into_iter().zip(times) {
        check_bounds(u, y, t, spec)?;
        fill_lag_vector(u, y, t, spec, row.into_slice().expect("standard layout"));
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictMode {
    OneStep,
    FreeRun,
}

impl PredictMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictMode::OneStep => "one-step",
            PredictMode::FreeRun => "free-run",
        }
    }
}

/// Predictive means and variances for `t` in `start..start + mean.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub start: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.mean.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Student {
    pub lags: LagSpec,
    pub hidden: Mlp,
    pub head: GaussianHead,
}

impl Student {
    /// `widths` are the hidden widths between the lag vector and the head; the
    /// last one is the representation width.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        lags: LagSpec,
        widths: &[usize],
        head: GaussianHead,
        rng: &mut Stream,
    ) -> Result<Self> {
        lags.validate()?;
        let Some(&rep) = widths.last() else {
            return Err(Error::Config("student needs at least one hidden layer".into()));
        };
        if widths.contains(&0) {
            return Err(Error::Config("student widths must be positive".into()));
        }
        if head.in_dim() != rep || head.out_dim() != 1 {
            return Err(Error::Config(format!(
                "shared head maps {} -> {} but the student needs {rep} -> 1",
                head.in_dim(),
                head.out_dim()
            )));
        }
        let mut dims = vec![lags.dim()];
        dims.extend_from_slice(widths);
        let hidden = Mlp::new(store, prefix, &dims, Activation::Tanh, rng);
        Ok(Self { lags, hidden, head })
    }

    pub fn rep_dim(&self) -> usize {
        self.head.in_dim()
    }

    /// Architecture tuple `(lag dim, widths..., 1)`.
    pub fn tuple(&self) -> Vec<usize> {
        let mut t = vec![self.lags.dim()];
        t.extend(self.hidden.layers.iter().map(|l| l.out_dim));
        t.push(1);
        t
    }

    /// `(φ_S, prediction)` for a batch of lag vectors.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: NodeId) -> Result<(NodeId, GaussianNodes)> {
        let phi = self.hidden.forward(g, p, x)?;
        let pred = self.head.forward(g, p, phi)?;
        Ok((phi, pred))
    }

    /// Graph-free `(φ_S, mean, logvar)`.
    pub fn eval(&self, store: &ParamStore, x: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
        if x.ncols() != self.lags.dim() {
            return Err(Error::ShapeMismatch {
                op: "student",
                lhs: (x.nrows(), self.lags.dim()),
                rhs: x.dim(),
            });
        }
        let phi = self.hidden.eval(store, x);
        let (mean, logvar) = self.head.eval(store, &phi);
        Ok((phi, mean, logvar))
    }

    /// Predicts `y_t` for `t` in `max_lag..n` of the given series. One-step
    /// mode reads measured outputs; free-run mode feeds back its own means
    /// after the first `max_lag` measured samples.
    pub fn predict_series(&self, store: &ParamStore, u: &[f64], y: &[f64], mode: PredictMode) -> Result<Prediction> {
        self.predict_range(store, u, y, self.lags.max_lag()..u.len(), mode)
    }

    /// As [`Student::predict_series`] over `times`. Free-run seeds its
    /// feedback with measured `y` before `times.start`.
    pub fn predict_range(
        &self,
        store: &ParamStore,
        u: &[f64],
        y: &[f64],
        times: Range<usize>,
        mode: PredictMode,
    ) -> Result<Prediction> {
        if u.len() != y.len() {
            return Err(Error::InvalidInput(format!(
                "series lengths differ: u has {}, y has {}",
                u.len(),
                y.len()
            )));
        }
        if u.len() < self.lags.max_lag() || times.end > u.len() {
            return Err(Error::InvalidInput(format!(
                "series of length {} cannot cover prediction range {times:?} with max lag {}",
                u.len(),
                self.lags.max_lag()
            )));
        }
        if times.is_empty() {
            return Ok(Prediction {
                start: times.start,
                mean: Vec::new(),
                var: Vec::new(),
            });
        }
        match mode {
            PredictMode::OneStep => {
                let x = lag_matrix(u, y, times.clone(), self.lags)?;
                let (_, mean, logvar) = self.eval(store, &x)?;
                Ok(Prediction {
                    start: times.start,
                    mean: mean.column(0).to_vec(),
                    var: logvar.column(0).mapv(f64::exp).to_vec(),
                })
            }
            PredictMode::FreeRun => {
                check_bounds(u, y, times.start, self.lags)?;
                let mut fed = y[..times.end].to_vec();
                let mut mean = Vec::with_capacity(times.len());
                let mut var = Vec::with_capacity(times.len());
                let mut x = Array2::zeros((1, self.lags.dim()));
                for t in times.clone() {
                    fill_lag_vector(u, &fed, t, self.lags, x.as_slice_mut().expect("standard layout"));
                    let (_, m, lv) = self.eval(store, &x)?;
                    fed[t] = m[[0, 0]];
                    mean.push(m[[0, 0]]);
                    var.push(lv[[0, 0]].exp());
                }
                Ok(Prediction {
                    start: times.start,
                    mean,
                    var,
                })
            }
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.hidden.layers.iter().flat_map(|l| [l.w, l.b]).collect();
        ids.extend(self.head.param_ids());
        ids
    }

    /// Scalars used at inference, head included.
    pub fn param_count(&self, store: &ParamStore) -> usize {
        self.param_ids().iter().map(|&id| store.get(id).len()).sum()
    }
}
