//! Joint training of teacher, student and shared head.
//!
//! Per step the loss over a window of `T` rows is
//! `(α1·nll_S + α2·(nll_T + KL) + α3·align) / T`. A minibatch is `B`
//! contiguous subsequences of length `L`; the teacher restarts from a zero
//! state on each and the student sees the lag vectors at the same indices.
//! Rows are time-major (`t·B + b`) on both sides.

mod adam;
mod checkpoint;
mod ensemble;
mod grid;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use ensemble::{ensemble_average, fit_ensemble};
pub use grid::{grid_search, is_width_subset, rank_candidates, Grid, GridEntry};

use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::benchmarks::IoDataset;
use crate::diffcore::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::nets::{GaussianHead, GaussianNodes, ParamStore};
use crate::rng::Stream;
use crate::student::{lag_rows, LagSpec, PredictMode, Prediction, Student};
use crate::teacher::{nll_gaussian, Rollout, Teacher, TeacherDims};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let a = [self.alpha1, self.alpha2, self.alpha3];
        if a.iter().any(|v| !v.is_finite() || *v < 0.0) || a.iter().all(|&v| v == 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be finite, nonnegative and not all zero: {a:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignVariant {
    /// `Σ (φ_T - φ_S)²`.
    Distance,
    /// `-Σ φ_T·φ_S`.
    Correlation,
}

/// Alignment penalty over every entry of two equally shaped representations.
pub fn align_loss(g: &mut Graph, phi_t: NodeId, phi_s: NodeId, variant: AlignVariant) -> Result<NodeId> {
    if g.shape(phi_t) != g.shape(phi_s) {
        return Err(Error::ShapeMismatch {
            op: "align_loss",
            lhs: g.shape(phi_t),
            rhs: g.shape(phi_s),
        });
    }
    Ok(match variant {
        AlignVariant::Distance => {
            let d = g.sub(phi_t, phi_s)?;
            let sq = g.square(d);
            g.sum(sq)
        }
        AlignVariant::Correlation => {
            let p = g.mul(phi_t, phi_s)?;
            let s = g.sum(p);
            g.scale(s, -1.0)
        }
    })
}

/// Plain-value [`align_loss`] for one pair of vectors.
pub fn align_value(phi_t: &[f64], phi_s: &[f64], variant: AlignVariant) -> Result<f64> {
    if phi_t.len() != phi_s.len() {
        return Err(Error::ShapeMismatch {
            op: "align_loss",
            lhs: (1, phi_t.len()),
            rhs: (1, phi_s.len()),
        });
    }
    let pairs = phi_t.iter().zip(phi_s);
    Ok(match variant {
        AlignVariant::Distance => pairs.map(|(a, b)| (a - b) * (a - b)).sum(),
        AlignVariant::Correlation => -pairs.map(|(a, b)| a * b).sum::<f64>(),
    })
}

/// Student outputs over the same rows as the teacher rollout.
#[derive(Clone, Copy, Debug)]
pub struct StudentOutputs {
    pub phi: NodeId,
    pub pred: GaussianNodes,
}

/// Summed terms and the weighted, row-normalized total.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: NodeId,
    pub rows: usize,
    pub nll_student: Option<NodeId>,
    pub nll_teacher: Option<NodeId>,
    pub kl: Option<NodeId>,
    pub align: Option<NodeId>,
}

/// Values of [`LossTerms`], each summed over rows.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossSums {
    pub total: f64,
    pub rows: usize,
    pub nll_student: f64,
    pub nll_teacher: f64,
    pub kl: f64,
    pub align: f64,
}

impl LossSums {
    pub fn read(g: &Graph, t: &LossTerms) -> Self {
        let v = |n: Option<NodeId>| n.map_or(0.0, |n| g.scalar_value(n));
        Self {
            total: g.scalar_value(t.total) * t.rows as f64,
            rows: t.rows,
            nll_student: v(t.nll_student),
            nll_teacher: v(t.nll_teacher),
            kl: v(t.kl),
            align: v(t.align),
        }
    }

    pub fn add(&mut self, o: &LossSums) {
        self.total += o.total;
        self.rows += o.rows;
        self.nll_student += o.nll_student;
        self.nll_teacher += o.nll_teacher;
        self.kl += o.kl;
        self.align += o.align;
    }

    pub fn per_row(&self, v: f64) -> f64 {
        v / self.rows.max(1) as f64
    }
}

/// Weighted joint loss divided by the row count. Without a teacher only the
/// student term remains.
pub fn joint_loss(
    g: &mut Graph,
    teacher: Option<&Rollout>,
    student: &StudentOutputs,
    y: NodeId,
    w: LossWeights,
    variant: AlignVariant,
) -> Result<LossTerms> {
    let rows = g.shape(y).0;
    let mismatch = |lhs: (usize, usize), rhs: (usize, usize)| Error::ShapeMismatch {
        op: "joint_loss",
        lhs,
        rhs,
    };
    if g.shape(student.pred.mean) != g.shape(y) {
        return Err(mismatch(g.shape(student.pred.mean), g.shape(y)));
    }
    let nll_s = nll_gaussian(g, y, student.pred)?;
    let mut total = g.scale(nll_s, w.alpha1);
    let mut terms = LossTerms {
        total,
        rows,
        nll_student: Some(nll_s),
        nll_teacher: None,
        kl: None,
        align: None,
    };
    if let Some(r) = teacher {
        if r.steps * r.batch != rows {
            return Err(mismatch((r.steps * r.batch, 0), (rows, 0)));
        }
        let nll_t = nll_gaussian(g, y, r.decoded)?;
        let elbo = g.add(nll_t, r.kl)?;
        let we = g.scale(elbo, w.alpha2);
        total = g.add(total, we)?;
        let al = align_loss(g, r.phi, student.phi, variant)?;
        let wa = g.scale(al, w.alpha3);
        total = g.add(total, wa)?;
        terms.nll_teacher = Some(nll_t);
        terms.kl = Some(r.kl);
        terms.align = Some(al);
    }
    terms.total = g.scale(total, 1.0 / rows as f64);
    Ok(terms)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seq_len: usize,
    pub batch_size: usize,
    /// Set by the caller; checkpoints store it in their header.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            max_epochs: 200,
            patience: 10,
            seq_len: 64,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.adam();
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {a:?}")));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.seq_len == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "max_epochs, patience, seq_len and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Baseline,
    Regenerative,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Regenerative => "regenerative",
        }
    }
}

/// Architecture and loss setup of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub lags: LagSpec,
    /// `(lag dim, widths..., 1)`.
    pub student: Vec<usize>,
    /// `(1, gru, projection..., representation, 1)`; regenerative only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<Vec<usize>>,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default = "default_align")]
    pub align: AlignVariant,
}

fn default_align() -> AlignVariant {
    AlignVariant::Distance
}

impl ModelSpec {
    pub fn baseline(lags: LagSpec, tuple: &[usize]) -> Self {
        Self {
            kind: ModelKind::Baseline,
            lags,
            student: tuple.to_vec(),
            teacher: None,
            weights: LossWeights {
                alpha1: 1.0,
                alpha2: 0.0,
                alpha3: 0.0,
            },
            align: AlignVariant::Distance,
        }
    }

    pub fn regenerative(lags: LagSpec, student: &[usize], teacher: &[usize]) -> Self {
        Self {
            kind: ModelKind::Regenerative,
            lags,
            student: student.to_vec(),
            teacher: Some(teacher.to_vec()),
            weights: LossWeights::default(),
            align: AlignVariant::Distance,
        }
    }

    /// Hidden widths of the student, representation last.
    pub fn student_widths(&self) -> &[usize] {
        &self.student[1..self.student.len().saturating_sub(1)]
    }

    pub fn rep_dim(&self) -> usize {
        self.student[self.student.len() - 2]
    }

    pub fn validate(&self) -> Result<()> {
        self.lags.validate()?;
        self.weights.validate()?;
        let s = &self.student;
        if s.len() < 3 || s[0] != self.lags.dim() || s[s.len() - 1] != 1 {
            return Err(Error::Config(format!(
                "student tuple {s:?} must read (lag dim = {}, widths..., 1)",
                self.lags.dim()
            )));
        }
        match (self.kind, &self.teacher) {
            (ModelKind::Baseline, None) => Ok(()),
            (ModelKind::Baseline, Some(_)) => Err(Error::Config("a baseline model has no teacher tuple".into())),
            (ModelKind::Regenerative, None) => Err(Error::Config("a regenerative model needs a teacher tuple".into())),
            (ModelKind::Regenerative, Some(t)) => {
                let dims = TeacherDims::from_tuple(t)?;
                if dims.y_dim != 1 || dims.rep_dim != self.rep_dim() {
                    return Err(Error::Config(format!(
                        "teacher tuple {t:?} and student tuple {s:?} disagree on the shared head"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Parameters plus the networks that index them.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub student: Student,
    pub teacher: Option<Teacher>,
}

impl Model {
    /// Registers the head, then the teacher, then the student.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = Stream::new(seed);
        let mut store = ParamStore::new();
        let head = GaussianHead::new(&mut store, "head", spec.rep_dim(), 1, &mut rng);
        let teacher = match &spec.teacher {
            Some(t) if spec.kind == ModelKind::Regenerative => {
                Some(Teacher::new(&mut store, TeacherDims::from_tuple(t)?, head.clone(), &mut rng)?)
            }
            _ => None,
        };
        let student = Student::new(&mut store, "student", spec.lags, spec.student_widths(), head, &mut rng)?;
        Ok(Self {
            spec: spec.clone(),
            store,
            student,
            teacher,
        })
    }

    /// Inference-time parameter count (student and head).
    pub fn params_count(&self) -> usize {
        self.student.param_count(&self.store)
    }

    /// Loss on one batch, built into `g`.
    pub fn batch_loss(&self, g: &mut Graph, batch: &Batch, eps: &[Array2<f64>], trainable: bool) -> Result<(LossTerms, Vec<NodeId>)> {
        let p = self.store.bind(g, trainable);
        let x = g.constant(batch.x.clone());
        let (phi, pred) = self.student.forward(g, &p, x)?;
        let y = g.constant(batch.y.clone());
        let rollout = match &self.teacher {
            Some(t) => {
                let ys: Vec<NodeId> = batch.y_steps.iter().map(|v| g.constant(v.clone())).collect();
                let es: Vec<NodeId> = eps.iter().map(|v| g.constant(v.clone())).collect();
                Some(t.rollout(g, &p, &ys, &es)?)
            }
            None => None,
        };
        let terms = joint_loss(
            g,
            rollout.as_ref(),
            &StudentOutputs { phi, pred },
            y,
            self.spec.weights,
            self.spec.align,
        )?;
        Ok((terms, p.nodes().to_vec()))
    }

    fn z_dim(&self) -> usize {
        self.teacher.as_ref().map_or(0, |t| t.dims.z_dim)
    }

    /// Reparameterization noise for one batch, `L` arrays of `B × z`.
    fn draw_eps(&self, batch: &Batch, rng: &mut Stream) -> Vec<Array2<f64>> {
        let z = self.z_dim();
        if z == 0 {
            return Vec::new();
        }
        batch
            .y_steps
            .iter()
            .map(|_| Array2::from_shape_simple_fn((batch.batch, z), || rng.normal()))
            .collect()
    }

    /// Teacher and student representations on the rows of `batch`, teacher
    /// noise set to zero.
    pub fn representations(&self, batch: &Batch) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
        let (phi_s, _, _) = self.student.eval(&self.store, &batch.x)?;
        let Some(t) = &self.teacher else {
            return Ok((phi_s, None));
        };
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let ys: Vec<NodeId> = batch.y_steps.iter().map(|v| g.constant(v.clone())).collect();
        let es: Vec<NodeId> = (0..ys.len())
            .map(|_| g.constant(Array2::zeros((batch.batch, t.dims.z_dim))))
            .collect();
        let r = t.rollout(&mut g, &p, &ys, &es)?;
        Ok((phi_s, Some(g.value(r.phi).clone())))
    }
}

/// Standardization from training-split statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub u_mean: f64,
    pub u_std: f64,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Scaler {
    pub fn fit(u: &[f64], y: &[f64]) -> Result<Self> {
        let stats = |x: &[f64], what: &str| -> Result<(f64, f64)> {
            if x.is_empty() {
                return Err(Error::InvalidInput(format!("no {what} samples to standardize")));
            }
            let n = x.len() as f64;
            let m = x.iter().sum::<f64>() / n;
            let s = (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            Ok((m, if s > 0.0 { s } else { 1.0 }))
        };
        let (u_mean, u_std) = stats(u, "input")?;
        let (y_mean, y_std) = stats(y, "output")?;
        Ok(Self {
            u_mean,
            u_std,
            y_mean,
            y_std,
        })
    }

    pub fn identity() -> Self {
        Self {
            u_mean: 0.0,
            u_std: 1.0,
            y_mean: 0.0,
            y_std: 1.0,
        }
    }

    pub fn scale_u(&self, u: &[f64]) -> Vec<f64> {
        u.iter().map(|v| (v - self.u_mean) / self.u_std).collect()
    }

    pub fn scale_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.y_mean) / self.y_std).collect()
    }

    pub fn unscale(&self, p: Prediction) -> Prediction {
        let s2 = self.y_std * self.y_std;
        Prediction {
            start: p.start,
            mean: p.mean.iter().map(|m| m * self.y_std + self.y_mean).collect(),
            var: p.var.iter().map(|v| v * s2).collect(),
        }
    }
}

/// `B` subsequences of length `L`, stacked time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub batch: usize,
    pub starts: Vec<usize>,
    /// `B·L × lag dim`.
    pub x: Array2<f64>,
    /// `B·L × 1`.
    pub y: Array2<f64>,
    /// `L` arrays of `B × 1`.
    pub y_steps: Vec<Array2<f64>>,
}

impl Batch {
    pub fn new(u: &[f64], y: &[f64], starts: &[usize], len: usize, lags: LagSpec) -> Result<Self> {
        let b = starts.len();
        let times: Vec<usize> = (0..len).flat_map(|t| starts.iter().map(move |s| s + t)).collect();
        let x = lag_rows(u, y, &times, lags)?;
        let yv = Array2::from_shape_fn((times.len(), 1), |(i, _)| y[times[i]]);
        let y_steps = (0..len)
            .map(|t| Array2::from_shape_fn((b, 1), |(i, _)| y[starts[i] + t]))
            .collect();
        Ok(Self {
            batch: b,
            starts: starts.to_vec(),
            x,
            y: yv,
            y_steps,
        })
    }

    pub fn rows(&self) -> usize {
        self.y.nrows()
    }
}

/// Non-overlapping subsequence starts in `range`, the first at
/// `range.start + max_lag + offset`.
pub fn tile_starts(range: &Range<usize>, max_lag: usize, len: usize, offset: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut s = range.start + max_lag + offset;
    while s + len <= range.end {
        out.push(s);
        s += len;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Per-row training loss, averaged over the epoch's steps.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Per-row teacher negative ELBO on validation data.
    pub val_nelbo: Option<f64>,
    /// Per-row alignment penalty on validation data.
    pub val_align: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl History {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }
}

/// A fitted model with everything needed to reuse it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedPair {
    pub model: Model,
    pub scaler: Scaler,
    pub history: History,
    pub config: TrainConfig,
    pub seed: u64,
}

impl TrainedPair {
    /// Predictions in original units over `times` of `ds`.
    pub fn predict(&self, ds: &IoDataset, times: Range<usize>, mode: PredictMode) -> Result<Prediction> {
        let u = self.scaler.scale_u(&ds.u);
        let y = self.scaler.scale_y(&ds.y);
        let p = self.model.student.predict_range(&self.model.store, &u, &y, times, mode)?;
        Ok(self.scaler.unscale(p))
    }

    /// Scored test steps: the test range minus its first `max_lag` samples.
    pub fn test_times(&self, ds: &IoDataset) -> Range<usize> {
        let t = &ds.split.test;
        (t.start + self.model.spec.lags.max_lag()).min(t.end)..t.end
    }
}

/// Stream indices of [`Stream::derive`] used inside one fit.
const INIT_STREAM: u64 = 0;
const ORDER_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const VAL_STREAM: u64 = 3;

/// Validation sums over `range`, fixed noise.
pub fn evaluate_range(model: &Model, u: &[f64], y: &[f64], range: &Range<usize>, cfg: &TrainConfig, seed: u64) -> Result<LossSums> {
    let starts = tile_starts(range, model.spec.lags.max_lag(), cfg.seq_len, 0);
    if starts.is_empty() {
        return Err(Error::InvalidInput(format!(
            "range {range:?} is shorter than max lag {} plus subsequence length {}",
            model.spec.lags.max_lag(),
            cfg.seq_len
        )));
    }
    let mut rng = Stream::derive(seed, VAL_STREAM);
    let mut sums = LossSums::default();
    for chunk in starts.chunks(cfg.batch_size) {
        let batch = Batch::new(u, y, chunk, cfg.seq_len, model.spec.lags)?;
        let eps = model.draw_eps(&batch, &mut rng);
        let mut g = Graph::new();
        let (terms, _) = model.batch_loss(&mut g, &batch, &eps, false)?;
        sums.add(&LossSums::read(&g, &terms));
    }
    Ok(sums)
}

/// Trains `spec` on the training split of `data`, early-stopping on the
/// validation split, and returns the best-validation snapshot.
pub fn fit(data: &IoDataset, spec: &ModelSpec, cfg: &TrainConfig) -> Result<TrainedPair> {
    cfg.validate()?;
    data.validate()?;
    let seed = cfg.seed;
    let train = data.split.train.clone();
    let val = data.split.val.clone();
    let scaler = Scaler::fit(&data.u[train.clone()], &data.y[train.clone()])?;
    let u = scaler.scale_u(&data.u);
    let y = scaler.scale_y(&data.y);

    let mut model = Model::init(spec, crate::rng::derive_seed(seed, INIT_STREAM))?;
    let max_lag = spec.lags.max_lag();
    if tile_starts(&train, max_lag, cfg.seq_len, 0).is_empty() {
        return Err(Error::InvalidInput(format!(
            "training range {train:?} cannot hold max lag {max_lag} plus one subsequence of {}",
            cfg.seq_len
        )));
    }
    let mut adam = Adam::new(cfg.adam(), &model.store);
    let mut order = Stream::derive(seed, ORDER_STREAM);
    let mut noise = Stream::derive(seed, NOISE_STREAM);
    let mut history = History::default();
    let mut best: Option<(f64, Vec<Array2<f64>>)> = None;
    let mut since_best = 0;

    for epoch in 0..cfg.max_epochs {
        let offset = order.below(cfg.seq_len);
        let mut starts = tile_starts(&train, max_lag, cfg.seq_len, offset);
        if starts.is_empty() {
            starts = tile_starts(&train, max_lag, cfg.seq_len, 0);
        }
        order.shuffle(&mut starts);
        let mut train_sum = 0.0;
        let mut steps = 0;
        for chunk in starts.chunks(cfg.batch_size) {
            let batch = Batch::new(&u, &y, chunk, cfg.seq_len, spec.lags)?;
            let eps = model.draw_eps(&batch, &mut noise);
            let mut g = Graph::new();
            let (terms, nodes) = model.batch_loss(&mut g, &batch, &eps, true)?;
            let loss = g.scalar_value(terms.total);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            g.backward(terms.total)?;
            let grads: Vec<Array2<f64>> = nodes.iter().map(|&n| g.grad_or_zeros(n)).collect();
            drop(g);
            adam.step(&mut model.store, &grads).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Divergence { epoch },
                other => other,
            })?;
            train_sum += loss;
            steps += 1;
        }
        let vs = evaluate_range(&model, &u, &y, &val, cfg, seed)?;
        let val_loss = vs.per_row(vs.total);
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let has_teacher = model.teacher.is_some();
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: train_sum / steps as f64,
            val_loss,
            val_nelbo: has_teacher.then(|| vs.per_row(vs.nll_teacher + vs.kl)),
            val_align: has_teacher.then(|| vs.per_row(vs.align)),
        });
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.store.values().to_vec()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    if let Some((_, values)) = best {
        model.store.values_mut().clone_from_slice(&values);
    }
    Ok(TrainedPair {
        model,
        scaler,
        history,
        config: cfg.clone(),
        seed,
    })
}

/// Student representations and, for regenerative pairs, zero-noise teacher
/// representations on the validation split, in the row order of [`Batch`].
pub fn validation_representations(pair: &TrainedPair, data: &IoDataset) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
    let u = pair.scaler.scale_u(&data.u);
    let y = pair.scaler.scale_y(&data.y);
    let cfg = &pair.config;
    let model = &pair.model;
    let starts = tile_starts(&data.split.val, model.spec.lags.max_lag(), cfg.seq_len, 0);
    if starts.is_empty() {
        return Err(Error::InvalidInput("validation range too short for one subsequence".into()));
    }
    let mut phis = Vec::new();
    let mut phits = Vec::new();
    for chunk in starts.chunks(cfg.batch_size) {
        let batch = Batch::new(&u, &y, chunk, cfg.seq_len, model.spec.lags)?;
        let (s, t) = model.representations(&batch)?;
        phis.push(s);
        phits.extend(t);
    }
    let cat = |parts: &[Array2<f64>]| {
        let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
        ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths")
    };
    let phi_t = (!phits.is_empty()).then(|| cat(&phits));
    Ok((cat(&phis), phi_t))
}
