//! Experiment configuration (TOML).
//!
//! ```toml
//! name = "lgssm"
//! seed = 1
//! ensemble = 5
//!
//! [benchmark]
//! kind = "lgssm"           # lgssm | narendra-li | wh | csv
//! n = 50000
//!
//! [model]
//! lags = { n_b = 10, n_a = 5 }
//! baseline = [15, 60, 30, 1]
//! student = [15, 30, 1]
//! teacher = [1, 15, 60, 30, 1]
//!
//! [train]
//! lr = 0.001
//! ```
//!
//! Every key except `name`, `benchmark.kind` and the `[model]` tuples has a
//! default; [`ExperimentConfig::documented_defaults`] lists them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::benchmarks::{Lgssm, NarendraLi, WhSurrogate};
use crate::error::{Error, Result};
use crate::student::LagSpec;
use crate::trainer::{is_width_subset, AlignVariant, Grid, LossWeights, Model, ModelSpec, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LgssmData {
    /// Training plus validation samples.
    pub n: usize,
    pub input_lo: f64,
    pub input_hi: f64,
    pub train_fraction: f64,
    /// Length of the sinusoidal test record, simulated without noise.
    pub test_len: usize,
    pub system: Lgssm,
}

impl Default for LgssmData {
    fn default() -> Self {
        Self {
            n: 50_000,
            input_lo: -2.5,
            input_hi: 2.5,
            train_fraction: 0.8,
            test_len: 1000,
            system: Lgssm::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NarendraLiData {
    pub n: usize,
    pub input_lo: f64,
    pub input_hi: f64,
    pub train_fraction: f64,
    /// Held-out continuation of the same uniform excitation.
    pub test_len: usize,
    pub system: NarendraLi,
}

impl Default for NarendraLiData {
    fn default() -> Self {
        Self {
            n: 50_000,
            input_lo: -2.5,
            input_hi: 2.5,
            train_fraction: 0.8,
            test_len: 5000,
            system: NarendraLi::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WhData {
    /// Swept-sine record, split into training and validation.
    pub n: usize,
    pub sweep_f0: f64,
    pub sweep_f1: f64,
    pub sweep_amplitude: f64,
    pub train_fraction: f64,
    /// Faded multisine test record.
    pub test_len: usize,
    pub test_band: (f64, f64),
    pub test_tones: usize,
    pub test_rms: f64,
    pub system: WhSurrogate,
}

impl Default for WhData {
    fn default() -> Self {
        Self {
            n: 64_162,
            sweep_f0: 0.0005,
            sweep_f1: 0.02,
            sweep_amplitude: 3.5,
            train_fraction: 0.8,
            test_len: 8192,
            test_band: (0.001, 0.02),
            test_tones: 40,
            test_rms: 1.0,
            system: WhSurrogate::default(),
        }
    }
}

/// An existing `k,u,y[,y_clean]` file. Ranges given here replace the
/// sidecar's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvData {
    pub path: PathBuf,
    #[serde(default)]
    pub train: Option<(usize, usize)>,
    #[serde(default)]
    pub val: Option<(usize, usize)>,
    #[serde(default)]
    pub test: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BenchmarkConfig {
    Lgssm(LgssmData),
    NarendraLi(NarendraLiData),
    Wh(WhData),
    Csv(CsvData),
}

impl BenchmarkConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            BenchmarkConfig::Lgssm(_) => "lgssm",
            BenchmarkConfig::NarendraLi(_) => "narendra-li",
            BenchmarkConfig::Wh(_) => "wh",
            BenchmarkConfig::Csv(_) => "csv",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub lags: LagSpec,
    pub baseline: Vec<usize>,
    pub student: Vec<usize>,
    pub teacher: Vec<usize>,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default = "distance")]
    pub align: AlignVariant,
}

fn distance() -> AlignVariant {
    AlignVariant::Distance
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Models per ensemble.
    #[serde(default = "one")]
    pub ensemble: usize,
    pub benchmark: BenchmarkConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub grid: Grid,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_owned() + &span_hint(text, e.span())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn baseline_spec(&self) -> ModelSpec {
        ModelSpec::baseline(self.model.lags, &self.model.baseline)
    }

    pub fn regenerative_spec(&self) -> ModelSpec {
        let mut s = ModelSpec::regenerative(self.model.lags, &self.model.student, &self.model.teacher);
        s.weights = self.model.weights;
        s.align = self.model.align;
        s
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ensemble == 0 {
            return Err(Error::Config("ensemble: must be at least 1".into()));
        }
        self.train.validate()?;
        let b = self.baseline_spec();
        let r = self.regenerative_spec();
        b.validate().map_err(|e| Error::Config(format!("model.baseline: {e}")))?;
        r.validate().map_err(|e| Error::Config(format!("model.student/teacher: {e}")))?;
        if !is_width_subset(r.student_widths(), b.student_widths()) {
            return Err(Error::Config(format!(
                "model.student: widths {:?} are not a subset of the baseline widths {:?}",
                r.student_widths(),
                b.student_widths()
            )));
        }
        let (pb, ps) = (Model::init(&b, 0)?.params_count(), Model::init(&r, 0)?.params_count());
        if ps >= pb {
            return Err(Error::Config(format!(
                "model.student: {ps} inference parameters, not fewer than the baseline's {pb}"
            )));
        }
        Ok(())
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (benchmark, lags, baseline, student, teacher): (_, _, &[usize], &[usize], &[usize]) = match name {
            "lgssm" => (
                BenchmarkConfig::Lgssm(LgssmData::default()),
                LagSpec { n_b: 10, n_a: 5 },
                &[15, 60, 30, 1],
                &[15, 30, 1],
                &[1, 15, 60, 30, 1],
            ),
            "narendra-li" => (
                BenchmarkConfig::NarendraLi(NarendraLiData::default()),
                LagSpec { n_b: 20, n_a: 5 },
                &[25, 45, 45, 10, 1],
                &[25, 45, 10, 1],
                &[1, 25, 45, 45, 10, 1],
            ),
            "wh" => (
                BenchmarkConfig::Wh(WhData::default()),
                LagSpec { n_b: 20, n_a: 20 },
                &[40, 80, 20, 1],
                &[40, 20, 1],
                &[1, 40, 80, 20, 1],
            ),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?}; expected lgssm, narendra-li or wh"
                )))
            }
        };
        let cfg = Self {
            name: name.to_owned(),
            seed: 1,
            ensemble: 5,
            benchmark,
            model: ModelConfig {
                lags,
                baseline: baseline.to_vec(),
                student: student.to_vec(),
                teacher: teacher.to_vec(),
                weights: LossWeights::default(),
                align: AlignVariant::Distance,
            },
            train: TrainConfig::default(),
            grid: Grid::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub const PRESETS: [&'static str; 3] = ["lgssm", "narendra-li", "wh"];

    /// All keys with their default values, as TOML.
    pub fn documented_defaults() -> String {
        let mut out = String::new();
        for p in Self::PRESETS {
            let text = Self::preset(p).and_then(|c| c.to_toml()).unwrap_or_default();
            out.push_str(&format!("# preset {p}\n{text}\n"));
        }
        out
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(s) => {
            let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}
