//! End-to-end runs: dataset assembly, paired ensembles, scoring, artifacts.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::benchmarks::{
    gen_multisine, gen_swept_sine, gen_test_sine, gen_uniform_input, load_csv_dataset, save_csv_dataset, IoDataset, Noise, Split,
};
use crate::config::{BenchmarkConfig, ExperimentConfig};
use crate::error::{Error, Result};
use crate::metrics::{correlation_matrix, emit_matrix, emit_report, emit_series, nll_metric, rmse, EvalReport, Reference};
use crate::rng::derive_seed;
use crate::student::{PredictMode, Prediction};
use crate::trainer::{ensemble_average, fit_ensemble, save_checkpoint, validation_representations, ModelSpec, TrainedPair};

/// Seed indices for the generated signals, derived from the experiment seed.
const INPUT_SEED: u64 = 100;
const NOISE_SEED: u64 = 101;
const TEST_INPUT_SEED: u64 = 102;
const TEST_NOISE_SEED: u64 = 103;

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

/// Builds (or loads) the dataset an experiment config describes.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<IoDataset> {
    let seed = cfg.seed;
    let s = |i| derive_seed(seed, i);
    let mut ds = match &cfg.benchmark {
        BenchmarkConfig::Lgssm(d) => {
            let u = gen_uniform_input(d.n, d.input_lo, d.input_hi, s(INPUT_SEED))?;
            let tr = d.system.simulate(&u, s(NOISE_SEED), Noise::ON)?;
            let ut = gen_test_sine(d.test_len);
            let te = d.system.simulate(&ut, s(TEST_NOISE_SEED), Noise::OFF)?;
            let mut split = Split::fractions(d.n, d.train_fraction);
            split.test = d.n..d.n + d.test_len;
            let mut ds = IoDataset::new(
                "lgssm",
                concat(&u, &ut),
                concat(&tr.y, &te.y),
                Some(concat(&tr.y_clean, &te.y_clean)),
                seed,
                split,
            )?;
            ds.meta.insert("input".into(), format!("uniform[{}, {}]", d.input_lo, d.input_hi));
            ds.meta.insert("test_input".into(), "sine".into());
            ds.meta.insert("test_noise".into(), "off".into());
            ds.meta.insert("process_var".into(), d.system.process_var.to_string());
            ds.meta.insert("measurement_std".into(), d.system.measurement_std.to_string());
            ds
        }
        BenchmarkConfig::NarendraLi(d) => {
            let n = d.n + d.test_len;
            let u = gen_uniform_input(n, d.input_lo, d.input_hi, s(INPUT_SEED))?;
            let tr = d.system.simulate(&u, s(NOISE_SEED), Noise::ON)?;
            let mut split = Split::fractions(d.n, d.train_fraction);
            split.test = d.n..n;
            let mut ds = IoDataset::new("narendra-li", u, tr.y, Some(tr.y_clean), seed, split)?;
            ds.meta.insert("input".into(), format!("uniform[{}, {}]", d.input_lo, d.input_hi));
            ds.meta.insert("measurement_std".into(), d.system.measurement_std.to_string());
            ds
        }
        BenchmarkConfig::Wh(d) => {
            let u: Vec<f64> = gen_swept_sine(d.n, d.sweep_f0, d.sweep_f1)?
                .into_iter()
                .map(|v| v * d.sweep_amplitude)
                .collect();
            let tr = d.system.simulate(&u, s(NOISE_SEED), Noise::ON)?;
            let ut: Vec<f64> = gen_multisine(d.test_len, d.test_band, d.test_tones, s(TEST_INPUT_SEED))?
                .into_iter()
                .map(|v| v * d.test_rms)
                .collect();
            let te = d.system.simulate(&ut, s(TEST_NOISE_SEED), Noise::ON)?;
            let mut split = Split::fractions(d.n, d.train_fraction);
            split.test = d.n..d.n + d.test_len;
            let mut ds = IoDataset::new(
                "wh",
                concat(&u, &ut),
                concat(&tr.y, &te.y),
                Some(concat(&tr.y_clean, &te.y_clean)),
                seed,
                split,
            )?;
            ds.meta.insert("input".into(), format!("swept-sine {}..{} x{}", d.sweep_f0, d.sweep_f1, d.sweep_amplitude));
            ds.meta.insert(
                "test_input".into(),
                format!("faded-multisine {:?} tones={} rms={}", d.test_band, d.test_tones, d.test_rms),
            );
            ds.meta.insert("process_std".into(), d.system.process_std.to_string());
            ds.meta.insert("measurement_std".into(), d.system.measurement_std.to_string());
            ds
        }
        BenchmarkConfig::Csv(c) => {
            let mut ds = load_csv_dataset(&c.path)?;
            for (slot, over) in [(&mut ds.split.train, c.train), (&mut ds.split.val, c.val), (&mut ds.split.test, c.test)] {
                if let Some((a, b)) = over {
                    *slot = a..b;
                }
            }
            ds.validate()?;
            ds
        }
    };
    ds.meta.insert("experiment".into(), cfg.name.clone());
    Ok(ds)
}

/// Scores one ensemble on the test steps in both modes and against every
/// available reference.
pub fn score_ensemble(experiment: &str, pairs: &[TrainedPair], data: &IoDataset) -> Result<(Vec<EvalReport>, Vec<(PredictMode, Prediction)>)> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::InvalidInput("ensemble of zero models".into()))?;
    let times = first.test_times(data);
    if times.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{experiment}: test range {:?} holds no steps past the first {} lags",
            data.split.test,
            first.model.spec.lags.max_lag()
        )));
    }
    let refs: &[Reference] = if data.y_clean.is_some() {
        &[Reference::Clean, Reference::Noisy]
    } else {
        &[Reference::Noisy]
    };
    let mut reports = Vec::new();
    let mut preds = Vec::new();
    for mode in [PredictMode::OneStep, PredictMode::FreeRun] {
        let p = ensemble_average(pairs, data, times.clone(), mode)?;
        for &r in refs {
            let y = &data.reference(r == Reference::Clean)[times.clone()];
            reports.push(EvalReport {
                experiment: experiment.to_owned(),
                model: first.model.spec.kind.as_str().to_owned(),
                rmse: rmse(y, &p.mean)?,
                nll: nll_metric(y, &p.mean, &p.var)?,
                architecture: first.model.spec.student.clone(),
                params_count: first.model.params_count(),
                mode,
                reference: r,
                seed: first.seed,
                residuals: y.iter().zip(&p.mean).map(|(a, b)| a - b).collect(),
            });
        }
        preds.push((mode, p));
    }
    Ok((reports, preds))
}

/// Summaries averaged over paired members, with the first pair's matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    /// Regenerative student against its own teacher.
    pub regenerative: f64,
    /// Baseline against the paired regenerative teacher.
    pub baseline: f64,
    pub regenerative_matrix: Array2<f64>,
    pub baseline_matrix: Array2<f64>,
}

/// Correlation summaries over validation representations; member `i` of each
/// ensemble is paired with member `i` of the other.
pub fn alignment(baseline: &[TrainedPair], regenerative: &[TrainedPair], data: &IoDataset) -> Result<Alignment> {
    let n = baseline.len().min(regenerative.len());
    if n == 0 {
        return Err(Error::InvalidInput("alignment needs at least one pair".into()));
    }
    let (mut rs, mut bs) = (0.0, 0.0);
    let mut mats = None;
    for i in 0..n {
        let (phi_s, phi_t) = validation_representations(&regenerative[i], data)?;
        let phi_t = phi_t.ok_or_else(|| Error::InvalidInput("regenerative model without teacher".into()))?;
        let (phi_b, _) = validation_representations(&baseline[i], data)?;
        let r = correlation_matrix(&phi_s, &phi_t)?;
        let b = correlation_matrix(&phi_b, &phi_t)?;
        rs += r.summary;
        bs += b.summary;
        if i == 0 {
            mats = Some((r.matrix, b.matrix));
        }
    }
    let (regenerative_matrix, baseline_matrix) = mats.expect("n > 0");
    Ok(Alignment {
        regenerative: rs / n as f64,
        baseline: bs / n as f64,
        regenerative_matrix,
        baseline_matrix,
    })
}

/// Everything one experiment produces.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub reports: Vec<EvalReport>,
    pub baseline: Vec<TrainedPair>,
    pub regenerative: Vec<TrainedPair>,
    pub predictions: Vec<(String, PredictMode, Prediction)>,
    pub alignment: Alignment,
}

impl Outcome {
    pub fn find(&self, model: &str, mode: PredictMode, reference: Reference) -> Option<&EvalReport> {
        self.reports
            .iter()
            .find(|r| r.model == model && r.mode == mode && r.reference == reference)
    }
}

/// Fits both ensembles on `data` and scores them.
pub fn run_experiment(cfg: &ExperimentConfig, data: &IoDataset, threads: usize) -> Result<Outcome> {
    cfg.validate()?;
    let train = cfg.train_config();
    let fit_scored = |spec: &ModelSpec| -> Result<(Vec<TrainedPair>, Vec<EvalReport>, Vec<(PredictMode, Prediction)>)> {
        let pairs = fit_ensemble(data, spec, &train, cfg.ensemble, threads)?;
        let (reports, preds) = score_ensemble(&cfg.name, &pairs, data)?;
        Ok((pairs, reports, preds))
    };
    let (baseline, mut reports, bp) = fit_scored(&cfg.baseline_spec())?;
    let (regenerative, rr, rp) = fit_scored(&cfg.regenerative_spec())?;
    reports.extend(rr);
    let alignment = alignment(&baseline, &regenerative, data)?;
    let predictions = bp
        .into_iter()
        .map(|(m, p)| ("baseline".to_owned(), m, p))
        .chain(rp.into_iter().map(|(m, p)| ("regenerative".to_owned(), m, p)))
        .collect();
    Ok(Outcome {
        reports,
        baseline,
        regenerative,
        predictions,
        alignment,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Per-epoch `epoch,train_loss,val_loss,val_nelbo,val_align`.
pub fn history_csv(pair: &TrainedPair) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let mut out = String::from("epoch,train_loss,val_loss,val_nelbo,val_align\n");
    for e in &pair.history.epochs {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch,
            e.train_loss,
            e.val_loss,
            opt(e.val_nelbo),
            opt(e.val_align)
        ));
    }
    out
}

/// Writes the run directory:
///
/// ```text
/// config.toml  dataset.csv(.meta)  report.csv  correlation.csv
/// corr_regenerative.csv  corr_baseline.csv
/// series_<model>_<mode>.csv  history_<model>_<i>.csv  checkpoints/<model>_<i>.ckpt
/// ```
pub fn write_outcome(out: &Path, cfg: &ExperimentConfig, data: &IoDataset, o: &Outcome) -> Result<()> {
    mkdir(out)?;
    write(&out.join("config.toml"), &cfg.to_toml()?)?;
    save_csv_dataset(data, &out.join("dataset.csv"))?;
    emit_report(&o.reports, &out.join("report.csv"))?;
    for (model, mode, p) in &o.predictions {
        let y = &data.reference(true)[p.range()];
        emit_series(&out.join(format!("series_{model}_{}.csv", mode.as_str())), p.start, y, &p.mean, &p.var)?;
    }
    let a = &o.alignment;
    write(
        &out.join("correlation.csv"),
        &format!(
            "pair,summary\nregenerative-vs-teacher,{}\nbaseline-vs-teacher,{}\n",
            a.regenerative, a.baseline
        ),
    )?;
    emit_matrix(&out.join("corr_regenerative.csv"), &a.regenerative_matrix)?;
    emit_matrix(&out.join("corr_baseline.csv"), &a.baseline_matrix)?;
    let ck = out.join("checkpoints");
    mkdir(&ck)?;
    for (name, pairs) in [("baseline", &o.baseline), ("regenerative", &o.regenerative)] {
        for (i, p) in pairs.iter().enumerate() {
            write(&out.join(format!("history_{name}_{i}.csv")), &history_csv(p))?;
            save_checkpoint(p, &ck.join(format!("{name}_{i}.ckpt")))?;
        }
    }
    Ok(())
}

/// Rows of the headline table: one-step predictions against the clean
/// reference where one exists, otherwise against the measured output.
pub fn table_rows(reports: &[EvalReport]) -> Vec<EvalReport> {
    reports
        .iter()
        .filter(|r| r.mode == PredictMode::OneStep)
        .filter(|r| {
            r.reference == Reference::Clean
                || !reports
                    .iter()
                    .any(|o| o.experiment == r.experiment && o.model == r.model && o.reference == Reference::Clean)
        })
        .cloned()
        .collect()
}

/// Runs the three presets under `out/<name>/` and writes `out/report.csv`
/// (every row) and `out/table.csv` (headline rows). `adjust` may edit each
/// preset before it runs.
pub fn reproduce(out: &Path, seed: u64, threads: usize, adjust: impl Fn(&mut ExperimentConfig)) -> Result<Vec<EvalReport>> {
    mkdir(out)?;
    let mut all = Vec::new();
    for name in ExperimentConfig::PRESETS {
        let mut cfg = ExperimentConfig::preset(name)?;
        cfg.seed = seed;
        adjust(&mut cfg);
        cfg.validate()?;
        let data = build_dataset(&cfg)?;
        let o = run_experiment(&cfg, &data, threads)?;
        write_outcome(&out.join(name), &cfg, &data, &o)?;
        all.extend(o.reports);
    }
    emit_report(&all, &out.join("report.csv"))?;
    emit_report(&table_rows(&all), &out.join("table.csv"))?;
    Ok(all)
}
