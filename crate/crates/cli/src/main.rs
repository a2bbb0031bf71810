//! `tsid`: batch driver for teacher-student system identification runs.
//!
//! Failures print one JSON line `{"error": <kind>, "message": <text>}` on
//! stderr and exit nonzero (2 for usage errors, 1 otherwise).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use tsid_core::benchmarks::{load_csv_dataset, save_csv_dataset, IoDataset};
use tsid_core::config::{BenchmarkConfig, ExperimentConfig};
use tsid_core::experiment::{alignment, build_dataset, history_csv, reproduce, score_ensemble};
use tsid_core::metrics::{correlation_matrix, emit_matrix, emit_report, emit_series, format_tuple};
use tsid_core::trainer::{fit_ensemble, grid_search, load_checkpoint, save_checkpoint, validation_representations, ModelKind, TrainedPair};
use tsid_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "tsid", version, about = "Teacher-student system identification experiments")]
struct Cli {
    /// Experiment config: a TOML file or a preset name (lgssm, narendra-li, wh).
    #[arg(long, global = true)]
    config: Option<String>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for ensemble members and grid candidates; results do
    /// not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the configured dataset: dataset.csv, dataset.csv.meta, config.toml.
    Simulate,
    /// Fit ensembles: checkpoints/<model>_<i>.ckpt, history_<model>_<i>.csv, config.toml, and dataset.csv when simulated. dataset.csv when simulated.
    Train(TrainArgs),
    /// Score checkpoints on the test split: report.csv and series_<model>_<mode>.csv.
    Evaluate(EvalArgs),
    /// Representation correlations: correlation.csv and corr_*.csv matrices.
    Analyze(AnalyzeArgs),
    /// Short-budget grid search over uniform-width stacks: grid.csv.
    Gridsearch(GridArgs),
    /// All three presets end to end: <out>/<preset>/..., report.csv, table.csv.
    Reproduce(ReproduceArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Which {
    Baseline,
    Regenerative,
    Both,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Existing dataset CSV; generated from the config when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Which::Both)]
    model: Which,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// One or more checkpoints; identical architectures form an ensemble.
    #[arg(long, required = true, num_args = 1..)]
    checkpoint: Vec<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Regenerative checkpoints.
    #[arg(long, required = true, num_args = 1..)]
    checkpoint: Vec<PathBuf>,
    /// Baseline checkpoints, paired in order with the regenerative ones.
    #[arg(long, num_args = 1..)]
    baseline: Vec<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Which::Regenerative)]
    model: Which,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    /// Caps training epochs (smoke runs).
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Overrides the ensemble size.
    #[arg(long)]
    ensemble: Option<usize>,
    /// Caps generated training samples per benchmark (smoke runs).
    #[arg(long)]
    samples: Option<usize>,
}

fn help_text() -> String {
    format!(
        "Config keys with their defaults, per preset:\n\n{}\n\
         A [benchmark] table with kind = \"csv\" takes path and optional train/val/test = [start, end].",
        ExperimentConfig::documented_defaults()
    )
}

fn main() -> ExitCode {
    let matches = match Cli::command().after_long_help(help_text()).try_get_matches() {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", &e.to_string());
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            report_error("usage", &e.to_string());
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}

fn report_error(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message.trim() });
    eprintln!("{line}");
}

fn run(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    match &cli.command {
        Command::Simulate => simulate(cli),
        Command::Train(a) => train(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Analyze(a) => analyze(cli, a),
        Command::Gridsearch(a) => gridsearch(cli, a),
        Command::Reproduce(a) => cmd_reproduce(cli, a),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let name = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --config <file or preset>".into()))?;
    let path = Path::new(name);
    let mut cfg = if path.exists() {
        ExperimentConfig::load(path)?
    } else if ExperimentConfig::PRESETS.contains(&name) {
        ExperimentConfig::preset(name)?
    } else {
        return Err(Error::Config(format!("{name}: no such config file or preset")));
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    fs::create_dir_all(&cli.out).map_err(|e| Error::Io {
        path: cli.out.clone(),
        source: e,
    })?;
    Ok(&cli.out)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

fn dataset(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<IoDataset> {
    match path {
        Some(p) => load_csv_dataset(p),
        None => build_dataset(cfg),
    }
}

fn simulate(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    if matches!(cfg.benchmark, BenchmarkConfig::Csv(_)) {
        return Err(Error::Config("benchmark.kind = \"csv\" has nothing to simulate".into()));
    }
    let out = out_dir(cli)?;
    let data = build_dataset(&cfg)?;
    save_csv_dataset(&data, &out.join("dataset.csv"))?;
    write(&out.join("config.toml"), &cfg.to_toml()?)?;
    println!("wrote {} samples to {}", data.len(), out.join("dataset.csv").display());
    Ok(())
}

fn kinds(which: Which) -> &'static [ModelKind] {
    match which {
        Which::Baseline => &[ModelKind::Baseline],
        Which::Regenerative => &[ModelKind::Regenerative],
        Which::Both => &[ModelKind::Baseline, ModelKind::Regenerative],
    }
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let cfg = load_config(cli)?;
    let data = dataset(&cfg, a.dataset.as_deref())?;
    let out = out_dir(cli)?;
    write(&out.join("config.toml"), &cfg.to_toml()?)?;
    if a.dataset.is_none() {
        // Keep the simulated data so evaluate and analyze can reuse it.
        save_csv_dataset(&data, &out.join("dataset.csv"))?;
    }
    let ck = out.join("checkpoints");
    fs::create_dir_all(&ck).map_err(|e| Error::Io {
        path: ck.clone(),
        source: e,
    })?;
    for &kind in kinds(a.model) {
        let spec = match kind {
            ModelKind::Baseline => cfg.baseline_spec(),
            ModelKind::Regenerative => cfg.regenerative_spec(),
        };
        let pairs = fit_ensemble(&data, &spec, &cfg.train_config(), cfg.ensemble, cli.threads)?;
        for (i, p) in pairs.iter().enumerate() {
            let name = format!("{}_{i}", kind.as_str());
            save_checkpoint(p, &ck.join(format!("{name}.ckpt")))?;
            write(&out.join(format!("history_{name}.csv")), &history_csv(p))?;
            let best = p.history.best();
            println!(
                "{name}: {} epochs, best epoch {}, val loss {}",
                p.history.epochs.len(),
                p.history.best_epoch,
                best.map_or(f64::NAN, |b| b.val_loss)
            );
        }
    }
    Ok(())
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<TrainedPair>> {
    paths.iter().map(|p| load_checkpoint(p)).collect()
}

fn experiment_name(data: &IoDataset) -> String {
    data.meta.get("experiment").cloned().unwrap_or_else(|| data.name.clone())
}

fn evaluate(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let data = load_csv_dataset(&a.dataset)?;
    let pairs = load_all(&a.checkpoint)?;
    let mut groups: Vec<Vec<TrainedPair>> = Vec::new();
    for p in pairs {
        match groups.iter_mut().find(|g| g[0].model.spec == p.model.spec) {
            Some(g) => g.push(p),
            None => groups.push(vec![p]),
        }
    }
    let out = out_dir(cli)?;
    let name = experiment_name(&data);
    let mut reports = Vec::new();
    for g in &groups {
        let (r, preds) = score_ensemble(&name, g, &data)?;
        let kind = g[0].model.spec.kind.as_str();
        for (mode, p) in preds {
            let y = &data.reference(true)[p.range()];
            emit_series(&out.join(format!("series_{kind}_{}.csv", mode.as_str())), p.start, y, &p.mean, &p.var)?;
        }
        reports.extend(r);
    }
    emit_report(&reports, &out.join("report.csv"))?;
    for r in &reports {
        println!(
            "{} {} {} {}: rmse {} nll {}",
            r.model,
            format_tuple(&r.architecture),
            r.mode.as_str(),
            r.reference.as_str(),
            r.rmse,
            r.nll
        );
    }
    Ok(())
}

fn analyze(cli: &Cli, a: &AnalyzeArgs) -> Result<()> {
    let data = load_csv_dataset(&a.dataset)?;
    let regen = load_all(&a.checkpoint)?;
    if let Some(p) = regen.iter().find(|p| p.model.teacher.is_none()) {
        return Err(Error::InvalidInput(format!(
            "--checkpoint expects regenerative models, got a {} model",
            p.model.spec.kind.as_str()
        )));
    }
    let out = out_dir(cli)?;
    let mut summary = String::from("pair,summary\n");
    if a.baseline.is_empty() {
        let mut total = 0.0;
        for (i, p) in regen.iter().enumerate() {
            let (s, t) = validation_representations(p, &data)?;
            let c = correlation_matrix(&s, &t.expect("checked above"))?;
            if i == 0 {
                emit_matrix(&out.join("corr_regenerative.csv"), &c.matrix)?;
            }
            total += c.summary;
        }
        summary.push_str(&format!("regenerative-vs-teacher,{}\n", total / regen.len() as f64));
    } else {
        let base = load_all(&a.baseline)?;
        let al = alignment(&base, &regen, &data)?;
        emit_matrix(&out.join("corr_regenerative.csv"), &al.regenerative_matrix)?;
        emit_matrix(&out.join("corr_baseline.csv"), &al.baseline_matrix)?;
        summary.push_str(&format!(
            "regenerative-vs-teacher,{}\nbaseline-vs-teacher,{}\n",
            al.regenerative, al.baseline
        ));
    }
    write(&out.join("correlation.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn gridsearch(cli: &Cli, a: &GridArgs) -> Result<()> {
    let cfg = load_config(cli)?;
    let data = dataset(&cfg, a.dataset.as_deref())?;
    let out = out_dir(cli)?;
    let mut text = String::from("rank,model,architecture,teacher,params_count,criterion,score\n");
    for &kind in kinds(a.model) {
        let base = match kind {
            ModelKind::Baseline => cfg.baseline_spec(),
            ModelKind::Regenerative => cfg.regenerative_spec(),
        };
        let ranked = grid_search(&data, &base, &cfg.grid, &cfg.train_config(), cli.threads)?;
        for (i, e) in ranked.iter().enumerate() {
            text.push_str(&format!(
                "{},{},\"{}\",\"{}\",{},{},{}\n",
                i + 1,
                kind.as_str(),
                format_tuple(&e.spec.student),
                e.spec.teacher.as_deref().map(format_tuple).unwrap_or_default(),
                e.params_count,
                e.criterion,
                e.score
            ));
        }
    }
    write(&out.join("grid.csv"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_reproduce(cli: &Cli, a: &ReproduceArgs) -> Result<()> {
    if cli.config.is_some() {
        return Err(Error::Config("reproduce runs the built-in presets and takes no --config".into()));
    }
    let out = out_dir(cli)?;
    let seed = cli.seed.unwrap_or(1);
    let reports = reproduce(out, seed, cli.threads, |cfg| {
        if let Some(m) = a.max_epochs {
            cfg.train.max_epochs = m;
        }
        if let Some(e) = a.ensemble {
            cfg.ensemble = e;
        }
        if let Some(n) = a.samples {
            match &mut cfg.benchmark {
                BenchmarkConfig::Lgssm(d) => d.n = d.n.min(n),
                BenchmarkConfig::NarendraLi(d) => d.n = d.n.min(n),
                BenchmarkConfig::Wh(d) => d.n = d.n.min(n),
                BenchmarkConfig::Csv(_) => {}
            }
        }
    })?;
    for r in tsid_core::experiment::table_rows(&reports) {
        println!("{} {} {}: rmse {} nll {}", r.experiment, r.model, format_tuple(&r.architecture), r.rmse, r.nll);
    }
    Ok(())
}
