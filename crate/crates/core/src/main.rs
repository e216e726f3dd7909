//! Command-line front end: train, predict, synthesize, certify, simulate, eval, report.
//!
//! Exit codes: 0 on success, 1 on invalid input (usage, configuration, schema, arity),
//! 2 on runtime failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use lmnctl::experiment::{
    certify_variant, combined_verdict, evaluate_tracking, experiment_reference, run_experiment,
    train_variant, training_data, ExperimentConfig, TrainedVariant,
};
use lmnctl::io::{
    config_hash, load_dataset, save_dataset, write_columns, ModelStore, TrainingMetadata,
};
use lmnctl::narx::{rmse, TimeSeriesDataset};
use lmnctl::stability::LmiOptions;
use lmnctl::{Error, Result};

#[derive(Parser)]
#[command(
    name = "lmnctl",
    version,
    about = "Local model network identification and feedforward control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (JSON); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the configured output root).
    #[arg(long, env = "LMNCTL_OUT")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Train one controller variant and write its model store.
    Train {
        #[command(flatten)]
        common: Common,
        /// Variant name from the configuration (the first one when omitted).
        #[arg(long)]
        variant: Option<String>,
        /// Training dataset (CSV); simulated from the configured plant when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Free-run prediction of a dataset.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Synthesize the feedforward controller of a stored model and describe it.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Stability certificate of the controller of a stored model.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Write the certificate into the model store.
        #[arg(long)]
        attach: bool,
    },
    /// Excite the configured plant and write the dataset.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of samples (defaults to the configured excitation duration).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Prediction error of a stored model on a dataset, and tracking error on the
    /// configured plant when a configuration is given.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the full experiment and write the report directory.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    Ok(cfg.output_dir.clone())
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    // a closed pipe on the reader side is not a failure of the command
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

fn write_series(
    path: &Path,
    format: Format,
    start: usize,
    period: f64,
    names: &[String],
    cols: &[Vec<f64>],
) -> Result<()> {
    match format {
        Format::Csv => {
            let len = cols.first().map_or(0, Vec::len);
            let t: Vec<f64> = (0..len).map(|k| (start + k) as f64 * period).collect();
            let mut header = vec!["t".to_string()];
            header.extend_from_slice(names);
            let refs: Vec<&Vec<f64>> = cols.iter().collect();
            write_columns(std::fs::File::create(path)?, &header, &t, &refs)
        }
        Format::Json => {
            let map: serde_json::Map<_, _> = names
                .iter()
                .cloned()
                .zip(cols.iter().map(|c| json!(c)))
                .collect();
            std::fs::write(
                path,
                serde_json::to_string_pretty(
                    &json!({"start": start, "sample_period": period, "series": map}),
                )?,
            )?;
            Ok(())
        }
    }
}

fn train(common: &Common, variant: Option<&str>, data: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let v = match variant {
        Some(name) => cfg
            .variants
            .iter()
            .find(|v| v.name == name)
            .ok_or_else(|| Error::Config(format!("no variant named {name}")))?,
        None => &cfg.variants[0],
    };
    let dataset = match data {
        Some(p) => load_dataset(p, None)?,
        None => training_data(&cfg)?,
    };
    let trained = train_variant(v, &dataset)?;
    let store = ModelStore::new(
        v.kind,
        trained.models(),
        TrainingMetadata {
            seed: cfg.seed,
            config_hash: config_hash(&cfg)?,
            error_history: trained.error_history.clone(),
        },
    );
    let dir = out_dir(&cfg)?;
    let path = dir.join(format!("model_{}.json", v.name));
    store.save(&path)?;
    print(&json!({
        "model": path,
        "hash": store.hash()?,
        "num_models": trained.models().iter().map(|m| m.net.num_models()).collect::<Vec<_>>(),
        "training_rmse": trained.prediction_rmse(&dataset)?,
    }))
}

fn predict(common: &Common, model: &Path, data: &Path) -> Result<()> {
    let store = ModelStore::load(model)?;
    let trained = TrainedVariant::from_store(&store);
    let dataset = load_dataset(data, None)?;
    let (h, preds) = trained.predictions(&dataset)?;
    let errors: Vec<f64> = preds
        .iter()
        .zip(&dataset.outputs)
        .map(|(p, y)| rmse(p, &y[h..h + p.len()]))
        .collect::<Result<_>>()?;
    let names: Vec<String> = (1..=preds.len()).map(|j| format!("y{j}")).collect();
    let ext = if common.format == Format::Csv {
        "csv"
    } else {
        "json"
    };
    let cfg_out = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&cfg_out)?;
    let path = cfg_out.join(format!("prediction.{ext}"));
    write_series(
        &path,
        common.format,
        h,
        dataset.sample_period,
        &names,
        &preds,
    )?;
    print(&json!({"predictions": path, "first_sample": h, "rmse": errors}))
}

fn synthesize_cmd(model: &Path) -> Result<()> {
    let store = ModelStore::load(model)?;
    let trained = TrainedVariant::from_store(&store);
    let ctrls = trained.controllers()?;
    let described: Vec<_> = ctrls
        .iter()
        .map(|c| {
            json!({
                "kind": format!("{:?}", c.kind()),
                "relative_degree": c.delta(),
                "reference_shift": c.shift().samples(),
                "state_dimension": c.state_space().dim(),
                "inputs": c.state_space().num_inputs(),
                "disturbances": c.state_space().num_disturbances(),
                "outputs": c.state_space().num_outputs(),
            })
        })
        .collect();
    print(&json!({ "controllers": described }))
}

fn certify_cmd(common: &Common, model: &Path, attach: bool) -> Result<()> {
    let lmi = match &common.config {
        Some(_) => load_config(common)?.lmi,
        None => LmiOptions::default(),
    };
    let mut store = ModelStore::load(model)?;
    let trained = TrainedVariant::from_store(&store);
    let certs = certify_variant(&trained, &lmi)?;
    let verdict = combined_verdict(&certs);
    if attach {
        store.certificate = certs.iter().find_map(|c| c.report.clone());
        store.save(model)?;
    }
    print(&json!({ "verdict": verdict, "systems": certs }))
}

fn simulate(common: &Common, samples: Option<usize>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(n) = samples {
        cfg.excitation.duration = n;
    }
    let ds = training_data(&cfg)?;
    let dir = out_dir(&cfg)?;
    let path = match common.format {
        Format::Csv => {
            let p = dir.join("dataset.csv");
            save_dataset(&p, &ds)?;
            p
        }
        Format::Json => {
            let p = dir.join("dataset.json");
            std::fs::write(&p, serde_json::to_string(&ds)?)?;
            p
        }
    };
    print(&json!({"dataset": path, "samples": ds.len()}))
}

fn eval(common: &Common, model: &Path, data: Option<&Path>) -> Result<()> {
    let store = ModelStore::load(model)?;
    let trained = TrainedVariant::from_store(&store);
    let mut report = serde_json::Map::new();
    if let Some(p) = data {
        let dataset: TimeSeriesDataset = load_dataset(p, None)?;
        report.insert(
            "prediction_rmse".into(),
            json!(trained.prediction_rmse(&dataset)?),
        );
    }
    if common.config.is_some() {
        let cfg = load_config(common)?;
        let reference = experiment_reference(&cfg)?;
        let mut ctrls = trained.controllers()?;
        let (summary, _) = evaluate_tracking(&cfg, &mut ctrls, &reference)?;
        report.insert("tracking".into(), json!(summary));
    }
    if report.is_empty() {
        return Err(Error::Config("eval needs --data and/or --config".into()));
    }
    print(&report)
}

fn report(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = run_experiment(&cfg, &cfg.output_dir)?;
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json"))?)?;
    let summary: Vec<_> = metrics["variants"]
        .as_array()
        .map(|vs| {
            vs.iter()
                .map(|v| {
                    json!({
                        "name": v["name"],
                        "prediction_rmse": v["prediction_rmse"],
                        "tracking_rmse": v["tracking"]["mean"],
                        "tracking_std": v["tracking"]["std"],
                        "verdict": v["verdict"],
                        "failures": v["failures"],
                    })
                })
                .collect()
        })
        .unwrap_or_default();
    print(&json!({"report": dir, "variants": summary}))
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train {
            common,
            variant,
            data,
        } => train(common, variant.as_deref(), data.as_deref()),
        Command::Predict {
            common,
            model,
            data,
        } => predict(common, model, data),
        Command::Synthesize { model, .. } => synthesize_cmd(model),
        Command::Certify {
            common,
            model,
            attach,
        } => certify_cmd(common, model, *attach),
        Command::Simulate { common, samples } => simulate(common, *samples),
        Command::Eval {
            common,
            model,
            data,
        } => eval(common, model, data.as_deref()),
        Command::Report { common } => report(common),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
