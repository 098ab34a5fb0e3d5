use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mfcvar::experiment::{preset_toml, Experiment, ExperimentConfig};
use mfcvar::models::{serve, Builtin};
use mfcvar::risk::{normal_quantile, Method};
use mfcvar::surrogate::FittedSurrogate;
use mfcvar::{Error, Result};

#[derive(Parser)]
#[command(name = "mfcvar", version, about = "CVaR estimation with DD-GPCE-Kriging surrogates")]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "MFCVAR_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded trials, the benchmark, and write report.json, table.csv and timings.json.
    Run {
        #[command(flatten)]
        source: Source,
        /// Override the configured method.
        #[arg(long)]
        method: Option<Method>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Fit the surrogate of trial 0 and write it as an artifact.
    Fit {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value = "surrogate.json")]
        out: PathBuf,
    },
    /// Predict mean, variance and confidence half-width at CSV points.
    Predict {
        #[arg(long)]
        artifact: PathBuf,
        /// CSV with header x1,...,xN; further columns are ignored.
        #[arg(long)]
        points: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a builtin model over the line protocol on stdin/stdout.
    Serve { model: Builtin },
    /// Print a preset configuration.
    Preset { name: String },
}

#[derive(Args)]
struct Source {
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
}

impl Source {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::from_toml(&fs::read_to_string(path)?)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => return Err(Error::Config("one of --config or --preset is required".into())),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(trials) = self.trials {
            config.trials = trials;
        }
        Ok(config)
    }
}

fn is_validation(e: &Error) -> bool {
    matches!(e, Error::Config(_) | Error::InvalidArgument(_) | Error::InvalidModel(_))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn run(source: &Source, method: Option<Method>, out: &Path) -> Result<()> {
    let mut config = source.load()?;
    if let Some(m) = method {
        config.method = m;
    }
    let exp = Experiment::new(config)?;
    let report = exp.run()?;
    fs::create_dir_all(out)?;
    write_file(&out.join("report.json"), &report.to_json()?)?;
    report.write_table(fs::File::create(out.join("table.csv"))?)?;
    write_file(&out.join("timings.json"), &serde_json::to_string_pretty(&report.timings())?)?;
    log::info!("{} {}: mean CVaR {}", report.label, report.method, report.mean_cvar);
    Ok(())
}

fn fit_artifact(source: &Source, out: &Path) -> Result<()> {
    let mut config = source.load()?;
    if config.method == Method::Mcs {
        config.method = Method::SurrogateMcs;
    }
    let (training, lf) = match (config.method, &config.mfis) {
        (Method::MfisHf, Some(m)) => (m.training_size, false),
        (Method::MfisLf, Some(m)) => (m.training_size, true),
        _ => (config.surrogate.training_size, false),
    };
    let exp = Experiment::new(config)?;
    let seed = exp.trial_seed(0);
    let surrogate = if lf {
        let spec = exp.config.low_fidelity.clone().ok_or_else(|| Error::Config("low_fidelity: required".into()))?;
        let model = mfcvar::models::ModelHandle::new(spec)?;
        exp.fit_surrogate(&model, training, seed)?.0
    } else {
        exp.fit_surrogate(exp.hf_model(), training, seed)?.0
    };
    write_file(out, &surrogate.to_artifact()?)
}

fn read_points(path: &Path, dim: usize) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let columns: Vec<usize> = (1..=dim)
        .map(|j| {
            let name = format!("x{j}");
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::InvalidArgument(format!("points file lacks column '{name}'")))
        })
        .collect::<Result<_>>()?;
    let mut points = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for &c in &columns {
            let v: f64 = record[c]
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("row {}: cannot parse '{}': {e}", row + 1, &record[c])))?;
            points.push(v);
        }
    }
    Ok(points)
}

fn predict(artifact: &Path, points: &Path, alpha: f64, out: Option<&Path>) -> Result<()> {
    let z = normal_quantile(alpha)?;
    let surrogate = FittedSurrogate::from_artifact(&fs::read_to_string(artifact)?)?;
    let xs = read_points(points, surrogate.training_data().dim())?;
    let predictions = surrogate.predict_many(&xs);
    let sink: Box<dyn Write> = match out {
        Some(path) => Box::new(fs::File::create(path)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(BufWriter::new(sink));
    w.write_record(["mean", "variance", "epsilon"])?;
    for p in predictions {
        w.write_record([p.mean.to_string(), p.variance.to_string(), (z * p.variance.sqrt()).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("threads: {e}")))?;
    }
    match &cli.command {
        Command::Run { source, method, out } => run(source, *method, out),
        Command::Fit { source, out } => fit_artifact(source, out),
        Command::Predict { artifact, points, alpha, out } => predict(artifact, points, *alpha, out.as_deref()),
        Command::Serve { model } => serve(*model, io::stdin().lock(), io::stdout().lock()),
        Command::Preset { name } => {
            print!("{}", preset_toml(name)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if is_validation(&e) { 2 } else { 1 };
            let kind = format!("{e:?}").split(['(', ' ', '{']).next().unwrap_or("Error").to_string();
            eprintln!("{}", json!({ "error": kind, "message": e.to_string() }));
            ExitCode::from(code)
        }
    }
}
