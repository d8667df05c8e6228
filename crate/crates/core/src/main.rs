use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use dp_ipw::dataset::{Dataset, OutcomeBounds, PrivacyBudget};
use dp_ipw::estimators::{estimate_with_weights, fully_private_estimate, Estimand, Stage, DEFAULT_TRIM};
use dp_ipw::harness::{emit, run_sweep, EmitFormat, ExperimentConfig};
use dp_ipw::ingest::{load_csv, normalize_unit_ball, CsvSchema};
use dp_ipw::privacy::privatize_weights;
use dp_ipw::propensity::{train, PropensityModel};
use dp_ipw::rng::{Purpose, RngStream};
use dp_ipw::synth::{generate, SynthConfig};
use dp_ipw::theory::{
    bias_g_with_sigma, eta_deterministic, eta_deterministic_exp, eta_probabilistic, sensitivity_tau, TheoryInputs,
    TheoryReport,
};
use dp_ipw::{EffectEstimate, Error};

#[derive(Parser)]
#[command(name = "dp-ipw", version, about = "Differentially private IPW treatment-effect estimation")]
struct Cli {
    /// Experiment config (TOML, or JSON by extension). Its fields act as
    /// defaults for every subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    max_iters: Option<usize>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (data.csv plus data.json sidecar).
    Synth(SynthArgs),
    /// Fit the propensity model on a dataset (model.json).
    Fit(DataArgs),
    /// Perturb a fitted model's weights (released_model.json).
    Privatize(ModelArgs),
    /// Estimate the effect from a dataset and model weights (estimate.json).
    Estimate(EstimateArgs),
    /// Evaluate the bias and sign-flip bounds (theory.json).
    Bound(BoundArgs),
    /// Run the Monte-Carlo sweep (report.json, summary.csv).
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    d: usize,
    #[arg(long, default_value_t = 2000)]
    n_units: usize,
    #[arg(long, default_value_t = 2.0)]
    tau: f64,
    #[arg(long, default_value_t = 9.0)]
    cov_scale: f64,
    #[arg(long, default_value_t = 0.01)]
    noise_var: f64,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "t")]
    treatment_column: String,
    #[arg(long, default_value = "y")]
    outcome_column: String,
    /// Scale covariates into the unit ball by the largest row norm.
    #[arg(long)]
    normalize: bool,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model or released-model JSON; only its weights are used.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    estimand: Option<Estimand>,
    #[arg(long)]
    trim: Option<f64>,
    /// Also add output noise to the estimate (needs --epsilon).
    #[arg(long)]
    private: bool,
    #[arg(long)]
    c_y: Option<f64>,
}

#[derive(Args)]
struct BoundArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Non-private fitted model JSON.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    estimand: Option<Estimand>,
    #[arg(long)]
    trim: Option<f64>,
    #[arg(long)]
    c_y: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_enum, default_value = "both")]
    format: FormatArg,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Both,
}

/// Anything with a weight vector: a fitted or a released model.
#[derive(Deserialize)]
struct WeightsFile {
    weights: Vec<f64>,
}

struct Failure {
    stage: &'static str,
    error: Error,
}

trait AtStage<T> {
    fn at(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T> AtStage<T> for dp_ipw::Result<T> {
    fn at(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|error| Failure { stage, error })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error [{}]: {}", f.stage, f.error);
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::from_path(p).at("config")?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(l) = cli.lambda {
        config.lambda = l;
    }
    if let Some(lr) = cli.lr {
        config.train.learning_rate = lr;
    }
    if let Some(t) = cli.tol {
        config.train.tol = t;
    }
    if let Some(k) = cli.max_iters {
        config.train.max_iters = k;
    }
    if let Some(d) = cli.delta {
        config.delta = d;
    }
    Ok(config)
}

fn budget(cli: &Cli, config: &ExperimentConfig) -> Result<PrivacyBudget, Failure> {
    let eps = cli.epsilon.ok_or(Failure {
        stage: "args",
        error: Error::Config("--epsilon is required".into()),
    })?;
    PrivacyBudget::new(eps, config.delta).at("args")
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> dp_ipw::Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> dp_ipw::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::io(path, e))
}

fn load_data(args: &DataArgs) -> dp_ipw::Result<Dataset> {
    let mut rdr = csv::Reader::from_path(&args.data).map_err(|e| Error::io(&args.data, e))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::io(&args.data, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let schema = CsvSchema::infer(&headers, &args.treatment_column, &args.outcome_column, None)?;
    let table = load_csv(&args.data, &schema)?;
    if args.normalize {
        Ok(normalize_unit_ball(&table)?.0)
    } else {
        Dataset::new(table.covariates, table.treatments, table.outcomes.into())
    }
}

fn write_dataset_csv(path: &Path, data: &Dataset) -> dp_ipw::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e))?;
    let mut header = vec!["t".to_string(), "y".to_string()];
    header.extend((1..=data.dim()).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(|e| Error::io(path, e))?;
    for i in 0..data.n_rows() {
        let mut rec = vec![data.treatments()[i].to_string(), format!("{:e}", data.outcomes()[i])];
        rec.extend(data.row(i).iter().map(|v| format!("{v:e}")));
        w.write_record(&rec).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn estimator_bound(estimand: Estimand, trim: Option<f64>) -> Option<f64> {
    trim.map(|xi| match estimand {
        Estimand::Ate => xi,
        _ => (1.0 - xi) / xi,
    })
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, Failure> {
    let config = load_config(&cli)?;
    let out = cli.out_dir.clone();
    match &cli.command {
        Command::Synth(a) => {
            let synth = SynthConfig {
                d: a.d,
                n_units: a.n_units,
                tau_true: a.tau,
                cov_scale: a.cov_scale,
                noise_var: a.noise_var,
            };
            let mut stream = RngStream::for_trial(config.seed, 0, Purpose::Data);
            let sample = generate(&synth, &mut stream).at("generate")?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e)).at("write")?;
            let csv_path = out.join("data.csv");
            write_dataset_csv(&csv_path, &sample.data).at("write")?;
            #[derive(Serialize)]
            struct Sidecar<'a> {
                tau_true: f64,
                seed: u64,
                config: &'a SynthConfig,
                coefficients: &'a dp_ipw::synth::SynthCoefficients,
                scale_factor: f64,
            }
            let side = write_json(
                &out,
                "data.json",
                &Sidecar {
                    tau_true: sample.tau_true,
                    seed: config.seed,
                    config: &synth,
                    coefficients: &sample.coefficients,
                    scale_factor: sample.scale_factor,
                },
            )
            .at("write")?;
            Ok(vec![csv_path, side])
        }
        Command::Fit(a) => {
            let data = load_data(a).at("load")?;
            let model = train(&data, config.lambda, &config.train).at("train")?;
            Ok(vec![write_json(&out, "model.json", &model).at("write")?])
        }
        Command::Privatize(a) => {
            let model: PropensityModel = read_json(&a.model).at("load")?;
            let b = budget(&cli, &config)?;
            let mut stream = RngStream::for_trial(config.seed, 0, Purpose::WeightNoise);
            let pm = privatize_weights(&model, b, &mut stream).at("privatize")?;
            Ok(vec![write_json(&out, "released_model.json", &pm.release()).at("write")?])
        }
        Command::Estimate(a) => {
            let data = load_data(&a.data).at("load")?;
            let w: WeightsFile = read_json(&a.model).at("load")?;
            let estimand = a.estimand.unwrap_or(config.estimand);
            let trim = a.trim.or(config.trim_xi);
            let est = estimate_with_weights(estimand, &data, &w.weights, estimator_bound(estimand, trim)).at("estimate")?;
            let est = if a.private {
                let b = budget(&cli, &config)?;
                let c_y = a.c_y.or(config.c_y).unwrap_or_else(|| data.max_abs_outcome());
                let bounds = OutcomeBounds::for_trim(c_y, trim.unwrap_or(DEFAULT_TRIM)).at("args")?;
                let mut stream = RngStream::for_trial(config.seed, 0, Purpose::ScalarNoise);
                let staged = EffectEstimate {
                    stage: Stage::DpWrtDm,
                    ..est
                };
                fully_private_estimate(&staged, &bounds, b, &mut stream).at("privatize")?
            } else {
                est
            };
            Ok(vec![write_json(&out, "estimate.json", &est).at("write")?])
        }
        Command::Bound(a) => {
            let data = load_data(&a.data).at("load")?;
            let model: PropensityModel = read_json(&a.model).at("load")?;
            let b = budget(&cli, &config)?;
            let estimand = a.estimand.unwrap_or(config.estimand);
            let trim = a.trim.or(config.trim_xi);
            let bound = estimator_bound(estimand, trim);
            let c_y = a.c_y.or(config.c_y).unwrap_or_else(|| data.max_abs_outcome());
            let bounds = OutcomeBounds::for_trim(c_y, trim.unwrap_or(DEFAULT_TRIM)).at("args")?;

            let tau_hat = estimate_with_weights(estimand, &data, &model.weights, bound).at("estimate")?;
            let mut stream = RngStream::for_trial(config.seed, 0, Purpose::WeightNoise);
            let pm = privatize_weights(&model, b, &mut stream).at("privatize")?;
            let tau_n = dp_ipw::estimators::partially_private(estimand, &data, &pm, bound).at("estimate")?;
            let mut stream = RngStream::for_trial(config.seed, 0, Purpose::ScalarNoise);
            let tau_n_eps = fully_private_estimate(&tau_n, &bounds, b, &mut stream).at("privatize")?;

            let sigma = pm.mechanism.sigma;
            let report = (|| {
                let g = bias_g_with_sigma(estimand, &data, &model.weights, sigma, config.sign_convention)?;
                let eta = match (trim, estimand) {
                    (Some(xi), Estimand::Ate) => eta_deterministic(&bounds, xi)?,
                    (Some(_), _) => eta_deterministic_exp(c_y, bounds.xi_exp)?,
                    (None, e) => eta_probabilistic(e, &data, &model.weights, sigma, a.gamma.unwrap_or(config.gamma))?,
                };
                TheoryReport::evaluate(TheoryInputs {
                    g,
                    eta,
                    tau_hat: tau_hat.value,
                    tau_n: tau_n.value,
                    sensitivity_tau: sensitivity_tau(&bounds, data.n_rows(), estimand)?,
                    sigma_n: tau_n_eps.sigma_n.unwrap_or(0.0),
                    markov_thresholds: &config.markov_thresholds,
                })
            })()
            .at("theory")?;
            Ok(vec![write_json(&out, "theory.json", &report).at("write")?])
        }
        Command::Experiment(a) => {
            let mut config = config;
            if let Some(t) = a.trials {
                config.trials = t;
            }
            if let Some(e) = cli.epsilon {
                config.epsilon_grid = vec![e];
            }
            let report = run_sweep(&config).at("experiment")?;
            let format = match a.format {
                FormatArg::Csv => EmitFormat::Csv,
                FormatArg::Json => EmitFormat::Json,
                FormatArg::Both => EmitFormat::Both,
            };
            emit(&report, format, &out).at("emit")
        }
    }
}
