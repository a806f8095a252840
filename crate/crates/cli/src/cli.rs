//! Command-line entry: argument parsing, dispatch and exit codes.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use robust_lspi::{policy_iteration, robust_value_iteration, RmdpDocument, TabularRmdp};
use serde::Serialize;

use crate::config::{ExperimentConfig, Sweep};
use crate::error::{CliError, CliResult};
use crate::experiment::{self, read_weights, RepSummary, TrainedPolicy};

#[derive(Debug, Parser)]
#[command(name = "robust-lspi", version, about = "Robust least-squares policy iteration experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Base seed; replication i uses seed + i.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of replications.
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true, env = "ROBUST_LSPI_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and evaluate as configured.
    Run { config: PathBuf },
    /// Like `run` with the sweep replaced.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        knob: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Check a config and print it with defaults filled in.
    Validate { config: PathBuf },
    /// Exact robust value and policy iteration on a tabular model (or a
    /// chain experiment config).
    Oracle { model: PathBuf },
    /// Score saved weights on an environment.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        /// Experiment config providing the environment, features and metric.
        #[arg(long)]
        env: PathBuf,
        /// Iteration to load; defaults to the deployed one recorded in a
        /// neighbouring summary.json, else the last.
        #[arg(long)]
        iteration: Option<usize>,
        /// Perturb this knob before evaluating.
        #[arg(long, requires = "value")]
        knob: Option<String>,
        #[arg(long, requires = "knob")]
        value: Option<f64>,
    },
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(&cli, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command, writing human output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Run { config } => run_experiment(load(config, g, None)?, g, out),
        Command::Sweep { config, knob, values } => {
            let sweep = Sweep {
                knob: knob.clone(),
                values: values.clone(),
            };
            run_experiment(load(config, g, Some(sweep))?, g, out)
        }
        Command::Validate { config } => {
            let c = load(config, g, None)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&c)?).map_err(stdout_err)?;
            Ok(())
        }
        Command::Oracle { model } => oracle(model, out),
        Command::Eval {
            weights,
            env,
            iteration,
            knob,
            value,
        } => eval(weights, env, *iteration, knob.as_deref().zip(*value), g, out),
    }
}

fn stdout_err(e: std::io::Error) -> CliError {
    CliError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

fn load(path: &Path, g: &GlobalArgs, sweep: Option<Sweep>) -> CliResult<ExperimentConfig> {
    let mut c = ExperimentConfig::load(path)?;
    if let Some(seed) = g.seed {
        c.seed = seed;
    }
    if let Some(reps) = g.reps {
        c.replications = reps;
    }
    if let Some(dir) = &g.out_dir {
        c.output = Some(dir.clone());
    }
    if sweep.is_some() {
        c.sweep = sweep;
    }
    c.resolve().map_err(|e| match e {
        CliError::InvalidConfig { message, .. } => CliError::InvalidConfig {
            origin: path.display().to_string(),
            message,
        },
        CliError::Core(robust_lspi::Error::Config(message)) => CliError::InvalidConfig {
            origin: path.display().to_string(),
            message,
        },
        other => other,
    })
}

fn pool(g: &GlobalArgs) -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(CliError::InvalidConfig {
                origin: "--threads".into(),
                message: "thread count must be >= 1".into(),
            });
        }
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| CliError::Unsupported(format!("cannot start the thread pool: {e}")))
}

fn run_experiment(config: ExperimentConfig, g: &GlobalArgs, out: &mut dyn Write) -> CliResult<()> {
    let dir = config.output_dir();
    fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    let log_path = dir.join("run.log");
    let mut log = fs::File::create(&log_path).map_err(CliError::io(&log_path))?;
    let mut note = |line: String| -> CliResult<()> {
        writeln!(log, "{line}").map_err(CliError::io(&log_path))
    };
    note(format!(
        "algorithm {:?}, {} replications from seed {}, {} sweep cells",
        config.algorithm,
        config.replications,
        config.seed,
        config.sweep_cells().len()
    ))?;
    let result = pool(g).and_then(|p| experiment::run_sweep(&config, &p));
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            note(format!("failed: {e}"))?;
            return Err(e);
        }
    };
    for rep in &result.reps {
        note(format!(
            "rep {} seed {}: final metric {} deployed iteration {:?} best iteration {:?}",
            rep.rep,
            rep.seed,
            experiment::fmt_f64(rep.final_metric),
            rep.deployed_iteration,
            rep.best_iteration
        ))?;
    }
    experiment::write_outputs(&dir, &config, &result)?;
    note("done".into())?;
    for a in &result.aggregates {
        writeln!(
            out,
            "{} = {}: mean {:.6} std {:.6} (n = {})",
            a.knob, a.value, a.mean, a.std, a.n
        )
        .map_err(stdout_err)?;
    }
    writeln!(out, "wrote {}", dir.display()).map_err(stdout_err)?;
    Ok(())
}

#[derive(Serialize)]
struct OracleReport {
    n_states: usize,
    n_actions: usize,
    discount: f64,
    value_iteration: Vec<f64>,
    value_iteration_policy: Vec<usize>,
    policy_iteration: Vec<f64>,
    policy_iteration_policy: Vec<usize>,
    policy_iterations: usize,
}

fn load_model(path: &Path) -> CliResult<TabularRmdp> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    match serde_json::from_str::<RmdpDocument>(&text) {
        Ok(doc) => Ok(TabularRmdp::try_from(doc)?),
        Err(model_err) => match ExperimentConfig::from_json(&text, path) {
            Ok(config) => {
                let config = config.resolve()?;
                config.training_model()
            }
            Err(_) => Err(CliError::InvalidConfig {
                origin: path.display().to_string(),
                message: format!(
                    "neither a model nor a chain config; as a model: line {} column {}: {model_err}",
                    model_err.line(),
                    model_err.column()
                ),
            }),
        },
    }
}

fn oracle(path: &Path, out: &mut dyn Write) -> CliResult<()> {
    let model = load_model(path)?;
    let (v, greedy) = robust_value_iteration(&model, 1e-10, 100_000)?;
    let pi = policy_iteration(&model, true, 1e-10, 1000)?;
    let report = OracleReport {
        n_states: model.n_states(),
        n_actions: model.n_actions(),
        discount: model.discount(),
        value_iteration: v.iter().copied().collect(),
        value_iteration_policy: greedy.actions().to_vec(),
        policy_iteration: pi.values.iter().copied().collect(),
        policy_iteration_policy: pi.policy.actions().to_vec(),
        policy_iterations: pi.iterations,
    };
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?).map_err(stdout_err)?;
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    knob: Option<String>,
    value: Option<f64>,
    seed: u64,
    metric: f64,
}

fn eval(
    weights: &Path,
    config_path: &Path,
    iteration: Option<usize>,
    knob: Option<(&str, f64)>,
    g: &GlobalArgs,
    out: &mut dyn Write,
) -> CliResult<()> {
    let config = load(config_path, g, None)?;
    let summary: Option<RepSummary> = match fs::read_to_string(weights.with_file_name("summary.json")) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(_) => None,
    };
    // The seed of the replication that wrote the weights, unless overridden.
    let seed = g
        .seed
        .or(summary.as_ref().map(|s| s.seed))
        .unwrap_or(config.seed);
    let iteration = iteration.or(summary.as_ref().and_then(|s| s.deployed_iteration));
    let w = read_weights(weights, iteration)?;
    let features = config.features.clone().expect("resolved config");
    if w.len() != features.dim() {
        return Err(CliError::Weights {
            path: weights.to_path_buf(),
            message: format!("{} weights for {} features", w.len(), features.dim()),
        });
    }
    let policy = TrainedPolicy::Linear { features, weights: w };
    let spec = match knob {
        Some((name, value)) => robust_lspi::envs::perturb(&config.environment, name, value)?,
        None => config.environment.clone(),
    };
    let metric = experiment::evaluate(&config, &policy, &spec, seed)?;
    let report = EvalReport {
        knob: knob.map(|(k, _)| k.to_string()),
        value: knob.map(|(_, v)| v),
        seed,
        metric,
    };
    writeln!(out, "{}", serde_json::to_string(&report)?).map_err(stdout_err)?;
    Ok(())
}
