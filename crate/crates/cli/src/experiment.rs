//! Training, evaluation across a perturbation sweep, and result files.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use robust_lspi::envs::{build_chain, rollout, ContinuousEnv, EnvSpec, Environment, TabularEnv};
use robust_lspi::rlspi::{best_iterate, greedy_policy, mean_std};
use robust_lspi::{
    lspi_run, nonrobust_value, policy_iteration, rlspi_run, FeatureMap, IterationRecord, Observation, Policy,
    PolicyIterationConfig, TabularRmdp, TransitionKernel, UncertaintyBinding,
};
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, Deploy, ExperimentConfig, Metric, UncertaintySpec};
use crate::error::{CliError, CliResult};

/// A deployable policy.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedPolicy {
    /// Greedy in `phi(s, a)' w`.
    Linear { features: FeatureMap, weights: Vec<f64> },
    Table(Policy),
}

impl TrainedPolicy {
    pub fn act(&self, state: &Observation) -> usize {
        match self {
            TrainedPolicy::Linear { features, weights } => {
                let w = nalgebra_vector(weights);
                greedy_policy(&w, features, state).unwrap_or(0)
            }
            TrainedPolicy::Table(p) => state.index().map(|s| p.action(s)).unwrap_or(0),
        }
    }

    /// Actions on `n` discrete states.
    pub fn table(&self, n: usize) -> Vec<usize> {
        (0..n).map(|s| self.act(&Observation::Discrete(s))).collect()
    }
}

fn nalgebra_vector(w: &[f64]) -> robust_lspi::ValueVector {
    robust_lspi::ValueVector::from_column_slice(w)
}

/// What one replication produced.
#[derive(Debug, Clone)]
pub struct RepOutcome {
    pub rep: usize,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
    pub policy: TrainedPolicy,
    /// Metric of the deployed policy on the nominal environment.
    pub final_metric: f64,
    pub best_iteration: Option<usize>,
    pub deployed_iteration: Option<usize>,
}

/// `rep_i/summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepSummary {
    pub rep: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub final_metric: f64,
    pub deployed_iteration: Option<usize>,
    pub best_iteration: Option<usize>,
    pub best_metric: Option<f64>,
    /// Deployed policy on tabular environments.
    pub policy: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub knob: String,
    pub value: f64,
    pub seed: u64,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub knob: String,
    pub value: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub reps: Vec<RepOutcome>,
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
}

/// Seed of replication `i`.
pub fn replication_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(i as u64)
}

/// First episode seed of the evaluation rollouts of a replication. Every
/// sweep cell of a replication reuses the same episode seeds.
pub fn evaluation_seed(rep_seed: u64) -> u64 {
    rep_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1)
}

fn simulator(spec: &EnvSpec, discount: f64) -> CliResult<Box<dyn Environment + Send + Sync>> {
    Ok(match spec {
        EnvSpec::Chain(chain) => {
            let mut chain = chain.clone();
            chain.discount = discount;
            let mut env = TabularEnv::new(build_chain(&chain)?);
            env.action_noise = chain.action_noise;
            Box::new(env)
        }
        other => Box::new(ContinuousEnv::new(other.continuous()?)?),
    })
}

/// Chain model whose rows already include the action noise `p`:
/// `(1 - p) P(s, a) + p mean_b P(s, b)`, rewards mixed the same way.
fn effective_chain(spec: &EnvSpec, discount: f64) -> CliResult<TabularRmdp> {
    let EnvSpec::Chain(chain) = spec else {
        return Err(CliError::Unsupported("exact evaluation of a continuous environment".into()));
    };
    let mut chain = chain.clone();
    chain.discount = discount;
    let model = build_chain(&chain)?;
    let p = chain.action_noise;
    if p == 0.0 {
        return Ok(model);
    }
    let (n, a_count) = (model.n_states(), model.n_actions());
    let mut probs = Vec::with_capacity(n * a_count * n);
    let mut reward = Vec::with_capacity(n * a_count);
    for s in 0..n {
        let mean_row: Vec<f64> = (0..n)
            .map(|j| (0..a_count).map(|b| model.kernel().row(s, b)[j]).sum::<f64>() / a_count as f64)
            .collect();
        let mean_reward = (0..a_count).map(|b| model.reward(s, b)).sum::<f64>() / a_count as f64;
        for a in 0..a_count {
            probs.extend(model.kernel().row(s, a).iter().zip(&mean_row).map(|(x, m)| (1.0 - p) * x + p * m));
            reward.push((1.0 - p) * model.reward(s, a) + p * mean_reward);
        }
    }
    Ok(TabularRmdp::nominal(TransitionKernel::new(n, a_count, probs)?, reward, discount)?)
}

/// Scores `policy` on `spec` with the configured metric.
pub fn evaluate(config: &ExperimentConfig, policy: &TrainedPolicy, spec: &EnvSpec, rep_seed: u64) -> CliResult<f64> {
    let discount = config.discount.unwrap_or(0.9);
    let metric = config.metric.unwrap_or(Metric::EpisodicReturn);
    if metric == Metric::ExactValue {
        let model = effective_chain(spec, discount)?;
        let actions = policy.table(model.n_states());
        let pol = Policy::new(actions, model.n_actions())?;
        return Ok(nonrobust_value(&model, model.kernel(), &pol)?.mean());
    }
    let env = simulator(spec, discount)?;
    let horizon = config.evaluation.horizon.unwrap_or(200);
    let start = evaluation_seed(rep_seed);
    let scores = (0..config.evaluation.episodes as u64)
        .map(|i| {
            let path = rollout(env.as_ref(), |s: &Observation, _: &mut _| policy.act(s), horizon, start.wrapping_add(i))?;
            Ok(match metric {
                Metric::EpisodicReturn => path.total_reward(),
                Metric::DiscountedReturn => path.discounted_return(discount),
                Metric::StepsToGoal => path.transitions.len() as f64,
                Metric::ExactValue => unreachable!("handled above"),
            })
        })
        .collect::<CliResult<Vec<f64>>>()?;
    Ok(mean_std(&scores).0)
}

fn policy_iteration_config(config: &ExperimentConfig, seed: u64) -> CliResult<PolicyIterationConfig> {
    let features = config.features.clone().expect("resolved config");
    let mut pi = PolicyIterationConfig::new(features, config.discount.expect("resolved config"));
    pi.iterations = config.iterations.expect("resolved config");
    pi.epsilon0 = config.epsilon0.expect("resolved config");
    pi.trajectories = config.trajectories.expect("resolved config");
    pi.horizon = config.horizon.expect("resolved config");
    pi.exploration = config.exploration.expect("resolved config");
    pi.lambda = config.lambda;
    pi.schedule = config.schedule;
    pi.ridge = config.ridge;
    pi.l2 = config.l2.unwrap_or(0.0);
    pi.seed = seed;
    pi.uncertainty = match &config.uncertainty {
        UncertaintySpec::None => UncertaintyBinding::None,
        UncertaintySpec::GramSphere { radius, .. } => UncertaintyBinding::Gram {
            radius: *radius,
            sign: config.gram_sign(),
        },
        UncertaintySpec::SlipVertices { .. }
        | UncertaintySpec::SimplexSphere { .. }
        | UncertaintySpec::CenteredSphere { .. } => UncertaintyBinding::Explicit {
            sets: config.training_model()?.sets().to_vec(),
        },
    };
    Ok(pi)
}

/// Trains replication `rep` on the nominal environment.
pub fn train(config: &ExperimentConfig, rep: usize) -> CliResult<RepOutcome> {
    let seed = replication_seed(config.seed, rep);
    let nominal = &config.environment;
    if config.algorithm.is_exact() {
        let model = config.training_model()?;
        let result = policy_iteration(&model, config.algorithm == Algorithm::ExactRobustPi, 1e-10, 1000)?;
        let policy = TrainedPolicy::Table(result.policy);
        let final_metric = evaluate(config, &policy, nominal, seed)?;
        return Ok(RepOutcome {
            rep,
            seed,
            records: Vec::new(),
            policy,
            final_metric,
            best_iteration: None,
            deployed_iteration: None,
        });
    }
    let pi = policy_iteration_config(config, seed)?;
    let env = simulator(nominal, pi.discount)?;
    let mut records = match config.algorithm {
        Algorithm::Lspi => lspi_run(&pi, env.as_ref())?,
        _ => rlspi_run(&pi, env.as_ref())?,
    };
    for r in &mut records {
        let p = TrainedPolicy::Linear {
            features: pi.features.clone(),
            weights: r.weights.clone(),
        };
        r.metric = Some(evaluate(config, &p, nominal, seed)?);
    }
    let best_iteration = best_by(&records, config.metric.expect("resolved config"));
    let deployed = match config.deploy {
        Deploy::Last => records.len() - 1,
        Deploy::Best => best_iteration.unwrap_or(records.len() - 1),
    };
    let chosen = &records[deployed];
    let policy = TrainedPolicy::Linear {
        features: pi.features.clone(),
        weights: chosen.weights.clone(),
    };
    Ok(RepOutcome {
        rep,
        seed,
        final_metric: chosen.metric.expect("filled above"),
        best_iteration,
        deployed_iteration: Some(deployed),
        policy,
        records,
    })
}

/// Best iterate under the metric's direction (first on ties).
fn best_by(records: &[IterationRecord], metric: Metric) -> Option<usize> {
    if metric.higher_is_better() {
        return best_iterate(records);
    }
    let flipped: Vec<IterationRecord> = records
        .iter()
        .map(|r| IterationRecord {
            metric: r.metric.map(|m| -m),
            ..r.clone()
        })
        .collect();
    best_iterate(&flipped)
}

/// Runs the whole experiment in `pool` and returns rows sorted by
/// (sweep value index, replication).
pub fn run_sweep(config: &ExperimentConfig, pool: &rayon::ThreadPool) -> CliResult<SweepResult> {
    let n = config.replications;
    let reps: Vec<RepOutcome> = pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| train(config, i))
            .collect::<CliResult<Vec<_>>>()
    })?;
    let cells = config.sweep_cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..n).map(move |r| (c, r))).collect();
    let metrics: Vec<f64> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, r)| {
                let (knob, value) = &cells[c];
                let spec = config.cell_environment(knob, *value)?;
                evaluate(config, &reps[r].policy, &spec, reps[r].seed)
            })
            .collect::<CliResult<Vec<_>>>()
    })?;
    let rows: Vec<ResultRow> = jobs
        .iter()
        .zip(&metrics)
        .map(|(&(c, r), m)| ResultRow {
            knob: cells[c].0.clone(),
            value: cells[c].1,
            seed: reps[r].seed,
            metric: *m,
        })
        .collect();
    let aggregates = cells
        .iter()
        .enumerate()
        .map(|(c, (knob, value))| {
            let xs = &metrics[c * n..(c + 1) * n];
            let (mean, std) = mean_std(xs);
            AggregateRow {
                knob: knob.clone(),
                value: *value,
                mean,
                std,
                n: xs.len(),
            }
        })
        .collect();
    Ok(SweepResult { reps, rows, aggregates })
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn create(path: &Path) -> CliResult<fs::File> {
    fs::File::create(path).map_err(CliError::io(path))
}

/// Writes results, aggregates and per-replication artifacts under `dir`.
pub fn write_outputs(dir: &Path, config: &ExperimentConfig, result: &SweepResult) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    fs::write(dir.join("config.resolved.json"), serde_json::to_string_pretty(config)? + "\n")
        .map_err(CliError::io(dir.join("config.resolved.json")))?;

    let mut w = csv::Writer::from_writer(create(&dir.join("results.csv"))?);
    w.write_record(["knob", "value", "seed", "metric"])?;
    for r in &result.rows {
        w.write_record([r.knob.clone(), fmt_f64(r.value), r.seed.to_string(), fmt_f64(r.metric)])?;
    }
    w.flush().map_err(CliError::io(dir.join("results.csv")))?;

    let mut w = csv::Writer::from_writer(create(&dir.join("aggregate.csv"))?);
    w.write_record(["knob", "value", "mean", "std", "n"])?;
    for a in &result.aggregates {
        w.write_record([a.knob.clone(), fmt_f64(a.value), fmt_f64(a.mean), fmt_f64(a.std), a.n.to_string()])?;
    }
    w.flush().map_err(CliError::io(dir.join("aggregate.csv")))?;

    let n_states = config.chain().map(|c| c.n_states);
    for rep in &result.reps {
        let rep_dir = dir.join(format!("rep_{}", rep.rep));
        fs::create_dir_all(&rep_dir).map_err(CliError::io(&rep_dir))?;
        if !rep.records.is_empty() {
            let path = rep_dir.join("iterations.jsonl");
            let mut f = create(&path)?;
            for r in &rep.records {
                writeln!(f, "{}", serde_json::to_string(r)?).map_err(CliError::io(&path))?;
            }
            write_weights(&rep_dir.join("weights.csv"), &rep.records)?;
        }
        let best_metric = rep.best_iteration.and_then(|i| rep.records[i].metric);
        let summary = RepSummary {
            rep: rep.rep,
            seed: rep.seed,
            algorithm: config.algorithm,
            final_metric: rep.final_metric,
            deployed_iteration: rep.deployed_iteration,
            best_iteration: rep.best_iteration,
            best_metric,
            policy: n_states.map(|n| rep.policy.table(n)),
        };
        let path = rep_dir.join("summary.json");
        fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n").map_err(CliError::io(&path))?;
    }
    Ok(())
}

/// `iteration,index,value` rows for every iterate.
pub fn write_weights(path: &Path, records: &[IterationRecord]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["iteration", "index", "value"])?;
    for r in records {
        for (i, x) in r.weights.iter().enumerate() {
            w.write_record([r.iteration.to_string(), i.to_string(), fmt_f64(*x)])?;
        }
    }
    w.flush().map_err(CliError::io(path))?;
    Ok(())
}

/// Weights of iteration `which` (the last one when `None`) in a
/// `weights.csv` file.
pub fn read_weights(path: &Path, which: Option<usize>) -> CliResult<Vec<f64>> {
    let bad = |message: String| CliError::Weights {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path)?;
    let mut by_iteration: std::collections::BTreeMap<usize, Vec<(usize, f64)>> = Default::default();
    for row in reader.records() {
        let row = row?;
        if row.len() != 3 {
            return Err(bad(format!("expected 3 columns, got {}", row.len())));
        }
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("`{s}`: {e}")));
        let iteration = parse_usize(&row[0])?;
        let index = parse_usize(&row[1])?;
        let value = row[2].parse::<f64>().map_err(|e| bad(format!("`{}`: {e}", &row[2])))?;
        by_iteration.entry(iteration).or_default().push((index, value));
    }
    let mut entries = match which {
        Some(k) => by_iteration
            .remove(&k)
            .ok_or_else(|| bad(format!("no rows for iteration {k}")))?,
        None => by_iteration.pop_last().ok_or_else(|| bad("no rows".into()))?.1,
    };
    entries.sort_by_key(|(i, _)| *i);
    if entries.iter().enumerate().any(|(k, (i, _))| k != *i) {
        return Err(bad("weight indices are not 0..L".into()));
    }
    Ok(entries.into_iter().map(|(_, x)| x).collect())
}
