//! Robust least-squares policy iteration and its non-robust baseline.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dp::{argmax_first, robust_policy_evaluation_exact, robust_value_iteration};
use crate::envs::{rollout, Environment};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, Observation};
use crate::learner::{
    learner_init, run_to_convergence, ExplicitSupport, GramSupport, NoUncertainty, StepSchedule, StopReason,
    StreamEvent, SupportOracle, TransitionSample,
};
use crate::linalg::weighted_norm;
use crate::linear_fa::SteadyDistribution;
use crate::rmdp::{Policy, TabularRmdp, ValueVector};
use crate::uncertainty::{GramSign, UncertaintySet};

/// Radius parameter `r` of the closed-form sphere support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "snake_case")]
pub enum RadiusRule {
    Absolute(f64),
    /// `factor / |Phi' Phi|_F`.
    FrobeniusScaled(f64),
}

impl RadiusRule {
    pub fn resolve(&self, gram: &DMatrix<f64>) -> Result<f64> {
        let r = match *self {
            RadiusRule::Absolute(r) => r,
            RadiusRule::FrobeniusScaled(f) => {
                let norm = gram.norm();
                if norm == 0.0 {
                    return Err(Error::Numeric("gram matrix is zero".into()));
                }
                f / norm
            }
        };
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::Config(format!("radius parameter {r} must be >= 0")));
        }
        Ok(r)
    }
}

/// The approximate uncertainty sets seen by the learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UncertaintyBinding {
    /// Every set is `{0}` (non-robust LSPI).
    None,
    /// One shared sphere through the closed form `-sqrt(r w' Phi' Phi w)`.
    Gram {
        radius: RadiusRule,
        #[serde(default)]
        sign: GramSign,
    },
    /// Explicit per-pair sets over next-state values (finite environments).
    Explicit { sets: Vec<UncertaintySet> },
}

/// Settings of one RLSPI run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyIterationConfig {
    /// Outer iterations `K`.
    pub iterations: usize,
    /// Inner weight tolerance `epsilon0`.
    pub epsilon0: f64,
    /// Inner step cap; defaults to the sample budget.
    pub inner_max_steps: Option<usize>,
    /// Steps before the tolerance is tested; defaults to the sample budget.
    pub inner_min_steps: Option<usize>,
    /// Trajectories per outer iteration.
    pub trajectories: usize,
    pub horizon: usize,
    /// State-action map.
    pub features: FeatureMap,
    pub uncertainty: UncertaintyBinding,
    pub discount: f64,
    pub lambda: f64,
    pub schedule: StepSchedule,
    pub ridge: Option<f64>,
    /// Shrinkage of the regularized fixed point (see [`crate::learner::LearnerState::l2`]).
    #[serde(default)]
    pub l2: f64,
    /// Probability of a uniform action while collecting data under greedy
    /// policies.
    pub exploration: f64,
    /// Start each inner loop from the previous weights.
    pub warm_start: bool,
    /// States at which `Phi' Phi` is formed for the gram binding when the
    /// environment is continuous (defaults to the RBF centers).
    pub gram_states: Option<Vec<Observation>>,
    pub seed: u64,
}

impl PolicyIterationConfig {
    pub fn new(features: FeatureMap, discount: f64) -> Self {
        PolicyIterationConfig {
            iterations: 20,
            epsilon0: 0.1,
            inner_max_steps: None,
            inner_min_steps: None,
            trajectories: 50,
            horizon: 50,
            features,
            uncertainty: UncertaintyBinding::None,
            discount,
            lambda: 0.0,
            schedule: StepSchedule::default(),
            ridge: None,
            l2: 0.0,
            exploration: 0.1,
            warm_start: true,
            gram_states: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if !(self.epsilon0 > 0.0) {
            return Err(Error::Config(format!("epsilon0 {} must be positive", self.epsilon0)));
        }
        if self.trajectories == 0 || self.horizon == 0 {
            return Err(Error::Config("trajectories and horizon must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.exploration) {
            return Err(Error::Config(format!("exploration {} not in [0,1]", self.exploration)));
        }
        if self.features.n_actions().is_none() {
            return Err(Error::Config("RLSPI needs stacked state-action features".into()));
        }
        self.features.validate()?;
        self.schedule.validate()
    }

    fn budget(&self) -> usize {
        self.trajectories * self.horizon
    }
}

/// Outcome of one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `w_{pi_k}`.
    pub weights: Vec<f64>,
    /// Greedy `pi_{k+1}` on finite environments.
    pub policy: Option<Vec<usize>>,
    pub inner_steps: usize,
    pub converged: bool,
    pub stop: StopReason,
    /// Last inner weight change.
    pub last_change: f64,
    pub samples: usize,
    /// Evaluation of the greedy policy, filled by the caller.
    pub metric: Option<f64>,
}

impl IterationRecord {
    pub fn weights(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }
}

/// `argmax_a phi(s, a)' w`, ties to the lowest action.
pub fn greedy_policy(w: &DVector<f64>, features: &FeatureMap, state: &Observation) -> Result<usize> {
    let n_actions = features
        .n_actions()
        .ok_or_else(|| Error::Config("greedy policy needs stacked state-action features".into()))?;
    let q = (0..n_actions)
        .map(|a| Ok(features.eval(state, Some(a))?.dot(w)))
        .collect::<Result<Vec<_>>>()?;
    Ok(argmax_first(&q))
}

/// Greedy tabular policy over `n_states` discrete states.
pub fn greedy_tabular(w: &DVector<f64>, features: &FeatureMap, n_states: usize) -> Result<Policy> {
    let n_actions = features.n_actions().unwrap_or(1);
    let actions = (0..n_states)
        .map(|s| greedy_policy(w, features, &Observation::Discrete(s)))
        .collect::<Result<Vec<_>>>()?;
    Policy::new(actions, n_actions)
}

/// Policy evaluated in one inner loop.
enum Evaluated<'a> {
    Uniform,
    Greedy(&'a DVector<f64>),
}

impl Evaluated<'_> {
    /// `E_{a ~ pi(s)} phi(s, a)`.
    fn expected_features(&self, features: &FeatureMap, state: &Observation) -> Result<DVector<f64>> {
        match self {
            Evaluated::Uniform => {
                let n = features.n_actions().unwrap_or(1);
                let mut out = DVector::zeros(features.dim());
                for a in 0..n {
                    out += features.eval(state, Some(a))?;
                }
                Ok(out / n as f64)
            }
            Evaluated::Greedy(w) => {
                let a = greedy_policy(w, features, state)?;
                features.eval(state, Some(a))
            }
        }
    }
}

fn gram_matrix<E: Environment + ?Sized>(config: &PolicyIterationConfig, env: &E) -> Result<DMatrix<f64>> {
    let n_actions = env.n_actions();
    let states: Vec<Observation> = match (&config.gram_states, env.n_states()) {
        (Some(states), _) => states.clone(),
        (None, Some(n)) => (0..n).map(Observation::Discrete).collect(),
        (None, None) => {
            let base = match &config.features {
                FeatureMap::StackedActions { base, .. } => base.as_ref(),
                other => other,
            };
            base.rbf_centers()
                .ok_or_else(|| {
                    Error::Config("gram binding on a continuous environment needs gram_states or RBF features".into())
                })?
                .into_iter()
                .map(Observation::Continuous)
                .collect()
        }
    };
    let l = config.features.dim();
    let mut gram = DMatrix::zeros(l, l);
    for s in &states {
        for a in 0..n_actions {
            let phi = config.features.eval(s, Some(a))?;
            gram.ger(1.0, &phi, &phi, 1.0);
        }
    }
    Ok(gram)
}

fn build_oracle<E: Environment + ?Sized>(
    config: &PolicyIterationConfig,
    env: &E,
    gram: Option<&DMatrix<f64>>,
    evaluated: &Evaluated<'_>,
) -> Result<Box<dyn SupportOracle>> {
    Ok(match &config.uncertainty {
        UncertaintyBinding::None => Box::new(NoUncertainty),
        UncertaintyBinding::Gram { radius, sign } => {
            let gram = gram.expect("gram computed for the gram binding").clone();
            let radius_param = radius.resolve(&gram)?;
            Box::new(GramSupport {
                gram,
                radius_param,
                sign: *sign,
            })
        }
        UncertaintyBinding::Explicit { sets } => {
            let n = env
                .n_states()
                .ok_or_else(|| Error::Config("explicit sets need a finite environment".into()))?;
            if sets.len() != n * env.n_actions() {
                return Err(Error::Config(format!(
                    "{} explicit sets given, expected {}",
                    sets.len(),
                    n * env.n_actions()
                )));
            }
            let mut value_features = DMatrix::zeros(n, config.features.dim());
            for s in 0..n {
                let row = evaluated.expected_features(&config.features, &Observation::Discrete(s))?;
                value_features.row_mut(s).copy_from(&row.transpose());
            }
            Box::new(ExplicitSupport {
                value_features,
                sets: sets.clone(),
            })
        }
    })
}

/// Algorithm 1: `K` rounds of data collection under the current policy,
/// RLSPE(lambda) evaluation of its Q-function and greedy improvement.
/// `pi_0` is uniformly random.
pub fn rlspi_run<E: Environment + ?Sized>(config: &PolicyIterationConfig, env: &E) -> Result<Vec<IterationRecord>> {
    config.validate()?;
    let n_actions = env.n_actions();
    if config.features.n_actions() != Some(n_actions) {
        return Err(Error::Config(format!(
            "features are stacked over {:?} actions, environment has {n_actions}",
            config.features.n_actions()
        )));
    }
    let l = config.features.dim();
    let gram = match config.uncertainty {
        UncertaintyBinding::Gram { .. } => Some(gram_matrix(config, env)?),
        _ => None,
    };
    let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records: Vec<IterationRecord> = Vec::with_capacity(config.iterations);
    let mut current: Option<DVector<f64>> = None;
    for k in 0..config.iterations {
        let evaluated = match &current {
            None => Evaluated::Uniform,
            Some(w) => Evaluated::Greedy(w),
        };
        let mut events = Vec::with_capacity(config.budget() + config.trajectories);
        let mut samples = 0;
        for _ in 0..config.trajectories {
            let seed: u64 = seeds.random();
            let behaviour = |s: &Observation, rng: &mut ChaCha8Rng| -> usize {
                match &current {
                    None => rng.random_range(0..n_actions),
                    Some(w) => {
                        if config.exploration > 0.0 && rng.random::<f64>() < config.exploration {
                            rng.random_range(0..n_actions)
                        } else {
                            greedy_policy(w, &config.features, s).unwrap_or(0)
                        }
                    }
                }
            };
            let path = rollout(env, behaviour, config.horizon, seed)?;
            events.push(StreamEvent::Reset);
            let last = path.transitions.len().saturating_sub(1);
            for (i, tr) in path.transitions.iter().enumerate() {
                let phi_now = config.features.eval(&tr.state, Some(tr.action))?;
                let phi_next = if path.terminal && i == last {
                    DVector::zeros(l)
                } else {
                    evaluated.expected_features(&config.features, &tr.next)?
                };
                events.push(StreamEvent::Sample(TransitionSample {
                    phi_now,
                    reward: tr.reward,
                    phi_next,
                    set_id: env.set_id(&tr.state, tr.action),
                }));
                samples += 1;
            }
        }
        let oracle = build_oracle(config, env, gram.as_ref(), &evaluated)?;
        let w0 = if config.warm_start { current.clone() } else { None };
        let mut state =
            learner_init(l, w0, config.lambda, config.discount, config.schedule, config.ridge)?.with_l2(config.l2)?;
        let report = run_to_convergence(
            &mut state,
            events,
            oracle.as_ref(),
            config.epsilon0,
            config.inner_max_steps.unwrap_or(config.budget()),
            config.inner_min_steps.unwrap_or(samples),
        )?;
        let policy = match env.n_states() {
            Some(n) => Some(greedy_tabular(&report.w, &config.features, n)?.actions().to_vec()),
            None => None,
        };
        records.push(IterationRecord {
            iteration: k,
            weights: report.w.iter().copied().collect(),
            policy,
            inner_steps: report.steps,
            converged: report.converged,
            stop: report.stop,
            last_change: report.last_change,
            samples,
            metric: None,
        });
        current = Some(report.w);
    }
    Ok(records)
}

/// Non-robust LSPI: the same code path with every set `{0}`.
pub fn lspi_run<E: Environment + ?Sized>(config: &PolicyIterationConfig, env: &E) -> Result<Vec<IterationRecord>> {
    let config = PolicyIterationConfig {
        uncertainty: UncertaintyBinding::None,
        ..config.clone()
    };
    rlspi_run(&config, env)
}

/// Index of the record with the largest metric (first on ties).
pub fn best_iterate(records: &[IterationRecord]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in records.iter().enumerate() {
        if let Some(m) = r.metric {
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((i, m));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// How [`evaluate_policy_robust`] scores a policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvaluationMode {
    /// Exact robust values on a tabular model.
    ExactTabular { tol: f64, max_iters: usize },
    /// Mean episodic return over seeded rollouts. Without a discount the
    /// return is the plain reward sum.
    MonteCarlo {
        episodes: usize,
        horizon: usize,
        seed: u64,
        discount: Option<f64>,
    },
}

/// What is evaluated against.
#[derive(Clone, Copy)]
pub enum EvaluationTarget<'a> {
    Model(&'a TabularRmdp),
    Env(&'a dyn Environment),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyMetrics {
    /// Robust values `V_pi` (exact mode).
    pub values: Option<ValueVector>,
    /// `|V* - V_pi|_inf` (exact mode).
    pub sup_gap: Option<f64>,
    /// `|V* - V_pi|_d` with `d` uniform (exact mode).
    pub weighted_gap: Option<f64>,
    /// Mean value over states (exact) or mean return (monte-carlo).
    pub mean: f64,
    /// Sample standard deviation of the returns (monte-carlo).
    pub std: f64,
    pub n: usize,
}

/// Scores `policy` exactly on a model or by rollouts. Exact mode on a
/// simulator is unsupported.
pub fn evaluate_policy_robust<P>(target: EvaluationTarget<'_>, policy: P, mode: &EvaluationMode) -> Result<PolicyMetrics>
where
    P: Fn(&Observation) -> usize,
{
    match (mode, target) {
        (EvaluationMode::ExactTabular { tol, max_iters }, EvaluationTarget::Model(model)) => {
            let actions = (0..model.n_states())
                .map(|s| policy(&Observation::Discrete(s)))
                .collect();
            let policy = Policy::new(actions, model.n_actions())?;
            let values = robust_policy_evaluation_exact(model, &policy, *tol, *max_iters)?;
            let (optimal, _) = robust_value_iteration(model, *tol, *max_iters)?;
            let gap = &optimal - &values;
            let d = SteadyDistribution::uniform(model.n_states());
            Ok(PolicyMetrics {
                sup_gap: Some(gap.amax()),
                weighted_gap: Some(weighted_norm(&gap, &d.d)),
                mean: values.mean(),
                std: 0.0,
                n: model.n_states(),
                values: Some(values),
            })
        }
        (EvaluationMode::ExactTabular { .. }, EvaluationTarget::Env(_)) => Err(Error::Unsupported(
            "exact evaluation needs a tabular model".into(),
        )),
        (
            EvaluationMode::MonteCarlo {
                episodes,
                horizon,
                seed,
                discount,
            },
            target,
        ) => {
            let owned;
            let env: &dyn Environment = match target {
                EvaluationTarget::Env(env) => env,
                EvaluationTarget::Model(model) => {
                    owned = crate::envs::TabularEnv::new(model.clone());
                    &owned
                }
            };
            let returns = monte_carlo_returns(env, &policy, *episodes, *horizon, *seed, *discount)?;
            let (mean, std) = mean_std(&returns);
            Ok(PolicyMetrics {
                values: None,
                sup_gap: None,
                weighted_gap: None,
                mean,
                std,
                n: returns.len(),
            })
        }
    }
}

/// Episode `i` uses seed `seed + i`.
pub fn monte_carlo_returns<P>(
    env: &dyn Environment,
    policy: &P,
    episodes: usize,
    horizon: usize,
    seed: u64,
    discount: Option<f64>,
) -> Result<Vec<f64>>
where
    P: Fn(&Observation) -> usize,
{
    if episodes == 0 || horizon == 0 {
        return Err(Error::Config("episodes and horizon must be >= 1".into()));
    }
    (0..episodes as u64)
        .map(|i| {
            let path = rollout(env, |s: &Observation, _: &mut ChaCha8Rng| policy(s), horizon, seed.wrapping_add(i))?;
            Ok(match discount {
                Some(alpha) => path.discounted_return(alpha),
                None => path.total_reward(),
            })
        })
        .collect()
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
