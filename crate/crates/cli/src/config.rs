//! Experiment configuration: JSON schema, defaults and validation.

use std::path::{Path, PathBuf};

use robust_lspi::envs::{
    build_chain, perturb, slip_vertex_sets, ChainSpec, ContinuousEnvSpec, ContinuousKind, EnvSpec,
};
use robust_lspi::rlspi::RadiusRule;
use robust_lspi::{FeatureMap, GramSign, StepSchedule, TabularRmdp, UncertaintySet};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Rlspi,
    Lspi,
    ExactRobustPi,
    ExactPi,
}

impl Algorithm {
    pub fn is_exact(self) -> bool {
        matches!(self, Algorithm::ExactRobustPi | Algorithm::ExactPi)
    }
}

/// Uncertainty descriptor.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UncertaintySpec {
    #[default]
    None,
    /// Shared sphere through the closed form on `Phi' Phi`; works on every
    /// environment. `strict_compat` flips the sign to `+sqrt`.
    GramSphere {
        radius: RadiusRule,
        #[serde(default)]
        strict_compat: bool,
    },
    /// Chain only: the move may slip up to `delta` more often.
    SlipVertices { delta: f64 },
    /// Per-pair sphere intersected with the simplex (tabular only).
    SimplexSphere { radius: f64 },
    /// Per-pair sum-zero sphere (tabular only).
    CenteredSphere { radius: f64 },
}

/// Scalar reported per (knob value, replication).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Mean over states of the exact value on the perturbed tabular model.
    ExactValue,
    /// Mean undiscounted episode reward.
    EpisodicReturn,
    /// Mean discounted episode reward.
    DiscountedReturn,
    /// Mean episode length.
    StepsToGoal,
}

impl Metric {
    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::StepsToGoal)
    }
}

/// Which iterate of a policy-iteration run is deployed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deploy {
    /// The final iterate.
    #[default]
    Last,
    /// The iterate with the best metric on the nominal environment (first
    /// on ties); guards against policy chattering.
    Best,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub knob: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSettings {
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    /// Episode cap; the environment horizon when absent.
    #[serde(default)]
    pub horizon: Option<usize>,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            episodes: default_episodes(),
            horizon: None,
        }
    }
}

fn default_episodes() -> usize {
    20
}

fn default_replications() -> usize {
    20
}

/// One experiment. Optional fields are filled by [`ExperimentConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvSpec,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub features: Option<FeatureMap>,
    #[serde(default)]
    pub uncertainty: UncertaintySpec,
    #[serde(default)]
    pub discount: Option<f64>,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub epsilon0: Option<f64>,
    /// Outer iterations `K`.
    #[serde(default)]
    pub iterations: Option<usize>,
    /// Trajectories per outer iteration `t`.
    #[serde(default)]
    pub trajectories: Option<usize>,
    /// Trajectory length `h`.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub exploration: Option<f64>,
    #[serde(default)]
    pub schedule: StepSchedule,
    #[serde(default)]
    pub ridge: Option<f64>,
    /// Shrinkage of the regularized fixed point; 0 on the chain and 1e-3 on
    /// the continuous tasks by default.
    #[serde(default)]
    pub l2: Option<f64>,
    #[serde(default)]
    pub deploy: Deploy,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub metric: Option<Metric>,
    #[serde(default)]
    pub evaluation: EvaluationSettings,
}

/// Per-environment defaults `(discount, epsilon0, t, h)`.
fn table_defaults(env: &EnvSpec) -> (f64, f64, usize, usize) {
    match env {
        EnvSpec::Chain(spec) => (spec.discount, 0.1, 50, 50),
        EnvSpec::CartPole { .. } => (0.95, 0.01, 150, 200),
        EnvSpec::MountainCar { .. } => (0.95, 0.05, 1000, 20),
    }
}

/// Default features: stacked quadratic on the chain, stacked RBF grids on
/// the continuous tasks.
pub fn default_features(env: &EnvSpec) -> FeatureMap {
    match env {
        EnvSpec::Chain(spec) => FeatureMap::stacked(FeatureMap::polynomial_1d(2, 0.0, (spec.n_states - 1) as f64), 2),
        EnvSpec::CartPole { .. } | EnvSpec::MountainCar { .. } => {
            let cont = env.continuous().expect("continuous variant");
            let (lows, highs) = cont.observation_box();
            let counts = match cont.kind {
                ContinuousKind::CartPole(_) => vec![1, 1, 3, 3],
                ContinuousKind::MountainCar(_) => vec![4, 4],
            };
            let mut grid = FeatureMap::rbf_grid(lows, highs, counts);
            // Four times the default widths: narrower bumps leave the Gram
            // matrix numerically singular on short episodes.
            let widths = grid.rbf_widths().map(|w| w.iter().map(|x| 4.0 * x).collect());
            if let FeatureMap::RbfGrid { widths: slot, .. } = &mut grid {
                *slot = widths;
            }
            FeatureMap::stacked(grid, cont.n_actions())
        }
    }
}

impl ExperimentConfig {
    /// Parses JSON, reporting the line and column of schema errors.
    pub fn from_json(text: &str, origin: &Path) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::InvalidConfig {
            origin: origin.display().to_string(),
            message: format!("line {} column {}: {e}", e.line(), e.column()),
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::InvalidConfig {
            origin: path.display().to_string(),
            message: format!("cannot read: {e}"),
        })?;
        Self::from_json(&text, path)
    }

    /// Copy with every optional field filled and all invariants checked.
    pub fn resolve(&self) -> CliResult<Self> {
        let invalid = |message: String| CliError::InvalidConfig {
            origin: "config".into(),
            message,
        };
        self.environment.validate()?;
        let (discount, epsilon0, t, h) = table_defaults(&self.environment);
        let mut out = self.clone();
        out.features.get_or_insert_with(|| default_features(&self.environment));
        out.discount.get_or_insert(discount);
        out.epsilon0.get_or_insert(epsilon0);
        out.iterations.get_or_insert(20);
        out.trajectories.get_or_insert(t);
        out.horizon.get_or_insert(h);
        out.exploration.get_or_insert(0.1);
        out.l2.get_or_insert(if matches!(self.environment, EnvSpec::Chain(_)) { 0.0 } else { 1e-3 });
        out.output.get_or_insert_with(|| PathBuf::from("results"));
        let tabular = matches!(self.environment, EnvSpec::Chain(_));
        out.metric.get_or_insert(match &self.environment {
            EnvSpec::Chain(_) => Metric::ExactValue,
            EnvSpec::CartPole { .. } => Metric::EpisodicReturn,
            EnvSpec::MountainCar { .. } => Metric::StepsToGoal,
        });
        if out.evaluation.horizon.is_none() {
            out.evaluation.horizon = Some(match self.environment.continuous() {
                Ok(cont) => cont.horizon,
                Err(_) => out.horizon.unwrap_or(h),
            });
        }

        if out.replications == 0 {
            return Err(invalid("replications must be >= 1".into()));
        }
        if out.evaluation.episodes == 0 || out.evaluation.horizon == Some(0) {
            return Err(invalid("evaluation episodes and horizon must be >= 1".into()));
        }
        let discount = out.discount.unwrap_or(discount);
        if !(discount > 0.0 && discount < 1.0) {
            return Err(invalid(format!("discount {discount} not in (0,1)")));
        }
        if !out.l2.is_some_and(|x| x >= 0.0 && x.is_finite()) {
            return Err(invalid(format!("l2 {:?} must be >= 0", out.l2)));
        }
        if !(0.0..=1.0).contains(&out.lambda) {
            return Err(invalid(format!("lambda {} not in [0,1]", out.lambda)));
        }
        if let Some(sweep) = &out.sweep {
            if sweep.values.is_empty() {
                return Err(invalid("sweep values must be non-empty".into()));
            }
            for v in &sweep.values {
                perturb(&self.environment, &sweep.knob, *v)?;
            }
        }
        if out.metric == Some(Metric::ExactValue) && !tabular {
            return Err(invalid("exact_value needs a tabular environment".into()));
        }
        if self.algorithm.is_exact() && !tabular {
            return Err(invalid(format!("{:?} needs a tabular environment", self.algorithm)));
        }
        match &out.uncertainty {
            UncertaintySpec::None | UncertaintySpec::GramSphere { .. } => {}
            UncertaintySpec::SlipVertices { .. } if !tabular => {
                return Err(invalid("slip_vertices needs the chain environment".into()))
            }
            UncertaintySpec::SimplexSphere { .. } | UncertaintySpec::CenteredSphere { .. } if !tabular => {
                return Err(invalid("explicit sphere sets need a tabular environment".into()))
            }
            _ => {}
        }
        if self.algorithm == Algorithm::ExactRobustPi && matches!(out.uncertainty, UncertaintySpec::GramSphere { .. })
        {
            return Err(invalid("exact_robust_pi needs explicit per-pair sets, not gram_sphere".into()));
        }
        let features = out.features.as_ref().expect("filled above");
        features.validate()?;
        let n_actions = self.n_actions();
        if features.n_actions() != Some(n_actions) {
            return Err(invalid(format!(
                "features must be stacked over the environment's {n_actions} actions"
            )));
        }
        out.schedule.validate()?;
        // Build the sets once so bad radii surface at validation time.
        if tabular {
            self.training_model_with(&out)?;
        }
        Ok(out)
    }

    pub fn n_actions(&self) -> usize {
        match &self.environment {
            EnvSpec::Chain(_) => 2,
            other => other.continuous().map(|c| c.n_actions()).unwrap_or(0),
        }
    }

    pub fn chain(&self) -> Option<&ChainSpec> {
        match &self.environment {
            EnvSpec::Chain(spec) => Some(spec),
            _ => None,
        }
    }

    pub fn continuous(&self) -> Option<ContinuousEnvSpec> {
        self.environment.continuous().ok()
    }

    /// Chain spec used for training, with the resolved discount.
    pub fn training_chain(&self) -> Option<ChainSpec> {
        self.chain().map(|spec| ChainSpec {
            discount: self.discount.unwrap_or(spec.discount),
            ..spec.clone()
        })
    }

    /// Nominal training model with the configured sets (tabular only).
    pub fn training_model(&self) -> CliResult<TabularRmdp> {
        self.training_model_with(self)
    }

    fn training_model_with(&self, resolved: &ExperimentConfig) -> CliResult<TabularRmdp> {
        let spec = resolved
            .training_chain()
            .ok_or_else(|| CliError::Unsupported("tabular model of a continuous environment".into()))?;
        let model = build_chain(&spec)?;
        let sets = match &resolved.uncertainty {
            UncertaintySpec::None | UncertaintySpec::GramSphere { .. } => return Ok(model),
            UncertaintySpec::SlipVertices { delta } => slip_vertex_sets(&spec, *delta)?,
            UncertaintySpec::CenteredSphere { radius } => {
                vec![UncertaintySet::centered_sphere(*radius)?; model.n_states() * model.n_actions()]
            }
            UncertaintySpec::SimplexSphere { radius } => (0..model.n_states())
                .flat_map(|s| (0..model.n_actions()).map(move |a| (s, a)))
                .map(|(s, a)| UncertaintySet::simplex_sphere(*radius, model.kernel().row(s, a).to_vec()))
                .collect::<Result<Vec<_>, _>>()?,
        };
        Ok(model.with_sets(sets)?)
    }

    pub fn gram_sign(&self) -> GramSign {
        match self.uncertainty {
            UncertaintySpec::GramSphere { strict_compat: true, .. } => GramSign::StrictCompat,
            _ => GramSign::Infimum,
        }
    }

    /// Knob values to evaluate; the nominal environment when no sweep is set.
    pub fn sweep_cells(&self) -> Vec<(String, f64)> {
        match &self.sweep {
            Some(s) => s.values.iter().map(|v| (s.knob.clone(), *v)).collect(),
            None => vec![("nominal".into(), 0.0)],
        }
    }

    /// Environment for one sweep cell.
    pub fn cell_environment(&self, knob: &str, value: f64) -> CliResult<EnvSpec> {
        if self.sweep.is_none() {
            return Ok(self.environment.clone());
        }
        Ok(perturb(&self.environment, knob, value)?)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("results"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> CliResult<ExperimentConfig> {
        ExperimentConfig::from_json(text, Path::new("test.json"))
    }

    #[test]
    fn minimal_chain_config_resolves() {
        let c = parse(r#"{"environment": {"kind": "chain"}, "algorithm": "rlspi"}"#)
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(c.discount, Some(0.9));
        assert_eq!(c.trajectories, Some(50));
        assert_eq!(c.metric, Some(Metric::ExactValue));
        assert_eq!(c.replications, 20);
        assert_eq!(c.features.unwrap().dim(), 6);
    }

    #[test]
    fn cart_pole_defaults_follow_the_table() {
        let c = parse(r#"{"environment": {"kind": "cart_pole"}, "algorithm": "lspi"}"#)
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!((c.discount, c.epsilon0, c.trajectories, c.horizon), (Some(0.95), Some(0.01), Some(150), Some(200)));
        assert_eq!(c.metric, Some(Metric::EpisodicReturn));
        assert_eq!(c.evaluation.horizon, Some(200));
    }

    #[test]
    fn schema_errors_carry_a_line() {
        let err = parse("{\n  \"environment\": {\"kind\": \"chain\"},\n  \"algorithm\": \"rlspi\",\n  \"bogus\": 1\n}")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 4"), "{msg}");
        assert!(msg.contains("bogus"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn invalid_combinations_are_rejected() {
        let cases = [
            r#"{"environment": {"kind": "cart_pole"}, "algorithm": "exact_pi"}"#,
            r#"{"environment": {"kind": "mountain_car"}, "algorithm": "rlspi", "uncertainty": {"kind": "slip_vertices", "delta": 0.1}}"#,
            r#"{"environment": {"kind": "chain"}, "algorithm": "rlspi", "sweep": {"knob": "slip", "values": []}}"#,
            r#"{"environment": {"kind": "chain"}, "algorithm": "rlspi", "sweep": {"knob": "gravity", "values": [1.0]}}"#,
            r#"{"environment": {"kind": "chain"}, "algorithm": "rlspi", "replications": 0}"#,
            r#"{"environment": {"kind": "chain", "slip": 0.9}, "algorithm": "rlspi"}"#,
            r#"{"environment": {"kind": "chain"}, "algorithm": "rlspi", "uncertainty": {"kind": "slip_vertices", "delta": 0.95}}"#,
            r#"{"environment": {"kind": "chain"}, "algorithm": "exact_robust_pi", "uncertainty": {"kind": "gram_sphere", "radius": {"rule": "absolute", "value": 0.1}}}"#,
        ];
        for text in cases {
            let err = parse(text).and_then(|c| c.resolve()).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = parse(
            r#"{"environment": {"kind": "chain"}, "algorithm": "rlspi",
                "uncertainty": {"kind": "gram_sphere", "radius": {"rule": "frobenius_scaled", "value": 0.01}}}"#,
        )
        .unwrap()
        .resolve()
        .unwrap();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(parse(&text).unwrap().resolve().unwrap(), c);
    }
}
