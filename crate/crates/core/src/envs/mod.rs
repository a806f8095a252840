//! Environments: the chain MDP, random tabular fixtures, cart-pole and
//! mountain-car, plus seeded rollouts.

mod chain;
mod continuous;
mod random;

pub use chain::{build_chain, slip_vertex_sets, ChainSpec, LEFT, RIGHT};
pub use continuous::{
    continuous_step, CartPoleParams, ContinuousEnv, ContinuousEnvSpec, ContinuousKind, MountainCarParams,
};
pub use random::{random_tabular_rmdp, SetBuilder};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Observation;
use crate::rmdp::TabularRmdp;

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next: Observation,
    pub reward: f64,
    pub done: bool,
}

/// A simulator with a finite action set.
pub trait Environment {
    fn n_actions(&self) -> usize;

    /// Number of states for finite environments.
    fn n_states(&self) -> Option<usize> {
        None
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> Observation;

    fn step(&self, state: &Observation, action: usize, rng: &mut ChaCha8Rng) -> Result<Step>;

    /// Identifier of the uncertainty set attached to `(state, action)`.
    /// Finite environments use `s*A + a`; continuous ones share set 0.
    fn set_id(&self, state: &Observation, action: usize) -> usize {
        match (state.index(), self.n_states()) {
            (Some(s), Some(_)) => s * self.n_actions() + action,
            _ => 0,
        }
    }
}

/// Replaces `action` by a uniform one with probability `p`.
pub(crate) fn noisy_action(action: usize, n_actions: usize, p: f64, rng: &mut ChaCha8Rng) -> usize {
    if p > 0.0 && rng.random::<f64>() < p {
        rng.random_range(0..n_actions)
    } else {
        action
    }
}

/// Samples an index from a probability row.
pub(crate) fn sample_row(row: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left the last bucket short; fall back to the last positive entry.
    row.iter().rposition(|p| *p > 0.0).unwrap_or(row.len() - 1)
}

/// Simulator over a tabular model's nominal kernel. Episodes start in a
/// uniformly drawn state and never terminate.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    pub model: TabularRmdp,
    /// Probability of replacing the chosen action by a uniform one.
    pub action_noise: f64,
}

impl TabularEnv {
    pub fn new(model: TabularRmdp) -> Self {
        TabularEnv {
            model,
            action_noise: 0.0,
        }
    }
}

impl Environment for TabularEnv {
    fn n_actions(&self) -> usize {
        self.model.n_actions()
    }

    fn n_states(&self) -> Option<usize> {
        Some(self.model.n_states())
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> Observation {
        Observation::Discrete(rng.random_range(0..self.model.n_states()))
    }

    fn step(&self, state: &Observation, action: usize, rng: &mut ChaCha8Rng) -> Result<Step> {
        let s = state
            .index()
            .filter(|s| *s < self.model.n_states())
            .ok_or_else(|| Error::Domain(format!("{state:?} is not a state of the model")))?;
        if action >= self.n_actions() {
            return Err(Error::Domain(format!("action {action} out of range")));
        }
        let a = noisy_action(action, self.n_actions(), self.action_noise, rng);
        let next = sample_row(self.model.kernel().row(s, a), rng);
        Ok(Step {
            next: Observation::Discrete(next),
            reward: self.model.reward(s, a),
            done: false,
        })
    }
}

/// One recorded transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Observation,
    pub action: usize,
    pub reward: f64,
    pub next: Observation,
}

/// A seeded trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    pub seed: u64,
    /// The last transition ended the episode.
    pub terminal: bool,
}

impl Rollout {
    /// Discounted return with the first reward undiscounted.
    pub fn discounted_return(&self, discount: f64) -> f64 {
        let mut g = 0.0;
        for t in self.transitions.iter().rev() {
            g = t.reward + discount * g;
        }
        g
    }

    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }
}

/// Runs one episode of at most `horizon` steps with its own RNG seeded
/// from `seed`. `policy` may draw from the RNG.
pub fn rollout<E, P>(env: &E, mut policy: P, horizon: usize, seed: u64) -> Result<Rollout>
where
    E: Environment + ?Sized,
    P: FnMut(&Observation, &mut ChaCha8Rng) -> usize,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = env.reset(&mut rng);
    let mut transitions = Vec::with_capacity(horizon);
    let mut terminal = false;
    for _ in 0..horizon {
        let action = policy(&state, &mut rng);
        let step = env.step(&state, action, &mut rng)?;
        transitions.push(Transition {
            state: state.clone(),
            action,
            reward: step.reward,
            next: step.next.clone(),
        });
        state = step.next;
        if step.done {
            terminal = true;
            break;
        }
    }
    Ok(Rollout {
        transitions,
        seed,
        terminal,
    })
}

/// Serializable environment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Chain(ChainSpec),
    CartPole {
        #[serde(default)]
        params: CartPoleParams,
        #[serde(default = "default_horizon")]
        horizon: usize,
        #[serde(default)]
        action_noise: f64,
    },
    MountainCar {
        #[serde(default)]
        params: MountainCarParams,
        #[serde(default = "default_horizon")]
        horizon: usize,
        #[serde(default)]
        action_noise: f64,
    },
}

fn default_horizon() -> usize {
    200
}

const CHAIN_KNOBS: &[&str] = &["slip", "action_noise"];
const CART_POLE_KNOBS: &[&str] = &["force_mag", "gravity", "length", "action_noise"];
const MOUNTAIN_CAR_KNOBS: &[&str] = &["max_speed", "power", "action_noise"];

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            EnvSpec::Chain(spec) => spec.validate(),
            _ => self.continuous()?.validate(),
        }
    }

    /// Knobs accepted by [`perturb`].
    pub fn knobs(&self) -> &'static [&'static str] {
        match self {
            EnvSpec::Chain(_) => CHAIN_KNOBS,
            EnvSpec::CartPole { .. } => CART_POLE_KNOBS,
            EnvSpec::MountainCar { .. } => MOUNTAIN_CAR_KNOBS,
        }
    }

    /// Continuous description; errors for the chain.
    pub fn continuous(&self) -> Result<ContinuousEnvSpec> {
        match self {
            EnvSpec::Chain(_) => Err(Error::Config("the chain is not a continuous environment".into())),
            EnvSpec::CartPole {
                params,
                horizon,
                action_noise,
            } => Ok(ContinuousEnvSpec {
                kind: ContinuousKind::CartPole(*params),
                horizon: *horizon,
                action_noise: *action_noise,
            }),
            EnvSpec::MountainCar {
                params,
                horizon,
                action_noise,
            } => Ok(ContinuousEnvSpec {
                kind: ContinuousKind::MountainCar(*params),
                horizon: *horizon,
                action_noise: *action_noise,
            }),
        }
    }
}

/// Copy of `spec` with the knob `name` set to `value`.
pub fn perturb(spec: &EnvSpec, name: &str, value: f64) -> Result<EnvSpec> {
    let mut out = spec.clone();
    let unknown = || {
        Error::Config(format!(
            "unknown knob `{name}`; valid knobs: {}",
            spec.knobs().join(", ")
        ))
    };
    match &mut out {
        EnvSpec::Chain(chain) => match name {
            "slip" => chain.slip = value,
            "action_noise" => chain.action_noise = value,
            _ => return Err(unknown()),
        },
        EnvSpec::CartPole {
            params, action_noise, ..
        } => match name {
            "force_mag" => params.force_mag = value,
            "gravity" => params.gravity = value,
            "length" => params.length = value,
            "action_noise" => *action_noise = value,
            _ => return Err(unknown()),
        },
        EnvSpec::MountainCar {
            params, action_noise, ..
        } => match name {
            "max_speed" => params.max_speed = value,
            "power" => params.power = value,
            "action_noise" => *action_noise = value,
            _ => return Err(unknown()),
        },
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perturb_changes_only_the_knob() {
        let chain = EnvSpec::Chain(ChainSpec::default());
        let p = perturb(&chain, "slip", 0.3).unwrap();
        let EnvSpec::Chain(c) = &p else { unreachable!() };
        assert_eq!(c.slip, 0.3);
        assert_eq!(
            ChainSpec {
                slip: 0.1,
                ..c.clone()
            },
            ChainSpec::default()
        );
        assert_eq!(perturb(&p, "slip", 0.1).unwrap(), chain);

        let cp = EnvSpec::CartPole {
            params: CartPoleParams::default(),
            horizon: 200,
            action_noise: 0.0,
        };
        let g = perturb(&cp, "gravity", 12.0).unwrap();
        let EnvSpec::CartPole { params, .. } = &g else { unreachable!() };
        assert_eq!(params.gravity, 12.0);
        assert_eq!(params.force_mag, 10.0);
        assert_eq!(perturb(&g, "gravity", 9.8).unwrap(), cp);
    }

    #[test]
    fn unknown_knob_lists_valid_ones() {
        let err = perturb(&EnvSpec::Chain(ChainSpec::default()), "gravity", 1.0).unwrap_err();
        assert!(err.to_string().contains("slip"));
    }

    #[test]
    fn out_of_range_knob_is_rejected() {
        assert!(perturb(&EnvSpec::Chain(ChainSpec::default()), "slip", 0.7).is_err());
    }

    #[test]
    fn rollouts_replay_from_seed() {
        let env = TabularEnv::new(build_chain(&ChainSpec::default()).unwrap());
        let pol = |_: &Observation, rng: &mut ChaCha8Rng| rng.random_range(0..2);
        let a = rollout(&env, pol, 50, 7).unwrap();
        let b = rollout(&env, pol, 50, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.transitions.len(), 50);
        assert!(!a.terminal);
    }

    #[test]
    fn discounted_return_counts_first_reward() {
        let r = Rollout {
            transitions: vec![
                Transition {
                    state: Observation::Discrete(0),
                    action: 0,
                    reward: 1.0,
                    next: Observation::Discrete(0),
                },
                Transition {
                    state: Observation::Discrete(0),
                    action: 0,
                    reward: 1.0,
                    next: Observation::Discrete(0),
                },
            ],
            seed: 0,
            terminal: false,
        };
        assert!((r.discounted_return(0.5) - 1.5).abs() < 1e-15);
    }
}
