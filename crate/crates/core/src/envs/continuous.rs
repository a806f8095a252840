use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{noisy_action, Environment, Step};
use crate::error::{Error, Result};
use crate::features::Observation;

/// Cart-pole physics; actions push left (0) or right (1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub mass_cart: f64,
    pub mass_pole: f64,
    /// Half the pole length.
    pub length: f64,
    pub force_mag: f64,
    pub tau: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            gravity: 9.8,
            mass_cart: 1.0,
            mass_pole: 0.1,
            length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
        }
    }
}

pub const CART_POLE_X_LIMIT: f64 = 2.4;
pub const CART_POLE_THETA_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;

/// Mountain-car physics; actions push left (0), coast (1) or push right (2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MountainCarParams {
    pub max_speed: f64,
    pub power: f64,
    pub gravity: f64,
}

impl Default for MountainCarParams {
    fn default() -> Self {
        MountainCarParams {
            max_speed: 0.07,
            power: 15e-4,
            gravity: 0.0025,
        }
    }
}

pub const MOUNTAIN_CAR_MIN_POSITION: f64 = -1.2;
pub const MOUNTAIN_CAR_MAX_POSITION: f64 = 0.6;
pub const MOUNTAIN_CAR_GOAL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContinuousKind {
    CartPole(CartPoleParams),
    MountainCar(MountainCarParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousEnvSpec {
    pub kind: ContinuousKind,
    pub horizon: usize,
    /// Probability of a uniformly random action per step.
    pub action_noise: f64,
}

impl ContinuousEnvSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {x}")))
            }
        };
        match self.kind {
            ContinuousKind::CartPole(p) => {
                positive("gravity", p.gravity)?;
                positive("mass_cart", p.mass_cart)?;
                positive("mass_pole", p.mass_pole)?;
                positive("length", p.length)?;
                positive("force_mag", p.force_mag)?;
                positive("tau", p.tau)?;
            }
            ContinuousKind::MountainCar(p) => {
                positive("max_speed", p.max_speed)?;
                positive("power", p.power)?;
                positive("gravity", p.gravity)?;
            }
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.action_noise) {
            return Err(Error::Config(format!("action noise {} not in [0,1]", self.action_noise)));
        }
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        match self.kind {
            ContinuousKind::CartPole(_) => 2,
            ContinuousKind::MountainCar(_) => 3,
        }
    }

    /// Box used to scale features: `(lows, highs)`.
    pub fn observation_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self.kind {
            ContinuousKind::CartPole(_) => (
                vec![-CART_POLE_X_LIMIT, -3.0, -CART_POLE_THETA_LIMIT, -3.5],
                vec![CART_POLE_X_LIMIT, 3.0, CART_POLE_THETA_LIMIT, 3.5],
            ),
            ContinuousKind::MountainCar(p) => (
                vec![MOUNTAIN_CAR_MIN_POSITION, -p.max_speed],
                vec![MOUNTAIN_CAR_MAX_POSITION, p.max_speed],
            ),
        }
    }
}

/// One step of the noiseless dynamics: `(next, reward, done)`.
pub fn continuous_step(kind: &ContinuousKind, state: &[f64], action: usize) -> Result<(Vec<f64>, f64, bool)> {
    let out = match kind {
        ContinuousKind::CartPole(p) => {
            let [x, x_dot, theta, theta_dot] = state_array::<4>(state)?;
            if action > 1 {
                return Err(Error::Domain(format!("cart-pole action {action} out of range")));
            }
            let force = if action == 1 { p.force_mag } else { -p.force_mag };
            let (sin, cos) = theta.sin_cos();
            let total_mass = p.mass_cart + p.mass_pole;
            let pole_mass_length = p.mass_pole * p.length;
            let temp = (force + pole_mass_length * theta_dot * theta_dot * sin) / total_mass;
            let theta_acc =
                (p.gravity * sin - cos * temp) / (p.length * (4.0 / 3.0 - p.mass_pole * cos * cos / total_mass));
            let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;
            let next = vec![
                x + p.tau * x_dot,
                x_dot + p.tau * x_acc,
                theta + p.tau * theta_dot,
                theta_dot + p.tau * theta_acc,
            ];
            let done = next[0].abs() > CART_POLE_X_LIMIT || next[2].abs() > CART_POLE_THETA_LIMIT;
            (next, 1.0, done)
        }
        ContinuousKind::MountainCar(p) => {
            let [position, velocity] = state_array::<2>(state)?;
            if action > 2 {
                return Err(Error::Domain(format!("mountain-car action {action} out of range")));
            }
            let push = action as f64 - 1.0;
            let mut v = velocity + push * p.power - p.gravity * (3.0 * position).cos();
            v = v.clamp(-p.max_speed, p.max_speed);
            let x = (position + v).clamp(MOUNTAIN_CAR_MIN_POSITION, MOUNTAIN_CAR_MAX_POSITION);
            if x == MOUNTAIN_CAR_MIN_POSITION && v < 0.0 {
                v = 0.0;
            }
            (vec![x, v], -1.0, x >= MOUNTAIN_CAR_GOAL)
        }
    };
    if out.0.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!(
            "dynamics produced {:?} from state {state:?} and action {action}",
            out.0
        )));
    }
    Ok(out)
}

fn state_array<const N: usize>(state: &[f64]) -> Result<[f64; N]> {
    state
        .try_into()
        .map_err(|_| Error::Domain(format!("expected a state of length {N}, got {}", state.len())))
}

/// A continuous environment built from a spec.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousEnv {
    pub spec: ContinuousEnvSpec,
}

impl ContinuousEnv {
    pub fn new(spec: ContinuousEnvSpec) -> Result<Self> {
        spec.validate()?;
        Ok(ContinuousEnv { spec })
    }
}

impl Environment for ContinuousEnv {
    fn n_actions(&self) -> usize {
        self.spec.n_actions()
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> Observation {
        let state = match self.spec.kind {
            ContinuousKind::CartPole(_) => (0..4).map(|_| rng.random_range(-0.05..0.05)).collect(),
            ContinuousKind::MountainCar(_) => vec![rng.random_range(-0.6..-0.4), 0.0],
        };
        Observation::Continuous(state)
    }

    fn step(&self, state: &Observation, action: usize, rng: &mut ChaCha8Rng) -> Result<Step> {
        let Observation::Continuous(x) = state else {
            return Err(Error::Domain("continuous environment got a discrete state".into()));
        };
        if action >= self.n_actions() {
            return Err(Error::Domain(format!("action {action} out of range")));
        }
        let a = noisy_action(action, self.n_actions(), self.spec.action_noise, rng);
        let (next, reward, done) = continuous_step(&self.spec.kind, x, a)?;
        Ok(Step {
            next: Observation::Continuous(next),
            reward,
            done,
        })
    }
}
