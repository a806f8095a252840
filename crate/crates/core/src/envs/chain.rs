use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rmdp::{TabularRmdp, TransitionKernel};
use crate::uncertainty::UncertaintySet;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// The slipping chain: two actions, moves succeed with probability
/// `1 - slip` and go the other way otherwise; walls clamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainSpec {
    pub n_states: usize,
    pub slip: f64,
    pub reward_states: Vec<usize>,
    pub discount: f64,
    /// Probability of a uniformly random action when simulating.
    pub action_noise: f64,
}

impl Default for ChainSpec {
    fn default() -> Self {
        ChainSpec {
            n_states: 10,
            slip: 0.1,
            reward_states: vec![0, 9],
            discount: 0.9,
            action_noise: 0.0,
        }
    }
}

impl ChainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_states < 2 {
            return Err(Error::Config("chain needs at least 2 states".into()));
        }
        if !(0.0..=0.5).contains(&self.slip) {
            return Err(Error::Config(format!("slip {} not in [0, 0.5]", self.slip)));
        }
        if let Some(s) = self.reward_states.iter().find(|s| **s >= self.n_states) {
            return Err(Error::Config(format!("reward state {s} outside the chain")));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Config(format!("discount {} not in (0,1)", self.discount)));
        }
        if !(0.0..=1.0).contains(&self.action_noise) {
            return Err(Error::Config(format!("action noise {} not in [0,1]", self.action_noise)));
        }
        Ok(())
    }

    /// Intended and opposite successors of `(s, a)`.
    pub fn successors(&self, s: usize, a: usize) -> (usize, usize) {
        let left = s.saturating_sub(1);
        let right = (s + 1).min(self.n_states - 1);
        if a == LEFT {
            (left, right)
        } else {
            (right, left)
        }
    }
}

/// Nominal chain model with degenerate sets.
pub fn build_chain(spec: &ChainSpec) -> Result<TabularRmdp> {
    spec.validate()?;
    let n = spec.n_states;
    let mut probs = vec![0.0; n * 2 * n];
    let mut reward = vec![0.0; n * 2];
    for s in 0..n {
        for a in [LEFT, RIGHT] {
            let (intended, opposite) = spec.successors(s, a);
            let row = &mut probs[(s * 2 + a) * n..(s * 2 + a + 1) * n];
            row[intended] += 1.0 - spec.slip;
            row[opposite] += spec.slip;
            if spec.reward_states.contains(&s) {
                reward[s * 2 + a] = 1.0;
            }
        }
    }
    TabularRmdp::nominal(TransitionKernel::new(n, 2, probs)?, reward, spec.discount)
}

/// Per-pair sets `{0, delta (e_opposite - e_intended)}`: the move may slip
/// up to `delta` more often than nominal.
pub fn slip_vertex_sets(spec: &ChainSpec, delta: f64) -> Result<Vec<UncertaintySet>> {
    spec.validate()?;
    if !(delta >= 0.0 && delta <= 1.0 - spec.slip) {
        return Err(Error::Config(format!(
            "slip vertex delta {delta} must lie in [0, 1 - slip]"
        )));
    }
    let n = spec.n_states;
    let mut sets = Vec::with_capacity(2 * n);
    for s in 0..n {
        for a in [LEFT, RIGHT] {
            let (intended, opposite) = spec.successors(s, a);
            let mut u = vec![0.0; n];
            u[opposite] += delta;
            u[intended] -= delta;
            sets.push(UncertaintySet::finite(vec![vec![0.0; n], u])?);
        }
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rows() {
        let m = build_chain(&ChainSpec::default()).unwrap();
        let row = m.kernel().row(5, RIGHT);
        assert!((row[6] - 0.9).abs() < 1e-15);
        assert!((row[4] - 0.1).abs() < 1e-15);
        assert_eq!(m.kernel().row(0, LEFT)[0], 0.9);
        assert_eq!(m.kernel().row(0, LEFT)[1], 0.1);
        assert_eq!(m.reward(0, LEFT), 1.0);
        assert_eq!(m.reward(9, LEFT), 1.0);
        assert_eq!(m.reward(4, RIGHT), 0.0);
    }

    #[test]
    fn zero_slip_is_deterministic() {
        let spec = ChainSpec {
            slip: 0.0,
            ..ChainSpec::default()
        };
        let m = build_chain(&spec).unwrap();
        for s in 0..10 {
            for a in 0..2 {
                assert_eq!(m.kernel().row(s, a).iter().filter(|p| **p == 1.0).count(), 1);
            }
        }
    }

    #[test]
    fn half_slip_row_at_the_wall() {
        let spec = ChainSpec {
            slip: 0.5,
            ..ChainSpec::default()
        };
        let m = build_chain(&spec).unwrap();
        assert_eq!(m.kernel().row(9, RIGHT)[9], 0.5);
        assert_eq!(m.kernel().row(9, RIGHT)[8], 0.5);
    }

    #[test]
    fn slip_sets_are_valid() {
        let spec = ChainSpec::default();
        let m = build_chain(&spec).unwrap();
        let sets = slip_vertex_sets(&spec, 0.4).unwrap();
        assert!(m.with_sets(sets).is_ok());
        assert!(slip_vertex_sets(&spec, 0.95).is_err());
    }
}
