//! Finite robust MDPs: nominal kernel, rewards, discount and one
//! uncertainty set per state-action pair.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::{check_distribution, UncertaintySet};

/// Real vector over states (or state-action pairs for Q-tables).
pub type ValueVector = DVector<f64>;

/// Row-stochastic tensor `P(s' | s, a)` stored row-major as `[(s*A + a)*S + s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TransitionKernel {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidModel("state and action counts must be positive".into()));
        }
        if probs.len() != n_states * n_actions * n_states {
            return Err(Error::InvalidModel(format!(
                "kernel has {} entries, expected {}",
                probs.len(),
                n_states * n_actions * n_states
            )));
        }
        let kernel = TransitionKernel {
            n_states,
            n_actions,
            probs,
        };
        for s in 0..n_states {
            for a in 0..n_actions {
                check_distribution(kernel.row(s, a))
                    .map_err(|e| Error::InvalidModel(format!("kernel row ({s},{a}): {e}")))?;
            }
        }
        Ok(kernel)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.probs[start..start + self.n_states]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// `P_pi(s, s') = P(s' | s, pi(s))`.
    pub fn policy_matrix(&self, policy: &Policy) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_states, self.n_states, |s, t| {
            self.row(s, policy.action(s))[t]
        })
    }
}

/// Deterministic stationary policy.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Policy {
    actions: Vec<usize>,
}

impl Policy {
    pub fn new(actions: Vec<usize>, n_actions: usize) -> Result<Self> {
        if let Some((s, a)) = actions.iter().enumerate().find(|(_, a)| **a >= n_actions) {
            return Err(Error::Domain(format!(
                "policy picks action {a} at state {s}, only {n_actions} actions exist"
            )));
        }
        Ok(Policy { actions })
    }

    pub fn constant(n_states: usize, action: usize) -> Self {
        Policy {
            actions: vec![action; n_states],
        }
    }

    pub fn action(&self, s: usize) -> usize {
        self.actions[s]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// One-hot `S x A` action-probability matrix.
    pub fn probabilities(&self, n_actions: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.actions.len(), n_actions, |s, a| {
            if self.actions[s] == a {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// Tabular RMDP with `P = P0 + U` and rectangular per-(s,a) sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RmdpDocument", into = "RmdpDocument")]
pub struct TabularRmdp {
    kernel: TransitionKernel,
    reward: Vec<f64>,
    discount: f64,
    sets: Vec<UncertaintySet>,
}

impl TabularRmdp {
    /// `reward` and `sets` are indexed `s*A + a`.
    pub fn new(
        kernel: TransitionKernel,
        reward: Vec<f64>,
        discount: f64,
        sets: Vec<UncertaintySet>,
    ) -> Result<Self> {
        let pairs = kernel.n_states * kernel.n_actions;
        if reward.len() != pairs {
            return Err(Error::InvalidModel(format!(
                "reward has {} entries, expected {pairs}",
                reward.len()
            )));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidModel("rewards must be finite".into()));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::InvalidModel(format!("discount {discount} not in (0,1)")));
        }
        let mut model = TabularRmdp {
            kernel,
            reward,
            discount,
            sets: Vec::new(),
        };
        model.sets = model.bind_sets(sets, true)?;
        Ok(model)
    }

    /// Same model with every pair bound to the degenerate set.
    pub fn nominal(kernel: TransitionKernel, reward: Vec<f64>, discount: f64) -> Result<Self> {
        let pairs = kernel.n_states * kernel.n_actions;
        Self::new(kernel, reward, discount, vec![UncertaintySet::Degenerate; pairs])
    }

    /// Binds a list of per-pair sets to the kernel rows. With `check_valid`
    /// finite vertices must keep every row in the simplex.
    pub fn bind_sets(&self, sets: Vec<UncertaintySet>, check_valid: bool) -> Result<Vec<UncertaintySet>> {
        let pairs = self.n_states() * self.n_actions();
        if sets.len() != pairs {
            return Err(Error::InvalidModel(format!(
                "{} uncertainty sets given, expected one per state-action pair ({pairs})",
                sets.len()
            )));
        }
        let mut sets = sets;
        for (i, set) in sets.iter_mut().enumerate() {
            let (s, a) = (i / self.n_actions(), i % self.n_actions());
            let row = self.kernel.row(s, a);
            let wrap = |e: Error| Error::InvalidModel(format!("set for ({s},{a}): {e}"));
            set.validate().map_err(wrap)?;
            set.bind_nominal(row).map_err(wrap)?;
            if let Some(dim) = set.dim() {
                if dim != self.n_states() {
                    return Err(wrap(Error::Domain(format!(
                        "dimension {dim}, expected {}",
                        self.n_states()
                    ))));
                }
            }
            if check_valid {
                set.check_row(row).map_err(wrap)?;
            }
        }
        Ok(sets)
    }

    /// Copy of the model with different true sets.
    pub fn with_sets(&self, sets: Vec<UncertaintySet>) -> Result<Self> {
        Self::new(self.kernel.clone(), self.reward.clone(), self.discount, sets)
    }

    /// Copy of the model with a different nominal kernel. Simplex spheres
    /// are rebound to the new rows.
    pub fn with_kernel(&self, kernel: TransitionKernel) -> Result<Self> {
        if kernel.n_states != self.n_states() || kernel.n_actions != self.n_actions() {
            return Err(Error::InvalidModel("kernel shape differs from the model".into()));
        }
        let sets = self
            .sets
            .iter()
            .map(|set| match set {
                UncertaintySet::SimplexSphere { radius, .. } => UncertaintySet::SimplexSphere {
                    radius: *radius,
                    nominal: Vec::new(),
                },
                other => other.clone(),
            })
            .collect();
        Self::new(kernel, self.reward.clone(), self.discount, sets)
    }

    pub fn n_states(&self) -> usize {
        self.kernel.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.kernel.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn kernel(&self) -> &TransitionKernel {
        &self.kernel
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions() + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn set(&self, s: usize, a: usize) -> &UncertaintySet {
        &self.sets[self.pair(s, a)]
    }

    pub fn sets(&self) -> &[UncertaintySet] {
        &self.sets
    }

    /// Flat state-action index, also the set identifier of the pair.
    pub fn pair(&self, s: usize, a: usize) -> usize {
        s * self.n_actions() + a
    }

    /// `max |r(s,a)|`.
    pub fn reward_scale(&self) -> f64 {
        self.reward.iter().fold(0.0_f64, |m, r| m.max(r.abs()))
    }

    pub fn policy_reward(&self, policy: &Policy) -> DVector<f64> {
        DVector::from_fn(self.n_states(), |s, _| self.reward(s, policy.action(s)))
    }

    pub fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.len() != self.n_states() {
            return Err(Error::Domain(format!(
                "policy covers {} states, model has {}",
                policy.len(),
                self.n_states()
            )));
        }
        Policy::new(policy.actions.clone(), self.n_actions()).map(|_| ())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// On-disk form of [`TabularRmdp`]: row-major `reward` (`s*A + a`) and
/// `kernel` (`(s*A + a)*S + s'`), one set descriptor per pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub discount: f64,
    pub reward: Vec<f64>,
    pub kernel: Vec<f64>,
    pub sets: Vec<UncertaintySet>,
}

impl TryFrom<RmdpDocument> for TabularRmdp {
    type Error = Error;

    fn try_from(doc: RmdpDocument) -> Result<Self> {
        let kernel = TransitionKernel::new(doc.n_states, doc.n_actions, doc.kernel)?;
        TabularRmdp::new(kernel, doc.reward, doc.discount, doc.sets)
    }
}

impl From<TabularRmdp> for RmdpDocument {
    fn from(m: TabularRmdp) -> Self {
        RmdpDocument {
            n_states: m.kernel.n_states,
            n_actions: m.kernel.n_actions,
            discount: m.discount,
            reward: m.reward,
            kernel: m.kernel.probs,
            sets: m.sets,
        }
    }
}
