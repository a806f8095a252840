//! Exact robust dynamic programming on tabular models.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{solve, sup_norm};
use crate::policy_chain::{fixed_point, PolicyChain};
use crate::rmdp::{Policy, TabularRmdp, TransitionKernel, ValueVector};

/// Non-robust value of `policy` under an arbitrary kernel: solves
/// `(I - alpha P_pi) V = r_pi`.
pub fn nonrobust_value(rmdp: &TabularRmdp, kernel: &TransitionKernel, policy: &Policy) -> Result<ValueVector> {
    if kernel.n_states() != rmdp.n_states() || kernel.n_actions() != rmdp.n_actions() {
        return Err(Error::Domain("kernel shape differs from the model".into()));
    }
    rmdp.check_policy(policy)?;
    let n = rmdp.n_states();
    let m = DMatrix::identity(n, n) - kernel.policy_matrix(policy) * rmdp.discount();
    solve(&m, &rmdp.policy_reward(policy))
}

/// `T_pi(V) = r_pi + alpha P0_pi V + alpha sigma_{U_pi}(V)`.
pub fn robust_bellman_policy(rmdp: &TabularRmdp, policy: &Policy, v: &ValueVector) -> Result<ValueVector> {
    PolicyChain::state_values(rmdp, policy)?.bellman(v)
}

/// Robust backup of every action at `s`.
fn action_backups(rmdp: &TabularRmdp, s: usize, v: &ValueVector) -> Result<Vec<f64>> {
    let alpha = rmdp.discount();
    (0..rmdp.n_actions())
        .map(|a| {
            let row = rmdp.kernel().row(s, a);
            let expected: f64 = row.iter().zip(v.iter()).map(|(p, x)| p * x).sum();
            let sigma = rmdp.set(s, a).support_inf(v)?.value;
            Ok(rmdp.reward(s, a) + alpha * expected + alpha * sigma)
        })
        .collect()
}

/// Index of the first maximum.
pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (a, q) in values.iter().enumerate().skip(1) {
        if *q > values[best] {
            best = a;
        }
    }
    best
}

/// `T(V) = max_a` of the robust backups, with the argmax policy. Ties go
/// to the lowest action index.
pub fn robust_bellman_optimal(rmdp: &TabularRmdp, v: &ValueVector) -> Result<(ValueVector, Policy)> {
    check_len(rmdp, v)?;
    let mut out = DVector::zeros(rmdp.n_states());
    let mut actions = Vec::with_capacity(rmdp.n_states());
    for s in 0..rmdp.n_states() {
        let q = action_backups(rmdp, s, v)?;
        let a = argmax_first(&q);
        out[s] = q[a];
        actions.push(a);
    }
    Ok((out, Policy::new(actions, rmdp.n_actions())?))
}

fn check_len(rmdp: &TabularRmdp, v: &ValueVector) -> Result<()> {
    if v.len() != rmdp.n_states() {
        return Err(Error::Domain(format!(
            "value vector of length {}, model has {} states",
            v.len(),
            rmdp.n_states()
        )));
    }
    Ok(())
}

/// Robust value iteration from `V = 0`. Returns `V` with
/// `|T(V) - V|_inf <= tol` and the greedy policy at `V`.
pub fn robust_value_iteration(rmdp: &TabularRmdp, tol: f64, max_iters: usize) -> Result<(ValueVector, Policy)> {
    let v = fixed_point(DVector::zeros(rmdp.n_states()), tol, max_iters, |v| {
        robust_bellman_optimal(rmdp, v).map(|(tv, _)| tv)
    })?;
    let (_, policy) = robust_bellman_optimal(rmdp, &v)?;
    Ok((v, policy))
}

/// Fixed point of `T_pi` by successive approximation from `V = 0`.
pub fn robust_policy_evaluation_exact(
    rmdp: &TabularRmdp,
    policy: &Policy,
    tol: f64,
    max_iters: usize,
) -> Result<ValueVector> {
    PolicyChain::state_values(rmdp, policy)?.evaluate(tol, max_iters)
}

/// Robust TD(lambda) operator applied to `v`.
pub fn robust_td_lambda_apply(rmdp: &TabularRmdp, policy: &Policy, v: &ValueVector, lambda: f64) -> Result<ValueVector> {
    PolicyChain::state_values(rmdp, policy)?.td_lambda(v, lambda)
}

/// Outcome of exact policy iteration.
#[derive(Debug, Clone, Serialize)]
pub struct PolicyIterationResult {
    pub values: ValueVector,
    pub policy: Policy,
    pub iterations: usize,
}

/// Exact policy iteration. With `robust` the evaluation step is robust
/// evaluation to `tol`; otherwise the sets are ignored and each policy is
/// evaluated by a linear solve on the nominal kernel. An action only
/// replaces the incumbent when it improves the backup by more than
/// `10 tol`, so the loop terminates despite evaluation error.
pub fn policy_iteration(rmdp: &TabularRmdp, robust: bool, tol: f64, max_iters: usize) -> Result<PolicyIterationResult> {
    let model = if robust {
        rmdp.clone()
    } else {
        TabularRmdp::nominal(rmdp.kernel().clone(), rmdp.rewards().to_vec(), rmdp.discount())?
    };
    let eval_iters = 100 * ((tol.ln() / model.discount().ln()).ceil().max(1.0) as usize) + 100;
    let mut policy = Policy::constant(model.n_states(), 0);
    for k in 0..max_iters {
        let values = if robust {
            robust_policy_evaluation_exact(&model, &policy, tol, eval_iters)?
        } else {
            nonrobust_value(&model, model.kernel(), &policy)?
        };
        let mut actions = policy.actions().to_vec();
        let mut changed = false;
        for (s, current) in actions.iter_mut().enumerate() {
            let q = action_backups(&model, s, &values)?;
            let best = argmax_first(&q);
            if q[best] > q[*current] + 10.0 * tol {
                *current = best;
                changed = true;
            }
        }
        if !changed {
            return Ok(PolicyIterationResult {
                values,
                policy,
                iterations: k + 1,
            });
        }
        policy = Policy::new(actions, model.n_actions())?;
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        residual: f64::NAN,
    })
}

/// `|T_pi V - V|_inf`.
pub fn policy_residual(rmdp: &TabularRmdp, policy: &Policy, v: &ValueVector) -> Result<f64> {
    Ok(sup_norm(&(robust_bellman_policy(rmdp, policy, v)? - v)))
}
