//! A fixed policy turns an RMDP into a robust Markov reward process over
//! `n` rows: states (value form) or state-action pairs (Q form). All exact
//! operators of the crate act on this representation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{solve, solve_matrix, sup_norm};
use crate::rmdp::{Policy, TabularRmdp};
use crate::uncertainty::UncertaintySet;

/// Robust Markov reward process `X -> r + alpha P X + alpha sigma(X)`.
///
/// Row `i` perturbs the state-value vector `Sel X` with its own set, where
/// `Sel` is an `S x n` selector (identity in value form).
#[derive(Debug, Clone)]
pub struct PolicyChain {
    transition: DMatrix<f64>,
    reward: DVector<f64>,
    discount: f64,
    sets: Vec<UncertaintySet>,
    selector: Option<DMatrix<f64>>,
}

impl PolicyChain {
    pub fn from_parts(
        transition: DMatrix<f64>,
        reward: DVector<f64>,
        discount: f64,
        sets: Vec<UncertaintySet>,
        selector: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = transition.nrows();
        if transition.ncols() != n || reward.len() != n || sets.len() != n {
            return Err(Error::Domain(format!(
                "chain parts disagree: transition {}x{}, reward {}, sets {}",
                n,
                transition.ncols(),
                reward.len(),
                sets.len()
            )));
        }
        if let Some(sel) = &selector {
            if sel.ncols() != n {
                return Err(Error::Domain(format!(
                    "selector has {} columns, chain has {n} rows",
                    sel.ncols()
                )));
            }
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::Domain(format!("discount {discount} not in (0,1)")));
        }
        Ok(PolicyChain {
            transition,
            reward,
            discount,
            sets,
            selector,
        })
    }

    /// Value form under the model's own sets.
    pub fn state_values(rmdp: &TabularRmdp, policy: &Policy) -> Result<Self> {
        Self::build_state_values(rmdp, policy, rmdp.sets())
    }

    /// Value form with replacement sets (one per state-action pair), e.g. an
    /// approximation of the true sets. Simplex spheres are bound to the
    /// kernel rows; finite vertices are not required to stay in the simplex.
    pub fn state_values_with(rmdp: &TabularRmdp, policy: &Policy, sets: &[UncertaintySet]) -> Result<Self> {
        let bound = rmdp.bind_sets(sets.to_vec(), false)?;
        Self::build_state_values(rmdp, policy, &bound)
    }

    fn build_state_values(rmdp: &TabularRmdp, policy: &Policy, sets: &[UncertaintySet]) -> Result<Self> {
        rmdp.check_policy(policy)?;
        let chosen = (0..rmdp.n_states())
            .map(|s| sets[rmdp.pair(s, policy.action(s))].clone())
            .collect();
        Self::from_parts(
            rmdp.kernel().policy_matrix(policy),
            rmdp.policy_reward(policy),
            rmdp.discount(),
            chosen,
            None,
        )
    }

    /// Q form: rows are pairs `s*A + a`, the next-state value is
    /// `V(s') = sum_a probs(s', a) Q(s', a)`.
    pub fn action_values(
        rmdp: &TabularRmdp,
        probs: &DMatrix<f64>,
        sets: Option<&[UncertaintySet]>,
    ) -> Result<Self> {
        let (n_s, n_a) = (rmdp.n_states(), rmdp.n_actions());
        if probs.nrows() != n_s || probs.ncols() != n_a {
            return Err(Error::Domain(format!(
                "action probabilities are {}x{}, expected {n_s}x{n_a}",
                probs.nrows(),
                probs.ncols()
            )));
        }
        for s in 0..n_s {
            let row: Vec<f64> = probs.row(s).iter().copied().collect();
            crate::uncertainty::check_distribution(&row)
                .map_err(|e| Error::Domain(format!("action distribution at state {s}: {e}")))?;
        }
        let sets = match sets {
            Some(sets) => rmdp.bind_sets(sets.to_vec(), false)?,
            None => rmdp.sets().to_vec(),
        };
        let n = n_s * n_a;
        let mut selector = DMatrix::zeros(n_s, n);
        for s in 0..n_s {
            for a in 0..n_a {
                selector[(s, s * n_a + a)] = probs[(s, a)];
            }
        }
        let to_state = DMatrix::from_fn(n, n_s, |i, t| rmdp.kernel().row(i / n_a, i % n_a)[t]);
        let transition = &to_state * &selector;
        let reward = DVector::from_column_slice(rmdp.rewards());
        Self::from_parts(transition, reward, rmdp.discount(), sets, Some(selector))
    }

    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn reward(&self) -> &DVector<f64> {
        &self.reward
    }

    pub fn sets(&self) -> &[UncertaintySet] {
        &self.sets
    }

    pub fn selector(&self) -> Option<&DMatrix<f64>> {
        self.selector.as_ref()
    }

    /// Copy with replacement per-row sets.
    pub fn with_sets(&self, sets: Vec<UncertaintySet>) -> Result<Self> {
        Self::from_parts(
            self.transition.clone(),
            self.reward.clone(),
            self.discount,
            sets,
            self.selector.clone(),
        )
    }

    /// State-value vector seen by the uncertainty sets.
    pub fn state_argument(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.selector {
            Some(sel) => sel * x,
            None => x.clone(),
        }
    }

    fn check_len(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.len() {
            return Err(Error::Domain(format!(
                "vector of length {}, chain has {} rows",
                x.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// Per-row support values `sigma_{U_i}(Sel x)`.
    pub fn robust_term(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(x)?;
        let v = self.state_argument(x);
        let mut out = DVector::zeros(self.len());
        for (i, set) in self.sets.iter().enumerate() {
            out[i] = set.support_inf(&v)?.value;
        }
        Ok(out)
    }

    /// Robust one-step backup `r + alpha P x + alpha sigma(x)`.
    pub fn bellman(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let sigma = self.robust_term(x)?;
        let mut out = &self.reward + (&self.transition * x) * self.discount;
        out.axpy(self.discount, &sigma, 1.0);
        Ok(out)
    }

    /// Fixed point of [`bellman`](Self::bellman) by successive
    /// approximation from zero.
    pub fn evaluate(&self, tol: f64, max_iters: usize) -> Result<DVector<f64>> {
        fixed_point(DVector::zeros(self.len()), tol, max_iters, |x| self.bellman(x))
    }

    /// Nominal value `(I - alpha P)^{-1} r`, ignoring the sets.
    pub fn nominal_value(&self) -> Result<DVector<f64>> {
        let m = DMatrix::identity(self.len(), self.len()) - &self.transition * self.discount;
        solve(&m, &self.reward)
    }

    /// `(I - alpha lambda P)^{-1}`.
    pub fn resolvent(&self, lambda: f64) -> Result<DMatrix<f64>> {
        let n = self.len();
        let m = DMatrix::identity(n, n) - &self.transition * (self.discount * lambda);
        solve_matrix(&m, &DMatrix::identity(n, n))
    }

    /// `max |r_i|`.
    pub fn reward_scale(&self) -> f64 {
        sup_norm(&self.reward)
    }

    /// Robust TD(lambda): `(1-lambda) sum_m lambda^m T^{m+1} x`, truncated at
    /// the first `m` with `lambda^{m+1} (2 |x|_inf + r_max/(1-alpha)) < 1e-12`.
    pub fn td_lambda(&self, x: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
        check_lambda(lambda)?;
        if lambda == 0.0 {
            return self.bellman(x);
        }
        let scale = 2.0 * sup_norm(x) + self.reward_scale() / (1.0 - self.discount);
        let mut acc = DVector::zeros(self.len());
        let mut iterate = x.clone();
        let mut weight = 1.0 - lambda;
        let mut tail = lambda;
        loop {
            iterate = self.bellman(&iterate)?;
            acc.axpy(weight, &iterate, 1.0);
            if tail * scale < 1e-12 {
                return Ok(acc);
            }
            weight *= lambda;
            tail *= lambda;
        }
    }
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::Domain(format!("lambda {lambda} not in [0,1)")))
    }
}

/// Iterates `x <- f(x)` until `|f(x) - x|_inf <= tol`, returning the last
/// image.
pub(crate) fn fixed_point<F>(start: DVector<f64>, tol: f64, max_iters: usize, mut f: F) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance {tol} must be positive")));
    }
    let mut x = start;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let next = f(&x)?;
        residual = sup_norm(&(&next - &x));
        x = next;
        if residual <= tol {
            return Ok(x);
        }
        if !residual.is_finite() {
            break;
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        residual,
    })
}
