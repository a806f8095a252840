//! Linear value-function approximation: stationary weights, the weighted
//! projection, the approximate robust TD(lambda) operator in closed form
//! and the exact projected fixed point.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::{solve, weighted_norm};
use crate::policy_chain::{check_lambda, PolicyChain};
use crate::rmdp::{Policy, TabularRmdp, ValueVector};
use crate::uncertainty::{contraction_coefficient, ContractionInputs, UncertaintySet};

const STEADY_TOL: f64 = 1e-12;
const STEADY_MAX_ITERS: usize = 1_000_000;
const STEADY_MIN_MASS: f64 = 1e-9;
const STEADY_CHECK_TOL: f64 = 1e-10;
const DIVERGENCE_LIMIT: f64 = 1e12;

/// Positive probability weights `d` over the rows of a chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyDistribution {
    pub d: DVector<f64>,
    pub d_min: f64,
}

impl SteadyDistribution {
    /// Normalizes nonnegative weights; every entry must end up positive.
    pub fn from_weights(weights: DVector<f64>) -> Result<Self> {
        let total = weights.sum();
        if !(total > 0.0) || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Domain("weights must be nonnegative with positive sum".into()));
        }
        let d = weights / total;
        if let Some((s, _)) = d.iter().enumerate().find(|(_, w)| **w <= 0.0) {
            return Err(Error::AssumptionViolation(format!("state {s} has zero weight")));
        }
        let d_min = d.min();
        Ok(SteadyDistribution { d, d_min })
    }

    pub fn uniform(n: usize) -> Self {
        SteadyDistribution {
            d: DVector::from_element(n, 1.0 / n as f64),
            d_min: 1.0 / n as f64,
        }
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        weighted_norm(v, &self.d)
    }
}

/// Stationary distribution of a row-stochastic matrix.
///
/// Irreducibility is checked on the support graph first. The distribution
/// is then found by power iteration on the lazy chain `(I + P)/2` from the
/// uniform vector, which has the same fixed point and never oscillates.
pub fn steady_state(p: &DMatrix<f64>) -> Result<SteadyDistribution> {
    let n = p.nrows();
    if n == 0 || p.ncols() != n {
        return Err(Error::Domain("transition matrix must be square and non-empty".into()));
    }
    for (s, row) in p.row_iter().enumerate() {
        if row.iter().any(|x| !x.is_finite() || *x < 0.0) || (row.sum() - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("row {s} is not a distribution")));
        }
    }
    if let Some(s) = unreachable_state(p) {
        return Err(Error::AssumptionViolation(format!(
            "chain is not irreducible: state {s} does not communicate with state 0"
        )));
    }
    let pt = p.transpose();
    let mut d = DVector::from_element(n, 1.0 / n as f64);
    let mut converged = false;
    for _ in 0..STEADY_MAX_ITERS {
        let next = (&d + &pt * &d) * 0.5;
        let diff = (&next - &d).lp_norm(1);
        d = next;
        if diff < STEADY_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: STEADY_MAX_ITERS,
            residual: (&pt * &d - &d).lp_norm(1),
        });
    }
    d /= d.sum();
    if let Some((s, w)) = d.iter().enumerate().find(|(_, w)| **w <= STEADY_MIN_MASS) {
        return Err(Error::AssumptionViolation(format!(
            "steady-state mass {w:e} at state {s} is not positive"
        )));
    }
    let residual = (&pt * &d - &d).amax();
    if residual > STEADY_CHECK_TOL {
        return Err(Error::NonConvergence {
            iterations: STEADY_MAX_ITERS,
            residual,
        });
    }
    SteadyDistribution::from_weights(d)
}

/// First state that is not mutually reachable with state 0.
fn unreachable_state(p: &DMatrix<f64>) -> Option<usize> {
    let n = p.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let w = if forward { p[(i, j)] } else { p[(j, i)] };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    };
    let (fwd, bwd) = (reach(true), reach(false));
    (0..n).find(|&s| !(fwd[s] && bwd[s]))
}

/// `Pi V = Phi (Phi' D Phi)^{-1} Phi' D V`.
pub fn project(phi: &FeatureMatrix, d: &SteadyDistribution, v: &ValueVector) -> Result<ValueVector> {
    if v.len() != phi.n_rows() {
        return Err(Error::Domain(format!(
            "vector of length {}, feature matrix has {} rows",
            v.len(),
            phi.n_rows()
        )));
    }
    let weights = weighted_solve(phi, d, &(phi.phi().transpose() * v.component_mul(&d.d)))?;
    Ok(phi.phi() * weights)
}

/// Solves `(Phi' D Phi) x = rhs` by Cholesky.
fn weighted_solve(phi: &FeatureMatrix, d: &SteadyDistribution, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let b = phi.weighted_gram(&d.d)?;
    let chol = b.cholesky().ok_or(Error::RankDeficient {
        rank: 0,
        expected: phi.n_features(),
    })?;
    Ok(chol.solve(rhs))
}

/// Closed form of the approximate robust TD(lambda) operator on a chain:
/// `M (r + alpha sigma(V)) + alpha (1 - lambda) P M V` with
/// `M = (I - alpha lambda P)^{-1}`.
pub fn approx_td_lambda(chain: &PolicyChain, v: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    let n = chain.len();
    let alpha = chain.discount();
    let sigma = chain.robust_term(v)?;
    let m = DMatrix::identity(n, n) - chain.transition() * (alpha * lambda);
    let lu = m.lu();
    let fail = || Error::Numeric("resolvent solve failed".into());
    let mut source = chain.reward().clone();
    source.axpy(alpha, &sigma, 1.0);
    let first = lu.solve(&source).ok_or_else(fail)?;
    let mv = lu.solve(v).ok_or_else(fail)?;
    let mut out = first;
    out.gemv(alpha * (1.0 - lambda), chain.transition(), &mv, 1.0);
    Ok(out)
}

/// Approximate robust TD(lambda) of `policy` with approximate sets
/// `sets_hat` (one per state-action pair).
pub fn approx_robust_td_apply(
    rmdp: &TabularRmdp,
    policy: &Policy,
    sets_hat: &[UncertaintySet],
    v: &ValueVector,
    lambda: f64,
) -> Result<ValueVector> {
    approx_td_lambda(&PolicyChain::state_values_with(rmdp, policy, sets_hat)?, v, lambda)
}

/// Model-based matrices of the projected iteration:
/// `A = Phi' D (alpha P - I) M Phi`, `B = Phi' D Phi`, `b = Phi' D M r` and
/// `C(w) = K sigma(Phi w)` with `K = alpha Phi' D M`.
#[derive(Debug, Clone)]
pub struct ExactMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub b_vec: DVector<f64>,
    pub c_kernel: DMatrix<f64>,
}

impl ExactMatrices {
    pub fn new(chain: &PolicyChain, phi: &FeatureMatrix, d: &SteadyDistribution, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        let n = chain.len();
        if phi.n_rows() != n || d.len() != n {
            return Err(Error::Domain(format!(
                "chain has {n} rows, features {} and weights {}",
                phi.n_rows(),
                d.len()
            )));
        }
        let alpha = chain.discount();
        let m = chain.resolvent(lambda)?;
        let mut phi_t_d = phi.phi().transpose();
        for (mut col, w) in phi_t_d.column_iter_mut().zip(d.d.iter()) {
            col *= *w;
        }
        let step = chain.transition() * alpha - DMatrix::identity(n, n);
        let a = &phi_t_d * step * &m * phi.phi();
        let b = phi.weighted_gram(&d.d)?;
        let phi_t_d_m = &phi_t_d * &m;
        let b_vec = &phi_t_d_m * chain.reward();
        let c_kernel = phi_t_d_m * alpha;
        Ok(ExactMatrices { a, b, b_vec, c_kernel })
    }

    pub fn c(&self, chain: &PolicyChain, phi: &FeatureMatrix, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.c_kernel * chain.robust_term(&(phi.phi() * w))?)
    }

    /// Non-robust LSTD(lambda) solution `-A^{-1} b`.
    pub fn lstd(&self) -> Result<DVector<f64>> {
        solve(&self.a, &(-&self.b_vec))
    }
}

/// Precondition of the projected iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContractionCheck {
    /// Require `c(alpha, beta, rho, lambda) < 1`.
    Inputs(ContractionInputs),
    /// Run without the check.
    Force,
}

#[derive(Debug, Clone)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub check: ContractionCheck,
    pub start: Option<DVector<f64>>,
}

impl FixedPointOptions {
    pub fn forced(tol: f64) -> Self {
        FixedPointOptions {
            tol,
            max_iters: 100_000,
            check: ContractionCheck::Force,
            start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub w: DVector<f64>,
    pub iterations: usize,
    /// 1 for the plain iteration, 0.5 when damping was needed.
    pub step_scale: f64,
}

/// Iterates `w <- w + B^{-1}(A w + C(w) + b)` until
/// `|Phi (w_{k+1} - w_k)|_d <= tol`. A divergent run is retried once with
/// the step halved.
pub fn projected_fixed_point(
    chain: &PolicyChain,
    phi: &FeatureMatrix,
    d: &SteadyDistribution,
    lambda: f64,
    options: &FixedPointOptions,
) -> Result<FixedPoint> {
    if !(options.tol > 0.0) {
        return Err(Error::Domain(format!("tolerance {} must be positive", options.tol)));
    }
    if let ContractionCheck::Inputs(inputs) = options.check {
        let c = contraction_coefficient(&inputs);
        if !c.is_contraction {
            return Err(Error::NonContraction(format!(
                "contraction coefficient {} >= 1; pass ContractionCheck::Force to run anyway",
                c.value
            )));
        }
    }
    let mats = ExactMatrices::new(chain, phi, d, lambda)?;
    let b_chol = mats.b.clone().cholesky().ok_or(Error::RankDeficient {
        rank: 0,
        expected: phi.n_features(),
    })?;
    let start = options
        .start
        .clone()
        .unwrap_or_else(|| DVector::zeros(phi.n_features()));
    if start.len() != phi.n_features() {
        return Err(Error::Domain("start vector has the wrong length".into()));
    }
    let mut last_norm = f64::NAN;
    for scale in [1.0, 0.5] {
        let mut w = start.clone();
        for k in 0..options.max_iters {
            let mut rhs = &mats.a * &w + mats.c(chain, phi, &w)?;
            rhs += &mats.b_vec;
            let delta = b_chol.solve(&rhs) * scale;
            w += &delta;
            last_norm = w.norm();
            if !last_norm.is_finite() || last_norm > DIVERGENCE_LIMIT {
                break;
            }
            if d.norm(&(phi.phi() * &delta)) <= options.tol {
                return Ok(FixedPoint {
                    w,
                    iterations: k + 1,
                    step_scale: scale,
                });
            }
            if k + 1 == options.max_iters {
                return Err(Error::NonConvergence {
                    iterations: options.max_iters,
                    residual: d.norm(&(phi.phi() * &delta)),
                });
            }
        }
    }
    Err(Error::NonContraction(format!(
        "weights diverged (|w| = {last_norm:e}) even with a halved step"
    )))
}

/// Projected fixed point `w_pi` of the approximate robust TD(lambda)
/// operator for `policy` under approximate sets `sets_hat`.
#[allow(clippy::too_many_arguments)]
pub fn exact_projected_fixed_point(
    rmdp: &TabularRmdp,
    policy: &Policy,
    sets_hat: &[UncertaintySet],
    phi: &FeatureMatrix,
    d: &SteadyDistribution,
    lambda: f64,
    options: &FixedPointOptions,
) -> Result<FixedPoint> {
    let chain = PolicyChain::state_values_with(rmdp, policy, sets_hat)?;
    projected_fixed_point(&chain, phi, d, lambda, options)
}

/// Result of the exploration-ratio check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExplorationCheck {
    pub feasible: bool,
    /// Smallest admissible `beta`; infinite when some next state reachable
    /// under the model set is never reached by the exploration policy.
    pub beta_min: f64,
}

/// Smallest `beta` with `alpha (P0 + u)(s'|s, pi(s)) <= beta P0(s'|s, pi_e(s))`
/// over every state, next state and vertex of the model sets.
pub fn verify_exploration_assumption(
    rmdp: &TabularRmdp,
    policy: &Policy,
    exploration: &Policy,
) -> Result<ExplorationCheck> {
    rmdp.check_policy(policy)?;
    rmdp.check_policy(exploration)?;
    let alpha = rmdp.discount();
    let mut beta_min = 0.0_f64;
    for s in 0..rmdp.n_states() {
        let a = policy.action(s);
        let row = rmdp.kernel().row(s, a);
        let explore = rmdp.kernel().row(s, exploration.action(s));
        let vertices: Vec<Vec<f64>> = match rmdp.set(s, a) {
            UncertaintySet::Degenerate => vec![vec![0.0; row.len()]],
            UncertaintySet::FiniteVertices { vertices } => vertices.clone(),
            other => return Err(Error::UnsupportedVariant(other.kind())),
        };
        for u in &vertices {
            for t in 0..row.len() {
                let numerator = alpha * (row[t] + u[t]);
                if numerator <= 1e-12 {
                    continue;
                }
                if explore[t] <= 0.0 {
                    return Ok(ExplorationCheck {
                        feasible: false,
                        beta_min: f64::INFINITY,
                    });
                }
                beta_min = beta_min.max(numerator / explore[t]);
            }
        }
    }
    Ok(ExplorationCheck {
        feasible: beta_min < 1.0,
        beta_min,
    })
}
