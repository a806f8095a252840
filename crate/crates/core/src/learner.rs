//! Online RLSPE(lambda): eligibility traces, running least-squares
//! statistics and the robust correction term.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::{support_inf_gram, GramSign, UncertaintySet};

/// Step sizes `gamma_t = gamma0 / (t0 + t)^kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    PowerLaw { gamma0: f64, t0: f64, kappa: f64 },
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::PowerLaw {
            gamma0: 1.0,
            t0: 10.0,
            kappa: 0.75,
        }
    }
}

impl StepSchedule {
    pub fn power_law(gamma0: f64, t0: f64, kappa: f64) -> Result<Self> {
        let s = StepSchedule::PowerLaw { gamma0, t0, kappa };
        s.validate()?;
        Ok(s)
    }

    /// `kappa` must lie in `(0.5, 1]` for the Robbins-Monro conditions.
    pub fn validate(&self) -> Result<()> {
        let StepSchedule::PowerLaw { gamma0, t0, kappa } = *self;
        if !(kappa > 0.5 && kappa <= 1.0) {
            return Err(Error::Config(format!("kappa {kappa} not in (0.5, 1]")));
        }
        if !(gamma0 >= 0.0 && gamma0.is_finite()) || !(t0 >= 0.0 && t0.is_finite()) {
            return Err(Error::Config("gamma0 and t0 must be finite and >= 0".into()));
        }
        if t0 == 0.0 && gamma0 > 0.0 {
            // gamma_0 would be infinite.
            return Err(Error::Config("t0 must be positive".into()));
        }
        Ok(())
    }

    pub fn gamma(&self, t: usize) -> f64 {
        let StepSchedule::PowerLaw { gamma0, t0, kappa } = *self;
        if gamma0 == 0.0 {
            return 0.0;
        }
        gamma0 / (t0 + t as f64).powf(kappa)
    }
}

/// One observed transition in feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    /// `phi(s_t)` or `phi(s_t, a_t)`.
    pub phi_now: DVector<f64>,
    pub reward: f64,
    /// Feature of the successor under the evaluated policy (zero after a
    /// terminal transition).
    pub phi_next: DVector<f64>,
    /// Identifier of the approximate set of the current state (or pair).
    pub set_id: usize,
}

/// Evaluates `sigma_u(Phi w)` for the set identifiers seen by a learner.
pub trait SupportOracle {
    fn evaluate(&self, w: &DVector<f64>, set_ids: &[usize]) -> Result<Vec<f64>>;
}

/// Every set is `{0}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoUncertainty;

impl SupportOracle for NoUncertainty {
    fn evaluate(&self, _w: &DVector<f64>, set_ids: &[usize]) -> Result<Vec<f64>> {
        Ok(vec![0.0; set_ids.len()])
    }
}

/// One shared sphere evaluated through the closed form
/// `-sqrt(r w' Phi' Phi w)` (or its positive variant).
#[derive(Debug, Clone)]
pub struct GramSupport {
    pub gram: DMatrix<f64>,
    pub radius_param: f64,
    pub sign: GramSign,
}

impl SupportOracle for GramSupport {
    fn evaluate(&self, w: &DVector<f64>, set_ids: &[usize]) -> Result<Vec<f64>> {
        let value = support_inf_gram(&self.gram, w, self.radius_param, self.sign)?;
        Ok(vec![value; set_ids.len()])
    }
}

/// Explicit per-identifier sets acting on the state values
/// `V = value_features w` (rows are the evaluated policy's features).
#[derive(Debug, Clone)]
pub struct ExplicitSupport {
    pub value_features: DMatrix<f64>,
    pub sets: Vec<UncertaintySet>,
}

impl SupportOracle for ExplicitSupport {
    fn evaluate(&self, w: &DVector<f64>, set_ids: &[usize]) -> Result<Vec<f64>> {
        let v = &self.value_features * w;
        set_ids
            .iter()
            .map(|&id| {
                let set = self
                    .sets
                    .get(id)
                    .ok_or_else(|| Error::Config(format!("unknown uncertainty set id {id}")))?;
                Ok(set.support_inf(&v)?.value)
            })
            .collect()
    }
}

/// Running state of one RLSPE(lambda) run.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub w: DVector<f64>,
    pub z: DVector<f64>,
    pub a_acc: DMatrix<f64>,
    pub b_acc: DMatrix<f64>,
    pub b_vec_acc: DVector<f64>,
    /// `(B_acc + ridge I)^{-1}`, kept current by rank-one updates.
    pub b_inv: DMatrix<f64>,
    /// Sum of `z_tau` over the samples whose set is the key.
    pub trace_by_set: BTreeMap<usize, DVector<f64>>,
    /// Samples observed.
    pub t: usize,
    /// Weight updates performed.
    pub steps: usize,
    pub schedule: StepSchedule,
    /// Ridge added to the accumulated `B`, i.e. `ridge / (t+1)` on `B_t`.
    pub ridge: f64,
    /// Shrinkage `eta` of the regularized fixed point
    /// `(A_t - eta I) w + b_t + C_t(w) = 0`; zero by default.
    pub l2: f64,
    pub lambda: f64,
    pub discount: f64,
}

/// Samples between exact refactorizations of `b_inv`.
const REFRESH_EVERY: usize = 4096;

/// Fresh learner with `L` features. `w0` defaults to zero and `ridge` to
/// `1e-6 L`.
pub fn learner_init(
    n_features: usize,
    w0: Option<DVector<f64>>,
    lambda: f64,
    discount: f64,
    schedule: StepSchedule,
    ridge: Option<f64>,
) -> Result<LearnerState> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda {lambda} not in [0,1)")));
    }
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::Domain(format!("discount {discount} not in (0,1)")));
    }
    schedule.validate()?;
    let ridge = ridge.unwrap_or(1e-6 * n_features as f64);
    if !(ridge > 0.0 && ridge.is_finite()) {
        return Err(Error::Domain(format!("ridge {ridge} must be positive")));
    }
    let w = w0.unwrap_or_else(|| DVector::zeros(n_features));
    if w.len() != n_features {
        return Err(Error::Domain(format!(
            "initial weights of length {}, expected {n_features}",
            w.len()
        )));
    }
    Ok(LearnerState {
        w,
        z: DVector::zeros(n_features),
        a_acc: DMatrix::zeros(n_features, n_features),
        b_acc: DMatrix::zeros(n_features, n_features),
        b_vec_acc: DVector::zeros(n_features),
        b_inv: DMatrix::identity(n_features, n_features) / ridge,
        trace_by_set: BTreeMap::new(),
        t: 0,
        steps: 0,
        schedule,
        ridge,
        l2: 0.0,
        lambda,
        discount,
    })
}

impl LearnerState {
    pub fn n_features(&self) -> usize {
        self.w.len()
    }

    /// Clears the trace at the start of a new trajectory.
    pub fn start_trajectory(&mut self) {
        self.z.fill(0.0);
    }

    /// Folds one transition into the trace and the running sums.
    pub fn observe(&mut self, sample: &TransitionSample) -> Result<()> {
        let l = self.n_features();
        if sample.phi_now.len() != l || sample.phi_next.len() != l {
            return Err(Error::Domain(format!(
                "sample features of length {}/{}, learner has {l}",
                sample.phi_now.len(),
                sample.phi_next.len()
            )));
        }
        self.z *= self.discount * self.lambda;
        self.z += &sample.phi_now;
        let mut td = sample.phi_next.clone() * self.discount;
        td -= &sample.phi_now;
        self.a_acc.ger(1.0, &self.z, &td, 1.0);
        self.b_acc.ger(1.0, &sample.phi_now, &sample.phi_now, 1.0);
        self.b_vec_acc.axpy(sample.reward, &self.z, 1.0);
        if (self.t + 1) % REFRESH_EVERY == 0 {
            self.refresh_inverse()?;
        } else {
            // Sherman-Morrison: (M + x x')^{-1} = M^{-1} - M^{-1} x x' M^{-1} / (1 + x' M^{-1} x).
            let mx = &self.b_inv * &sample.phi_now;
            let denom = 1.0 + sample.phi_now.dot(&mx);
            self.b_inv.ger(-1.0 / denom, &mx, &mx, 1.0);
        }
        self.trace_by_set
            .entry(sample.set_id)
            .and_modify(|agg| *agg += &self.z)
            .or_insert_with(|| self.z.clone());
        self.t += 1;
        Ok(())
    }

    /// `A_t`, `B_t`, `b_t` (averages over the observed samples).
    pub fn statistics(&self) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        let n = self.t.max(1) as f64;
        (&self.a_acc / n, &self.b_acc / n, &self.b_vec_acc / n)
    }

    /// `C_t(w) = alpha/(t+1) sum_u trace_by_set[u] sigma_u(Phi w)`.
    pub fn robust_correction(&self, w: &DVector<f64>, oracle: &dyn SupportOracle) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.n_features());
        if self.t == 0 {
            return Ok(out);
        }
        let ids: Vec<usize> = self.trace_by_set.keys().copied().collect();
        let sigmas = oracle.evaluate(w, &ids)?;
        let scale = self.discount / self.t as f64;
        for (agg, sigma) in self.trace_by_set.values().zip(sigmas) {
            out.axpy(scale * sigma, agg, 1.0);
        }
        Ok(out)
    }

    /// Recomputes `b_inv` from `B_acc` by Cholesky.
    pub fn refresh_inverse(&mut self) -> Result<()> {
        let mut m = self.b_acc.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += self.ridge;
        }
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::Numeric("B_t is not positive definite even with the ridge".into()))?;
        self.b_inv = chol.inverse();
        Ok(())
    }

    /// Sets the shrinkage `eta >= 0`. Directions the data never excites are
    /// otherwise left free and drift under the noise.
    pub fn with_l2(mut self, eta: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::Domain(format!("l2 shrinkage {eta} must be >= 0")));
        }
        self.l2 = eta;
        Ok(self)
    }

    /// Direction `x = (B_t + ridge/(t+1) I)^{-1}(A_t w + b_t + C_t(w))` at the
    /// current weights. The `1/(t+1)` factors cancel, so it is computed as
    /// `b_inv (A_acc w + b_acc + alpha sum_u trace_by_set[u] sigma_u)`.
    ///
    /// With shrinkage `eta > 0` both sides are shifted:
    /// `(B_t + eta I) x = (A_t - eta I) w + b_t + C_t(w)`, solved by Cholesky
    /// at `O(L^3)` per step, so unexcited directions decay as `(1 - gamma_t)`.
    pub fn direction(&self, oracle: &dyn SupportOracle) -> Result<DVector<f64>> {
        if self.t == 0 {
            return Err(Error::Domain("learner step needs at least one sample".into()));
        }
        let n = self.t as f64;
        let correction = self.robust_correction(&self.w, oracle)? * n;
        let mut rhs = &self.a_acc * &self.w + &self.b_vec_acc;
        rhs += &correction;
        let x = if self.l2 > 0.0 {
            rhs.axpy(-self.l2 * n, &self.w, 1.0);
            let mut m = self.b_acc.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += self.ridge + self.l2 * n;
            }
            m.cholesky()
                .ok_or_else(|| Error::Numeric("shifted B_t is not positive definite".into()))?
                .solve(&rhs)
        } else {
            &self.b_inv * rhs
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite learner direction".into()));
        }
        Ok(x)
    }

    /// `w <- w + gamma_t x` with `x` from [`direction`](Self::direction).
    pub fn learner_step(&mut self, oracle: &dyn SupportOracle) -> Result<&DVector<f64>> {
        let x = self.direction(oracle)?;
        let gamma = self.schedule.gamma(self.steps);
        self.w.axpy(gamma, &x, 1.0);
        self.steps += 1;
        Ok(&self.w)
    }
}

/// Items of a sample stream.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamEvent {
    /// A new trajectory begins; the trace is cleared.
    Reset,
    Sample(TransitionSample),
}

/// Why [`run_to_convergence`] returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    MaxSteps,
    StreamExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub w: DVector<f64>,
    pub steps: usize,
    pub converged: bool,
    pub stop: StopReason,
    /// `|w_t - w_{t-1}|_2` of the last step.
    pub last_change: f64,
}

/// Observes one sample and takes one step per stream item until
/// `|w_t - w_{t-1}|_2 < epsilon0` (tested once at least `min_steps` steps
/// were taken), `max_steps` steps, or the end of the stream.
pub fn run_to_convergence<I>(
    state: &mut LearnerState,
    stream: I,
    oracle: &dyn SupportOracle,
    epsilon0: f64,
    max_steps: usize,
    min_steps: usize,
) -> Result<ConvergenceReport>
where
    I: IntoIterator<Item = StreamEvent>,
{
    if !(epsilon0 > 0.0) {
        return Err(Error::Domain(format!("epsilon0 {epsilon0} must be positive")));
    }
    let mut steps = 0;
    let mut last_change = f64::INFINITY;
    let mut stream = stream.into_iter();
    let stop = loop {
        if steps >= max_steps {
            break StopReason::MaxSteps;
        }
        let Some(event) = stream.next() else {
            break StopReason::StreamExhausted;
        };
        let sample = match event {
            StreamEvent::Reset => {
                state.start_trajectory();
                continue;
            }
            StreamEvent::Sample(sample) => sample,
        };
        state.observe(&sample)?;
        let before = state.w.clone();
        state.learner_step(oracle)?;
        steps += 1;
        last_change = (&state.w - before).norm();
        if steps >= min_steps.max(1) && last_change < epsilon0 {
            break StopReason::Tolerance;
        }
    };
    Ok(ConvergenceReport {
        w: state.w.clone(),
        steps,
        converged: stop == StopReason::Tolerance,
        stop,
        last_change,
    })
}

/// One row of the transition log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub t: usize,
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    pub set_id: usize,
}

/// Writes `t,s,a,r,s_next,set_id` CSV.
pub fn write_transition_log<W: Write>(records: &[TransitionRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "t,s,a,r,s_next,set_id")?;
    for r in records {
        writeln!(out, "{},{},{},{},{},{}", r.t, r.s, r.a, r.r, r.s_next, r.set_id)?;
    }
    Ok(())
}
