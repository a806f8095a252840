//! The incremental learner against batch formulas and exact model matrices.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use robust_lspi::envs::{build_chain, rollout, slip_vertex_sets, ChainSpec, TabularEnv};
use robust_lspi::linear_fa::ExactMatrices;
use robust_lspi::*;

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

struct Recorded {
    /// Per trajectory: (phi_now, reward, phi_next, set id).
    trajectories: Vec<Vec<(DVector<f64>, f64, DVector<f64>, usize)>>,
}

fn record(steps_per_traj: usize, n_traj: usize) -> (TabularRmdp, Policy, FeatureMatrix, Recorded) {
    let spec = ChainSpec::default();
    let model = build_chain(&spec).unwrap();
    let policy = Policy::new(vec![0, 1, 0, 0, 1, 1, 0, 1, 1, 1], 2).unwrap();
    let phi = FeatureMatrix::over_states(&FeatureMap::polynomial_1d(2, 0.0, 9.0), 10).unwrap();
    let env = TabularEnv::new(model.clone());
    let mut trajectories = Vec::new();
    for k in 0..n_traj {
        let r = rollout(&env, |s: &Observation, _: &mut ChaCha8Rng| policy.action(s.index().unwrap()), steps_per_traj, k as u64)
            .unwrap();
        trajectories.push(
            r.transitions
                .iter()
                .map(|t| {
                    let (s, s2) = (t.state.index().unwrap(), t.next.index().unwrap());
                    let row = |i: usize| phi.phi().row(i).transpose();
                    (row(s), t.reward, row(s2), s)
                })
                .collect(),
        );
    }
    (model, policy, phi, Recorded { trajectories })
}

#[test]
fn incremental_statistics_match_batch_formulas() {
    let (alpha, lambda) = (0.9, 0.7);
    let (model, policy, phi, rec) = record(250, 4);
    let mut st = learner_init(3, None, lambda, alpha, StepSchedule::default(), None).unwrap();
    for traj in &rec.trajectories {
        st.start_trajectory();
        for (now, r, next, id) in traj {
            st.observe(&TransitionSample {
                phi_now: now.clone(),
                reward: *r,
                phi_next: next.clone(),
                set_id: *id,
            })
            .unwrap();
        }
    }
    assert_eq!(st.t, 1000);

    // Batch: explicit trace sums restarted at each trajectory.
    let mut a = DMatrix::zeros(3, 3);
    let mut b = DMatrix::zeros(3, 3);
    let mut bv = DVector::zeros(3);
    let mut traces = Vec::new();
    for traj in &rec.trajectories {
        for (tau, (now, r, next, id)) in traj.iter().enumerate() {
            let mut z = DVector::zeros(3);
            for (j, (phi_j, ..)) in traj[..=tau].iter().enumerate() {
                z += phi_j * (alpha * lambda).powi((tau - j) as i32);
            }
            a += &z * (next * alpha - now).transpose();
            b += now * now.transpose();
            bv += &z * *r;
            traces.push((z, *id));
        }
    }
    let t = 1000.0;
    let (a_t, b_t, bv_t) = st.statistics();
    assert!(rel(&a_t, &(a / t)) <= 1e-10);
    assert!(rel(&b_t, &(b / t)) <= 1e-10);
    assert!((&bv_t - &bv / t).norm() / (bv / t).norm() <= 1e-10);

    // C_t(w) summed sample by sample against the per-set aggregate.
    let sets = slip_vertex_sets(&ChainSpec::default(), 0.3).unwrap();
    let per_state: Vec<UncertaintySet> = (0..10).map(|s| sets[model.pair(s, policy.action(s))].clone()).collect();
    let oracle = ExplicitSupport {
        value_features: phi.phi().clone(),
        sets: per_state.clone(),
    };
    for w in [DVector::from_vec(vec![1.0, -0.5, 0.2]), DVector::from_vec(vec![-3.0, 2.0, 0.7])] {
        let v = phi.phi() * &w;
        let mut c = DVector::zeros(3);
        for (z, id) in &traces {
            c += z * per_state[*id].support_inf(&v).unwrap().value;
        }
        c *= alpha / t;
        let got = st.robust_correction(&w, &oracle).unwrap();
        assert!((&got - &c).norm() / c.norm() <= 1e-10, "{got} vs {c}");
    }
}

/// Learner whose accumulators hold the exact model matrices (`t = 1`).
fn exact_mode(mats: &ExactMatrices, alpha: f64, lambda: f64, traces: Vec<(usize, DVector<f64>)>) -> LearnerState {
    let l = mats.b.nrows();
    let schedule = StepSchedule::power_law(1.0, 1.0, 0.51).unwrap();
    let mut st = learner_init(l, None, lambda, alpha, schedule, Some(1e-9)).unwrap();
    st.a_acc = mats.a.clone();
    st.b_acc = mats.b.clone();
    st.b_vec_acc = mats.b_vec.clone();
    st.trace_by_set = traces.into_iter().collect();
    st.t = 1;
    st.refresh_inverse().unwrap();
    st
}

#[test]
fn exact_mode_without_uncertainty_reaches_lstd() {
    let model = build_chain(&ChainSpec::default()).unwrap();
    let policy = Policy::new(vec![0, 0, 1, 0, 0, 1, 1, 0, 1, 1], 2).unwrap();
    let phi = FeatureMatrix::over_states(&FeatureMap::polynomial_1d(2, 0.0, 9.0), 10).unwrap();
    let d = steady_state(&model.kernel().policy_matrix(&policy)).unwrap();
    let chain = PolicyChain::state_values(&model, &policy).unwrap();
    for lambda in [0.0, 0.5, 0.9] {
        let mats = ExactMatrices::new(&chain, &phi, &d, lambda).unwrap();
        let lstd = mats.lstd().unwrap();
        let mut st = exact_mode(&mats, 0.9, lambda, vec![]);
        for _ in 0..20_000 {
            st.learner_step(&NoUncertainty).unwrap();
        }
        let err = (&st.w - &lstd).norm();
        assert!(err <= 1e-6, "lambda {lambda}: {err}");
    }
}

#[test]
fn exact_mode_with_sets_reaches_the_projected_fixed_point() {
    let alpha = 0.5;
    let spec = ChainSpec {
        discount: alpha,
        ..ChainSpec::default()
    };
    let model = build_chain(&spec).unwrap();
    let policy = Policy::new((0..10).map(|s| (s + 1) % 2).collect(), 2).unwrap();
    let phi = FeatureMatrix::over_states(&FeatureMap::tabular(10), 10).unwrap();
    let d = steady_state(&model.kernel().policy_matrix(&policy)).unwrap();
    let sets_hat = vec![UncertaintySet::centered_sphere(0.05).unwrap(); 20];
    let chain = PolicyChain::state_values_with(&model, &policy, &sets_hat).unwrap();
    let mats = ExactMatrices::new(&chain, &phi, &d, 0.0).unwrap();
    let fp = exact_projected_fixed_point(&model, &policy, &sets_hat, &phi, &d, 0.0, &FixedPointOptions::forced(1e-13))
        .unwrap();
    // C(w) = alpha Phi'DM sigma(Phi w): state s's trace is column s of Phi'DM.
    let traces = (0..10).map(|s| (s, mats.c_kernel.column(s) / alpha)).collect();
    let mut st = exact_mode(&mats, alpha, 0.0, traces);
    let oracle = ExplicitSupport {
        value_features: phi.phi().clone(),
        sets: vec![UncertaintySet::centered_sphere(0.05).unwrap(); 10],
    };
    for _ in 0..20_000 {
        st.learner_step(&oracle).unwrap();
    }
    assert!((&st.w - &fp.w).norm() <= 1e-6, "{}", (&st.w - &fp.w).norm());
}

#[test]
fn steady_state_matches_a_long_simulation() {
    let model = build_chain(&ChainSpec {
        slip: 0.3,
        ..ChainSpec::default()
    })
    .unwrap();
    let policy = Policy::new(vec![1, 1, 0, 1, 0, 0, 1, 0, 1, 0], 2).unwrap();
    let d = steady_state(&model.kernel().policy_matrix(&policy)).unwrap();
    let env = TabularEnv::new(model);
    let steps = 400_000;
    let r = rollout(&env, |s: &Observation, _: &mut ChaCha8Rng| policy.action(s.index().unwrap()), steps, 7).unwrap();
    let mut counts = [0usize; 10];
    for t in &r.transitions {
        counts[t.state.index().unwrap()] += 1;
    }
    for s in 0..10 {
        let freq = counts[s] as f64 / steps as f64;
        assert!((freq - d.d[s]).abs() <= 0.01, "state {s}: {freq} vs {}", d.d[s]);
    }
}
