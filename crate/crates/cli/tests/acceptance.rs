//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_lspi::envs::*;
use robust_lspi::linear_fa::ExactMatrices;
use robust_lspi::rlspi::RadiusRule;
use robust_lspi::*;
use robust_lspi_cli::{experiment, ExperimentConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sup(v: &DVector<f64>) -> f64 {
    v.amax()
}

/// Robust value iteration against explicit vertex enumeration.
fn oracle_equivalence() -> Outcome {
    let model = three_vertex_chain();
    let start = Instant::now();
    let (v, _) = robust_value_iteration(&model, 1e-11, 100_000).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let diff = sup(&(&v - &vertex_enumeration_vi(&model, 1e-12)));
    check(diff <= 1e-8 && secs < 1.0, format!("sup diff {diff:.1e}, {secs:.3} s"))
}

/// With exact sets the approximate operator fixes the robust value.
fn operator_fixed_point() -> Outcome {
    let mut worst = 0.0_f64;
    for seed in 0..10u64 {
        let n = 3 + (seed as usize % 6);
        let model = random_tabular_rmdp(n, 2, n, seed, &SetBuilder::Relative { count: 3, epsilon: 0.3 }, 0.9)
            .map_err(|e| e.to_string())?;
        let policy = Policy::new((0..n).map(|s| (s + seed as usize) % 2).collect(), 2).unwrap();
        let v = robust_policy_evaluation_exact(&model, &policy, 1e-13, 1_000_000).map_err(|e| e.to_string())?;
        for lambda in [0.0, 0.5, 0.9] {
            let tv = approx_robust_td_apply(&model, &policy, model.sets(), &v, lambda).map_err(|e| e.to_string())?;
            worst = worst.max(sup(&(tv - &v)));
        }
    }
    check(worst <= 1e-8, format!("max |T(V) - V| {worst:.1e} over 10 models, 3 lambdas"))
}

/// Empirical Lipschitz ratio of the projected operator under its bound.
fn theorem_1() -> Outcome {
    let alpha = 0.3;
    let (mut tested, mut worst_gap, mut c_range) = (0, f64::NEG_INFINITY, (f64::INFINITY, 0.0_f64));
    for seed in 0..10u64 {
        let model = random_tabular_rmdp(6, 2, 6, seed, &SetBuilder::Relative { count: 2, epsilon: 0.1 }, alpha)
            .map_err(|e| e.to_string())?;
        let policy = Policy::new((0..6).map(|s| s % 2).collect(), 2).unwrap();
        // Approximate sets: the true vertices shrunk by half.
        let sets_hat: Vec<UncertaintySet> = model
            .sets()
            .iter()
            .map(|s| match s {
                UncertaintySet::FiniteVertices { vertices } => UncertaintySet::finite(
                    vertices.iter().map(|v| v.iter().map(|x| 0.5 * x).collect()).collect(),
                )
                .unwrap(),
                other => other.clone(),
            })
            .collect();
        let d = steady_state(&model.kernel().policy_matrix(&policy)).map_err(|e| e.to_string())?;
        let beta = verify_exploration_assumption(&model, &policy, &policy).map_err(|e| e.to_string())?;
        let pick = |sets: &[UncertaintySet]| -> Vec<UncertaintySet> {
            (0..6).map(|s| sets[model.pair(s, policy.action(s))].clone()).collect()
        };
        let rho = model_set_distance(&pick(model.sets()), &pick(&sets_hat), &d.d).map_err(|e| e.to_string())?;
        let phi = FeatureMatrix::over_states(&FeatureMap::polynomial_1d(2, 0.0, 5.0), 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        for lambda in [0.0, 0.5, 0.9] {
            let inputs = ContractionInputs::new(alpha, beta.beta_min, rho, lambda).map_err(|e| e.to_string())?;
            let c = contraction_coefficient(&inputs);
            if !c.is_contraction {
                continue;
            }
            tested += 1;
            c_range = (c_range.0.min(c.value), c_range.1.max(c.value));
            let t = |v: &DVector<f64>| {
                project(&phi, &d, &approx_robust_td_apply(&model, &policy, &sets_hat, v, lambda).unwrap()).unwrap()
            };
            for _ in 0..1000 {
                let v1 = DVector::from_fn(6, |_, _| rng.random_range(-10.0..10.0));
                let v2 = DVector::from_fn(6, |_, _| rng.random_range(-10.0..10.0));
                let ratio = d.norm(&(t(&v1) - t(&v2))) / d.norm(&(v1 - v2));
                worst_gap = worst_gap.max(ratio - c.value);
            }
        }
    }
    check(
        tested > 0 && worst_gap <= 1e-9,
        format!(
            "{tested} (model, lambda) cases with c in [{:.2}, {:.2}], max ratio - c = {worst_gap:.3}",
            c_range.0, c_range.1
        ),
    )
}

/// Online RLSPE(0) with a centered sphere converges to the projected fixed point.
fn theorem_2() -> Outcome {
    let alpha = 0.5;
    let n = 10;
    let model = build_chain(&ChainSpec {
        discount: alpha,
        ..ChainSpec::default()
    })
    .map_err(|e| e.to_string())?;
    // Right on even states, left on odd: every state keeps positive weight.
    let policy = Policy::new((0..n).map(|s| (s + 1) % 2).collect(), 2).unwrap();
    let sets_hat = vec![UncertaintySet::centered_sphere(0.05).unwrap(); 2 * n];
    let phi = FeatureMatrix::over_states(&FeatureMap::tabular(n), n).unwrap();
    let d = steady_state(&model.kernel().policy_matrix(&policy)).map_err(|e| e.to_string())?;
    let fp = exact_projected_fixed_point(&model, &policy, &sets_hat, &phi, &d, 0.0, &FixedPointOptions::forced(1e-12))
        .map_err(|e| e.to_string())?;
    let oracle = ExplicitSupport {
        value_features: phi.phi().clone(),
        sets: vec![UncertaintySet::centered_sphere(0.05).unwrap(); n],
    };
    let start = Instant::now();
    let mut errors = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = learner_init(n, None, 0.0, alpha, StepSchedule::default(), None).map_err(|e| e.to_string())?;
        let mut s = rng.random_range(0..n);
        for _ in 0..200_000 {
            let a = policy.action(s);
            let row = model.kernel().row(s, a);
            let u: f64 = rng.random();
            let mut next = n - 1;
            let mut acc = 0.0;
            for (j, q) in row.iter().enumerate() {
                acc += q;
                if u < acc {
                    next = j;
                    break;
                }
            }
            st.observe(&TransitionSample {
                phi_now: phi.phi().row(s).transpose(),
                reward: model.reward(s, a),
                phi_next: phi.phi().row(next).transpose(),
                set_id: s,
            })
            .map_err(|e| e.to_string())?;
            st.learner_step(&oracle).map_err(|e| e.to_string())?;
            s = next;
        }
        errors.push((&st.w - &fp.w).norm());
    }
    let secs = start.elapsed().as_secs_f64();
    let hits = errors.iter().filter(|e| **e <= 1e-2).count();
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    check(
        hits >= 9 && secs < 30.0,
        format!("alpha 0.5: {hits}/10 seeds with |w - w_pi| <= 1e-2 after 2e5 samples (max {worst:.1e}), {secs:.1} s"),
    )
}

/// Degenerate sets reduce the learner to LSTD and RLSPI to LSPI.
fn non_robust_reduction() -> Outcome {
    let model = build_chain(&ChainSpec::default()).map_err(|e| e.to_string())?;
    let policy = Policy::new(vec![0, 0, 1, 0, 0, 1, 1, 0, 1, 1], 2).unwrap();
    let phi = FeatureMatrix::over_states(&FeatureMap::polynomial_1d(2, 0.0, 9.0), 10).unwrap();
    let d = steady_state(&model.kernel().policy_matrix(&policy)).map_err(|e| e.to_string())?;
    let chain = PolicyChain::state_values(&model, &policy).map_err(|e| e.to_string())?;
    let mut worst = 0.0_f64;
    for lambda in [0.0, 0.5, 0.9] {
        let mats = ExactMatrices::new(&chain, &phi, &d, lambda).map_err(|e| e.to_string())?;
        let lstd = mats.lstd().map_err(|e| e.to_string())?;
        // Exact matrix mode: the accumulators hold A, B, b with t = 1.
        let schedule = StepSchedule::power_law(1.0, 1.0, 0.51).unwrap();
        let mut st = learner_init(3, None, lambda, 0.9, schedule, Some(1e-9)).map_err(|e| e.to_string())?;
        st.a_acc = mats.a.clone();
        st.b_acc = mats.b.clone();
        st.b_vec_acc = mats.b_vec.clone();
        st.t = 1;
        st.refresh_inverse().map_err(|e| e.to_string())?;
        for _ in 0..20_000 {
            st.learner_step(&NoUncertainty).map_err(|e| e.to_string())?;
        }
        worst = worst.max((&st.w - &lstd).norm());
    }
    let env = TabularEnv::new(model);
    let mut identical = 0;
    for seed in 0..5 {
        let mut c = PolicyIterationConfig::new(FeatureMap::stacked(FeatureMap::polynomial_1d(2, 0.0, 9.0), 2), 0.9);
        c.iterations = 4;
        c.trajectories = 20;
        c.seed = seed;
        c.uncertainty = UncertaintyBinding::Explicit {
            sets: vec![UncertaintySet::Degenerate; 20],
        };
        let robust = rlspi_run(&c, &env).map_err(|e| e.to_string())?;
        let plain = lspi_run(&c, &env).map_err(|e| e.to_string())?;
        let bits = |rs: &[IterationRecord]| -> Vec<Vec<u64>> {
            rs.iter().map(|r| r.weights.iter().map(|x| x.to_bits()).collect()).collect()
        };
        if bits(&robust) == bits(&plain) && robust.iter().zip(&plain).all(|(a, b)| a.policy == b.policy) {
            identical += 1;
        }
    }
    check(
        worst <= 1e-6 && identical == 5,
        format!("|w - (-A^-1 b)| {worst:.1e}; rlspi == lspi bit-exact on {identical}/5 seeds"),
    )
}

/// RLSPI recovers the chain's optimal policy.
fn chain_replication() -> Outcome {
    let env = TabularEnv::new(build_chain(&ChainSpec::default()).map_err(|e| e.to_string())?);
    let optimal = vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
    let start = Instant::now();
    let (mut reached, mut last) = (0, 0);
    for seed in 0..10 {
        let mut c = PolicyIterationConfig::new(FeatureMap::stacked(FeatureMap::polynomial_1d(2, 0.0, 9.0), 2), 0.9);
        c.iterations = 20;
        c.lambda = 0.0;
        c.epsilon0 = 0.1;
        c.seed = seed;
        c.uncertainty = UncertaintyBinding::Gram {
            radius: RadiusRule::FrobeniusScaled(0.01),
            sign: GramSign::Infimum,
        };
        let records = rlspi_run(&c, &env).map_err(|e| e.to_string())?;
        if records.iter().any(|r| r.policy.as_ref() == Some(&optimal)) {
            reached += 1;
        }
        if records.last().and_then(|r| r.policy.as_ref()) == Some(&optimal) {
            last += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        reached >= 8 && secs < 120.0,
        format!("optimal policy reached on {reached}/10 seeds (final iterate optimal on {last}/10), {secs:.1} s"),
    )
}

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Mean exact value per slip for a sample config.
fn sweep_means(name: &str) -> Result<BTreeMap<String, f64>, String> {
    let config = ExperimentConfig::load(&config_dir().join(name))
        .and_then(|c| c.resolve())
        .map_err(|e| e.to_string())?;
    let pool = rayon::ThreadPoolBuilder::new().build().map_err(|e| e.to_string())?;
    let result = experiment::run_sweep(&config, &pool).map_err(|e| e.to_string())?;
    Ok(result.aggregates.iter().map(|a| (format!("{:.1}", a.value), a.mean)).collect())
}

/// Worst case over slips of the RLSPI policy against the LSPI policy.
fn robustness_ordering() -> Outcome {
    let robust = sweep_means("chain_rlspi.json")?;
    let plain = sweep_means("chain_lspi.json")?;
    let worst = |m: &BTreeMap<String, f64>, upto: &str| {
        m.iter()
            .filter(|(k, _)| k.as_str() <= upto)
            .map(|(_, v)| *v)
            .fold(f64::INFINITY, f64::min)
    };
    let mut parts = Vec::new();
    let mut all_geq = true;
    let mut strict = false;
    for upto in ["0.5", "0.4", "0.3"] {
        let (r, p) = (worst(&robust, upto), worst(&plain, upto));
        all_geq &= r >= p - 1e-12;
        strict |= r > p + 1e-12;
        parts.push(format!("slip 0.1..{upto}: {r:.4} vs {p:.4}"));
    }
    check(all_geq && strict, format!("worst-case RLSPI vs LSPI, {}", parts.join("; ")))
}

/// Support functions against a gradient oracle and a sampling oracle.
fn support_functions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut centered = 0.0_f64;
    for _ in 0..100 {
        let n = rng.random_range(2..9);
        let r = rng.random_range(0.01..2.0);
        let v = random_vector(&mut rng, n);
        let got = UncertaintySet::centered_sphere(r)
            .unwrap()
            .support_inf(&DVector::from_vec(v.clone()))
            .map_err(|e| e.to_string())?
            .value;
        centered = centered.max((got - pgd(&v, 2000, |x| project_ball_plane(x, r))).abs());
    }
    let mut simplex = 0.0_f64;
    let mut beaten = false;
    for _ in 0..20 {
        let p = random_row(&mut rng, 3);
        let r = rng.random_range(0.1..1.2);
        let v = random_vector(&mut rng, 3);
        let got = UncertaintySet::simplex_sphere(r, p.clone())
            .map_err(|e| e.to_string())?
            .support_inf(&DVector::from_vec(v.clone()))
            .map_err(|e| e.to_string())?
            .value;
        let sampled = boundary_samples(&p, r, 100_000, &mut rng)
            .iter()
            .map(|x| dot(&v, x))
            .fold(f64::INFINITY, f64::min);
        beaten |= sampled < got - 1e-12;
        simplex = simplex.max(sampled - got);
    }
    check(
        centered <= 1e-6 && simplex <= 1e-4 && !beaten,
        format!("centered vs PGD {centered:.1e} (100 vectors); simplex vs 1e5 samples {simplex:.1e} (20 cases)"),
    )
}

/// Incremental statistics against direct batch sums on 1000 steps.
fn learner_ledger() -> Outcome {
    let (alpha, lambda) = (0.9, 0.7);
    let spec = ChainSpec::default();
    let model = build_chain(&spec).map_err(|e| e.to_string())?;
    let policy = Policy::new(vec![0, 1, 0, 0, 1, 1, 0, 1, 1, 1], 2).unwrap();
    let phi = FeatureMatrix::over_states(&FeatureMap::polynomial_1d(2, 0.0, 9.0), 10).unwrap();
    let env = TabularEnv::new(model.clone());
    let mut st = learner_init(3, None, lambda, alpha, StepSchedule::default(), None).map_err(|e| e.to_string())?;
    let mut samples: Vec<Vec<TransitionSample>> = Vec::new();
    for k in 0..4 {
        let r = rollout(&env, |s: &Observation, _: &mut ChaCha8Rng| policy.action(s.index().unwrap()), 250, k)
            .map_err(|e| e.to_string())?;
        let traj: Vec<TransitionSample> = r
            .transitions
            .iter()
            .map(|t| TransitionSample {
                phi_now: phi.phi().row(t.state.index().unwrap()).transpose(),
                reward: t.reward,
                phi_next: phi.phi().row(t.next.index().unwrap()).transpose(),
                set_id: t.state.index().unwrap(),
            })
            .collect();
        st.start_trajectory();
        for x in &traj {
            st.observe(x).map_err(|e| e.to_string())?;
        }
        samples.push(traj);
    }
    let total = st.t as f64;
    let (mut a, mut b) = (nalgebra::DMatrix::zeros(3, 3), nalgebra::DMatrix::zeros(3, 3));
    let mut bv = DVector::zeros(3);
    let mut traces = Vec::new();
    for traj in &samples {
        for (tau, x) in traj.iter().enumerate() {
            let z = traj[..=tau].iter().enumerate().fold(DVector::zeros(3), |acc, (j, y)| {
                acc + &y.phi_now * (alpha * lambda).powi((tau - j) as i32)
            });
            a += &z * (&x.phi_next * alpha - &x.phi_now).transpose();
            b += &x.phi_now * x.phi_now.transpose();
            bv += &z * x.reward;
            traces.push((z, x.set_id));
        }
    }
    let (a_t, b_t, bv_t) = st.statistics();
    let rel = |x: f64, y: f64| x / y.max(1e-300);
    let mut worst = rel((&a_t - &a / total).norm(), (&a / total).norm())
        .max(rel((&b_t - &b / total).norm(), (&b / total).norm()))
        .max(rel((&bv_t - &bv / total).norm(), (&bv / total).norm()));
    let sets = slip_vertex_sets(&spec, 0.3).map_err(|e| e.to_string())?;
    let per_state: Vec<UncertaintySet> = (0..10).map(|s| sets[model.pair(s, policy.action(s))].clone()).collect();
    let oracle = ExplicitSupport {
        value_features: phi.phi().clone(),
        sets: per_state.clone(),
    };
    let w = DVector::from_vec(vec![1.0, -0.5, 0.2]);
    let v = phi.phi() * &w;
    let mut c = DVector::zeros(3);
    for (z, id) in &traces {
        c += z * per_state[*id].support_inf(&v).map_err(|e| e.to_string())?.value;
    }
    c *= alpha / total;
    let got = st.robust_correction(&w, &oracle).map_err(|e| e.to_string())?;
    worst = worst.max(rel((&got - &c).norm(), c.norm()));
    check(worst <= 1e-10, format!("max relative deviation {worst:.1e} over A, B, b, C(w) at t = {}", st.t))
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Repeated CLI runs and different thread counts write identical bytes.
fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path().join("out");
    let mut checked = Vec::new();
    for (name, extra) in [
        ("chain_rlspi.json", vec!["--values", "0.1,0.3"]),
        ("chain_gram.json", vec!["--values", "0.2,0.4"]),
        ("cart_pole_force_mag.json", vec!["--values", "8,12"]),
    ] {
        let knob = if name.starts_with("cart") { "force_mag" } else { "slip" };
        let mut snaps = Vec::new();
        for threads in ["1", "1", "3"] {
            let config = config_dir().join(name);
            let mut args = vec!["robust-lspi", "sweep", config.to_str().unwrap(), "--knob", knob];
            args.extend(&extra);
            let out_s = out.to_str().unwrap().to_string();
            args.extend(["--reps", "3", "--threads", threads, "--out-dir", &out_s]);
            let code = robust_lspi_cli::cli::run(args);
            if code != 0 {
                return Err(format!("{name}: exit code {code}"));
            }
            snaps.push(snapshot(&out));
            std::fs::remove_dir_all(&out).map_err(|e| e.to_string())?;
        }
        if snaps[0] != snaps[1] || snaps[0] != snaps[2] {
            return Err(format!("{name}: outputs differ"));
        }
        checked.push(format!("{name} ({} files)", snaps[0].len()));
    }
    Ok(format!("identical bytes over 2 repeats and 1 vs 3 threads: {}", checked.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("approximate operator fixed point", operator_fixed_point),
        ("contraction bound", theorem_1),
        ("online convergence", theorem_2),
        ("non-robust reduction", non_robust_reduction),
        ("chain replication", chain_replication),
        ("robustness ordering", robustness_ordering),
        ("support functions", support_functions),
        ("learner ledger", learner_ledger),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
