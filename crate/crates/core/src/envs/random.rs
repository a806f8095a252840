use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rmdp::{TabularRmdp, TransitionKernel};
use crate::uncertainty::UncertaintySet;

/// How [`random_tabular_rmdp`] attaches sets to the generated rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetBuilder {
    Degenerate,
    /// `count` random sum-zero vertices supported on the row's support,
    /// each scaled to `scale` times the largest step keeping the row
    /// nonnegative. The zero vertex is always included.
    Finite { count: usize, scale: f64 },
    /// `count` vertices `u_i = epsilon p_i (g_i - sum_j p_j g_j)` with
    /// `g` uniform in `[-1, 1]`, so `|u_i| <= 2 epsilon p_i`. The zero vertex
    /// is always included.
    Relative { count: usize, epsilon: f64 },
    CenteredSphere { radius: f64 },
    SimplexSphere { radius: f64 },
}

const MAX_RETRIES: usize = 100;

/// Seeded random model: Dirichlet(1) rows over `branching` random
/// successors, rewards uniform in `[0, 1]`, sets from `builder`.
pub fn random_tabular_rmdp(
    n_states: usize,
    n_actions: usize,
    branching: usize,
    seed: u64,
    builder: &SetBuilder,
    discount: f64,
) -> Result<TabularRmdp> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::Config("need at least one state and one action".into()));
    }
    if branching == 0 || branching > n_states {
        return Err(Error::Config(format!(
            "branching {branching} must lie in [1, {n_states}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        probs.extend(dirichlet_row(n_states, branching, &mut rng));
    }
    let reward: Vec<f64> = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
    let kernel = TransitionKernel::new(n_states, n_actions, probs)?;
    let mut sets = Vec::with_capacity(n_states * n_actions);
    for i in 0..n_states * n_actions {
        let row = kernel.row(i / n_actions, i % n_actions);
        sets.push(match builder {
            SetBuilder::Degenerate => UncertaintySet::Degenerate,
            SetBuilder::Finite { count, scale } => finite_set(row, *count, *scale, &mut rng)?,
            SetBuilder::Relative { count, epsilon } => relative_set(row, *count, *epsilon, &mut rng)?,
            SetBuilder::CenteredSphere { radius } => UncertaintySet::centered_sphere(*radius)?,
            SetBuilder::SimplexSphere { radius } => UncertaintySet::simplex_sphere(*radius, row.to_vec())?,
        });
    }
    TabularRmdp::new(kernel, reward, discount, sets)
}

fn dirichlet_row(n: usize, branching: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut row = vec![0.0; n];
    let support = sample(rng, n, branching);
    let mut total = 0.0;
    for j in support.iter() {
        // Exponential(1) draws normalize to a flat Dirichlet.
        let e = -(1.0 - rng.random::<f64>()).ln();
        row[j] = e;
        total += e;
    }
    if total > 0.0 {
        row.iter_mut().for_each(|p| *p /= total);
    } else {
        row[support.index(0)] = 1.0;
    }
    row
}

fn finite_set(row: &[f64], count: usize, scale: f64, rng: &mut ChaCha8Rng) -> Result<UncertaintySet> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::Config(format!("vertex scale {scale} not in (0, 1]")));
    }
    let support: Vec<usize> = (0..row.len()).filter(|&j| row[j] > 0.0).collect();
    let mut vertices = vec![vec![0.0; row.len()]];
    for _ in 0..count {
        let mut dir = vec![0.0; row.len()];
        if support.len() > 1 {
            for &j in &support {
                dir[j] = rng.random_range(-1.0..1.0);
            }
            let mean = support.iter().map(|&j| dir[j]).sum::<f64>() / support.len() as f64;
            for &j in &support {
                dir[j] -= mean;
            }
        }
        let step = support
            .iter()
            .filter(|&&j| dir[j] < 0.0)
            .map(|&j| row[j] / -dir[j])
            .fold(f64::INFINITY, f64::min);
        let mut t = if step.is_finite() { scale * step } else { 0.0 };
        let mut accepted = None;
        for _ in 0..MAX_RETRIES {
            let mut u: Vec<f64> = dir.iter().map(|x| t * x).collect();
            // Restore an exact zero sum after scaling.
            let drift: f64 = u.iter().sum();
            if let Some(&j) = support.iter().max_by(|&&a, &&b| row[a].total_cmp(&row[b])) {
                u[j] -= drift;
            }
            let candidate = UncertaintySet::FiniteVertices { vertices: vec![u.clone()] };
            if candidate.check_row(row).is_ok() {
                accepted = Some(u);
                break;
            }
            t *= 0.5;
        }
        let u = accepted.ok_or_else(|| {
            Error::InvalidModel(format!(
                "no feasible vertex for row {row:?} after {MAX_RETRIES} shrinks"
            ))
        })?;
        vertices.push(u);
    }
    UncertaintySet::finite(vertices)
}

fn relative_set(row: &[f64], count: usize, epsilon: f64, rng: &mut ChaCha8Rng) -> Result<UncertaintySet> {
    if !(0.0..=0.5).contains(&epsilon) {
        return Err(Error::Config(format!("relative epsilon {epsilon} not in [0, 0.5]")));
    }
    let mut vertices = vec![vec![0.0; row.len()]];
    for _ in 0..count {
        let g: Vec<f64> = row.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean: f64 = row.iter().zip(&g).map(|(p, x)| p * x).sum();
        let mut u: Vec<f64> = row.iter().zip(&g).map(|(p, x)| epsilon * p * (x - mean)).collect();
        let drift: f64 = u.iter().sum();
        if let Some(j) = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])) {
            u[j] -= drift;
        }
        vertices.push(u);
    }
    let set = UncertaintySet::finite(vertices)?;
    set.check_row(row)?;
    Ok(set)
}
