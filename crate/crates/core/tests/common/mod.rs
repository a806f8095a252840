//! Oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use robust_lspi::envs::{build_chain, ChainSpec};
use robust_lspi::{Policy, TabularRmdp, UncertaintySet};

/// Chain with three vertices per pair: nominal, slip more by 0.3, slip less by 0.05.
pub fn three_vertex_chain() -> TabularRmdp {
    let spec = ChainSpec::default();
    let model = build_chain(&spec).unwrap();
    let n = spec.n_states;
    let mut sets = Vec::new();
    for s in 0..n {
        for a in 0..2 {
            let (intended, opposite) = spec.successors(s, a);
            let mut more = vec![0.0; n];
            more[opposite] += 0.3;
            more[intended] -= 0.3;
            let less: Vec<f64> = more.iter().map(|x| -x / 6.0).collect();
            sets.push(UncertaintySet::finite(vec![vec![0.0; n], more, less]).unwrap());
        }
    }
    model.with_sets(sets).unwrap()
}

pub fn vertices(set: &UncertaintySet, n: usize) -> Vec<Vec<f64>> {
    match set {
        UncertaintySet::Degenerate => vec![vec![0.0; n]],
        UncertaintySet::FiniteVertices { vertices } => vertices.clone(),
        other => panic!("no vertex list for {}", other.kind()),
    }
}

/// Plain robust value iteration with explicit loops over every vertex.
pub fn vertex_enumeration_vi(model: &TabularRmdp, tol: f64) -> DVector<f64> {
    let (n, na, alpha) = (model.n_states(), model.n_actions(), model.discount());
    let mut v = vec![0.0; n];
    loop {
        let mut next = vec![f64::NEG_INFINITY; n];
        for s in 0..n {
            for a in 0..na {
                let row = model.kernel().row(s, a);
                let mut worst = f64::INFINITY;
                for u in vertices(model.set(s, a), n) {
                    let e: f64 = (0..n).map(|j| (row[j] + u[j]) * v[j]).sum();
                    worst = worst.min(e);
                }
                next[s] = next[s].max(model.reward(s, a) + alpha * worst);
            }
        }
        let diff = next.iter().zip(&v).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
        v = next;
        if diff * alpha / (1.0 - alpha) < tol {
            return DVector::from_vec(v);
        }
    }
}

/// Robust value of `policy` as the pointwise minimum of nominal values over
/// every stationary choice of vertices (rectangularity makes it attained).
pub fn adversary_enumeration(model: &TabularRmdp, policy: &Policy) -> DVector<f64> {
    let n = model.n_states();
    let choices: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|s| vertices(model.set(s, policy.action(s)), n))
        .collect();
    let mut idx = vec![0usize; n];
    let mut best = DVector::from_element(n, f64::INFINITY);
    loop {
        let mut p = DMatrix::zeros(n, n);
        let mut r = DVector::zeros(n);
        for s in 0..n {
            let a = policy.action(s);
            let row = model.kernel().row(s, a);
            for j in 0..n {
                p[(s, j)] = row[j] + choices[s][idx[s]][j];
            }
            r[s] = model.reward(s, a);
        }
        let m = DMatrix::identity(n, n) - p * model.discount();
        let v = m.lu().solve(&r).unwrap();
        best = best.zip_map(&v, f64::min);
        let mut k = 0;
        loop {
            if k == n {
                return best;
            }
            idx[k] += 1;
            if idx[k] < choices[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Projection onto `{sum(x) = 0, |x| <= r}`: the ball is centred on the
/// hyperplane, so project onto the plane and then scale.
pub fn project_ball_plane(x: &[f64], r: f64) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let mut y: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let ny = norm(&y);
    if ny > r {
        y.iter_mut().for_each(|v| *v *= r / ny);
    }
    y
}

/// Dykstra's alternating projections onto (ball and plane) and the box.
pub fn project_feasible(x: &[f64], r: f64, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut y = x.to_vec();
    let (mut p, mut q) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..400 {
        let a_in: Vec<f64> = (0..n).map(|i| y[i] + p[i]).collect();
        let a = project_ball_plane(&a_in, r);
        p = (0..n).map(|i| a_in[i] - a[i]).collect();
        let b_in: Vec<f64> = (0..n).map(|i| a[i] + q[i]).collect();
        let b: Vec<f64> = (0..n).map(|i| b_in[i].clamp(lo[i], hi[i])).collect();
        q = (0..n).map(|i| b_in[i] - b[i]).collect();
        y = b;
    }
    y
}

/// Projected gradient descent on `v.x` with a constant step.
pub fn pgd(v: &[f64], iters: usize, project: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    let step = 0.02 / norm(v).max(1e-300);
    let mut x = project(&vec![0.0; v.len()]);
    for _ in 0..iters {
        let moved: Vec<f64> = x.iter().zip(v).map(|(a, g)| a - step * g).collect();
        x = project(&moved);
    }
    dot(v, &x)
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-5.0..5.0)).collect()
}

pub fn random_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Cubing skews mass so that some coordinates sit near zero and the box binds.
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

/// Samples of the boundary of the three-dimensional feasible set, a disc in
/// the plane `sum(x) = 0` cut by the box, plus its corners; a linear minimum
/// lies on the boundary.
pub fn boundary_samples(p: &[f64], r: f64, count: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let s2 = 2f64.sqrt();
    let s6 = 6f64.sqrt();
    let e1 = [1.0 / s2, -1.0 / s2, 0.0];
    let e2 = [1.0 / s6, 1.0 / s6, -2.0 / s6];
    let embed = |a: f64, b: f64| [a * e1[0] + b * e2[0], a * e1[1] + b * e2[1], a * e1[2] + b * e2[2]];
    let feasible = |x: &[f64; 3]| {
        (0..3).all(|i| x[i] >= -p[i] - 1e-15 && x[i] <= 1.0 - p[i] + 1e-15) && norm(x) <= r * (1.0 + 1e-15)
    };
    let mut out = Vec::with_capacity(count);
    // Half on the circle.
    for _ in 0..count / 2 {
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        let x = embed(r * t.cos(), r * t.sin());
        if feasible(&x) {
            out.push(x);
        }
    }
    // The rest on the box faces x_i = c, lines in plane coordinates.
    let faces: Vec<(usize, f64)> = (0..3).flat_map(|i| [(i, -p[i]), (i, 1.0 - p[i])]).collect();
    for k in 0..count - count / 2 {
        let (i, c) = faces[k % faces.len()];
        // Points (a, b) with a e1[i] + b e2[i] = c inside the disc.
        let (gi, hi) = (e1[i], e2[i]);
        let g2 = gi * gi + hi * hi;
        let foot = (c * gi / g2, c * hi / g2);
        let dist2 = c * c / g2;
        if dist2 > r * r {
            continue;
        }
        let half = (r * r - dist2).sqrt() / g2.sqrt();
        // Chord ends first: they are corners of the region.
        let s = match k / faces.len() {
            0 => -half,
            1 => half,
            _ => rng.random_range(-half..=half),
        };
        let x = embed(foot.0 - s * hi, foot.1 + s * gi);
        if feasible(&x) {
            out.push(x);
        }
    }
    // Corners where two faces meet.
    for (a, &(i, c)) in faces.iter().enumerate() {
        for &(j, d) in &faces[a + 1..] {
            if i == j {
                continue;
            }
            let (m, e) = ((3 - i - j) % 3, -(c + d));
            let mut x = [0.0; 3];
            x[i] = c;
            x[j] = d;
            x[m] = e;
            if feasible(&x) {
                out.push(x);
            }
        }
    }
    out
}
