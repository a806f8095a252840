//! Linear minimization over `{x : ||x||_2 <= r, sum(x) = 0, -p <= x <= 1 - p}`.
//!
//! The KKT conditions give `x_i = clip(-theta (v_i + nu), -p_i, 1 - p_i)` where
//! `theta = 1 / (2 mu)` is the inverse ball multiplier and `nu` the hyperplane
//! multiplier. For fixed `theta` the hyperplane condition is a monotone
//! piecewise-linear equation in `nu`, solved exactly by scanning breakpoints.
//! `||x(theta)||` is nondecreasing in `theta`, so the ball condition is found by
//! bisection on `ln theta`. When the `theta -> inf` limit, the linear program
//! over box and hyperplane, lies inside the ball it is the answer.

const LOG_THETA_MIN: f64 = -60.0;
const LOG_THETA_MAX: f64 = 60.0;
const BISECTION_ROUNDS: usize = 200;

/// Returns `(value, minimizer)`.
pub(crate) fn minimize_linear(v: &[f64], radius: f64, nominal: &[f64]) -> (f64, Vec<f64>) {
    let n = v.len();
    let zero = (0.0, vec![0.0; n]);
    if radius == 0.0 || n == 0 {
        return zero;
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let scale = v.iter().fold(0.0_f64, |m, x| m.max((x - mean).abs()));
    if scale == 0.0 {
        return zero;
    }
    let centered: Vec<f64> = v.iter().map(|x| (x - mean) / scale).collect();
    let lo: Vec<f64> = nominal.iter().map(|p| -p).collect();
    let hi: Vec<f64> = nominal.iter().map(|p| 1.0 - p).collect();
    let problem = Problem {
        v: &centered,
        lo: &lo,
        hi: &hi,
    };

    let mut x = vertex_solution(&centered, nominal);
    if norm(&x) > radius {
        let (mut a, mut b) = (LOG_THETA_MIN, LOG_THETA_MAX);
        let mut best = problem.at(a.exp());
        if norm(&best) < radius {
            for _ in 0..BISECTION_ROUNDS {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                let cand = problem.at(mid.exp());
                if norm(&cand) <= radius {
                    a = mid;
                    best = cand;
                } else {
                    b = mid;
                }
            }
        }
        x = best;
        // Land exactly on the sphere when the bracket is tight. Scaling toward
        // the origin keeps the hyperplane and the box satisfied.
        let nx = norm(&x);
        if nx > radius {
            let f = radius / nx;
            x.iter_mut().for_each(|xi| *xi *= f);
        }
    }
    let value = v.iter().zip(&x).map(|(a, b)| a * b).sum();
    (value, x)
}

/// Linear program over box and hyperplane: all nominal mass moves to the
/// cheapest coordinate, `x = e_j - p`.
fn vertex_solution(v: &[f64], nominal: &[f64]) -> Vec<f64> {
    let j = (1..v.len()).fold(0, |best, i| if v[i] < v[best] { i } else { best });
    let mut x: Vec<f64> = nominal.iter().map(|p| -p).collect();
    x[j] += 1.0;
    x
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

struct Problem<'a> {
    v: &'a [f64],
    lo: &'a [f64],
    hi: &'a [f64],
}

impl Problem<'_> {
    /// Minimizer of `v.x + ||x||^2 / (2 theta)` over box and hyperplane.
    fn at(&self, theta: f64) -> Vec<f64> {
        let nu = self.hyperplane_multiplier(theta);
        let mut x: Vec<f64> = (0..self.v.len())
            .map(|i| (-theta * (self.v[i] + nu)).clamp(self.lo[i], self.hi[i]))
            .collect();
        // Spread the rounding residual of sum(x) over coordinates with slack.
        let residual: f64 = x.iter().sum();
        if residual != 0.0 {
            let free: Vec<usize> = (0..x.len())
                .filter(|&i| {
                    if residual > 0.0 {
                        x[i] > self.lo[i]
                    } else {
                        x[i] < self.hi[i]
                    }
                })
                .collect();
            if !free.is_empty() {
                let share = residual / free.len() as f64;
                for i in free {
                    x[i] = (x[i] - share).clamp(self.lo[i], self.hi[i]);
                }
            }
        }
        x
    }

    /// Root of `g(nu) = sum_i clip(-theta (v_i + nu), lo_i, hi_i)`, which is
    /// continuous, nonincreasing and piecewise linear in `nu`.
    fn hyperplane_multiplier(&self, theta: f64) -> f64 {
        let n = self.v.len();
        // x_i hits hi_i for nu <= -v_i - hi_i/theta and lo_i for nu >= -v_i - lo_i/theta.
        let mut breaks: Vec<f64> = Vec::with_capacity(2 * n);
        for i in 0..n {
            breaks.push(-self.v[i] - self.hi[i] / theta);
            breaks.push(-self.v[i] - self.lo[i] / theta);
        }
        breaks.sort_by(|a, b| a.total_cmp(b));
        let g = |nu: f64| -> f64 {
            (0..n)
                .map(|i| (-theta * (self.v[i] + nu)).clamp(self.lo[i], self.hi[i]))
                .sum()
        };
        // g(first break) = sum(hi) >= 0 and g(last break) = sum(lo) <= 0.
        let mut left = breaks[0];
        let mut g_left = g(left);
        if g_left <= 0.0 {
            return left;
        }
        for &right in &breaks[1..] {
            if right <= left {
                continue;
            }
            let g_right = g(right);
            if g_right <= 0.0 {
                return self.solve_segment(theta, left, right, g_left, g_right);
            }
            left = right;
            g_left = g_right;
        }
        left
    }

    /// Exact root on a segment where the active set is constant.
    fn solve_segment(&self, theta: f64, left: f64, right: f64, g_left: f64, g_right: f64) -> f64 {
        let mid = 0.5 * (left + right);
        let mut clamped = 0.0;
        let mut free_v = 0.0;
        let mut n_free = 0usize;
        for i in 0..self.v.len() {
            let raw = -theta * (self.v[i] + mid);
            if raw <= self.lo[i] {
                clamped += self.lo[i];
            } else if raw >= self.hi[i] {
                clamped += self.hi[i];
            } else {
                free_v += self.v[i];
                n_free += 1;
            }
        }
        if n_free == 0 {
            return if g_left == 0.0 { left } else { right };
        }
        let nu = (clamped - theta * free_v) / (theta * n_free as f64);
        if nu.is_finite() {
            nu.clamp(left, right)
        } else {
            // Linear interpolation fallback.
            left + (right - left) * g_left / (g_left - g_right)
        }
    }
}
