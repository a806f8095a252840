//! Feature maps over states and state-action pairs, and the dense feature
//! matrix `Phi` with its Gram matrices.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative singular-value threshold of the rank check.
pub const RANK_TOL: f64 = 1e-10;

/// A state: an index into a finite state set or a point in `R^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Observation {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Observation {
    /// Coordinates used by geometric maps; a discrete state is the point `s`.
    pub fn point(&self) -> Vec<f64> {
        match self {
            Observation::Discrete(s) => vec![*s as f64],
            Observation::Continuous(x) => x.clone(),
        }
    }

    pub fn index(&self) -> Option<usize> {
        match self {
            Observation::Discrete(s) => Some(*s),
            Observation::Continuous(_) => None,
        }
    }
}

/// Feature map descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    /// One-hot over `n` discrete states.
    Tabular { n: usize },
    /// All monomials of total degree `<= degree` in the inputs rescaled from
    /// `[lows, highs]` to `[-1, 1]`, constant first.
    Polynomial {
        degree: usize,
        lows: Vec<f64>,
        highs: Vec<f64>,
    },
    /// `exp(-sum_j (x_j - mu_j)^2 / sigma_j)` over a grid of centers spaced
    /// uniformly on `[lows, highs]` (end points included). Default widths are
    /// `(h - l)^2 / n^3` per dimension.
    RbfGrid {
        lows: Vec<f64>,
        highs: Vec<f64>,
        counts: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        widths: Option<Vec<f64>>,
    },
    /// `(1(a=0) psi(s), ..., 1(a=A-1) psi(s))`.
    StackedActions { base: Box<FeatureMap>, n_actions: usize },
}

impl FeatureMap {
    pub fn tabular(n: usize) -> Self {
        FeatureMap::Tabular { n }
    }

    /// Polynomial over a scalar state in `[low, high]`.
    pub fn polynomial_1d(degree: usize, low: f64, high: f64) -> Self {
        FeatureMap::Polynomial {
            degree,
            lows: vec![low],
            highs: vec![high],
        }
    }

    pub fn rbf_grid(lows: Vec<f64>, highs: Vec<f64>, counts: Vec<usize>) -> Self {
        FeatureMap::RbfGrid {
            lows,
            highs,
            counts,
            widths: None,
        }
    }

    pub fn stacked(base: FeatureMap, n_actions: usize) -> Self {
        FeatureMap::StackedActions {
            base: Box::new(base),
            n_actions,
        }
    }

    /// Checks shapes and parameters.
    pub fn validate(&self) -> Result<()> {
        match self {
            FeatureMap::Tabular { n } => {
                if *n == 0 {
                    return Err(Error::Config("tabular map needs n >= 1".into()));
                }
            }
            FeatureMap::Polynomial { lows, highs, .. } => check_box(lows, highs)?,
            FeatureMap::RbfGrid {
                lows,
                highs,
                counts,
                widths,
            } => {
                check_box(lows, highs)?;
                if counts.len() != lows.len() || counts.iter().any(|n| *n == 0) {
                    return Err(Error::Config("rbf grid needs one positive count per dimension".into()));
                }
                if let Some(w) = widths {
                    if w.len() != lows.len() || w.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                        return Err(Error::Config("rbf widths must be positive, one per dimension".into()));
                    }
                }
            }
            FeatureMap::StackedActions { base, n_actions } => {
                if *n_actions == 0 {
                    return Err(Error::Config("stacked map needs n_actions >= 1".into()));
                }
                if matches!(**base, FeatureMap::StackedActions { .. }) {
                    return Err(Error::Config("stacked maps cannot be nested".into()));
                }
                base.validate()?;
            }
        }
        Ok(())
    }

    /// Output dimension `L`.
    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::Tabular { n } => *n,
            FeatureMap::Polynomial { degree, lows, .. } => binomial(lows.len() + degree, *degree),
            FeatureMap::RbfGrid { counts, .. } => counts.iter().product(),
            FeatureMap::StackedActions { base, n_actions } => base.dim() * n_actions,
        }
    }

    pub fn n_actions(&self) -> Option<usize> {
        match self {
            FeatureMap::StackedActions { n_actions, .. } => Some(*n_actions),
            _ => None,
        }
    }

    /// Per-dimension RBF widths.
    pub fn rbf_widths(&self) -> Option<Vec<f64>> {
        match self {
            FeatureMap::RbfGrid {
                lows,
                highs,
                counts,
                widths,
            } => Some(widths.clone().unwrap_or_else(|| {
                lows.iter()
                    .zip(highs)
                    .zip(counts)
                    .map(|((l, h), n)| (h - l).powi(2) / (*n as f64).powi(3))
                    .collect()
            })),
            _ => None,
        }
    }

    /// RBF centers in row-major grid order (last dimension fastest).
    pub fn rbf_centers(&self) -> Option<Vec<Vec<f64>>> {
        let FeatureMap::RbfGrid {
            lows, highs, counts, ..
        } = self
        else {
            return None;
        };
        let axes: Vec<Vec<f64>> = lows
            .iter()
            .zip(highs)
            .zip(counts)
            .map(|((l, h), n)| linspace(*l, *h, *n))
            .collect();
        let mut centers = vec![Vec::new()];
        for axis in &axes {
            centers = centers
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |c| {
                        let mut p = prefix.clone();
                        p.push(*c);
                        p
                    })
                })
                .collect();
        }
        Some(centers)
    }

    /// Features of a state; stacked maps require [`eval`](Self::eval).
    pub fn eval_state(&self, obs: &Observation) -> Result<DVector<f64>> {
        match self {
            FeatureMap::Tabular { n } => {
                let s = obs
                    .index()
                    .ok_or_else(|| Error::Domain("tabular features need a discrete state".into()))?;
                if s >= *n {
                    return Err(Error::Domain(format!("state {s} out of range 0..{n}")));
                }
                let mut out = DVector::zeros(*n);
                out[s] = 1.0;
                Ok(out)
            }
            FeatureMap::Polynomial { degree, lows, highs } => {
                let x = scaled_point(obs, lows, highs)?;
                let mut out = Vec::with_capacity(self.dim());
                for exponents in monomials(x.len(), *degree) {
                    out.push(x.iter().zip(&exponents).map(|(v, e)| v.powi(*e as i32)).product());
                }
                Ok(DVector::from_vec(out))
            }
            FeatureMap::RbfGrid { lows, .. } => {
                let x = obs.point();
                if x.len() != lows.len() {
                    return Err(Error::Domain(format!(
                        "input of dimension {}, map expects {}",
                        x.len(),
                        lows.len()
                    )));
                }
                let widths = self.rbf_widths().unwrap_or_default();
                let centers = self.rbf_centers().unwrap_or_default();
                Ok(DVector::from_iterator(
                    centers.len(),
                    centers.iter().map(|mu| {
                        let q: f64 = x
                            .iter()
                            .zip(mu)
                            .zip(&widths)
                            .map(|((xi, m), w)| (xi - m).powi(2) / w)
                            .sum();
                        (-q).exp()
                    }),
                ))
            }
            FeatureMap::StackedActions { .. } => Err(Error::Domain(
                "state-action features need an action".into(),
            )),
        }
    }

    /// Features of a state, or of a state-action pair for stacked maps.
    pub fn eval(&self, obs: &Observation, action: Option<usize>) -> Result<DVector<f64>> {
        match (self, action) {
            (FeatureMap::StackedActions { base, n_actions }, Some(a)) => {
                if a >= *n_actions {
                    return Err(Error::Domain(format!("action {a} out of range 0..{n_actions}")));
                }
                let psi = base.eval_state(obs)?;
                let k = psi.len();
                let mut out = DVector::zeros(k * n_actions);
                out.rows_mut(a * k, k).copy_from(&psi);
                Ok(out)
            }
            (FeatureMap::StackedActions { .. }, None) => Err(Error::Domain(
                "state-action features need an action".into(),
            )),
            (_, _) => self.eval_state(obs),
        }
    }
}

fn check_box(lows: &[f64], highs: &[f64]) -> Result<()> {
    if lows.is_empty() || lows.len() != highs.len() {
        return Err(Error::Config("lows and highs must be non-empty and of equal length".into()));
    }
    if lows.iter().zip(highs).any(|(l, h)| !(h > l) || !l.is_finite() || !h.is_finite()) {
        return Err(Error::Config("every high must exceed its low".into()));
    }
    Ok(())
}

fn scaled_point(obs: &Observation, lows: &[f64], highs: &[f64]) -> Result<Vec<f64>> {
    let x = obs.point();
    if x.len() != lows.len() {
        return Err(Error::Domain(format!(
            "input of dimension {}, map expects {}",
            x.len(),
            lows.len()
        )));
    }
    Ok(x.iter()
        .zip(lows.iter().zip(highs))
        .map(|(v, (l, h))| 2.0 * (v - l) / (h - l) - 1.0)
        .collect())
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Exponent vectors of all monomials in `k` variables with total degree
/// `<= degree`, ordered by total degree then lexicographically (descending
/// in the first variable).
fn monomials(k: usize, degree: usize) -> Vec<Vec<usize>> {
    fn fill(k: usize, total: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() + 1 == k {
            prefix.push(total);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=total).rev() {
            prefix.push(e);
            fill(k, total - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for total in 0..=degree {
        fill(k, total, &mut Vec::new(), &mut out);
    }
    out
}

fn linspace(low: f64, high: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (low + high)];
    }
    (0..n)
        .map(|i| low + (high - low) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Overlap of two neighbouring one-dimensional RBFs of width `sigma` with
/// centers `c1 < c2`: the area under `min(psi_1, psi_2)` divided by the
/// area under `psi_1`, both by the midpoint rule on `points` cells of
/// `[low, high]`.
pub fn rbf_overlap_ratio(c1: f64, c2: f64, sigma: f64, low: f64, high: f64, points: usize) -> f64 {
    let h = (high - low) / points as f64;
    let (mut both, mut single) = (0.0, 0.0);
    for i in 0..points {
        let x = low + (i as f64 + 0.5) * h;
        let a = (-(x - c1).powi(2) / sigma).exp();
        let b = (-(x - c2).powi(2) / sigma).exp();
        both += a.min(b);
        single += a;
    }
    both / single
}

/// Dense `Phi` with full column rank and its unweighted Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    phi: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl FeatureMatrix {
    /// Verifies `rank(Phi) = L` by SVD with relative tolerance [`RANK_TOL`].
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        let l = phi.ncols();
        if phi.nrows() < l || l == 0 {
            return Err(Error::RankDeficient {
                rank: phi.nrows().min(l),
                expected: l,
            });
        }
        if phi.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("feature matrix has non-finite entries".into()));
        }
        let singular = phi.clone().svd(false, false).singular_values;
        let top = singular.max();
        let rank = singular.iter().filter(|s| **s > RANK_TOL * top).count();
        if top == 0.0 || rank < l {
            return Err(Error::RankDeficient { rank, expected: l });
        }
        let gram = phi.transpose() * &phi;
        Ok(FeatureMatrix { phi, gram })
    }

    /// Rows `phi(s)` for `s = 0..n_states`.
    pub fn over_states(map: &FeatureMap, n_states: usize) -> Result<Self> {
        let rows = (0..n_states)
            .map(|s| map.eval_state(&Observation::Discrete(s)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(stack_rows(&rows, map.dim()))
    }

    /// Rows `phi(s, a)` in order `s * A + a`.
    pub fn over_pairs(map: &FeatureMap, n_states: usize, n_actions: usize) -> Result<Self> {
        let mut rows = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                rows.push(map.eval(&Observation::Discrete(s), Some(a))?);
            }
        }
        Self::new(stack_rows(&rows, map.dim()))
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// `Phi' Phi`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `Phi' D Phi`.
    pub fn weighted_gram(&self, d: &DVector<f64>) -> Result<DMatrix<f64>> {
        if d.len() != self.phi.nrows() {
            return Err(Error::Domain(format!(
                "weights of length {}, feature matrix has {} rows",
                d.len(),
                self.phi.nrows()
            )));
        }
        let mut weighted = self.phi.clone();
        for (mut row, w) in weighted.row_iter_mut().zip(d.iter()) {
            row *= *w;
        }
        Ok(self.phi.transpose() * weighted)
    }

    pub fn n_rows(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.phi.ncols()
    }

    /// Writes `row,f0,f1,...` CSV.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.n_features()).map(|j| format!("f{j}")).collect();
        writeln!(out, "row,{}", header.join(","))?;
        for (i, row) in self.phi.row_iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            writeln!(out, "{i},{}", cells.join(","))?;
        }
        Ok(())
    }
}

fn stack_rows(rows: &[DVector<f64>], dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j])
}
