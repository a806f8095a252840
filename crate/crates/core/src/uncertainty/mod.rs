//! Uncertainty sets over transition perturbations, their support functions,
//! the set-mismatch distance and the projected-operator contraction modulus.

mod simplex;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the sum-zero condition on vertices.
pub const SUM_ZERO_TOL: f64 = 1e-12;

/// A set `U` of perturbations `u` with `p0 + u` a transition row.
///
/// Serialized with a `"kind"` tag: `degenerate`, `finite`, `centered_sphere`
/// or `simplex_sphere`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UncertaintySet {
    /// `{0}`: the nominal model is exact.
    Degenerate,
    /// Finite list of perturbation vertices; the support function is a
    /// minimum over them.
    #[serde(rename = "finite")]
    FiniteVertices { vertices: Vec<Vec<f64>> },
    /// `{x : ||x||_2 <= radius}`, intersected with `sum(x) = 0` when
    /// `sum_zero` is set. Built without knowledge of the nominal model.
    CenteredSphere {
        radius: f64,
        #[serde(default = "default_true")]
        sum_zero: bool,
    },
    /// `{x : ||x||_2 <= radius, sum(x) = 0, -p0 <= x <= 1 - p0}` so every
    /// member keeps `p0 + x` in the simplex. An empty `nominal` is filled in
    /// from the owning model's kernel row.
    SimplexSphere {
        radius: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        nominal: Vec<f64>,
    },
}

fn default_true() -> bool {
    true
}

/// Value and attaining point of `inf { u.v : u in U }`.
#[derive(Debug, Clone, PartialEq)]
pub struct Support {
    pub value: f64,
    pub minimizer: DVector<f64>,
}

impl UncertaintySet {
    pub fn finite(vertices: Vec<Vec<f64>>) -> Result<Self> {
        let set = UncertaintySet::FiniteVertices { vertices };
        set.validate()?;
        Ok(set)
    }

    pub fn centered_sphere(radius: f64) -> Result<Self> {
        let set = UncertaintySet::CenteredSphere {
            radius,
            sum_zero: true,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn simplex_sphere(radius: f64, nominal: Vec<f64>) -> Result<Self> {
        let set = UncertaintySet::SimplexSphere { radius, nominal };
        set.validate()?;
        Ok(set)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            UncertaintySet::Degenerate => "degenerate",
            UncertaintySet::FiniteVertices { .. } => "finite",
            UncertaintySet::CenteredSphere { .. } => "centered_sphere",
            UncertaintySet::SimplexSphere { .. } => "simplex_sphere",
        }
    }

    /// Dimension when the set fixes one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            UncertaintySet::FiniteVertices { vertices } => vertices.first().map(Vec::len),
            UncertaintySet::SimplexSphere { nominal, .. } if !nominal.is_empty() => {
                Some(nominal.len())
            }
            _ => None,
        }
    }

    /// Checks the structural invariants of the variant.
    pub fn validate(&self) -> Result<()> {
        match self {
            UncertaintySet::Degenerate => Ok(()),
            UncertaintySet::FiniteVertices { vertices } => {
                let Some(first) = vertices.first() else {
                    return Err(Error::InvalidModel("finite set without vertices".into()));
                };
                for (k, u) in vertices.iter().enumerate() {
                    if u.len() != first.len() {
                        return Err(Error::InvalidModel(format!(
                            "vertex {k} has length {}, expected {}",
                            u.len(),
                            first.len()
                        )));
                    }
                    if u.iter().any(|x| !x.is_finite()) {
                        return Err(Error::InvalidModel(format!("vertex {k} is not finite")));
                    }
                    let sum: f64 = u.iter().sum();
                    if sum.abs() > SUM_ZERO_TOL {
                        return Err(Error::InvalidModel(format!(
                            "vertex {k} sums to {sum:e}, expected 0"
                        )));
                    }
                }
                Ok(())
            }
            UncertaintySet::CenteredSphere { radius, .. } => check_radius(*radius),
            UncertaintySet::SimplexSphere { radius, nominal } => {
                check_radius(*radius)?;
                if !nominal.is_empty() {
                    check_distribution(nominal)?;
                }
                Ok(())
            }
        }
    }

    /// Binds an empty simplex-sphere nominal row to `p0`; checks consistency
    /// when one is already present. Other variants are untouched.
    pub fn bind_nominal(&mut self, p0: &[f64]) -> Result<()> {
        if let UncertaintySet::SimplexSphere { nominal, .. } = self {
            if nominal.is_empty() {
                *nominal = p0.to_vec();
            } else if nominal.len() != p0.len()
                || nominal.iter().zip(p0).any(|(a, b)| (a - b).abs() > 1e-12)
            {
                return Err(Error::InvalidModel(
                    "simplex sphere nominal row differs from the kernel row".into(),
                ));
            }
        }
        Ok(())
    }

    /// Checks that `p0 + u` is a distribution for every finite vertex.
    pub fn check_row(&self, p0: &[f64]) -> Result<()> {
        self.validate()?;
        if let UncertaintySet::FiniteVertices { vertices } = self {
            for (k, u) in vertices.iter().enumerate() {
                if u.len() != p0.len() {
                    return Err(Error::InvalidModel(format!(
                        "vertex {k} has length {}, kernel row has {}",
                        u.len(),
                        p0.len()
                    )));
                }
                let row: Vec<f64> = p0.iter().zip(u).map(|(p, x)| p + x).collect();
                check_distribution(&row).map_err(|e| {
                    Error::InvalidModel(format!("vertex {k} leaves the simplex: {e}"))
                })?;
            }
        }
        Ok(())
    }

    /// `sigma_U(v) = inf { u.v : u in U }` together with a minimizer.
    pub fn support_inf(&self, v: &DVector<f64>) -> Result<Support> {
        if let Some(dim) = self.dim() {
            if dim != v.len() {
                return Err(Error::Domain(format!(
                    "vector of length {} against a set of dimension {dim}",
                    v.len()
                )));
            }
        }
        let n = v.len();
        match self {
            UncertaintySet::Degenerate => Ok(Support {
                value: 0.0,
                minimizer: DVector::zeros(n),
            }),
            UncertaintySet::FiniteVertices { vertices } => {
                let mut best = 0;
                let mut best_value = f64::INFINITY;
                for (k, u) in vertices.iter().enumerate() {
                    let value: f64 = u.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                    if value < best_value {
                        best = k;
                        best_value = value;
                    }
                }
                Ok(Support {
                    value: best_value,
                    minimizer: DVector::from_column_slice(&vertices[best]),
                })
            }
            UncertaintySet::CenteredSphere { radius, sum_zero } => {
                let shifted = if *sum_zero {
                    let mean = v.mean();
                    v.map(|x| x - mean)
                } else {
                    v.clone()
                };
                let norm = shifted.norm();
                if norm == 0.0 || *radius == 0.0 {
                    return Ok(Support {
                        value: 0.0,
                        minimizer: DVector::zeros(n),
                    });
                }
                Ok(Support {
                    value: -radius * norm,
                    minimizer: shifted * (-radius / norm),
                })
            }
            UncertaintySet::SimplexSphere { radius, nominal } => {
                if nominal.is_empty() {
                    return Err(Error::InvalidModel(
                        "simplex sphere is not bound to a nominal row".into(),
                    ));
                }
                let (value, x) = simplex::minimize_linear(v.as_slice(), *radius, nominal);
                Ok(Support {
                    value,
                    minimizer: DVector::from_vec(x),
                })
            }
        }
    }

    /// Membership test with absolute tolerance `tol`.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        match self {
            UncertaintySet::Degenerate => x.iter().all(|v| v.abs() <= tol),
            UncertaintySet::FiniteVertices { vertices } => vertices.iter().any(|u| {
                u.len() == x.len() && u.iter().zip(x.iter()).all(|(a, b)| (a - b).abs() <= tol)
            }),
            UncertaintySet::CenteredSphere { radius, sum_zero } => {
                x.norm() <= radius + tol && (!sum_zero || x.sum().abs() <= tol)
            }
            UncertaintySet::SimplexSphere { radius, nominal } => {
                nominal.len() == x.len()
                    && x.norm() <= radius + tol
                    && x.sum().abs() <= tol
                    && x
                        .iter()
                        .zip(nominal)
                        .all(|(xi, p)| *xi >= -p - tol && *xi <= 1.0 - p + tol)
            }
        }
    }

    /// Vertex list of a finite set. `Degenerate` is the single vertex `0`.
    fn vertices_for(&self, dim: usize) -> Result<Vec<DVector<f64>>> {
        match self {
            UncertaintySet::Degenerate => Ok(vec![DVector::zeros(dim)]),
            UncertaintySet::FiniteVertices { vertices } => {
                Ok(vertices.iter().map(|u| DVector::from_column_slice(u)).collect())
            }
            other => Err(Error::UnsupportedVariant(other.kind())),
        }
    }
}

fn check_radius(radius: f64) -> Result<()> {
    if radius.is_finite() && radius >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!("radius {radius} must be finite and >= 0")))
    }
}

pub(crate) fn check_distribution(row: &[f64]) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < -SUM_ZERO_TOL) {
        return Err(Error::InvalidModel(format!("row {row:?} has negative entries")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > SUM_ZERO_TOL {
        return Err(Error::InvalidModel(format!("row sums to {sum}, expected 1")));
    }
    Ok(())
}

/// Sign convention for the closed-form Gram path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramSign {
    /// `-sqrt(r w'Gw)`: a genuine infimum.
    #[default]
    Infimum,
    /// `+sqrt(r w'Gw)` as printed in the original experiments.
    StrictCompat,
}

/// Closed-form support of a sphere of radius `sqrt(r)` (no sum-zero
/// constraint) evaluated at `Phi w`, using the precomputed `gram = Phi' Phi`.
pub fn support_inf_gram(gram: &DMatrix<f64>, w: &DVector<f64>, r: f64, sign: GramSign) -> Result<f64> {
    if gram.nrows() != w.len() || gram.ncols() != w.len() {
        return Err(Error::Domain(format!(
            "gram is {}x{}, weights have length {}",
            gram.nrows(),
            gram.ncols(),
            w.len()
        )));
    }
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!("radius parameter {r} must be >= 0")));
    }
    let q = w.dot(&(gram * w));
    let tol = 1e-12 * (1.0 + gram.norm() * w.norm_squared());
    if q < -tol || !q.is_finite() {
        return Err(Error::Numeric(format!(
            "quadratic form w'Gw = {q:e} is negative; gram is not PSD"
        )));
    }
    let magnitude = (r * q.max(0.0)).sqrt();
    Ok(match sign {
        GramSign::Infimum => -magnitude,
        GramSign::StrictCompat => magnitude,
    })
}

/// `rho_{s,a}` between the exact set `U` and its approximation `U_hat`:
/// the largest `||x - y||_d / d_min` over `x` in one set and `y` in the part
/// of the other set not shared with it. Only finite sets are supported.
pub fn set_distance_rho(exact: &UncertaintySet, approx: &UncertaintySet, d: &DVector<f64>) -> Result<f64> {
    let dim = d.len();
    let d_min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(d_min > 0.0) {
        return Err(Error::Domain("distribution weights must be positive".into()));
    }
    let u = exact.vertices_for(dim)?;
    let u_hat = approx.vertices_for(dim)?;
    for x in u.iter().chain(&u_hat) {
        if x.len() != dim {
            return Err(Error::Domain(format!(
                "vertex of length {} against weights of length {dim}",
                x.len()
            )));
        }
    }
    let same = |a: &DVector<f64>, b: &DVector<f64>| {
        a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= SUM_ZERO_TOL)
    };
    let minus = |a: &[DVector<f64>], b: &[DVector<f64>]| -> Vec<DVector<f64>> {
        a.iter().filter(|x| !b.iter().any(|y| same(x, y))).cloned().collect()
    };
    let farthest = |xs: &[DVector<f64>], ys: &[DVector<f64>]| -> f64 {
        let mut best = 0.0_f64;
        for x in xs {
            for y in ys {
                best = best.max(crate::linalg::weighted_norm(&(x - y), d));
            }
        }
        best
    };
    let exact_only = minus(&u, &u_hat);
    let approx_only = minus(&u_hat, &u);
    let rho = farthest(&u_hat, &exact_only).max(farthest(&u, &approx_only));
    Ok(rho / d_min)
}

/// `rho = max_{s,a} rho_{s,a}` over aligned per-pair set lists.
pub fn model_set_distance(
    exact: &[UncertaintySet],
    approx: &[UncertaintySet],
    d: &DVector<f64>,
) -> Result<f64> {
    if exact.len() != approx.len() {
        return Err(Error::Domain(format!(
            "{} exact sets against {} approximate sets",
            exact.len(),
            approx.len()
        )));
    }
    exact
        .iter()
        .zip(approx)
        .try_fold(0.0_f64, |m, (u, u_hat)| Ok(m.max(set_distance_rho(u, u_hat, d)?)))
}

/// Parameters of the contraction modulus of the projected approximate
/// robust TD(lambda) operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionInputs {
    pub discount: f64,
    /// Exploration bound `beta`: `alpha P(s'|s,pi(s)) <= beta P0(s'|s,pi_e(s))`.
    pub beta: f64,
    /// Set mismatch `rho`.
    pub rho: f64,
    pub lambda: f64,
}

impl ContractionInputs {
    pub fn new(discount: f64, beta: f64, rho: f64, lambda: f64) -> Result<Self> {
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !open_unit(discount) {
            return Err(Error::Domain(format!("discount {discount} not in (0,1)")));
        }
        if !open_unit(beta) {
            return Err(Error::Domain(format!("beta {beta} not in (0,1)")));
        }
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::Domain(format!("rho {rho} must be >= 0")));
        }
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::Domain(format!("lambda {lambda} not in [0,1)")));
        }
        Ok(ContractionInputs {
            discount,
            beta,
            rho,
            lambda,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionCoefficient {
    pub value: f64,
    pub is_contraction: bool,
}

/// `c = (beta (2 - lambda) + rho alpha) / (1 - beta lambda)`.
pub fn contraction_coefficient(inputs: &ContractionInputs) -> ContractionCoefficient {
    let ContractionInputs {
        discount,
        beta,
        rho,
        lambda,
    } = *inputs;
    let value = (beta * (2.0 - lambda) + rho * discount) / (1.0 - beta * lambda);
    ContractionCoefficient {
        value,
        is_contraction: value < 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn centered_sphere_closed_form() {
        let set = UncertaintySet::centered_sphere(1.0).unwrap();
        let s = set.support_inf(&dvector![1.0, -1.0]).unwrap();
        assert!((s.value + 2f64.sqrt()).abs() < 1e-15);
        let h = 2f64.sqrt() / 2.0;
        assert!((s.minimizer[0] + h).abs() < 1e-15);
        assert!((s.minimizer[1] - h).abs() < 1e-15);
    }

    #[test]
    fn constants_are_annihilated() {
        let v = dvector![3.5, 3.5, 3.5];
        let sets = [
            UncertaintySet::Degenerate,
            UncertaintySet::centered_sphere(0.7).unwrap(),
            UncertaintySet::simplex_sphere(0.3, vec![0.2, 0.3, 0.5]).unwrap(),
            UncertaintySet::finite(vec![vec![0.1, -0.05, -0.05], vec![0.0, 0.2, -0.2]]).unwrap(),
        ];
        for set in &sets {
            assert!(set.support_inf(&v).unwrap().value.abs() < 1e-14, "{}", set.kind());
        }
    }

    #[test]
    fn finite_enumeration() {
        let set = UncertaintySet::finite(vec![vec![0.1, -0.1], vec![-0.1, 0.1]]).unwrap();
        let s = set.support_inf(&dvector![1.0, 2.0]).unwrap();
        assert!((s.value + 0.1).abs() < 1e-15);
        assert_eq!(s.minimizer, dvector![0.1, -0.1]);
    }

    #[test]
    fn dimension_mismatch_is_a_domain_error() {
        let set = UncertaintySet::finite(vec![vec![0.1, -0.1]]).unwrap();
        assert!(matches!(set.support_inf(&dvector![1.0, 2.0, 3.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn vertices_must_sum_to_zero() {
        assert!(UncertaintySet::finite(vec![vec![0.1, 0.1]]).is_err());
        assert!(UncertaintySet::finite(vec![]).is_err());
    }

    #[test]
    fn gram_closed_form() {
        let eye = DMatrix::<f64>::identity(2, 2);
        assert_eq!(support_inf_gram(&eye, &dvector![0.0, 0.0], 1.0, GramSign::Infimum).unwrap(), 0.0);
        assert_eq!(support_inf_gram(&eye, &dvector![3.0, 4.0], 1.0, GramSign::Infimum).unwrap(), -5.0);
        assert_eq!(
            support_inf_gram(&eye, &dvector![3.0, 4.0], 1.0, GramSign::StrictCompat).unwrap(),
            5.0
        );
        let bad = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            support_inf_gram(&bad, &dvector![1.0, 0.0], 1.0, GramSign::Infimum),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn gram_path_agrees_with_uncentered_sphere() {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.2, 1.0, 0.3, 0.3]);
        let w = dvector![0.7, -1.3];
        let r = 0.04;
        let gram = phi.transpose() * &phi;
        let closed = support_inf_gram(&gram, &w, r, GramSign::Infimum).unwrap();
        let sphere = UncertaintySet::CenteredSphere {
            radius: r.sqrt(),
            sum_zero: false,
        };
        let direct = sphere.support_inf(&(&phi * &w)).unwrap().value;
        assert!((closed - direct).abs() < 1e-10);
    }

    #[test]
    fn rho_of_identical_sets_is_zero() {
        let set = UncertaintySet::finite(vec![vec![0.1, -0.1], vec![0.0, 0.0]]).unwrap();
        assert_eq!(set_distance_rho(&set, &set, &dvector![0.5, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn rho_matches_pairwise_enumeration() {
        let u1 = vec![0.1, -0.1, 0.0];
        let u2 = vec![-0.05, 0.0, 0.05];
        let exact = UncertaintySet::finite(vec![u1.clone()]).unwrap();
        let approx = UncertaintySet::finite(vec![u1.clone(), u2.clone()]).unwrap();
        let d = dvector![0.2, 0.3, 0.5];
        // Only approx has an extra vertex, so rho = max_{x in U} ||x - u2||_d / d_min.
        let diff: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a - b).collect();
        let norm = (0.2 * diff[0].powi(2) + 0.3 * diff[1].powi(2) + 0.5 * diff[2].powi(2)).sqrt();
        let rho = set_distance_rho(&exact, &approx, &d).unwrap();
        assert!((rho - norm / 0.2).abs() < 1e-15);
    }

    #[test]
    fn rho_scaling_law() {
        let exact = UncertaintySet::finite(vec![vec![0.1, -0.1]]).unwrap();
        let approx = UncertaintySet::finite(vec![vec![0.05, -0.05], vec![-0.02, 0.02]]).unwrap();
        let d = dvector![0.3, 0.7];
        let base = set_distance_rho(&exact, &approx, &d).unwrap();
        for c in [0.5, 2.0, 9.0] {
            let scaled = set_distance_rho(&exact, &approx, &(&d * c)).unwrap();
            assert!((scaled - base / c.sqrt()).abs() < 1e-12 * base);
        }
    }

    #[test]
    fn rho_rejects_continuous_sets() {
        let exact = UncertaintySet::centered_sphere(0.1).unwrap();
        assert!(matches!(
            set_distance_rho(&exact, &UncertaintySet::Degenerate, &dvector![0.5, 0.5]),
            Err(Error::UnsupportedVariant("centered_sphere"))
        ));
    }

    #[test]
    fn contraction_coefficient_values() {
        let c = contraction_coefficient(&ContractionInputs::new(0.9, 0.3, 0.0, 0.0).unwrap());
        assert!((c.value - 0.6).abs() < 1e-15 && c.is_contraction);
        let c = contraction_coefficient(&ContractionInputs::new(0.9, 0.4, 0.1, 0.5).unwrap());
        assert!((c.value - 0.8625).abs() < 1e-15);
        for alpha in [0.1, 0.5, 0.99] {
            let c = contraction_coefficient(&ContractionInputs::new(alpha, 0.45, 0.0, 0.0).unwrap());
            assert!((c.value - 0.9).abs() < 1e-15);
        }
        assert!(ContractionInputs::new(0.9, 1.2, 0.0, 0.0).is_err());
    }

    #[test]
    fn json_descriptors() {
        let set: UncertaintySet =
            serde_json::from_str(r#"{"kind":"centered_sphere","radius":0.5}"#).unwrap();
        assert_eq!(
            set,
            UncertaintySet::CenteredSphere {
                radius: 0.5,
                sum_zero: true
            }
        );
        let set: UncertaintySet = serde_json::from_str(r#"{"kind":"degenerate"}"#).unwrap();
        assert_eq!(set, UncertaintySet::Degenerate);
        let mut set: UncertaintySet =
            serde_json::from_str(r#"{"kind":"simplex_sphere","radius":0.1}"#).unwrap();
        set.bind_nominal(&[0.25, 0.75]).unwrap();
        assert_eq!(set.dim(), Some(2));
    }
}
