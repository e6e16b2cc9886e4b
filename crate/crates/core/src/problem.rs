//! Declarative description of the continuous optimal control problem.
//!
//! A [`ProblemSpec`] carries the horizon `T`, the control weight `lambda`,
//! the PDE coefficients `alpha` (diffusion) and `c` (reaction), the initial
//! state and the target. Values are immutable after [`validate`] and safe to
//! share across threads.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::SpatialMesh;

/// Analytic catalog entries plus mesh-tied nodal tables.
#[derive(Debug, Clone)]
pub enum DataFunction {
    Zero,
    Constant {
        value: f64,
    },
    /// Product of cosines, `prod_i cos(freq * pi * x_i)`.
    CosProduct {
        freq: f64,
    },
    /// Nodal values of a P1 function on `mesh`; evaluated anywhere in the
    /// domain by linear interpolation, exact at the nodes.
    Tabulated {
        mesh: Arc<SpatialMesh>,
        values: Vec<f64>,
    },
}

impl DataFunction {
    /// Build a catalog entry by name; used by configuration files.
    /// Known names: "zero", "constant", "cos_product".
    pub fn from_catalog(name: &str, value: Option<f64>, freq: Option<f64>) -> Option<Self> {
        match name {
            "zero" => Some(DataFunction::Zero),
            "constant" => Some(DataFunction::Constant {
                value: value.unwrap_or(1.0),
            }),
            "cos_product" => Some(DataFunction::CosProduct {
                freq: freq.unwrap_or(1.0),
            }),
            _ => None,
        }
    }

    /// Evaluate at a spatial point; `time` is accepted for tracking data and
    /// ignored by time-independent entries.
    pub fn eval(&self, point: &[f64], _time: Option<f64>) -> Result<f64> {
        match self {
            DataFunction::Zero => Ok(0.0),
            DataFunction::Constant { value } => Ok(*value),
            DataFunction::CosProduct { freq } => {
                if point.iter().any(|&x| !(-1e-12..=1.0 + 1e-12).contains(&x)) {
                    return Err(Error::OutOfDomain {
                        point: point.to_vec(),
                    });
                }
                Ok(point
                    .iter()
                    .map(|&x| (freq * std::f64::consts::PI * x).cos())
                    .product())
            }
            DataFunction::Tabulated { mesh, values } => {
                if values.len() != mesh.node_count() {
                    return Err(Error::SizeMismatch {
                        what: "tabulated nodal values",
                        expected: mesh.node_count(),
                        actual: values.len(),
                    });
                }
                let (e, weights) = mesh.locate(point)?;
                let nodes: Vec<usize> = match mesh.elements() {
                    crate::fem::Elements::Segments(s) => s[e].to_vec(),
                    crate::fem::Elements::Triangles(t) => t[e].to_vec(),
                };
                Ok(nodes
                    .iter()
                    .zip(&weights)
                    .map(|(&n, &w)| w * values[n])
                    .sum())
            }
        }
    }
}

/// Evaluate a data function; thin free-function wrapper over
/// [`DataFunction::eval`].
pub fn eval_data(f: &DataFunction, point: &[f64], time: Option<f64>) -> Result<f64> {
    f.eval(point, time)
}

/// End-time target `y_Omega` (distance measured at `t = T` only) or tracking
/// target `y_Q` (distance integrated over the whole horizon).
#[derive(Debug, Clone)]
pub enum TargetSpec {
    EndTime(DataFunction),
    Tracking(DataFunction),
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    /// Space dimension, 1 or 2.
    pub dim: usize,
    /// Final time T > 0.
    pub t_final: f64,
    /// Control weight lambda > 0.
    pub lambda: f64,
    /// Diffusion coefficient alpha >= 0, constant per time interval.
    pub alpha: f64,
    /// Reaction coefficient, any finite real.
    pub c: f64,
    /// Initial state y_0.
    pub y0: DataFunction,
    /// Mandatory target; `None` is rejected by [`validate`].
    pub target: Option<TargetSpec>,
}

/// A [`ProblemSpec`] whose invariants have been checked; the target is
/// guaranteed present.
#[derive(Debug, Clone)]
pub struct ValidatedProblem(ProblemSpec);

impl ValidatedProblem {
    pub fn spec(&self) -> &ProblemSpec {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    pub fn t_final(&self) -> f64 {
        self.0.t_final
    }

    pub fn lambda(&self) -> f64 {
        self.0.lambda
    }

    pub fn alpha(&self) -> f64 {
        self.0.alpha
    }

    pub fn c(&self) -> f64 {
        self.0.c
    }

    pub fn y0(&self) -> &DataFunction {
        &self.0.y0
    }

    pub fn target(&self) -> &TargetSpec {
        self.0.target.as_ref().expect("validated")
    }
}

/// Check all spec invariants; idempotent (re-validating the inner spec of a
/// [`ValidatedProblem`] returns an equal value).
pub fn validate(spec: ProblemSpec) -> Result<ValidatedProblem> {
    if !(spec.t_final > 0.0) {
        return Err(Error::NonPositive {
            field: "T",
            value: spec.t_final,
        });
    }
    if !(spec.lambda > 0.0) {
        return Err(Error::NonPositive {
            field: "lambda",
            value: spec.lambda,
        });
    }
    if spec.alpha < 0.0 || !spec.alpha.is_finite() {
        return Err(Error::NegativeAlpha { value: spec.alpha });
    }
    if !spec.c.is_finite() {
        return Err(Error::NonPositive {
            field: "c (must be finite)",
            value: spec.c,
        });
    }
    if spec.dim != 1 && spec.dim != 2 {
        return Err(Error::UnsupportedDimension { dim: spec.dim });
    }
    if spec.target.is_none() {
        return Err(Error::MissingTarget);
    }
    Ok(ValidatedProblem(spec))
}

/// Names the solution path; serialized into run records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Reduced,
    AllAtOnce,
    Eig,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::build_interval_mesh;

    fn reference_spec() -> ProblemSpec {
        ProblemSpec {
            dim: 2,
            t_final: 1.0,
            lambda: 1.0,
            alpha: 1.0,
            c: 1.0,
            y0: DataFunction::CosProduct { freq: 1.0 },
            target: Some(TargetSpec::EndTime(DataFunction::CosProduct { freq: 2.0 })),
        }
    }

    #[test]
    fn validate_accepts_reference_values() {
        assert!(validate(reference_spec()).is_ok());
    }

    #[test]
    fn validate_rejects_zero_lambda() {
        let mut s = reference_spec();
        s.lambda = 0.0;
        assert!(matches!(
            validate(s),
            Err(Error::NonPositive { field: "lambda", .. })
        ));
    }

    #[test]
    fn validate_rejects_negative_alpha() {
        let mut s = reference_spec();
        s.alpha = -1.0;
        assert!(matches!(validate(s), Err(Error::NegativeAlpha { .. })));
    }

    #[test]
    fn validate_rejects_nonpositive_horizon() {
        let mut s = reference_spec();
        s.t_final = 0.0;
        assert!(matches!(
            validate(s),
            Err(Error::NonPositive { field: "T", .. })
        ));
    }

    #[test]
    fn validate_rejects_missing_target() {
        let mut s = reference_spec();
        s.target = None;
        assert!(matches!(validate(s), Err(Error::MissingTarget)));
    }

    #[test]
    fn validate_is_idempotent() {
        let v = validate(reference_spec()).unwrap();
        let v2 = validate(v.spec().clone()).unwrap();
        assert_eq!(v.t_final(), v2.t_final());
        assert_eq!(v.lambda(), v2.lambda());
    }

    #[test]
    fn eval_cos_product() {
        let f = DataFunction::CosProduct { freq: 1.0 };
        assert!((f.eval(&[0.0, 0.0], None).unwrap() - 1.0).abs() < 1e-15);
        let yt = DataFunction::CosProduct { freq: 2.0 };
        assert!((yt.eval(&[1.0, 1.0], None).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(DataFunction::Zero.eval(&[0.3], None).unwrap(), 0.0);
        assert!(f.eval(&[2.0], None).is_err());
    }

    #[test]
    fn eval_tabulated_exact_at_nodes() {
        let mesh = Arc::new(build_interval_mesh(8).unwrap());
        let values: Vec<f64> = (0..9).map(|i| (i as f64).powi(2)).collect();
        let f = DataFunction::Tabulated {
            mesh: mesh.clone(),
            values: values.clone(),
        };
        for i in 0..9 {
            let x = mesh.node(i)[0];
            assert_eq!(f.eval(&[x], None).unwrap(), values[i]);
        }
    }

    #[test]
    fn catalog_lookup() {
        assert!(DataFunction::from_catalog("cos_product", None, Some(2.0)).is_some());
        assert!(DataFunction::from_catalog("zero", None, None).is_some());
        assert!(DataFunction::from_catalog("nope", None, None).is_none());
    }
}
