//! Maps `phi: R^d_in -> R^d_out`, their Jacobians, and the row normalizer.
//!
//! A [`PhiMap`] carries its own domain predicate. Points classified
//! [`Domain::Boundary`] are where `phi` may still be finite but is not
//! continuously differentiable (a kink, or a strip next to a pole); callers
//! that need a derivative treat them like points outside the domain.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Default floor on Jacobian row norms below which a row counts as zero.
pub const DEFAULT_ROW_FLOOR: f64 = 1e-300;

/// Half-width of the strip around a pole that is classified as boundary.
pub const POLE_STRIP: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Inside,
    Boundary,
    Outside,
}

impl Domain {
    /// The less favorable of two classifications.
    pub fn worst(self, other: Domain) -> Domain {
        use Domain::*;
        match (self, other) {
            (Outside, _) | (_, Outside) => Outside,
            (Boundary, _) | (_, Boundary) => Boundary,
            _ => Inside,
        }
    }

    pub fn is_inside(self) -> bool {
        self == Domain::Inside
    }
}

/// Step size rule for central finite differences.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum StepRule {
    /// `h_j = cbrt(eps) * max(1, |m_j|)`.
    #[default]
    CbrtEps,
    /// Fixed relative step `h_j = h * max(1, |m_j|)`.
    Relative(f64),
}

impl StepRule {
    fn step(self, coordinate: f64) -> f64 {
        let scale = coordinate.abs().max(1.0);
        match self {
            StepRule::CbrtEps => f64::EPSILON.cbrt() * scale,
            StepRule::Relative(h) => h * scale,
        }
    }
}

/// How [`PhiMap::jacobian`] obtains `D(m)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum JacobianMode {
    /// Analytic Jacobian when the map declares one, finite differences otherwise.
    #[default]
    Auto,
    /// Always central finite differences.
    FiniteDifference(StepRule),
}

pub type EvalFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
pub type DomainFn = Arc<dyn Fn(&[f64]) -> Domain + Send + Sync>;

/// A vector-valued map with a domain predicate and an optional analytic Jacobian.
#[derive(Clone)]
pub struct PhiMap {
    name: String,
    d_in: usize,
    d_out: usize,
    eval: EvalFn,
    jacobian: Option<JacobianFn>,
    domain: DomainFn,
}

impl fmt::Debug for PhiMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhiMap")
            .field("name", &self.name)
            .field("d_in", &self.d_in)
            .field("d_out", &self.d_out)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl PhiMap {
    pub fn new(
        name: impl Into<String>,
        d_in: usize,
        d_out: usize,
        eval: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        domain: impl Fn(&[f64]) -> Domain + Send + Sync + 'static,
    ) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::Dimension(format!(
                "map dimensions must be positive (d_in = {d_in}, d_out = {d_out})"
            )));
        }
        Ok(PhiMap {
            name: name.into(),
            d_in,
            d_out,
            eval: Arc::new(eval),
            jacobian: None,
            domain: Arc::new(domain),
        })
    }

    pub fn with_jacobian(
        mut self,
        jacobian: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn without_jacobian(mut self) -> Self {
        self.jacobian = None;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    /// Classifies `t`. Wrong dimension or non-finite coordinates are outside.
    pub fn domain(&self, t: &[f64]) -> Domain {
        if t.len() != self.d_in || t.iter().any(|x| !x.is_finite()) {
            return Domain::Outside;
        }
        (self.domain)(t)
    }

    /// `phi(t)` for `t` strictly inside the domain.
    pub fn eval(&self, t: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(t)?;
        if !self.domain(t).is_inside() {
            return Err(Error::domain(&self.name, t));
        }
        let value = (self.eval)(t);
        if value.len() != self.d_out {
            return Err(Error::Dimension(format!(
                "`{}` returned {} components, expected {}",
                self.name,
                value.len(),
                self.d_out
            )));
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain(&self.name, t));
        }
        Ok(value)
    }

    /// `D(m)`: the analytic Jacobian if declared, otherwise central differences.
    pub fn jacobian(&self, m: &[f64], mode: JacobianMode) -> Result<DMatrix<f64>> {
        match (mode, &self.jacobian) {
            (JacobianMode::Auto, Some(jac)) => {
                self.check_dim(m)?;
                if !self.domain(m).is_inside() {
                    return Err(Error::domain(&self.name, m));
                }
                let d = jac(m);
                if d.nrows() != self.d_out || d.ncols() != self.d_in {
                    return Err(Error::Dimension(format!(
                        "`{}` jacobian is {}x{}, expected {}x{}",
                        self.name,
                        d.nrows(),
                        d.ncols(),
                        self.d_out,
                        self.d_in
                    )));
                }
                Ok(d)
            }
            (JacobianMode::Auto, None) => self.numeric_jacobian(m, StepRule::CbrtEps),
            (JacobianMode::FiniteDifference(rule), _) => self.numeric_jacobian(m, rule),
        }
    }

    /// Central finite-difference Jacobian. Every stencil point must be inside.
    pub fn numeric_jacobian(&self, m: &[f64], rule: StepRule) -> Result<DMatrix<f64>> {
        self.check_dim(m)?;
        if !self.domain(m).is_inside() {
            return Err(Error::domain(&self.name, m));
        }
        let mut d = DMatrix::zeros(self.d_out, self.d_in);
        let mut plus = m.to_vec();
        let mut minus = m.to_vec();
        for j in 0..self.d_in {
            let h = rule.step(m[j]);
            plus[j] = m[j] + h;
            minus[j] = m[j] - h;
            let f_plus = self.eval(&plus)?;
            let f_minus = self.eval(&minus)?;
            let width = plus[j] - minus[j];
            for i in 0..self.d_out {
                d[(i, j)] = (f_plus[i] - f_minus[i]) / width;
            }
            plus[j] = m[j];
            minus[j] = m[j];
        }
        Ok(d)
    }

    /// The map `c * phi`, keeping the domain and scaling any analytic Jacobian.
    pub fn scaled(&self, c: f64) -> PhiMap {
        let eval = self.eval.clone();
        let jacobian = self.jacobian.clone().map(|jac| {
            Arc::new(move |m: &[f64]| jac(m) * c) as JacobianFn
        });
        PhiMap {
            name: format!("{c}*{}", self.name),
            d_in: self.d_in,
            d_out: self.d_out,
            eval: Arc::new(move |t: &[f64]| eval(t).into_iter().map(|v| c * v).collect()),
            jacobian,
            domain: self.domain.clone(),
        }
    }

    fn check_dim(&self, t: &[f64]) -> Result<()> {
        if t.len() != self.d_in {
            return Err(Error::Dimension(format!(
                "`{}` expects {} coordinates, got {}",
                self.name,
                self.d_in,
                t.len()
            )));
        }
        Ok(())
    }
}

/// `D(m)` together with `E(m) = diag(1/|D_k|)` and the unit-row product `E D`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedJacobian {
    pub d: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub ed: DMatrix<f64>,
}

impl NormalizedJacobian {
    pub fn new(d: DMatrix<f64>) -> Result<Self> {
        Self::with_floor(d, DEFAULT_ROW_FLOOR)
    }

    pub fn with_floor(d: DMatrix<f64>, floor: f64) -> Result<Self> {
        let rows = d.nrows();
        let mut e = DMatrix::zeros(rows, rows);
        let mut ed = d.clone();
        for k in 0..rows {
            let norm = d.row(k).norm();
            if !(norm >= floor) || !norm.is_finite() {
                return Err(Error::Rank { row: k, norm });
            }
            e[(k, k)] = 1.0 / norm;
            let mut row = ed.row_mut(k);
            row /= norm;
        }
        Ok(NormalizedJacobian { d, e, ed })
    }

    /// Diagonal entries of `E`.
    pub fn row_scales(&self) -> Vec<f64> {
        (0..self.e.nrows()).map(|k| self.e[(k, k)]).collect()
    }

    /// Largest deviation of an `E D` row norm from one.
    pub fn unit_row_error(&self) -> f64 {
        (0..self.ed.nrows())
            .map(|k| (self.ed.row(k).norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Shorthand for [`NormalizedJacobian::new`].
pub fn normalizer(d: DMatrix<f64>) -> Result<NormalizedJacobian> {
    NormalizedJacobian::new(d)
}

/// Names of the built-in catalog.
pub const BUILTIN_NAMES: [&str; 8] = [
    "reciprocal",
    "square",
    "absval",
    "sqrt",
    "iv_ratio",
    "mineq_phi1",
    "mineq_phi2",
    "mindist",
];

/// Built-in map by catalog name. `mindist` uses the parabola model.
pub fn builtin(name: &str) -> Result<PhiMap> {
    let phi = match name {
        "reciprocal" => PhiMap::new(name, 1, 1, |t| vec![1.0 / t[0]], |t| pole(t[0]))?
            .with_jacobian(|m| DMatrix::from_element(1, 1, -1.0 / (m[0] * m[0]))),
        "square" => PhiMap::new(name, 1, 1, |t| vec![t[0] * t[0]], |_| Domain::Inside)?
            .with_jacobian(|m| DMatrix::from_element(1, 1, 2.0 * m[0])),
        "absval" => PhiMap::new(name, 1, 1, |t| vec![t[0].abs()], |t| kink(t[0]))?
            .with_jacobian(|m| DMatrix::from_element(1, 1, m[0].signum())),
        "sqrt" => PhiMap::new(
            name,
            1,
            1,
            |t| vec![t[0].sqrt()],
            |t| {
                if t[0] > 0.0 {
                    Domain::Inside
                } else if t[0] == 0.0 {
                    Domain::Boundary
                } else {
                    Domain::Outside
                }
            },
        )?
        .with_jacobian(|m| DMatrix::from_element(1, 1, 0.5 / m[0].sqrt())),
        "iv_ratio" => PhiMap::new(name, 2, 1, |t| vec![t[0] / t[1]], |t| pole(t[1]))?
            .with_jacobian(|m| {
                DMatrix::from_row_slice(1, 2, &[1.0 / m[1], -m[0] / (m[1] * m[1])])
            }),
        "mineq_phi1" => PhiMap::new(
            name,
            2,
            2,
            |t| vec![(-t[0]).max(0.0), (-t[1]).max(0.0)],
            |t| kink(t[0]).worst(kink(t[1])),
        )?
        .with_jacobian(|m| {
            let slope = |x: f64| if x < 0.0 { -1.0 } else { 0.0 };
            DMatrix::from_row_slice(2, 2, &[slope(m[0]), 0.0, 0.0, slope(m[1])])
        }),
        "mineq_phi2" => PhiMap::new(
            name,
            2,
            1,
            |t| {
                let part = |x: f64| if x <= 0.0 { x * x } else { 0.0 };
                vec![part(t[0]) + part(t[1])]
            },
            |t| kink(t[0]).worst(kink(t[1])),
        )?
        .with_jacobian(|m| {
            let slope = |x: f64| if x < 0.0 { 2.0 * x } else { 0.0 };
            DMatrix::from_row_slice(1, 2, &[slope(m[0]), slope(m[1])])
        }),
        "mindist" => crate::applications::mindist_phi(
            crate::applications::MinDistModel::parabola(),
            crate::applications::DEFAULT_STARTS,
        ),
        other => return Err(Error::UnknownBuiltin(other.to_string())),
    };
    Ok(phi)
}

/// `phi(t) = a t + b`, used as the zero-remainder reference.
pub fn affine(a: DMatrix<f64>, b: Vec<f64>) -> Result<PhiMap> {
    if a.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "affine map: {} rows but offset of length {}",
            a.nrows(),
            b.len()
        )));
    }
    let (d_out, d_in) = a.shape();
    let jac = a.clone();
    Ok(PhiMap::new(
        "affine",
        d_in,
        d_out,
        move |t| {
            (0..d_out)
                .map(|i| b[i] + (0..d_in).map(|j| a[(i, j)] * t[j]).sum::<f64>())
                .collect()
        },
        |_| Domain::Inside,
    )?
    .with_jacobian(move |_| jac.clone()))
}

fn pole(x: f64) -> Domain {
    if x == 0.0 {
        Domain::Outside
    } else if x.abs() < POLE_STRIP {
        Domain::Boundary
    } else {
        Domain::Inside
    }
}

fn kink(x: f64) -> Domain {
    if x == 0.0 {
        Domain::Boundary
    } else {
        Domain::Inside
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn eval_examples() {
        let recip = builtin("reciprocal").unwrap();
        assert_eq!(recip.eval(&[1.0]).unwrap(), vec![1.0]);
        assert!(matches!(recip.eval(&[0.0]), Err(Error::Domain { .. })));

        let iv = builtin("iv_ratio").unwrap();
        assert_eq!(iv.eval(&[1.0, 2.0]).unwrap(), vec![0.5]);
        assert!(matches!(iv.eval(&[1.0, 0.0]), Err(Error::Domain { .. })));
        assert!(matches!(iv.eval(&[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn jacobian_examples() {
        let square = builtin("square").unwrap();
        let d = square.jacobian(&[3.0], JacobianMode::Auto).unwrap();
        assert_eq!(d[(0, 0)], 6.0);

        let recip = builtin("reciprocal").unwrap();
        let d = recip.jacobian(&[2.0], JacobianMode::Auto).unwrap();
        assert_eq!(d[(0, 0)], -0.25);
    }

    #[test]
    fn iv_ratio_jacobian_matches_hand_formula_and_differences() {
        let iv = builtin("iv_ratio").unwrap();
        let m = [1.0, 2.0];
        // hand formula (1/m2, -m1/m2^2)
        let expected = [1.0 / m[1], -m[0] / (m[1] * m[1])];
        let analytic = iv.jacobian(&m, JacobianMode::Auto).unwrap();
        let numeric = iv.numeric_jacobian(&m, StepRule::CbrtEps).unwrap();
        for j in 0..2 {
            assert_eq!(analytic[(0, j)], expected[j]);
            assert!(rel_err(numeric[(0, j)], expected[j]) < 1e-8);
        }
        assert_eq!(expected, [0.5, -0.25]);
    }

    #[test]
    fn stencil_leaving_domain_is_a_domain_error() {
        let sqrt = builtin("sqrt").unwrap();
        assert!(matches!(
            sqrt.numeric_jacobian(&[1e-9], StepRule::CbrtEps),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn normalizer_examples() {
        let nj = normalizer(DMatrix::from_row_slice(1, 2, &[3.0, 4.0])).unwrap();
        assert!((nj.e[(0, 0)] - 0.2).abs() < 1e-15);
        assert!((nj.ed[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((nj.ed[(0, 1)] - 0.8).abs() < 1e-15);

        let nj = normalizer(DMatrix::identity(2, 2)).unwrap();
        assert_eq!(nj.e, DMatrix::identity(2, 2));
        assert_eq!(nj.ed, DMatrix::identity(2, 2));

        let err = normalizer(DMatrix::from_row_slice(1, 2, &[0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::Rank { row: 0, .. }));
    }

    #[test]
    fn analytic_jacobians_match_differences_on_interior_grids() {
        let grids: Vec<(&str, Vec<Vec<f64>>)> = vec![
            ("reciprocal", grid1(0.1, 3.0)),
            ("square", grid1(-3.0, 3.0)),
            ("absval", grid1(0.05, 2.0)),
            ("sqrt", grid1(0.05, 4.0)),
            (
                "iv_ratio",
                (0..50)
                    .map(|i| vec![-2.0 + 0.08 * i as f64, 0.2 + 0.05 * i as f64])
                    .collect(),
            ),
            (
                "mineq_phi2",
                (0..50)
                    .map(|i| vec![-2.0 + 0.07 * i as f64, -1.5 + 0.061 * i as f64])
                    .collect(),
            ),
        ];
        for (name, points) in grids {
            let phi = builtin(name).unwrap();
            assert_eq!(points.len(), 50);
            for m in points {
                if !phi.domain(&m).is_inside() {
                    continue;
                }
                let a = phi.jacobian(&m, JacobianMode::Auto).unwrap();
                let n = phi.numeric_jacobian(&m, StepRule::CbrtEps).unwrap();
                let scale = a.norm().max(1e-12);
                assert!(
                    (a - n).norm() / scale <= 1e-5,
                    "{name} at {m:?}"
                );
            }
        }
    }

    fn grid1(lo: f64, hi: f64) -> Vec<Vec<f64>> {
        (0..50)
            .map(|i| vec![lo + (hi - lo) * i as f64 / 49.0])
            .collect()
    }

    #[test]
    fn builtins_are_finite_inside() {
        for name in BUILTIN_NAMES.iter().filter(|n| **n != "mindist") {
            let phi = builtin(name).unwrap();
            for i in 0..41 {
                for j in 0..41 {
                    let t: Vec<f64> = [-2.0 + 0.1 * i as f64, -2.0 + 0.1 * j as f64]
                        .into_iter()
                        .take(phi.d_in())
                        .collect();
                    if phi.domain(&t).is_inside() {
                        let v = phi.eval(&t).unwrap();
                        assert!(v.iter().all(|x| x.is_finite()));
                    }
                }
            }
        }
    }

    #[test]
    fn unknown_builtin() {
        assert!(matches!(builtin("cube"), Err(Error::UnknownBuiltin(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalization_is_scale_invariant(
                entries in prop::collection::vec(-10.0f64..10.0, 6),
                c in prop_oneof![-1e6f64..-1e-3, 1e-3f64..1e6],
            ) {
                let d = DMatrix::from_row_slice(2, 3, &entries);
                prop_assume!(d.row(0).norm() > 1e-6 && d.row(1).norm() > 1e-6);
                let base = normalizer(d.clone()).unwrap();
                let scaled = normalizer(d * c).unwrap();
                prop_assert!(base.unit_row_error() <= 1e-12);
                prop_assert!(scaled.unit_row_error() <= 1e-12);
                let diff = (scaled.ed - base.ed * c.signum()).norm();
                prop_assert!(diff <= 1e-12);
            }
        }
    }
}
