//! Ready-made scenarios: instrumental-variable ratios with weak first
//! stages, moment inequalities near the boundary of the null, and minimum
//! distance estimation along curved moment manifolds.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcspace::{builtin, Domain, PhiMap};
use crate::metrics::{ks_distance_with, DistanceReport, EmpiricalSample, KsReference, MetricConfig};
use crate::montecarlo::{sample_tn, NormalMean, ParamFamily};
use crate::remainder::{
    check_divergence, delta, BoxSet, DivergenceCertificate, DivergenceVerdict, RemainderField, Rule,
};
use crate::rng::{self, StreamRng};

// ---------------------------------------------------------------------------
// weak instruments

/// `Z ~ N(0, 1)`, `D = pi Z + v`, `Y = beta D + u` with unit-variance errors
/// of correlation `rho`; `T_n` is the sample mean of `(Z Y, Z D)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakIVScenario {
    pub beta: f64,
    pub pi: f64,
    pub rho: f64,
}

impl WeakIVScenario {
    pub fn new(beta: f64, pi: f64, rho: f64) -> Result<Self> {
        if !(beta.is_finite() && pi.is_finite() && rho.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "weak-IV scenario needs finite beta, pi and |rho| < 1 (got {beta}, {pi}, {rho})"
            )));
        }
        Ok(WeakIVScenario { beta, pi, rho })
    }

    pub fn mu(&self) -> Vec<f64> {
        vec![self.beta * self.pi, self.pi]
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        let vd = 2.0 * self.pi * self.pi + 1.0;
        let b = self.beta;
        DMatrix::from_row_slice(
            2,
            2,
            &[
                b * b * vd + 1.0 + 2.0 * b * self.rho,
                b * vd + self.rho,
                b * vd + self.rho,
                vd,
            ],
        )
    }

    /// Family indexed by `theta = pi` at fixed `beta` and `rho`.
    pub fn family(&self) -> WeakIVFamily {
        WeakIVFamily {
            beta: self.beta,
            rho: self.rho,
        }
    }

    pub fn phi(&self) -> PhiMap {
        builtin("iv_ratio").expect("built-in")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakIVFamily {
    pub beta: f64,
    pub rho: f64,
}

impl WeakIVFamily {
    fn scenario(&self, pi: f64) -> WeakIVScenario {
        WeakIVScenario {
            beta: self.beta,
            pi,
            rho: self.rho,
        }
    }
}

impl ParamFamily for WeakIVFamily {
    fn name(&self) -> &str {
        "weak_iv"
    }

    fn theta_dim(&self) -> usize {
        1
    }

    fn t_dim(&self) -> usize {
        2
    }

    fn contains(&self, theta: &[f64]) -> bool {
        theta[0].is_finite()
    }

    fn mu(&self, theta: &[f64]) -> Vec<f64> {
        self.scenario(theta[0]).mu()
    }

    fn sigma(&self, theta: &[f64]) -> DMatrix<f64> {
        self.scenario(theta[0]).sigma()
    }

    fn draw_tn(&self, theta: &[f64], n: u64, r: &mut StreamRng) -> (Vec<f64>, DMatrix<f64>) {
        let pi = theta[0];
        let tail = (1.0 - self.rho * self.rho).sqrt();
        let (mut s1, mut s2, mut s11, mut s12, mut s22) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let z: f64 = r.sample(StandardNormal);
            let e1: f64 = r.sample(StandardNormal);
            let e2: f64 = r.sample(StandardNormal);
            let v = e1;
            let u = self.rho * e1 + tail * e2;
            let d = pi * z + v;
            let y = self.beta * d + u;
            let (a, b) = (z * y, z * d);
            s1 += a;
            s2 += b;
            s11 += a * a;
            s12 += a * b;
            s22 += b * b;
        }
        let nf = n as f64;
        let t = vec![s1 / nf, s2 / nf];
        let sigma_hat = if n > 1 {
            let c = |sxy: f64, sx: f64, sy: f64| (sxy - sx * sy / nf) / (nf - 1.0);
            let (c11, c12, c22) = (c(s11, s1, s1), c(s12, s1, s2), c(s22, s2, s2));
            DMatrix::from_row_slice(2, 2, &[c11, c12, c12, c22])
        } else {
            self.sigma(theta)
        };
        (t, sigma_hat)
    }
}

/// Certificate for the ratio map along `m_n = (1 + 1/(2 sqrt n), 1/sqrt n)`
/// with `A = (-1/2, 1/2) x (-2, -1)` and `eps_n = r_n = sqrt n`.
pub fn iv_certificate(n_list: Vec<u64>) -> Result<DivergenceCertificate> {
    DivergenceCertificate::new(
        builtin("iv_ratio")?,
        Rule::sqrt_n(),
        Rule::sqrt_n(),
        Rule::new("(1 + 1/(2 sqrt(n)), 1/sqrt(n))", |n: f64| {
            vec![1.0 + 0.5 / n.sqrt(), 1.0 / n.sqrt()]
        }),
        BoxSet::new(vec![-0.5, -2.0], vec![0.5, -1.0])?,
        n_list,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvCertificateVerdict {
    pub verdict: DivergenceVerdict,
    /// `1.5 sqrt(n)`.
    pub margin: f64,
    /// Every lattice point evaluated and reached the margin.
    pub margin_holds: bool,
}

/// Runs [`iv_certificate`] and checks the stronger margin `1.5 sqrt(n)`.
pub fn iv_delta_certificate(n_list: Vec<u64>) -> Result<Vec<IvCertificateVerdict>> {
    let verdicts = check_divergence(&iv_certificate(n_list)?)?;
    Ok(verdicts
        .into_iter()
        .map(|v| {
            let margin = 1.5 * (v.n as f64).sqrt();
            let margin_holds = v.violations == 0 && v.min_delta.is_some_and(|d| d >= margin);
            IvCertificateVerdict {
                verdict: v,
                margin,
                margin_holds,
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// moment inequalities

/// Null `E[Y] >= 0` with `Var(Y) = I`; exactly one mean coordinate is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentIneqScenario {
    pub mean: [f64; 2],
}

impl MomentIneqScenario {
    pub fn new(mean: [f64; 2]) -> Result<Self> {
        let zeros = mean.iter().filter(|m| **m == 0.0).count();
        if zeros != 1 || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "moment-inequality mean needs exactly one zero coordinate, got {mean:?}"
            )));
        }
        Ok(MomentIneqScenario { mean })
    }

    pub fn family(&self) -> NormalMean {
        NormalMean::standard(2).named("moment_ineq")
    }
}

/// Projection-based statistics and the naive approximation that drops the
/// second coordinate (oriented for `m_1 = 0 < m_2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MineqStats {
    pub phi1: [f64; 2],
    pub phi2: f64,
    pub phi1_naive: [f64; 2],
    pub phi2_naive: f64,
    pub rem1: [f64; 2],
    pub rem2: f64,
}

fn neg_part(x: f64) -> f64 {
    (-x).max(0.0)
}

fn sq_neg(x: f64) -> f64 {
    if x <= 0.0 {
        x * x
    } else {
        0.0
    }
}

pub fn mineq_stats(t: [f64; 2]) -> MineqStats {
    let phi1 = [neg_part(t[0]), neg_part(t[1])];
    let phi1_naive = [neg_part(t[0]), 0.0];
    let phi2_naive = sq_neg(t[0]);
    let rem2 = sq_neg(t[1]);
    MineqStats {
        phi1,
        phi2: phi2_naive + rem2,
        phi1_naive,
        phi2_naive,
        rem1: [phi1[0] - phi1_naive[0], phi1[1] - phi1_naive[1]],
        rem2,
    }
}

/// Settings for [`mineq_limit_study`]. The drifting coordinate is
/// `m_2 = n^-drift_exponent`; `0.5` puts `sqrt(n) T_2` at `N(1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MineqStudyConfig {
    pub reps: usize,
    pub seed: u64,
    pub drift_exponent: f64,
    /// Mean of the second coordinate in the fixed-parameter contrast.
    pub fixed_m2: f64,
}

impl Default for MineqStudyConfig {
    fn default() -> Self {
        MineqStudyConfig {
            reps: 100_000,
            seed: 0,
            drift_exponent: 0.5,
            fixed_m2: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MineqRow {
    pub n: u64,
    pub m: [f64; 2],
    /// KS distance between `n rem2` and `Z^2 1(Z <= 0)`, `Z ~ N(1, 1)`.
    pub ks_rem2: DistanceReport,
    /// Sample mean of `max(Z, 0)` over the same `Z` draws.
    pub mean_pos_z: f64,
    /// Share of nonzero `rem2` at the fixed mean `(0, fixed_m2)`.
    pub fixed_rem2_nonzero: f64,
    pub mean_n_rem2: f64,
}

/// Simulates the naive remainder along the drifting mean and compares
/// `n rem2` with its limit transform of normal draws.
pub fn mineq_limit_study(n_list: &[u64], cfg: &MineqStudyConfig) -> Result<Vec<MineqRow>> {
    if n_list.is_empty() {
        return Err(Error::Empty("n_list".into()));
    }
    if cfg.reps < 2 {
        return Err(Error::Empty("reps must be at least 2".into()));
    }
    let fam = NormalMean::standard(2).named("moment_ineq");
    n_list
        .iter()
        .map(|&n| {
            if n == 0 {
                return Err(Error::InvalidArgument("n must be positive".into()));
            }
            let nf = n as f64;
            let m = [0.0, nf.powf(-cfg.drift_exponent)];
            let tn = sample_tn(&fam, &m, n, cfg.reps, cfg.seed)?;
            let scaled: Vec<f64> = (0..tn.t.len())
                .map(|i| {
                    let t = tn.t.row(i);
                    nf * mineq_stats([t[0], t[1]]).rem2
                })
                .collect();
            let z: Vec<f64> = (0..cfg.reps)
                .map(|rep| {
                    let mut r = rng::stream(cfg.seed, &[0x2a, n, rep as u64]);
                    1.0 + r.sample::<f64, _>(StandardNormal)
                })
                .collect();
            let limit: Vec<f64> = z.iter().map(|&v| sq_neg(v)).collect();
            let mean_pos_z = z.iter().map(|v| v.max(0.0)).sum::<f64>() / z.len() as f64;
            let mean_n_rem2 = scaled.iter().sum::<f64>() / scaled.len() as f64;
            let metric = MetricConfig::with_seed(rng::derive_seed(cfg.seed, &[n]));
            let ks_rem2 = ks_distance_with(
                &EmpiricalSample::from_values(scaled)?,
                KsReference::Sample(&EmpiricalSample::from_values(limit)?),
                &metric,
            )?;
            let fixed = sample_tn(&fam, &[0.0, cfg.fixed_m2], n, cfg.reps, rng::derive_seed(cfg.seed, &[1]))?;
            let nonzero = (0..fixed.t.len())
                .filter(|&i| {
                    let t = fixed.t.row(i);
                    mineq_stats([t[0], t[1]]).rem2 != 0.0
                })
                .count();
            Ok(MineqRow {
                n,
                m,
                ks_rem2,
                mean_pos_z,
                fixed_rem2_nonzero: nonzero as f64 / fixed.t.len() as f64,
                mean_n_rem2,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// minimum distance

/// Default number of grid starts for [`mindist_estimate`].
pub const DEFAULT_STARTS: usize = 16;
/// Hessian magnitude below which the slope is undefined.
pub const HESSIAN_FLOOR: f64 = 1e-10;
const GOLDEN_TOL: f64 = 1e-10;
const NEWTON_STEPS: usize = 5;
const BOUNDARY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    /// `(x, 0)`
    Flat,
    /// `(x, x)`
    Diagonal,
    /// `(x, x^2)`
    Parabola,
    /// `(x, 10 x^2)`
    SharpParabola,
    /// `(cos x, sin x)`
    CircleArc,
}

/// Moment curve `x -> m(x)` in the plane on a compact parameter range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinDistModel {
    pub kind: CurveKind,
    pub x_range: (f64, f64),
}

impl MinDistModel {
    pub fn new(kind: CurveKind, x_range: (f64, f64)) -> Result<Self> {
        if !(x_range.0.is_finite() && x_range.1.is_finite() && x_range.0 < x_range.1) {
            return Err(Error::InvalidArgument(format!("invalid x range {x_range:?}")));
        }
        Ok(MinDistModel { kind, x_range })
    }

    pub fn flat() -> Self {
        MinDistModel { kind: CurveKind::Flat, x_range: (-2.0, 2.0) }
    }

    pub fn diagonal() -> Self {
        MinDistModel { kind: CurveKind::Diagonal, x_range: (-3.0, 3.0) }
    }

    pub fn parabola() -> Self {
        MinDistModel { kind: CurveKind::Parabola, x_range: (-2.0, 2.0) }
    }

    pub fn sharp_parabola() -> Self {
        MinDistModel { kind: CurveKind::SharpParabola, x_range: (-2.0, 2.0) }
    }

    pub fn circle_arc() -> Self {
        MinDistModel { kind: CurveKind::CircleArc, x_range: (0.0, PI) }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "flat" => Ok(Self::flat()),
            "diagonal" => Ok(Self::diagonal()),
            "parabola" => Ok(Self::parabola()),
            "sharp_parabola" => Ok(Self::sharp_parabola()),
            "circle_arc" => Ok(Self::circle_arc()),
            other => Err(Error::UnknownBuiltin(other.to_string())),
        }
    }

    pub fn with_range(self, lo: f64, hi: f64) -> Result<Self> {
        Self::new(self.kind, (lo, hi))
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            CurveKind::Flat => "flat",
            CurveKind::Diagonal => "diagonal",
            CurveKind::Parabola => "parabola",
            CurveKind::SharpParabola => "sharp_parabola",
            CurveKind::CircleArc => "circle_arc",
        }
    }

    pub fn m(&self, x: f64) -> [f64; 2] {
        match self.kind {
            CurveKind::Flat => [x, 0.0],
            CurveKind::Diagonal => [x, x],
            CurveKind::Parabola => [x, x * x],
            CurveKind::SharpParabola => [x, 10.0 * x * x],
            CurveKind::CircleArc => [x.cos(), x.sin()],
        }
    }

    pub fn dm(&self, x: f64) -> [f64; 2] {
        match self.kind {
            CurveKind::Flat => [1.0, 0.0],
            CurveKind::Diagonal => [1.0, 1.0],
            CurveKind::Parabola => [1.0, 2.0 * x],
            CurveKind::SharpParabola => [1.0, 20.0 * x],
            CurveKind::CircleArc => [-x.sin(), x.cos()],
        }
    }

    pub fn d2m(&self, x: f64) -> [f64; 2] {
        match self.kind {
            CurveKind::Flat | CurveKind::Diagonal => [0.0, 0.0],
            CurveKind::Parabola => [0.0, 2.0],
            CurveKind::SharpParabola => [0.0, 20.0],
            CurveKind::CircleArc => [-x.cos(), -x.sin()],
        }
    }

    /// Unsigned curvature of the image curve at `x`.
    pub fn curvature(&self, x: f64) -> f64 {
        let (d, dd) = (self.dm(x), self.d2m(x));
        (d[0] * dd[1] - d[1] * dd[0]).abs() / (d[0] * d[0] + d[1] * d[1]).powf(1.5)
    }

    /// `e(x, t) = |t - m(x)|^2`.
    pub fn objective(&self, x: f64, t: &[f64]) -> f64 {
        let m = self.m(x);
        (t[0] - m[0]).powi(2) + (t[1] - m[1]).powi(2)
    }

    fn de(&self, x: f64, t: &[f64]) -> f64 {
        let (m, d) = (self.m(x), self.dm(x));
        -2.0 * ((t[0] - m[0]) * d[0] + (t[1] - m[1]) * d[1])
    }

    /// `d^2 e / dx^2 = 2 (|m'|^2 - (t - m) . m'')`.
    pub fn d2e(&self, x: f64, t: &[f64]) -> f64 {
        let (m, d, dd) = (self.m(x), self.dm(x), self.d2m(x));
        2.0 * (d[0] * d[0] + d[1] * d[1] - (t[0] - m[0]) * dd[0] - (t[1] - m[1]) * dd[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinDistFit {
    pub x_hat: f64,
    pub e_min: f64,
    /// The minimizer sits on an end of the parameter range.
    pub at_boundary: bool,
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > GOLDEN_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Multi-start minimizer of `e(x, t)` over the model's range: grid local
/// minima are bracketed, narrowed by golden section and polished by a few
/// guarded Newton steps on `de/dx`.
pub fn mindist_estimate(model: &MinDistModel, t: &[f64], starts: usize) -> Result<MinDistFit> {
    if t.len() != 2 {
        return Err(Error::Dimension(format!("minimum distance needs t in R^2, got {}", t.len())));
    }
    if starts < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 starts, got {starts}")));
    }
    let (lo, hi) = model.x_range;
    let grid: Vec<f64> = (0..starts)
        .map(|i| lo + (hi - lo) * i as f64 / (starts - 1) as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&x| model.objective(x, t)).collect();
    let e = |x: f64| model.objective(x, t);
    let mut best: Option<(f64, f64)> = None;
    for k in 0..starts {
        let left = if k == 0 { f64::INFINITY } else { values[k - 1] };
        let right = if k + 1 == starts { f64::INFINITY } else { values[k + 1] };
        if !(values[k].is_finite() && values[k] <= left && values[k] <= right) {
            continue;
        }
        let (a, b) = (grid[k.saturating_sub(1)], grid[(k + 1).min(starts - 1)]);
        let mut x = golden_section(e, a, b);
        for _ in 0..NEWTON_STEPS {
            let (g, h) = (model.de(x, t), model.d2e(x, t));
            if !(h > 0.0) {
                break;
            }
            let step = x - g / h;
            if !(a..=b).contains(&step) || model.de(step, t).abs() >= g.abs() {
                break;
            }
            x = step;
        }
        let value = e(x);
        if best.is_none_or(|(_, v)| value < v) {
            best = Some((x, value));
        }
    }
    let (x_hat, e_min) =
        best.ok_or_else(|| Error::OptimFail(format!("no bracketed minimum for t = {t:?}")))?;
    Ok(MinDistFit {
        x_hat,
        e_min,
        at_boundary: (x_hat - lo).abs() < BOUNDARY_TOL || (hi - x_hat).abs() < BOUNDARY_TOL,
    })
}

/// Implicit-function slope `d x_hat / d t = m'(x) / (|m'|^2 - (t - m) . m'')`.
pub fn mindist_slope(model: &MinDistModel, t: &[f64], x_hat: f64) -> Result<[f64; 2]> {
    if t.len() != 2 {
        return Err(Error::Dimension("minimum distance needs t in R^2".into()));
    }
    let (m, d) = (model.m(x_hat), model.dm(x_hat));
    let speed = d[0] * d[0] + d[1] * d[1];
    let hess = model.d2e(x_hat, t);
    if !(hess.abs() >= HESSIAN_FLOOR) {
        return Err(Error::SingularHessian { value: hess.abs() });
    }
    if t[0] == m[0] && t[1] == m[1] {
        return Ok([d[0] / speed, d[1] / speed]);
    }
    let h = hess / 2.0;
    Ok([d[0] / h, d[1] / h])
}

/// `phi(t) = argmin_x |t - m(x)|^2` as a map. Points whose minimizer lies on
/// the range boundary or has a singular Hessian are boundary points.
pub fn mindist_phi(model: MinDistModel, starts: usize) -> PhiMap {
    let fit = move |t: &[f64]| mindist_estimate(&model, t, starts);
    PhiMap::new(
        format!("mindist[{}]", model.name()),
        2,
        1,
        move |t| vec![fit(t).map_or(f64::NAN, |f| f.x_hat)],
        move |t| match mindist_estimate(&model, t, starts) {
            Ok(f) if f.at_boundary => Domain::Boundary,
            Ok(f) if model.d2e(f.x_hat, t).abs() < HESSIAN_FLOOR => Domain::Boundary,
            Ok(_) => Domain::Inside,
            Err(_) => Domain::Outside,
        },
    )
    .expect("fixed dimensions")
    .with_jacobian(move |m| {
        let slope = mindist_estimate(&model, m, starts).and_then(|f| mindist_slope(&model, m, f.x_hat));
        match slope {
            Ok(s) => DMatrix::from_row_slice(1, 2, &s),
            Err(_) => DMatrix::from_element(1, 2, f64::NAN),
        }
    })
}

/// Points `m(x) + o n(x)` with `n(x)` the unit normal of the curve.
pub fn tube_points(model: &MinDistModel, xs: &[f64], offsets: &[f64]) -> Vec<Vec<f64>> {
    xs.iter()
        .flat_map(|&x| {
            let (m, d) = (model.m(x), model.dm(x));
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            let normal = [-d[1] / len, d[0] / len];
            offsets
                .iter()
                .map(move |o| vec![m[0] + o * normal[0], m[1] + o * normal[1]])
        })
        .collect()
}

/// `Delta(t, m)` of the minimum-distance map for on-curve centers
/// `m(x), x in m_xs` against the given `t` points.
pub fn mindist_delta_scan(
    model: &MinDistModel,
    m_xs: &[f64],
    t_points: Vec<Vec<f64>>,
    starts: usize,
) -> Result<RemainderField> {
    if m_xs.is_empty() || t_points.is_empty() {
        return Err(Error::Empty("minimum-distance scan needs m and t points".into()));
    }
    if t_points.iter().any(|t| t.len() != 2) {
        return Err(Error::Dimension("t points must lie in R^2".into()));
    }
    let phi = mindist_phi(*model, starts);
    let m_points: Vec<Vec<f64>> = m_xs.iter().map(|&x| model.m(x).to_vec()).collect();
    Ok(RemainderField::tabulate(t_points, m_points, |t, m| {
        delta(&phi, t, m)
    }))
}

/// Shared handle for the weak-IV family.
pub fn weak_iv_family(beta: f64, rho: f64) -> Result<Arc<dyn ParamFamily>> {
    let scenario = WeakIVScenario::new(beta, 0.0, rho)?;
    Ok(Arc::new(scenario.family()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::remainder::CellMask;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn weak_iv_moments_match_primitives() {
        let sc = WeakIVScenario::new(0.7, 0.4, 0.5).unwrap();
        let fam = sc.family();
        let tn = sample_tn(&fam, &[0.4], 1, 100_000, 1).unwrap();
        let mean = tn.t.mean();
        let mu = sc.mu();
        assert!((mean[0] - mu[0]).abs() < 0.03 && (mean[1] - mu[1]).abs() < 0.02);
        let m = tn.t.matrix();
        let centered = DMatrix::from_fn(m.nrows(), 2, |i, j| m[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / (m.nrows() - 1) as f64;
        let sigma = sc.sigma();
        assert!((cov - &sigma).abs().max() < 0.1, "{sigma}");
        let big = sample_tn(&fam, &[0.4], 2000, 200, 2).unwrap();
        let avg = big.sigma_hat.iter().fold(DMatrix::zeros(2, 2), |a, s| a + s) / 200.0;
        assert!((avg - sigma).abs().max() < 0.1);
        assert!(WeakIVScenario::new(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn iv_certificate_reports_exact_lattice_minimum() {
        let out = iv_delta_certificate(vec![100, 10_000]).unwrap();
        for v in &out {
            let n = v.verdict.n as f64;
            let m = [1.0 + 0.5 / n.sqrt(), 1.0 / n.sqrt()];
            let s = v.verdict.argmin_s.clone().unwrap();
            let t = [m[0] + s[0] / n.sqrt(), m[1] + s[1] / n.sqrt()];
            let closed = crate::remainder::delta_analytic("iv_ratio", &t, &m).unwrap();
            assert!((closed - v.verdict.min_delta.unwrap()).abs() <= 1e-8 * closed);
            assert_eq!(v.margin, 1.5 * n.sqrt());
        }
    }

    #[test]
    fn iv_certificate_rejects_box_around_origin() {
        let cert = DivergenceCertificate::new(
            builtin("iv_ratio").unwrap(),
            Rule::sqrt_n(),
            Rule::sqrt_n(),
            Rule::new("m", |n: f64| vec![1.0, 1.0 / n.sqrt()]),
            BoxSet::new(vec![-0.5, -1.0], vec![0.5, 1.0]).unwrap(),
            vec![100],
        );
        assert!(matches!(cert, Err(Error::InvalidCertificate(_))));
    }

    #[test]
    fn mineq_examples() {
        let s = mineq_stats([-1.0, -2.0]);
        assert_eq!(s.phi1, [1.0, 2.0]);
        assert_eq!(s.phi2, 5.0);
        assert_eq!(s.phi2_naive, 1.0);
        assert_eq!(s.rem2, 4.0);
        assert_eq!(s.rem1, [0.0, 2.0]);
        for t in [[1.0, 2.0], [0.0, 0.0]] {
            let s = mineq_stats(t);
            assert_eq!(
                [s.phi1[0], s.phi1[1], s.phi2, s.phi1_naive[0], s.phi1_naive[1], s.phi2_naive, s.rem1[0], s.rem1[1], s.rem2],
                [0.0; 9]
            );
        }
        assert!(MomentIneqScenario::new([0.0, 0.0]).is_err());
        assert!(MomentIneqScenario::new([0.0, 0.3]).is_ok());
    }

    #[test]
    fn mineq_study_small() {
        let cfg = MineqStudyConfig { reps: 20_000, seed: 3, ..Default::default() };
        let rows = mineq_limit_study(&[10_000], &cfg).unwrap();
        let r = &rows[0];
        assert!(r.ks_rem2.value <= 0.03, "{}", r.ks_rem2.value);
        assert!((r.mean_pos_z - 1.0833).abs() < 0.02);
        assert!(r.fixed_rem2_nonzero <= 0.001);
    }

    #[test]
    fn mindist_exact_fits() {
        let fit = mindist_estimate(&MinDistModel::diagonal(), &[2.0, 2.0], DEFAULT_STARTS).unwrap();
        assert!((fit.x_hat - 2.0).abs() < 1e-10 && fit.e_min < 1e-18);
        let flat = MinDistModel::flat().with_range(-1.0, 1.0).unwrap();
        let fit = mindist_estimate(&flat, &[5.0, 0.0], DEFAULT_STARTS).unwrap();
        assert!((fit.x_hat - 1.0).abs() < 1e-9 && fit.at_boundary);
        assert!(mindist_estimate(&flat, &[5.0, 0.0], 2).is_err());
    }

    #[test]
    fn mindist_matches_dense_grid() {
        let model = MinDistModel::parabola();
        let fit = mindist_estimate(&model, &[0.0, 1.0], DEFAULT_STARTS).unwrap();
        let (mut bx, mut bv) = (0.0, f64::INFINITY);
        for i in 0..1_000_000 {
            let x = -2.0 + 4.0 * i as f64 / 999_999.0;
            let v = model.objective(x, &[0.0, 1.0]);
            if v < bv {
                bx = x;
                bv = v;
            }
        }
        // two symmetric minima at +-1/sqrt(2); compare magnitudes and values
        assert!((fit.x_hat.abs() - bx.abs()).abs() < 1e-5);
        assert!((fit.e_min - bv).abs() < 1e-10);
        assert!((fit.x_hat.abs() - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn mindist_slopes() {
        let s = mindist_slope(&MinDistModel::parabola(), &[0.0, 0.0], 0.0).unwrap();
        assert_eq!(s, [1.0, 0.0]);
        let s = mindist_slope(&MinDistModel::flat(), &[0.3, 0.0], 0.3).unwrap();
        assert_eq!(s, [1.0, 0.0]);
        // focus-side point where the Hessian vanishes: |m'|^2 = (t - m) . m''
        let err = mindist_slope(&MinDistModel::parabola(), &[0.0, 0.5], 0.0);
        assert!(matches!(err, Err(Error::SingularHessian { .. })));
    }

    #[test]
    fn slope_matches_finite_differences() {
        let models = [MinDistModel::parabola(), MinDistModel::sharp_parabola(), MinDistModel::circle_arc()];
        let mut r = rng::stream(5, &[]);
        for model in models {
            let mut checked = 0;
            while checked < 20 {
                let (lo, hi) = model.x_range;
                let x = lo + (hi - lo) * (0.2 + 0.6 * r.random::<f64>());
                let off = 0.02 * (r.random::<f64>() - 0.5);
                let t = tube_points(&model, &[x], &[off])[0].clone();
                let fit = mindist_estimate(&model, &t, DEFAULT_STARTS).unwrap();
                let Ok(s) = mindist_slope(&model, &t, fit.x_hat) else { continue };
                let h = 1e-6;
                for j in 0..2 {
                    let (mut a, mut b) = (t.clone(), t.clone());
                    a[j] += h;
                    b[j] -= h;
                    let fd = (mindist_estimate(&model, &a, DEFAULT_STARTS).unwrap().x_hat
                        - mindist_estimate(&model, &b, DEFAULT_STARTS).unwrap().x_hat)
                        / (2.0 * h);
                    assert!((fd - s[j]).abs() < 1e-4, "{} at {t:?}: {fd} vs {}", model.name(), s[j]);
                }
                checked += 1;
            }
        }
    }

    #[test]
    fn mindist_scans() {
        let xs: Vec<f64> = (0..9).map(|i| -0.4 + 0.1 * i as f64).collect();
        let offsets = [-0.03, -0.01, 0.0, 0.01, 0.03];
        let flat = MinDistModel::flat();
        let field = mindist_delta_scan(&flat, &xs, tube_points(&flat, &xs, &offsets), DEFAULT_STARTS).unwrap();
        assert!(field.valid_count() > 0);
        assert!(field.valid_values().all(|v| v < 1e-7));
        assert!(field.count(CellMask::Degenerate) >= xs.len());

        let max_of = |model: MinDistModel| {
            let pts = tube_points(&model, &xs, &offsets);
            mindist_delta_scan(&model, &xs, pts, DEFAULT_STARTS).unwrap().max_valid().unwrap().0
        };
        assert!(max_of(MinDistModel::sharp_parabola()) > max_of(MinDistModel::parabola()));
    }

    #[test]
    fn mindist_builtin_is_the_parabola() {
        let phi = builtin("mindist").unwrap();
        assert!((phi.eval(&[0.3, 0.09]).unwrap()[0] - 0.3).abs() < 1e-9);
        assert_eq!(phi.domain(&[5.0, 5.0]), Domain::Boundary);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn mineq_identities(t1 in -5.0f64..5.0, t2 in -5.0f64..5.0) {
            let s = mineq_stats([t1, t2]);
            prop_assert!((s.phi2 - (s.phi1[0].powi(2) + s.phi1[1].powi(2))).abs() <= 1e-12 * (1.0 + s.phi2));
            let proj = [t1 + s.phi1[0], t2 + s.phi1[1]];
            prop_assert_eq!(proj, [t1.max(0.0), t2.max(0.0)]);
            prop_assert_eq!(s.rem1[1], s.phi1[1]);
        }

        #[test]
        fn on_curve_fits_are_exact(u in 0.05f64..0.95, k in 0usize..5) {
            let model = [MinDistModel::flat(), MinDistModel::diagonal(), MinDistModel::parabola(),
                         MinDistModel::sharp_parabola(), MinDistModel::circle_arc()][k];
            let (lo, hi) = model.x_range;
            let x = lo + (hi - lo) * u;
            let fit = mindist_estimate(&model, &model.m(x), DEFAULT_STARTS).unwrap();
            prop_assert!((fit.x_hat - x).abs() < 1e-8, "{} {} {}", model.name(), x, fit.x_hat);
        }
    }
}
