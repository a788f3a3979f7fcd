//! Triangular-array simulation of `T_n`, the rescaled statistic
//! `X_n = r_n E(mu) (phi(T_n) - phi(mu))`, its normal-limit counterpart
//! `X = E(mu) D(mu) S`, and the studentized pivot.
//!
//! Replication `rep` at sample size `n` always draws from the stream keyed by
//! `(seed, salt, n, rep)`, so results do not depend on thread scheduling.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Binomial, ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::funcspace::{JacobianMode, NormalizedJacobian, PhiMap};
use crate::metrics::{
    coverage_from_counts, dudley_1d_with, ks_distance_with, sliced_bl, CoverageReport,
    DistanceReport, EmpiricalSample, KsReference, MetricConfig,
};
use crate::remainder::Rule;
use crate::rng::{self, StreamRng};

/// Eigenvalue floor for inverse square roots in the pivot.
pub const EIGEN_FLOOR: f64 = 1e-12;
/// Tolerance on `|row| - 1` for the normalized Jacobian.
pub const UNIT_ROW_TOL: f64 = 1e-10;
/// Default number of projections when `X_n` is multivariate.
pub const DEFAULT_PROJECTIONS: usize = 32;

const SALT_TN: u64 = 0x7a;
const SALT_LIMIT: u64 = 0x11;

/// Limit law of `S = r_n (T_n - mu)`.
#[derive(Debug, Clone, PartialEq)]
pub enum LimitLaw {
    Normal(DMatrix<f64>),
    ChiSquare1,
}

impl LimitLaw {
    pub fn dim(&self) -> usize {
        match self {
            LimitLaw::Normal(s) => s.nrows(),
            LimitLaw::ChiSquare1 => 1,
        }
    }
}

/// A parametric family `theta -> P_theta` of sample means.
pub trait ParamFamily: Send + Sync {
    fn name(&self) -> &str;
    fn theta_dim(&self) -> usize;
    /// Dimension of `T_n`.
    fn t_dim(&self) -> usize;
    fn contains(&self, theta: &[f64]) -> bool;
    fn mu(&self, theta: &[f64]) -> Vec<f64>;
    fn sigma(&self, theta: &[f64]) -> DMatrix<f64>;
    /// One draw of `T_n` with its plug-in covariance estimate.
    fn draw_tn(&self, theta: &[f64], n: u64, rng: &mut StreamRng) -> (Vec<f64>, DMatrix<f64>);

    fn limit_law(&self, theta: &[f64]) -> LimitLaw {
        LimitLaw::Normal(self.sigma(theta))
    }
}

impl fmt::Debug for dyn ParamFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ParamFamily({})", self.name())
    }
}

fn check_theta(family: &dyn ParamFamily, theta: &[f64]) -> Result<()> {
    if theta.len() != family.theta_dim() || !family.contains(theta) {
        return Err(Error::Domain {
            phi: family.name().to_string(),
            point: theta.to_vec(),
        });
    }
    Ok(())
}

/// Symmetric square root of a PSD matrix.
pub fn psd_sqrt(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !sigma.is_square() {
        return Err(Error::Dimension("covariance must be square".into()));
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("covariance has non-finite entries".into()));
    }
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1f64, |a, v| a.max(v.abs()));
    let min = eig.eigenvalues.min();
    if min < -1e-10 * scale {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

fn standard_normals<R: Rng>(r: &mut R, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| r.sample(StandardNormal))
}

/// Means of `n` i.i.d. `N(mu, Sigma)` draws with `theta = mu`. The sample
/// covariance is drawn from its exact Wishart law (Bartlett decomposition);
/// for `n <= d` the known `Sigma` is reported instead.
#[derive(Debug, Clone)]
pub struct NormalMean {
    name: String,
    sigma: DMatrix<f64>,
    root: DMatrix<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl NormalMean {
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        let root = psd_sqrt(&sigma)?;
        let d = sigma.nrows();
        Ok(NormalMean {
            name: "normal_mean".into(),
            sigma,
            root,
            lo: vec![f64::NEG_INFINITY; d],
            hi: vec![f64::INFINITY; d],
        })
    }

    pub fn standard(d: usize) -> Self {
        Self::new(DMatrix::identity(d, d)).expect("identity is PSD")
    }

    pub fn with_box(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != self.sigma.nrows() || hi.len() != lo.len() {
            return Err(Error::Dimension("parameter box does not match covariance".into()));
        }
        self.lo = lo;
        self.hi = hi;
        Ok(self)
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl ParamFamily for NormalMean {
    fn name(&self) -> &str {
        &self.name
    }

    fn theta_dim(&self) -> usize {
        self.sigma.nrows()
    }

    fn t_dim(&self) -> usize {
        self.sigma.nrows()
    }

    fn contains(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(t, (l, h))| t.is_finite() && l <= t && t <= h)
    }

    fn mu(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }

    fn sigma(&self, _theta: &[f64]) -> DMatrix<f64> {
        self.sigma.clone()
    }

    fn draw_tn(&self, theta: &[f64], n: u64, r: &mut StreamRng) -> (Vec<f64>, DMatrix<f64>) {
        let d = self.theta_dim();
        let s = &self.root * standard_normals(r, d);
        let scale = (n as f64).sqrt();
        let t = theta.iter().zip(s.iter()).map(|(m, v)| m + v / scale).collect();
        let sigma_hat = if n as usize > d {
            let dof = (n - 1) as f64;
            let mut a = DMatrix::zeros(d, d);
            for i in 0..d {
                let chi = ChiSquared::new(dof - i as f64).expect("positive dof");
                a[(i, i)] = chi.sample(r).sqrt();
                for j in 0..i {
                    a[(i, j)] = r.sample(StandardNormal);
                }
            }
            let la = &self.root * a;
            &la * la.transpose() / dof
        } else {
            self.sigma.clone()
        };
        (t, sigma_hat)
    }
}

/// Means of `n` Bernoulli(`p`) draws, `theta = p`.
#[derive(Debug, Clone, Default)]
pub struct BernoulliMean;

impl ParamFamily for BernoulliMean {
    fn name(&self) -> &str {
        "bernoulli_mean"
    }

    fn theta_dim(&self) -> usize {
        1
    }

    fn t_dim(&self) -> usize {
        1
    }

    fn contains(&self, theta: &[f64]) -> bool {
        (0.0..=1.0).contains(&theta[0])
    }

    fn mu(&self, theta: &[f64]) -> Vec<f64> {
        vec![theta[0]]
    }

    fn sigma(&self, theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, theta[0] * (1.0 - theta[0]))
    }

    fn draw_tn(&self, theta: &[f64], n: u64, r: &mut StreamRng) -> (Vec<f64>, DMatrix<f64>) {
        let k = Binomial::new(n, theta[0]).expect("p in [0, 1]").sample(r);
        let t = k as f64 / n as f64;
        let var = if n > 1 {
            t * (1.0 - t) * n as f64 / (n - 1) as f64
        } else {
            t * (1.0 - t)
        };
        (vec![t], DMatrix::from_element(1, 1, var))
    }
}

/// `T_n = mu + S / sqrt(n)` with `S ~ chi-square(1)`, `theta = mu >= 0`,
/// so `T_n` never leaves the nonnegative half-line.
#[derive(Debug, Clone, Default)]
pub struct Chi2Shift;

impl ParamFamily for Chi2Shift {
    fn name(&self) -> &str {
        "chi2_shift"
    }

    fn theta_dim(&self) -> usize {
        1
    }

    fn t_dim(&self) -> usize {
        1
    }

    fn contains(&self, theta: &[f64]) -> bool {
        theta[0].is_finite() && theta[0] >= 0.0
    }

    fn mu(&self, theta: &[f64]) -> Vec<f64> {
        vec![theta[0]]
    }

    fn sigma(&self, _theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 2.0)
    }

    fn draw_tn(&self, theta: &[f64], n: u64, r: &mut StreamRng) -> (Vec<f64>, DMatrix<f64>) {
        let s = ChiSquared::new(1.0).expect("one degree of freedom").sample(r);
        (vec![theta[0] + s / (n as f64).sqrt()], self.sigma(theta))
    }

    fn limit_law(&self, _theta: &[f64]) -> LimitLaw {
        LimitLaw::ChiSquare1
    }
}

/// Parameter path `n -> theta_n` through a family.
#[derive(Clone)]
pub struct ParamSeq {
    pub family: Arc<dyn ParamFamily>,
    pub rule: Rule<Vec<f64>>,
    pub label: String,
}

impl fmt::Debug for ParamSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ParamSeq({}, {})", self.family.name(), self.label)
    }
}

impl ParamSeq {
    pub fn new(family: Arc<dyn ParamFamily>, rule: Rule<Vec<f64>>) -> Self {
        let label = rule.label.clone();
        ParamSeq { family, rule, label }
    }

    /// Constant path.
    pub fn fixed(family: Arc<dyn ParamFamily>, theta: Vec<f64>) -> Self {
        let label = format!("{theta:?}");
        Self::new(family, Rule::new(label, move |_| theta.clone()))
    }

    pub fn theta(&self, n: u64) -> Result<Vec<f64>> {
        let theta = self.rule.at(n as f64);
        check_theta(self.family.as_ref(), &theta)?;
        Ok(theta)
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub master_seed: u64,
    pub reps: usize,
    pub n_list: Vec<u64>,
    pub r_rule: Rule<f64>,
    pub metric: MetricConfig,
}

impl SimConfig {
    pub fn new(master_seed: u64, reps: usize, n_list: Vec<u64>) -> Self {
        SimConfig {
            master_seed,
            reps,
            n_list,
            r_rule: Rule::sqrt_n(),
            metric: MetricConfig::with_seed(master_seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::Empty(format!("reps must be at least 2, got {}", self.reps)));
        }
        if self.n_list.is_empty() {
            return Err(Error::Empty("n_list".into()));
        }
        if self.n_list[0] == 0 || self.n_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "n_list must be positive and strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Replicated `T_n` draws with per-draw covariance estimates.
#[derive(Debug, Clone)]
pub struct TnDraws {
    pub t: EmpiricalSample,
    pub sigma_hat: Vec<DMatrix<f64>>,
}

pub fn sample_tn(
    family: &dyn ParamFamily,
    theta: &[f64],
    n: u64,
    reps: usize,
    seed: u64,
) -> Result<TnDraws> {
    check_theta(family, theta)?;
    if reps == 0 {
        return Err(Error::Empty("reps = 0".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let draws: Vec<(Vec<f64>, DMatrix<f64>)> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut r = rng::stream(seed, &[SALT_TN, n, rep as u64]);
            family.draw_tn(theta, n, &mut r)
        })
        .collect();
    let (rows, sigma_hat): (Vec<_>, Vec<_>) = draws.into_iter().unzip();
    Ok(TnDraws {
        t: EmpiricalSample::from_rows(&rows)?,
        sigma_hat,
    })
}

/// Rows of `E(mu) D(mu)`, checked to have unit length.
fn normalized_jacobian(phi: &PhiMap, mu: &[f64]) -> Result<NormalizedJacobian> {
    let nj = NormalizedJacobian::new(phi.jacobian(mu, JacobianMode::Auto)?)?;
    let err = nj.unit_row_error();
    if !(err <= UNIT_ROW_TOL) {
        return Err(Error::Rank { row: 0, norm: 1.0 + err });
    }
    Ok(nj)
}

/// Transformed draws with the indices of the `T_n` draws they came from.
#[derive(Debug, Clone)]
pub struct XnDraws {
    pub x: EmpiricalSample,
    pub kept: Vec<usize>,
    pub rejected: usize,
}

/// `X_n = r_n E(mu) (phi(T_n) - phi(mu))`; draws outside the domain of
/// `phi` are dropped and counted.
pub fn build_xn(phi: &PhiMap, tn: &EmpiricalSample, mu: &[f64], r_n: f64) -> Result<XnDraws> {
    if tn.dim() != phi.d_in() || mu.len() != phi.d_in() {
        return Err(Error::Dimension(format!("`{}` expects d_in = {}", phi.name(), phi.d_in())));
    }
    let phi_mu = phi.eval(mu)?;
    let scales = normalized_jacobian(phi, mu)?.row_scales();
    let rows: Vec<Option<Vec<f64>>> = (0..tn.len())
        .into_par_iter()
        .map(|i| {
            let v = phi.eval(&tn.row(i)).ok()?;
            let x: Vec<f64> = (0..phi.d_out())
                .map(|k| r_n * scales[k] * (v[k] - phi_mu[k]))
                .collect();
            x.iter().all(|v| v.is_finite()).then_some(x)
        })
        .collect();
    let kept: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].is_some()).collect();
    let values: Vec<Vec<f64>> = rows.into_iter().flatten().collect();
    let rejected = tn.len() - values.len();
    if values.len() < 2 {
        return Err(Error::Empty(format!("{rejected} of {} draws left the domain", tn.len())));
    }
    Ok(XnDraws {
        x: EmpiricalSample::from_rows(&values)?,
        kept,
        rejected,
    })
}

/// Draws of the limit `S`.
pub fn sample_limit_s(law: &LimitLaw, reps: usize, seed: u64, n_key: u64) -> Result<EmpiricalSample> {
    if reps == 0 {
        return Err(Error::Empty("reps = 0".into()));
    }
    let rows: Vec<Vec<f64>> = match law {
        LimitLaw::Normal(sigma) => {
            let root = psd_sqrt(sigma)?;
            (0..reps)
                .into_par_iter()
                .map(|rep| {
                    let mut r = rng::stream(seed, &[SALT_LIMIT, n_key, rep as u64]);
                    (&root * standard_normals(&mut r, root.nrows())).iter().copied().collect()
                })
                .collect()
        }
        LimitLaw::ChiSquare1 => {
            let chi = ChiSquared::new(1.0).expect("one degree of freedom");
            (0..reps)
                .into_par_iter()
                .map(|rep| {
                    let mut r = rng::stream(seed, &[SALT_LIMIT, n_key, rep as u64]);
                    vec![chi.sample(&mut r)]
                })
                .collect()
        }
    };
    EmpiricalSample::from_rows(&rows)
}

/// `X = E(mu) D(mu) S` for given draws of `S`.
pub fn limit_x_from_s(phi: &PhiMap, mu: &[f64], s: &EmpiricalSample) -> Result<EmpiricalSample> {
    if s.dim() != phi.d_in() {
        return Err(Error::Dimension("limit draws do not match d_in".into()));
    }
    phi.eval(mu)?;
    let ed = normalized_jacobian(phi, mu)?.ed;
    EmpiricalSample::from_matrix(s.matrix() * ed.transpose())
}

/// `X = E(mu) D(mu) S` with `S ~ N(0, Sigma)`.
pub fn sample_limit_x(
    phi: &PhiMap,
    mu: &[f64],
    sigma: &DMatrix<f64>,
    reps: usize,
    seed: u64,
) -> Result<EmpiricalSample> {
    if sigma.nrows() != phi.d_in() {
        return Err(Error::Dimension("covariance does not match d_in".into()));
    }
    let s = sample_limit_s(&LimitLaw::Normal(sigma.clone()), reps, seed, 0)?;
    limit_x_from_s(phi, mu, &s)
}

/// Covariance estimate used by [`pivot_zn`].
#[derive(Debug, Clone, Copy)]
pub enum SigmaHat<'a> {
    PerDraw(&'a [DMatrix<f64>]),
    Pooled(&'a DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct PivotDraws {
    pub z: EmpiricalSample,
    pub rejected: usize,
    pub rank_failures: usize,
}

/// Studentized statistic
/// `Z_n = (dphi(T_n) Sigma_hat dphi(T_n)')^{-1/2} r_n (phi(T_n) - phi(mu))`.
pub fn pivot_zn(
    phi: &PhiMap,
    tn: &EmpiricalSample,
    sigma_hat: SigmaHat<'_>,
    mu: &[f64],
    r_n: f64,
) -> Result<PivotDraws> {
    if let SigmaHat::PerDraw(s) = sigma_hat {
        if s.len() != tn.len() {
            return Err(Error::Dimension("one covariance estimate per draw required".into()));
        }
    }
    let phi_mu = phi.eval(mu)?;
    enum Outcome {
        Ok(Vec<f64>),
        Domain,
        Rank,
    }
    let outcomes: Vec<Outcome> = (0..tn.len())
        .into_par_iter()
        .map(|i| {
            let t = tn.row(i);
            let (Ok(v), Ok(jac)) = (phi.eval(&t), phi.jacobian(&t, JacobianMode::Auto)) else {
                return Outcome::Domain;
            };
            let sig = match sigma_hat {
                SigmaHat::PerDraw(s) => &s[i],
                SigmaHat::Pooled(s) => s,
            };
            let v_mat = &jac * sig * jac.transpose();
            let eig = SymmetricEigen::new((&v_mat + v_mat.transpose()) * 0.5);
            if eig.eigenvalues.iter().any(|l| !(*l > EIGEN_FLOOR)) {
                return Outcome::Rank;
            }
            let inv_root = &eig.eigenvectors
                * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
                * eig.eigenvectors.transpose();
            let diff = DVector::from_fn(phi.d_out(), |k, _| r_n * (v[k] - phi_mu[k]));
            let z: Vec<f64> = (inv_root * diff).iter().copied().collect();
            if z.iter().all(|x| x.is_finite()) {
                Outcome::Ok(z)
            } else {
                Outcome::Rank
            }
        })
        .collect();
    let mut rows = Vec::new();
    let (mut rejected, mut rank_failures) = (0, 0);
    for o in outcomes {
        match o {
            Outcome::Ok(z) => rows.push(z),
            Outcome::Domain => rejected += 1,
            Outcome::Rank => rank_failures += 1,
        }
    }
    if rows.len() < 2 {
        return Err(Error::Empty("fewer than two pivot draws survived".into()));
    }
    Ok(PivotDraws {
        z: EmpiricalSample::from_rows(&rows)?,
        rejected,
        rank_failures,
    })
}

/// Everything [`sequence_study`] records at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRow {
    pub n: u64,
    pub theta: Vec<f64>,
    pub mu: Vec<f64>,
    pub r_n: f64,
    pub kept: usize,
    pub rejected: usize,
    /// Dudley distance (`d_out = 1`) or its sliced lower bound.
    pub bl: Option<DistanceReport>,
    /// Two-sample KS distance between `X_n` and `X` (`d_out = 1` only).
    pub ks: Option<DistanceReport>,
    /// Draws of `X_n` at or below zero, first coordinate.
    pub xn_cdf_at_zero: Option<f64>,
    pub limit_cdf_at_zero: Option<f64>,
    pub error: Option<String>,
}

/// Simulates `X_n` and `X` along `seq` at every `n` of `cfg` and reports
/// their distances. A failure at one `n` is recorded and the study moves on.
pub fn sequence_study(phi: &PhiMap, seq: &ParamSeq, cfg: &SimConfig) -> Result<Vec<SequenceRow>> {
    cfg.validate()?;
    if seq.family.t_dim() != phi.d_in() {
        return Err(Error::Dimension(format!(
            "family `{}` produces {}-dimensional T_n, `{}` expects {}",
            seq.family.name(),
            seq.family.t_dim(),
            phi.name(),
            phi.d_in()
        )));
    }
    Ok(cfg
        .n_list
        .iter()
        .map(|&n| {
            let r_n = cfg.r_rule.at(n as f64);
            let mut row = SequenceRow {
                n,
                theta: Vec::new(),
                mu: Vec::new(),
                r_n,
                kept: 0,
                rejected: 0,
                bl: None,
                ks: None,
                xn_cdf_at_zero: None,
                limit_cdf_at_zero: None,
                error: None,
            };
            if let Err(e) = sequence_point(phi, seq, cfg, n, &mut row) {
                row.error = Some(e.to_string());
            }
            row
        })
        .collect())
}

fn sequence_point(
    phi: &PhiMap,
    seq: &ParamSeq,
    cfg: &SimConfig,
    n: u64,
    row: &mut SequenceRow,
) -> Result<()> {
    let theta = seq.theta(n)?;
    let family = seq.family.as_ref();
    let mu = family.mu(&theta);
    row.theta = theta.clone();
    row.mu = mu.clone();
    let tn = sample_tn(family, &theta, n, cfg.reps, cfg.master_seed)?;
    let xn = build_xn(phi, &tn.t, &mu, row.r_n)?;
    row.kept = xn.kept.len();
    row.rejected = xn.rejected;
    let s = sample_limit_s(&family.limit_law(&theta), cfg.reps, cfg.master_seed, n)?;
    let x = limit_x_from_s(phi, &mu, &s)?;
    let zero = vec![0.0; phi.d_out()];
    row.xn_cdf_at_zero = Some(xn.x.ecdf(&zero));
    row.limit_cdf_at_zero = Some(x.ecdf(&zero));
    let metric = MetricConfig {
        seed: rng::derive_seed(cfg.metric.seed, &[n]),
        ..cfg.metric
    };
    if phi.d_out() == 1 {
        row.bl = Some(dudley_1d_with(&xn.x, &x, &metric)?);
        row.ks = Some(ks_distance_with(&xn.x, KsReference::Sample(&x), &metric)?);
    } else {
        row.bl = Some(sliced_bl(&xn.x, &x, DEFAULT_PROJECTIONS, &metric)?);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmtRow {
    pub n: u64,
    pub theta: f64,
    pub psi_x: f64,
    pub psi_y: f64,
    pub gap: f64,
}

/// `psi(x) = 1/x` at `X_n = theta` and `Y_n = theta + 1/n`, along
/// `theta_n = 1/n` or a fixed `theta`.
pub fn cmt_counterexample(n_list: &[u64], fixed_theta: Option<f64>) -> Result<Vec<CmtRow>> {
    if n_list.iter().any(|&n| n == 0) {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if let Some(theta) = fixed_theta {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::InvalidArgument("theta must be positive".into()));
        }
    }
    Ok(n_list
        .iter()
        .map(|&n| {
            let nf = n as f64;
            let theta = fixed_theta.unwrap_or(1.0 / nf);
            let (x, y) = (theta, theta + 1.0 / nf);
            let (psi_x, psi_y) = (1.0 / x, 1.0 / y);
            CmtRow {
                n,
                theta,
                psi_x,
                psi_y,
                gap: (psi_x - psi_y).abs(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiRow {
    pub n: u64,
    pub theta: Vec<f64>,
    pub truth: f64,
    pub coverage: Option<CoverageReport>,
    pub rejected: usize,
    pub error: Option<String>,
}

/// Coverage of the delta-method interval
/// `phi(T_n) -/+ z_{1 - alpha/2} sqrt(dphi(T_n) Sigma_hat dphi(T_n)') / r_n`
/// for `phi(mu(theta_n))`.
pub fn ci_study(phi: &PhiMap, seq: &ParamSeq, cfg: &SimConfig, alpha: f64) -> Result<Vec<CiRow>> {
    cfg.validate()?;
    if phi.d_out() != 1 {
        return Err(Error::Dimension("confidence intervals need d_out = 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - alpha / 2.0);
    Ok(cfg
        .n_list
        .iter()
        .map(|&n| {
            let mut row = CiRow {
                n,
                theta: Vec::new(),
                truth: f64::NAN,
                coverage: None,
                rejected: 0,
                error: None,
            };
            let result = (|| -> Result<()> {
                let theta = seq.theta(n)?;
                let mu = seq.family.mu(&theta);
                row.theta = theta.clone();
                let truth = phi.eval(&mu)?[0];
                row.truth = truth;
                let r_n = cfg.r_rule.at(n as f64);
                let tn = sample_tn(seq.family.as_ref(), &theta, n, cfg.reps, cfg.master_seed)?;
                let hits: Vec<Option<bool>> = (0..tn.t.len())
                    .into_par_iter()
                    .map(|i| {
                        let t = tn.t.row(i);
                        let v = phi.eval(&t).ok()?[0];
                        let jac = phi.jacobian(&t, JacobianMode::Auto).ok()?;
                        let var = (&jac * &tn.sigma_hat[i] * jac.transpose())[(0, 0)];
                        let half = z * var.max(0.0).sqrt() / r_n;
                        half.is_finite().then(|| (v - truth).abs() <= half)
                    })
                    .collect();
                let valid = hits.iter().flatten().count();
                row.rejected = hits.len() - valid;
                if valid == 0 {
                    return Err(Error::Empty("every replication left the domain".into()));
                }
                let covered = hits.iter().flatten().filter(|h| **h).count();
                row.coverage = Some(coverage_from_counts(covered, valid));
                Ok(())
            })();
            if let Err(e) = result {
                row.error = Some(e.to_string());
            }
            row
        })
        .collect())
}

/// Empirical `q`-quantile of `|r_n (T_n - mu)|` at each `theta`.
pub fn tightness_quantiles(
    family: &dyn ParamFamily,
    thetas: &[Vec<f64>],
    n: u64,
    reps: usize,
    seed: u64,
    q: f64,
) -> Result<Vec<f64>> {
    let r_n = (n as f64).sqrt();
    thetas
        .iter()
        .map(|theta| {
            let tn = sample_tn(family, theta, n, reps, seed)?;
            let mu = family.mu(theta);
            let norms: Vec<f64> = (0..tn.t.len())
                .map(|i| {
                    tn.t.row(i)
                        .iter()
                        .zip(&mu)
                        .map(|(t, m)| (r_n * (t - m)).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            Ok(EmpiricalSample::from_values(norms)?.quantile(0, q))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcspace::{affine, builtin};
    use crate::metrics::ks_distance;

    fn std_cdf() -> impl Fn(f64) -> f64 + Sync {
        let d = Normal::new(0.0, 1.0).unwrap();
        move |x| d.cdf(x)
    }

    fn ks_vs_normal(s: &EmpiricalSample) -> f64 {
        let cfg = MetricConfig::default().without_bootstrap();
        ks_distance_with(s, KsReference::Cdf(&std_cdf()), &cfg).unwrap().value
    }

    #[test]
    fn normal_mean_draws() {
        let fam = NormalMean::standard(1);
        let tn = sample_tn(&fam, &[0.0], 1, 20_000, 1).unwrap();
        let mean = tn.t.mean()[0];
        assert!(mean.abs() <= 4.0 / (20_000f64).sqrt());
        assert!(ks_vs_normal(&tn.t) < 0.015);
        assert!(matches!(sample_tn(&fam, &[0.0], 10, 0, 1), Err(Error::Empty(_))));
        let boxed = NormalMean::standard(1).with_box(vec![0.0], vec![1.0]).unwrap();
        assert!(matches!(sample_tn(&boxed, &[2.0], 10, 10, 1), Err(Error::Domain { .. })));
    }

    #[test]
    fn wishart_estimate_is_unbiased() {
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let fam = NormalMean::new(sigma.clone()).unwrap();
        let tn = sample_tn(&fam, &[0.0, 0.0], 5, 20_000, 3).unwrap();
        let avg = tn.sigma_hat.iter().fold(DMatrix::zeros(2, 2), |a, s| a + s) / 20_000.0;
        assert!((avg - sigma).abs().max() < 0.05);
    }

    #[test]
    fn bernoulli_means_are_asymptotically_normal() {
        let tn = sample_tn(&BernoulliMean, &[0.5], 10_000, 100_000, 2).unwrap();
        let z: Vec<f64> = tn.t.values().unwrap().iter().map(|t| (t - 0.5) * 100.0 / 0.5).collect();
        // oracle: exact binomial CDF against the normal limit
        let s = EmpiricalSample::from_values(z).unwrap();
        assert!(ks_vs_normal(&s) <= 0.02);
    }

    #[test]
    fn streams_do_not_depend_on_thread_count() {
        let fam = NormalMean::standard(2);
        let a = sample_tn(&fam, &[1.0, 2.0], 50, 500, 9).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| sample_tn(&fam, &[1.0, 2.0], 50, 500, 9).unwrap());
        assert_eq!(a.t, b.t);
        assert_eq!(a.sigma_hat, b.sigma_hat);
    }

    #[test]
    fn affine_xn_is_exact() {
        let a = DMatrix::from_row_slice(1, 2, &[3.0, -4.0]);
        let phi = affine(a, vec![1.0]).unwrap();
        let tn = sample_tn(&NormalMean::standard(2), &[0.5, 0.5], 100, 200, 4).unwrap();
        let xn = build_xn(&phi, &tn.t, &[0.5, 0.5], 10.0).unwrap();
        assert_eq!(xn.rejected, 0);
        for i in 0..200 {
            let t = tn.t.row(i);
            let expected = 10.0 * (3.0 * (t[0] - 0.5) - 4.0 * (t[1] - 0.5)) / 5.0;
            assert!((xn.x.row(i)[0] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn absval_xn_mass_at_zero_vanishes() {
        let n = 10_000;
        let mu = 1.0 / n as f64;
        let tn = sample_tn(&NormalMean::standard(1), &[mu], n, 100_000, 5).unwrap();
        let xn = build_xn(&builtin("absval").unwrap(), &tn.t, &[mu], 100.0).unwrap();
        assert!(xn.x.ecdf(&[0.0]) <= 0.05);
    }

    #[test]
    fn reciprocal_xn_at_interior_point() {
        let tn = sample_tn(&NormalMean::standard(1), &[1.0], 10_000, 100_000, 6).unwrap();
        let xn = build_xn(&builtin("reciprocal").unwrap(), &tn.t, &[1.0], 100.0).unwrap();
        // E(mu) D(mu) = -1 flips the sign; the normal law is symmetric
        assert!(ks_vs_normal(&xn.x) <= 0.02);
    }

    #[test]
    fn build_xn_rejects_and_errors() {
        let tn = EmpiricalSample::from_values(vec![-1.0, 0.5, 2.0, 4.0]).unwrap();
        let xn = build_xn(&builtin("sqrt").unwrap(), &tn, &[1.0], 2.0).unwrap();
        assert_eq!(xn.rejected, 1);
        assert_eq!(xn.kept, vec![1, 2, 3]);
        assert!(matches!(
            build_xn(&builtin("square").unwrap(), &tn, &[0.0], 2.0),
            Err(Error::Rank { .. })
        ));
    }

    #[test]
    fn limit_x_examples() {
        let one = DMatrix::from_element(1, 1, 1.0);
        for name in ["reciprocal", "square", "sqrt"] {
            let x = sample_limit_x(&builtin(name).unwrap(), &[0.7], &one, 100_000, 7).unwrap();
            assert!(ks_vs_normal(&x) <= 0.01, "{name}");
        }
        let zero = DMatrix::zeros(1, 1);
        let x = sample_limit_x(&builtin("reciprocal").unwrap(), &[0.7], &zero, 100, 7).unwrap();
        assert!(x.values().unwrap().iter().all(|v| *v == 0.0));
        let x = sample_limit_x(&builtin("iv_ratio").unwrap(), &[0.0, 1.0], &DMatrix::identity(2, 2), 50_000, 8)
            .unwrap();
        assert!(ks_vs_normal(&x) <= 0.015);
        let bad = DMatrix::from_element(1, 1, -1.0);
        assert!(matches!(
            sample_limit_x(&builtin("reciprocal").unwrap(), &[0.7], &bad, 10, 7),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn pivot_examples() {
        let fam = NormalMean::standard(1);
        let a = affine(DMatrix::from_element(1, 1, -2.0), vec![0.0]).unwrap();
        let tn = sample_tn(&fam, &[0.3], 100, 100_000, 10).unwrap();
        let one = DMatrix::from_element(1, 1, 1.0);
        let z = pivot_zn(&a, &tn.t, SigmaHat::Pooled(&one), &[0.3], 10.0).unwrap();
        assert!(ks_vs_normal(&z.z) <= 0.01);

        let recip = builtin("reciprocal").unwrap();
        let n = 10_000u64;
        let tn = sample_tn(&fam, &[1.0], n, 100_000, 11).unwrap();
        let z = pivot_zn(&recip, &tn.t, SigmaHat::PerDraw(&tn.sigma_hat), &[1.0], 100.0).unwrap();
        assert!(ks_vs_normal(&z.z) <= 0.02);

        let mu = 1.0 / (n as f64).sqrt();
        let tn = sample_tn(&fam, &[mu], n, 100_000, 12).unwrap();
        let z = pivot_zn(&recip, &tn.t, SigmaHat::PerDraw(&tn.sigma_hat), &[mu], 100.0).unwrap();
        // Z_n = -Z (1 + Z) in the limit
        assert!(ks_vs_normal(&z.z) >= 0.1);
    }

    #[test]
    fn pivot_counts_rank_failures() {
        let tn = EmpiricalSample::from_values(vec![0.0, 1.0, 2.0]).unwrap();
        let one = DMatrix::from_element(1, 1, 1.0);
        let z = pivot_zn(&builtin("square").unwrap(), &tn, SigmaHat::Pooled(&one), &[1.0], 1.0).unwrap();
        assert_eq!(z.rank_failures, 1);
        assert_eq!(z.z.len(), 2);
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    #[test]
    fn fixed_theta_consistency() {
        let cases: [(&str, f64); 3] = [("reciprocal", 1.0), ("square", 1.0), ("sqrt", 1.0)];
        for (name, mu) in cases {
            let phi = builtin(name).unwrap();
            let (mut small, mut large) = (Vec::new(), Vec::new());
            for seed in 0..10 {
                let mut cfg = SimConfig::new(seed, 4096, vec![100, 10_000]);
                cfg.metric = MetricConfig { subsample_cap: 4096, bootstrap: 0, seed };
                let seq = ParamSeq::fixed(Arc::new(NormalMean::standard(1)), vec![mu]);
                let rows = sequence_study(&phi, &seq, &cfg).unwrap();
                small.push(rows[0].bl.as_ref().unwrap().value);
                large.push(rows[1].bl.as_ref().unwrap().value);
            }
            assert!(median(large) < median(small), "{name}");
        }
    }

    #[test]
    fn drifting_sequences_do_not_converge() {
        let normal: Arc<dyn ParamFamily> = Arc::new(NormalMean::standard(1));
        let cases: Vec<(&str, ParamSeq)> = vec![
            ("reciprocal", ParamSeq::new(normal.clone(), Rule::new("1/sqrt(n)+1/n", |n: f64| vec![1.0 / n.sqrt() + 1.0 / n]))),
            ("square", ParamSeq::new(normal.clone(), Rule::new("1/n", |n: f64| vec![1.0 / n]))),
            ("absval", ParamSeq::new(normal.clone(), Rule::new("1/n", |n: f64| vec![1.0 / n]))),
            ("sqrt", ParamSeq::new(Arc::new(Chi2Shift), Rule::new("1/n", |n: f64| vec![1.0 / n]))),
        ];
        for (name, seq) in cases {
            let mut cfg = SimConfig::new(21, 20_000, vec![100, 1_000, 10_000]);
            cfg.metric.bootstrap = 0;
            let rows = sequence_study(&builtin(name).unwrap(), &seq, &cfg).unwrap();
            for row in rows {
                let d = row.bl.unwrap().value;
                assert!(d >= 0.05, "{name} n = {}: {d}", row.n);
            }
        }
    }

    #[test]
    fn reciprocal_drifting_sequence_study() {
        let seq = ParamSeq::new(
            Arc::new(NormalMean::standard(1)),
            Rule::new("1/sqrt(n)", |n: f64| vec![1.0 / n.sqrt()]),
        );
        let mut cfg = SimConfig::new(3, 20_000, vec![100, 1_000, 10_000]);
        cfg.metric.bootstrap = 0;
        let rows = sequence_study(&builtin("reciprocal").unwrap(), &seq, &cfg).unwrap();
        assert!(rows.iter().all(|r| r.bl.as_ref().unwrap().value >= 0.05));
    }

    #[test]
    fn sequence_study_records_errors_and_continues() {
        let seq = ParamSeq::new(
            Arc::new(NormalMean::standard(1).with_box(vec![0.0], vec![1.0]).unwrap()),
            Rule::new("n/100", |n: f64| vec![n / 100.0]),
        );
        let mut cfg = SimConfig::new(1, 100, vec![10, 1000]);
        cfg.metric.bootstrap = 0;
        let rows = sequence_study(&builtin("reciprocal").unwrap(), &seq, &cfg).unwrap();
        assert!(rows[0].error.is_none());
        assert!(rows[1].error.is_some());
    }

    #[test]
    fn cmt_tables() {
        let drifting = cmt_counterexample(&[1, 10], None).unwrap();
        assert_eq!(drifting[0].gap, 0.5);
        assert_eq!(drifting[1].psi_x, 10.0);
        assert_eq!(drifting[1].psi_y, 5.0);
        let fixed = cmt_counterexample(&[10, 1_000_000], Some(1.0)).unwrap();
        assert!((fixed[0].gap - (1.0 - 1.0 / 1.1)).abs() < 1e-15);
        assert!(fixed[1].gap < 1e-5);
        assert!(cmt_counterexample(&[0], None).is_err());
    }

    /// `P(|Z| |1 + Z| <= z)` from the roots of `x (1 + x) = +-z`.
    fn drifting_coverage_oracle(z: f64) -> f64 {
        let std = Normal::new(0.0, 1.0).unwrap();
        let disc = (1.0 + 4.0 * z).sqrt();
        let (lo, hi) = ((-1.0 - disc) / 2.0, (-1.0 + disc) / 2.0);
        std.cdf(hi) - std.cdf(lo)
    }

    #[test]
    fn coverage_studies() {
        let recip = builtin("reciprocal").unwrap();
        let fam: Arc<dyn ParamFamily> = Arc::new(NormalMean::standard(1));
        let cfg = SimConfig::new(8, 100_000, vec![10_000]);
        let fixed = ci_study(&recip, &ParamSeq::fixed(fam.clone(), vec![1.0]), &cfg, 0.05).unwrap();
        let c = fixed[0].coverage.as_ref().unwrap().coverage;
        assert!((0.94..=0.96).contains(&c), "{c}");

        let drifting = ParamSeq::new(fam.clone(), Rule::new("1/sqrt(n)", |n: f64| vec![1.0 / n.sqrt()]));
        let rows = ci_study(&recip, &drifting, &cfg, 0.05).unwrap();
        let c = rows[0].coverage.as_ref().unwrap().coverage;
        let oracle = drifting_coverage_oracle(1.959963984540054);
        assert!((oracle - 0.8146).abs() < 5e-4);
        assert!((c - oracle).abs() <= 0.01, "{c} vs {oracle}");

        let aff = affine(DMatrix::from_element(1, 1, 2.0), vec![0.0]).unwrap();
        let cfg = SimConfig::new(9, 20_000, vec![30, 1_000]);
        for row in ci_study(&aff, &ParamSeq::fixed(fam, vec![0.2]), &cfg, 0.05).unwrap() {
            let c = row.coverage.unwrap().coverage;
            assert!((0.94..=0.96).contains(&c), "n = {}: {c}", row.n);
        }
    }

    #[test]
    fn ci_study_requires_scalar_output() {
        let fam: Arc<dyn ParamFamily> = Arc::new(NormalMean::standard(2));
        let cfg = SimConfig::new(1, 100, vec![10]);
        let seq = ParamSeq::fixed(fam, vec![-1.0, 1.0]);
        assert!(matches!(
            ci_study(&builtin("mineq_phi1").unwrap(), &seq, &cfg, 0.05),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn tightness_surrogate() {
        let thetas: Vec<Vec<f64>> = (0..5).map(|i| vec![0.1 + 0.2 * i as f64]).collect();
        let q = tightness_quantiles(&BernoulliMean, &thetas, 400, 20_000, 1, 0.999).unwrap();
        // |S| <= 3.3 sqrt(p(1 - p)) <= 1.65 with margin for lattice effects
        assert!(q.iter().all(|v| *v <= 2.0), "{q:?}");
        let q = tightness_quantiles(&Chi2Shift, &[vec![0.0], vec![5.0]], 100, 20_000, 1, 0.999).unwrap();
        assert!(q.iter().all(|v| *v <= 15.0));
    }

    #[test]
    fn sqrt_limit_is_not_reached() {
        let n = 10_000u64;
        let tn = sample_tn(&Chi2Shift, &[1.0 / n as f64], n, 50_000, 13).unwrap();
        let xn = build_xn(&builtin("sqrt").unwrap(), &tn.t, &[1.0 / n as f64], 100.0).unwrap();
        let limit = sample_limit_s(&LimitLaw::ChiSquare1, 50_000, 13, n).unwrap();
        let cfg = MetricConfig::default().without_bootstrap();
        let ks = ks_distance_with(&xn.x, KsReference::Sample(&limit), &cfg).unwrap();
        assert!(ks.value >= 0.2);
        assert!(ks_distance(&limit, KsReference::Sample(&limit)).unwrap().value == 0.0);
    }
}
