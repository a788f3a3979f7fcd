//! The normalized first-order Taylor remainder
//!
//! ```text
//! Delta(t, m) = | E(m) (phi(t) - phi(m) - D(m)(t - m)) | / |t - m|
//! ```
//!
//! together with grid tabulation, a sampled estimate of the uniform envelope
//! `sup { Delta(t, m) : |t - m| <= eps }`, and lattice checks of diverging
//! lower bounds along drifting centers `m_n`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcspace::{Domain, JacobianMode, NormalizedJacobian, PhiMap};
use crate::rng;

/// Pairs closer than this are degenerate (`Delta` is 0/0 on the diagonal).
pub const DEGENERATE_DISTANCE: f64 = 1e-12;

/// Default number of interior lattice points per axis for divergence checks.
pub const DEFAULT_LATTICE: usize = 17;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `Delta(t, m)` with the map's analytic Jacobian when it has one.
pub fn delta(phi: &PhiMap, t: &[f64], m: &[f64]) -> Result<f64> {
    delta_with(phi, t, m, JacobianMode::Auto)
}

pub fn delta_with(phi: &PhiMap, t: &[f64], m: &[f64], mode: JacobianMode) -> Result<f64> {
    Ok(norm(&delta_components(phi, t, m, mode)?))
}

/// Per-component remainders `Delta_i`; their Euclidean norm is `Delta`.
pub fn delta_components(
    phi: &PhiMap,
    t: &[f64],
    m: &[f64],
    mode: JacobianMode,
) -> Result<Vec<f64>> {
    if t.len() != phi.d_in() || m.len() != phi.d_in() {
        return Err(Error::Dimension(format!(
            "`{}` expects {}-dimensional t and m",
            phi.name(),
            phi.d_in()
        )));
    }
    let diff: Vec<f64> = t.iter().zip(m).map(|(a, b)| a - b).collect();
    let distance = norm(&diff);
    if !(distance >= DEGENERATE_DISTANCE) {
        return Err(Error::Degenerate { distance });
    }
    let phi_t = phi.eval(t)?;
    let phi_m = phi.eval(m)?;
    let nj = NormalizedJacobian::new(phi.jacobian(m, mode)?)?;
    let linear = &nj.d * DVector::from_column_slice(&diff);
    let scales = nj.row_scales();
    Ok((0..phi.d_out())
        .map(|k| (scales[k] * (phi_t[k] - phi_m[k] - linear[k])).abs() / distance)
        .collect())
}

/// Names with a closed-form remainder in [`delta_analytic`].
pub const CLOSED_FORMS: [&str; 5] = ["reciprocal", "square", "absval", "sqrt", "iv_ratio"];

/// Closed-form `Delta` for the scalar stylized maps and the IV ratio.
pub fn delta_analytic(name: &str, t: &[f64], m: &[f64]) -> Result<f64> {
    if !CLOSED_FORMS.contains(&name) {
        return Err(Error::UnknownBuiltin(name.to_string()));
    }
    let phi = crate::funcspace::builtin(name)?;
    if t.len() != phi.d_in() || m.len() != phi.d_in() {
        return Err(Error::Dimension(format!("`{name}` expects {}-dimensional t and m", phi.d_in())));
    }
    for p in [t, m] {
        if phi.domain(p) != Domain::Inside {
            return Err(Error::domain(name, p));
        }
    }
    let diff: Vec<f64> = t.iter().zip(m).map(|(a, b)| a - b).collect();
    let distance = norm(&diff);
    if !(distance >= DEGENERATE_DISTANCE) {
        return Err(Error::Degenerate { distance });
    }
    let value = match name {
        "reciprocal" => ((t[0] - m[0]) / t[0]).abs(),
        "square" => {
            if m[0] == 0.0 {
                return Err(Error::Rank { row: 0, norm: 0.0 });
            }
            ((t[0] - m[0]) / (2.0 * m[0])).abs()
        }
        "absval" => {
            if t[0] * m[0] <= 0.0 {
                2.0 * t[0].abs() / (t[0] - m[0]).abs()
            } else {
                0.0
            }
        }
        "sqrt" => {
            let (rt, rm) = (t[0].sqrt(), m[0].sqrt());
            ((rm - rt) / (rm + rt)).abs()
        }
        "iv_ratio" => {
            let cross = m[1] * (t[0] - m[0]) - m[0] * (t[1] - m[1]);
            ((t[1] - m[1]) / t[1]).abs() * cross.abs() / (norm(m) * distance)
        }
        _ => unreachable!(),
    };
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub spacing: Spacing,
}

impl Axis {
    pub fn linear(lo: f64, hi: f64, count: usize) -> Result<Self> {
        Self::new(lo, hi, count, Spacing::Linear)
    }

    pub fn new(lo: f64, hi: f64, count: usize, spacing: Spacing) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidGrid(format!("need finite lo < hi, got [{lo}, {hi}]")));
        }
        if count < 2 {
            return Err(Error::InvalidGrid(format!("need count >= 2, got {count}")));
        }
        if spacing == Spacing::Log && lo <= 0.0 {
            return Err(Error::InvalidGrid(format!("log spacing needs lo > 0, got {lo}")));
        }
        Ok(Axis { lo, hi, count, spacing })
    }

    pub fn values(&self) -> Vec<f64> {
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                let u = i as f64 / last;
                match self.spacing {
                    Spacing::Linear => self.lo + (self.hi - self.lo) * u,
                    Spacing::Log => (self.lo.ln() + (self.hi.ln() - self.lo.ln()) * u).exp(),
                }
            })
            .collect()
    }
}

/// Product grid; the last axis varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidGrid("grid needs at least one axis".into()));
        }
        for a in &axes {
            Axis::new(a.lo, a.hi, a.count, a.spacing)?;
        }
        Ok(GridSpec { axes })
    }

    pub fn linear(lo: f64, hi: f64, count: usize) -> Result<Self> {
        Ok(GridSpec {
            axes: vec![Axis::linear(lo, hi, count)?],
        })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let per_axis: Vec<Vec<f64>> = self.axes.iter().map(Axis::values).collect();
        let mut out = vec![Vec::with_capacity(self.dim())];
        for values in &per_axis {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push(*v);
                        p
                    })
                })
                .collect();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellMask {
    Valid,
    OutsideDomain,
    Degenerate,
}

impl fmt::Display for CellMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellMask::Valid => "valid",
            CellMask::OutsideDomain => "outside_domain",
            CellMask::Degenerate => "degenerate",
        })
    }
}

impl CellMask {
    fn from_error(err: &Error) -> CellMask {
        match err {
            Error::Degenerate { .. } | Error::Rank { .. } | Error::SingularHessian { .. } => {
                CellMask::Degenerate
            }
            _ => CellMask::OutsideDomain,
        }
    }
}

/// `Delta` tabulated over `t_points x m_points`; cell `(i, j)` sits at
/// index `i * m_points.len() + j`. Masked cells hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct RemainderField {
    pub t_points: Vec<Vec<f64>>,
    pub m_points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub mask: Vec<CellMask>,
}

impl RemainderField {
    /// Evaluates `cell` on every pair; errors become mask entries.
    pub fn tabulate<F>(t_points: Vec<Vec<f64>>, m_points: Vec<Vec<f64>>, cell: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> Result<f64> + Sync,
    {
        let n_m = m_points.len();
        let cells: Vec<(f64, CellMask)> = (0..t_points.len() * n_m)
            .into_par_iter()
            .map(|idx| {
                let (t, m) = (&t_points[idx / n_m], &m_points[idx % n_m]);
                match cell(t, m) {
                    Ok(v) if v.is_finite() && v >= 0.0 => (v, CellMask::Valid),
                    Ok(_) => (f64::NAN, CellMask::OutsideDomain),
                    Err(e) => (f64::NAN, CellMask::from_error(&e)),
                }
            })
            .collect();
        let (values, mask) = cells.into_iter().unzip();
        RemainderField {
            t_points,
            m_points,
            values,
            mask,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.t_points.len(), self.m_points.len())
    }

    pub fn get(&self, i_t: usize, i_m: usize) -> (f64, CellMask) {
        let idx = i_t * self.m_points.len() + i_m;
        (self.values[idx], self.mask[idx])
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m == CellMask::Valid).count()
    }

    pub fn count(&self, kind: CellMask) -> usize {
        self.mask.iter().filter(|m| **m == kind).count()
    }

    /// Largest valid value and its `(i_t, i_m)` cell.
    pub fn max_valid(&self) -> Option<(f64, usize, usize)> {
        let n_m = self.m_points.len();
        self.values
            .iter()
            .zip(&self.mask)
            .enumerate()
            .filter(|(_, (_, m))| **m == CellMask::Valid)
            .fold(None, |best: Option<(f64, usize)>, (idx, (v, _))| match best {
                Some((b, _)) if b >= *v => best,
                _ => Some((*v, idx)),
            })
            .map(|(v, idx)| (v, idx / n_m, idx % n_m))
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.mask)
            .filter(|(_, m)| **m == CellMask::Valid)
            .map(|(v, _)| *v)
    }
}

/// Tabulates `Delta` over the product of two grids.
pub fn scan(phi: &PhiMap, t_grid: &GridSpec, m_grid: &GridSpec) -> Result<RemainderField> {
    scan_with(phi, t_grid, m_grid, JacobianMode::Auto)
}

pub fn scan_with(
    phi: &PhiMap,
    t_grid: &GridSpec,
    m_grid: &GridSpec,
    mode: JacobianMode,
) -> Result<RemainderField> {
    if t_grid.dim() != phi.d_in() || m_grid.dim() != phi.d_in() {
        return Err(Error::Dimension(format!(
            "`{}` needs {}-dimensional grids",
            phi.name(),
            phi.d_in()
        )));
    }
    Ok(RemainderField::tabulate(
        t_grid.points(),
        m_grid.points(),
        |t, m| delta_with(phi, t, m, mode),
    ))
}

/// Settings for [`envelope`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeConfig {
    /// Compact box of centers `m`.
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    /// Strictly decreasing radii.
    pub eps_list: Vec<f64>,
    pub samples_per_eps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopePoint {
    pub eps: f64,
    /// Lower bound on `sup { Delta(t, m) : |t - m| <= eps, m in box }`.
    pub delta_hat: f64,
    /// Pairs that produced a valid `Delta` at this radius.
    pub valid_pairs: usize,
    pub witness_t: Option<Vec<f64>>,
    pub witness_m: Option<Vec<f64>>,
}

/// Sampled remainder envelope.
///
/// Centers follow a Halton sequence over the box, offsets a uniform direction
/// times a radius in `(0, eps]`. Results are cumulated from the smallest
/// radius upward so the reported sequence is monotone; each entry remains a
/// lower bound on the true supremum at its radius.
pub fn envelope(phi: &PhiMap, cfg: &EnvelopeConfig) -> Result<Vec<EnvelopePoint>> {
    let d = phi.d_in();
    if cfg.box_lo.len() != d || cfg.box_hi.len() != d {
        return Err(Error::Dimension(format!("envelope box must be {d}-dimensional")));
    }
    if cfg.box_lo.iter().zip(&cfg.box_hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l <= h)) {
        return Err(Error::InvalidArgument("envelope box needs finite lo <= hi".into()));
    }
    if cfg.eps_list.is_empty() {
        return Err(Error::Empty("eps_list".into()));
    }
    if cfg.eps_list.iter().any(|e| !(*e > 0.0) || !e.is_finite())
        || cfg.eps_list.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(Error::InvalidArgument(
            "eps_list must be positive and strictly decreasing".into(),
        ));
    }
    if cfg.samples_per_eps == 0 {
        return Err(Error::Empty("samples_per_eps".into()));
    }
    if d > 16 {
        return Err(Error::Dimension("envelope sampling supports d_in <= 16".into()));
    }
    check_box_inside(phi, &cfg.box_lo, &cfg.box_hi)?;

    let centers: Vec<Vec<f64>> = (0..cfg.samples_per_eps)
        .map(|i| {
            rng::halton(i as u64 + 1, d)
                .iter()
                .enumerate()
                .map(|(k, u)| cfg.box_lo[k] + (cfg.box_hi[k] - cfg.box_lo[k]) * u)
                .collect()
        })
        .collect();
    if let Some(bad) = centers.iter().find(|m| !phi.domain(m).is_inside()) {
        return Err(Error::domain(phi.name(), bad));
    }

    let mut raw: Vec<(f64, usize, Option<(Vec<f64>, Vec<f64>)>)> = cfg
        .eps_list
        .iter()
        .enumerate()
        .map(|(k, &eps)| {
            let results: Vec<Option<(f64, Vec<f64>)>> = centers
                .par_iter()
                .enumerate()
                .map(|(i, m)| {
                    let mut r = rng::stream(cfg.seed, &[k as u64, i as u64]);
                    let dir = random_direction(&mut r, d);
                    let u: f64 = r.random();
                    let radius = eps * (1.0 - u);
                    let t: Vec<f64> = m.iter().zip(&dir).map(|(a, b)| a + radius * b).collect();
                    delta(phi, &t, m).ok().map(|v| (v, t))
                })
                .collect();
            let valid = results.iter().filter(|r| r.is_some()).count();
            let best = results
                .into_iter()
                .enumerate()
                .filter_map(|(i, r)| r.map(|(v, t)| (v, i, t)))
                .fold(None, |acc: Option<(f64, usize, Vec<f64>)>, cur| match acc {
                    Some(ref a) if a.0 >= cur.0 => acc,
                    _ => Some(cur),
                });
            match best {
                Some((v, i, t)) => (v, valid, Some((t, centers[i].clone()))),
                None => (0.0, valid, None),
            }
        })
        .collect();

    // cumulate from the smallest radius upward
    for k in (0..raw.len().saturating_sub(1)).rev() {
        if raw[k + 1].0 > raw[k].0 {
            raw[k].0 = raw[k + 1].0;
            raw[k].2 = raw[k + 1].2.clone();
        }
    }
    Ok(cfg
        .eps_list
        .iter()
        .zip(raw)
        .map(|(&eps, (v, valid, w))| EnvelopePoint {
            eps,
            delta_hat: v,
            valid_pairs: valid,
            witness_t: w.as_ref().map(|(t, _)| t.clone()),
            witness_m: w.map(|(_, m)| m),
        })
        .collect())
}

fn random_direction<R: Rng>(r: &mut R, d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![if r.random::<bool>() { 1.0 } else { -1.0 }];
    }
    loop {
        let v: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn check_box_inside(phi: &PhiMap, lo: &[f64], hi: &[f64]) -> Result<()> {
    let d = lo.len();
    let per_axis = if d <= 3 { 33 } else { 3 };
    let mut idx = vec![0usize; d];
    loop {
        let p: Vec<f64> = (0..d)
            .map(|k| lo[k] + (hi[k] - lo[k]) * idx[k] as f64 / (per_axis - 1) as f64)
            .collect();
        if !phi.domain(&p).is_inside() {
            return Err(Error::domain(phi.name(), &p));
        }
        let mut k = 0;
        loop {
            if k == d {
                return Ok(());
            }
            idx[k] += 1;
            if idx[k] < per_axis {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// A rule `n -> value` with a printable label.
#[derive(Clone)]
pub struct Rule<T> {
    pub label: String,
    f: Arc<dyn Fn(f64) -> T + Send + Sync>,
}

impl<T> Rule<T> {
    pub fn new(label: impl Into<String>, f: impl Fn(f64) -> T + Send + Sync + 'static) -> Self {
        Rule {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    pub fn at(&self, n: f64) -> T {
        (self.f)(n)
    }
}

impl<T> fmt::Debug for Rule<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rule({})", self.label)
    }
}

impl Rule<f64> {
    pub fn sqrt_n() -> Self {
        Rule::new("sqrt(n)", f64::sqrt)
    }
}

/// Open axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxSet {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::Dimension("box bounds must have equal, positive length".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
            return Err(Error::InvalidArgument("box needs finite lo < hi on every axis".into()));
        }
        Ok(BoxSet { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Distance from the origin to the closed box.
    pub fn min_norm(&self) -> f64 {
        norm(
            &self
                .lo
                .iter()
                .zip(&self.hi)
                .map(|(l, h)| 0f64.clamp(*l, *h))
                .collect::<Vec<_>>(),
        )
    }

    /// `k^d` interior points: `lo + (i + 1)(hi - lo)/(k + 1)` per axis.
    pub fn lattice(&self, k: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (0..k).map(|i| l + (h - l) * (i + 1) as f64 / (k + 1) as f64).collect())
            .collect();
        let mut out = vec![Vec::new()];
        for values in &axes {
            out = out
                .into_iter()
                .flat_map(|prefix: Vec<f64>| {
                    values.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push(*v);
                        p
                    })
                })
                .collect();
        }
        out
    }
}

/// A claimed lower bound `Delta(m_n + s / r_n, m_n) >= eps_n` for all `s` in `A`.
#[derive(Debug, Clone)]
pub struct DivergenceCertificate {
    pub phi: PhiMap,
    pub r_rule: Rule<f64>,
    pub eps_rule: Rule<f64>,
    pub m_rule: Rule<Vec<f64>>,
    pub set_a: BoxSet,
    pub n_list: Vec<u64>,
    pub grid_per_axis: usize,
}

impl DivergenceCertificate {
    pub fn new(
        phi: PhiMap,
        r_rule: Rule<f64>,
        eps_rule: Rule<f64>,
        m_rule: Rule<Vec<f64>>,
        set_a: BoxSet,
        n_list: Vec<u64>,
    ) -> Result<Self> {
        let cert = DivergenceCertificate {
            phi,
            r_rule,
            eps_rule,
            m_rule,
            set_a,
            n_list,
            grid_per_axis: DEFAULT_LATTICE,
        };
        cert.validate()?;
        Ok(cert)
    }

    pub fn with_grid(mut self, k: usize) -> Result<Self> {
        self.grid_per_axis = k;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.set_a.dim() != self.phi.d_in() {
            return Err(Error::InvalidCertificate(format!(
                "set A is {}-dimensional, map expects {}",
                self.set_a.dim(),
                self.phi.d_in()
            )));
        }
        if !(self.set_a.min_norm() > 0.0) {
            return Err(Error::InvalidCertificate(
                "closure of A must stay away from the origin".into(),
            ));
        }
        if self.grid_per_axis == 0 {
            return Err(Error::InvalidCertificate("grid_per_axis must be positive".into()));
        }
        if self.n_list.is_empty() {
            return Err(Error::InvalidCertificate("n_list is empty".into()));
        }
        if self.n_list.windows(2).any(|w| w[1] <= w[0]) || self.n_list[0] == 0 {
            return Err(Error::InvalidCertificate(
                "n_list must be positive and strictly increasing".into(),
            ));
        }
        let eps: Vec<f64> = self.n_list.iter().map(|&n| self.eps_rule.at(n as f64)).collect();
        if eps.iter().any(|e| !(*e > 0.0)) || (eps.len() > 1 && eps.windows(2).any(|w| w[1] <= w[0])) {
            return Err(Error::InvalidCertificate(format!(
                "eps rule `{}` must be positive and increasing over n_list",
                self.eps_rule.label
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeFailure {
    pub s: Vec<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceVerdict {
    pub n: u64,
    pub r_n: f64,
    pub eps_n: f64,
    pub m_n: Vec<f64>,
    pub holds: bool,
    /// Smallest `Delta` over lattice points that evaluated.
    pub min_delta: Option<f64>,
    pub argmin_s: Option<Vec<f64>>,
    /// First lattice point (in lattice order) violating the bound.
    pub witness: Option<LatticeFailure>,
    pub violations: usize,
    pub lattice_points: usize,
}

/// Evaluates the certificate on the interior lattice of `A` for each `n`.
pub fn check_divergence(cert: &DivergenceCertificate) -> Result<Vec<DivergenceVerdict>> {
    cert.validate()?;
    let lattice = cert.set_a.lattice(cert.grid_per_axis);
    Ok(cert
        .n_list
        .iter()
        .map(|&n| {
            let nf = n as f64;
            let r_n = cert.r_rule.at(nf);
            let eps_n = cert.eps_rule.at(nf);
            let m_n = cert.m_rule.at(nf);
            let evals: Vec<std::result::Result<f64, String>> = lattice
                .par_iter()
                .map(|s| {
                    let t: Vec<f64> = m_n.iter().zip(s).map(|(m, s)| m + s / r_n).collect();
                    delta(&cert.phi, &t, &m_n).map_err(|e| e.to_string())
                })
                .collect();
            let mut min: Option<(f64, usize)> = None;
            let mut witness = None;
            let mut violations = 0;
            for (i, e) in evals.iter().enumerate() {
                let failure = match e {
                    Ok(v) => {
                        if min.is_none_or(|(b, _)| *v < b) {
                            min = Some((*v, i));
                        }
                        (*v < eps_n).then(|| format!("delta {v} < eps_n {eps_n}"))
                    }
                    Err(msg) => Some(msg.clone()),
                };
                if let Some(reason) = failure {
                    violations += 1;
                    if witness.is_none() {
                        witness = Some(LatticeFailure {
                            s: lattice[i].clone(),
                            reason,
                        });
                    }
                }
            }
            DivergenceVerdict {
                n,
                r_n,
                eps_n,
                m_n,
                holds: violations == 0,
                min_delta: min.map(|(v, _)| v),
                argmin_s: min.map(|(_, i)| lattice[i].clone()),
                witness,
                violations,
                lattice_points: lattice.len(),
            }
        })
        .collect())
}

/// `1/t` with `m_n = 1/sqrt(n) + 1/n`, `A = (-2, -1)`, `eps_n = sqrt(n)`.
pub fn reciprocal_certificate(n_list: Vec<u64>) -> Result<DivergenceCertificate> {
    DivergenceCertificate::new(
        crate::funcspace::builtin("reciprocal")?,
        Rule::sqrt_n(),
        Rule::sqrt_n(),
        Rule::new("1/sqrt(n) + 1/n", |n: f64| vec![1.0 / n.sqrt() + 1.0 / n]),
        BoxSet::new(vec![-2.0], vec![-1.0])?,
        n_list,
    )
}

/// `t^2` with `m_n = 1/n`, `A = (1, 2)`, `eps_n = sqrt(n)/2`.
pub fn square_certificate(n_list: Vec<u64>) -> Result<DivergenceCertificate> {
    DivergenceCertificate::new(
        crate::funcspace::builtin("square")?,
        Rule::sqrt_n(),
        Rule::new("sqrt(n)/2", |n: f64| n.sqrt() / 2.0),
        Rule::new("1/n", |n: f64| vec![1.0 / n]),
        BoxSet::new(vec![1.0], vec![2.0])?,
        n_list,
    )
}
