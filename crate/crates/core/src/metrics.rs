//! Distances between empirical distributions and coverage tallies.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::chain_lp;
use crate::rng;

/// Default per-sample cap before uniform subsampling in [`dudley_1d`].
pub const DEFAULT_SUBSAMPLE_CAP: usize = 512;
/// Default bootstrap resamples behind `mc_stderr`.
pub const DEFAULT_BOOTSTRAP: usize = 200;

/// `N x d` matrix of draws, one row per draw.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSample {
    data: DMatrix<f64>,
}

impl EmpiricalSample {
    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(Error::Empty(format!("sample needs at least 2 draws, got {}", data.nrows())));
        }
        if data.ncols() == 0 {
            return Err(Error::Dimension("sample has zero columns".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("sample contains non-finite entries".into()));
        }
        Ok(EmpiricalSample { data })
    }

    /// One-dimensional sample.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::from_matrix(DMatrix::from_vec(n, 1, values))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("rows have unequal lengths".into()));
        }
        Self::from_matrix(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.column(j).iter().copied().collect()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().copied().collect()
    }

    /// Values of a one-dimensional sample.
    pub fn values(&self) -> Result<Vec<f64>> {
        self.require_1d()?;
        Ok(self.column(0))
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|j| self.data.column(j).mean())
            .collect()
    }

    /// Draws projected on `u`.
    pub fn project(&self, u: &[f64]) -> Result<EmpiricalSample> {
        if u.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "projection of length {} on a {}-dimensional sample",
                u.len(),
                self.dim()
            )));
        }
        let v = &self.data * nalgebra::DVector::from_column_slice(u);
        Self::from_values(v.iter().copied().collect())
    }

    /// Fraction of draws with all coordinates `<= x`.
    pub fn ecdf(&self, x: &[f64]) -> f64 {
        let hits = (0..self.len())
            .filter(|&i| (0..self.dim()).all(|j| self.data[(i, j)] <= x[j]))
            .count();
        hits as f64 / self.len() as f64
    }

    pub fn quantile(&self, column: usize, p: f64) -> f64 {
        let mut v = self.column(column);
        v.sort_by(f64::total_cmp);
        let idx = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
        v[idx]
    }

    fn require_1d(&self) -> Result<()> {
        if self.dim() != 1 {
            return Err(Error::Dimension(format!(
                "expected a one-dimensional sample, got d = {}",
                self.dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Dudley1d,
    Ks,
    SlicedBl,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DistanceMeta {
    pub n_p: usize,
    /// `None` when the reference is an exact CDF.
    pub n_q: Option<usize>,
    pub seed: Option<u64>,
    pub subsample_cap: Option<usize>,
    /// Sizes actually used after subsampling.
    pub used_p: usize,
    pub used_q: Option<usize>,
    pub bootstrap: usize,
    pub projections: Option<usize>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub metric: Metric,
    pub value: f64,
    pub mc_stderr: f64,
    pub meta: DistanceMeta,
}

/// Subsampling and bootstrap settings shared by the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub subsample_cap: usize,
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            subsample_cap: DEFAULT_SUBSAMPLE_CAP,
            bootstrap: DEFAULT_BOOTSTRAP,
            seed: 0,
        }
    }
}

impl MetricConfig {
    pub fn with_seed(seed: u64) -> Self {
        MetricConfig {
            seed,
            ..Self::default()
        }
    }

    pub fn without_bootstrap(mut self) -> Self {
        self.bootstrap = 0;
        self
    }
}

/// Both samples use the same stream, so equal inputs keep equal subsets.
fn subsample(values: Vec<f64>, cap: usize, seed: u64) -> Vec<f64> {
    if values.len() <= cap {
        return values;
    }
    let mut r = rng::stream(seed, &[0x5ab5]);
    let mut picked = index::sample(&mut r, values.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| values[i]).collect()
}

/// Pooled sorted support with per-point owner (`0` for p, `1` for q).
fn pooled(p: &[f64], q: &[f64]) -> (Vec<f64>, Vec<u8>) {
    let mut all: Vec<(f64, u8)> = p
        .iter()
        .map(|&v| (v, 0))
        .chain(q.iter().map(|&v| (v, 1)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().unzip()
}

/// Collapses pooled draws with multiplicities `counts` into chain weights.
fn chain_weights(x: &[f64], owner: &[u8], counts: &[f64], totals: (f64, f64)) -> (Vec<f64>, Vec<f64>) {
    let mut xs: Vec<f64> = Vec::new();
    let mut ws: Vec<f64> = Vec::new();
    for i in 0..x.len() {
        let w = if owner[i] == 0 {
            counts[i] / totals.0
        } else {
            -counts[i] / totals.1
        };
        if xs.last() == Some(&x[i]) {
            *ws.last_mut().unwrap() += w;
        } else {
            xs.push(x[i]);
            ws.push(w);
        }
    }
    (xs, ws)
}

fn bootstrap_counts<R: Rng>(r: &mut R, owner: &[u8], n_p: usize, n_q: usize) -> Vec<f64> {
    // positions of p-draws and q-draws inside the pooled order
    let p_pos: Vec<usize> = (0..owner.len()).filter(|&i| owner[i] == 0).collect();
    let q_pos: Vec<usize> = (0..owner.len()).filter(|&i| owner[i] == 1).collect();
    let mut counts = vec![0.0; owner.len()];
    for _ in 0..n_p {
        counts[p_pos[r.random_range(0..p_pos.len())]] += 1.0;
    }
    for _ in 0..n_q {
        counts[q_pos[r.random_range(0..q_pos.len())]] += 1.0;
    }
    counts
}

fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Exact bounded-Lipschitz distance between two one-dimensional empirical
/// measures, after subsampling each to at most `subsample_cap` draws.
pub fn dudley_1d(p: &EmpiricalSample, q: &EmpiricalSample) -> Result<DistanceReport> {
    dudley_1d_with(p, q, &MetricConfig::default())
}

pub fn dudley_1d_with(
    p: &EmpiricalSample,
    q: &EmpiricalSample,
    cfg: &MetricConfig,
) -> Result<DistanceReport> {
    let (pv, qv) = (p.values()?, q.values()?);
    let (n_p, n_q) = (pv.len(), qv.len());
    dudley_values(pv, qv, cfg, n_p, n_q)
}

fn dudley_values(
    pv: Vec<f64>,
    qv: Vec<f64>,
    cfg: &MetricConfig,
    n_p: usize,
    n_q: usize,
) -> Result<DistanceReport> {
    if cfg.subsample_cap < 1 {
        return Err(Error::InvalidArgument("subsample cap must be positive".into()));
    }
    let pv = subsample(pv, cfg.subsample_cap, cfg.seed);
    let qv = subsample(qv, cfg.subsample_cap, cfg.seed);
    let (used_p, used_q) = (pv.len(), qv.len());
    let (x, owner) = pooled(&pv, &qv);
    let totals = (used_p as f64, used_q as f64);
    let ones = vec![1.0; x.len()];
    let (xs, ws) = chain_weights(&x, &owner, &ones, totals);
    let value = chain_lp(&xs, &ws)?.clamp(0.0, 2.0);

    let boots: Vec<f64> = (0..cfg.bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(cfg.seed, &[0xb007, b as u64]);
            let counts = bootstrap_counts(&mut r, &owner, used_p, used_q);
            let (xs, ws) = chain_weights(&x, &owner, &counts, totals);
            chain_lp(&xs, &ws).map(|v| v.clamp(0.0, 2.0))
        })
        .collect::<Result<_>>()?;

    Ok(DistanceReport {
        metric: Metric::Dudley1d,
        value,
        mc_stderr: std_dev(&boots),
        meta: DistanceMeta {
            n_p,
            n_q: Some(n_q),
            seed: Some(cfg.seed),
            subsample_cap: Some(cfg.subsample_cap),
            used_p,
            used_q: Some(used_q),
            bootstrap: cfg.bootstrap,
            projections: None,
            warning: None,
        },
    })
}

/// Reference law for [`ks_distance`].
pub enum KsReference<'a> {
    Cdf(&'a (dyn Fn(f64) -> f64 + Sync)),
    Sample(&'a EmpiricalSample),
}

pub fn ks_distance(p: &EmpiricalSample, reference: KsReference<'_>) -> Result<DistanceReport> {
    ks_distance_with(p, reference, &MetricConfig::default())
}

/// Kolmogorov–Smirnov distance; one-sample against a continuous CDF or
/// two-sample.
pub fn ks_distance_with(
    p: &EmpiricalSample,
    reference: KsReference<'_>,
    cfg: &MetricConfig,
) -> Result<DistanceReport> {
    let mut pv = p.values()?;
    pv.sort_by(f64::total_cmp);
    let n_p = pv.len();
    let (value, boots, n_q) = match reference {
        KsReference::Cdf(cdf) => {
            let f: Vec<f64> = pv.iter().map(|&x| cdf(x)).collect();
            if f.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument("reference CDF left [0, 1]".into()));
            }
            let ones = vec![1.0; n_p];
            let value = ks_one_sample(&pv, &f, &ones, n_p as f64);
            let boots: Vec<f64> = (0..cfg.bootstrap)
                .into_par_iter()
                .map(|b| {
                    let mut r = rng::stream(cfg.seed, &[0x4b53, b as u64]);
                    let mut counts = vec![0.0; n_p];
                    for _ in 0..n_p {
                        counts[r.random_range(0..n_p)] += 1.0;
                    }
                    ks_one_sample(&pv, &f, &counts, n_p as f64)
                })
                .collect();
            (value, boots, None)
        }
        KsReference::Sample(q) => {
            let qv = q.values()?;
            let n_q = qv.len();
            let (x, owner) = pooled(&pv, &qv);
            let ones = vec![1.0; x.len()];
            let totals = (n_p as f64, n_q as f64);
            let value = ks_two_sample(&x, &owner, &ones, totals);
            let boots: Vec<f64> = (0..cfg.bootstrap)
                .into_par_iter()
                .map(|b| {
                    let mut r = rng::stream(cfg.seed, &[0x4b53, b as u64]);
                    let counts = bootstrap_counts(&mut r, &owner, n_p, n_q);
                    ks_two_sample(&x, &owner, &counts, totals)
                })
                .collect();
            (value, boots, Some(n_q))
        }
    };
    Ok(DistanceReport {
        metric: Metric::Ks,
        value,
        mc_stderr: std_dev(&boots),
        meta: DistanceMeta {
            n_p,
            n_q,
            seed: Some(cfg.seed),
            subsample_cap: None,
            used_p: n_p,
            used_q: n_q,
            bootstrap: cfg.bootstrap,
            projections: None,
            warning: None,
        },
    })
}

/// `sorted` ascending with CDF values `f` and multiplicities `counts`.
fn ks_one_sample(sorted: &[f64], f: &[f64], counts: &[f64], total: f64) -> f64 {
    let mut below = 0.0;
    let mut best: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let mut mass = 0.0;
        while j < sorted.len() && sorted[j] == sorted[i] {
            mass += counts[j];
            j += 1;
        }
        if mass > 0.0 {
            let lo = below / total;
            let hi = (below + mass) / total;
            best = best.max((f[i] - lo).abs().max((hi - f[i]).abs()));
        }
        below += mass;
        i = j;
    }
    best
}

fn ks_two_sample(x: &[f64], owner: &[u8], counts: &[f64], totals: (f64, f64)) -> f64 {
    let (mut fp, mut fq) = (0.0, 0.0);
    let mut best: f64 = 0.0;
    for i in 0..x.len() {
        if owner[i] == 0 {
            fp += counts[i] / totals.0;
        } else {
            fq += counts[i] / totals.1;
        }
        if i + 1 == x.len() || x[i + 1] != x[i] {
            best = best.max((fp - fq).abs());
        }
    }
    best
}

/// Lower bound on the bounded-Lipschitz distance for `d >= 2`: the largest
/// one-dimensional Dudley distance over random projections. `mc_stderr` is
/// the bootstrap error of the maximizing projection.
pub fn sliced_bl(
    p: &EmpiricalSample,
    q: &EmpiricalSample,
    n_projections: usize,
    cfg: &MetricConfig,
) -> Result<DistanceReport> {
    let d = p.dim();
    if q.dim() != d || d < 2 {
        return Err(Error::Dimension(format!(
            "sliced distance needs equal dimensions >= 2, got {} and {}",
            d,
            q.dim()
        )));
    }
    let meta = DistanceMeta {
        n_p: p.len(),
        n_q: Some(q.len()),
        seed: Some(cfg.seed),
        subsample_cap: Some(cfg.subsample_cap),
        used_p: p.len().min(cfg.subsample_cap),
        used_q: Some(q.len().min(cfg.subsample_cap)),
        bootstrap: cfg.bootstrap,
        projections: Some(n_projections),
        warning: None,
    };
    if n_projections == 0 {
        return Ok(DistanceReport {
            metric: Metric::SlicedBl,
            value: 0.0,
            mc_stderr: 0.0,
            meta: DistanceMeta {
                warning: Some("no projections requested; reporting the empty maximum 0".into()),
                ..meta
            },
        });
    }
    let directions: Vec<Vec<f64>> = (0..n_projections)
        .map(|k| {
            let mut r = rng::stream(cfg.seed, &[0x511c, k as u64]);
            loop {
                let v: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    break v.into_iter().map(|x| x / norm).collect();
                }
            }
        })
        .collect();
    let quick = MetricConfig {
        bootstrap: 0,
        ..*cfg
    };
    let values: Vec<f64> = directions
        .par_iter()
        .map(|u| dudley_1d_with(&p.project(u)?, &q.project(u)?, &quick).map(|r| r.value))
        .collect::<Result<_>>()?;
    let best = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(Ordering::Equal).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap();
    let u = &directions[best];
    let full = dudley_1d_with(&p.project(u)?, &q.project(u)?, cfg)?;
    Ok(DistanceReport {
        metric: Metric::SlicedBl,
        value: full.value,
        mc_stderr: full.mc_stderr,
        meta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub coverage: f64,
    /// `sqrt(p (1 - p) / R)`.
    pub stderr: f64,
    pub intervals: usize,
    /// `coverage -/+ 1.96 stderr`.
    pub band: (f64, f64),
}

/// Fraction of intervals `[lo, hi]` that contain `truth`.
pub fn coverage(intervals: &[(f64, f64)], truth: f64) -> Result<CoverageReport> {
    if intervals.is_empty() {
        return Err(Error::Empty("no intervals".into()));
    }
    if let Some((lo, hi)) = intervals.iter().find(|(lo, hi)| !(lo <= hi)) {
        return Err(Error::InvalidArgument(format!("interval [{lo}, {hi}] has lo > hi")));
    }
    let hits = intervals
        .iter()
        .filter(|(lo, hi)| *lo <= truth && truth <= *hi)
        .count();
    Ok(coverage_from_counts(hits, intervals.len()))
}

pub fn coverage_from_counts(hits: usize, total: usize) -> CoverageReport {
    let p = hits as f64 / total as f64;
    let se = (p * (1.0 - p) / total as f64).sqrt();
    CoverageReport {
        coverage: p,
        stderr: se,
        intervals: total,
        band: (p - 1.96 * se, p + 1.96 * se),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn normal_sample(n: usize, shift: f64, seed: u64) -> EmpiricalSample {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        EmpiricalSample::from_values((0..n).map(|_| shift + r.sample::<f64, _>(StandardNormal)).collect())
            .unwrap()
    }

    fn atoms(v: f64) -> EmpiricalSample {
        EmpiricalSample::from_values(vec![v, v]).unwrap()
    }

    #[test]
    fn sample_validation() {
        assert!(matches!(EmpiricalSample::from_values(vec![1.0]), Err(Error::Empty(_))));
        assert!(EmpiricalSample::from_values(vec![1.0, f64::NAN]).is_err());
        let s = EmpiricalSample::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(s.mean(), vec![2.0, 3.0]);
        assert!(matches!(s.values(), Err(Error::Dimension(_))));
    }

    #[test]
    fn dudley_atoms() {
        let cfg = MetricConfig::default().without_bootstrap();
        let d = |a, b| dudley_1d_with(&atoms(a), &atoms(b), &cfg).unwrap().value;
        assert_eq!(d(0.0, 0.0), 0.0);
        assert!((d(0.0, 3.0) - 2.0).abs() < 1e-15);
        assert!((d(0.0, 0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dudley_identical_and_dimension() {
        let p = normal_sample(300, 0.0, 1);
        let r = dudley_1d(&p, &p).unwrap();
        assert!(r.value.abs() < 1e-12);
        let two = EmpiricalSample::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert!(matches!(dudley_1d(&two, &p), Err(Error::Dimension(_))));
    }

    #[test]
    fn dudley_mean_shift_and_stderr() {
        let p = normal_sample(2000, 0.0, 2);
        let q = normal_sample(2000, 0.3, 3);
        let r = dudley_1d(&p, &q).unwrap();
        assert_eq!(r.meta.used_p, 512);
        // a pure shift by 0.3 has BL distance at most 0.3
        assert!(r.value > 0.1 && r.value < 0.45, "{}", r.value);
        assert!(r.mc_stderr > 0.0 && r.mc_stderr < 0.1);
        assert_eq!(r, dudley_1d(&p, &q).unwrap());
    }

    #[test]
    fn ks_examples() {
        let p = normal_sample(100_000, 0.0, 5);
        let std = Normal::new(0.0, 1.0).unwrap();
        let cdf = move |x: f64| std.cdf(x);
        let cfg = MetricConfig::default().without_bootstrap();
        let r = ks_distance_with(&p, KsReference::Cdf(&cdf), &cfg).unwrap();
        assert!(r.value <= 0.01, "{}", r.value);
        let abs = EmpiricalSample::from_values(p.values().unwrap()[..10_000].iter().map(|v| v.abs()).collect())
            .unwrap();
        assert!(ks_distance_with(&abs, KsReference::Cdf(&cdf), &cfg).unwrap().value >= 0.45);
        assert_eq!(ks_distance_with(&abs, KsReference::Sample(&abs), &cfg).unwrap().value, 0.0);
    }

    #[test]
    fn ks_handles_ties() {
        let p = EmpiricalSample::from_values(vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let q = EmpiricalSample::from_values(vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        let r = ks_distance(&p, KsReference::Sample(&q)).unwrap();
        assert!((r.value - 0.25).abs() < 1e-15);
        let uniform = |x: f64| x.clamp(0.0, 1.0);
        assert!((ks_distance(&p, KsReference::Cdf(&uniform)).unwrap().value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sliced_examples() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut draw = |shift: f64| -> EmpiricalSample {
            let rows: Vec<Vec<f64>> = (0..10_000)
                .map(|_| vec![shift + r.sample::<f64, _>(StandardNormal), r.sample(StandardNormal)])
                .collect();
            EmpiricalSample::from_rows(&rows).unwrap()
        };
        let p = draw(0.0);
        let q = draw(3.0);
        let cfg = MetricConfig::with_seed(4).without_bootstrap();
        assert!(sliced_bl(&p, &q, 32, &cfg).unwrap().value >= 0.8);
        assert!(sliced_bl(&p, &p, 8, &cfg).unwrap().value.abs() < 1e-12);
        let empty = sliced_bl(&p, &q, 0, &cfg).unwrap();
        assert_eq!(empty.value, 0.0);
        assert!(empty.meta.warning.is_some());
        let one = normal_sample(10, 0.0, 1);
        assert!(matches!(sliced_bl(&one, &one, 4, &cfg), Err(Error::Dimension(_))));
    }

    #[test]
    fn coverage_examples() {
        assert_eq!(coverage(&[(-1.0, 1.0); 10], 0.0).unwrap().coverage, 1.0);
        let alt: Vec<(f64, f64)> = (0..10).map(|i| if i % 2 == 0 { (-1.0, 1.0) } else { (1.0, 2.0) }).collect();
        let r = coverage(&alt, 0.0).unwrap();
        assert_eq!(r.coverage, 0.5);
        assert!((r.stderr - (0.25f64 / 10.0).sqrt()).abs() < 1e-15);
        assert!(matches!(coverage(&[], 0.0), Err(Error::Empty(_))));
        assert!(coverage(&[(1.0, 0.0)], 0.0).is_err());
    }

    #[test]
    fn coverage_of_normal_intervals() {
        let n = 100.0;
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let intervals: Vec<(f64, f64)> = (0..100_000)
            .map(|_| {
                let t = 0.5 + r.sample::<f64, _>(StandardNormal) / f64::sqrt(n);
                (t - 1.96 / f64::sqrt(n), t + 1.96 / f64::sqrt(n))
            })
            .collect();
        assert!((coverage(&intervals, 0.5).unwrap().coverage - 0.95).abs() <= 0.01);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn sample_strategy() -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-3.0f64..3.0, 2..30)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn dudley_is_a_bounded_symmetric_metric(a in sample_strategy(), b in sample_strategy(), c in sample_strategy()) {
                let cfg = MetricConfig::default().without_bootstrap();
                let s = |v: &Vec<f64>| EmpiricalSample::from_values(v.clone()).unwrap();
                let d = |x: &Vec<f64>, y: &Vec<f64>| dudley_1d_with(&s(x), &s(y), &cfg).unwrap().value;
                let (ab, ba, bc, ac) = (d(&a, &b), d(&b, &a), d(&b, &c), d(&a, &c));
                prop_assert!((0.0..=2.0).contains(&ab));
                prop_assert!((ab - ba).abs() < 1e-12);
                prop_assert!(ac <= ab + bc + 1e-9);
                prop_assert!(d(&a, &a) < 1e-12);
            }

            #[test]
            fn dudley_below_coupling_bound(pairs in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 2..40)) {
                let cfg = MetricConfig::default().without_bootstrap();
                let (x, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
                let bound = pairs.iter().map(|(a, b)| (a - b).abs()).sum::<f64>() / pairs.len() as f64;
                let d = dudley_1d_with(&EmpiricalSample::from_values(x).unwrap(), &EmpiricalSample::from_values(y).unwrap(), &cfg).unwrap().value;
                prop_assert!(d <= bound + 1e-9);
            }

            #[test]
            fn ks_in_unit_interval(a in sample_strategy(), b in sample_strategy()) {
                let s = |v: &Vec<f64>| EmpiricalSample::from_values(v.clone()).unwrap();
                let cfg = MetricConfig::default().without_bootstrap();
                let v = ks_distance_with(&s(&a), KsReference::Sample(&s(&b)), &cfg).unwrap().value;
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
