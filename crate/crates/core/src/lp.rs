//! Linear programs behind the empirical Dudley distance.
//!
//! [`chain_lp`] solves
//!
//! ```text
//! max sum_i w_i h_i   s.t.  |h_i| <= 1,  |h_{i+1} - h_i| <= x_{i+1} - x_i
//! ```
//!
//! exactly by a dynamic program over concave piecewise-linear value
//! functions. [`simplex_max`] is a small dense tableau simplex that solves
//! the same program from its generic form.

use crate::error::{Error, Result};

/// Concave piecewise-linear function on `[-1, 1]` given by its breakpoints.
type Pieces = Vec<(f64, f64)>;

fn interpolate(pts: &[(f64, f64)], v: f64) -> f64 {
    let k = pts.partition_point(|p| p.0 < v);
    if k == 0 {
        return pts[0].1;
    }
    if k == pts.len() {
        return pts[k - 1].1;
    }
    let (a, b) = (pts[k - 1], pts[k]);
    if b.0 == a.0 {
        return a.1.max(b.1);
    }
    a.1 + (b.1 - a.1) * (v - a.0) / (b.0 - a.0)
}

fn argmax(pts: &[(f64, f64)]) -> usize {
    pts.iter()
        .enumerate()
        .fold(0, |best, (i, p)| if p.1 > pts[best].1 { i } else { best })
}

/// Optimal value of the chain program. `x` must be strictly increasing and
/// `w` of the same length.
pub fn chain_lp(x: &[f64], w: &[f64]) -> Result<f64> {
    if x.len() != w.len() {
        return Err(Error::Dimension(format!(
            "chain program: {} support points but {} weights",
            x.len(),
            w.len()
        )));
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    if x.windows(2).any(|p| !(p[1] > p[0])) {
        return Err(Error::InvalidArgument("support must be strictly increasing".into()));
    }
    let mut f: Pieces = vec![(-1.0, -w[0]), (1.0, w[0])];
    for i in 1..x.len() {
        let gap = x[i] - x[i - 1];
        let top = argmax(&f);
        // sup over the window |u - v| <= gap: left part slides left, right part slides right
        let mut moved: Pieces = Vec::with_capacity(f.len() + 1);
        moved.extend(f[..=top].iter().map(|&(v, y)| (v - gap, y)));
        moved.extend(f[top..].iter().map(|&(v, y)| (v + gap, y)));
        let mut next: Pieces = Vec::with_capacity(moved.len() + 2);
        next.push((-1.0, interpolate(&moved, -1.0)));
        next.extend(moved.iter().copied().filter(|p| p.0 > -1.0 && p.0 < 1.0));
        next.push((1.0, interpolate(&moved, 1.0)));
        next.dedup_by(|b, a| {
            if b.0 == a.0 {
                a.1 = a.1.max(b.1);
                true
            } else {
                false
            }
        });
        for p in &mut next {
            p.1 += w[i] * p.0;
        }
        f = next;
    }
    Ok(f.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max))
}

const PIVOT_TOL: f64 = 1e-12;

/// Solves `max c'x  s.t.  A x <= b, x >= 0` with `b >= 0`, so the origin is
/// feasible. Bland's rule rules out cycling. Returns the value and a
/// maximizer.
pub fn simplex_max(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (m, n) = (a.len(), c.len());
    if b.len() != m || a.iter().any(|row| row.len() != n) {
        return Err(Error::Dimension("constraint matrix does not match b and c".into()));
    }
    if b.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument("simplex needs b >= 0".into()));
    }
    // tableau rows: [A | I | b], objective row: [-c | 0 | 0]
    let width = n + m + 1;
    let mut tab: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut row = vec![0.0; width];
            row[..n].copy_from_slice(&a[i]);
            row[n + i] = 1.0;
            row[width - 1] = b[i];
            row
        })
        .collect();
    let mut obj = vec![0.0; width];
    for j in 0..n {
        obj[j] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    loop {
        let Some(enter) = (0..n + m).find(|&j| obj[j] < -PIVOT_TOL) else {
            break;
        };
        let mut leave: Option<(f64, usize)> = None;
        for i in 0..m {
            let coef = tab[i][enter];
            if coef > PIVOT_TOL {
                let ratio = tab[i][width - 1] / coef;
                match leave {
                    Some((r, _)) if ratio > r + PIVOT_TOL => {}
                    Some((r, li)) if (ratio - r).abs() <= PIVOT_TOL && basis[i] >= basis[li] => {}
                    _ => leave = Some((ratio, i)),
                }
            }
        }
        let Some((_, row)) = leave else {
            return Err(Error::OptimFail("linear program is unbounded".into()));
        };
        let pivot = tab[row][enter];
        for v in &mut tab[row] {
            *v /= pivot;
        }
        let pivot_row = tab[row].clone();
        for (i, r) in tab.iter_mut().enumerate() {
            if i != row && r[enter] != 0.0 {
                let factor = r[enter];
                for (v, p) in r.iter_mut().zip(&pivot_row) {
                    *v -= factor * p;
                }
            }
        }
        let factor = obj[enter];
        for (v, p) in obj.iter_mut().zip(&pivot_row) {
            *v -= factor * p;
        }
        basis[row] = enter;
    }

    let mut x = vec![0.0; n];
    for (i, &j) in basis.iter().enumerate() {
        if j < n {
            x[j] = tab[i][width - 1];
        }
    }
    Ok((obj[width - 1], x))
}

/// The chain program in generic simplex form, via `u = h + 1 in [0, 2]`.
pub fn chain_lp_simplex(x: &[f64], w: &[f64]) -> Result<f64> {
    let k = x.len();
    if w.len() != k {
        return Err(Error::Dimension("support and weights differ in length".into()));
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..k {
        let mut row = vec![0.0; k];
        row[i] = 1.0;
        a.push(row);
        b.push(2.0);
    }
    for i in 0..k.saturating_sub(1) {
        let gap = x[i + 1] - x[i];
        let mut up = vec![0.0; k];
        up[i + 1] = 1.0;
        up[i] = -1.0;
        let down: Vec<f64> = up.iter().map(|v| -v).collect();
        a.push(up);
        a.push(down);
        b.push(gap);
        b.push(gap);
    }
    let (value, _) = simplex_max(&a, &b, w)?;
    Ok(value - w.iter().sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive search over h on a lattice of step `1/steps`.
    fn brute_force(x: &[f64], w: &[f64], steps: i32) -> f64 {
        let levels: Vec<f64> = (-steps..=steps).map(|i| i as f64 / steps as f64).collect();
        let mut best = f64::NEG_INFINITY;
        let mut h = vec![0usize; x.len()];
        loop {
            let feasible = (1..x.len())
                .all(|i| (levels[h[i]] - levels[h[i - 1]]).abs() <= x[i] - x[i - 1] + 1e-12);
            if feasible {
                best = best.max(h.iter().zip(w).map(|(&j, wi)| levels[j] * wi).sum());
            }
            let mut k = 0;
            loop {
                if k == h.len() {
                    return best;
                }
                h[k] += 1;
                if h[k] < levels.len() {
                    break;
                }
                h[k] = 0;
                k += 1;
            }
        }
    }

    #[test]
    fn atom_pairs() {
        assert_eq!(chain_lp(&[0.0], &[0.0]).unwrap(), 0.0);
        assert!((chain_lp(&[0.0, 3.0], &[1.0, -1.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!((chain_lp(&[0.0, 0.5], &[1.0, -1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((brute_force(&[0.0, 0.5], &[1.0, -1.0], 40) - 0.5).abs() < 1e-12);
        assert!((brute_force(&[0.0, 3.0], &[1.0, -1.0], 40) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn simplex_small_program() {
        // max 3x + 2y s.t. x + y <= 4, x + 3y <= 6, x <= 3
        let a = vec![vec![1.0, 1.0], vec![1.0, 3.0], vec![1.0, 0.0]];
        let (v, x) = simplex_max(&a, &[4.0, 6.0, 3.0], &[3.0, 2.0]).unwrap();
        assert!((v - 11.0).abs() < 1e-12);
        assert!((x[0] - 3.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
        let unbounded = simplex_max(&[vec![1.0, -1.0]], &[1.0], &[0.0, 1.0]);
        assert!(matches!(unbounded, Err(Error::OptimFail(_))));
    }

    #[test]
    fn chain_matches_brute_force_on_small_supports() {
        let cases: [(&[f64], &[f64]); 3] = [
            (&[0.0, 0.25, 0.75, 1.0], &[0.5, -0.25, 0.25, -0.5]),
            (&[0.0, 0.5, 1.0], &[-0.5, 1.0, -0.5]),
            (&[-1.0, -0.5, 2.0], &[0.25, 0.25, -0.5]),
        ];
        for (x, w) in cases {
            let dp = chain_lp(x, w).unwrap();
            assert!((dp - brute_force(x, w, 8)).abs() < 1e-12, "{x:?}");
            assert!((dp - chain_lp_simplex(x, w).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_unsorted_support() {
        assert!(chain_lp(&[1.0, 0.0], &[0.5, -0.5]).is_err());
        assert!(chain_lp(&[0.0, 0.0], &[0.5, -0.5]).is_err());
    }

    proptest! {
        #[test]
        fn dynamic_program_agrees_with_simplex(
            gaps in proptest::collection::vec(0.001f64..1.5, 1..40),
            raw in proptest::collection::vec(-1.0f64..1.0, 41),
        ) {
            let mut x = vec![0.0];
            for g in &gaps {
                x.push(x.last().unwrap() + g);
            }
            let mut w: Vec<f64> = raw[..x.len()].to_vec();
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            for v in &mut w {
                *v -= mean;
            }
            let dp = chain_lp(&x, &w).unwrap();
            let lp = chain_lp_simplex(&x, &w).unwrap();
            prop_assert!((dp - lp).abs() <= 1e-9 * (1.0 + lp.abs()), "dp {} lp {}", dp, lp);
        }
    }
}
