//! Cross-module checks through the public API.

use proptest::prelude::*;

use uniform_delta::metrics::dudley_1d;
use uniform_delta::remainder::{scan, CellMask};
use uniform_delta::{builtin, compile_phi, delta, delta_analytic, EmpiricalSample, GridSpec};

#[test]
fn parsed_maps_match_builtins() {
    for (name, src) in [("reciprocal", "1/t1"), ("square", "t1^2"), ("sqrt", "sqrt(t1)")] {
        let parsed = compile_phi(&[src]).unwrap();
        for (t, m) in [(0.7, 1.3), (2.0, 0.4), (1.1, 1.0)] {
            let a = delta(&parsed, &[t], &[m]).unwrap();
            let b = delta_analytic(name, &[t], &[m]).unwrap();
            assert!((a - b).abs() <= 1e-6 * b.max(1.0), "{name} at ({t}, {m}): {a} vs {b}");
        }
    }
}

#[test]
fn scan_cells_equal_pointwise_delta() {
    let phi = builtin("reciprocal").unwrap();
    let grid = GridSpec::linear(0.5, 2.0, 7).unwrap();
    let field = scan(&phi, &grid, &grid).unwrap();
    let points = grid.points();
    for (i, t) in points.iter().enumerate() {
        for (j, m) in points.iter().enumerate() {
            let (v, mask) = field.get(i, j);
            if i == j {
                assert_eq!(mask, CellMask::Degenerate);
            } else {
                assert_eq!(mask, CellMask::Valid);
                assert_eq!(v, delta(&phi, t, m).unwrap());
            }
        }
    }
}

proptest! {
    #[test]
    fn delta_is_invariant_to_rescaling(t in 0.2f64..3.0, m in 0.2f64..3.0, c in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0]) {
        prop_assume!((t - m).abs() > 1e-3);
        let phi = builtin("reciprocal").unwrap();
        let a = delta(&phi, &[t], &[m]).unwrap();
        let b = delta(&phi.scaled(c), &[t], &[m]).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn dudley_shift_is_bounded_by_the_shift(xs in prop::collection::vec(-3.0f64..3.0, 2..40), s in -2.0f64..2.0) {
        let p = EmpiricalSample::from_values(xs.clone()).unwrap();
        let q = EmpiricalSample::from_values(xs.iter().map(|x| x + s).collect()).unwrap();
        let d = dudley_1d(&p, &q).unwrap().value;
        let r = dudley_1d(&q, &p).unwrap().value;
        prop_assert!(d <= s.abs() + 1e-9);
        prop_assert!((d - r).abs() <= 1e-9);
    }
}
