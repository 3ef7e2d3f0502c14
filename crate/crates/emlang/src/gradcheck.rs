//! Finite-difference utilities for verifying analytic gradients.

use crate::fmath;

/// Central finite difference of `f` at `x` with step `h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative discrepancy with an absolute floor: `|a−b| / max(|a|, |b|)` when
/// either magnitude exceeds `floor`, else the absolute difference itself.
pub fn discrepancy(a: f64, b: f64, floor: f64) -> f64 {
    let mag = fmath::abs(a).max(fmath::abs(b));
    if mag > floor {
        fmath::abs(a - b) / mag
    } else {
        fmath::abs(a - b)
    }
}

/// Asserts `|a−b| ≤ rtol·max(|a|,|b|) + atol`.
#[track_caller]
pub fn assert_close(a: f64, b: f64, rtol: f64, atol: f64) {
    let tol = rtol * fmath::abs(a).max(fmath::abs(b)) + atol;
    assert!(
        fmath::abs(a - b) <= tol,
        "values differ: {a} vs {b} (|diff| = {}, tol = {tol})",
        fmath::abs(a - b),
    );
}

/// Result of comparing an analytic gradient against finite differences.
#[derive(Debug, Clone, Copy)]
pub struct GradComparison {
    pub max_discrepancy: f64,
    pub worst_index: usize,
}

/// Compares two gradient vectors entry-wise with [`discrepancy`].
pub fn compare_gradients(analytic: &[f64], numeric: &[f64], floor: f64) -> GradComparison {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = GradComparison {
        max_discrepancy: 0.0,
        worst_index: 0,
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let d = discrepancy(a, n, floor);
        if d > worst.max_discrepancy {
            worst.max_discrepancy = d;
            worst.worst_index = i;
        }
    }
    worst
}
