//! Trapezoidal rules on uniform grids.

/// Composite trapezoidal rule for nodes spaced `h` apart.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values {
        [] | [_] => 0.0,
        [first, inner @ .., last] => h * (0.5 * (first + last) + inner.iter().sum::<f64>()),
    }
}

/// Running trapezoidal integral: `out[k]` integrates `values[0..=k]`.
pub fn cumulative_trapezoid(values: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            acc += 0.5 * h * (values[k - 1] + v);
        }
        out.push(acc);
    }
    out
}

/// Trapezoidal rule for the pointwise product of two grid functions.
pub fn trapezoid_product(a: &[f64], b: &[f64], h: f64) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    match a.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = (1..n - 1).map(|k| a[k] * b[k]).sum();
            h * (0.5 * (a[0] * b[0] + a[n - 1] * b[n - 1]) + inner)
        }
    }
}
