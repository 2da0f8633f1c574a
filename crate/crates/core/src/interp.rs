//! Piecewise-quadratic interpolation through the three nearest nodes.

/// Indices of the three nodes nearest to `x` in the sorted slice `xs`
/// (the first or last three near the ends). Requires `xs.len() >= 3`.
pub fn stencil(xs: &[f64], x: f64) -> usize {
    let n = xs.len();
    debug_assert!(n >= 3);
    let j = xs.partition_point(|&p| p < x);
    let nearest = if j == 0 {
        0
    } else if j == n {
        n - 1
    } else if x - xs[j - 1] <= xs[j] - x {
        j - 1
    } else {
        j
    };
    nearest.saturating_sub(1).min(n - 3)
}

/// Lagrange quadratic through `(xs[s..s+3], ys[s..s+3])` evaluated at `x`.
pub fn quadratic(xs: &[f64], ys: &[f64], s: usize, x: f64) -> f64 {
    let (x0, x1, x2) = (xs[s], xs[s + 1], xs[s + 2]);
    let (y0, y1, y2) = (ys[s], ys[s + 1], ys[s + 2]);
    y0 * (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2))
        + y1 * (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2))
        + y2 * (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1))
}

/// Lagrange basis values at `x` for the stencil starting at `s`.
pub fn basis(xs: &[f64], s: usize, x: f64) -> [f64; 3] {
    let (x0, x1, x2) = (xs[s], xs[s + 1], xs[s + 2]);
    [
        (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2)),
        (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2)),
        (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1)),
    ]
}

/// Piecewise-quadratic interpolant; extrapolates with the end stencils.
pub fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    match xs.len() {
        0 => f64::NAN,
        1 => ys[0],
        2 => ys[0] + (ys[1] - ys[0]) * (x - xs[0]) / (xs[1] - xs[0]),
        _ => quadratic(xs, ys, stencil(xs, x), x),
    }
}
