//! Small numeric helpers shared by tests and the harness.

/// Least-squares slope of `y` against `x`.
pub fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Log-log slope of `values` against `steps`.
pub fn loglog_slope(steps: &[f64], values: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = steps
        .iter()
        .zip(values)
        .map(|(s, v)| (s.ln(), v.ln()))
        .collect();
    least_squares_slope(&pts)
}

/// Observed orders between consecutive refinements, `log(e_i/e_{i+1}) / log(h_i/h_{i+1})`.
pub fn observed_orders(steps: &[f64], errors: &[f64]) -> Vec<f64> {
    steps
        .windows(2)
        .zip(errors.windows(2))
        .map(|(h, e)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect()
}
