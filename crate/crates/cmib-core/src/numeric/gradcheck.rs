/// Central-difference gradient of a scalar function of a flat parameter
/// vector: `g_i = (f(p + h e_i) - f(p - h e_i)) / (2h)`.
pub fn central_difference<F>(f: &mut F, params: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let p0 = work[i];
        work[i] = p0 + h;
        let up = f(&work);
        work[i] = p0 - h;
        let down = f(&work);
        work[i] = p0;
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Relative error between an analytic and a numeric gradient coordinate. The
/// denominator floor keeps finite-difference noise on near-zero coordinates
/// from registering as disagreement.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-4)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_gradient_of_polynomial() {
        // f = p0^2 + 3 p0 p1 + sin(p1)
        let f = |p: &[f64]| p[0] * p[0] + 3.0 * p[0] * p[1] + p[1].sin();
        let p = [0.7, -0.4];
        let mut f = f;
        let g = central_difference(&mut f, &p, 1e-5);
        let exact = [2.0 * p[0] + 3.0 * p[1], 3.0 * p[0] + p[1].cos()];
        assert!(max_relative_error(&exact, &g) < 1e-9);
    }

    #[test]
    fn relative_error_floor_tolerates_tiny_coordinates() {
        assert!(relative_error(1e-9, 3e-9) < 1e-4);
        assert!(relative_error(0.5, 0.6) > 1e-2);
    }
}
