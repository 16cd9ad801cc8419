//! Small numeric helpers shared across modules.

/// Logistic sigmoid, stable for large |x|.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + exp(x)) without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary cross-entropy of a probability against a {0,1} label, with the
/// probability clipped to [eps, 1-eps].
pub(crate) fn log_loss(label: f64, prob: f64, eps: f64) -> f64 {
    let p = prob.clamp(eps, 1.0 - eps);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// Mean and (population) standard deviation of a slice.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_extremes() {
        assert!(sigmoid(800.0) > 0.999_999);
        assert!(sigmoid(-800.0) < 1e-6);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for &x in &[-30.0, -2.5, 0.0, 1.0, 20.0] {
            let naive = (1.0 + f64::exp(x)).ln();
            assert!((softplus(x) - naive).abs() < 1e-12);
        }
        // no overflow for large inputs
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-9);
    }
}
