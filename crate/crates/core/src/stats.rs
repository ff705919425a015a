//! Statistical test helpers: Kolmogorov-Smirnov machinery and the
//! empirical-CDF sup error used by the distribution-free coverage checks.

/// Two-sided KS statistic of `samples` against a reference CDF. Sorts the
/// slice in place.
pub fn ks_statistic_sorted(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    assert!(!samples.is_empty());
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        let upper = (i + 1) as f64 / n - f;
        let lower = f - i as f64 / n;
        d = d.max(upper).max(lower);
    }
    d
}

/// Asymptotic two-sided KS critical value at significance `alpha`:
/// `sqrt(-ln(alpha/2)/2) / sqrt(n)`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    assert!(n >= 100, "asymptotic critical value needs large n");
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Sup-norm distance between the tie-averaged empirical CDF of `sorted`
/// (the empirical calibration function) and the uniform CDF on `[0, 1]`.
/// The supremum over the continuum is attained at the one-sided limits
/// around the sample points.
pub fn calibration_sup_error_uniform(sorted: &[f64]) -> f64 {
    let k = sorted.len() as f64;
    let mut sup = 0.0f64;
    for (i, &z) in sorted.iter().enumerate() {
        sup = sup.max((i as f64 / k - z).abs());
        sup = sup.max(((i + 1) as f64 / k - z).abs());
    }
    sup
}
