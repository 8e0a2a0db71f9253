//! Small statistics kit: moments, least squares, normal CDF, and
//! Kolmogorov-Smirnov distances. Everything here is an oracle-grade utility
//! used by the validation harnesses, so it stays dependency-free and exact
//! about its conventions.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n - 1 denominator).
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Mean square (population second moment about zero).
pub fn mean_square(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64
}

/// Standard error of the sample mean.
pub fn stderr_of_mean(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Ordinary least squares y = slope*x + intercept.
#[derive(Clone, Copy, Debug)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LineFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    if x.len() < 2 {
        return LineFit { slope: 0.0, intercept: y.first().copied().unwrap_or(0.0), r_squared: 0.0 };
    }
    let mx = mean(x);
    let my = mean(y);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return LineFit { slope: 0.0, intercept: my, r_squared: 0.0 };
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 {
        1.0 // constant data is fit perfectly by the constant line
    } else {
        let ss_res = syy - slope * sxy;
        1.0 - ss_res / syy * n / n
    };
    LineFit { slope, intercept: my - slope * mx, r_squared }
}

/// erf via the Abramowitz-Stegun 7.1.26 rational approximation,
/// |error| <= 1.5e-7. Plenty for KS distances quoted to three digits.
pub fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Two-sided KS distance between a sample and a reference CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in KS sample"));
    let n = sorted.len() as f64;
    let mut sup: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        sup = sup.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    sup
}

pub fn ks_vs_standard_normal(sample: &[f64]) -> f64 {
    ks_statistic(sample, normal_cdf)
}

pub fn ks_vs_uniform(sample: &[f64]) -> f64 {
    ks_statistic(sample, |x| x.clamp(0.0, 1.0))
}

/// Asymptotic two-sided KS critical value: P(sqrt(n) D > c_alpha) = alpha.
/// alpha = 0.01 gives the familiar 1.628 / sqrt(n).
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    ((-0.5 * (alpha / 2.0).ln()).sqrt()) / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    #[test]
    fn fit_recovers_exact_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let fit = linear_fit(&x, &y);
        assert!((fit.slope - 3.0).abs() < 1e-12);
        assert!((fit.intercept + 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn erf_reference_values() {
        // Reference points from standard tables, at the approximation's
        // stated 1.5e-7 accuracy.
        assert!((erf(0.0)).abs() < 2e-7);
        assert!((erf(1.0) - 0.8427007929).abs() < 2e-7);
        assert!((erf(2.0) - 0.9953222650).abs() < 2e-7);
        assert!((erf(-1.0) + 0.8427007929).abs() < 2e-7);
        assert!((normal_cdf(1.96) - 0.9750021).abs() < 1e-5);
    }

    #[test]
    fn ks_critical_matches_tables() {
        // 1% two-sided asymptotic constant is 1.6276.
        let c = ks_critical_value(10_000, 0.01) * 100.0;
        assert!((c - 1.6276).abs() < 1e-3);
    }

    #[test]
    fn ks_of_normal_sample_is_small() {
        let rng = CounterRng::new(3);
        let sample: Vec<f64> = (0..10_000u64).map(|i| rng.normal_at(i)).collect();
        let d = ks_vs_standard_normal(&sample);
        assert!(d <= ks_critical_value(10_000, 0.01), "KS {d} too large");
    }

    #[test]
    fn ks_detects_shifted_sample() {
        let rng = CounterRng::new(4);
        let sample: Vec<f64> = (0..5_000u64).map(|i| rng.normal_at(i) + 0.2).collect();
        assert!(ks_vs_standard_normal(&sample) > ks_critical_value(5_000, 0.01));
    }
}
