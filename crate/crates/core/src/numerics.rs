use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::gamma::gamma_ur;

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn chi2_quantile(df: f64, p: f64) -> f64 {
    ChiSquared::new(df).expect("positive df").inverse_cdf(p)
}

/// P(χ²_df(λ) > x) as a Poisson(λ/2) mixture of central tails, summed
/// outward from the mode until the weights are negligible.
pub fn noncentral_chi2_sf(df: f64, lambda: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let tail = |k: f64| gamma_ur(df / 2.0 + k, x / 2.0);
    if lambda <= 0.0 {
        return tail(0.0);
    }
    let h = lambda / 2.0;
    let mode = h.floor();
    let log_w = |k: f64| -h + k * h.ln() - statrs::function::gamma::ln_gamma(k + 1.0);
    let mut total = 0.0;
    let mut mass = 0.0;
    let mut k = mode;
    loop {
        let w = log_w(k).exp();
        total += w * tail(k);
        mass += w;
        if (w < 1e-17 && k > mode) || k > mode + 50.0 + 40.0 * h.sqrt() {
            break;
        }
        k += 1.0;
    }
    let mut k = mode - 1.0;
    while k >= 0.0 {
        let w = log_w(k).exp();
        total += w * tail(k);
        mass += w;
        if w < 1e-17 {
            break;
        }
        k -= 1.0;
    }
    (total / mass.max(f64::MIN_POSITIVE)).clamp(0.0, 1.0)
}

/// Ordinary least squares of y on x; returns (slope, intercept, slope stderr, r²).
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let se = if n > 2.0 { (sse / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    (slope, intercept, se, r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn central_case_matches_statrs() {
        let c = ChiSquared::new(7.0).unwrap();
        for x in [0.5, 3.0, 7.0, 15.0] {
            assert!((noncentral_chi2_sf(7.0, 0.0, x) - (1.0 - c.cdf(x))).abs() < 1e-12);
        }
    }

    #[test]
    fn noncentral_matches_monte_carlo() {
        let mut r = rng::stream(17, &[]);
        for &(df, lambda, x) in &[(4usize, 3.0f64, 6.0), (16, 40.0, 50.0), (1, 0.5, 1.0), (64, 200.0, 250.0)] {
            let reps = 200_000;
            let shift = lambda.sqrt();
            let hits = (0..reps)
                .filter(|_| {
                    let mut s = 0.0;
                    for i in 0..df {
                        let z: f64 = StandardNormal.sample(&mut r);
                        let v = if i == 0 { z + shift } else { z };
                        s += v * v;
                    }
                    s > x
                })
                .count();
            let p_mc = hits as f64 / reps as f64;
            let p = noncentral_chi2_sf(df as f64, lambda, x);
            let se = (p * (1.0 - p) / reps as f64).sqrt();
            assert!((p - p_mc).abs() < 4.0 * se + 1e-6, "{df} {lambda} {x}: {p} vs {p_mc}");
        }
    }

    #[test]
    fn ols_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|a| 2.0 - 0.5 * a).collect();
        let (s, i, _, r2) = ols(&x, &y);
        assert!((s + 0.5).abs() < 1e-12 && (i - 2.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
