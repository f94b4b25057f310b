//! Local (ε,δ)-DP mechanisms. Privacy is required for every pair of whole
//! local inputs x, x′, so sensitivities are diameters of the clipped domain.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpParams {
    pub epsilon: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_clip")]
    pub clip_bound: f64,
}

fn default_clip() -> f64 {
    1.0
}

impl DpParams {
    pub fn new(epsilon: f64, delta: f64, clip_bound: f64) -> Result<Self> {
        let p = DpParams {
            epsilon,
            delta,
            clip_bound,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return invalid(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return invalid(format!("delta must lie in [0, 1), got {}", self.delta));
        }
        if !(self.clip_bound.is_finite() && self.clip_bound > 0.0) {
            return invalid(format!("clip_bound must be positive, got {}", self.clip_bound));
        }
        Ok(())
    }

    /// ε ≤ 1, the regime the rates are stated for.
    pub fn in_rate_regime(&self) -> bool {
        self.epsilon <= 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Laplace,
    Gaussian,
    RandomizedResponse,
}

impl Mechanism {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "laplace" => Ok(Mechanism::Laplace),
            "gaussian" => Ok(Mechanism::Gaussian),
            "randomized_response" => Ok(Mechanism::RandomizedResponse),
            other => Err(Error::Unregistered(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::Laplace => "laplace",
            Mechanism::Gaussian => "gaussian",
            Mechanism::RandomizedResponse => "randomized_response",
        }
    }

    /// The additive mechanism selected by δ.
    pub fn additive_for(p: &DpParams) -> Self {
        if p.delta == 0.0 {
            Mechanism::Laplace
        } else {
            Mechanism::Gaussian
        }
    }
}

/// Per-coordinate Laplace scale, 2·c·d/ε.
pub fn laplace_scale(p: &DpParams, d: usize) -> f64 {
    2.0 * p.clip_bound * d as f64 / p.epsilon
}

/// Per-coordinate Gaussian scale, 2·c·√d·√(2 ln(1.25/δ))/ε.
pub fn gaussian_scale(p: &DpParams, d: usize) -> f64 {
    2.0 * p.clip_bound * (d as f64).sqrt() * (2.0 * (1.25 / p.delta).ln()).sqrt() / p.epsilon
}

pub fn clip(v: &[f64], c: f64) -> Vec<f64> {
    v.iter().map(|x| x.clamp(-c, c)).collect()
}

/// Clip, then add Laplace (δ = 0) or Gaussian (δ > 0) noise.
pub fn privatize<R: Rng + ?Sized>(v: &[f64], p: &DpParams, rng: &mut R) -> Result<(Vec<f64>, Mechanism)> {
    p.validate()?;
    let d = v.len();
    let mech = Mechanism::additive_for(p);
    let mut out = clip(v, p.clip_bound);
    match mech {
        Mechanism::Laplace => {
            let s = laplace_scale(p, d);
            for x in out.iter_mut() {
                let e: f64 = Exp1.sample(rng);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                *x += sign * s * e;
            }
        }
        _ => {
            let s = gaussian_scale(p, d);
            for x in out.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *x += s * z;
            }
        }
    }
    Ok((out, mech))
}

/// Probability that randomized response reports the true bit.
pub fn rr_keep_probability(epsilon: f64) -> f64 {
    1.0 / (1.0 + (-epsilon).exp())
}

pub fn randomized_response<R: Rng + ?Sized>(bit: bool, epsilon: f64, rng: &mut R) -> bool {
    if rng.random::<f64>() < rr_keep_probability(epsilon) {
        bit
    } else {
        !bit
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Exact δ(ε) of the Gaussian mechanism with L2 sensitivity `sens` and scale `sigma`.
pub fn gaussian_delta_profile(epsilon: f64, sens: f64, sigma: f64) -> f64 {
    if sens == 0.0 {
        return 0.0;
    }
    let a = sens / (2.0 * sigma);
    let b = epsilon * sigma / sens;
    (std_normal_cdf(a - b) - epsilon.exp() * std_normal_cdf(-a - b)).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DpReport {
    pub mechanism: Mechanism,
    pub epsilon: f64,
    pub delta: f64,
    /// Largest density ratio p(y|x)/p(y|x′) over the supplied grid.
    pub grid_max_ratio: f64,
    /// Closed-form supremum of the density ratio (infinite for the Gaussian mechanism).
    pub analytic_ratio: f64,
    /// δ needed at the stated ε, computed in closed form.
    pub delta_required: f64,
    pub certified: bool,
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Analytic certificate for one pair of inputs. `grid` holds output points y.
pub fn verify_dp(mech: Mechanism, p: &DpParams, x: &[f64], x_prime: &[f64], grid: &[Vec<f64>]) -> Result<DpReport> {
    p.validate()?;
    if x.len() != x_prime.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: x_prime.len(),
        });
    }
    let d = x.len();
    let tol = 1e-12;
    match mech {
        Mechanism::Laplace | Mechanism::Gaussian => {
            let c = p.clip_bound;
            if x.iter().chain(x_prime).any(|v| v.abs() > c) {
                return invalid("inputs must lie in the clipped domain");
            }
            if let Some(y) = grid.iter().find(|y| y.len() != d) {
                return Err(Error::Dimension {
                    expected: d,
                    got: y.len(),
                });
            }
            if mech == Mechanism::Laplace {
                let s = laplace_scale(p, d);
                let grid_max = grid
                    .iter()
                    .map(|y| ((l1(y, x_prime) - l1(y, x)) / s).exp())
                    .fold(1.0f64, f64::max);
                let analytic = (l1(x, x_prime) / s).exp();
                let bound = p.epsilon.exp();
                Ok(DpReport {
                    mechanism: mech,
                    epsilon: p.epsilon,
                    delta: p.delta,
                    grid_max_ratio: grid_max,
                    analytic_ratio: analytic,
                    delta_required: 0.0,
                    certified: analytic <= bound * (1.0 + tol) && grid_max <= analytic * (1.0 + tol),
                })
            } else {
                if p.delta == 0.0 {
                    return invalid("the Gaussian mechanism needs delta > 0");
                }
                let s = gaussian_scale(p, d);
                let grid_max = grid
                    .iter()
                    .map(|y| {
                        let num: f64 = y.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
                        let den: f64 = y.iter().zip(x_prime).map(|(a, b)| (a - b).powi(2)).sum();
                        ((den - num) / (2.0 * s * s)).exp()
                    })
                    .fold(1.0f64, f64::max);
                let need = gaussian_delta_profile(p.epsilon, l2(x, x_prime), s);
                Ok(DpReport {
                    mechanism: mech,
                    epsilon: p.epsilon,
                    delta: p.delta,
                    grid_max_ratio: grid_max,
                    analytic_ratio: if l2(x, x_prime) == 0.0 { 1.0 } else { f64::INFINITY },
                    delta_required: need,
                    certified: need <= p.delta + tol,
                })
            }
        }
        Mechanism::RandomizedResponse => {
            if x.iter().chain(x_prime).any(|v| *v != 0.0 && *v != 1.0) {
                return invalid("randomized response takes bit inputs");
            }
            let keep = rr_keep_probability(p.epsilon);
            let prob = |y: bool, b: f64| if y == (b == 1.0) { keep } else { 1.0 - keep };
            let ratio_at = |y: bool| -> f64 {
                x.iter()
                    .zip(x_prime)
                    .map(|(a, b)| prob(y, *a) / prob(y, *b))
                    .product()
            };
            let grid_max = [false, true].iter().map(|&y| ratio_at(y)).fold(1.0f64, f64::max);
            let bound = (p.epsilon * d as f64).exp();
            Ok(DpReport {
                mechanism: mech,
                epsilon: p.epsilon,
                delta: p.delta,
                grid_max_ratio: grid_max,
                analytic_ratio: grid_max,
                delta_required: 0.0,
                certified: grid_max <= bound * (1.0 + tol),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn scales_are_monotone() {
        let d = 6;
        let mut prev = f64::INFINITY;
        for eps in [0.1, 0.3, 1.0, 3.0, 10.0] {
            let s = laplace_scale(&DpParams::new(eps, 0.0, 1.0).unwrap(), d);
            assert!(s < prev);
            prev = s;
        }
        let a = gaussian_scale(&DpParams::new(0.5, 1e-5, 1.0).unwrap(), d);
        let b = gaussian_scale(&DpParams::new(0.5, 1e-5, 2.0).unwrap(), d);
        assert!(b > a);
        assert!((laplace_scale(&DpParams::new(1.0, 0.0, 0.5).unwrap(), 4) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn clipping_inside_domain_is_identity() {
        let v = [0.3, -0.9, 1.0];
        assert_eq!(clip(&v, 1.0), v.to_vec());
    }

    #[test]
    fn laplace_ratio_on_grid_one_dimensional() {
        let p = DpParams::new(1.0, 0.0, 1.0).unwrap();
        let grid: Vec<Vec<f64>> = (0..1000).map(|i| vec![-10.0 + 20.0 * i as f64 / 999.0]).collect();
        let r = verify_dp(Mechanism::Laplace, &p, &[1.0], &[-1.0], &grid).unwrap();
        assert!(r.certified);
        assert!(r.grid_max_ratio <= 1f64.exp() * (1.0 + 1e-12));
        assert!((r.analytic_ratio - 1f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn identical_inputs_give_ratio_one() {
        let p = DpParams::new(0.7, 0.0, 1.0).unwrap();
        let grid = vec![vec![0.2, 5.0], vec![-3.0, 1.0]];
        let r = verify_dp(Mechanism::Laplace, &p, &[0.1, 0.2], &[0.1, 0.2], &grid).unwrap();
        assert_eq!(r.grid_max_ratio, 1.0);
        let g = DpParams::new(0.7, 1e-4, 1.0).unwrap();
        let r = verify_dp(Mechanism::Gaussian, &g, &[0.1, 0.2], &[0.1, 0.2], &grid).unwrap();
        assert_eq!(r.delta_required, 0.0);
    }

    #[test]
    fn gaussian_certificate_at_extreme_pair() {
        for &(eps, delta, d) in &[(0.5, 1e-5, 4usize), (1.0, 1e-3, 1), (0.1, 1e-6, 16)] {
            let p = DpParams::new(eps, delta, 1.0).unwrap();
            let x = vec![1.0; d];
            let y = vec![-1.0; d];
            let r = verify_dp(Mechanism::Gaussian, &p, &x, &y, &[]).unwrap();
            assert!(r.certified, "{eps} {delta} {d}: {}", r.delta_required);
        }
    }

    #[test]
    fn delta_profile_oracle() {
        // sens = σ = 1: δ(0) = 2Φ(1/2) − 1
        let v = gaussian_delta_profile(0.0, 1.0, 1.0);
        let want = 2.0 * std_normal_cdf(0.5) - 1.0;
        assert!((v - want).abs() < 1e-14);
    }

    #[test]
    fn rr_ratio_is_exactly_exp_epsilon() {
        let p = DpParams::new(0.8, 0.0, 1.0).unwrap();
        let r = verify_dp(Mechanism::RandomizedResponse, &p, &[1.0], &[0.0], &[]).unwrap();
        assert!((r.grid_max_ratio - 0.8f64.exp()).abs() < 1e-12);
        assert!(r.certified);
    }

    #[test]
    fn rr_flip_frequency() {
        let mut r = rng::stream(5, &[]);
        let reps = 100_000;
        let kept = (0..reps).filter(|_| randomized_response(true, 1.0, &mut r)).count();
        let p = rr_keep_probability(1.0);
        let se = (p * (1.0 - p) / reps as f64).sqrt();
        assert!((kept as f64 / reps as f64 - p).abs() < 4.0 * se);
    }

    #[test]
    fn errors() {
        assert!(DpParams::new(0.0, 0.0, 1.0).is_err());
        assert!(DpParams::new(1.0, 1.0, 1.0).is_err());
        assert!(matches!(Mechanism::from_name("exponential"), Err(Error::Unregistered(_))));
        let p = DpParams::new(1.0, 0.0, 1.0).unwrap();
        assert!(verify_dp(Mechanism::Laplace, &p, &[2.0], &[0.0], &[]).is_err());
    }
}
