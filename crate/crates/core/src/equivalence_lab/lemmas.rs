//! Executable checks of the total-variation inequalities used to compare
//! experiments.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::measure::{apply_kernel, tv_exact, FiniteMeasure, KernelMatrix};
use crate::error::{invalid, Error, Result};
use crate::models::neumaier_sum;
use crate::numerics::normal_cdf;
use crate::rng;

pub const CHECK_TOL: f64 = 1e-12;

/// Largest product support enumerated by `check_product_bound`.
pub const PRODUCT_LIMIT: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DataProcessing {
    pub tv_before: f64,
    pub tv_after: f64,
    pub holds: bool,
}

pub fn check_data_processing(p: &FiniteMeasure, q: &FiniteMeasure, k: &KernelMatrix) -> Result<DataProcessing> {
    let tv_before = tv_exact(p, q)?;
    let tv_after = tv_exact(&apply_kernel(p, k)?, &apply_kernel(q, k)?)?;
    Ok(DataProcessing {
        tv_before,
        tv_after,
        holds: tv_after <= tv_before + CHECK_TOL,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProductBound {
    pub tv_product: f64,
    pub sum_tv: f64,
    pub holds: bool,
}

/// TV(⊗P_j, ⊗Q_j) by enumerating the product of the aligned supports.
pub fn product_tv(pairs: &[(FiniteMeasure, FiniteMeasure)]) -> Result<f64> {
    if pairs.is_empty() {
        return invalid("empty product");
    }
    let aligned: Vec<(Vec<f64>, Vec<f64>)> = pairs
        .iter()
        .map(|(p, q)| {
            p.require_probability()?;
            q.require_probability()?;
            let (_, a, b) = p.align(q);
            Ok((a, b))
        })
        .collect::<Result<_>>()?;
    let mut size: usize = 1;
    for (a, _) in &aligned {
        size = size
            .checked_mul(a.len())
            .filter(|s| *s <= PRODUCT_LIMIT)
            .ok_or_else(|| Error::TooLarge(format!("product support exceeds {PRODUCT_LIMIT} atoms")))?;
    }
    let mut idx = vec![0usize; aligned.len()];
    let mut terms = Vec::with_capacity(size);
    for _ in 0..size {
        let (mut pp, mut qq) = (1.0, 1.0);
        for (j, &i) in idx.iter().enumerate() {
            pp *= aligned[j].0[i];
            qq *= aligned[j].1[i];
        }
        terms.push((pp - qq).abs());
        for j in (0..idx.len()).rev() {
            idx[j] += 1;
            if idx[j] < aligned[j].0.len() {
                break;
            }
            idx[j] = 0;
        }
    }
    Ok(0.5 * neumaier_sum(terms))
}

pub fn check_product_bound(pairs: &[(FiniteMeasure, FiniteMeasure)]) -> Result<ProductBound> {
    let tv_product = product_tv(pairs)?;
    let sum_tv = neumaier_sum(pairs.iter().map(|(p, q)| tv_exact(p, q)).collect::<Result<Vec<_>>>()?);
    Ok(ProductBound {
        tv_product,
        sum_tv,
        holds: tv_product <= sum_tv + CHECK_TOL,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HellingerCheck {
    /// ½‖p − q‖₁.
    pub half_l1: f64,
    /// (Σ (√p − √q)²)^{1/2}.
    pub hellinger_rhs: f64,
    pub holds: bool,
}

pub fn hellinger_l1_check(p: &FiniteMeasure, q: &FiniteMeasure) -> Result<HellingerCheck> {
    let half_l1 = tv_exact(p, q)?;
    let (_, a, b) = p.align(q);
    let hellinger_rhs = neumaier_sum(a.iter().zip(&b).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2))).sqrt();
    Ok(HellingerCheck {
        half_l1,
        hellinger_rhs,
        holds: half_l1 <= hellinger_rhs + CHECK_TOL,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PinskerCheck {
    pub tv_mc: f64,
    pub mc_stderr: f64,
    /// √n ‖f − g‖₂ / (2σ).
    pub bound: f64,
    /// 2Φ(Δ/2) − 1 with Δ = √n ‖f − g‖₂ / σ.
    pub closed_form: f64,
    pub holds: bool,
}

/// n iid draws from N(f, σ² I) against N(g, σ² I). TV is estimated as
/// E_P (1 − dQ/dP)₊ with the likelihood ratio of the whole sample.
pub fn pinsker_gaussian_check(f: &[f64], g: &[f64], n: u64, sigma: f64, reps: usize, seed: u64) -> Result<PinskerCheck> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return invalid("sigma must be positive");
    }
    if f.len() != g.len() || f.is_empty() {
        return invalid("means must have the same positive length");
    }
    if n == 0 || reps < 2 {
        return invalid("need n ≥ 1 and at least two replicates");
    }
    let dist = f.iter().zip(g).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let bound = (n as f64).sqrt() * dist / (2.0 * sigma);
    let closed_form = 2.0 * normal_cdf((n as f64).sqrt() * dist / sigma / 2.0) - 1.0;
    let mut r = rng::stream(seed, &[]);
    let two_var = 2.0 * sigma * sigma;
    let vals: Vec<f64> = (0..reps)
        .map(|_| {
            let mut log_lr = 0.0;
            for _ in 0..n {
                for (a, b) in f.iter().zip(g) {
                    let x = a + sigma * r.sample::<f64, _>(StandardNormal);
                    log_lr += ((x - b).powi(2) - (x - a).powi(2)) / two_var;
                }
            }
            (1.0 - (-log_lr).exp()).max(0.0)
        })
        .collect();
    let mean = neumaier_sum(vals.iter().copied()) / reps as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let mc_stderr = (var / reps as f64).sqrt();
    Ok(PinskerCheck {
        tv_mc: mean,
        mc_stderr,
        bound,
        closed_form,
        holds: mean <= bound.min(1.0) + 3.0 * mc_stderr,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GaussianMaxReport {
    pub k: usize,
    /// Spectral norm ‖M‖.
    pub op_norm: f64,
    pub mean_max_abs: f64,
    pub mean_stderr: f64,
    /// 3‖M‖ √(log K ∨ log 2).
    pub stated_mean_bound: f64,
    /// 3√‖M‖ √(log K ∨ log 2).
    pub scaled_mean_bound: f64,
    pub x: f64,
    /// Frequency of max G_i² ≥ ‖M‖² x.
    pub stated_tail_freq: f64,
    /// Frequency of max G_i² ≥ ‖M‖ x.
    pub scaled_tail_freq: f64,
    /// 2K e^{−x/4}.
    pub tail_bound: f64,
    pub stated_holds: bool,
    pub scaled_holds: bool,
}

/// Monte Carlo check of the mean and tail bounds for the maximum of a
/// centered Gaussian vector with covariance M. The bounds are reported both
/// with ‖M‖ as written and with the variance scaling √‖M‖ (resp. ‖M‖ x);
/// the written form is only guaranteed when ‖M‖ ≥ 1.
pub fn gaussian_max_check(m: &[Vec<f64>], x: f64, reps: usize, seed: u64) -> Result<GaussianMaxReport> {
    let k = m.len();
    if k == 0 || m.iter().any(|row| row.len() != k) {
        return invalid("covariance must be a nonempty square matrix");
    }
    if reps < 2 || !(x >= 0.0) {
        return invalid("need at least two replicates and x ≥ 0");
    }
    let mat = DMatrix::from_fn(k, k, |i, j| m[i][j]);
    let scale = mat.amax().max(f64::MIN_POSITIVE);
    for i in 0..k {
        for j in 0..i {
            if (mat[(i, j)] - mat[(j, i)]).abs() > 1e-12 * scale {
                return invalid("covariance is not symmetric");
            }
        }
    }
    let chol = mat
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Validation("covariance is not positive definite".into()))?;
    let eig = SymmetricEigen::new(mat);
    if eig.eigenvalues.min() <= 0.0 {
        return invalid("covariance is not positive definite");
    }
    let op_norm = eig.eigenvalues.max();
    let l = chol.l();
    let mut r = rng::stream(seed, &[]);
    let (mut sum, mut sum_sq, mut stated_hits, mut scaled_hits) = (0.0, 0.0, 0usize, 0usize);
    for _ in 0..reps {
        let z = DVector::from_fn(k, |_, _| r.sample::<f64, _>(StandardNormal));
        let gv = &l * z;
        let mx = gv.amax();
        sum += mx;
        sum_sq += mx * mx;
        let sq = mx * mx;
        stated_hits += (sq >= op_norm * op_norm * x) as usize;
        scaled_hits += (sq >= op_norm * x) as usize;
    }
    let nr = reps as f64;
    let mean = sum / nr;
    let mean_stderr = ((sum_sq / nr - mean * mean).max(0.0) / (nr - 1.0)).sqrt();
    let log_term = (k as f64).ln().max(2f64.ln()).sqrt();
    let stated_mean_bound = 3.0 * op_norm * log_term;
    let scaled_mean_bound = 3.0 * op_norm.sqrt() * log_term;
    let tail_bound = 2.0 * k as f64 * (-x / 4.0).exp();
    let freq = |h: usize| h as f64 / nr;
    let se = |p: f64| (p * (1.0 - p) / nr).sqrt();
    let (st, sc) = (freq(stated_hits), freq(scaled_hits));
    Ok(GaussianMaxReport {
        k,
        op_norm,
        mean_max_abs: mean,
        mean_stderr,
        stated_mean_bound,
        scaled_mean_bound,
        x,
        stated_tail_freq: st,
        scaled_tail_freq: sc,
        tail_bound,
        stated_holds: mean <= stated_mean_bound + 3.0 * mean_stderr && st <= tail_bound + 3.0 * se(st),
        scaled_holds: mean <= scaled_mean_bound + 3.0 * mean_stderr && sc <= tail_bound + 3.0 * se(sc),
    })
}
