//! Sufficiency reductions and the root transform from counts to an
//! approximately Gaussian statistic.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{CountVector, SimplexVector};

pub const DEFAULT_C_SHIFT: f64 = 0.25;

/// Factor taking root-transform noise (variance 1/(4n)) to the Gaussian
/// model's 1/(2n).
pub const GAUSS_RESCALE: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootStat {
    pub values: Vec<f64>,
    pub n: u64,
}

pub fn counts_from_raw(raw: &[u32], d: usize) -> Result<CountVector> {
    let mut counts = vec![0u64; d];
    for &x in raw {
        let k = x as usize;
        if k >= d {
            return invalid(format!("label {x} out of range for d = {d}"));
        }
        counts[k] += 1;
    }
    CountVector::new(counts, raw.len() as u64)
}

/// values_i = √((N_i + c)/n).
pub fn root_transform(counts: &CountVector, c_shift: f64) -> RootStat {
    let n = counts.n().max(1) as f64;
    RootStat {
        values: counts
            .counts()
            .iter()
            .map(|&c| ((c as f64 + c_shift) / n).sqrt())
            .collect(),
        n: counts.n(),
    }
}

pub fn center_at_null(stat: &[f64], q0: &SimplexVector) -> Result<Vec<f64>> {
    if stat.len() != q0.d() {
        return Err(Error::Dimension {
            expected: q0.d(),
            got: stat.len(),
        });
    }
    Ok(stat.iter().zip(q0.probs()).map(|(x, p)| x - p.sqrt()).collect())
}

pub fn uncenter(centered: &[f64], q0: &SimplexVector) -> Result<Vec<f64>> {
    if centered.len() != q0.d() {
        return Err(Error::Dimension {
            expected: q0.d(),
            got: centered.len(),
        });
    }
    Ok(centered.iter().zip(q0.probs()).map(|(x, p)| x + p.sqrt()).collect())
}

/// S_i = a_i x_i − a_{d/2+i} x_{d/2+i}.
pub fn left_right_reduce(x: &[f64], a: &[f64]) -> Result<Vec<f64>> {
    let d = x.len();
    if d % 2 != 0 {
        return invalid(format!("left-right reduction needs even d, got {d}"));
    }
    if a.len() != d {
        return Err(Error::Dimension { expected: d, got: a.len() });
    }
    let h = d / 2;
    Ok((0..h).map(|i| a[i] * x[i] - a[h + i] * x[h + i]).collect())
}

/// log dQ_q/dQ_{q0} of a raw sample, accumulated draw by draw.
pub fn log_likelihood_ratio_raw(raw: &[u32], q: &SimplexVector, q0: &SimplexVector) -> Result<f64> {
    if q.d() != q0.d() {
        return Err(Error::Dimension {
            expected: q0.d(),
            got: q.d(),
        });
    }
    let mut acc = 0.0;
    for &x in raw {
        let k = x as usize;
        if k >= q.d() {
            return invalid(format!("label {x} out of range"));
        }
        acc += q.probs()[k].ln() - q0.probs()[k].ln();
    }
    Ok(acc)
}

/// Same quantity through the counts alone.
pub fn log_likelihood_ratio_counts(counts: &CountVector, q: &SimplexVector, q0: &SimplexVector) -> f64 {
    counts
        .counts()
        .iter()
        .zip(q.probs().iter().zip(q0.probs()))
        .filter(|(c, _)| **c > 0)
        .map(|(&c, (p, p0))| c as f64 * (p.ln() - p0.ln()))
        .sum()
}

/// True when the likelihood ratio agrees on two raw samples with equal counts.
pub fn neyman_fisher_check(raw_a: &[u32], raw_b: &[u32], q: &SimplexVector, q0: &SimplexVector) -> Result<bool> {
    let a = log_likelihood_ratio_raw(raw_a, q, q0)?;
    let b = log_likelihood_ratio_raw(raw_b, q, q0)?;
    Ok(neyman_fisher_gap(a, b) <= 1e-12)
}

fn neyman_fisher_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }
}
