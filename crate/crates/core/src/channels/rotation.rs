use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::rng;

pub const ORTHO_TOL: f64 = 1e-9;

/// Leading rows of a Haar-distributed orthogonal matrix, obtained by
/// Gram–Schmidt on Gaussian rows. Row i draws from its own stream, so a
/// partial rotation is a prefix of the full one.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedRandomness {
    seed: u64,
    d: usize,
    rows: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SharedRandomness {
    pub fn new(seed: u64, d: usize) -> Result<Self> {
        SharedRandomness::partial(seed, d, d)
    }

    pub fn partial(seed: u64, d: usize, k: usize) -> Result<Self> {
        if d == 0 || k == 0 || k > d {
            return invalid(format!("rotation needs 1 <= k <= d, got k = {k}, d = {d}"));
        }
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut i = 0u64;
        while rows.len() < k {
            let mut r = rng::stream(seed, &[rng::tag::SHARED, i]);
            i += 1;
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
            let norm0 = dot(&v, &v).sqrt();
            for _ in 0..2 {
                for u in &rows {
                    let c = dot(&v, u);
                    v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm < 1e-8 * norm0 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            rows.push(v);
        }
        Ok(SharedRandomness { seed, d, rows })
    }

    pub fn identity(d: usize) -> Self {
        let rows = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        SharedRandomness { seed: 0, d, rows }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if d == 0 || rows.len() > d || rows.iter().any(|r| r.len() != d) {
            return invalid("rotation rows must be a nonempty k x d array with k <= d");
        }
        let s = SharedRandomness { seed: 0, d, rows };
        if s.orthogonality_error() > ORTHO_TOL {
            return Err(Error::Construction("rows are not orthonormal".into()));
        }
        Ok(s)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    /// First `k` coordinates of rotation·v.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| dot(r, v)).collect()
    }

    pub fn apply_rows(&self, v: &[f64], rows: std::ops::Range<usize>) -> Vec<f64> {
        self.rows[rows].iter().map(|r| dot(r, v)).collect()
    }

    /// Rows of (self · mᵀ) where m is a full d×d orthogonal matrix.
    pub fn compose_transpose(&self, m: &SharedRandomness) -> Result<Self> {
        if m.d != self.d || m.k() != m.d {
            return invalid("composition needs a full rotation of matching dimension");
        }
        let rows = self.rows.iter().map(|r| m.rows.iter().map(|mr| dot(r, mr)).collect()).collect();
        Ok(SharedRandomness {
            seed: self.seed,
            d: self.d,
            rows,
        })
    }

    /// max |R Rᵀ − I| over the stored rows.
    pub fn orthogonality_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for (i, a) in self.rows.iter().enumerate() {
            for (j, b) in self.rows.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((dot(a, b) - target).abs());
            }
        }
        err
    }
}
