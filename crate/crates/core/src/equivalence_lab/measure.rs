//! Finite measures, Markov kernels between finite supports, total variation
//! and the maximal coupling.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::neumaier_sum;
use crate::rng;

/// Slack on total mass for a probability measure.
pub const MASS_TOL: f64 = 1e-12;

fn mass_tol(len: usize) -> f64 {
    MASS_TOL.max(len as f64 * f64::EPSILON)
}

#[derive(Deserialize)]
struct RawMeasure {
    atoms: Vec<i64>,
    weights: Vec<f64>,
}

/// Nonnegative weights on a sorted set of integer atoms. Gridded reals are
/// represented by their cell index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure")]
pub struct FiniteMeasure {
    atoms: Vec<i64>,
    weights: Vec<f64>,
}

impl TryFrom<RawMeasure> for FiniteMeasure {
    type Error = Error;
    fn try_from(r: RawMeasure) -> Result<Self> {
        FiniteMeasure::new(r.atoms, r.weights)
    }
}

impl FiniteMeasure {
    /// Sorts the atoms and merges duplicates.
    pub fn new(atoms: Vec<i64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() {
            return invalid(format!("{} atoms but {} weights", atoms.len(), weights.len()));
        }
        if atoms.is_empty() {
            return invalid("measure has no atoms");
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return invalid(format!("weight {w} is not a finite nonnegative number"));
        }
        let mut pairs: Vec<(i64, f64)> = atoms.into_iter().zip(weights).collect();
        pairs.sort_by_key(|p| p.0);
        let mut a: Vec<i64> = Vec::with_capacity(pairs.len());
        let mut w: Vec<f64> = Vec::with_capacity(pairs.len());
        for (x, p) in pairs {
            if a.last() == Some(&x) {
                *w.last_mut().unwrap() += p;
            } else {
                a.push(x);
                w.push(p);
            }
        }
        Ok(FiniteMeasure { atoms: a, weights: w })
    }

    /// As `new`, and the total mass must be one.
    pub fn probability(atoms: Vec<i64>, weights: Vec<f64>) -> Result<Self> {
        let m = FiniteMeasure::new(atoms, weights)?;
        m.require_probability()?;
        Ok(m)
    }

    /// Atoms 0..k.
    pub fn from_probs(p: &[f64]) -> Result<Self> {
        FiniteMeasure::probability((0..p.len() as i64).collect(), p.to_vec())
    }

    pub fn point(atom: i64) -> Self {
        FiniteMeasure {
            atoms: vec![atom],
            weights: vec![1.0],
        }
    }

    pub fn bernoulli(p: f64) -> Result<Self> {
        FiniteMeasure::probability(vec![0, 1], vec![1.0 - p, p])
    }

    pub fn atoms(&self) -> &[i64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mass(&self) -> f64 {
        neumaier_sum(self.weights.iter().copied())
    }

    pub fn is_probability(&self) -> bool {
        (self.mass() - 1.0).abs() <= mass_tol(self.len())
    }

    pub fn require_probability(&self) -> Result<()> {
        if self.is_probability() {
            Ok(())
        } else {
            invalid(format!("total mass {} is not 1", self.mass()))
        }
    }

    pub fn weight_of(&self, atom: i64) -> f64 {
        match self.atoms.binary_search(&atom) {
            Ok(i) => self.weights[i],
            Err(_) => 0.0,
        }
    }

    /// Both measures on the union of their supports, missing atoms weighted 0.
    pub fn align(&self, other: &FiniteMeasure) -> (Vec<i64>, Vec<f64>, Vec<f64>) {
        let (mut i, mut j) = (0, 0);
        let mut atoms = Vec::with_capacity(self.len().max(other.len()));
        let mut p = Vec::with_capacity(atoms.capacity());
        let mut q = Vec::with_capacity(atoms.capacity());
        while i < self.len() || j < other.len() {
            let a = self.atoms.get(i).copied().unwrap_or(i64::MAX);
            let b = other.atoms.get(j).copied().unwrap_or(i64::MAX);
            if i < self.len() && (j >= other.len() || a < b) {
                atoms.push(a);
                p.push(self.weights[i]);
                q.push(0.0);
                i += 1;
            } else if j < other.len() && (i >= self.len() || b < a) {
                atoms.push(b);
                p.push(0.0);
                q.push(other.weights[j]);
                j += 1;
            } else {
                atoms.push(a);
                p.push(self.weights[i]);
                q.push(other.weights[j]);
                i += 1;
                j += 1;
            }
        }
        (atoms, p, q)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let idx = WeightedIndex::new(&self.weights).expect("positive mass");
        self.atoms[idx.sample(rng)]
    }
}

/// sup_A |P(A) − Q(A)| = ½ Σ |p − q|.
pub fn tv_exact(p: &FiniteMeasure, q: &FiniteMeasure) -> Result<f64> {
    p.require_probability()?;
    q.require_probability()?;
    let (_, a, b) = p.align(q);
    // masses are 1 only up to MASS_TOL
    Ok((0.5 * neumaier_sum(a.iter().zip(&b).map(|(x, y)| (x - y).abs()))).min(1.0))
}

/// TV as the largest event discrepancy, by enumerating every subset of the
/// joint support. Exponential; for cross-checking on at most 20 atoms.
pub fn tv_by_events(p: &FiniteMeasure, q: &FiniteMeasure) -> Result<f64> {
    let (atoms, a, b) = p.align(q);
    if atoms.len() > 20 {
        return Err(Error::TooLarge(format!("2^{} events", atoms.len())));
    }
    let mut best: f64 = 0.0;
    for mask in 0u32..(1 << atoms.len()) {
        let diff: f64 = (0..atoms.len()).filter(|k| mask >> k & 1 == 1).map(|k| a[k] - b[k]).sum();
        best = best.max(diff.abs());
    }
    Ok(best)
}

/// Maximal coupling of two probability measures: with probability 1 − TV
/// both coordinates come from min(p, q), otherwise from the normalized
/// positive and negative parts of p − q.
#[derive(Clone, Debug)]
pub struct MaximalCoupling {
    atoms: Vec<i64>,
    tv: f64,
    common: Option<WeightedIndex<f64>>,
    left: Option<WeightedIndex<f64>>,
    right: Option<WeightedIndex<f64>>,
}

impl MaximalCoupling {
    pub fn new(p: &FiniteMeasure, q: &FiniteMeasure) -> Result<Self> {
        let tv = tv_exact(p, q)?;
        let (atoms, a, b) = p.align(q);
        let overlap: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect();
        let excess_p: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y).max(0.0)).collect();
        let excess_q: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (y - x).max(0.0)).collect();
        let build = |w: &[f64]| WeightedIndex::new(w).ok();
        Ok(MaximalCoupling {
            atoms,
            tv,
            common: build(&overlap),
            left: build(&excess_p),
            right: build(&excess_q),
        })
    }

    /// P(X ≠ X̃).
    pub fn mismatch_probability(&self) -> f64 {
        self.tv
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (i64, i64) {
        let split = rng.random::<f64>() < self.tv;
        match (&self.common, &self.left, &self.right) {
            (Some(c), _, _) if !split || self.left.is_none() || self.right.is_none() => {
                let x = self.atoms[c.sample(rng)];
                (x, x)
            }
            (_, Some(l), Some(r)) => (self.atoms[l.sample(rng)], self.atoms[r.sample(rng)]),
            _ => unreachable!("a coupling of probability measures always has an overlap or a split part"),
        }
    }
}

/// One draw from the maximal coupling.
pub fn maximal_coupling(p: &FiniteMeasure, q: &FiniteMeasure, seed: u64) -> Result<(i64, i64)> {
    let c = MaximalCoupling::new(p, q)?;
    Ok(c.sample(&mut rng::stream(seed, &[])))
}

#[derive(Deserialize)]
struct RawKernel {
    source: Vec<i64>,
    target: Vec<i64>,
    rows: Vec<Vec<f64>>,
}

/// Row-stochastic matrix: `rows[i]` is the law on `target` given source atom
/// `source[i]`. Both supports are strictly increasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernel")]
pub struct KernelMatrix {
    source: Vec<i64>,
    target: Vec<i64>,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<RawKernel> for KernelMatrix {
    type Error = Error;
    fn try_from(r: RawKernel) -> Result<Self> {
        KernelMatrix::new(r.source, r.target, r.rows)
    }
}

fn strictly_increasing(v: &[i64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl KernelMatrix {
    pub fn new(source: Vec<i64>, target: Vec<i64>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return invalid("kernel supports must be nonempty");
        }
        if !strictly_increasing(&source) || !strictly_increasing(&target) {
            return invalid("kernel supports must be strictly increasing");
        }
        if rows.len() != source.len() {
            return invalid(format!("{} rows for {} source atoms", rows.len(), source.len()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != target.len() {
                return invalid(format!("row {i} has {} entries, target has {}", row.len(), target.len()));
            }
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return invalid(format!("row {i} has a negative or non-finite entry"));
            }
            let s = neumaier_sum(row.iter().copied());
            if (s - 1.0).abs() > mass_tol(row.len()) {
                return invalid(format!("row {i} sums to {s}"));
            }
        }
        Ok(KernelMatrix { source, target, rows })
    }

    pub fn from_fn(source: Vec<i64>, target: Vec<i64>, f: impl Fn(i64) -> Vec<f64>) -> Result<Self> {
        let rows = source.iter().map(|&x| f(x)).collect();
        KernelMatrix::new(source, target, rows)
    }

    pub fn identity(atoms: Vec<i64>) -> Result<Self> {
        let k = atoms.len();
        let rows = (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        KernelMatrix::new(atoms.clone(), atoms, rows)
    }

    /// Every row equal to `out`.
    pub fn constant(source: Vec<i64>, out: &FiniteMeasure) -> Result<Self> {
        out.require_probability()?;
        let rows = vec![out.weights().to_vec(); source.len()];
        KernelMatrix::new(source, out.atoms().to_vec(), rows)
    }

    pub fn source(&self) -> &[i64] {
        &self.source
    }

    pub fn target(&self) -> &[i64] {
        &self.target
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, atom: i64) -> Option<&[f64]> {
        self.source.binary_search(&atom).ok().map(|i| self.rows[i].as_slice())
    }

    pub fn row_measure(&self, atom: i64) -> Option<FiniteMeasure> {
        self.row(atom).map(|r| FiniteMeasure {
            atoms: self.target.clone(),
            weights: r.to_vec(),
        })
    }

    /// First `self`, then `next`: (self·next)(z|x) = Σ_y self(y|x) next(z|y).
    pub fn then(&self, next: &KernelMatrix) -> Result<KernelMatrix> {
        let idx: Vec<usize> = self
            .target
            .iter()
            .map(|y| {
                next.source
                    .binary_search(y)
                    .map_err(|_| Error::Validation(format!("atom {y} is not in the next kernel's source")))
            })
            .collect::<Result<_>>()?;
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let mut out = vec![0.0; next.target.len()];
                for (w, &i) in row.iter().zip(&idx) {
                    if *w != 0.0 {
                        out.iter_mut().zip(&next.rows[i]).for_each(|(o, k)| *o += w * k);
                    }
                }
                out
            })
            .collect();
        KernelMatrix::new(self.source.clone(), next.target.clone(), rows)
    }
}

/// Anything that pushes a finite measure forward.
pub trait MarkovKernel: Sync {
    fn push(&self, p: &FiniteMeasure) -> Result<FiniteMeasure>;
}

impl MarkovKernel for KernelMatrix {
    fn push(&self, p: &FiniteMeasure) -> Result<FiniteMeasure> {
        apply_kernel(p, self)
    }
}

/// P K, by direct matrix-vector product.
pub fn apply_kernel(p: &FiniteMeasure, k: &KernelMatrix) -> Result<FiniteMeasure> {
    let mut out = vec![0.0; k.target.len()];
    for (x, w) in p.atoms().iter().zip(p.weights()) {
        let row = k
            .row(*x)
            .ok_or_else(|| Error::Validation(format!("atom {x} is outside the kernel's source support")))?;
        if *w != 0.0 {
            out.iter_mut().zip(row).for_each(|(o, r)| *o += w * r);
        }
    }
    FiniteMeasure::new(k.target.clone(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_probs<R: Rng>(k: usize, r: &mut R) -> Vec<f64> {
        let raw: Vec<f64> = (0..k).map(|_| r.random::<f64>() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / s).collect()
    }

    #[test]
    fn tv_examples() {
        let b = FiniteMeasure::bernoulli(0.5).unwrap();
        assert_eq!(tv_exact(&b, &b).unwrap(), 0.0);
        let p = FiniteMeasure::point(3);
        let q = FiniteMeasure::point(7);
        assert_eq!(tv_exact(&p, &q).unwrap(), 1.0);
        let c = FiniteMeasure::bernoulli(0.75).unwrap();
        assert!((tv_exact(&b, &c).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_measures() {
        assert!(FiniteMeasure::probability(vec![0, 1], vec![0.5, 0.6]).is_err());
        assert!(FiniteMeasure::new(vec![0], vec![-0.1]).is_err());
        assert!(FiniteMeasure::new(vec![0, 1], vec![1.0]).is_err());
        let half = FiniteMeasure::new(vec![0], vec![0.5]).unwrap();
        assert!(tv_exact(&half, &FiniteMeasure::point(0)).is_err());
    }

    #[test]
    fn duplicates_merge() {
        let m = FiniteMeasure::probability(vec![2, 1, 2], vec![0.25, 0.5, 0.25]).unwrap();
        assert_eq!(m.atoms(), &[1, 2]);
        assert_eq!(m.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn events_match_half_l1() {
        let mut r = rng::stream(11, &[]);
        for _ in 0..100 {
            let k = r.random_range(1..7usize);
            let p = FiniteMeasure::from_probs(&random_probs(k, &mut r)).unwrap();
            let q = FiniteMeasure::from_probs(&random_probs(k + 1, &mut r)).unwrap();
            assert!((tv_exact(&p, &q).unwrap() - tv_by_events(&p, &q).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_examples() {
        let p = FiniteMeasure::from_probs(&[0.2, 0.3, 0.5]).unwrap();
        let id = KernelMatrix::identity(vec![0, 1, 2]).unwrap();
        assert_eq!(apply_kernel(&p, &id).unwrap(), p);
        let r = FiniteMeasure::probability(vec![5, 9], vec![0.1, 0.9]).unwrap();
        let c = KernelMatrix::constant(vec![0, 1, 2], &r).unwrap();
        assert!(tv_exact(&apply_kernel(&p, &c).unwrap(), &r).unwrap() < 1e-15);
        assert!(apply_kernel(&FiniteMeasure::point(4), &c).is_err());
    }

    #[test]
    fn kernel_matches_direct_summation() {
        let mut rr = rng::stream(12, &[]);
        let p = random_probs(3, &mut rr);
        let rows: Vec<Vec<f64>> = (0..3).map(|_| random_probs(4, &mut rr)).collect();
        let k = KernelMatrix::new(vec![0, 1, 2], vec![0, 1, 2, 3], rows.clone()).unwrap();
        let out = apply_kernel(&FiniteMeasure::from_probs(&p).unwrap(), &k).unwrap();
        for y in 0..4 {
            let direct = p[0] * rows[0][y] + p[1] * rows[1][y] + p[2] * rows[2][y];
            assert!((out.weights()[y] - direct).abs() < 1e-15);
        }
        assert!((out.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn composition_is_associative_with_push() {
        let mut r = rng::stream(13, &[]);
        let a = KernelMatrix::new(vec![0, 1], vec![0, 1, 2], (0..2).map(|_| random_probs(3, &mut r)).collect()).unwrap();
        let b = KernelMatrix::new(vec![0, 1, 2], vec![-1, 1], (0..3).map(|_| random_probs(2, &mut r)).collect()).unwrap();
        let p = FiniteMeasure::bernoulli(0.3).unwrap();
        let two_step = apply_kernel(&apply_kernel(&p, &a).unwrap(), &b).unwrap();
        let one_step = apply_kernel(&p, &a.then(&b).unwrap()).unwrap();
        assert!(tv_exact(&two_step, &one_step).unwrap() < 1e-15);
    }

    #[test]
    fn coupling_degenerate_cases() {
        let p = FiniteMeasure::from_probs(&[0.1, 0.9]).unwrap();
        let c = MaximalCoupling::new(&p, &p).unwrap();
        let mut r = rng::stream(14, &[]);
        for _ in 0..1000 {
            let (x, y) = c.sample(&mut r);
            assert_eq!(x, y);
        }
        let c = MaximalCoupling::new(&FiniteMeasure::point(0), &FiniteMeasure::point(1)).unwrap();
        for _ in 0..100 {
            assert_eq!(c.sample(&mut r), (0, 1));
        }
        assert_eq!(maximal_coupling(&p, &p, 3).unwrap().0, maximal_coupling(&p, &p, 3).unwrap().1);
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let k = KernelMatrix::new(vec![0, 1], vec![0, 1], vec![vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
        let s = serde_json::to_string(&k).unwrap();
        assert_eq!(serde_json::from_str::<KernelMatrix>(&s).unwrap(), k);
        assert!(serde_json::from_str::<KernelMatrix>(r#"{"source":[0],"target":[0,1],"rows":[[0.5,0.6]]}"#).is_err());
        assert!(serde_json::from_str::<FiniteMeasure>(r#"{"atoms":[0,1],"weights":[0.5]}"#).is_err());
    }

    #[test]
    fn disjoint_supports_have_tv_one_despite_rounding() {
        // weights that sum to 1 only up to rounding
        let w = [0.1, 0.2, 0.3, 0.4];
        let p = FiniteMeasure::probability(vec![0, 1, 2, 3], w.to_vec()).unwrap();
        let q = FiniteMeasure::probability(vec![4, 5, 6, 7], w.iter().rev().copied().collect()).unwrap();
        assert_eq!(tv_exact(&p, &q).unwrap(), 1.0);
        let c = MaximalCoupling::new(&p, &q).unwrap();
        let mut r = rng::stream(3, &[]);
        assert!((0..1000).all(|_| {
            let (x, y) = c.sample(&mut r);
            x != y
        }));
    }
}
