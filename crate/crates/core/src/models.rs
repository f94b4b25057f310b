//! Data generators and hypothesis geometry for the multinomial model and the
//! Gaussian location model.

use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

pub const SIMPLEX_TOL: f64 = 1e-12;

/// Compensated sum, so validation does not drift with d.
pub fn neumaier_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexVector {
    probs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for SimplexVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        SimplexVector::new(v)
    }
}

impl From<SimplexVector> for Vec<f64> {
    fn from(s: SimplexVector) -> Vec<f64> {
        s.probs
    }
}

impl SimplexVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return invalid("simplex vector needs d >= 1");
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return invalid(format!("simplex entry {p} is negative or not finite"));
        }
        let s = neumaier_sum(probs.iter().copied());
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return invalid(format!("simplex entries sum to {s}, not 1"));
        }
        Ok(SimplexVector { probs })
    }

    pub fn uniform(d: usize) -> Self {
        assert!(d >= 1);
        SimplexVector {
            probs: vec![1.0 / d as f64; d],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn d(&self) -> usize {
        self.probs.len()
    }

    pub fn sqrt(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.sqrt()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RatioClass {
    r: f64,
}

impl TryFrom<f64> for RatioClass {
    type Error = Error;
    fn try_from(r: f64) -> Result<Self> {
        RatioClass::new(r)
    }
}

impl From<RatioClass> for f64 {
    fn from(rc: RatioClass) -> f64 {
        rc.r
    }
}

impl RatioClass {
    pub fn new(r: f64) -> Result<Self> {
        if !(r.is_finite() && r > 1.0) {
            return invalid(format!("ratio bound R must exceed 1, got {r}"));
        }
        Ok(RatioClass { r })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// Largest |f_i|·√d keeping a dense perturbation inside the class.
    pub fn dense_radius(&self) -> f64 {
        (self.r - 1.0) / (self.r + 1.0)
    }

    pub fn contains(&self, q: &SimplexVector) -> bool {
        in_ratio_class(q, self)
    }
}

/// max/min ≤ R, boundary included.
pub fn in_ratio_class(q: &SimplexVector, rc: &RatioClass) -> bool {
    let max = q.probs.iter().cloned().fold(f64::MIN, f64::max);
    let min = q.probs.iter().cloned().fold(f64::MAX, f64::min);
    if min == 0.0 {
        return max == 0.0;
    }
    max <= rc.r * min
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMean {
    theta: Vec<f64>,
    noise_scale: f64,
}

impl GaussianMean {
    pub fn new(theta: Vec<f64>, noise_scale: f64) -> Result<Self> {
        if theta.is_empty() {
            return invalid("gaussian mean needs d >= 1");
        }
        if !(noise_scale.is_finite() && noise_scale > 0.0) {
            return invalid(format!("noise_scale must be positive, got {noise_scale}"));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return invalid("gaussian mean has a non-finite entry");
        }
        Ok(GaussianMean { theta, noise_scale })
    }

    /// θ = √q with σ = 1/√(2n).
    pub fn from_simplex(q: &SimplexVector, n: u64) -> Result<Self> {
        if n == 0 {
            return invalid("n must be >= 1");
        }
        GaussianMean::new(q.sqrt(), noise_scale_for(n))
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn d(&self) -> usize {
        self.theta.len()
    }
}

pub fn noise_scale_for(n: u64) -> f64 {
    1.0 / (2.0 * n as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountVector {
    counts: Vec<u64>,
    n: u64,
}

impl CountVector {
    pub fn new(counts: Vec<u64>, n: u64) -> Result<Self> {
        let s: u64 = counts.iter().sum();
        if s != n {
            return invalid(format!("counts sum to {s}, expected {n}"));
        }
        if counts.is_empty() {
            return invalid("count vector needs d >= 1");
        }
        Ok(CountVector { counts, n })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn d(&self) -> usize {
        self.counts.len()
    }
}

pub fn sample_counts(q: &SimplexVector, n: u64, seed: u64) -> CountVector {
    sample_counts_with(q, n, &mut rng::stream(seed, &[]))
}

/// Multinomial(n, q) through successive conditional binomials.
pub fn sample_counts_with<R: Rng + ?Sized>(q: &SimplexVector, n: u64, rng: &mut R) -> CountVector {
    let d = q.d();
    let mut counts = vec![0u64; d];
    let mut left = n;
    let mut mass = 1.0;
    for k in 0..d {
        if left == 0 {
            break;
        }
        if k == d - 1 {
            counts[k] = left;
            break;
        }
        let p = if mass > 0.0 { (q.probs[k] / mass).clamp(0.0, 1.0) } else { 1.0 };
        let c = if p >= 1.0 {
            left
        } else if p <= 0.0 {
            0
        } else {
            Binomial::new(left, p).expect("valid binomial").sample(rng)
        };
        counts[k] = c;
        left -= c;
        mass -= q.probs[k];
    }
    let out = CountVector { counts, n };
    assert_eq!(out.counts.iter().sum::<u64>(), n);
    out
}

/// Raw labels in 0..d, for the demos that need the full draw sequence.
pub fn sample_raw_with<R: Rng + ?Sized>(q: &SimplexVector, n: u64, rng: &mut R) -> Vec<u32> {
    let mut cdf = Vec::with_capacity(q.d());
    let mut acc = 0.0;
    for &p in &q.probs {
        acc += p;
        cdf.push(acc);
    }
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            let k = cdf.partition_point(|&c| c <= u);
            k.min(q.d() - 1) as u32
        })
        .collect()
}

pub fn sample_gaussian(mean: &GaussianMean, seed: u64) -> Vec<f64> {
    sample_gaussian_with(mean, &mut rng::stream(seed, &[]))
}

pub fn sample_gaussian_with<R: Rng + ?Sized>(mean: &GaussianMean, rng: &mut R) -> Vec<f64> {
    mean.theta
        .iter()
        .map(|t| {
            let z: f64 = StandardNormal.sample(rng);
            t + mean.noise_scale * z
        })
        .collect()
}

/// q_i = 1/d + f_i/√d on the first half, 1/d − f_i/√d on the second.
pub fn make_dense_alternative(f: &[f64], d: usize) -> Result<SimplexVector> {
    if d == 0 || d % 2 != 0 {
        return invalid(format!("dense alternative needs even d, got {d}"));
    }
    if f.len() != d / 2 {
        return Err(Error::Dimension {
            expected: d / 2,
            got: f.len(),
        });
    }
    let base = 1.0 / d as f64;
    let sd = (d as f64).sqrt();
    let mut probs = vec![0.0; d];
    for (i, fi) in f.iter().enumerate() {
        probs[i] = base + fi / sd;
        probs[d / 2 + i] = base - fi / sd;
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Construction(format!("entry {p} leaves [0, 1]")));
    }
    SimplexVector::new(probs)
}

pub fn separation_l1(q: &SimplexVector, q0: &SimplexVector) -> Result<f64> {
    if q.d() != q0.d() {
        return Err(Error::Dimension {
            expected: q0.d(),
            got: q.d(),
        });
    }
    Ok(neumaier_sum(q.probs.iter().zip(&q0.probs).map(|(a, b)| (a - b).abs())))
}

pub fn separation_l2(theta: &[f64], theta0: &[f64]) -> Result<f64> {
    if theta.len() != theta0.len() {
        return Err(Error::Dimension {
            expected: theta0.len(),
            got: theta.len(),
        });
    }
    Ok(neumaier_sum(theta.iter().zip(theta0).map(|(a, b)| (a - b) * (a - b))).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    DensePm,
    PriorSampled,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Truth {
    Multinomial(SimplexVector),
    Gaussian(GaussianMean),
}

impl Truth {
    pub fn d(&self) -> usize {
        match self {
            Truth::Multinomial(q) => q.d(),
            Truth::Gaussian(g) => g.d(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PanelMember {
    pub truth: Truth,
    pub construction: Construction,
}

/// A finite stand-in for the alternative set at separation `rho`.
#[derive(Clone, Debug)]
pub struct AlternativePanel {
    members: Vec<PanelMember>,
    rho: f64,
}

impl AlternativePanel {
    /// Validates separation and class membership of every member.
    pub fn new(members: Vec<PanelMember>, rho: f64, q0: &SimplexVector, rc: &RatioClass) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0) {
            return invalid(format!("panel separation must be positive, got {rho}"));
        }
        if members.is_empty() {
            return invalid("panel is empty");
        }
        let slack = 1.0 - 1e-9;
        let theta0 = q0.sqrt();
        for m in &members {
            match &m.truth {
                Truth::Multinomial(q) => {
                    if separation_l1(q, q0)? < rho * slack {
                        return invalid("panel member closer than rho in L1");
                    }
                    if !rc.contains(q) {
                        return invalid("panel member outside the ratio class");
                    }
                }
                Truth::Gaussian(g) => {
                    if separation_l2(g.theta(), &theta0)? < rho * slack {
                        return invalid("panel member closer than rho in L2");
                    }
                }
            }
        }
        Ok(AlternativePanel { members, rho })
    }

    pub fn members(&self) -> &[PanelMember] {
        &self.members
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelConfig {
    pub dense: usize,
    pub prior: usize,
}

impl Default for PanelConfig {
    fn default() -> Self {
        PanelConfig { dense: 4, prior: 4 }
    }
}

/// Fixed perturbation directions, scaled by ρ on demand so that bisection over
/// ρ sees common alternatives.
#[derive(Clone, Debug)]
pub struct PanelDirections {
    d: usize,
    dirs: Vec<(Vec<f64>, Construction)>,
}

impl PanelDirections {
    /// Directions f with ‖q^{ρf} − q0‖₁ = ρ for the uniform null.
    pub fn new(d: usize, cfg: PanelConfig, seed: u64) -> Result<Self> {
        if d < 2 || d % 2 != 0 {
            return invalid(format!("panel construction needs even d >= 2, got {d}"));
        }
        if cfg.dense + cfg.prior == 0 {
            return invalid("panel needs at least one member");
        }
        let half = d / 2;
        let sd = (d as f64).sqrt();
        let mut dirs = Vec::with_capacity(cfg.dense + cfg.prior);
        for i in 0..cfg.dense {
            let mut r = rng::stream(seed, &[rng::tag::PANEL, 0, i as u64]);
            let f = (0..half)
                .map(|k| {
                    // the first member is the plain left-right split
                    let s = if i == 0 || k == 0 || r.random::<bool>() { 1.0 } else { -1.0 };
                    s / sd
                })
                .collect();
            dirs.push((f, Construction::DensePm));
        }
        for i in 0..cfg.prior {
            let mut r = rng::stream(seed, &[rng::tag::PANEL, 1, i as u64]);
            let g: Vec<f64> = (0..half).map(|_| StandardNormal.sample(&mut r)).collect();
            let l1: f64 = g.iter().map(|x| x.abs()).sum();
            let f = g.iter().map(|x| x * (sd / 2.0) / l1).collect();
            dirs.push((f, Construction::PriorSampled));
        }
        Ok(PanelDirections { d, dirs })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    /// Largest ρ at which every member stays in the class.
    pub fn max_rho(&self, rc: &RatioClass) -> f64 {
        let sd = (self.d as f64).sqrt();
        let worst = self
            .dirs
            .iter()
            .flat_map(|(f, _)| f.iter().map(|x| x.abs()))
            .fold(0.0, f64::max);
        rc.dense_radius() / (worst * sd) * (1.0 - 1e-12)
    }

    pub fn simplex_members(&self, rho: f64) -> Result<Vec<(SimplexVector, Construction)>> {
        self.dirs
            .iter()
            .map(|(f, c)| {
                let scaled: Vec<f64> = f.iter().map(|x| x * rho).collect();
                Ok((make_dense_alternative(&scaled, self.d)?, *c))
            })
            .collect()
    }

    pub fn at(&self, rho: f64, rc: &RatioClass) -> Result<AlternativePanel> {
        if rho > self.max_rho(rc) {
            return Err(Error::Construction(format!(
                "rho {rho} exceeds the ratio-class limit {}",
                self.max_rho(rc)
            )));
        }
        let members = self
            .simplex_members(rho)?
            .into_iter()
            .map(|(q, construction)| PanelMember {
                truth: Truth::Multinomial(q),
                construction,
            })
            .collect();
        AlternativePanel::new(members, rho, &SimplexVector::uniform(self.d), rc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_and_one_dimensional_counts() {
        let q = SimplexVector::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(sample_counts(&q, 5, 1).counts(), &[5, 0]);
        let q = SimplexVector::new(vec![1.0]).unwrap();
        assert_eq!(sample_counts(&q, 3, 1).counts(), &[3]);
    }

    #[test]
    fn two_two_frequency_matches_enumeration() {
        let q = SimplexVector::new(vec![0.5, 0.5]).unwrap();
        let reps = 100_000u64;
        let hits = (0..reps).filter(|s| sample_counts(&q, 2, *s).counts() == [2, 0]).count();
        let p = hits as f64 / reps as f64;
        let se = (0.25f64 * 0.75 / reps as f64).sqrt();
        assert!((p - 0.25).abs() < 3.0 * se, "{p}");
    }

    #[test]
    fn count_means_converge() {
        let q = SimplexVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let n = 50u64;
        let reps = 10_000usize;
        let mut r = rng::stream(11, &[]);
        let mut sums = [0u64; 4];
        for _ in 0..reps {
            let c = sample_counts_with(&q, n, &mut r);
            for k in 0..4 {
                sums[k] += c.counts()[k];
            }
        }
        for k in 0..4 {
            let p = q.probs()[k];
            let mean = sums[k] as f64 / (reps as f64 * n as f64);
            let se = (p * (1.0 - p) / (n as f64 * reps as f64)).sqrt();
            assert!((mean - p).abs() < 4.0 * se);
        }
    }

    #[test]
    fn gaussian_moments() {
        let g = GaussianMean::new(vec![0.0, 0.0], 1.0).unwrap();
        let mut r = rng::stream(2, &[]);
        let reps = 100_000;
        let mut s = [0.0; 2];
        for _ in 0..reps {
            let x = sample_gaussian_with(&g, &mut r);
            s[0] += x[0];
            s[1] += x[1];
        }
        let se = 1.0 / (reps as f64).sqrt();
        assert!(s.iter().all(|v| (v / reps as f64).abs() < 3.0 * se));

        let g = GaussianMean::new(vec![1.0, -1.0], 2.0).unwrap();
        let xs: Vec<Vec<f64>> = (0..reps).map(|_| sample_gaussian_with(&g, &mut r)).collect();
        for k in 0..2 {
            let m = xs.iter().map(|x| x[k]).sum::<f64>() / reps as f64;
            let v = xs.iter().map(|x| (x[k] - m).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
            assert!((v / 4.0 - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn gaussian_from_uniform_simplex() {
        let g = GaussianMean::from_simplex(&SimplexVector::uniform(4), 50).unwrap();
        assert_eq!(g.theta(), &[0.5; 4]);
        assert!((g.noise_scale() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn ratio_class_examples() {
        let rc = RatioClass::new(1.5).unwrap();
        assert!(in_ratio_class(&SimplexVector::uniform(7), &rc));
        assert!(in_ratio_class(&SimplexVector::new(vec![0.4, 0.6]).unwrap(), &rc));
        let rc5 = RatioClass::new(5.0).unwrap();
        assert!(!in_ratio_class(&SimplexVector::new(vec![0.1, 0.9]).unwrap(), &rc5));
        assert!(!in_ratio_class(&SimplexVector::new(vec![0.0, 1.0]).unwrap(), &rc5));
        assert!(RatioClass::new(1.0).is_err());
        assert!(RatioClass::new(0.5).is_err());
    }

    #[test]
    fn dense_alternative_examples() {
        assert_eq!(make_dense_alternative(&[0.0, 0.0], 4).unwrap(), SimplexVector::uniform(4));
        let q = make_dense_alternative(&[0.1], 2).unwrap();
        let s = 0.1 / 2f64.sqrt();
        assert!((q.probs()[0] - (0.5 + s)).abs() < 1e-15);
        assert!((q.probs()[1] - (0.5 - s)).abs() < 1e-15);
        let f = [0.025, 0.025];
        let q = make_dense_alternative(&f, 4).unwrap();
        let l1 = separation_l1(&q, &SimplexVector::uniform(4)).unwrap();
        assert!((l1 - 2.0 * 0.05 / 2.0).abs() < 1e-15);
        assert!(make_dense_alternative(&[0.1], 3).is_err());
        assert!(matches!(make_dense_alternative(&[1.0], 2), Err(Error::Construction(_))));
    }

    #[test]
    fn separation_examples() {
        let a = SimplexVector::new(vec![1.0, 0.0]).unwrap();
        let b = SimplexVector::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(separation_l1(&a, &a).unwrap(), 0.0);
        assert_eq!(separation_l1(&a, &b).unwrap(), 2.0);
        let c = SimplexVector::new(vec![0.6, 0.4]).unwrap();
        assert!((separation_l1(&c, &SimplexVector::uniform(2)).unwrap() - 0.2).abs() < 1e-15);
        assert!(separation_l1(&c, &SimplexVector::uniform(3)).is_err());
        assert!(separation_l2(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn simplex_validation() {
        assert!(SimplexVector::new(vec![]).is_err());
        assert!(SimplexVector::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexVector::new(vec![-0.1, 1.1]).is_err());
        assert!(CountVector::new(vec![1, 2], 4).is_err());
    }

    #[test]
    fn panel_members_have_exact_separation() {
        let dirs = PanelDirections::new(8, PanelConfig { dense: 3, prior: 3 }, 5).unwrap();
        let rc = RatioClass::new(3.0).unwrap();
        let rho = 0.5 * dirs.max_rho(&rc);
        let panel = dirs.at(rho, &rc).unwrap();
        assert_eq!(panel.len(), 6);
        for m in panel.members() {
            if let Truth::Multinomial(q) = &m.truth {
                let l1 = separation_l1(q, &SimplexVector::uniform(8)).unwrap();
                assert!((l1 - rho).abs() < 1e-12);
            }
        }
        assert!(dirs.at(dirs.max_rho(&rc) * 1.01, &rc).is_err());
        dirs.at(dirs.max_rho(&rc), &rc).unwrap();
        assert!(AlternativePanel::new(panel.members().to_vec(), 0.0, &SimplexVector::uniform(8), &rc).is_err());
    }
}
