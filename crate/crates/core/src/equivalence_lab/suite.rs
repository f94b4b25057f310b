//! Randomized small-instance batteries over the lab's identities and bounds,
//! the maximal-coupling frequency check and the DP certificate matrix.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use super::lemmas::{check_data_processing, check_product_bound, hellinger_l1_check, CHECK_TOL};
use super::measure::{tv_by_events, tv_exact, FiniteMeasure, KernelMatrix, MaximalCoupling};
use super::transfer::kernel_dp_certificate;
use crate::channels::{verify_dp, DpParams, Mechanism};
use crate::error::{invalid, Result};
use crate::exec::Exec;
use crate::models::SimplexVector;
use crate::rng::{self, Stream};
use crate::transforms::neyman_fisher_check;

/// One identity or inequality checked on `cases` random instances.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteRow {
    pub check: String,
    pub cases: usize,
    pub passed: usize,
    /// Largest lhs − rhs (or |lhs − rhs| for identities) over the cases.
    pub max_violation: f64,
}

impl SuiteRow {
    pub fn all_passed(&self) -> bool {
        self.passed == self.cases
    }
}

fn random_probs(k: usize, rng: &mut Stream) -> Vec<f64> {
    // occasional exact zeros exercise disjoint supports
    let w: Vec<f64> = (0..k)
        .map(|_| if rng.random::<f64>() < 0.15 { 0.0 } else { rng.random::<f64>() })
        .collect();
    let s: f64 = w.iter().sum();
    if s == 0.0 {
        let mut v = vec![0.0; k];
        v[0] = 1.0;
        return v;
    }
    w.iter().map(|x| x / s).collect()
}

/// Random probability measure on at most `max_atoms` atoms drawn from
/// 0..2·max_atoms.
pub fn random_measure(max_atoms: usize, rng: &mut Stream) -> Result<FiniteMeasure> {
    let k = rng.random_range(1..=max_atoms);
    let mut pool: Vec<i64> = (0..2 * max_atoms as i64).collect();
    pool.shuffle(rng);
    pool.truncate(k);
    FiniteMeasure::probability(pool, random_probs(k, rng))
}

fn random_kernel(source: Vec<i64>, targets: usize, rng: &mut Stream) -> Result<KernelMatrix> {
    let target: Vec<i64> = (0..targets as i64).collect();
    let rows = source.iter().map(|_| random_probs(targets, rng)).collect();
    KernelMatrix::new(source, target, rows)
}

struct Tally {
    row: SuiteRow,
}

impl Tally {
    fn new(check: &str) -> Self {
        Tally {
            row: SuiteRow {
                check: check.into(),
                cases: 0,
                passed: 0,
                max_violation: f64::NEG_INFINITY,
            },
        }
    }

    fn record(&mut self, violation: f64, ok: bool) {
        self.row.cases += 1;
        self.row.passed += ok as usize;
        self.row.max_violation = self.row.max_violation.max(violation);
    }
}

/// TV as half-L1 against the event supremum, the product bound, data
/// processing, the Hellinger bound and likelihood factorization through
/// counts, each on `cases` random instances.
pub fn lemma_suite(cases: usize, max_atoms: usize, seed: u64) -> Result<Vec<SuiteRow>> {
    if cases == 0 || !(1..=12).contains(&max_atoms) {
        return invalid("need cases ≥ 1 and 1 ≤ max_atoms ≤ 12");
    }
    let mut tv = Tally::new("tv_half_l1_equals_event_sup");
    let mut prod = Tally::new("product_tv_at_most_sum");
    let mut dpi = Tally::new("data_processing");
    let mut hel = Tally::new("tv_at_most_hellinger");
    let mut nf = Tally::new("likelihood_factors_through_counts");
    for i in 0..cases as u64 {
        let mut r = rng::stream(seed, &[1, i]);
        let p = random_measure(max_atoms, &mut r)?;
        let q = random_measure(max_atoms, &mut r)?;

        let a = tv_exact(&p, &q)?;
        let b = tv_by_events(&p, &q)?;
        let sym = tv_exact(&q, &p)?;
        let gap = (a - b).abs().max((a - sym).abs());
        tv.record(gap, gap <= CHECK_TOL && (0.0..=1.0 + CHECK_TOL).contains(&a));

        let factors = r.random_range(2..=3);
        let pairs = (0..factors)
            .map(|_| Ok((random_measure(max_atoms.min(5), &mut r)?, random_measure(max_atoms.min(5), &mut r)?)))
            .collect::<Result<Vec<_>>>()?;
        let pb = check_product_bound(&pairs)?;
        prod.record(pb.tv_product - pb.sum_tv, pb.holds);

        let (support, _, _) = p.align(&q);
        let k = random_kernel(support, r.random_range(1..=max_atoms), &mut r)?;
        let d = check_data_processing(&p, &q, &k)?;
        dpi.record(d.tv_after - d.tv_before, d.holds);

        let h = hellinger_l1_check(&p, &q)?;
        hel.record(h.half_l1 - h.hellinger_rhs, h.holds);

        let dim = r.random_range(2..=6);
        let positive = |r: &mut Stream| {
            let w: Vec<f64> = (0..dim).map(|_| 0.05 + r.random::<f64>()).collect();
            let s: f64 = w.iter().sum();
            SimplexVector::new(w.iter().map(|x| x / s).collect())
        };
        let qa = positive(&mut r)?;
        let q0 = positive(&mut r)?;
        let n = r.random_range(1..=12);
        let raw: Vec<u32> = (0..n).map(|_| r.random_range(0..dim as u32)).collect();
        let mut perm = raw.clone();
        perm.shuffle(&mut r);
        let ok = neyman_fisher_check(&raw, &perm, &qa, &q0)?;
        nf.record(if ok { 0.0 } else { f64::INFINITY }, ok);
    }
    Ok(vec![tv.row, prod.row, dpi.row, hel.row, nf.row])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingRow {
    pub pair: usize,
    pub atoms: usize,
    pub tv: f64,
    pub mismatch_freq: f64,
    pub mc_stderr: f64,
    /// Largest deviation of either marginal frequency from its target.
    pub marginal_error: f64,
    pub within: bool,
}

/// Empirical P(X ≠ X̃) of the maximal coupling against TV on random pairs.
/// `within` uses a 3·stderr band; degenerate TV ∈ {0, 1} must match exactly.
pub fn coupling_suite(pairs: usize, samples: usize, max_atoms: usize, seed: u64, exec: &Exec) -> Result<Vec<CouplingRow>> {
    if pairs == 0 || samples == 0 || max_atoms == 0 {
        return invalid("pairs, samples and max_atoms must be positive");
    }
    exec.map(pairs, |i| {
        let mut r = rng::stream(seed, &[2, i as u64]);
        let p = random_measure(max_atoms, &mut r)?;
        let q = random_measure(max_atoms, &mut r)?;
        let c = MaximalCoupling::new(&p, &q)?;
        let (atoms, a, b) = p.align(&q);
        let mut mismatches = 0usize;
        let mut left = vec![0usize; atoms.len()];
        let mut right = vec![0usize; atoms.len()];
        let mut s = rng::stream(seed, &[3, i as u64]);
        for _ in 0..samples {
            let (x, y) = c.sample(&mut s);
            mismatches += (x != y) as usize;
            left[atoms.binary_search(&x).expect("atom in support")] += 1;
            right[atoms.binary_search(&y).expect("atom in support")] += 1;
        }
        let tv = c.mismatch_probability();
        let freq = mismatches as f64 / samples as f64;
        let se = (tv * (1.0 - tv) / samples as f64).sqrt();
        let marginal_error = (0..atoms.len())
            .map(|k| (left[k] as f64 / samples as f64 - a[k]).abs().max((right[k] as f64 / samples as f64 - b[k]).abs()))
            .fold(0.0, f64::max);
        Ok(CouplingRow {
            pair: i,
            atoms: atoms.len(),
            tv,
            mismatch_freq: freq,
            mc_stderr: se,
            marginal_error,
            within: (freq - tv).abs() <= 3.0 * se,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DpRow {
    pub mechanism: Mechanism,
    pub epsilon: f64,
    pub delta: f64,
    pub d: usize,
    pub clip_bound: f64,
    pub pairs: usize,
    /// Largest certified density ratio over the pairs (e^ε is the target).
    pub max_ratio: f64,
    pub ratio_bound: f64,
    pub max_delta_required: f64,
    pub certified: bool,
}

pub const DP_EPSILONS: [f64; 4] = [0.1, 0.5, 1.0, 2.0];
pub const DP_DIMS: [usize; 3] = [1, 2, 8];
pub const DP_CLIPS: [f64; 2] = [1.0, 3.0];
pub const DP_DELTAS: [f64; 2] = [1e-6, 1e-3];

/// Analytic certificates for every configuration in the matrix: corner
/// pairs of the clipped domain, random pairs, and output grids around both
/// inputs. Randomized response is certified on bit inputs and, separately,
/// as a 2×2 kernel.
pub fn dp_certificate_matrix(random_pairs: usize, seed: u64) -> Result<Vec<DpRow>> {
    let mut out = Vec::new();
    let mut r = rng::stream(seed, &[4]);
    for &eps in &DP_EPSILONS {
        for &d in &DP_DIMS {
            for &clip in &DP_CLIPS {
                let mut inputs: Vec<(Vec<f64>, Vec<f64>)> =
                    vec![(vec![clip; d], vec![-clip; d]), (vec![clip; d], vec![clip; d])];
                for _ in 0..random_pairs {
                    let x = (0..d).map(|_| r.random_range(-clip..=clip)).collect();
                    let y = (0..d).map(|_| r.random_range(-clip..=clip)).collect();
                    inputs.push((x, y));
                }
                let configs = std::iter::once((Mechanism::Laplace, 0.0))
                    .chain(DP_DELTAS.iter().map(|&dl| (Mechanism::Gaussian, dl)));
                for (mech, delta) in configs {
                    let p = DpParams::new(eps, delta, clip)?;
                    let mut row = DpRow {
                        mechanism: mech,
                        epsilon: eps,
                        delta,
                        d,
                        clip_bound: clip,
                        pairs: inputs.len(),
                        max_ratio: 0.0,
                        ratio_bound: eps.exp(),
                        max_delta_required: 0.0,
                        certified: true,
                    };
                    for (x, y) in &inputs {
                        let mut grid: Vec<Vec<f64>> = vec![x.clone(), y.clone()];
                        for t in 0..=8 {
                            let s = t as f64 / 8.0;
                            grid.push(x.iter().zip(y).map(|(a, b)| (1.0 - s) * a + s * b + (s - 0.5) * clip).collect());
                        }
                        let rep = verify_dp(mech, &p, x, y, &grid)?;
                        row.max_ratio = row.max_ratio.max(if mech == Mechanism::Laplace { rep.analytic_ratio } else { rep.grid_max_ratio });
                        row.max_delta_required = row.max_delta_required.max(rep.delta_required);
                        row.certified &= rep.certified;
                    }
                    out.push(row);
                }
            }
        }
        // one bit per server: the mechanism as used by the protocols
        let p = DpParams::new(eps, 0.0, 1.0)?;
        let mut row = DpRow {
            mechanism: Mechanism::RandomizedResponse,
            epsilon: eps,
            delta: 0.0,
            d: 1,
            clip_bound: 1.0,
            pairs: 4,
            max_ratio: 0.0,
            ratio_bound: eps.exp(),
            max_delta_required: 0.0,
            certified: true,
        };
        for (x, y) in [(0.0, 1.0), (1.0, 0.0), (0.0, 0.0), (1.0, 1.0)] {
            let rep = verify_dp(Mechanism::RandomizedResponse, &p, &[x], &[y], &[])?;
            row.max_ratio = row.max_ratio.max(rep.analytic_ratio);
            row.certified &= rep.certified;
        }
        let keep = crate::channels::rr_keep_probability(eps);
        let k = KernelMatrix::new(vec![0, 1], vec![0, 1], vec![vec![keep, 1.0 - keep], vec![1.0 - keep, keep]])?;
        let cert = kernel_dp_certificate(&k, eps, 0.0)?;
        row.max_delta_required = row.max_delta_required.max(cert.delta_required);
        row.certified &= cert.certified && cert.max_log_ratio <= eps + CHECK_TOL;
        out.push(row);
    }
    Ok(out)
}
