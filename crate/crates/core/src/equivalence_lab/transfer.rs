//! Moving a distributed protocol between experiments through a kernel, with
//! exact risks computed by enumerating every transcript configuration.

use serde::{Deserialize, Serialize};

use super::deficiency::{Grid2, RootSmoother, TwoCellPair, OVERFLOW};
use super::measure::{apply_kernel, tv_exact, FiniteMeasure, KernelMatrix};
use crate::channels::{rr_keep_probability, transcript_cardinality, BitString, Transcript};
use crate::error::{invalid, Error, Result};
use crate::models::neumaier_sum;
use crate::transforms::DEFAULT_C_SHIFT;

/// Largest number of joint transcript configurations enumerated.
pub const OUTCOME_LIMIT: usize = 1_000_000;

/// One kernel per server, all on the same data support.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiniteProtocol {
    pub kernels: Vec<KernelMatrix>,
}

impl FiniteProtocol {
    pub fn new(kernels: Vec<KernelMatrix>) -> Result<Self> {
        if kernels.is_empty() {
            return invalid("a protocol needs at least one server");
        }
        if kernels.iter().any(|k| k.source() != kernels[0].source()) {
            return invalid("all server kernels must share a source support");
        }
        Ok(FiniteProtocol { kernels })
    }

    pub fn m(&self) -> usize {
        self.kernels.len()
    }
}

/// Null law and alternative laws of one local sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiniteExperiment {
    pub null: FiniteMeasure,
    pub alternatives: Vec<FiniteMeasure>,
}

impl FiniteExperiment {
    pub fn points(&self) -> impl Iterator<Item = &FiniteMeasure> {
        std::iter::once(&self.null).chain(&self.alternatives)
    }
}

/// Server j runs C then K^j.
pub fn protocol_transfer(protocol: &FiniteProtocol, c: &KernelMatrix) -> Result<FiniteProtocol> {
    FiniteProtocol::new(protocol.kernels.iter().map(|k| c.then(k)).collect::<Result<_>>()?)
}

/// Joint law of the m transcripts when every server sees an independent
/// sample from `data`: all configurations in lexicographic order of the
/// servers' target atoms.
pub fn transcript_law(protocol: &FiniteProtocol, data: &FiniteMeasure) -> Result<(Vec<Vec<i64>>, Vec<f64>)> {
    let laws: Vec<FiniteMeasure> = protocol.kernels.iter().map(|k| apply_kernel(data, k)).collect::<Result<_>>()?;
    let mut size: usize = 1;
    for l in &laws {
        size = size
            .checked_mul(l.len())
            .filter(|s| *s <= OUTCOME_LIMIT)
            .ok_or_else(|| Error::TooLarge(format!("more than {OUTCOME_LIMIT} transcript configurations")))?;
    }
    let mut outcomes = Vec::with_capacity(size);
    let mut probs = Vec::with_capacity(size);
    let mut idx = vec![0usize; laws.len()];
    for _ in 0..size {
        outcomes.push(idx.iter().zip(&laws).map(|(i, l)| l.atoms()[*i]).collect());
        probs.push(idx.iter().zip(&laws).map(|(i, l)| l.weights()[*i]).product());
        for j in (0..idx.len()).rev() {
            idx[j] += 1;
            if idx[j] < laws[j].len() {
                break;
            }
            idx[j] = 0;
        }
    }
    Ok((outcomes, probs))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactRisk {
    pub type_one: f64,
    pub worst_type_two: f64,
    pub risk: f64,
    pub type_two: Vec<f64>,
}

/// Risks of the deterministic test that rejects on the configurations for
/// which `reject` is true.
pub fn exact_risk(exp: &FiniteExperiment, protocol: &FiniteProtocol, reject: &dyn Fn(&[i64]) -> bool) -> Result<ExactRisk> {
    let reject_prob = |data: &FiniteMeasure| -> Result<f64> {
        let (outs, probs) = transcript_law(protocol, data)?;
        Ok(neumaier_sum(outs.iter().zip(&probs).filter(|(o, _)| reject(o)).map(|(_, p)| *p)))
    };
    let type_one = reject_prob(&exp.null)?;
    let type_two: Vec<f64> = exp
        .alternatives
        .iter()
        .map(|a| reject_prob(a).map(|r| 1.0 - r))
        .collect::<Result<_>>()?;
    let worst_type_two = type_two.iter().copied().fold(0.0, f64::max);
    Ok(ExactRisk {
        type_one,
        worst_type_two,
        risk: type_one + worst_type_two,
        type_two,
    })
}

/// Finite-kernel privacy certificate: the largest log ratio K(y|x)/K(y|x')
/// and the smallest δ with K(A|x) ≤ e^ε K(A|x') + δ for all events A.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KernelDpCertificate {
    pub epsilon: f64,
    pub delta: f64,
    pub max_log_ratio: f64,
    pub delta_required: f64,
    pub certified: bool,
}

pub fn kernel_dp_certificate(k: &KernelMatrix, epsilon: f64, delta: f64) -> Result<KernelDpCertificate> {
    if !(epsilon > 0.0) || !(0.0..1.0).contains(&delta) {
        return invalid("need ε > 0 and δ in [0, 1)");
    }
    let e = epsilon.exp();
    let mut max_log_ratio: f64 = 0.0;
    let mut delta_required: f64 = 0.0;
    for a in k.rows() {
        for b in k.rows() {
            let mut excess = 0.0;
            for (x, y) in a.iter().zip(b) {
                excess += (x - e * y).max(0.0);
                if *x > 0.0 {
                    max_log_ratio = max_log_ratio.max(if *y > 0.0 { (x / y).ln() } else { f64::INFINITY });
                }
            }
            delta_required = delta_required.max(excess);
        }
    }
    Ok(KernelDpCertificate {
        epsilon,
        delta,
        max_log_ratio,
        delta_required,
        certified: delta_required <= delta + 1e-12,
    })
}

/// Number of distinct b-bit payloads a kernel can emit, checked against the
/// transcript cardinality 2^b. Target atoms are read as b-bit integers.
pub fn reachable_payloads(k: &KernelMatrix, b: usize) -> Result<(usize, u128)> {
    let mut seen = 0usize;
    let mut card = 1u128 << b.min(127);
    for (j, &y) in k.target().iter().enumerate() {
        if k.rows().iter().all(|r| r[j] == 0.0) {
            continue;
        }
        if y < 0 || (b < 63 && y >= 1 << b) {
            return invalid(format!("payload {y} does not fit in {b} bits"));
        }
        let mut bits = BitString::new();
        bits.push_uint(y as u64, b);
        card = transcript_cardinality(&Transcript::bits(bits, 0))?;
        seen += 1;
    }
    Ok((seen, card))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransferCheck {
    pub m: usize,
    /// sup_f TV(Q_f C, P_f) over the null and the alternatives.
    pub sup_tv: f64,
    pub tests: usize,
    /// Largest gap in a single rejection probability, over tests and f.
    pub max_point_gap: f64,
    pub max_type_one_gap: f64,
    pub max_type_two_gap: f64,
    /// Largest gap in type I + worst type II.
    pub max_risk_gap: f64,
    /// Every type I and worst type II gap is at most m·sup_tv.
    pub per_term_holds: bool,
    /// The summed risk gap is at most 2m·sup_tv.
    pub sum_holds: bool,
    /// Whether the summed gap also happened to stay below m·sup_tv.
    pub sum_within_m: bool,
    pub bits_ok: Option<bool>,
    pub dp_certified: Option<bool>,
}

/// Every deterministic test on the outcome set, as rejection regions
/// indexed by a bit mask over configurations.
pub fn all_tests(outcomes: usize) -> Result<impl Iterator<Item = u64>> {
    if outcomes > 16 {
        return Err(Error::TooLarge(format!("2^{outcomes} tests")));
    }
    Ok(0..(1u64 << outcomes))
}

/// Exact comparison of a protocol on experiment P with its transfer to Q
/// through C, for every deterministic test on the transcripts.
pub fn risk_gap_check(
    p_exp: &FiniteExperiment,
    q_exp: &FiniteExperiment,
    protocol: &FiniteProtocol,
    c: &KernelMatrix,
    bits: Option<usize>,
    dp: Option<(f64, f64)>,
) -> Result<TransferCheck> {
    if p_exp.alternatives.len() != q_exp.alternatives.len() {
        return invalid("experiments must share the parameter grid");
    }
    let transferred = protocol_transfer(protocol, c)?;
    let mut sup_tv: f64 = 0.0;
    for (p, q) in p_exp.points().zip(q_exp.points()) {
        sup_tv = sup_tv.max(tv_exact(&apply_kernel(q, c)?, p)?);
    }
    let (outcomes, _) = transcript_law(protocol, &p_exp.null)?;
    let (outcomes_q, _) = transcript_law(&transferred, &q_exp.null)?;
    if outcomes != outcomes_q {
        return Err(Error::Construction("transferred protocol changed the transcript space".into()));
    }
    let laws_p: Vec<Vec<f64>> = p_exp.points().map(|f| transcript_law(protocol, f).map(|x| x.1)).collect::<Result<_>>()?;
    let laws_q: Vec<Vec<f64>> = q_exp.points().map(|f| transcript_law(&transferred, f).map(|x| x.1)).collect::<Result<_>>()?;
    let m = protocol.m();
    let bound = m as f64 * sup_tv;
    let mut out = TransferCheck {
        m,
        sup_tv,
        tests: 0,
        max_point_gap: 0.0,
        max_type_one_gap: 0.0,
        max_type_two_gap: 0.0,
        max_risk_gap: 0.0,
        per_term_holds: true,
        sum_holds: true,
        sum_within_m: true,
        bits_ok: None,
        dp_certified: None,
    };
    for mask in all_tests(outcomes.len())? {
        let rej = |probs: &[f64]| neumaier_sum(probs.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, p)| *p));
        let rp: Vec<f64> = laws_p.iter().map(|l| rej(l)).collect();
        let rq: Vec<f64> = laws_q.iter().map(|l| rej(l)).collect();
        for (a, b) in rp.iter().zip(&rq) {
            out.max_point_gap = out.max_point_gap.max((a - b).abs());
        }
        let t1 = (rp[0] - rq[0]).abs();
        let worst = |r: &[f64]| r[1..].iter().map(|x| 1.0 - x).fold(0.0, f64::max);
        let t2 = (worst(&rp) - worst(&rq)).abs();
        let risk_gap = ((rp[0] + worst(&rp)) - (rq[0] + worst(&rq))).abs();
        out.max_type_one_gap = out.max_type_one_gap.max(t1);
        out.max_type_two_gap = out.max_type_two_gap.max(t2);
        out.max_risk_gap = out.max_risk_gap.max(risk_gap);
        out.tests += 1;
    }
    out.per_term_holds = out.max_point_gap <= bound + 1e-12 && out.max_type_one_gap <= bound + 1e-12 && out.max_type_two_gap <= bound + 1e-12;
    out.sum_holds = out.max_risk_gap <= 2.0 * bound + 1e-12;
    out.sum_within_m = out.max_risk_gap <= bound + 1e-12;
    if let Some(b) = bits {
        let mut ok = true;
        for k in &transferred.kernels {
            let (seen, card) = reachable_payloads(k, b)?;
            ok &= seen as u128 <= card && k.target().len() <= 1 << b;
        }
        out.bits_ok = Some(ok);
    }
    if let Some((eps, delta)) = dp {
        let mut ok = true;
        for (orig, comp) in protocol.kernels.iter().zip(&transferred.kernels) {
            ok &= kernel_dp_certificate(orig, eps, delta)?.certified && kernel_dp_certificate(comp, eps, delta)?.certified;
        }
        out.dp_certified = Some(ok);
    }
    Ok(out)
}

/// What each server does with its discretized Gaussian observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalRule {
    /// Sign of coordinate (j mod 2) relative to the null mean.
    Sign,
    /// As `Sign`, then randomized response with the given ε.
    SignRr(f64),
    /// Whether the squared distance to the null mean exceeds its null median.
    Vote,
}

/// The d = 2 instance: P is the discretized Gaussian experiment, Q the
/// binomial one, C the root smoother, and every server sends one bit.
pub struct TwoCellTransfer {
    pub pair: TwoCellPair,
    pub p_exp: FiniteExperiment,
    pub q_exp: FiniteExperiment,
    pub c: KernelMatrix,
}

impl TwoCellTransfer {
    /// `q1[0]` is the null; the remaining entries are alternatives.
    pub fn new(n: u64, q1: &[f64], bins: usize) -> Result<Self> {
        if q1.len() < 2 {
            return invalid("need a null and at least one alternative");
        }
        let pair = TwoCellPair::new(n, q1, bins, 7.0)?;
        let c = RootSmoother::new(n, DEFAULT_C_SHIFT, pair.grid)?.to_matrix()?;
        let p_exp = FiniteExperiment {
            null: pair.gaussian[0].clone(),
            alternatives: pair.gaussian[1..].to_vec(),
        };
        let q_exp = FiniteExperiment {
            null: pair.binomial[0].clone(),
            alternatives: pair.binomial[1..].to_vec(),
        };
        Ok(TwoCellTransfer { pair, p_exp, q_exp, c })
    }

    fn null_root(&self) -> [f64; 2] {
        let q = self.pair.q1[0];
        [q.sqrt(), (1.0 - q).sqrt()]
    }

    /// One bit per server on the Gaussian grid.
    pub fn protocol(&self, m: usize, rule: LocalRule) -> Result<FiniteProtocol> {
        let g: Grid2 = self.pair.grid;
        let atoms = g.atoms();
        let center = self.null_root();
        let sd2 = 1.0 / (2.0 * self.pair.n as f64);
        // median of sd²·χ²₂
        let vote_cut = sd2 * 2.0 * std::f64::consts::LN_2;
        let kernels = (0..m)
            .map(|j| {
                let rows = atoms
                    .iter()
                    .map(|&a| {
                        let bit = if a == OVERFLOW {
                            true
                        } else {
                            let (i, k) = (a as usize / g.bins, a as usize % g.bins);
                            let x = [g.center(i) - center[0], g.center(k) - center[1]];
                            match rule {
                                LocalRule::Sign | LocalRule::SignRr(_) => x[j % 2] >= 0.0,
                                LocalRule::Vote => x[0] * x[0] + x[1] * x[1] > vote_cut,
                            }
                        };
                        let p1 = match rule {
                            LocalRule::SignRr(eps) => {
                                let keep = rr_keep_probability(eps);
                                if bit {
                                    keep
                                } else {
                                    1.0 - keep
                                }
                            }
                            _ => bit as u8 as f64,
                        };
                        vec![1.0 - p1, p1]
                    })
                    .collect();
                KernelMatrix::new(atoms.clone(), vec![0, 1], rows)
            })
            .collect::<Result<_>>()?;
        FiniteProtocol::new(kernels)
    }

    pub fn check(&self, m: usize, rule: LocalRule) -> Result<TransferCheck> {
        let protocol = self.protocol(m, rule)?;
        let dp = match rule {
            LocalRule::SignRr(eps) => Some((eps, 0.0)),
            _ => None,
        };
        risk_gap_check(&self.p_exp, &self.q_exp, &protocol, &self.c, Some(1), dp)
    }
}
