//! One-shot distributed testing protocols: specification, null calibration and
//! panel risk.

pub mod raw;
mod sim;

use serde::{Deserialize, Serialize};

use crate::channels::{DpParams, Mechanism};
use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::models::{AlternativePanel, SimplexVector, Truth};
use crate::rng::tag;

pub use sim::{aggregate, decide_from_transcripts, server_transcripts, Prepared, tie_uniform, TIE_BREAK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Multinomial,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Constraint {
    None,
    Bandwidth {
        b: usize,
    },
    Dp {
        epsilon: f64,
        #[serde(default)]
        delta: f64,
        #[serde(default = "default_clip")]
        clip_bound: f64,
        #[serde(default)]
        mechanism: Option<Mechanism>,
    },
}

fn default_clip() -> f64 {
    3.0
}

impl Constraint {
    pub fn dp_params(&self) -> Option<DpParams> {
        match *self {
            Constraint::Dp {
                epsilon,
                delta,
                clip_bound,
                ..
            } => Some(DpParams {
                epsilon,
                delta,
                clip_bound,
            }),
            _ => None,
        }
    }

    pub fn mechanism(&self) -> Option<Mechanism> {
        match self {
            Constraint::Dp { mechanism, .. } => {
                Some(mechanism.unwrap_or_else(|| Mechanism::additive_for(&self.dp_params().unwrap())))
            }
            _ => None,
        }
    }

    pub fn bits(&self) -> Option<usize> {
        match self {
            Constraint::Bandwidth { b } => Some(*b),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Constraint::None => "none",
            Constraint::Bandwidth { .. } => "bandwidth",
            Constraint::Dp { .. } => "dp",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Randomness {
    Local,
    Shared,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    /// ‖Σ_j y_j‖²/m minus its nominal null mean.
    SumOfSquares,
    /// Σ over (group, coordinate) of (Σ_j ±1)² minus the number of contributors.
    SumOfBits,
    /// Each server votes on its own chi-square statistic; the center counts votes.
    LocalVote,
    /// Unbiased chi-square on pooled counts from losslessly forwarded samples.
    PooledChiSquare,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// Aggregate-level sampling where its law is available in closed form.
    #[default]
    Auto,
    /// Always simulate each server and its transcript.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub model: Model,
    pub constraint: Constraint,
    pub randomness: Randomness,
    pub aggregator: Aggregator,
    pub m: usize,
    pub n: u64,
    pub d: usize,
    #[serde(default = "default_c_shift")]
    pub c_shift: f64,
    /// Shared mode: servers are split round-robin into this many groups, group g
    /// reading its own block of rotated coordinates.
    #[serde(default = "one")]
    pub groups: usize,
    #[serde(default)]
    pub sampler: Sampler,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

fn snake<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::from("?"),
    }
}

fn default_c_shift() -> f64 {
    crate::transforms::DEFAULT_C_SHIFT
}

fn one() -> usize {
    1
}

impl ProtocolSpec {
    pub fn new(
        model: Model,
        constraint: Constraint,
        randomness: Randomness,
        aggregator: Aggregator,
        m: usize,
        n: u64,
        d: usize,
    ) -> Self {
        ProtocolSpec {
            model,
            constraint,
            randomness,
            aggregator,
            m,
            n,
            d,
            c_shift: default_c_shift(),
            groups: 1,
            sampler: Sampler::Auto,
            threshold: None,
        }
    }

    /// Rotated coordinates read by each group.
    pub fn rows_per_group(&self) -> usize {
        match self.constraint {
            Constraint::Bandwidth { b } => b.min(self.d),
            _ => 1,
        }
    }

    /// Bits one server sends, or None for real-valued transcripts.
    pub fn bits_per_server(&self) -> Option<usize> {
        match (self.aggregator, self.constraint) {
            (Aggregator::SumOfSquares, _) => None,
            (Aggregator::LocalVote, _) => Some(1),
            (Aggregator::SumOfBits, Constraint::Bandwidth { b }) => Some(b.min(self.d)),
            (Aggregator::SumOfBits, _) => Some(1),
            (Aggregator::PooledChiSquare, _) => Some(raw::lossless_bits(self.d, self.n).0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.d == 0 {
            return invalid("m, n and d must all be at least 1");
        }
        if self.groups == 0 {
            return invalid("groups must be at least 1");
        }
        if !(self.c_shift.is_finite() && self.c_shift >= 0.0) {
            return invalid("c_shift must be finite and nonnegative");
        }
        if let Some(p) = self.constraint.dp_params() {
            p.validate()?;
        }
        if let Constraint::Bandwidth { b } = self.constraint {
            if b == 0 {
                return invalid("bit budget b must be at least 1");
            }
        }
        let mech = self.constraint.mechanism();
        match self.aggregator {
            Aggregator::SumOfSquares => match (self.constraint, mech) {
                (Constraint::None, _) => {}
                (Constraint::Dp { .. }, Some(Mechanism::Laplace)) => {}
                (Constraint::Dp { delta, .. }, Some(Mechanism::Gaussian)) if delta > 0.0 => {}
                (Constraint::Dp { .. }, Some(Mechanism::Gaussian)) => {
                    return invalid("the Gaussian mechanism needs delta > 0")
                }
                _ => return invalid("sum_of_squares needs an unconstrained or additive-noise channel"),
            },
            Aggregator::SumOfBits => match (self.constraint, mech) {
                (Constraint::Bandwidth { .. }, _) => {}
                (Constraint::Dp { .. }, Some(Mechanism::RandomizedResponse)) => {}
                _ => return invalid("sum_of_bits needs a bit budget or randomized response"),
            },
            Aggregator::LocalVote => match (self.constraint, mech) {
                (Constraint::None | Constraint::Bandwidth { .. }, _) => {}
                (Constraint::Dp { .. }, Some(Mechanism::RandomizedResponse)) => {}
                _ => return invalid("local_vote under privacy needs randomized response"),
            },
            Aggregator::PooledChiSquare => {
                if self.model != Model::Multinomial {
                    return invalid("pooled_chi_square forwards raw multinomial samples");
                }
                match self.constraint {
                    Constraint::None => {}
                    Constraint::Bandwidth { b } => {
                        let (need, _) = raw::lossless_bits(self.d, self.n);
                        if b < need {
                            return invalid(format!("budget {b} is below the lossless requirement {need}"));
                        }
                    }
                    Constraint::Dp { .. } => return invalid("pooled_chi_square cannot run under privacy"),
                }
            }
        }
        if self.groups > 1 && !(self.randomness == Randomness::Shared && self.aggregator == Aggregator::SumOfBits) {
            return invalid("groups > 1 applies to shared sum_of_bits protocols only");
        }
        if self.randomness == Randomness::Shared && self.aggregator == Aggregator::SumOfBits {
            let need = self.groups * self.rows_per_group();
            if need > self.d {
                return invalid(format!("{} groups of {} rotated rows exceed d = {}", self.groups, self.rows_per_group(), self.d));
            }
            if self.groups > self.m {
                return invalid("more groups than servers");
            }
        }
        if let Some(t) = self.threshold {
            if t.is_nan() {
                return invalid("threshold is NaN");
            }
        }
        Ok(())
    }

    /// Short human-readable name, e.g. `gaussian/shared/sum_of_bits/b=4/g=2`.
    pub fn label(&self) -> String {
        let mut s = format!(
            "{}/{}/{}",
            snake(&self.model),
            snake(&self.randomness),
            snake(&self.aggregator)
        );
        match self.constraint {
            Constraint::None => {}
            Constraint::Bandwidth { b } => s.push_str(&format!("/b={b}")),
            Constraint::Dp { epsilon, delta, .. } => {
                s.push_str(&format!("/eps={epsilon}"));
                if delta > 0.0 {
                    s.push_str(&format!("/delta={delta}"));
                }
                if let Some(mech) = self.constraint.mechanism() {
                    s.push_str(&format!("/{}", mech.name()));
                }
            }
        }
        if self.groups > 1 {
            s.push_str(&format!("/g={}", self.groups));
        }
        s
    }

    pub fn null_truth(&self, q0: &SimplexVector) -> Truth {
        Truth::Multinomial(q0.clone())
    }

    pub fn threshold(&self) -> Result<f64> {
        self.threshold.ok_or(Error::Uncalibrated)
    }
}

/// Protocol that forwards every local sample losslessly and tests on pooled counts.
pub fn raw_forwarding_protocol(d: usize, n: u64, m: usize) -> ProtocolSpec {
    let (b, _) = raw::lossless_bits(d, n);
    ProtocolSpec::new(
        Model::Multinomial,
        Constraint::Bandwidth { b },
        Randomness::Local,
        Aggregator::PooledChiSquare,
        m,
        n,
        d,
    )
}

/// Aggregate statistic for one replicate keyed by `path`.
pub fn statistic(spec: &ProtocolSpec, q0: &SimplexVector, truth: &Truth, seed: u64, path: &[u64]) -> Result<f64> {
    Prepared::new(spec, q0, truth)?.sample(seed, path)
}

/// One run; true means reject.
pub fn run_once(spec: &ProtocolSpec, q0: &SimplexVector, truth: &Truth, seed: u64) -> Result<bool> {
    let t = spec.threshold()?;
    spec.validate()?;
    if t == f64::INFINITY {
        return Ok(false);
    }
    if t == f64::NEG_INFINITY {
        return Ok(true);
    }
    Ok(statistic(spec, q0, truth, seed, &[tag::EVALUATION])? > t)
}

fn sample_many(prep: &Prepared, seed: u64, path: &[u64], reps: usize, exec: &Exec) -> Result<Vec<f64>> {
    exec.map(reps, |r| {
        let mut p = path.to_vec();
        p.push(r as u64);
        prep.sample(seed, &p)
    })
    .into_iter()
    .collect()
}

pub fn null_statistics(spec: &ProtocolSpec, q0: &SimplexVector, reps: usize, seed: u64, exec: &Exec) -> Result<Vec<f64>> {
    let prep = Prepared::new(spec, q0, &spec.null_truth(q0))?;
    sample_many(&prep, seed, &[tag::CALIBRATION], reps, exec)
}

/// Index of the ⌈(1−α)R⌉-th order statistic (0-based).
pub fn quantile_index(alpha: f64, reps: usize) -> usize {
    let k = ((1.0 - alpha) * reps as f64 - 1e-9).ceil() as usize;
    k.clamp(1, reps) - 1
}

/// Threshold at the empirical (1−α)-quantile of the null statistic; the test
/// rejects when the statistic strictly exceeds it.
pub fn calibrate(
    spec: &ProtocolSpec,
    q0: &SimplexVector,
    alpha: f64,
    reps: usize,
    seed: u64,
    exec: &Exec,
) -> Result<ProtocolSpec> {
    spec.validate()?;
    if q0.d() != spec.d {
        return Err(Error::Dimension {
            expected: spec.d,
            got: q0.d(),
        });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    if (reps as f64) < 100.0 / alpha - 1e-9 {
        return Err(Error::Calibration(format!(
            "{reps} replicates are too few for alpha = {alpha}; need at least {}",
            (100.0 / alpha).ceil()
        )));
    }
    let mut stats = null_statistics(spec, q0, reps, seed, exec)?;
    stats.sort_by(f64::total_cmp);
    let threshold = stats[quantile_index(alpha, reps)];
    if !threshold.is_finite() {
        return Err(Error::Numerical("null statistic is not finite".into()));
    }
    let mut out = spec.clone();
    out.threshold = Some(threshold);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RiskEstimate {
    pub type_one: f64,
    pub worst_type_two: f64,
    pub risk: f64,
    pub mc_stderr: f64,
    pub replicates: usize,
    pub worst_member: usize,
    pub type_two: Vec<f64>,
}

fn rejection_rate(prep: &Prepared, threshold: f64, seed: u64, path: &[u64], reps: usize, exec: &Exec) -> Result<f64> {
    if threshold == f64::INFINITY {
        return Ok(0.0);
    }
    if threshold == f64::NEG_INFINITY {
        return Ok(1.0);
    }
    let stats = sample_many(prep, seed, path, reps, exec)?;
    Ok(stats.iter().filter(|&&s| s > threshold).count() as f64 / reps as f64)
}

/// Type I error from fresh null replicates.
pub fn type_one_error(spec: &ProtocolSpec, q0: &SimplexVector, reps: usize, seed: u64, exec: &Exec) -> Result<f64> {
    let t = spec.threshold()?;
    let prep = Prepared::new(spec, q0, &spec.null_truth(q0))?;
    rejection_rate(&prep, t, seed, &[tag::NULL_EVAL], reps, exec)
}

/// Acceptance rate under one alternative; replicate streams depend only on
/// the member index, so members at different ρ share random numbers.
pub fn type_two_error(
    spec: &ProtocolSpec,
    q0: &SimplexVector,
    truth: &Truth,
    member: usize,
    reps: usize,
    seed: u64,
    exec: &Exec,
) -> Result<f64> {
    let t = spec.threshold()?;
    let prep = Prepared::new(spec, q0, truth)?;
    Ok(1.0 - rejection_rate(&prep, t, seed, &[tag::EVALUATION, member as u64], reps, exec)?)
}

pub fn combine_risk(type_one: f64, type_two: Vec<f64>, reps: usize) -> RiskEstimate {
    let (worst_member, worst) = type_two
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let r = reps as f64;
    let se = (type_one * (1.0 - type_one) / r + worst * (1.0 - worst) / r).sqrt();
    RiskEstimate {
        type_one,
        worst_type_two: worst,
        risk: type_one + worst,
        mc_stderr: se,
        replicates: reps,
        worst_member,
        type_two,
    }
}

/// Panel risk: type I plus the largest type II over the panel.
pub fn testing_risk(
    spec: &ProtocolSpec,
    q0: &SimplexVector,
    panel: &AlternativePanel,
    reps: usize,
    seed: u64,
    exec: &Exec,
) -> Result<RiskEstimate> {
    if panel.is_empty() {
        return invalid("panel is empty");
    }
    if reps == 0 {
        return invalid("reps must be positive");
    }
    let type_one = type_one_error(spec, q0, reps, seed, exec)?;
    let type_two = panel
        .members()
        .iter()
        .enumerate()
        .map(|(i, m)| type_two_error(spec, q0, &m.truth, i, reps, seed, exec))
        .collect::<Result<Vec<_>>>()?;
    Ok(combine_risk(type_one, type_two, reps))
}

/// Chi-square test on the pooled raw sample, the reference the protocols are
/// compared with when no constraint is imposed.
pub fn pooled_oracle_spec(spec: &ProtocolSpec) -> ProtocolSpec {
    let mut s = spec.clone();
    s.model = Model::Multinomial;
    s.constraint = Constraint::None;
    s.aggregator = Aggregator::PooledChiSquare;
    s.randomness = Randomness::Local;
    s.groups = 1;
    s.threshold = None;
    s
}

#[cfg(test)]
mod tests;
