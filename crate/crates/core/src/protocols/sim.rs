//! Replicate simulation. The full route simulates every server and decodes
//! transcripts at the center; for the Gaussian model the aggregate-level route
//! draws the same aggregate statistic from its exact law.

use rand::Rng;
use rand_distr::{Binomial, ChiSquared, Distribution, StandardNormal};

use super::{raw, Aggregator, Constraint, Model, ProtocolSpec, Randomness, Sampler};
use crate::channels::{
    self, dp_bit, dp_mechanism, gaussian_scale, laplace_scale, quantize_local, quantize_shared_rows,
    rr_keep_probability, sign_bit, BitString, Mechanism, Payload, SharedRandomness, Transcript,
};
use crate::error::{invalid, Error, Result};
use crate::models::{
    noise_scale_for, sample_counts_with, sample_gaussian_with, sample_raw_with, GaussianMean, SimplexVector, Truth,
};
use crate::numerics::{chi2_quantile, noncentral_chi2_sf, normal_cdf};
use crate::rng::{self, tag, Stream};
use crate::transforms::{center_at_null, root_transform, GAUSS_RESCALE};

/// Far below the lattice spacing of every discrete statistic in the crate.
pub const TIE_BREAK: f64 = 1e-9;

#[derive(Clone, Debug)]
enum Source {
    Counts(SimplexVector),
    Gauss(GaussianMean),
}

/// A protocol bound to a null and a truth, with everything that does not vary
/// across replicates computed once.
#[derive(Clone, Debug)]
pub struct Prepared {
    spec: ProtocolSpec,
    q0: SimplexVector,
    sqrt_q0: Vec<f64>,
    source: Source,
    /// Standardized mean (θ − √q0)/σ_n for Gaussian truths.
    mu: Vec<f64>,
    vote_cut: f64,
    sos_null_mean: f64,
    fast: bool,
    vote_p: f64,
}

fn keep_prob(spec: &ProtocolSpec) -> Option<f64> {
    match (spec.constraint, spec.constraint.mechanism()) {
        (Constraint::Dp { epsilon, .. }, Some(Mechanism::RandomizedResponse)) => Some(rr_keep_probability(epsilon)),
        _ => None,
    }
}

fn through_rr(p: f64, keep: Option<f64>) -> f64 {
    match keep {
        Some(k) => p * k + (1.0 - p) * (1.0 - k),
        None => p,
    }
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("valid binomial").sample(rng)
    }
}

fn group_sizes(m: usize, groups: usize) -> Vec<u64> {
    (0..groups).map(|g| ((m - g).div_ceil(groups)) as u64).collect()
}

impl Prepared {
    pub fn new(spec: &ProtocolSpec, q0: &SimplexVector, truth: &Truth) -> Result<Self> {
        spec.validate()?;
        if q0.d() != spec.d {
            return Err(Error::Dimension {
                expected: spec.d,
                got: q0.d(),
            });
        }
        if truth.d() != spec.d {
            return Err(Error::Dimension {
                expected: spec.d,
                got: truth.d(),
            });
        }
        let sqrt_q0 = q0.sqrt();
        let source = match (spec.model, truth) {
            (Model::Multinomial, Truth::Multinomial(q)) => Source::Counts(q.clone()),
            (Model::Multinomial, Truth::Gaussian(_)) => {
                return invalid("a multinomial protocol cannot run on a Gaussian truth")
            }
            (Model::Gaussian, Truth::Multinomial(q)) => Source::Gauss(GaussianMean::from_simplex(q, spec.n)?),
            (Model::Gaussian, Truth::Gaussian(g)) => Source::Gauss(g.clone()),
        };
        let sigma_n = noise_scale_for(spec.n);
        let mu = match &source {
            Source::Gauss(g) => g.theta().iter().zip(&sqrt_q0).map(|(t, s)| (t - s) / sigma_n).collect(),
            Source::Counts(_) => Vec::new(),
        };
        let vote_cut = chi2_quantile(spec.d as f64, 0.5);
        let noise_var = match (spec.constraint.dp_params(), spec.constraint.mechanism()) {
            (Some(p), Some(Mechanism::Laplace)) => 2.0 * laplace_scale(&p, spec.d).powi(2),
            (Some(p), Some(Mechanism::Gaussian)) => gaussian_scale(&p, spec.d).powi(2),
            _ => 0.0,
        };
        let exact_gauss = matches!(&source, Source::Gauss(g) if (g.noise_scale() - sigma_n).abs() <= 1e-15 * sigma_n);
        let fast = spec.sampler == Sampler::Auto
            && exact_gauss
            && !(spec.aggregator == Aggregator::SumOfSquares && spec.constraint.dp_params().is_some());
        let mut prep = Prepared {
            spec: spec.clone(),
            q0: q0.clone(),
            sqrt_q0,
            source,
            mu,
            vote_cut,
            sos_null_mean: spec.d as f64 * (1.0 + noise_var),
            fast,
            vote_p: f64::NAN,
        };
        if prep.fast && spec.aggregator == Aggregator::LocalVote {
            let lambda: f64 = prep.mu.iter().map(|x| x * x).sum();
            let p = noncentral_chi2_sf(spec.d as f64, lambda, vote_cut);
            prep.vote_p = through_rr(p, keep_prob(spec));
        }
        Ok(prep)
    }

    pub fn spec(&self) -> &ProtocolSpec {
        &self.spec
    }

    pub fn uses_fast_route(&self) -> bool {
        self.fast
    }

    /// One aggregate statistic for the replicate keyed by `path`.
    /// One draw of the statistic plus an independent tie-breaking jitter of
    /// size below `TIE_BREAK`, which makes tests on lattice-valued
    /// statistics randomized at the boundary.
    pub fn sample(&self, seed: u64, path: &[u64]) -> Result<f64> {
        let t = if self.fast {
            self.sample_fast(&mut rng::stream(seed, path))
        } else {
            let (ts, shared) = server_transcripts(self, seed, path)?;
            aggregate(&self.spec, &self.q0, &ts, shared)?
        };
        Ok(t + TIE_BREAK * tie_uniform(seed, path))
    }

    /// Standardized local statistic: roughly N(mean, I) with unit noise.
    fn local_vector(&self, rng: &mut Stream) -> Result<Vec<f64>> {
        let n = self.spec.n as f64;
        match &self.source {
            Source::Counts(q) => {
                let c = sample_counts_with(q, self.spec.n, rng);
                let root = root_transform(&c, self.spec.c_shift);
                let scale = GAUSS_RESCALE * (2.0 * n).sqrt();
                Ok(center_at_null(&root.values, &self.q0)?.into_iter().map(|x| x * scale).collect())
            }
            Source::Gauss(g) => {
                let x = sample_gaussian_with(g, rng);
                let inv = (2.0 * n).sqrt();
                Ok(x.iter().zip(&self.sqrt_q0).map(|(a, b)| (a - b) * inv).collect())
            }
        }
    }

    fn sample_fast(&self, rng: &mut Stream) -> f64 {
        let spec = &self.spec;
        let d = spec.d;
        let m = spec.m;
        let keep = keep_prob(spec);
        match spec.aggregator {
            Aggregator::SumOfSquares => {
                let lambda: f64 = m as f64 * self.mu.iter().map(|x| x * x).sum::<f64>();
                let z: f64 = StandardNormal.sample(rng);
                let mut s = (lambda.sqrt() + z).powi(2);
                if d > 1 {
                    s += ChiSquared::new((d - 1) as f64).expect("df").sample(rng);
                }
                s - self.sos_null_mean
            }
            Aggregator::LocalVote => {
                let votes = binomial(m as u64, self.vote_p, rng) as f64;
                (votes - m as f64 / 2.0) / (m as f64).sqrt()
            }
            Aggregator::SumOfBits => match spec.randomness {
                Randomness::Local => {
                    let mut cover = vec![0u64; d];
                    match spec.constraint {
                        Constraint::Bandwidth { b } => {
                            for j in 0..m {
                                for k in channels::local_assignment(j, b, d) {
                                    cover[k] += 1;
                                }
                            }
                        }
                        _ => {
                            for j in 0..m {
                                cover[j % d] += 1;
                            }
                        }
                    }
                    let mut t = 0.0;
                    for k in 0..d {
                        if cover[k] == 0 {
                            continue;
                        }
                        let p = through_rr(normal_cdf(self.mu[k]), keep);
                        let ones = binomial(cover[k], p, rng) as f64;
                        let s = 2.0 * ones - cover[k] as f64;
                        t += s * s - cover[k] as f64;
                    }
                    t
                }
                Randomness::Shared => {
                    let rows = spec.rows_per_group();
                    let total = spec.groups * rows;
                    let norm_mu = self.mu.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let g: Vec<f64> = (0..total).map(|_| StandardNormal.sample(rng)).collect();
                    let mut sq: f64 = g.iter().map(|x| x * x).sum();
                    if d > total {
                        sq += ChiSquared::new((d - total) as f64).expect("df").sample(rng);
                    }
                    let scale = norm_mu / sq.sqrt();
                    let sizes = group_sizes(m, spec.groups);
                    let mut t = 0.0;
                    for (gi, &size) in sizes.iter().enumerate() {
                        for r in 0..rows {
                            let nu = g[gi * rows + r] * scale;
                            let p = through_rr(normal_cdf(nu), keep);
                            let ones = binomial(size, p, rng) as f64;
                            let s = 2.0 * ones - size as f64;
                            t += s * s - size as f64;
                        }
                    }
                    t
                }
            },
            Aggregator::PooledChiSquare => unreachable!("pooled chi-square is multinomial only"),
        }
    }
}

/// Every server's transcript for one replicate, plus the shared seed.
pub fn server_transcripts(prep: &Prepared, seed: u64, path: &[u64]) -> Result<(Vec<Transcript>, u64)> {
    let spec = &prep.spec;
    let mut p = path.to_vec();
    p.push(tag::SHARED);
    let shared_seed = rng::derive(seed, &p);
    p.pop();
    let rotation = if spec.randomness == Randomness::Shared && spec.aggregator == Aggregator::SumOfBits {
        Some(SharedRandomness::partial(shared_seed, spec.d, spec.groups * spec.rows_per_group())?)
    } else {
        None
    };
    let keep = keep_prob(spec);
    let mut out = Vec::with_capacity(spec.m);
    p.push(tag::SERVER);
    p.push(0);
    let last = p.len() - 1;
    for j in 0..spec.m {
        p[last] = j as u64;
        let mut r = rng::stream(seed, &p);
        let t = match spec.aggregator {
            Aggregator::PooledChiSquare => {
                let q = match &prep.source {
                    Source::Counts(q) => q,
                    Source::Gauss(_) => unreachable!(),
                };
                let (_, enc) = raw::lossless_bits(spec.d, spec.n);
                let bits = match enc {
                    raw::Encoding::Labels => raw::encode_sample(&sample_raw_with(q, spec.n, &mut r), spec.d)?,
                    raw::Encoding::Counts => raw::encode_counts(&sample_counts_with(q, spec.n, &mut r))?,
                };
                Transcript::bits(bits, j)
            }
            Aggregator::SumOfSquares => {
                let z = prep.local_vector(&mut r)?;
                match spec.constraint.dp_params() {
                    Some(dp) => dp_mechanism(&z, &dp, j, &mut r)?,
                    None => Transcript {
                        payload: Payload::Real(z),
                        server_id: j,
                        mode: channels::Mode::Unconstrained,
                        mechanism: None,
                    },
                }
            }
            Aggregator::LocalVote => {
                let z = prep.local_vector(&mut r)?;
                let bit = z.iter().map(|x| x * x).sum::<f64>() > prep.vote_cut;
                match spec.constraint {
                    Constraint::Dp { epsilon, .. } => dp_bit(bit, epsilon, j, &mut r),
                    _ => Transcript::bits(BitString::from_bools(&[bit]), j),
                }
            }
            Aggregator::SumOfBits => {
                let z = prep.local_vector(&mut r)?;
                match (spec.randomness, spec.constraint) {
                    (Randomness::Local, Constraint::Bandwidth { b }) => quantize_local(&z, b, j),
                    (Randomness::Local, Constraint::Dp { epsilon, .. }) => dp_bit(sign_bit(z[j % spec.d]), epsilon, j, &mut r),
                    (Randomness::Shared, c) => {
                        let rows = spec.rows_per_group();
                        let g = j % spec.groups;
                        let t = quantize_shared_rows(&z, rotation.as_ref().unwrap(), g * rows..(g + 1) * rows, j)?;
                        match c {
                            Constraint::Dp { epsilon, .. } => {
                                dp_bit(t.as_bits().unwrap().get(0), epsilon, j, &mut r)
                            }
                            _ => t,
                        }
                    }
                    _ => unreachable!("validated"),
                }
            }
        };
        debug_assert!(keep.is_none() || t.mode == channels::Mode::Dp);
        out.push(t);
    }
    Ok((out, shared_seed))
}

fn bits_of(t: &Transcript) -> Result<&BitString> {
    t.as_bits()
        .ok_or_else(|| Error::Validation(format!("server {} sent a real payload to a bit aggregator", t.server_id)))
}

/// The center's statistic from the transcripts alone.
pub fn aggregate(spec: &ProtocolSpec, q0: &SimplexVector, ts: &[Transcript], _shared_seed: u64) -> Result<f64> {
    let d = spec.d;
    let m = ts.len() as f64;
    match spec.aggregator {
        Aggregator::SumOfSquares => {
            let mut sum = vec![0.0; d];
            for t in ts {
                match &t.payload {
                    Payload::Real(v) if v.len() == d => sum.iter_mut().zip(v).for_each(|(a, b)| *a += b),
                    _ => return invalid("sum_of_squares expects real vectors of length d"),
                }
            }
            let noise_var = match (spec.constraint.dp_params(), spec.constraint.mechanism()) {
                (Some(p), Some(Mechanism::Laplace)) => 2.0 * laplace_scale(&p, d).powi(2),
                (Some(p), Some(Mechanism::Gaussian)) => gaussian_scale(&p, d).powi(2),
                _ => 0.0,
            };
            Ok(sum.iter().map(|x| x * x).sum::<f64>() / m - d as f64 * (1.0 + noise_var))
        }
        Aggregator::LocalVote => {
            let mut votes = 0.0;
            for t in ts {
                votes += bits_of(t)?.get(0) as u8 as f64;
            }
            Ok((votes - m / 2.0) / m.sqrt())
        }
        Aggregator::SumOfBits => {
            let (rows, slots) = match spec.randomness {
                Randomness::Local => (0, d),
                Randomness::Shared => (spec.rows_per_group(), spec.groups * spec.rows_per_group()),
            };
            let mut s = vec![0.0f64; slots];
            let mut c = vec![0.0f64; slots];
            for t in ts {
                let bits = bits_of(t)?;
                let j = t.server_id;
                let slots_of: Vec<usize> = match (spec.randomness, spec.constraint) {
                    (Randomness::Local, Constraint::Bandwidth { b }) => channels::local_assignment(j, b, d),
                    (Randomness::Local, _) => vec![j % d],
                    (Randomness::Shared, _) => {
                        let g = j % spec.groups;
                        (g * rows..(g + 1) * rows).collect()
                    }
                };
                if bits.len() != slots_of.len() {
                    return invalid(format!("server {j} sent {} bits, expected {}", bits.len(), slots_of.len()));
                }
                for (i, k) in slots_of.into_iter().enumerate() {
                    s[k] += if bits.get(i) { 1.0 } else { -1.0 };
                    c[k] += 1.0;
                }
            }
            Ok(s.iter().zip(&c).map(|(a, b)| a * a - b).sum())
        }
        Aggregator::PooledChiSquare => {
            let mut pooled = vec![0u64; d];
            for t in ts {
                let counts = raw::decode_counts(bits_of(t)?, d, spec.n)?;
                pooled.iter_mut().zip(counts.counts()).for_each(|(a, b)| *a += b);
            }
            let total: u64 = pooled.iter().sum();
            let mm = total as f64;
            Ok(pooled
                .iter()
                .zip(q0.probs())
                .map(|(&nk, &p)| {
                    let e = mm * p;
                    let nk = nk as f64;
                    ((nk - e).powi(2) - nk) / p
                })
                .sum::<f64>()
                / mm)
        }
    }
}

/// The uniform behind the tie-breaking jitter of replicate `path`.
pub fn tie_uniform(seed: u64, path: &[u64]) -> f64 {
    let mut p = path.to_vec();
    p.push(tag::AUX);
    rng::stream(seed, &p).random::<f64>()
}

/// Center-side decision from received transcripts; `tie_u` in [0, 1) is the
/// center's own tie-breaking draw.
pub fn decide_from_transcripts(
    spec: &ProtocolSpec,
    q0: &SimplexVector,
    ts: &[Transcript],
    shared_seed: u64,
    tie_u: f64,
) -> Result<bool> {
    let t = spec.threshold()?;
    if !(0.0..1.0).contains(&tie_u) {
        return invalid("tie-breaking draw must lie in [0, 1)");
    }
    Ok(aggregate(spec, q0, ts, shared_seed)? + TIE_BREAK * tie_u > t)
}
