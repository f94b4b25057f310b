//! Transcript-generating kernels: sign quantizers under a bit budget and
//! locally private mechanisms.

mod bits;
mod dp;
mod rotation;

pub use bits::BitString;
pub use dp::{
    clip, gaussian_delta_profile, gaussian_scale, laplace_scale, randomized_response, rr_keep_probability, verify_dp,
    DpParams, DpReport, Mechanism,
};
pub use rotation::{SharedRandomness, ORTHO_TOL};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Bits,
    Dp,
    /// Full real vector, no constraint.
    Unconstrained,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Bits(BitString),
    Real(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    pub payload: Payload,
    pub server_id: usize,
    pub mode: Mode,
    pub mechanism: Option<Mechanism>,
}

impl Transcript {
    pub fn bits(bits: BitString, server_id: usize) -> Self {
        Transcript {
            payload: Payload::Bits(bits),
            server_id,
            mode: Mode::Bits,
            mechanism: None,
        }
    }

    pub fn as_bits(&self) -> Option<&BitString> {
        match &self.payload {
            Payload::Bits(b) => Some(b),
            Payload::Real(_) => None,
        }
    }
}

/// sign(0) := +1.
#[inline]
pub fn sign_bit(x: f64) -> bool {
    x >= 0.0
}

/// Coordinates covered by server `server_id`: min(b, d) consecutive indices
/// starting at (server_id·b mod d), wrapping around.
pub fn local_assignment(server_id: usize, b: usize, d: usize) -> Vec<usize> {
    let k = b.min(d);
    let start = (server_id as u128 * b as u128 % d as u128) as usize;
    (0..k).map(|t| (start + t) % d).collect()
}

pub fn quantize_local(v: &[f64], b: usize, server_id: usize) -> Transcript {
    assert!(b >= 1, "bit budget must be positive");
    let mut bits = BitString::new();
    for k in local_assignment(server_id, b, v.len()) {
        bits.push(sign_bit(v[k]));
    }
    Transcript::bits(bits, server_id)
}

/// Sign bits of the first min(b, d) rotated coordinates.
pub fn quantize_shared(v: &[f64], b: usize, shared: &SharedRandomness, server_id: usize) -> Result<Transcript> {
    let k = b.min(v.len());
    quantize_shared_rows(v, shared, 0..k, server_id)
}

pub fn quantize_shared_rows(
    v: &[f64],
    shared: &SharedRandomness,
    rows: std::ops::Range<usize>,
    server_id: usize,
) -> Result<Transcript> {
    if v.len() != shared.d() {
        return Err(Error::Dimension {
            expected: shared.d(),
            got: v.len(),
        });
    }
    if rows.end > shared.k() {
        return Err(Error::Validation(format!(
            "rotation has {} rows, {} requested",
            shared.k(),
            rows.end
        )));
    }
    let bits = BitString::from_bools(&shared.apply_rows(v, rows).into_iter().map(sign_bit).collect::<Vec<_>>());
    Ok(Transcript::bits(bits, server_id))
}

pub fn dp_mechanism<R: Rng + ?Sized>(v: &[f64], p: &DpParams, server_id: usize, rng: &mut R) -> Result<Transcript> {
    let (out, mech) = dp::privatize(v, p, rng)?;
    Ok(Transcript {
        payload: Payload::Real(out),
        server_id,
        mode: Mode::Dp,
        mechanism: Some(mech),
    })
}

/// One randomized-response bit.
pub fn dp_bit<R: Rng + ?Sized>(bit: bool, epsilon: f64, server_id: usize, rng: &mut R) -> Transcript {
    Transcript {
        payload: Payload::Bits(BitString::from_bools(&[randomized_response(bit, epsilon, rng)])),
        server_id,
        mode: Mode::Dp,
        mechanism: Some(Mechanism::RandomizedResponse),
    }
}

/// 2^len for bit transcripts.
pub fn transcript_cardinality(t: &Transcript) -> Result<u128> {
    match (&t.mode, &t.payload) {
        (Mode::Bits, Payload::Bits(b)) => {
            if b.len() >= 128 {
                return Err(Error::TooLarge(format!("2^{} transcript values", b.len())));
            }
            Ok(1u128 << b.len())
        }
        _ => Err(Error::Validation("cardinality is defined for bit transcripts only".into())),
    }
}
