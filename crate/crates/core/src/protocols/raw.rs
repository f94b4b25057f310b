//! Lossless forwarding of a whole local sample.

use crate::channels::BitString;
use crate::error::{invalid, Result};
use crate::models::CountVector;
use crate::transforms::counts_from_raw;

pub fn ceil_log2(x: u64) -> usize {
    if x <= 1 {
        0
    } else {
        (64 - (x - 1).leading_zeros()) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoding {
    /// n labels of ⌈log₂ d⌉ bits.
    Labels,
    /// d counts of ⌈log₂(n+1)⌉ bits.
    Counts,
}

/// Bits needed to send the sample losslessly, with the cheaper encoding.
pub fn lossless_bits(d: usize, n: u64) -> (usize, Encoding) {
    let labels = n as usize * ceil_log2(d as u64);
    let counts = d * ceil_log2(n + 1);
    if labels <= counts {
        (labels.max(1), Encoding::Labels)
    } else {
        (counts.max(1), Encoding::Counts)
    }
}

pub fn encode_sample(raw: &[u32], d: usize) -> Result<BitString> {
    let n = raw.len() as u64;
    let (_, enc) = lossless_bits(d, n);
    let mut bits = BitString::new();
    match enc {
        Encoding::Labels => {
            let w = ceil_log2(d as u64);
            for &x in raw {
                if x as usize >= d {
                    return invalid(format!("label {x} out of range"));
                }
                bits.push_uint(x as u64, w);
            }
        }
        Encoding::Counts => {
            let w = ceil_log2(n + 1);
            for &c in counts_from_raw(raw, d)?.counts() {
                bits.push_uint(c, w);
            }
        }
    }
    if bits.is_empty() {
        bits.push(false);
    }
    Ok(bits)
}

pub fn encode_counts(counts: &CountVector) -> Result<BitString> {
    let d = counts.d();
    let n = counts.n();
    let (_, enc) = lossless_bits(d, n);
    match enc {
        Encoding::Counts => {
            let w = ceil_log2(n + 1);
            let mut bits = BitString::new();
            for &c in counts.counts() {
                bits.push_uint(c, w);
            }
            if bits.is_empty() {
                bits.push(false);
            }
            Ok(bits)
        }
        Encoding::Labels => {
            let raw: Vec<u32> = counts
                .counts()
                .iter()
                .enumerate()
                .flat_map(|(k, &c)| std::iter::repeat_n(k as u32, c as usize))
                .collect();
            encode_sample(&raw, d)
        }
    }
}

pub fn decode_counts(bits: &BitString, d: usize, n: u64) -> Result<CountVector> {
    let (need, enc) = lossless_bits(d, n);
    if bits.len() != need {
        return invalid(format!("expected {need} bits, got {}", bits.len()));
    }
    match enc {
        Encoding::Labels => {
            let w = ceil_log2(d as u64);
            let raw: Vec<u32> = (0..n as usize).map(|i| bits.read_uint(i * w, w) as u32).collect();
            counts_from_raw(&raw, d)
        }
        Encoding::Counts => {
            let w = ceil_log2(n + 1);
            CountVector::new((0..d).map(|k| bits.read_uint(k * w, w)).collect(), n)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{sample_raw_with, SimplexVector};
    use crate::rng;

    #[test]
    fn budgets() {
        assert_eq!(lossless_bits(2, 1), (1, Encoding::Labels));
        assert_eq!(lossless_bits(1024, 8), (80, Encoding::Labels));
        assert_eq!(lossless_bits(4096, 8).0, 96);
        assert_eq!(lossless_bits(2, 1000).1, Encoding::Counts);
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(5), 3);
        assert_eq!(ceil_log2(8), 3);
    }

    #[test]
    fn single_label_transcript() {
        let bits = encode_sample(&[1], 2).unwrap();
        assert_eq!(bits.len(), 1);
        assert!(bits.get(0));
    }

    #[test]
    fn roundtrip() {
        let mut r = rng::stream(3, &[]);
        for &(d, n) in &[(2usize, 1u64), (5, 20), (64, 3), (3, 500), (1, 4)] {
            let q = SimplexVector::uniform(d);
            for _ in 0..50 {
                let raw = sample_raw_with(&q, n, &mut r);
                let c = counts_from_raw(&raw, d).unwrap();
                let bits = encode_sample(&raw, d).unwrap();
                assert_eq!(decode_counts(&bits, d, n).unwrap(), c);
                assert_eq!(decode_counts(&encode_counts(&c).unwrap(), d, n).unwrap(), c);
            }
        }
    }
}
