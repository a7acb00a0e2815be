//! Deterministic, stream-keyed random number generation.
//!
//! Every independent unit of stochastic work (a simulated trajectory, a block
//! of parameter draws) owns a private ChaCha12 stream derived from the master
//! seed and a collision-free stream id. Work units can therefore run in any
//! order, or in parallel, and still reproduce the same numbers.
//!
//! Stream ids partition the 64-bit id space: trajectory streams pack
//! `(sample, input row)` into the low 63 bits with the top bit clear, while
//! label-derived streams (parameter draws) hash their label and force the top
//! bit set. The two families cannot collide.

use alloc::string::String;
use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

/// Factory for per-unit RNG streams under one master seed.
#[derive(Debug, Clone, Copy)]
pub struct Streams {
    master: u64,
}

impl Streams {
    pub fn new(master: u64) -> Self {
        Streams { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Stream for the simulated trajectory of one (sample, input row) pair.
    pub fn trajectory(&self, sample: u32, row: u32) -> ChaCha12Rng {
        self.with_stream(trajectory_id(sample, row))
    }

    /// Stream for a labeled parameter block, e.g. ("coefs", transition 2).
    pub fn labeled(&self, label: &str, index: u64) -> ChaCha12Rng {
        self.with_stream(label_id(label, index))
    }

    fn with_stream(&self, id: u64) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.master);
        rng.set_stream(id);
        rng
    }
}

/// Top bit clear. Samples are masked to 31 bits; runs anywhere near 2^31 PSA
/// samples are far outside this engine's design envelope.
pub(crate) fn trajectory_id(sample: u32, row: u32) -> u64 {
    ((sample as u64 & 0x7FFF_FFFF) << 32) | row as u64
}

/// FNV-1a over the label bytes and index, with the top bit forced set.
pub(crate) fn label_id(label: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in label.as_bytes().iter().chain(index.to_le_bytes().iter()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h | (1 << 63)
}

/// Uniform draw on the open interval (0, 1).
///
/// Maps the top 53 bits of a u64 to the midpoint of its dyadic cell, so 0 and
/// 1 are unreachable and every draw is a valid probability.
pub fn u01(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard normal draw by inversion. Consumes exactly one uniform, so
/// parallel stream layouts stay aligned no matter what values are drawn.
pub fn std_normal(rng: &mut impl RngCore) -> f64 {
    crate::math::probit(u01(rng))
}

/// Diagnostic label for error messages about stream exhaustion or misuse.
pub(crate) fn _describe(label: &str, index: u64) -> String {
    alloc::format!("{label}#{index}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_spaces_are_disjoint() {
        assert_eq!(trajectory_id(0, 0), 0);
        assert_eq!(trajectory_id(1, 7), (1 << 32) | 7);
        assert!(trajectory_id(u32::MAX, u32::MAX) < (1 << 63));
        assert!(label_id("coefs", 0) >= (1 << 63));
        assert!(label_id("", u64::MAX) >= (1 << 63));
    }

    #[test]
    fn streams_reproduce_and_separate() {
        let s = Streams::new(42);
        let a: alloc::vec::Vec<u64> = (0..8).map(|_| s.trajectory(3, 5).next_u64()).collect();
        assert!(a.iter().all(|&x| x == a[0]), "same stream must reproduce");

        let mut t1 = s.trajectory(3, 5);
        let mut t2 = s.trajectory(3, 6);
        let mut t3 = s.labeled("coefs", 1);
        let x1 = t1.next_u64();
        assert_ne!(x1, t2.next_u64());
        assert_ne!(x1, t3.next_u64());

        let other = Streams::new(43);
        assert_ne!(x1, other.trajectory(3, 5).next_u64());
    }

    #[test]
    fn u01_stays_strictly_inside_unit_interval() {
        let s = Streams::new(7);
        let mut rng = s.trajectory(0, 0);
        for _ in 0..10_000 {
            let u = u01(&mut rng);
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn std_normal_moments_are_sane() {
        let s = Streams::new(123);
        let mut rng = s.labeled("check", 0);
        let n = 100_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            let z = std_normal(&mut rng);
            sum += z;
            sum2 += z * z;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
