//! Per-replica random streams.
//!
//! Replica `r` of a run seeded with `master_seed` draws from ChaCha8 stream
//! `r` under key `master_seed`, so its output does not depend on which thread
//! runs it or in which order replicas are scheduled.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type ReplicaRng = ChaCha8Rng;

pub fn replica_rng(master_seed: u64, replica: u64) -> ReplicaRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replica);
    rng
}

/// Uniform on `(0, 1]` from the top 53 bits of one 64-bit draw.
#[inline]
pub fn uniform_open_closed<R: RngCore>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform on `[0, 1)`.
#[inline]
pub fn uniform<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Exponential waiting time by inverse CDF.
#[inline]
pub fn exponential<R: RngCore>(rng: &mut R, rate: f64) -> f64 {
    -uniform_open_closed(rng).ln() / rate
}

/// Uniform integer in `0..bound` (Lemire's multiply-shift with rejection).
#[inline]
pub fn below<R: RngCore>(rng: &mut R, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let x = rng.next_u64();
        let m = (x as u128) * (bound as u128);
        if (m as u64) >= threshold {
            return (m >> 64) as u64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = replica_rng(7, 3);
        let mut b = replica_rng(7, 3);
        let mut c = replica_rng(7, 4);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn exponential_mean() {
        let mut rng = replica_rng(1, 0);
        let k = 200_000;
        let mean: f64 = (0..k).map(|_| exponential(&mut rng, 2.0)).sum::<f64>() / k as f64;
        // sd of the mean is 0.5 / sqrt(k) ~ 1.1e-3
        assert!((mean - 0.5).abs() < 5e-3, "{mean}");
    }

    #[test]
    fn below_is_in_range_and_roughly_uniform() {
        let mut rng = replica_rng(2, 0);
        let mut hits = [0u32; 5];
        for _ in 0..50_000 {
            hits[below(&mut rng, 5) as usize] += 1;
        }
        for h in hits {
            assert!((9_300..10_700).contains(&h), "{hits:?}");
        }
    }
}
