//! Seed bookkeeping.
//!
//! Every random draw in the crate comes from a ChaCha20 generator keyed by
//! `master` with its stream word set to `stream`. Child seeds keep the master
//! key and scramble the stream with SplitMix64, so each Monte Carlo replica
//! owns a reproducible generator regardless of worker scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngSeed {
    pub master: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngSeed {
    pub fn new(master: u64) -> Self {
        RngSeed { master, stream: 0 }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }

    /// The `index`-th child of this seed.
    pub fn child(&self, index: u64) -> RngSeed {
        RngSeed { master: self.master, stream: splitmix64(self.stream ^ splitmix64(index.wrapping_add(0x5EED))) }
    }

    /// A child keyed by a label, for separating independent phases of one run.
    pub fn derive(&self, label: &str) -> RngSeed {
        let h = label.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01B3));
        self.child(h)
    }
}

/// A complex number whose real and imaginary parts are independent N(0, σ²).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(sigma * re, sigma * im)
}

/// A Haar-random unit vector in C^dim.
pub fn haar_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<C64> {
    loop {
        let v: Vec<C64> = (0..dim).map(|_| complex_normal(rng, 1.0)).collect();
        let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|z| z / n).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let s = RngSeed { master: 9, stream: 4 };
        let a: Vec<u64> = (0..4).map(|_| 0).scan(s.rng(), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(s.rng(), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn children_differ() {
        let s = RngSeed::new(1);
        assert_ne!(s.child(0), s.child(1));
        assert_ne!(s.child(0).child(1), s.child(1).child(0));
        assert_ne!(s.derive("pilot"), s.derive("heldout"));
        let x: u64 = s.child(0).rng().random();
        let y: u64 = s.child(1).rng().random();
        assert_ne!(x, y);
    }

    #[test]
    fn first_draw_is_pinned() {
        // Pins the generator algorithm; a change here breaks stored experiments.
        let x: u64 = RngSeed::new(42).rng().random();
        assert_eq!(x, 9482535800248027256);
    }

    #[test]
    fn haar_is_unit() {
        let mut r = RngSeed::new(3).rng();
        let v = haar_vector(&mut r, 5);
        let n: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        assert!((n - 1.0).abs() < 1e-14);
    }
}
