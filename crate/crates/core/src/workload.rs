//! Seeded random workloads.
//!
//! ChaCha8 seeded from a `u64`; values are drawn uniformly from the middle
//! quarter of a format's raw range, so a few additions cannot overflow.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fxp::{Fxp, QFormat};

pub struct Workload {
    rng: ChaCha8Rng,
}

impl Workload {
    pub fn new(seed: u64) -> Self {
        Workload {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn raw(&mut self, fmt: QFormat) -> i128 {
        let lo = fmt.min_raw() / 4;
        let hi = fmt.max_raw() / 4;
        self.rng.gen_range(lo..=hi)
    }

    pub fn fxp(&mut self, fmt: QFormat) -> Fxp {
        Fxp::from_raw(self.raw(fmt), fmt).expect("quarter range fits")
    }

    pub fn raws(&mut self, fmt: QFormat, n: usize) -> Vec<i128> {
        (0..n).map(|_| self.raw(fmt)).collect()
    }

    pub fn index(&mut self, b: usize) -> usize {
        self.rng.gen_range(0..b)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let f = QFormat::new(16, 8).unwrap();
        assert_eq!(Workload::new(7).raws(f, 32), Workload::new(7).raws(f, 32));
        assert_ne!(Workload::new(7).raws(f, 32), Workload::new(8).raws(f, 32));
    }

    #[test]
    fn stays_in_quarter_range() {
        let f = QFormat::new(8, 0).unwrap();
        let mut w = Workload::new(1);
        for r in w.raws(f, 1000) {
            assert!((-32..=31).contains(&r));
        }
    }
}
