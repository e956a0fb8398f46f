//! Seeded quasi-random sample points inside a box, filtered by chart constraints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Chart;

pub const DEFAULT_SEED: u64 = 20_240_601;
pub const DEFAULT_SAMPLES: usize = 20;

const PRIMES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplingError {
    #[error("box has {got} ranges, chart has {want} coordinates")]
    Dim { got: usize, want: usize },
    #[error("only {found} of {wanted} points satisfy the domain constraints")]
    Exhausted { found: usize, wanted: usize },
    #[error("empty or inverted range for coordinate {0}")]
    BadRange(usize),
}

/// Axis-aligned box `[lo_i, hi_i]`, one range per chart coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingBox {
    pub ranges: Vec<(f64, f64)>,
}

impl SamplingBox {
    pub fn new(ranges: Vec<(f64, f64)>) -> Self {
        SamplingBox { ranges }
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.ranges.iter().map(|(a, b)| 0.5 * (a + b)).collect()
    }
}

/// Radical inverse of `i` in `base`.
pub fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut acc = 0.0;
    let mut f = inv;
    while i > 0 {
        acc += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    acc
}

/// Halton points in the unit cube with a seeded Cranley-Patterson shift.
pub fn halton(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len(), "at most {} dimensions", PRIMES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    (1..=count as u64)
        .map(|i| (0..dim).map(|k| (radical_inverse(i, PRIMES[k]) + shift[k]).fract()).collect())
        .collect()
}

/// `count` points of the box that satisfy every chart constraint.
pub fn sample_points(chart: &Chart, bx: &SamplingBox, count: usize, seed: u64) -> Result<Vec<Vec<f64>>, SamplingError> {
    let d = chart.dim();
    if bx.dim() != d {
        return Err(SamplingError::Dim { got: bx.dim(), want: d });
    }
    for (k, (lo, hi)) in bx.ranges.iter().enumerate() {
        if !(lo <= hi) {
            return Err(SamplingError::BadRange(k));
        }
    }
    let budget = count.max(1) * 200;
    let mut out = Vec::with_capacity(count);
    for unit in halton(d, budget, seed) {
        let p: Vec<f64> = unit.iter().zip(&bx.ranges).map(|(s, (lo, hi))| lo + s * (hi - lo)).collect();
        if chart.contains(&p) {
            out.push(p);
            if out.len() == count {
                return Ok(out);
            }
        }
    }
    Err(SamplingError::Exhausted { found: out.len(), wanted: count })
}

/// `count` quasi-random values in `[lo, hi]`, sorted.
pub fn sample_interval(lo: f64, hi: f64, count: usize, seed: u64) -> Vec<f64> {
    let mut v: Vec<f64> = halton(1, count, seed).into_iter().map(|p| lo + p[0] * (hi - lo)).collect();
    v.sort_by(f64::total_cmp);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::parse;

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert!((radical_inverse(5, 3) - (2.0 / 3.0 + 1.0 / 9.0)).abs() < 1e-15);
    }

    #[test]
    fn points_respect_constraints_and_are_reproducible() {
        let chart = Chart::new(&["t", "x", "u"], vec![parse("u - x").unwrap()]).unwrap();
        let bx = SamplingBox::new(vec![(0.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)]);
        let a = sample_points(&chart, &bx, 20, 7).unwrap();
        let b = sample_points(&chart, &bx, 20, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p[2] > p[1]));
        assert_ne!(a, sample_points(&chart, &bx, 20, 8).unwrap());
    }

    #[test]
    fn impossible_domain_is_reported() {
        let chart = Chart::new(&["t", "x", "u"], vec![parse("-1 - t^2").unwrap()]).unwrap();
        let bx = SamplingBox::new(vec![(0.0, 1.0); 3]);
        assert!(matches!(sample_points(&chart, &bx, 3, 1), Err(SamplingError::Exhausted { found: 0, .. })));
    }
}
