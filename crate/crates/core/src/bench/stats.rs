//! Summary statistics for latency cells.
//!
//! Percentiles use the nearest-rank method and the deviation is the
//! population one, so a summary is a pure function of the samples.

use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary<F: Float> {
    pub count: usize,
    pub min: F,
    pub p50: F,
    pub p95: F,
    pub p99: F,
    pub max: F,
    pub mean: F,
    pub stddev: F,
    /// stddev / mean; zero when the mean is zero.
    pub cv: F,
}

pub type Summary64 = Summary<f64>;
pub type Summary32 = Summary<f32>;

/// Value at rank `ceil(p/100 * n)` (1-based) of sorted data.
pub fn nearest_rank<F: Float>(sorted: &[F], p: f64) -> Option<F> {
    if sorted.is_empty() || !(0.0..=100.0).contains(&p) {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

impl<F: Float> Summary<F> {
    /// `None` for an empty series or one containing NaN.
    pub fn of(samples: &[F]) -> Option<Self> {
        if samples.is_empty() || samples.iter().any(|x| x.is_nan()) {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = F::from(sorted.len()).unwrap();
        let mean = sorted.iter().fold(F::zero(), |acc, &x| acc + x) / n;
        let var = sorted.iter().fold(F::zero(), |acc, &x| acc + (x - mean) * (x - mean)) / n;
        let stddev = var.sqrt();
        let cv = if mean == F::zero() { F::zero() } else { stddev / mean };
        Some(Summary {
            count: sorted.len(),
            min: sorted[0],
            p50: nearest_rank(&sorted, 50.0)?,
            p95: nearest_rank(&sorted, 95.0)?,
            p99: nearest_rank(&sorted, 99.0)?,
            max: sorted[sorted.len() - 1],
            mean,
            stddev,
            cv,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_has_no_spread() {
        let s = Summary64::of(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!((s.stddev, s.cv), (0.0, 0.0));
    }

    #[test]
    fn small_series() {
        let s = Summary64::of(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!((s.mean, s.min, s.max, s.p50), (2.0, 1.0, 3.0, 2.0));
    }

    #[test]
    fn cv_uses_population_deviation() {
        // mean 100, population variance (0 + 100 + 100) / 3.
        let s = Summary64::of(&[100.0, 110.0, 90.0]).unwrap();
        let expected = (200.0f64 / 3.0).sqrt() / 100.0;
        assert!((s.cv - expected).abs() < 1e-12);
        assert!((s.cv - 0.0816).abs() < 1e-4);
        let s32 = Summary32::of(&[100.0, 110.0, 90.0]).unwrap();
        assert!((s32.cv - 0.0816).abs() < 1e-4);
    }

    #[test]
    fn nearest_rank_percentiles() {
        let data: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&data, 50.0), Some(50.0));
        assert_eq!(nearest_rank(&data, 95.0), Some(95.0));
        assert_eq!(nearest_rank(&data, 0.0), Some(1.0));
        assert_eq!(nearest_rank(&data, 100.0), Some(100.0));
        assert_eq!(nearest_rank(&[7.0, 9.0], 50.0), Some(7.0));
        assert!(Summary64::of(&[]).is_none());
    }
}
