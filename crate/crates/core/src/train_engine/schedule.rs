use rand::Rng;
use serde::{Deserialize, Serialize};

/// Events per stacked frame during training, drawn uniformly.
pub const TRAIN_EVENT_RANGE: (usize, usize) = (5000, 9000);
/// Events per stacked frame at evaluation.
pub const EVAL_EVENT_COUNT: usize = 7000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventCount {
    Fixed(usize),
    /// Inclusive range.
    Uniform(usize, usize),
}

impl EventCount {
    pub fn training() -> Self {
        EventCount::Uniform(TRAIN_EVENT_RANGE.0, TRAIN_EVENT_RANGE.1)
    }

    pub fn evaluation() -> Self {
        EventCount::Fixed(EVAL_EVENT_COUNT)
    }

    /// Fixed counts consume no randomness.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match *self {
            EventCount::Fixed(n) => n,
            EventCount::Uniform(lo, hi) => rng.random_range(lo..=hi),
        }
    }
}

/// Uniform integer in `[5000, 9000]`.
pub fn sample_event_count<R: Rng + ?Sized>(rng: &mut R) -> usize {
    EventCount::training().draw(rng)
}

/// Cosine annealing from `base` at iteration 0 to 0 at iteration `total - 1`.
pub fn cosine_lr(base: f64, iteration: usize, total: usize) -> f64 {
    if total <= 1 {
        return base;
    }
    let progress = (iteration.min(total - 1)) as f64 / (total - 1) as f64;
    0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn event_counts_in_range_with_expected_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws: Vec<usize> = (0..10_000).map(|_| sample_event_count(&mut rng)).collect();
        assert!(draws.iter().all(|&n| (5000..=9000).contains(&n)));
        let mean = draws.iter().sum::<usize>() as f64 / draws.len() as f64;
        assert!((mean - 7000.0).abs() < 60.0, "{mean}");
        assert_eq!(EventCount::evaluation().draw(&mut rng), 7000);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(1e-4, 0, 100), 1e-4);
        assert!(cosine_lr(1e-4, 99, 100) <= 1e-6 * 1e-4);
        assert!((cosine_lr(1e-4, 50, 101) - 0.5e-4).abs() < 1e-18);
        let lrs: Vec<f64> = (0..100).map(|i| cosine_lr(1.0, i, 100)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }
}
