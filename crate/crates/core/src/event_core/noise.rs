use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::stack::StackedEventFrame;
use crate::error::{Error, Result};

/// Adds i.i.d. `N(0, sigma²)` to every element and clamps back to `[0, 1]`.
pub fn add_temporal_noise<R: Rng + ?Sized>(
    frame: &StackedEventFrame,
    sigma: f64,
    rng: &mut R,
) -> Result<StackedEventFrame> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let mut out = frame.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    out.data.mapv_inplace(|v| (v as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32);
    Ok(out)
}
