//! Seeded bootstrap standard errors.
//!
//! Resampling is reproducible across implementations:
//!
//! * Generator: PCG-XSL-RR 128/64 (`Pcg64`), constructed as
//!   `Pcg64::new(seed as u128, BOOTSTRAP_STREAM)`.
//! * Index draw: Lemire's unbiased multiply-shift. For a range `n`, draw
//!   `x = next_u64()`, form the 128-bit product `x * n`, and accept
//!   `product >> 64` unless the low 64 bits are below `(2^64 - n) mod n`, in
//!   which case draw again.
//! * Order: resample `b = 0..B`, each drawing `n` indices in sequence from the
//!   same generator; the statistic of resample `b` is computed on the pairs at
//!   those indices, in draw order.
//! * The standard error is the population standard deviation (divisor `B`)
//!   of the `B` resampled statistics.

use rand_core::Rng;
use rand_pcg::Pcg64;

use super::MetricsError;

/// Stream selector for the bootstrap generator.
pub const BOOTSTRAP_STREAM: u128 = 0x5ca1_e5c1_1be0_b007;

/// Resample count used for every reported standard error.
pub const DEFAULT_RESAMPLES: usize = 1000;

pub fn bootstrap_rng(seed: u64) -> Pcg64 {
    Pcg64::new(seed as u128, BOOTSTRAP_STREAM)
}

/// Unbiased index in `0..n` (`n > 0`).
pub fn uniform_index(rng: &mut impl Rng, n: usize) -> usize {
    let n = n as u64;
    let threshold = n.wrapping_neg() % n;
    loop {
        let product = rng.next_u64() as u128 * n as u128;
        if (product as u64) >= threshold {
            return (product >> 64) as usize;
        }
    }
}

/// Standard error of `statistic` over `resamples` bootstrap samples.
pub fn bootstrap_se<T, F>(
    sample: &[T],
    statistic: F,
    resamples: usize,
    seed: u64,
) -> Result<f64, MetricsError>
where
    T: Clone,
    F: Fn(&[T]) -> Result<f64, MetricsError>,
{
    if sample.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if resamples == 0 {
        return Err(MetricsError::InsufficientData {
            needed: 1,
            found: 0,
        });
    }
    let n = sample.len();
    let mut rng = bootstrap_rng(seed);
    let mut buf: Vec<T> = Vec::with_capacity(n);
    let mut stats = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        buf.clear();
        for _ in 0..n {
            buf.push(sample[uniform_index(&mut rng, n)].clone());
        }
        stats.push(statistic(&buf)?);
    }
    let mean = stats.iter().sum::<f64>() / resamples as f64;
    let var = stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / resamples as f64;
    Ok(var.sqrt())
}
