//! Shared random generators for the core test suites.

use avsd_core::{LogDist, ViewFamily};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng_for(case: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_ca5e);
    rng.set_stream(case);
    rng
}

/// Random distribution from logits uniform in `[-spread, spread]`.
pub fn rand_dist(rng: &mut ChaCha8Rng, vocab: usize, spread: f64) -> LogDist<f64> {
    let z: Vec<f64> = (0..vocab).map(|_| rng.gen_range(-spread..spread)).collect();
    LogDist::from_logits(&z).unwrap()
}

/// Random uniform-weight family of `m` views.
pub fn rand_family(rng: &mut ChaCha8Rng, m: usize, vocab: usize, spread: f64) -> ViewFamily<f64> {
    let views = (0..m).map(|_| rand_dist(rng, vocab, spread)).collect();
    ViewFamily::uniform(views).unwrap()
}

/// Standard normal via Box-Muller (keeps the dev-dependency set small).
pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
