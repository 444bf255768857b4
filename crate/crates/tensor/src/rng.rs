use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};

pub type Rng = ChaCha8Rng;

/// Environment variable that overrides every run seed.
pub const SEED_ENV: &str = "GEAN_SEED";

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `GEAN_SEED` if set, otherwise `default`.
pub fn seed_from_env(default: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse::<u64>()
            .map_err(|_| TensorError::Config(format!("{SEED_ENV} must be an unsigned 64-bit decimal, got {s:?}"))),
        Err(_) => Ok(default),
    }
}

/// Independent sub-stream seed (splitmix64 finalizer over `base ^ stream`).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
