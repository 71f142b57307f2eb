//! Seeded random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{ImageTensor, Shape};

/// The stream type used by every stochastic operation in the crate.
pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes integer keys into one 64-bit seed (splitmix64 finaliser per key).
///
/// Used by the harness to derive per-trial seeds from
/// `(master, tuple, combination, trial)`.
pub fn derive_seed(keys: &[u64]) -> u64 {
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    for &k in keys {
        state = splitmix(state ^ splitmix(k.wrapping_add(0xD1B5_4A32_D192_ED03)));
    }
    state
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// I.i.d. standard normal image.
pub fn standard_normal<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> ImageTensor {
    let data = (0..shape.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    ImageTensor::from_parts(shape, data)
}
