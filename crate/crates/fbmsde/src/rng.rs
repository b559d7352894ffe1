//! Deterministic random substreams.
//!
//! Every (component, path) pair gets its own generator whose seed is a hash
//! of the master seed and the two indices. Results therefore do not depend on
//! the order in which paths are processed, and the first `d'` components of a
//! `d`-component ensemble coincide with the `d'`-component ensemble.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Generator type used for all sampling.
pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the substream for `(component, path)` under `master`.
pub fn substream_seed(master: u64, component: u64, path: u64) -> u64 {
    let a = splitmix64(master ^ 0x6A09_E667_F3BC_C909);
    let b = splitmix64(a ^ component.wrapping_mul(0xD1B5_4A32_D192_ED03));
    splitmix64(b ^ path.wrapping_mul(0x8CB9_2BA7_2F3D_8DD7))
}

pub fn substream(master: u64, component: u64, path: u64) -> Rng {
    Rng::seed_from_u64(substream_seed(master, component, path))
}

/// Fill `out` with independent standard normals.
pub fn fill_normal(rng: &mut Rng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

/// Component index reserved for auxiliary streams (test functions, sampled points).
pub const AUX_COMPONENT: u64 = u64::MAX - 1;
