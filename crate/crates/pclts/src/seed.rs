//! Deterministic seed derivation.
//!
//! Every random stream in the crate is derived from a user-supplied seed via
//! `fold`, so runs are reproducible across platforms and the standard
//! library's (deliberately unstable) hashers are never involved.

/// One round of the splitmix64 output function.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into `seed`, producing a new well-mixed seed.
pub fn fold(seed: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix(seed);
    for &p in parts {
        state = splitmix(state ^ p);
    }
    state
}

/// Stable bit-level encoding of an `f64` for seed folding.
pub fn float_bits(v: f64) -> u64 {
    // Normalize -0.0 so that equal grid values hash equally.
    if v == 0.0 {
        0
    } else {
        v.to_bits()
    }
}
