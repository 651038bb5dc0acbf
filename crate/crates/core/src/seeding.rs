//! Splittable seed derivation.
//!
//! Every source of randomness in the crate is a ChaCha stream seeded from a
//! master seed through `derive_seed`, so replications, folds and Monte-Carlo
//! draws are independent, reproducible, and insensitive to execution order.

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from `(master, stream, index)`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    mix(mix(master ^ mix(stream)).wrapping_add(mix(index)))
}
