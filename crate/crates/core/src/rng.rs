//! Seed derivation for independent random streams.

/// Mixes `master` and a stream index into a well-spread 64-bit seed
/// (splitmix64 finalizer applied twice).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(master) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Fixed stream indices used inside one test run.
pub(crate) mod stream {
    pub const OUTCOME_CV: u64 = 1;
    pub const TREATMENT_CV: u64 = 2;
    pub const PI_CV: u64 = 3;
    pub const MULTIPLIER: u64 = 4;
}
