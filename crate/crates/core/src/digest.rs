//! 64-bit mixing helpers for payload digests and seed derivation.

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The digest a correct SUT returns for a sample. Stands in for the
/// reference model's output on that input.
pub fn reference_digest(sample_index: u64) -> u64 {
    mix64(sample_index ^ 0x5a5a_0f0f_c3c3_3c3c)
}

/// A deterministic digest guaranteed to differ from the reference one.
pub fn wrong_digest(sample_index: u64) -> u64 {
    reference_digest(sample_index) ^ 0xdead_beef_0000_0001
}

/// Order-sensitive fold of per-sample digests into one value.
pub fn combine(digests: &[u64]) -> u64 {
    digests
        .iter()
        .fold(mix64(digests.len() as u64), |acc, &d| mix64(acc ^ d))
}

/// FNV-1a over a label, used to separate named random streams.
pub fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrong_never_matches_reference() {
        for i in 0..10_000 {
            assert_ne!(reference_digest(i), wrong_digest(i));
        }
    }

    #[test]
    fn combine_is_order_sensitive() {
        assert_ne!(combine(&[1, 2]), combine(&[2, 1]));
        assert_ne!(combine(&[]), combine(&[0]));
    }
}
