//! Per-stage seed derivation.
//!
//! Every random stream in a run is seeded with `derive_seed(master, tag)`:
//! the 64-bit FNV-1a hash of the UTF-8 `tag` is XORed into `master` and the
//! result is passed through one SplitMix64 finalizer round. Tags are fixed
//! strings such as `"lowfi-map"`, `"vi"`, `"hmc"`, or `"round-3/hmc"`.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, tag: &str) -> u64 {
    splitmix64(master ^ fnv1a(tag.as_bytes()))
}
