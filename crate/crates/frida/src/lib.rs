//! Filesystem-facing companion to `frida-core`: dataset and checkpoint file
//! formats, run configuration, the episode harness, report emission, and the
//! `frida` command-line interface.

pub mod ckpt;
pub mod cli;
pub mod config;
pub mod dsio;
pub mod harness;
pub mod report;

/// 64-bit FNV-1a, used for config hashing and checkpoint checksums.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_known_values() {
        // reference values of 64-bit FNV-1a
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }
}
