//! Seed derivation.
//!
//! Every random stream in the engine is keyed by a master seed plus a tag
//! path (frame index, box index, stream name, ...). Streams are derived by
//! hashing, so the value a stream produces never depends on how many other
//! streams were drawn before it or on which thread asks for it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// One component of a seed path.
#[derive(Debug, Clone, Copy)]
pub enum Tag<'a> {
    Num(u64),
    Str(&'a str),
}

impl From<u64> for Tag<'_> {
    fn from(v: u64) -> Self {
        Tag::Num(v)
    }
}

impl From<usize> for Tag<'_> {
    fn from(v: usize) -> Self {
        Tag::Num(v as u64)
    }
}

impl<'a> From<&'a str> for Tag<'a> {
    fn from(v: &'a str) -> Self {
        Tag::Str(v)
    }
}

/// Derives a child seed from `master` and a tag path.
pub fn derive(master: u64, path: &[Tag<'_>]) -> u64 {
    let mut h = Sha256::new();
    h.update(b"taleforge.seed.v1");
    h.update(master.to_le_bytes());
    for tag in path {
        match tag {
            Tag::Num(n) => {
                h.update([0u8]);
                h.update(n.to_le_bytes());
            }
            Tag::Str(s) => {
                h.update([1u8]);
                h.update((s.len() as u64).to_le_bytes());
                h.update(s.as_bytes());
            }
        }
    }
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

/// A ChaCha8 generator for the stream at `path`.
pub fn rng(master: u64, path: &[Tag<'_>]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, path))
}

/// Shorthand for building a tag path inline: `tags!["frame", k, "box", j]`.
#[macro_export]
macro_rules! tags {
    ($($t:expr),* $(,)?) => {
        &[$($crate::seeds::Tag::from($t)),*]
    };
}
