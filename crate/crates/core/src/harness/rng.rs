//! Independent seeded random streams keyed by purpose and position, so that
//! switching a loss term on or off never shifts another consumer's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Prototypes = 1,
    Holdout = 2,
    Sentence = 3,
    Render = 4,
    Init = 5,
    Shuffle = 6,
    DropReal = 7,
    DropPseudo = 8,
    Edit = 9,
    Gradcheck = 10,
}

pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, v) in key.chunks_exact_mut(8).zip([seed, purpose as u64, a, b]) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
