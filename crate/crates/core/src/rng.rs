//! Named random streams.
//!
//! Every stream is a ChaCha8 generator keyed by `(seed, cell, sequence)` with
//! the role selecting the stream id, so any cell or sequence can be
//! reproduced without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// What a stream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamRole {
    Decode,
    Baseline,
    Oracle,
    Prompt,
}

impl StreamRole {
    fn id(self) -> u64 {
        match self {
            StreamRole::Decode => 1,
            StreamRole::Baseline => 2,
            StreamRole::Oracle => 3,
            StreamRole::Prompt => 4,
        }
    }
}

pub fn stream_rng(seed: u64, cell: u64, sequence: u64, role: StreamRole) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&cell.to_le_bytes());
    key[16..24].copy_from_slice(&sequence.to_le_bytes());
    key[24..].copy_from_slice(b"blkspec1");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(role.id());
    rng
}
