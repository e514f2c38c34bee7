use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// The generator handed out by [`fork_rng`].
pub type StreamRng = ChaCha8Rng;

/// What a random stream is used for. Part of the stream label, so two
/// consumers at the same coordinates never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Purpose {
    Batch = 1,
    Tie = 2,
    Init = 3,
    Partition = 4,
    Sparsify = 5,
    Eval = 6,
    Noise = 7,
    Subsample = 8,
    Probe = 9,
    Trial = 10,
    Synthetic = 11,
}

/// Coordinates of a random stream: `(round, step, edge, device, purpose)`.
///
/// Fields that do not apply to a consumer stay at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamLabel {
    pub round: u64,
    pub step: u64,
    pub edge: u64,
    pub device: u64,
    pub purpose: Purpose,
}

impl StreamLabel {
    pub fn new(purpose: Purpose) -> Self {
        Self {
            round: 0,
            step: 0,
            edge: 0,
            device: 0,
            purpose,
        }
    }

    pub fn round(mut self, round: usize) -> Self {
        self.round = round as u64;
        self
    }

    pub fn step(mut self, step: usize) -> Self {
        self.step = step as u64;
        self
    }

    pub fn edge(mut self, edge: usize) -> Self {
        self.edge = edge as u64;
        self
    }

    pub fn device(mut self, device: usize) -> Self {
        self.device = device as u64;
        self
    }
}

/// Derives the substream for `label` under `master_seed`.
///
/// The ChaCha key is the SHA-256 of the seed and every label field, so
/// equal inputs always give the same stream and distinct labels give
/// unrelated ones. Streams do not depend on the order in which they are
/// requested, which is what keeps parallel runs bit-identical to
/// sequential ones.
pub fn fork_rng(master_seed: u64, label: StreamLabel) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(b"hiersign/stream/v1");
    hasher.update(master_seed.to_le_bytes());
    hasher.update(label.round.to_le_bytes());
    hasher.update(label.step.to_le_bytes());
    hasher.update(label.edge.to_le_bytes());
    hasher.update(label.device.to_le_bytes());
    hasher.update([label.purpose as u8]);
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(key)
}
