//! Counter-based randomness: every draw site is keyed by
//! `(master_seed, purpose, client, step)`, so results are independent of
//! thread scheduling and identical across reruns.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    ClientSampling,
    Noise,
    Init,
    Probe,
    MonteCarlo,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::ClientSampling => 1,
            Purpose::Noise => 2,
            Purpose::Init => 3,
            Purpose::Probe => 4,
            Purpose::MonteCarlo => 5,
        }
    }
}

/// Root of all randomness in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub master_seed: u64,
}

impl RngStream {
    pub fn new(master_seed: u64) -> Self {
        RngStream { master_seed }
    }

    /// Independent generator for the given path. Same path, same bytes.
    pub fn stream(&self, purpose: Purpose, client: u64, step: u64) -> ChaCha12Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.master_seed.to_le_bytes());
        hasher.update(purpose.tag().to_le_bytes());
        hasher.update(client.to_le_bytes());
        hasher.update(step.to_le_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha12Rng::from_seed(seed)
    }

    /// Derives a child master seed, used by sweeps to key individual runs.
    pub fn derive(&self, salt_a: u64, salt_b: u64) -> RngStream {
        let mut hasher = Sha256::new();
        hasher.update(self.master_seed.to_le_bytes());
        hasher.update(salt_a.to_le_bytes());
        hasher.update(salt_b.to_le_bytes());
        let digest = hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        RngStream::new(u64::from_le_bytes(bytes))
    }
}
