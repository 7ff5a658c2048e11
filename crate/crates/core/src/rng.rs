//! Counter-based random streams.
//!
//! Every replica and every layer inside a replica draws from its own
//! ChaCha8 stream, addressed by `(seed, replica, layer)`. Nothing is shared
//! between replicas, so results do not depend on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Spacing between layer sub-streams, in 32-bit words.
const LAYER_STRIDE: u128 = 1 << 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub replica: u64,
    pub layer: u64,
}

impl StreamKey {
    pub fn new(seed: u64, replica: u64) -> Self {
        Self {
            seed,
            replica,
            layer: 0,
        }
    }

    pub fn with_layer(self, layer: u64) -> Self {
        Self { layer, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(expand_seed(self.seed));
        rng.set_stream(self.replica);
        rng.set_word_pos(LAYER_STRIDE * self.layer as u128);
        rng
    }
}

fn expand_seed(seed: u64) -> [u8; 32] {
    // splitmix64
    let mut state = seed;
    let mut out = [0u8; 32];
    for chunk in out.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    out
}
