//! Named random substreams derived from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Mobility,
    Mac,
    Cam,
    Cpm,
    Ldm,
    Training,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Mobility => "mobility",
            Stream::Mac => "mac",
            Stream::Cam => "traffic.cam",
            Stream::Cpm => "traffic.cpm",
            Stream::Ldm => "traffic.ldm",
            Stream::Training => "training",
        }
    }
}

/// 64-bit seed of `stream` under run seed `seed`.
pub fn stream_seed(seed: u64, stream: Stream) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.name().bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

pub fn stream(seed: u64, stream: Stream) -> SimRng {
    SimRng::seed_from_u64(stream_seed(seed, stream))
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
