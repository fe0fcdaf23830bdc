//! Named, independently positioned random streams derived from one seed.

use rand::{Error, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Stream ids for the consumers that draw randomness. Each consumer owns its
/// stream so changing one consumer's draw count never shifts another's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StreamId {
    Init,
    Policy,
    Environment,
    Buffer,
    KnowledgeBase,
    Project,
    Custom(u64),
}

impl StreamId {
    fn raw(self) -> u64 {
        match self {
            StreamId::Init => 1,
            StreamId::Policy => 2,
            StreamId::Environment => 3,
            StreamId::Buffer => 4,
            StreamId::KnowledgeBase => 5,
            StreamId::Project => 6,
            StreamId::Custom(n) => 1000 + n,
        }
    }
}

/// Serializable position of a stream: enough to resume it bit-identically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamPosition {
    pub seed: u64,
    pub stream: u64,
    /// ChaCha word position, decimal string (u128 does not fit JSON numbers).
    pub word_pos: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "StreamPosition", try_from = "StreamPosition")]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        Self::from_raw(seed, id.raw())
    }

    fn from_raw(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn position(&self) -> StreamPosition {
        StreamPosition {
            seed: self.seed,
            stream: self.stream,
            word_pos: self.rng.get_word_pos().to_string(),
        }
    }

    pub fn from_position(pos: &StreamPosition) -> Result<Self, std::num::ParseIntError> {
        let word_pos: u128 = pos.word_pos.parse()?;
        let mut s = Self::from_raw(pos.seed, pos.stream);
        s.rng.set_word_pos(word_pos);
        Ok(s)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        rand::Rng::gen::<f64>(self)
    }
}

impl From<RngStream> for StreamPosition {
    fn from(s: RngStream) -> Self {
        s.position()
    }
}

impl TryFrom<StreamPosition> for RngStream {
    type Error = std::num::ParseIntError;
    fn try_from(p: StreamPosition) -> Result<Self, Self::Error> {
        RngStream::from_position(&p)
    }
}

impl PartialEq for RngStream {
    fn eq(&self, other: &Self) -> bool {
        self.position() == other.position()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), Error> {
        self.rng.try_fill_bytes(dest)
    }
}
