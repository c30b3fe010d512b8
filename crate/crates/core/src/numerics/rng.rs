use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reproducible random stream addressed by `(seed, stream_id)`.
///
/// Backed by ChaCha8, whose output is a pure function of key, stream and block
/// counter, so a stream never depends on how other streams were consumed.
/// Workers take their own stream with [`RngStream::fork`].
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

// SplitMix64 finalizer: a bijection on u64.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream determined by this stream's `(seed, stream_id)` and `label`.
    ///
    /// The draw position of `self` is irrelevant. For a fixed parent the map
    /// from label to child stream id is a bijection, so distinct labels never
    /// share a stream.
    pub fn fork(&self, label: u64) -> RngStream {
        let salt = mix64(self.stream_id.wrapping_add(0x9E37_79B9_7F4A_7C15));
        RngStream::new(self.seed, mix64(label ^ salt))
    }

    /// Forks along a path of labels, e.g. `(epoch, example)`.
    pub fn fork_path(&self, labels: &[u64]) -> RngStream {
        labels.iter().fold(self.clone(), |s, &l| s.fork(l))
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngStream {
    /// Uniform integer in `[0, n)`.
    pub fn next_below(&mut self, n: u64) -> u64 {
        rand::Rng::random_range(self, 0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}
