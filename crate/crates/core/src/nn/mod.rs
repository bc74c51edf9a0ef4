//! Small deterministic tensor engine: 3D convolution, max pooling, dense
//! layers, ReLU, softmax cross-entropy and plain SGD, each with an analytic
//! backward pass. Tensors are single samples (no batch axis); batching is
//! done by the training loops, which reduce per-sample gradients in
//! ascending sample order.
//!
//! Convolutions are cross-correlations (no kernel flip).

mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod network;
mod tensor;

pub use checkpoint::{checkpoint_width, read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{finite_difference_grad, max_rel_error, rel_error};
pub use layers::{
    conv3d_backward, conv3d_forward, dense_backward, dense_forward, maxpool3d_backward, maxpool3d_forward,
    relu_backward, relu_forward, Layer, LayerCache, LayerSpec,
};
pub use loss::{softmax, softmax_cross_entropy};
pub use network::{sgd_step, train_step, Grads, NetCache, Network};
pub(crate) use network::ordered_reduce;
pub use tensor::{Scalar, Tensor};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error(transparent)]
    Format(#[from] crate::format::FormatError),
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T, NnError> {
    Err(NnError::Shape(msg.into()))
}

/// Seeded ChaCha8 stream. Identical seeds give identical streams on every
/// platform.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform sample in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        use rand::Rng as _;
        lo + (hi - lo) * self.inner.gen::<f64>()
    }

    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}
