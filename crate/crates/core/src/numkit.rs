//! Deterministic numeric substrate: tensors, a reproducible PRNG, stable
//! softmax/log-sum-exp, dense linear algebra and dominant-singular-triple
//! extraction by power iteration.

pub mod linalg;
mod portable;
pub mod rng;
pub mod stable;
pub mod svd;
mod tensor;

pub use rng::{derive_seed, Rng};
pub use stable::{logsumexp, softmax};
pub use svd::top_singular_triple;
pub use tensor::Tensor;
