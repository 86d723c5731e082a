//! Small fully-connected networks trained independently per seed, with
//! deterministic SGD, feature taps, input/weight gradients, checkpoint I/O
//! and subspace sampling of dependent modes.

mod arch;
mod ckpt_io;
mod forward;
mod subspace;
mod train;

pub use arch::{param_l2_distance, Layer, MlpArch, ModeCheckpoint, TrainMeta};
pub use ckpt_io::{ckpt_from_bytes, ckpt_to_bytes, load_ckpt, save_ckpt};
pub use forward::{
    accuracy, argmax, forward, grad_input_nll, grad_lastfc_kl, grad_lastfc_kl_matrix,
    mean_cross_entropy, OutputDump,
};
pub use subspace::{sample_subspace_mode_with_step, sample_subspace_modes};
pub use train::{train_mode, train_mode_with_snapshots, TrainConfig};
