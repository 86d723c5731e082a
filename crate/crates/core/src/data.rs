//! Synthetic in-/out-of-distribution dataset generation and the portable
//! binary tensor format used to exchange dumps with external tools.

mod benchmark;
mod gaussian;
mod tensor_file;

pub use benchmark::{
    gen_benchmark, read_dataset, validate_recipe_kind, write_dataset, Benchmark, BenchmarkConfig,
    DatasetEntry, DatasetManifest, OodRecipe,
};
pub use gaussian::{sample_ind, sample_ood, GaussianSpec, LabeledDataset};
pub use tensor_file::{read_tensor, tensor_from_bytes, tensor_to_bytes, write_tensor};
