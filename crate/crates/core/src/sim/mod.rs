//! Labeled reverberant mixtures: image-method rooms, synthetic sources,
//! diffuse noise, oracle masks and dataset generation.

mod dataset;
mod mixture;
mod rir;
pub mod source;

pub use dataset::{
    dataset_generate, derive_seed, load_example, sample_example, sample_room, DatasetManifest,
    ManifestRecord, NoiseKind, SimConfig, SourcePool, Split, SplitCounts,
};
pub use mixture::{
    fft_convolve, ideal_binary_mask, synthesize_mixture, MixtureExample, NoiseInput,
};
pub use rir::{image_method_rir, Rir, RirOptions, RoomSpec, SourcePlacement};
