//! Reverberant mixture simulation: sampled shoebox rooms, image-source
//! impulse responses calibrated to a target decay time, SNR-controlled
//! mixing, and reproducible on-disk datasets.

pub mod dataset;
pub mod mixture;
pub mod rir;
pub mod room;
pub mod sources;

pub use dataset::{generate_dataset, read_manifest, DatasetConfig, ManifestEntry};
pub use mixture::{fft_convolve, make_mixture, MixtureSample};
pub use rir::{estimate_t60, image_source_rir, synthesize_rir};
pub use room::{sabine_absorption, sample_room, RoomConfig, RoomInstance};
pub use sources::{pink_noise, tone_source, white_noise, NoiseKind, SourceKind};
