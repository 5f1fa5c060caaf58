//! Synthetic signed-document corpus.
//!
//! Each sample is a procedural signature blended onto one of a pool of
//! procedural document backgrounds, optionally warped by a random
//! projective transform, with the exact ink mask as ground truth. Everything
//! is a pure function of `(global_seed, index, size)`.

pub mod background;
pub mod dataset;
pub mod error;
pub mod raster;
pub mod sample;
pub mod seed;
pub mod signature;

pub use background::{gen_background, Background, Style};
pub use dataset::{
    build_dataset, build_dataset_with_threads, corpus_hash, generate_sample, BuildOutput, Corpus, GenConfig, LoadedSample, Manifest,
    ManifestEntry, Split, SplitCounts,
};
pub use error::{Result, SynthError};
pub use raster::{Gray, Rgb};
pub use sample::{compose, distort, DistortParams, DistortRanges, SampleMeta, SampleRecord};
pub use signature::{gen_signature, BBox, Signature};
