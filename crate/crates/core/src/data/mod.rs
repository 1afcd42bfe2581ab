//! Image loading, preprocessing, splits and pair sampling.

pub mod dataset;
pub mod image;
pub mod pairs;
pub mod pgm;
pub mod split;
pub mod synth;

pub use dataset::{load_jpeg, FaceDataset, FaceImage, Source};
pub use image::{preprocess, to_grayscale};
pub use pairs::{sample_pairs, PairBatch, PairRef, MATCH, NON_MATCH};
pub use pgm::{load_pgm, PgmError};
pub use split::{kfold, split_subjects, SplitSpec};
pub use synth::{synth_dataset, synth_dataset_sized, synth_image, synth_template};
