//! Synthetic data generation, dataset ingestion and file formats.

pub mod dataset;
pub mod flo;
pub mod png;
pub mod synth;

pub use dataset::{load_manifest_dataset, load_triplet_dataset};
pub use flo::{read_flo, write_flo};
pub use png::{load_image, save_image};
pub use synth::{random_spec, synth_triplet, uniform_spec, CaseKind, MotionSpec, ObjectShape};
