//! Dataset ingestion, stratified splitting, preprocessing, augmentation and
//! synthetic data.

pub mod augment;
pub mod image;
pub mod loader;
pub mod manifest;
pub mod split;
pub mod synth;

pub use augment::{augment, color_jitter, denormalize, normalize, AugmentConfig, IMAGENET_MEAN, IMAGENET_STD};
pub use image::{decode_ppm, encode_ppm, hflip, resize_bilinear, rotate, DecoderSet, Image, ImageDecoder, PpmDecoder};
pub use loader::{item_seed, Batch, ImageSource, Loader};
pub use manifest::{scan_manifest, DatasetManifest, Label, ManifestEntry, Reject};
pub use split::{stratified_split, Part, Split, DEFAULT_FRACTIONS};
pub use synth::{render, synth_generate, MANIFEST_FILE};
