//! Datasets, checkpoints, configuration files, logs and image dumps.

mod checkpoint;
mod config_file;
mod dataset;
mod logs;
mod ppm;

pub use checkpoint::{
    load_checkpoint, read_manifest, save_checkpoint, Checkpoint, CheckpointManifest, ManifestEntry, RngState,
    CHECKPOINT_VERSION, DATA_FILE, MANIFEST_FILE,
};
pub use config_file::{load_config, parse_config};
pub use dataset::{
    downsample, gen_synthetic_dataset, load_cifar10_bin, LabeledImageSet, CIFAR_RECORD_BYTES, MAX_SYNTHETIC_CLASSES,
    SYNTHETIC_RESOLUTIONS,
};
pub use logs::{read_jsonl, CsvWriter, JsonlWriter};
pub use ppm::{encode_ppm, pixel_byte, tile_grid, write_ppm};
