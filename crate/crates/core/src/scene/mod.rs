//! Synthetic dual-view world: hand poses, two cameras with a hidden relative
//! rotation, corrupted per-view detections and their confidence maps.

pub mod corruption;
pub mod dataset;
pub mod heatmap;
pub mod sample;
pub mod template;

pub use corruption::{CorruptionModel, CorruptionParams, ViewCorruption};
pub use dataset::{
    derive_seed, generate_dataset, read_dataset, write_dataset, AxisAngle, Dataset, DatasetHeader,
    SceneConfig,
};
pub use heatmap::{synthesize_heatmap, Heatmap, HeatmapPeak, HeatmapStack, HEATMAP_SIZE};
pub use sample::{make_sample, CameraRig, DualViewSample, View, ViewInput};
pub use template::{sample_pose, HandTemplate, PoseSampler};
