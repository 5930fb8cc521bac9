//! Seeded dataset synthesis and the on-disk dataset format.
//!
//! A dataset file is a [`crate::container`] with magic `DVHD` whose payload
//! is a length-prefixed JSON header followed by fixed-size binary sample
//! records. Every float is stored at full precision; a JSON manifest is
//! written next to the binary file.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corruption::{CorruptionModel, CorruptionParams};
use super::heatmap::{HeatmapPeak, HeatmapStack};
use super::sample::{make_sample, CameraRig, DualViewSample};
use super::template::{HandTemplate, PoseSampler};
use crate::container::{self, FormatVersion, Reader};
use crate::error::{Error, Result};
use crate::geometry::{JointSet, Rotation, NUM_JOINTS};

pub const DATASET_MAGIC: &[u8; 4] = b"DVHD";
pub const DATASET_VERSION: FormatVersion = FormatVersion {
    major: 1,
    minor: 0,
    patch: 0,
};

/// Axis-angle rotation in degrees, as written in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisAngle {
    pub axis: [f64; 3],
    pub angle_deg: f64,
}

impl AxisAngle {
    pub fn to_rotation(&self) -> Result<Rotation> {
        let axis = Vector3::from(self.axis);
        if !(axis.norm() > 0.0) || !self.angle_deg.is_finite() {
            return Err(Error::InvalidParameter(
                "rotation axis must be nonzero and the angle finite".into(),
            ));
        }
        Ok(Rotation::from_axis_angle(
            &axis,
            self.angle_deg.to_radians(),
        ))
    }
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub count: usize,
    pub seed: u64,
    /// Fixed relative camera rotation; drawn from the seed when absent.
    pub relative_rotation: Option<AxisAngle>,
    pub max_jitter_deg: f64,
    pub translation_range: f64,
    pub corruption: CorruptionParams,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            count: 1000,
            seed: 7,
            relative_rotation: None,
            max_jitter_deg: 15.0,
            translation_range: 30.0,
            corruption: CorruptionParams::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=180.0).contains(&self.max_jitter_deg) {
            return Err(Error::InvalidParameter(format!(
                "max_jitter_deg must lie in [0, 180], got {}",
                self.max_jitter_deg
            )));
        }
        if !(self.translation_range >= 0.0) || !self.translation_range.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "translation_range must be finite and nonnegative, got {}",
                self.translation_range
            )));
        }
        if let Some(r) = &self.relative_rotation {
            r.to_rotation()?;
        }
        self.corruption.validate()
    }

    pub fn pose_sampler(&self) -> PoseSampler {
        PoseSampler {
            max_jitter: self.max_jitter_deg.to_radians(),
            randomize_global: true,
            translation_range: self.translation_range,
        }
    }
}

/// Deterministic sub-seed for stream `stream`, item `index` (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_RIG: u64 = 1;
const STREAM_CORRUPTION: u64 = 2;
const STREAM_POSE: u64 = 3;
const STREAM_NOISE: u64 = 4;

/// Dataset-level metadata. The rig (including the ground-truth relative
/// rotation) is kept for evaluation only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub sample_count: usize,
    pub template_hash: String,
    pub corruption: CorruptionModel,
    pub rig: CameraRig,
    pub scene: Option<SceneConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<DualViewSample>,
}

impl Dataset {
    /// Ground-truth relative rotation. Evaluation use only.
    pub fn relative_rotation(&self) -> &Rotation {
        &self.header.rig.relative
    }

    /// A dataset restricted to its first `n` samples.
    pub fn truncated(&self, n: usize) -> Dataset {
        let samples: Vec<_> = self.samples.iter().take(n).cloned().collect();
        Dataset {
            header: DatasetHeader {
                sample_count: samples.len(),
                ..self.header.clone()
            },
            samples,
        }
    }
}

/// Synthesizes a dataset with the standard hand template.
pub fn generate_dataset(config: &SceneConfig) -> Result<Dataset> {
    generate_dataset_with(config, &HandTemplate::standard())
}

pub fn generate_dataset_with(config: &SceneConfig, template: &HandTemplate) -> Result<Dataset> {
    config.validate()?;
    let relative = config
        .relative_rotation
        .as_ref()
        .map(AxisAngle::to_rotation)
        .transpose()?;
    let rig = CameraRig::random(derive_seed(config.seed, STREAM_RIG, 0), relative);
    let corruption = config
        .corruption
        .draw(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            config.seed,
            STREAM_CORRUPTION,
            0,
        )))?;
    let sampler = config.pose_sampler();
    let samples = (0..config.count as u64)
        .map(|i| {
            let pose = sampler.sample(template, derive_seed(config.seed, STREAM_POSE, i));
            make_sample(
                i,
                &pose,
                &rig,
                &corruption,
                derive_seed(config.seed, STREAM_NOISE, i),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        header: DatasetHeader {
            sample_count: samples.len(),
            template_hash: template.hash(),
            corruption,
            rig,
            scene: Some(config.clone()),
        },
        samples,
    })
}

fn put_joints(out: &mut Vec<u8>, joints: &JointSet) {
    for p in joints.points() {
        for c in p.iter() {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
}

fn get_joints(r: &mut Reader<'_>) -> Result<JointSet> {
    let pts = (0..NUM_JOINTS)
        .map(|_| Ok(Vector3::new(r.f64()?, r.f64()?, r.f64()?)))
        .collect::<Result<Vec<_>>>()?;
    JointSet::new(pts).map_err(|e| Error::Format(format!("sample record: {e}")))
}

fn put_heatmaps(out: &mut Vec<u8>, stack: &HeatmapStack) {
    for p in stack.peaks() {
        out.push(p.row);
        out.push(p.col);
        out.extend_from_slice(&p.value.to_le_bytes());
    }
}

fn get_heatmaps(r: &mut Reader<'_>) -> Result<HeatmapStack> {
    let peaks = (0..NUM_JOINTS)
        .map(|_| {
            Ok(HeatmapPeak {
                row: r.u8()?,
                col: r.u8()?,
                value: r.f64()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    HeatmapStack::new(peaks).map_err(|e| Error::Format(format!("heatmap record: {e}")))
}

/// Serializes a dataset to bytes.
pub fn encode_dataset(dataset: &Dataset) -> Result<Vec<u8>> {
    if dataset.header.sample_count != dataset.samples.len() {
        return Err(Error::InvalidInput(format!(
            "header declares {} samples but {} are present",
            dataset.header.sample_count,
            dataset.samples.len()
        )));
    }
    let header = serde_json::to_vec(&dataset.header)
        .map_err(|e| Error::Format(format!("cannot encode header: {e}")))?;
    let mut payload = Vec::with_capacity(8 + header.len() + dataset.samples.len() * 2200);
    payload.extend_from_slice(&(header.len() as u64).to_le_bytes());
    payload.extend_from_slice(&header);
    for s in &dataset.samples {
        payload.extend_from_slice(&s.id.to_le_bytes());
        payload.extend_from_slice(&s.seed.to_le_bytes());
        for v in 0..2 {
            put_joints(&mut payload, &s.ground_truth[v]);
            put_joints(&mut payload, &s.raw[v]);
            put_heatmaps(&mut payload, &s.heatmaps[v]);
        }
    }
    Ok(container::encode(DATASET_MAGIC, DATASET_VERSION, &payload))
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let (_, payload) = container::decode(DATASET_MAGIC, DATASET_VERSION.major, bytes)?;
    let mut r = Reader::new(payload);
    let header_len = r.u64()? as usize;
    let header: DatasetHeader = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::Format(format!("dataset header: {e}")))?;
    let mut samples = Vec::with_capacity(header.sample_count);
    for _ in 0..header.sample_count {
        let id = r.u64()?;
        let seed = r.u64()?;
        let (gt0, raw0, hm0) = (
            get_joints(&mut r)?,
            get_joints(&mut r)?,
            get_heatmaps(&mut r)?,
        );
        let (gt1, raw1, hm1) = (
            get_joints(&mut r)?,
            get_joints(&mut r)?,
            get_heatmaps(&mut r)?,
        );
        samples.push(DualViewSample {
            id,
            seed,
            ground_truth: [gt0, gt1],
            raw: [raw0, raw1],
            heatmaps: [hm0, hm1],
        });
    }
    if !r.is_empty() {
        return Err(Error::Format("trailing bytes after the last sample".into()));
    }
    Ok(Dataset { header, samples })
}

/// Human-readable summary written next to each dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: String,
    pub file_sha256: String,
    pub sample_count: usize,
    pub template_hash: String,
    pub relative_rotation: Rotation,
    pub corruption: CorruptionModel,
    pub scene: Option<SceneConfig>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// Writes the binary dataset and its JSON manifest. Returns the file digest.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<String> {
    let bytes = encode_dataset(dataset)?;
    container::write_file(path, &bytes)?;
    let digest = container::sha256_hex(&bytes);
    let manifest = DatasetManifest {
        format_version: DATASET_VERSION.to_string(),
        file_sha256: digest.clone(),
        sample_count: dataset.samples.len(),
        template_hash: dataset.header.template_hash.clone(),
        relative_rotation: dataset.header.rig.relative,
        corruption: dataset.header.corruption.clone(),
        scene: dataset.header.scene.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("cannot encode manifest: {e}")))?;
    container::write_file(&manifest_path(path), text.as_bytes())?;
    Ok(digest)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&container::read_file(path)?)
}
