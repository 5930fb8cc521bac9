use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::corruption::CorruptionModel;
use super::heatmap::{peak_confidence, HeatmapPeak, HeatmapStack, HEATMAP_SIZE};
use super::template::uniform_rotation;
use crate::error::Result;
use crate::geometry::{JointSet, Rotation, NUM_JOINTS, WRIST};

/// One of the two cameras.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum View {
    First,
    Second,
}

impl View {
    pub const BOTH: [View; 2] = [View::First, View::Second];

    pub fn index(self) -> usize {
        match self {
            View::First => 0,
            View::Second => 1,
        }
    }
}

/// What a single-view estimator sees for one camera: the raw detection and
/// its confidence maps. Ground truth is not reachable from here.
#[derive(Clone, Copy, Debug)]
pub struct ViewInput<'a> {
    pub raw: &'a JointSet,
    pub heatmaps: &'a HeatmapStack,
}

/// Fixed placement of the two cameras.
///
/// A world point `p` appears at `world_to_first · p + first_offset` in the
/// first camera and at `relative · x1 + second_offset` in the second, where
/// `x1` is its first-camera position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub world_to_first: Rotation,
    pub first_offset: Vector3<f64>,
    /// Ground-truth rotation from the first camera frame to the second.
    pub relative: Rotation,
    pub second_offset: Vector3<f64>,
}

/// Distance from each camera to the hand (mm).
pub const WORKING_DEPTH: f64 = 450.0;

impl CameraRig {
    /// Both cameras look at the same point `WORKING_DEPTH` in front of them.
    pub fn looking_at_hand(world_to_first: Rotation, relative: Rotation) -> Self {
        let center = Vector3::new(0.0, 0.0, WORKING_DEPTH);
        Self {
            world_to_first,
            first_offset: center,
            relative,
            second_offset: center - relative.apply(&center),
        }
    }

    /// Random first-camera orientation; `relative` if given, otherwise a random
    /// rotation of 30° to 120°.
    pub fn random(seed: u64, relative: Option<Rotation>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let world_to_first = uniform_rotation(&mut rng);
        let relative = relative.unwrap_or_else(|| {
            let axis = super::template::random_unit_vector(&mut rng);
            let angle = rng.random_range(30f64.to_radians()..=120f64.to_radians());
            Rotation::from_axis_angle(&axis, angle)
        });
        Self::looking_at_hand(world_to_first, relative)
    }

    pub fn to_first(&self, world: &JointSet) -> JointSet {
        world
            .rotate(&self.world_to_first)
            .translate(&self.first_offset)
    }

    /// Second-camera joints: `relative` applied to the wrist-aligned first-camera
    /// joints, placed at the second camera's wrist position.
    pub fn first_to_second(&self, first: &JointSet) -> JointSet {
        let wrist = self.relative.apply(&first.wrist()) + self.second_offset;
        first.aligned().rotate(&self.relative).translate(&wrist)
    }
}

/// One synchronized pair of views with ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualViewSample {
    pub id: u64,
    pub seed: u64,
    pub ground_truth: [JointSet; 2],
    pub raw: [JointSet; 2],
    pub heatmaps: [HeatmapStack; 2],
}

impl DualViewSample {
    pub fn input(&self, view: View) -> ViewInput<'_> {
        ViewInput {
            raw: &self.raw[view.index()],
            heatmaps: &self.heatmaps[view.index()],
        }
    }

    pub fn ground_truth(&self, view: View) -> &JointSet {
        &self.ground_truth[view.index()]
    }
}

/// Heatmap focal length in pixels for the pinhole projection of peaks.
const HEATMAP_FOCAL: f64 = 36.0;

fn project_to_grid(p: &Vector3<f64>) -> (u8, u8) {
    let c = (HEATMAP_SIZE as f64 - 1.0) / 2.0;
    let z = p.z.max(1.0);
    let max = (HEATMAP_SIZE - 1) as f64;
    let col = (HEATMAP_FOCAL * p.x / z + c).round().clamp(0.0, max);
    let row = (HEATMAP_FOCAL * p.y / z + c).round().clamp(0.0, max);
    (row as u8, col as u8)
}

/// RMS of a joint's wrist-relative error when its bias relative to the wrist
/// is `relative_bias` and both joints carry isotropic noise `sigma`.
pub fn expected_error(relative_bias: &Vector3<f64>, sigma: f64, joint: usize) -> f64 {
    if joint == WRIST {
        return 0.0;
    }
    (relative_bias.norm_squared() + 6.0 * sigma * sigma).sqrt()
}

/// Renders a world pose into both cameras and corrupts each view.
///
/// Raw estimates are ground truth plus the view's bias plus Gaussian noise of
/// standard deviation `d * noise_sigma / visibility`, where the difficulty `d`
/// is log-normal with spread `noise_spread` and shared by both views. Each
/// joint's heatmap peak is `exp(-e / confidence_sigma)` with `e` the
/// [`expected_error`] of the joint (what the detector could know, not the
/// realized noise), located at the raw joint's projection.
pub fn make_sample(
    id: u64,
    pose: &JointSet,
    rig: &CameraRig,
    corruption: &CorruptionModel,
    seed: u64,
) -> Result<DualViewSample> {
    corruption.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rig.to_first(pose);
    let second = rig.first_to_second(&first);
    let ground_truth = [first, second];

    let difficulty = (corruption.noise_spread * rng.sample::<f64, _>(StandardNormal)).exp();
    let mut raw = Vec::with_capacity(2);
    let mut heatmaps = Vec::with_capacity(2);
    for (v, gt) in ground_truth.iter().enumerate() {
        let sigma = corruption.view_noise(v) * difficulty;
        let bias = &corruption.views[v].bias;
        let mut points = Vec::with_capacity(NUM_JOINTS);
        let mut peaks = Vec::with_capacity(NUM_JOINTS);
        for k in 0..NUM_JOINTS {
            let noise = Vector3::from_fn(|_, _| sigma * rng.sample::<f64, _>(StandardNormal));
            points.push(gt[k] + Vector3::from(bias[k]) + noise);
        }
        let wrist_bias = Vector3::from(bias[WRIST]);
        for (k, p) in points.iter().enumerate() {
            let error = expected_error(&(Vector3::from(bias[k]) - wrist_bias), sigma, k);
            let (row, col) = project_to_grid(p);
            peaks.push(HeatmapPeak {
                row,
                col,
                value: peak_confidence(error, corruption.confidence_sigma),
            });
        }
        raw.push(JointSet::new(points)?);
        heatmaps.push(HeatmapStack::new(peaks)?);
    }
    let raw: [JointSet; 2] = raw.try_into().expect("two views");
    let heatmaps: [HeatmapStack; 2] = heatmaps.try_into().expect("two views");
    Ok(DualViewSample {
        id,
        seed,
        ground_truth,
        raw,
        heatmaps,
    })
}
