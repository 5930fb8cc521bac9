//! Canonical hand skeleton and random articulated poses.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::container::sha256_hex;
use crate::error::{Error, Result};
use crate::geometry::{JointSet, Rotation, NUM_JOINTS, WRIST};

/// Plausible bone length range (mm).
pub const BONE_LENGTH_RANGE: (f64, f64) = (15.0, 110.0);

/// Neutral hand: joint 0 is the wrist, then four joints per finger
/// (thumb, index, middle, ring, pinky), each ordered base to tip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandTemplate {
    joints: JointSet,
    parents: Vec<usize>,
}

impl HandTemplate {
    /// Validates that `parents` describes a tree rooted at the wrist whose
    /// parents always precede their children, and that bone lengths are plausible.
    pub fn new(joints: JointSet, parents: Vec<usize>) -> Result<Self> {
        if parents.len() != NUM_JOINTS {
            return Err(Error::InvalidInput(format!(
                "expected {NUM_JOINTS} parent entries, got {}",
                parents.len()
            )));
        }
        if parents[WRIST] != WRIST {
            return Err(Error::InvalidInput(
                "the wrist must be its own parent".into(),
            ));
        }
        for (child, &parent) in parents.iter().enumerate().skip(1) {
            if parent >= child {
                return Err(Error::InvalidInput(format!(
                    "joint {child} has parent {parent}; parents must precede children"
                )));
            }
        }
        let template = Self { joints, parents };
        let (lo, hi) = BONE_LENGTH_RANGE;
        for (parent, child) in template.bones() {
            let len = template.bone_length(parent, child);
            if !(lo..=hi).contains(&len) {
                return Err(Error::InvalidInput(format!(
                    "bone {parent}->{child} has length {len:.2} mm outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(template)
    }

    /// Right hand, palm in the xy-plane, fingers along +y, slight curl toward -z.
    pub fn standard() -> Self {
        // (base offset from wrist, phalanx lengths) per finger.
        let fingers: [([f64; 3], [f64; 3]); 5] = [
            ([-35.0, 25.0, -8.0], [40.0, 32.0, 28.0]),
            ([-22.0, 92.0, 0.0], [45.0, 26.0, 20.0]),
            ([0.0, 95.0, 0.0], [50.0, 30.0, 22.0]),
            ([20.0, 88.0, 0.0], [46.0, 28.0, 21.0]),
            ([38.0, 78.0, 0.0], [36.0, 20.0, 18.0]),
        ];
        let curl = 12f64.to_radians();
        let mut points = vec![Vector3::zeros()];
        let mut parents = vec![WRIST];
        for (base, lengths) in fingers {
            let base = Vector3::from(base);
            let dir = base.normalize();
            let lateral = dir.cross(&Vector3::z());
            points.push(base);
            parents.push(WRIST);
            let mut tip = base;
            for (i, len) in lengths.into_iter().enumerate() {
                let bend = Rotation::from_axis_angle(&lateral, -curl * (i + 1) as f64);
                tip += bend.apply(&dir) * len;
                parents.push(points.len() - 1);
                points.push(tip);
            }
        }
        Self::new(JointSet::new(points).expect("finite template"), parents)
            .expect("standard template is valid")
    }

    pub fn joints(&self) -> &JointSet {
        &self.joints
    }

    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    /// The 20 (parent, child) pairs.
    pub fn bones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parents
            .iter()
            .enumerate()
            .skip(1)
            .map(|(child, &parent)| (parent, child))
    }

    pub fn bone_length(&self, parent: usize, child: usize) -> f64 {
        (self.joints[child] - self.joints[parent]).norm()
    }

    pub fn bone_lengths(&self) -> Vec<f64> {
        self.bones().map(|(p, c)| self.bone_length(p, c)).collect()
    }

    /// Content hash identifying the template in dataset and checkpoint headers.
    pub fn hash(&self) -> String {
        let mut bytes = Vec::with_capacity(NUM_JOINTS * 32);
        for p in self.joints.points() {
            for c in p.iter() {
                bytes.extend_from_slice(&c.to_le_bytes());
            }
        }
        for &parent in &self.parents {
            bytes.extend_from_slice(&(parent as u64).to_le_bytes());
        }
        sha256_hex(&bytes)
    }
}

/// Bone lengths of an arbitrary joint set under the template's topology.
pub fn bone_lengths_of(template: &HandTemplate, joints: &JointSet) -> Vec<f64> {
    template
        .bones()
        .map(|(p, c)| (joints[c] - joints[p]).norm())
        .collect()
}

/// Random articulation plus an optional random rigid placement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSampler {
    /// Largest per-bone rotation about the parent joint (radians).
    pub max_jitter: f64,
    /// Apply a uniformly random global rotation and a translation.
    pub randomize_global: bool,
    /// Half-width of the uniform global translation box (mm).
    pub translation_range: f64,
}

impl Default for PoseSampler {
    fn default() -> Self {
        Self {
            max_jitter: 15f64.to_radians(),
            randomize_global: true,
            translation_range: 30.0,
        }
    }
}

impl PoseSampler {
    /// Draws a pose in the world frame. Each bone keeps its template length.
    pub fn sample(&self, template: &HandTemplate, seed: u64) -> JointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tmpl = template.joints();
        let mut frames = vec![Rotation::identity(); NUM_JOINTS];
        let mut points = vec![tmpl[WRIST]; NUM_JOINTS];
        for (parent, child) in template.bones() {
            let axis = random_unit_vector(&mut rng);
            let angle = rng.random::<f64>() * self.max_jitter;
            frames[child] = frames[parent].compose(&Rotation::from_axis_angle(&axis, angle));
            points[child] = points[parent] + frames[child].apply(&(tmpl[child] - tmpl[parent]));
        }
        let pose = JointSet::from_points_unchecked(points).expect("21 joints");
        if !self.randomize_global {
            return pose;
        }
        let q = uniform_rotation(&mut rng);
        let r = self.translation_range;
        let t = Vector3::new(
            rng.random_range(-r..=r),
            rng.random_range(-r..=r),
            rng.random_range(-r..=r),
        );
        pose.rotate(&q).translate(&t)
    }
}

/// [`PoseSampler::sample`] with default settings.
pub fn sample_pose(template: &HandTemplate, seed: u64) -> JointSet {
    PoseSampler::default().sample(template, seed)
}

pub(crate) fn random_unit_vector<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Uniform (Haar) rotation from a normalized Gaussian quaternion.
pub fn uniform_rotation<R: Rng>(rng: &mut R) -> Rotation {
    let q = loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            break q.map(|x| x / n);
        }
    };
    let [w, x, y, z] = q;
    let m = nalgebra::Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - z * w),
        2.0 * (x * z + y * w),
        2.0 * (x * y + z * w),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - x * w),
        2.0 * (x * z - y * w),
        2.0 * (y * z + x * w),
        1.0 - 2.0 * (x * x + y * y),
    );
    Rotation::from_matrix_unchecked(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_template_is_valid_tree() {
        let t = HandTemplate::standard();
        assert_eq!(t.bones().count(), 20);
        for len in t.bone_lengths() {
            assert!((15.0..=110.0).contains(&len), "{len}");
        }
        // every joint reaches the wrist
        for mut k in 0..NUM_JOINTS {
            let mut steps = 0;
            while k != WRIST {
                k = t.parents()[k];
                steps += 1;
                assert!(steps <= NUM_JOINTS);
            }
        }
    }

    #[test]
    fn rejects_bad_topology() {
        let t = HandTemplate::standard();
        let mut parents = t.parents().to_vec();
        parents[4] = 7;
        assert!(HandTemplate::new(t.joints().clone(), parents).is_err());
    }

    #[test]
    fn rejects_implausible_bones() {
        let t = HandTemplate::standard();
        let mut pts = t.joints().points().to_vec();
        pts[20] = pts[19] + Vector3::new(0.0, 5.0, 0.0);
        assert!(HandTemplate::new(JointSet::new(pts).unwrap(), t.parents().to_vec()).is_err());
    }

    #[test]
    fn zero_jitter_identity_placement_reproduces_template() {
        let t = HandTemplate::standard();
        let sampler = PoseSampler {
            max_jitter: 0.0,
            randomize_global: false,
            translation_range: 0.0,
        };
        let pose = sampler.sample(&t, 99);
        assert!(pose.max_joint_distance(t.joints()) < 1e-12);
    }

    #[test]
    fn bone_lengths_preserved() {
        let t = HandTemplate::standard();
        let expected = t.bone_lengths();
        for seed in 0..200 {
            let got = bone_lengths_of(&t, &sample_pose(&t, seed));
            for (a, b) in got.iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-9, "seed {seed}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn distinct_seeds_give_distinct_poses() {
        let t = HandTemplate::standard();
        for seed in 0..100u64 {
            let a = sample_pose(&t, 2 * seed);
            let b = sample_pose(&t, 2 * seed + 1);
            assert!(a.max_joint_distance(&b) > 1.0);
        }
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let t = HandTemplate::standard();
        assert_eq!(t.hash(), HandTemplate::standard().hash());
        let mut pts = t.joints().points().to_vec();
        pts[20].x += 1e-6;
        let moved = HandTemplate::new(JointSet::new(pts).unwrap(), t.parents().to_vec()).unwrap();
        assert_ne!(t.hash(), moved.hash());
    }
}
