use dualhand::container::{self, FormatVersion};
use dualhand::geometry::*;
use dualhand::scene::dataset::{decode_dataset, encode_dataset};
use dualhand::scene::template::bone_lengths_of;
use dualhand::scene::*;
use dualhand::Error;
use proptest::prelude::*;

fn small_config(count: usize, seed: u64) -> SceneConfig {
    SceneConfig {
        count,
        seed,
        ..SceneConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bone_lengths_survive_any_seed(seed in any::<u64>()) {
        let t = HandTemplate::standard();
        let pose = sample_pose(&t, seed);
        for (got, want) in bone_lengths_of(&t, &pose).iter().zip(t.bone_lengths()) {
            prop_assert!((got - want).abs() <= 1e-9);
        }
    }

    #[test]
    fn heatmap_peak_nonincreasing(e1 in 0.0f64..500.0, e2 in 0.0f64..500.0, sigma in 1.0f64..100.0) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let a = synthesize_heatmap(lo, (10, 10), sigma).unwrap();
        let b = synthesize_heatmap(hi, (10, 10), sigma).unwrap();
        let max = |h: &Heatmap| h.iter().copied().fold(0.0, f64::max);
        prop_assert!(max(&b) <= max(&a));
        prop_assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn generated_samples_encode_the_hidden_rotation(seed in 0u64..1000) {
        let d = generate_dataset(&small_config(3, seed)).unwrap();
        let r = d.relative_rotation();
        for s in &d.samples {
            let got = kabsch_rotation(&s.ground_truth[0], &s.ground_truth[1]).unwrap();
            prop_assert!(geodesic_angle(&got, r) <= 1e-9);
            let mapped = s.ground_truth[0].aligned().rotate(r);
            prop_assert!(mapped.max_joint_distance(&s.ground_truth[1].aligned()) <= 1e-9);
        }
    }
}

#[test]
fn distinct_seeds_differ_by_more_than_a_millimetre() {
    let t = HandTemplate::standard();
    for i in 0..100u64 {
        let a = sample_pose(&t, 2 * i);
        let b = sample_pose(&t, 2 * i + 1);
        assert!(a.max_joint_distance(&b) > 1.0);
    }
}

#[test]
fn ground_truth_bones_match_template() {
    let t = HandTemplate::standard();
    let d = generate_dataset(&small_config(200, 3)).unwrap();
    for s in &d.samples {
        for gt in &s.ground_truth {
            for (got, want) in bone_lengths_of(&t, gt).iter().zip(t.bone_lengths()) {
                assert!((got - want).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn empirical_bias_matches_configured_bias() {
    let n = 2000;
    let d = generate_dataset(&small_config(n, 17)).unwrap();
    let model = &d.header.corruption;
    let spread = model.noise_spread;
    for v in 0..2 {
        // Per-coordinate noise std, marginalized over the log-normal difficulty.
        let sd = model.view_noise(v) * (spread * spread).exp();
        let bound = 3.0 * sd / (n as f64).sqrt();
        for k in 0..NUM_JOINTS {
            let mean = d
                .samples
                .iter()
                .map(|s| s.raw[v][k] - s.ground_truth[v][k])
                .sum::<nalgebra::Vector3<f64>>()
                / n as f64;
            for c in 0..3 {
                let err = (mean[c] - model.views[v].bias[k][c]).abs();
                assert!(
                    err <= bound,
                    "view {v} joint {k} coord {c}: {err} > {bound}"
                );
            }
        }
    }
}

#[test]
fn clean_world_has_exact_detections_and_full_confidence() {
    let config = SceneConfig {
        count: 20,
        corruption: CorruptionParams::clean(),
        ..SceneConfig::default()
    };
    let d = generate_dataset(&config).unwrap();
    for s in &d.samples {
        for v in 0..2 {
            assert_eq!(s.raw[v], s.ground_truth[v]);
            assert!((0..NUM_JOINTS).all(|k| s.heatmaps[v].peak_value(k) == 1.0));
        }
    }
}

#[test]
fn identity_rotation_gives_matching_views() {
    let config = SceneConfig {
        count: 10,
        relative_rotation: Some(AxisAngle {
            axis: [0.0, 0.0, 1.0],
            angle_deg: 0.0,
        }),
        ..SceneConfig::default()
    };
    let d = generate_dataset(&config).unwrap();
    for s in &d.samples {
        assert!(
            s.ground_truth[0]
                .aligned()
                .max_joint_distance(&s.ground_truth[1].aligned())
                <= 1e-9
        );
    }
}

#[test]
fn thousand_sample_dataset_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ref.dvhd");
    let d = generate_dataset(&small_config(1000, 7)).unwrap();
    write_dataset(&d, &path).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back.header, d.header);
    assert_eq!(back.samples.len(), 1000);
    for (a, b) in d.samples.iter().zip(&back.samples) {
        assert_eq!(a, b);
        for v in 0..2 {
            for k in 0..NUM_JOINTS {
                for c in 0..3 {
                    assert_eq!(a.raw[v][k][c].to_bits(), b.raw[v][k][c].to_bits());
                }
            }
        }
    }
}

#[test]
fn file_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let d = generate_dataset(&small_config(5, 1)).unwrap();
    let bytes = encode_dataset(&d).unwrap();

    let truncated = dir.path().join("cut.dvhd");
    std::fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(read_dataset(&truncated), Err(Error::Checksum)));

    let (_, payload) = container::decode(dataset::DATASET_MAGIC, 1, &bytes).unwrap();
    let future = FormatVersion {
        major: 2,
        ..dataset::DATASET_VERSION
    };
    let bumped = container::encode(dataset::DATASET_MAGIC, future, payload);
    assert!(matches!(
        decode_dataset(&bumped),
        Err(Error::VersionMismatch { .. })
    ));

    let missing = dir.path().join("nope.dvhd");
    assert!(matches!(read_dataset(&missing), Err(Error::Io { .. })));
}

#[test]
fn manifest_accompanies_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.dvhd");
    let d = generate_dataset(&small_config(4, 2)).unwrap();
    let sha = write_dataset(&d, &path).unwrap();
    let manifest = std::fs::read_to_string(dataset::manifest_path(&path)).unwrap();
    assert!(manifest.contains(&sha));
}
