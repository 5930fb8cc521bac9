use dualhand::geometry::*;
use dualhand::metrics::*;
use dualhand::scene::{generate_dataset, CorruptionParams, SceneConfig};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_set(rng: &mut impl Rng) -> JointSet {
    JointSet::new(
        (0..NUM_JOINTS)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-100.0..100.0)))
            .collect(),
    )
    .unwrap()
}

fn random_pairs(seed: u64, n: usize) -> Vec<[JointSet; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| [random_set(&mut rng), random_set(&mut rng)])
        .collect()
}

/// Flat-loop oracles on raw coordinate arrays.
fn mpjpe_oracle(p: &JointSet, g: &JointSet) -> f64 {
    let (p, g) = (p.to_flat(), g.to_flat());
    let mut total = 0.0;
    for k in 0..NUM_JOINTS {
        let mut sq = 0.0;
        for c in 0..3 {
            let d = (p[3 * k + c] - p[c]) - (g[3 * k + c] - g[c]);
            sq += d * d;
        }
        total += sq.sqrt();
    }
    total / NUM_JOINTS as f64
}

fn mono_oracle(pred: &[[JointSet; 2]], gt: &[[JointSet; 2]]) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..pred.len() {
        for v in 0..2 {
            total += mpjpe_oracle(&pred[i][v], &gt[i][v]);
            count += 1;
        }
    }
    total / count as f64
}

fn dual_oracle(pred: &[[JointSet; 2]], gt: &[[JointSet; 2]], r: &Rotation) -> f64 {
    let m = r.matrix();
    let mut total = 0.0;
    for i in 0..pred.len() {
        let a = pred[i][0].to_flat();
        let b = pred[i][1].to_flat();
        let mut f1 = vec![0.0; 3 * NUM_JOINTS];
        let mut f2 = vec![0.0; 3 * NUM_JOINTS];
        for k in 0..NUM_JOINTS {
            for row in 0..3 {
                let mut rt_b = 0.0;
                let mut r_a = 0.0;
                for col in 0..3 {
                    rt_b += m[(col, row)] * (b[3 * k + col] - b[col]);
                    r_a += m[(row, col)] * (a[3 * k + col] - a[col]);
                }
                f1[3 * k + row] = 0.5 * ((a[3 * k + row] - a[row]) + rt_b);
                f2[3 * k + row] = 0.5 * (r_a + (b[3 * k + row] - b[row]));
            }
        }
        total += mpjpe_oracle(&JointSet::from_flat(&f1).unwrap(), &gt[i][0]);
        total += mpjpe_oracle(&JointSet::from_flat(&f2).unwrap(), &gt[i][1]);
    }
    total / (2 * pred.len()) as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_match_flat_loop_oracles(seed in any::<u64>(), n in 1usize..20,
                                       rv in prop::array::uniform3(-3.0f64..3.0)) {
        let pred = random_pairs(seed, n);
        let gt = random_pairs(seed.wrapping_add(1), n);
        let r = Rotation::from_rotation_vector(&Vector3::from(rv));
        prop_assert!((mono_m(&pred, &gt).unwrap() - mono_oracle(&pred, &gt)).abs() <= 1e-9);
        prop_assert!((dual_m(&pred, &gt, &r).unwrap() - dual_oracle(&pred, &gt, &r)).abs() <= 1e-9);
        for (p, g) in pred.iter().zip(&gt) {
            prop_assert!((mpjpe(&p[0], &g[0]) - mpjpe_oracle(&p[0], &g[0])).abs() <= 1e-9);
        }
        let [a, b] = per_view_mpjpe(&pred, &gt).unwrap();
        prop_assert!((mono_m(&pred, &gt).unwrap() - (a + b) / 2.0).abs() <= 1e-12);
    }

    #[test]
    fn mpjpe_ignores_translations(seed in any::<u64>(), t in prop::array::uniform3(-1e3f64..1e3),
                                  u in prop::array::uniform3(-1e3f64..1e3)) {
        let pair = &random_pairs(seed, 1)[0];
        let base = mpjpe(&pair[0], &pair[1]);
        let (t, u) = (Vector3::from(t), Vector3::from(u));
        prop_assert!((mpjpe(&pair[0].translate(&t), &pair[1].translate(&t)) - base).abs() <= 1e-9);
        prop_assert!((mpjpe(&pair[0].translate(&t), &pair[1].translate(&u)) - base).abs() <= 1e-9);
    }

    #[test]
    fn identical_views_under_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_set(&mut rng);
        let g = random_set(&mut rng);
        let d = dual_m(&[[p.clone(), p.clone()]], &[[g.clone(), g.clone()]], &Rotation::identity()).unwrap();
        prop_assert!((d - mpjpe(&p, &g)).abs() <= 1e-12);
    }
}

#[test]
fn mpjpe_examples() {
    let g = JointSet::new(
        (0..NUM_JOINTS)
            .map(|k| Vector3::new(k as f64, 1.0, 2.0))
            .collect(),
    )
    .unwrap();
    assert_eq!(mpjpe(&g, &g), 0.0);
    assert!(mpjpe(&g.translate(&Vector3::new(5.0, 5.0, 5.0)), &g).abs() <= 1e-12);
    let mut p = g.clone();
    p.points_mut()[9] += Vector3::new(0.0, 21.0, 0.0);
    assert!((mpjpe(&p, &g) - 1.0).abs() <= 1e-12);
}

#[test]
fn mono_pools_views() {
    let g = JointSet::zeros();
    let shift = |d: f64| {
        let mut j = JointSet::constant(Vector3::new(0.0, 0.0, d));
        j.points_mut()[WRIST] = Vector3::zeros();
        j
    };
    // Twenty of 21 joints off by d gives 20d/21; scale so the per-view error is exactly 10 and 20.
    let pred = vec![[shift(10.5), shift(21.0)]];
    let gt = vec![[g.clone(), g]];
    assert!((mono_m(&pred, &gt).unwrap() - 15.0).abs() <= 1e-12);
}

#[test]
fn exact_views_and_true_rotation_give_zero() {
    let d = generate_dataset(&SceneConfig {
        count: 30,
        ..SceneConfig::default()
    })
    .unwrap();
    let gt: Vec<[JointSet; 2]> = d.samples.iter().map(|s| s.ground_truth.clone()).collect();
    assert!(dual_m(&gt, &gt, d.relative_rotation()).unwrap() <= 1e-9);
    assert_eq!(mono_m(&gt, &gt).unwrap(), 0.0);
    let wrong = Rotation::rx(30f64.to_radians()).compose(d.relative_rotation());
    assert!(dual_m(&gt, &gt, &wrong).unwrap() > 1.0);
}

#[test]
fn fusing_independent_noise_helps() {
    let config = SceneConfig {
        count: 1000,
        corruption: CorruptionParams {
            bias_range: 0.0,
            noise_sigma: 8.0,
            visibility: [1.0, 1.0],
            ..CorruptionParams::default()
        },
        ..SceneConfig::default()
    };
    let d = generate_dataset(&config).unwrap();
    let pred: Vec<[JointSet; 2]> = d.samples.iter().map(|s| s.raw.clone()).collect();
    let gt: Vec<[JointSet; 2]> = d.samples.iter().map(|s| s.ground_truth.clone()).collect();
    let report = evaluate(&pred, &gt, d.relative_rotation()).unwrap();
    assert!(report.dual_m < report.mono_m);
    assert!(!report.fusion_warning);
}

#[test]
fn bucket_bounds_follow_the_range() {
    let errors: Vec<f64> = (0..50)
        .map(|i| 9.4 + (181.7 - 9.4) * i as f64 / 49.0)
        .collect();
    let t = complementarity_table(&errors, &errors, &errors).unwrap();
    assert_eq!(t.buckets.len(), 7);
    assert_eq!(t.buckets[0].lower, 9.4);
    assert!((t.buckets[0].upper - 34.0).abs() < 0.05);
    assert!((t.buckets[1].upper - 58.6).abs() < 0.05);
    assert_eq!(t.buckets[6].upper, 181.7);
    assert_eq!(t.buckets.iter().map(|b| b.count).sum::<usize>(), 50);
    assert!(!t.degenerate);
}

#[test]
fn identical_errors_fill_one_bucket() {
    let e = vec![12.0; 9];
    let t = complementarity_table(&e, &e, &e).unwrap();
    assert_eq!(t.buckets[0].count, 9);
    assert!(t.buckets[1..]
        .iter()
        .all(|b| b.count == 0 && b.mean_fused_error.is_none()));
    assert!(t.degenerate);
}

#[test]
fn bucket_means_match_manual_grouping() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pred: Vec<f64> = (0..300).map(|_| rng.random_range(5.0..90.0)).collect();
    let fused: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..50.0)).collect();
    let abm: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..50.0)).collect();
    let t = complementarity_table(&pred, &fused, &abm).unwrap();
    let lo = pred.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pred.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (b, bucket) in t.buckets.iter().enumerate() {
        let members: Vec<usize> = (0..300)
            .filter(|&i| {
                let idx = (((pred[i] - lo) / (hi - lo) * 7.0).floor() as usize).min(6);
                idx == b
            })
            .collect();
        assert_eq!(bucket.count, members.len());
        let mean = |v: &[f64]| members.iter().map(|&i| v[i]).sum::<f64>() / members.len() as f64;
        assert!((bucket.mean_fused_error.unwrap() - mean(&fused)).abs() <= 1e-9);
        assert!((bucket.mean_abm_error.unwrap() - mean(&abm)).abs() <= 1e-9);
    }
}
