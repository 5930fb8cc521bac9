use dualhand::estimator::*;
use dualhand::geometry::{JointSet, NUM_JOINTS, WRIST};
use dualhand::scene::{generate_dataset, HeatmapStack, SceneConfig, View, ViewInput};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_joints(rng: &mut impl Rng, centre: f64) -> JointSet {
    let pts = (0..NUM_JOINTS)
        .map(|_| {
            Vector3::from_fn(|i, _| {
                rng.random_range(-80.0..80.0) + if i == 2 { centre } else { 0.0 }
            })
        })
        .collect();
    JointSet::new(pts).unwrap()
}

fn random_params(rng: &mut impl Rng) -> EstimatorParams {
    let mut p = EstimatorParams::identity();
    for view in View::BOTH {
        for k in 0..NUM_JOINTS {
            p.set_offset(
                view,
                k,
                Vector3::from_fn(|_, _| rng.random_range(-20.0..20.0)),
            );
        }
        let g = Matrix3::identity() + Matrix3::from_fn(|_, _| rng.random_range(-0.2..0.2));
        p.set_gain(view, &g);
    }
    p
}

/// Loss written out coordinate by coordinate on flat arrays.
fn loss_oracle(pred: [&JointSet; 2], label: [&JointSet; 2]) -> f64 {
    let mut total = 0.0;
    for v in 0..2 {
        let p = pred[v].to_flat();
        let y = label[v].to_flat();
        for k in 0..NUM_JOINTS {
            for c in 0..3 {
                let d = (p[3 * k + c] - p[c]) - (y[3 * k + c] - y[c]);
                total += d * d;
            }
        }
    }
    total
}

fn sample_loss(p: &EstimatorParams, raw: &[JointSet; 2], label: [&JointSet; 2]) -> f64 {
    let pred = [
        p.correct(View::First, &raw[0]),
        p.correct(View::Second, &raw[1]),
    ];
    loss([&pred[0], &pred[1]], label)
}

#[test]
fn gradient_matches_central_differences_on_100_configurations() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let hm = HeatmapStack::uniform(1.0).unwrap();
    let h = 1e-5;
    for _ in 0..100 {
        let params = random_params(&mut rng);
        let raw = [
            random_joints(&mut rng, 450.0),
            random_joints(&mut rng, 450.0),
        ];
        let label = [
            random_joints(&mut rng, 0.0).aligned(),
            random_joints(&mut rng, 0.0).aligned(),
        ];
        let inputs = [
            ViewInput {
                raw: &raw[0],
                heatmaps: &hm,
            },
            ViewInput {
                raw: &raw[1],
                heatmaps: &hm,
            },
        ];
        let analytic = params.loss_gradient(inputs, [&label[0], &label[1]]);
        let mut fd = vec![0.0; EstimatorParams::LEN];
        for i in 0..EstimatorParams::LEN {
            let mut plus = params.as_flat().to_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let fp = sample_loss(
                &EstimatorParams::from_flat(plus).unwrap(),
                &raw,
                [&label[0], &label[1]],
            );
            let fm = sample_loss(
                &EstimatorParams::from_flat(minus).unwrap(),
                &raw,
                [&label[0], &label[1]],
            );
            fd[i] = (fp - fm) / (2.0 * h);
        }
        let norm = analytic.iter().map(|g| g * g).sum::<f64>().sqrt();
        let diff = analytic
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(
            diff <= 1e-5 * norm,
            "relative gradient error {}",
            diff / norm
        );
    }
}

#[test]
fn single_joint_residual_gradient() {
    let raw = JointSet::new(
        (0..NUM_JOINTS)
            .map(|k| Vector3::new(k as f64, 2.0 * k as f64, 400.0))
            .collect(),
    )
    .unwrap();
    let hm = HeatmapStack::uniform(1.0).unwrap();
    let p = EstimatorParams::identity();
    let mut label1 = raw.aligned();
    let r = Vector3::new(3.0, -1.0, 2.0);
    label1.points_mut()[5] -= r;
    let label2 = raw.aligned();
    let inputs = [
        ViewInput {
            raw: &raw,
            heatmaps: &hm,
        },
        ViewInput {
            raw: &raw,
            heatmaps: &hm,
        },
    ];
    let g = p.loss_gradient(inputs, [&label1, &label2]);
    let mut expected = vec![0.0; EstimatorParams::LEN];
    expected[15..18].copy_from_slice((2.0 * r).as_slice());
    // The wrist offset moves every aligned joint, so it sees the opposite residual.
    expected[3 * WRIST..3 * WRIST + 3].copy_from_slice((-2.0 * r).as_slice());
    for i in 0..EstimatorParams::LEN {
        if !EstimatorParams::is_gain_index(i) {
            assert!((g[i] - expected[i]).abs() <= 1e-12, "index {i}");
        }
    }
}

#[test]
fn offset_cancelling_bias_recovers_ground_truth() {
    let config = SceneConfig {
        count: 20,
        corruption: dualhand::scene::CorruptionParams {
            noise_sigma: 0.0,
            ..Default::default()
        },
        ..SceneConfig::default()
    };
    let d = generate_dataset(&config).unwrap();
    let mut p = EstimatorParams::identity();
    for view in View::BOTH {
        for k in 0..NUM_JOINTS {
            let b = d.header.corruption.views[view.index()].bias[k];
            p.set_offset(view, k, -Vector3::from(b));
        }
    }
    for s in &d.samples {
        for view in View::BOTH {
            let pred = p.predict(view, s.input(view));
            assert!(pred.joints.max_joint_distance(s.ground_truth(view)) <= 1e-9);
        }
    }
}

#[test]
fn loss_examples() {
    let a = JointSet::zeros();
    assert_eq!(loss([&a, &a], [&a, &a]), 0.0);
    let mut b = JointSet::zeros();
    b.points_mut()[3] = Vector3::new(3.0, 4.0, 0.0);
    assert_eq!(loss([&b, &a], [&a, &a]), 25.0);
}

#[test]
fn momentum_closed_form_over_many_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let theta = random_params(&mut rng);
    let start = random_params(&mut rng);
    let eta: f64 = 0.99;
    let mut state = MomentumState::new(start.clone(), eta).unwrap();
    let steps = 250;
    for _ in 0..steps {
        state = momentum_update(&state, &theta);
    }
    assert_eq!(state.iteration, steps as u64);
    let decay = eta.powi(steps);
    for ((got, s), t) in state
        .params
        .as_flat()
        .iter()
        .zip(start.as_flat())
        .zip(theta.as_flat())
    {
        assert!((got - (decay * s + (1.0 - decay) * t)).abs() <= 1e-9);
    }
}

#[test]
fn momentum_fixed_point() {
    let p = EstimatorParams::identity();
    let s = momentum_update(&MomentumState::new(p.clone(), 0.99).unwrap(), &p);
    assert_eq!(s.params, p);
}

fn params_strategy() -> impl Strategy<Value = EstimatorParams> {
    any::<u64>().prop_map(|seed| random_params(&mut ChaCha8Rng::seed_from_u64(seed)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn loss_matches_double_loop(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = [random_joints(&mut rng, 400.0), random_joints(&mut rng, 400.0)];
        let y = [random_joints(&mut rng, 0.0), random_joints(&mut rng, 0.0)];
        let got = loss([&p[0], &p[1]], [&y[0], &y[1]]);
        let want = loss_oracle([&p[0], &p[1]], [&y[0], &y[1]]);
        prop_assert!((got - want).abs() <= 1e-9 * want.max(1.0));
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn momentum_is_an_exact_contraction(a in params_strategy(), b in params_strategy(), eta in 0.0f64..0.999) {
        let next = momentum_update(&MomentumState::new(a.clone(), eta).unwrap(), &b);
        for ((n, x), t) in next.params.as_flat().iter().zip(a.as_flat()).zip(b.as_flat()) {
            prop_assert!(((n - t).abs() - eta * (x - t).abs()).abs() <= 1e-9 * (1.0 + (x - t).abs()));
        }
    }

    #[test]
    fn predictions_are_finite_and_keep_heatmaps(p in params_strategy(), seed in 0u64..50) {
        let d = generate_dataset(&SceneConfig { count: 1, seed, ..SceneConfig::default() }).unwrap();
        let s = &d.samples[0];
        for view in View::BOTH {
            let a = p.predict(view, s.input(view));
            let b = p.predict(view, s.input(view));
            prop_assert!(a.joints.is_finite());
            prop_assert_eq!(&a.heatmaps, &s.heatmaps[view.index()]);
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn projection_keeps_gain_bounded(seed in any::<u64>(), scale in 0.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = EstimatorParams::identity();
        let g: Vec<f64> = (0..EstimatorParams::LEN).map(|_| rng.random_range(-scale..scale)).collect();
        p.descend(&g, 1.0, 1.0);
        for view in View::BOTH {
            prop_assert!((p.gain(view) - Matrix3::identity()).norm() <= GAIN_BOUND + 1e-12);
        }
    }
}
