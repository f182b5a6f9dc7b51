use imitplan::assembly::canonical_scene;
use imitplan::cem::weigh;
use imitplan::density::{fit_gaussian_weighted, log_sum_exp};
use imitplan::dmp::TrajectoryParams;
use imitplan::features::{extract, FeatureSchema, BLOCK};
use imitplan::sim::{Attachment, Control, PlanarPose, RobotState};
use imitplan::treeplan::{allocate, blend_policy, state_value};
use proptest::prelude::*;

const CASES: u32 = 1000;

fn simplex(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, n).prop_map(|v| {
        let t: f64 = v.iter().sum();
        v.into_iter().map(|x| x / t).collect()
    })
}

fn check_blocks(f: &[f64], blocks: usize) -> Result<(), TestCaseError> {
    prop_assert_eq!(f.len(), 1 + BLOCK * blocks);
    for b in 0..blocks {
        let k = &f[1 + b * BLOCK..1 + (b + 1) * BLOCK];
        let norm = (k[4] * k[4] + k[5] * k[5] + k[6] * k[6] + k[7] * k[7]).sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-12, "quaternion norm {}", norm);
        prop_assert!(k[7] >= 0.0);
        prop_assert!((k[8] - k[1].hypot(k[2])).abs() < 1e-12);
        prop_assert!((k[12] - k[9].hypot(k[10])).abs() < 1e-12);
        prop_assert_eq!(k[3], 0.0);
        prop_assert_eq!(k[11], 0.0);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn features_carry_unit_quaternions_and_consistent_norms(
        q in prop::collection::vec(-3.0f64..3.0, 3),
        qd in prop::collection::vec(-2.0f64..2.0, 3),
        t in 0.0f64..2.0,
        grip in 0.0f64..1.0,
        held in prop::option::of((-0.2f64..0.2, -0.2f64..0.2, -3.2f64..3.2)),
    ) {
        let scene = canonical_scene();
        let mut s = RobotState::at_rest(q);
        s.velocities = qd.clone();
        s.attached = held.map(|(x, y, th)| Attachment {
            object: "link1".into(),
            frame: "front".into(),
            offset: PlanarPose::new(x, y, th),
        });
        let u = Control { joint_velocities: qd, gripper: grip };
        let single = FeatureSchema::new("approach", vec!["?l".into()]);
        let f = extract(&single, &["link1"], t, &s, &u, &scene).unwrap();
        prop_assert_eq!(f[0], grip);
        check_blocks(&f, 1)?;
        let pair = FeatureSchema::new("place", vec!["?l".into(), "?n".into()]);
        let f = extract(&pair, &["link1", "node2"], t, &s, &u, &scene).unwrap();
        check_blocks(&f, 1)?;
        let triple = FeatureSchema::new("between", vec!["?l".into(), "?a".into(), "?b".into()]);
        let f = extract(&triple, &["link1", "node1", "node2"], t, &s, &u, &scene).unwrap();
        check_blocks(&f, 2)?;
    }

    #[test]
    fn blended_policy_stays_a_floored_distribution(
        (pi, target) in (1usize..=6).prop_flat_map(|n| (simplex(n..=n), simplex(n..=n))),
        alpha in 0.0f64..=1.0,
        floor in 0.0f64..0.01,
    ) {
        let out = blend_policy(&pi, &target, alpha, floor);
        let total: f64 = out.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        // Renormalizing can only shrink a floored entry by the total, which is at most 1 + n * floor.
        let bound = floor / (1.0 + out.len() as f64 * floor);
        prop_assert!(out.iter().all(|p| *p >= bound - 1e-15));
        let same = blend_policy(&pi, &pi, alpha, 0.0);
        for (a, b) in same.iter().zip(&pi) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn state_value_is_the_prior_weighted_sum_of_action_values(
        (prior, log_q) in (1usize..=6).prop_flat_map(|n| (simplex(n..=n), prop::collection::vec(-30.0f64..30.0, n))),
    ) {
        let linear: f64 = prior.iter().zip(&log_q).map(|(p, q)| p * q.exp()).sum();
        let v = state_value(&prior, &log_q);
        prop_assert!((v - linear.ln()).abs() < 1e-10, "{} vs {}", v, linear.ln());
        let lo = log_q.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = log_q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }

    #[test]
    fn sample_weights_ignore_a_common_likelihood_offset(
        log_z in prop::collection::vec(-200.0f64..0.0, 2..40),
        shift in -500.0f64..500.0,
        seed in any::<u64>(),
    ) {
        let n = log_z.len();
        let xis: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let h = seed.wrapping_add(i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                vec![(h >> 40) as f64 / (1u64 << 24) as f64, i as f64 * 0.1]
            })
            .collect();
        let shifted: Vec<f64> = log_z.iter().map(|l| l + shift).collect();
        let (a, fa) = weigh(xis.clone(), &log_z).unwrap();
        let (b, fb) = weigh(xis, &shifted).unwrap();
        prop_assert!(!fa && !fb);
        for (x, y) in a.normalized().iter().zip(b.normalized()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let ga = fit_gaussian_weighted(&a, 1e-6).unwrap();
        let gb = fit_gaussian_weighted(&b, 1e-6).unwrap();
        prop_assert!((ga.mean() - gb.mean()).amax() < 1e-10);
        prop_assert!((ga.covariance() - gb.covariance()).amax() < 1e-10);
    }

    #[test]
    fn allocation_covers_the_budget_and_keeps_live_actions(
        pi in simplex(1..=8),
        m in 0usize..500,
        floor in 0.0f64..0.05,
    ) {
        let counts = allocate(&pi, m, floor);
        let total: usize = counts.iter().sum();
        prop_assert_eq!(counts.len(), pi.len());
        prop_assert!(total >= m && total <= m + pi.len());
        for (c, p) in counts.iter().zip(&pi) {
            if *p > floor {
                prop_assert!(*c >= 1);
            }
            prop_assert!((*c as f64 - p * m as f64).abs() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn log_sum_exp_matches_direct_summation(v in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let direct: f64 = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        prop_assert!((log_sum_exp(&v) - direct).abs() < 1e-10);
        let shifted: Vec<f64> = v.iter().map(|x| x + 1000.0).collect();
        prop_assert!((log_sum_exp(&shifted) - 1000.0 - direct).abs() < 1e-9);
    }

    #[test]
    fn trajectory_parameters_round_trip_through_vectors(
        joints in 1usize..5,
        basis in 1usize..8,
        gx in -1.0f64..1.0, gy in -1.0f64..1.0, gt in -3.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let mut xi = TrajectoryParams::zeros(joints, basis, PlanarPose::new(gx, gy, gt));
        for (j, row) in xi.weights.iter_mut().enumerate() {
            for (k, w) in row.iter_mut().enumerate() {
                *w = ((seed ^ ((j * 31 + k) as u64)).wrapping_mul(0x2545_F491_4F6C_DD1D) >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            }
        }
        let v = xi.to_vector();
        prop_assert_eq!(v.len(), TrajectoryParams::vector_len(joints, basis));
        let back = TrajectoryParams::from_vector(&v, joints, basis).unwrap();
        prop_assert_eq!(back.weights, xi.weights);
        prop_assert!((back.goal.x - gx).abs() < 1e-12 && (back.goal.y - gy).abs() < 1e-12);
        let dt = (back.goal.theta - gt).rem_euclid(std::f64::consts::TAU);
        prop_assert!(dt < 1e-9 || dt > std::f64::consts::TAU - 1e-9);
    }

    #[test]
    fn pose_composition_inverts(
        a in (-1.0f64..1.0, -1.0f64..1.0, -3.2f64..3.2),
        b in (-1.0f64..1.0, -1.0f64..1.0, -3.2f64..3.2),
    ) {
        let pa = PlanarPose::new(a.0, a.1, a.2);
        let pb = PlanarPose::new(b.0, b.1, b.2);
        let rel = pa.relative(&pb);
        let again = pa.compose(&rel);
        prop_assert!((again.x - pb.x).abs() < 1e-12 && (again.y - pb.y).abs() < 1e-12);
        let dt = (again.theta - pb.theta).rem_euclid(std::f64::consts::TAU);
        prop_assert!(dt < 1e-9 || dt > std::f64::consts::TAU - 1e-9);
    }
}
