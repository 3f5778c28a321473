mod common;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trajgame::game::PotentialGame;
use trajgame::implicit::SubspaceFamily;
use trajgame::io::SceneFile;
use trajgame::pipeline::{fold_assignment, split_indices, Scene, SourceTag};
use trajgame::scenarios::RoadGeometry;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unilateral_change_in_utility_equals_change_in_potential(seed in any::<u64>(), step in -1.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (sc, theta) = common::pedestrian(&mut rng);
        for k in 0..sc.len() {
            let poly = SubspaceFamily::polytope(&sc, k);
            let game = sc.game_on(k);
            let a = common::interior_point(poly, &mut rng);
            for i in 0..2 {
                let mut d = vec![0.0; 2];
                d[i] = step.signum();
                let t = common::ray_extent(poly, a.as_slice(), &d).min(10.0) * step.abs();
                let b = DVector::from_fn(2, |j, _| a[j] + t * d[j]);
                let du = game.utility(i, &theta, &b).unwrap() - game.utility(i, &theta, &a).unwrap();
                let dphi = game.potential(&theta, &b).unwrap() - game.potential(&theta, &a).unwrap();
                prop_assert!((du - dphi).abs() <= 1e-9 * (1.0 + du.abs()));
            }
        }
    }

    #[test]
    fn folds_partition_the_scenes(n in 4usize..200, k in 2usize..6, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let folds = fold_assignment(n, k, seed).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(folds, fold_assignment(n, k, seed).unwrap());
    }

    #[test]
    fn validation_split_is_a_partition(n in 2usize..100, frac in 0.05f64..0.5, seed in any::<u64>()) {
        let (train, val) = split_indices(n, frac, seed);
        let everything: Vec<usize> = (0..n).collect();
        if n < 5 || (n as f64 * frac).round() == 0.0 {
            // too few scenes to hold any out: both sides see everything
            prop_assert_eq!(&train, &everything);
            prop_assert_eq!(&val, &everything);
        } else {
            let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, everything);
            prop_assert!(!train.is_empty() && !val.is_empty());
        }
    }

    #[test]
    fn scene_file_roundtrip_is_exact(
        x in 50.0f64..200.0,
        v in 0.0f64..35.0,
        dx in -30.0f64..30.0,
        y in -4.5f64..-2.5,
        jitter in prop::collection::vec(-0.5f64..0.5, 70),
    ) {
        let dt = 0.2;
        let past = common::straight_past(x, v, x + dx, v, y, dt, 15);
        let future = (0..2)
            .map(|i| (0..35).map(|t| {
                let base = past.agents[i][14];
                [base[0] + v * dt * (t + 1) as f64 + jitter[i * 35 + t], base[1] + 0.01 * jitter[i * 35 + t]]
            }).collect())
            .collect();
        let scene = Scene {
            id: format!("s{}", x.to_bits()),
            source: SourceTag::Synthetic,
            dt,
            geometry: RoadGeometry::default(),
            past,
            future,
        };
        let text = SceneFile::from_scenes(std::slice::from_ref(&scene)).to_json().unwrap();
        let back = SceneFile::from_json(&text).unwrap().to_scenes().unwrap();
        prop_assert_eq!(back, vec![scene]);
    }
}
