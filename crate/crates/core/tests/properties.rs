use dpgan::eval::{auc, binarize, nearest_neighbors, squared_distance};
use dpgan::privacy::{calibrate_sigma, MomentsLedger};
use dpgan::tensor::{clip_weights, Direction, RmspropState};
use dpgan::{Activation, GradientSet, NetworkSpec, ParameterSet, RecordKind, RecordMatrix};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let (mut p, mut n) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            p += 1.0;
        } else {
            n += 1.0;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / (p * n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn calibration_round_trips_through_the_ledger(
        eps in 0.05f64..200.0,
        delta_exp in 3.0f64..10.0,
        q in 0.0005f64..1.0,
        n_d in 1u32..50,
    ) {
        let delta = 10f64.powf(-delta_exp);
        let sigma = calibrate_sigma(eps, delta, q, n_d).unwrap();
        let mut ledger = MomentsLedger::with_default_grid(q, sigma).unwrap();
        for _ in 0..n_d {
            ledger.record_step();
        }
        let back = ledger.get_epsilon(delta).unwrap();
        prop_assert!((back - eps).abs() <= 0.01 * eps, "eps {} -> {}", eps, back);
    }

    #[test]
    fn epsilon_grows_with_steps(q in 0.001f64..1.0, sigma in 0.01f64..10.0, steps in 1u64..300) {
        let mut ledger = MomentsLedger::with_default_grid(q, sigma).unwrap();
        let mut last = 0.0;
        for _ in 0..steps {
            ledger.record_step();
            let e = ledger.get_epsilon(1e-5).unwrap();
            prop_assert!(e >= last);
            last = e;
        }
    }

    #[test]
    fn clipping_bounds_and_is_idempotent(seed in 0u64..1000, c_p in 0.001f64..2.0, scale in 0.0f64..5.0) {
        let spec = NetworkSpec::uniform(vec![3, 4, 1], Activation::Tanh).unwrap();
        let p = ParameterSet::<f64>::uniform(&spec, scale, &mut ChaCha8Rng::seed_from_u64(seed));
        let once = clip_weights(&p, c_p);
        prop_assert!(once.values().all(|v| v.abs() <= c_p));
        prop_assert_eq!(clip_weights(&once, c_p), once.clone());
        for (a, b) in p.values().zip(once.values()) {
            if a.abs() <= c_p {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn rmsprop_with_zero_gradient_only_decays(v0 in proptest::collection::vec(0.0f64..10.0, 5), decay in 0.0f64..0.999) {
        let spec = NetworkSpec::new(vec![5, 1], vec![Activation::Identity], false).unwrap();
        let mut params = ParameterSet::<f64>::zeros(&spec);
        let before = params.clone();
        let mut opt = RmspropState::new(5, decay, 1e-8).unwrap().with_running_sq_avg(v0.clone()).unwrap();
        opt.apply(&mut params, &GradientSet::zeros(&spec), 0.1, Direction::Descent).unwrap();
        prop_assert_eq!(params, before);
        for (a, b) in opt.running_sq_avg().iter().zip(&v0) {
            prop_assert_eq!(*a, decay * b);
        }
    }

    #[test]
    fn auc_equals_pair_count(
        pairs in proptest::collection::vec((0u8..12, any::<bool>()), 2..500)
    ) {
        let scores: Vec<f64> = pairs.iter().map(|(s, _)| *s as f64 / 4.0).collect();
        let labels: Vec<bool> = pairs.iter().map(|(_, l)| *l).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        prop_assert_eq!(auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
    }

    #[test]
    fn binarize_is_idempotent(values in proptest::collection::vec(0.0f64..=1.0, 1..60), t in 0.0f64..=1.0) {
        let m = RecordMatrix::new(values.len(), 1, values, RecordKind::Continuous).unwrap();
        let b = binarize(&m, t).unwrap();
        prop_assert_eq!(binarize(&b, 0.5).unwrap(), b.clone());
        for (v, o) in m.as_slice().iter().zip(b.as_slice()) {
            prop_assert_eq!(*o, if *v >= t { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn nearest_neighbors_match_brute_force() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mk = |rng: &mut ChaCha8Rng, n: usize| {
        // Coarse grid values produce plenty of exact ties.
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..8).map(|_| rng.random_range(0..3) as f64).collect())
            .collect();
        RecordMatrix::from_rows(&rows, RecordKind::Continuous).unwrap()
    };
    let train = mk(&mut rng, 100);
    let gen = mk(&mut rng, 30);
    let k = 5;
    let nn = nearest_neighbors(&gen, &train, k).unwrap();
    for (g, found) in nn.iter().enumerate() {
        let mut best: Vec<usize> = Vec::new();
        for _ in 0..k {
            let mut pick: Option<usize> = None;
            for i in 0..train.rows() {
                if best.contains(&i) {
                    continue;
                }
                let d = squared_distance(gen.row(g), train.row(i));
                match pick {
                    Some(j) if squared_distance(gen.row(g), train.row(j)) <= d => {}
                    _ => pick = Some(i),
                }
            }
            best.push(pick.unwrap());
        }
        assert_eq!(found.iter().map(|n| n.index).collect::<Vec<_>>(), best);
    }
    let all = nearest_neighbors(&gen, &train, train.rows()).unwrap();
    assert!(all
        .iter()
        .all(|l| l.windows(2).all(|w| w[0].distance <= w[1].distance)));
}
