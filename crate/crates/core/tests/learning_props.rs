//! Randomized properties of the curriculum, networks, agents and imitation.

use colorblocks::agents::{soft_update, DdpgAgent, DdpgParams, PggdAgent, PggdParams};
use colorblocks::curriculum::{advance, sample_scene, scene_satisfies, CurriculumSchedule, SpawnSpec};
use colorblocks::env::EnvConfig;
use colorblocks::imitation::{beta, Expert, ScriptedExpert, TrainedExpert};
use colorblocks::neural::{Matrix, Mlp, OutputKind, RunningNormalizer};
use colorblocks::policy::ActMode;
use colorblocks::task::{encode_observation, EnvKind};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_schedules_get_harder(n in 1usize..12, r0 in 0.06f64..0.3, dr in 0.0f64..0.3, m0 in 0.0f64..0.2, h in 0.1f64..1.0) {
        let s = CurriculumSchedule::linear(n, (r0, r0 + dr), (m0, 0.0), h).unwrap();
        for w in s.levels.windows(2) {
            prop_assert!(w[0].radius <= w[1].radius);
            prop_assert!(w[0].min_radius >= w[1].min_radius);
        }
        prop_assert_eq!(s.last().min_radius, 0.0);
    }

    #[test]
    fn level_never_decreases(rates in prop::collection::vec(0.0f64..=1.0, 1..60)) {
        let s = CurriculumSchedule::default_for(&EnvConfig::new(EnvKind::BlocksTouch).table);
        let mut lvl = s.first();
        for r in rates {
            let next = advance(lvl, &s, r);
            prop_assert!(next.index == lvl.index || next.index == lvl.index + 1);
            prop_assert!(next.index < s.levels.len());
            lvl = next;
        }
    }

    #[test]
    fn sampled_scenes_meet_their_level(seed in any::<u64>(), level in 0usize..8, three in any::<bool>()) {
        let cfg = EnvConfig::new(if three { EnvKind::BlocksChoose } else { EnvKind::BlocksTouch });
        let s = CurriculumSchedule::default_for(&cfg.table);
        let spec = SpawnSpec::from_env(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = sample_scene(&s.levels[level], &spec, &mut rng).unwrap();
        prop_assert!(scene_satisfies(&scene, &s.levels[level], &spec));
        let mut again = ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(sample_scene(&s.levels[level], &spec, &mut again).unwrap(), scene);
    }

    #[test]
    fn normalizer_merge_matches_concatenation(
        a in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 1..20),
        b in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 1..20),
    ) {
        let mut split = RunningNormalizer::new(3);
        split.update(&a).unwrap();
        split.update(&b).unwrap();
        let mut whole = RunningNormalizer::new(3);
        whole.update(&[a, b].concat()).unwrap();
        prop_assert_eq!(split.count, whole.count);
        for i in 0..3 {
            prop_assert!((split.mean[i] - whole.mean[i]).abs() <= 1e-9);
            prop_assert!((split.var[i] - whole.var[i]).abs() <= 1e-9);
            prop_assert!(split.var[i] >= 0.0);
        }
    }

    #[test]
    fn target_drift_is_geometric(online in prop::collection::vec(-3.0f64..3.0, 2), target in prop::collection::vec(-3.0f64..3.0, 2), tau in 0.001f64..1.0, k in 1usize..200) {
        let online = Mlp::from_params(&[1, 1], OutputKind::Identity, online).unwrap();
        let mut t = Mlp::from_params(&[1, 1], OutputKind::Identity, target.clone()).unwrap();
        for _ in 0..k {
            soft_update(&mut t, &online, tau).unwrap();
        }
        let shrink = (1.0 - tau).powi(k as i32);
        for i in 0..2 {
            let expected = (target[i] - online.params()[i]) * shrink;
            prop_assert!((t.params()[i] - online.params()[i] - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn gaussian_std_is_positive(seed in any::<u64>(), x in prop::collection::vec(-1e3f64..1e3, 5)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&[5, 7, 8], OutputKind::Gaussian, 1.0, &mut rng).unwrap();
        let out = net.predict(&x).unwrap();
        prop_assert!(out[4..].iter().all(|&s| s > 0.0));
        prop_assert_eq!(out, net.predict(&x).unwrap());
    }

    #[test]
    fn backward_is_bit_stable(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&[4, 6, 6, 2], OutputKind::Tanh, 1.0, &mut rng).unwrap();
        let x = Matrix::from_rows(&[[0.1, -0.2, 0.3, 0.9], [1.0, 0.5, -0.5, 0.0]]).unwrap();
        let g = Matrix::from_rows(&[[1.0, -1.0], [0.5, 2.0]]).unwrap();
        let one = net.backward(&net.forward(&x).unwrap(), &g).unwrap();
        let two = net.backward(&net.forward(&x).unwrap(), &g).unwrap();
        prop_assert_eq!(one.params, two.params);
    }

    #[test]
    fn beta_anneals_monotonically(b0 in 0.0f64..=1.0, t0 in 1.0f64..500.0, e in 0u64..5000) {
        let (now, later) = (beta(e, b0, t0), beta(e + 1, b0, t0));
        prop_assert!(later <= now);
        if b0 < 1.0 && now - b0 > 1e-9 {
            prop_assert!(later < now);
        }
        prop_assert!((b0..=1.0).contains(&now));
    }

    #[test]
    fn agent_actions_stay_in_the_unit_box(seed in any::<u64>(), obs in prop::collection::vec(-100.0f64..100.0, 32)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ddpg = DdpgAgent::new(32, DdpgParams { hidden: 16, layers: 2, ..DdpgParams::default() }, &mut rng).unwrap();
        let pggd = PggdAgent::new(32, PggdParams { hidden: 16, layers: 2, ..PggdParams::default() }, &mut rng).unwrap();
        let mut acts = vec![ddpg.act(&obs, true, &mut rng).unwrap(), ddpg.act(&obs, false, &mut rng).unwrap()];
        for mode in [ActMode::Explore, ActMode::Deterministic] {
            acts.push(pggd.act(&obs, mode, &mut rng).unwrap().0);
        }
        for a in acts {
            prop_assert!(a.0.iter().all(|v| (-1.0..=1.0).contains(v)), "{:?}", a);
        }
    }

    #[test]
    fn experts_ignore_the_grey_block(seed in any::<u64>(), level in 0usize..8, noise in prop::collection::vec(-5.0f64..5.0, 12)) {
        let cfg = EnvConfig::new(EnvKind::BlocksChoose);
        let s = CurriculumSchedule::default_for(&cfg.table);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = sample_scene(&s.levels[level], &SpawnSpec::from_env(&cfg), &mut rng).unwrap();
        let obs = encode_observation(&scene, EnvKind::BlocksChoose).unwrap();
        let mut perturbed = obs.clone();
        let grey = obs.layout.grey_range().unwrap();
        for (v, n) in perturbed.values[grey].iter_mut().zip(&noise) {
            *v += n;
        }
        let trained = DdpgAgent::new(32, DdpgParams { hidden: 16, layers: 2, ..DdpgParams::default() }, &mut rng).unwrap();
        let experts = [Expert::Scripted(ScriptedExpert::from_env(&cfg)), Expert::Trained(TrainedExpert::new(trained))];
        for e in &experts {
            prop_assert_eq!(e.act(&obs).unwrap(), e.act(&perturbed).unwrap());
        }
    }
}
