//! Randomized properties of the block world.

use colorblocks::curriculum::{sample_scene, CurriculumSchedule, SpawnSpec};
use colorblocks::env::EnvConfig;
use colorblocks::physics::{detect_contacts, step_world, Action, Contact, Vec3, WorldState};
use colorblocks::task::EnvKind;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scene(kind: EnvKind, seed: u64, level: usize) -> (EnvConfig, WorldState) {
    let cfg = EnvConfig::new(kind);
    let schedule = CurriculumSchedule::default_for(&cfg.table);
    let lvl = schedule.levels[level % schedule.levels.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = sample_scene(&lvl, &SpawnSpec::from_env(&cfg), &mut rng).unwrap();
    (cfg, s)
}

fn kind() -> impl Strategy<Value = EnvKind> {
    prop_oneof![Just(EnvKind::BlocksTouch), Just(EnvKind::BlocksChoose)]
}

fn actions(len: usize) -> impl Strategy<Value = Vec<[f64; 4]>> {
    prop::collection::vec(prop::array::uniform4(-1.5f64..1.5), 1..len)
}

fn overlap_with_effector(s: &WorldState) -> f64 {
    s.blocks
        .iter()
        .filter(|b| b.on_table)
        .map(|b| b.radius + s.effector.radius - (b.pos - s.effector.pos).norm())
        .fold(f64::NEG_INFINITY, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stepping_is_deterministic(k in kind(), seed in any::<u64>(), level in 0usize..8, acts in actions(40)) {
        let (cfg, s0) = scene(k, seed, level);
        let (mut a, mut b) = (s0.clone(), s0);
        for act in acts {
            a = step_world(&a, &Action(act), &cfg.physics).unwrap();
            b = step_world(&b, &Action(act), &cfg.physics).unwrap();
            prop_assert_eq!(&a, &b);
        }
    }

    #[test]
    fn effector_never_sinks_into_a_block(k in kind(), seed in any::<u64>(), level in 0usize..8, acts in actions(60)) {
        let (cfg, mut s) = scene(k, seed, level);
        for act in acts {
            s = step_world(&s, &Action(act), &cfg.physics).unwrap();
            prop_assert!(overlap_with_effector(&s) <= 1e-9, "overlap {}", overlap_with_effector(&s));
        }
    }

    #[test]
    fn effector_stays_in_the_workspace(k in kind(), seed in any::<u64>(), acts in actions(80)) {
        let (cfg, mut s) = scene(k, seed, 7);
        let ws = cfg.physics.workspace(&cfg.table);
        for act in acts {
            s = step_world(&s, &Action(act), &cfg.physics).unwrap();
            prop_assert!(ws.contains(s.effector.pos));
            prop_assert_eq!(s.effector.gripper, [0.0, 0.0]);
        }
    }

    #[test]
    fn contacts_are_canonical_and_symmetric(k in kind(), seed in any::<u64>(), level in 0usize..8, acts in actions(40)) {
        let (cfg, mut s) = scene(k, seed, level);
        for act in acts {
            s = step_world(&s, &Action(act), &cfg.physics).unwrap();
            let cs = detect_contacts(&s, cfg.physics.contact_margin);
            for c in &cs {
                prop_assert!(c.a < c.b);
                prop_assert_eq!(Contact::new(c.b, c.a), *c);
            }
            let mut sorted = cs.clone();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), cs.len());
        }
    }

    #[test]
    fn zero_action_never_adds_block_speed(
        k in kind(),
        seed in any::<u64>(),
        vels in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 3),
        steps in 1usize..30,
    ) {
        let (cfg, mut s) = scene(k, seed, 7);
        for (b, (vx, vy)) in s.blocks.iter_mut().zip(vels) {
            b.lin_vel = Vec3::new(vx, vy, 0.0);
        }
        let speed = |s: &WorldState| s.blocks.iter().map(|b| b.lin_vel.norm()).sum::<f64>();
        for _ in 0..steps {
            let next = step_world(&s, &Action([0.0; 4]), &cfg.physics).unwrap();
            prop_assert!(speed(&next) <= speed(&s) + 1e-12);
            s = next;
        }
    }

    #[test]
    fn on_table_blocks_stay_on_the_table(k in kind(), seed in any::<u64>(), acts in actions(60)) {
        let (cfg, mut s) = scene(k, seed, 7);
        for act in acts {
            s = step_world(&s, &Action(act), &cfg.physics).unwrap();
            for b in s.blocks.iter().filter(|b| b.on_table) {
                prop_assert!(cfg.table.contains_xy(b.pos));
                prop_assert!((-std::f64::consts::PI..std::f64::consts::PI).contains(&b.yaw));
            }
        }
    }
}
