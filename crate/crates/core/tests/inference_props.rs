mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simkb::inference::Inference;
use simkb::kb::KnowledgeBase;

fn kb_from(seed: u64, count: usize) -> KnowledgeBase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    KnowledgeBase::build(&common::random_instances(&mut rng, count), "t")
        .unwrap()
        .finalize()
}

proptest! {
    #[test]
    fn interpretation_ignores_the_topic(seed in any::<u64>(), count in 1usize..80, v in 0usize..7) {
        let kb = kb_from(seed, count);
        let inf = Inference::new(&kb).unwrap();
        let vehicle = common::VEHICLES[v];
        let base = inf.interpret(common::TOPICS[0], vehicle, 10);
        for t in common::TOPICS.iter().chain(&["someone else"]) {
            prop_assert_eq!(&inf.interpret(t, vehicle, 10), &base);
        }
        for p in common::PROPERTIES {
            prop_assert_eq!(&inf.generate_vehicles("x", p, 10), &inf.generate_vehicles("y", p, 10));
        }
    }

    #[test]
    fn scores_are_finite_and_non_negative(seed in any::<u64>(), count in 1usize..80, gamma in 0.0f64..20.0) {
        let kb = kb_from(seed, count);
        let inf = Inference::new(&kb).unwrap();
        for p in common::PROPERTIES {
            for v in common::VEHICLES {
                for s in [inf.score_property("t", v, p), inf.score_vehicle("t", p, v), inf.polish_score(p, v, gamma)] {
                    prop_assert!(s.is_finite() && s >= 0.0, "{s}");
                }
            }
        }
    }

    #[test]
    fn zero_gamma_polish_equals_generation(seed in any::<u64>(), count in 1usize..80) {
        let kb = kb_from(seed, count);
        let inf = Inference::new(&kb).unwrap();
        for p in common::PROPERTIES {
            for v in common::VEHICLES {
                prop_assert!((inf.polish_score(p, v, 0.0) - inf.score_vehicle("", p, v)).abs() <= 1e-12);
            }
        }
    }
}
