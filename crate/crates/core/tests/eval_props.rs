mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simkb::eval::{bleu, mrr, recall_at_k, RankingCase};
use simkb::kb::KnowledgeBase;
use simkb::stats::{domain_mapping_table, Taxonomy};

const ITEMS: &[&str] = &["a", "b", "c", "d", "e", "f", "g", "h"];

fn case() -> impl Strategy<Value = RankingCase> {
    (
        prop::collection::vec(prop::sample::select(ITEMS), 1..3),
        prop::sample::subsequence(ITEMS, 0..ITEMS.len()).prop_shuffle(),
    )
        .prop_map(|(gold, ranking)| {
            RankingCase::new(
                gold.into_iter().map(String::from).collect(),
                ranking.into_iter().map(String::from).collect(),
            )
        })
}

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(ITEMS).prop_map(String::from), 1..12)
}

proptest! {
    #[test]
    fn ranking_metrics_are_bounded_and_recall_grows(cases in prop::collection::vec(case(), 1..20)) {
        let m = mrr(&cases).unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
        let mut prev = 0.0;
        for k in 1..=ITEMS.len() + 1 {
            let r = recall_at_k(&cases, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!(r >= prev);
            prev = r;
        }
        prop_assert!(m <= recall_at_k(&cases, ITEMS.len()).unwrap() + 1e-12);
    }

    #[test]
    fn bleu_of_identical_text_is_one(x in words(), n in 1usize..5) {
        prop_assert!((bleu(&x, &x, n).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn domain_percentages_sum_to_one_hundred(seed in any::<u64>(), count in 1usize..150) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kb = KnowledgeBase::build(&common::random_instances(&mut rng, count), "h").unwrap();
        let mut tax = Taxonomy::default();
        for (term, path) in [
            ("he", ["male", "person"]),
            ("hair", ["body covering", "body part"]),
            ("road", ["way", "artifact"]),
            ("lawyer", ["professional", "person"]),
            ("silk", ["fabric", "artifact"]),
            ("shark", ["fish", "animal"]),
            ("diamond", ["gem", "natural object"]),
            ("kid", ["juvenile", "person"]),
        ] {
            tax.add_path(term, &path);
        }
        let table = domain_mapping_table(&kb, &tax);
        let total: f64 = table.cells.values().sum();
        if table.cells.is_empty() {
            prop_assert_eq!(table.assigned_weight, 0);
        } else {
            prop_assert!((total - 100.0).abs() <= 1e-9, "{total}");
        }
    }
}
