use proptest::prelude::*;
use simkb::properties::{normalize_scores, rank_candidates, select_properties, Candidate, Thresholds};

const PROPS: &[&str] = &["soft", "smooth", "fast", "bright", "cold", "loud", "sweet", "still"];

fn raw_list() -> impl Strategy<Value = Vec<Candidate>> {
    prop::collection::vec(
        (prop::sample::select(PROPS), (0u32..=20).prop_map(|x| x as f64 / 20.0)),
        0..14,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|(p, score)| Candidate {
                property: p.to_string(),
                score,
            })
            .collect()
    })
}

fn prepared(raw: Vec<Candidate>) -> Vec<Candidate> {
    normalize_scores(&rank_candidates(raw).unwrap()).unwrap()
}

fn threshold() -> impl Strategy<Value = f64> {
    (0u32..=10).prop_map(|x| x as f64 / 20.0)
}

proptest! {
    #[test]
    fn selected_scores_lie_in_unit_interval(k in raw_list(), c in raw_list(), tk in threshold(), tc in threshold()) {
        for s in select_properties(&prepared(k), &prepared(c), Thresholds { knowledge: tk, context: tc }) {
            prop_assert!(s.score() > 0.0 && s.score() <= 1.0, "{}", s.score());
            prop_assert!(s.knowledge > tk || s.context > tc);
        }
    }

    #[test]
    fn raising_a_threshold_never_adds(k in raw_list(), c in raw_list(), tk in threshold(), tc in threshold(), dk in threshold(), dc in threshold()) {
        let (k, c) = (prepared(k), prepared(c));
        let names = |th| select_properties(&k, &c, th).into_iter().map(|s| s.property).collect::<std::collections::BTreeSet<_>>();
        let low = names(Thresholds { knowledge: tk, context: tc });
        let high = names(Thresholds { knowledge: tk + dk, context: tc + dc });
        prop_assert!(high.is_subset(&low));
    }

    #[test]
    fn provider_order_does_not_matter(k in raw_list().prop_shuffle(), c in raw_list()) {
        let th = Thresholds::default();
        let mut reversed = k.clone();
        reversed.reverse();
        prop_assert_eq!(
            select_properties(&prepared(k), &prepared(c.clone()), th),
            select_properties(&prepared(reversed), &prepared(c), th)
        );
    }
}
