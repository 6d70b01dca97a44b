use proptest::prelude::*;
use simkb::pattern::{match_be_pattern, match_like_pattern, scan_to_vec, TaggedSentence, View};

const TOKENS: &[&str] = &[
    "hair_NN",
    "eyes_NNS",
    "Anna_NNP",
    "she_PRP",
    "the_DT",
    "soft_JJ",
    "felt_VBD",
    "looks_VBZ",
    "is_VBZ",
    "was_VBD",
    "be_VB",
    "like_IN",
    "like_VBP",
    "in_IN",
    ",_,",
];

fn sentence_body() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(TOKENS), 1..30).prop_map(|v| v.join(" "))
}

fn corpus() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop_oneof![
            8 => sentence_body().prop_map(|b| format!("web\t{b}")),
            1 => Just("no tabs here".to_string()),
        ],
        0..12,
    )
    .prop_map(|lines| {
        lines
            .into_iter()
            .enumerate()
            .map(|(i, l)| if l.contains('\t') { format!("s{i}\t{l}") } else { l })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn candidates_revalidate_and_anchor_correctly(body in sentence_body()) {
        let s = TaggedSentence::parse_line(&format!("x\tweb\t{body}")).unwrap();
        for c in match_like_pattern(&s) {
            prop_assert!(c.validate(&s));
            prop_assert_eq!(c.view, View::Like);
            prop_assert!(s.tokens[c.anchor_index].surface.eq_ignore_ascii_case("like"));
        }
        for c in match_be_pattern(&s) {
            prop_assert!(c.validate(&s));
            prop_assert_eq!(c.view, View::Be);
            prop_assert!(!s.tokens[c.anchor_index].surface.eq_ignore_ascii_case("like"));
        }
    }

    #[test]
    fn scanning_is_a_stream_homomorphism(a in corpus(), b in corpus()) {
        let (whole, sw) = scan_to_vec(format!("{}\n{}\n", a.join("\n"), b.join("\n")).as_bytes()).unwrap();
        let (left, sa) = scan_to_vec(format!("{}\n", a.join("\n")).as_bytes()).unwrap();
        let (right, sb) = scan_to_vec(format!("{}\n", b.join("\n")).as_bytes()).unwrap();
        prop_assert_eq!(whole, [left, right].concat());
        prop_assert_eq!(sw.counts, sa.counts.merge(sb.counts));
        prop_assert_eq!(sw.sentences, sa.sentences + sb.sentences);
        prop_assert_eq!(sw.diagnostics.len(), sa.diagnostics.len() + sb.diagnostics.len());
    }
}
