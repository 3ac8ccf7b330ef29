use memroute_core::eval::{bleu1, normalize_answer, retrieval_recall, token_f1};
use proptest::prelude::*;

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["the", "a", "cat", "Cat!", "sat", "on", "mat.", "an", "dog"]), 0..8)
        .prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn bounded_and_symmetric(a in words(), b in words()) {
        let f = token_f1(&a, &b);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(f, token_f1(&b, &a));
        for bp in [true, false] {
            let s = bleu1(&a, &b, bp);
            prop_assert!((0.0..=1.0).contains(&s));
        }
        prop_assert!(bleu1(&a, &b, true) <= bleu1(&a, &b, false));
    }

    #[test]
    fn self_match_is_perfect(a in words()) {
        prop_assert_eq!(token_f1(&a, &a), 1.0);
        if !normalize_answer(&a).is_empty() {
            prop_assert_eq!(bleu1(&a, &a, true), 1.0);
        }
    }

    #[test]
    fn recall_bounded(hits in prop::collection::vec(0u8..6, 0..6), ev in prop::collection::vec(0u8..6, 0..4)) {
        let h: Vec<String> = hits.iter().map(|x| x.to_string()).collect();
        let e: Vec<String> = ev.iter().map(|x| x.to_string()).collect();
        match retrieval_recall(&h, &e) {
            None => prop_assert!(e.is_empty()),
            Some(r) => prop_assert!((0.0..=1.0).contains(&r)),
        }
    }
}
