use std::collections::BTreeSet;

use super::*;
use crate::seed::rng_from_seed;

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn lexicon() -> ObjectLexicon {
    ObjectLexicon::new(LexiconSpec {
        objects: set(&["cat", "dog", "sofa", "car", "tree", "boat", "horse", "cup"]),
        synonyms: [("kitty", "cat"), ("puppy", "dog")]
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .into(),
        cog_targets: set(&["ghost", "person"]),
    })
    .unwrap()
}

fn image(id: &str, objects: &[&str]) -> GtImage {
    GtImage {
        image_id: id.into(),
        objects: set(objects),
        caption: format!("a picture of {}", objects.join(" and ")),
    }
}

fn disjoint_gt() -> GroundTruthSequence {
    GroundTruthSequence {
        seq_id: "s".into(),
        images: vec![
            image("a", &["cat", "sofa"]),
            image("b", &["dog"]),
            image("c", &["car", "tree"]),
            image("d", &["boat"]),
        ],
    }
}

#[test]
fn caption_formula_cases() {
    let lex = lexicon();
    let s = score_caption("a cat and a dog", &set(&["cat", "sofa"]), &lex);
    assert_eq!((s.chair, s.hal, s.cog), (0.5, 1.0, 0.0));
    let s = score_caption("a cat on a sofa", &set(&["cat", "sofa"]), &lex);
    assert_eq!((s.chair, s.hal, s.cog), (0.0, 0.0, 0.0));
    let s = score_caption("a ghost", &set(&["cat"]), &lex);
    assert_eq!((s.chair, s.hal, s.cog), (1.0, 1.0, 1.0));
    let s = score_caption("nothing recognizable", &set(&["cat"]), &lex);
    assert_eq!((s.chair, s.hal, s.cog), (0.0, 0.0, 0.0));
}

#[test]
fn full_output_has_full_coverage() {
    let text = "For Image 1: a kitty on a sofa. For Image 2: a puppy. For Image 3: a car by a tree. For Image 4: a boat.";
    let s = score_sequence(text, &disjoint_gt(), &lexicon());
    assert_eq!((s.chair, s.hal, s.cog, s.scover), (0.0, 0.0, 0.0, 1.0));
}

#[test]
fn partial_coverage_ratio() {
    let gt = GroundTruthSequence {
        seq_id: "eight".into(),
        images: (0..8).map(|i| image(&format!("i{i}"), &["cup"])).collect(),
    };
    let text = (1..=6)
        .map(|k| format!("For Image {k}: a cup."))
        .collect::<Vec<_>>()
        .join(" ");
    assert_eq!(score_sequence(&text, &gt, &lexicon()).scover, 0.75);
}

#[test]
fn swapped_captions_raise_chair() {
    let lex = lexicon();
    let gt = disjoint_gt();
    let in_order = "For Image 1: a cat on a sofa. For Image 2: a dog. For Image 3: a car and a tree. For Image 4: a boat.";
    let swapped = "For Image 1: a dog. For Image 2: a cat on a sofa. For Image 3: a boat. For Image 4: a car and a tree.";
    let a = score_sequence(in_order, &gt, &lex);
    let b = score_sequence(swapped, &gt, &lex);
    assert_eq!(a.chair, 0.0);
    assert!(b.chair > a.chair);
    assert_eq!(b.scover, 1.0);
}

#[test]
fn out_of_order_text_matches_by_index() {
    let lex = lexicon();
    let gt = disjoint_gt();
    let text = "For Image 3: a car and a tree. For Image 1: a cat on a sofa. For Image 4: a boat. For Image 2: a dog.";
    let s = score_sequence(text, &gt, &lex);
    assert_eq!((s.chair, s.scover), (0.0, 1.0));
}

#[test]
fn omitted_index_is_padded_and_penalized() {
    let lex = lexicon();
    let gt = disjoint_gt();
    // index 4 copies index 3's caption, which mentions objects absent from image 4
    let text = "For Image 1: a cat on a sofa. For Image 2: a dog. For Image 3: a car and a tree.";
    let s = score_sequence(text, &gt, &lex);
    assert_eq!(s.scover, 0.75);
    assert_eq!(s.chair, 0.25);
    assert_eq!(s.hal, 0.25);
}

#[test]
fn spurious_indices_are_reported() {
    let text = "For Image 1: a cat. For Image 9: a dog.";
    let s = score_sequence(text, &disjoint_gt(), &lexicon());
    assert_eq!(s.spurious_indices, 1);
    assert_eq!(s.scover, 0.25);
}

#[test]
fn aggregate_means() {
    let mk = |scover| SeqScores {
        seq_id: "x".into(),
        chair: 0.2,
        hal: 0.5,
        cog: 0.0,
        scover,
        spurious_indices: 0,
    };
    let one = aggregate(&[mk(1.0)]).unwrap();
    assert_eq!((one.chair, one.hal, one.scover), (0.2, 0.5, 1.0));
    let two = aggregate(&[mk(1.0), mk(0.5)]).unwrap();
    assert_eq!(two.scover, 0.75);
    let rev = aggregate(&[mk(0.5), mk(1.0)]).unwrap();
    assert_eq!(two.scover, rev.scover);
    assert!(matches!(aggregate(&[]), Err(MetricsError::Empty)));
}

#[test]
fn context_amber_sequences() {
    let annotations: Vec<GtImage> = (0..1000).map(|i| image(&format!("amber{i}"), &["cup"])).collect();
    let mut rng = rng_from_seed(11);
    for (n, count) in [(SHORT_CONTEXT, 250), (LONG_CONTEXT, 250)] {
        let seqs = build_context_amber(&annotations, n, count, &mut rng).unwrap();
        assert_eq!(seqs.len(), count);
        for s in &seqs {
            assert_eq!(s.n(), n);
            let ids: BTreeSet<_> = s.images.iter().map(|i| &i.image_id).collect();
            assert_eq!(ids.len(), n);
        }
    }
    let again = build_context_amber(&annotations, 4, 5, &mut rng_from_seed(1)).unwrap();
    assert_eq!(again, build_context_amber(&annotations, 4, 5, &mut rng_from_seed(1)).unwrap());
    assert!(build_context_amber(&annotations[..3], 4, 1, &mut rng).is_err());
}

#[test]
fn evaluate_flags_unknown_ids_and_scores_missing_as_empty() {
    let lex = lexicon();
    let gt = vec![disjoint_gt()];
    let preds = vec![Prediction {
        seq_id: "nope".into(),
        text: String::new(),
    }];
    match evaluate(&preds, &gt, &lex, None) {
        Err(MetricsError::UnknownSeqIds(ids)) => assert_eq!(ids, vec!["nope".to_string()]),
        other => panic!("{other:?}"),
    }
    let report = evaluate(&[], &gt, &lex, None).unwrap();
    assert_eq!(report.scover, 0.0);
    assert!(matches!(evaluate(&[], &gt, &lex, Some(8)), Err(MetricsError::Empty)));
}

mod props {
    use super::*;
    use proptest::prelude::*;

    const WORDS: [&str; 10] = ["cat", "dog", "sofa", "car", "tree", "boat", "ghost", "a", "the", "red"];

    fn caption() -> impl Strategy<Value = String> {
        prop::collection::vec(0..WORDS.len(), 0..6)
            .prop_map(|ix| ix.into_iter().map(|i| WORDS[i]).collect::<Vec<_>>().join(" "))
    }

    proptest! {
        #[test]
        fn metrics_in_unit_interval(caps in prop::collection::vec(caption(), 0..6)) {
            let text = caps.iter().enumerate()
                .map(|(i, c)| format!("For Image {}: {c}", i + 1))
                .collect::<Vec<_>>().join(" ");
            let s = score_sequence(&text, &disjoint_gt(), &lexicon());
            for v in [s.chair, s.hal, s.cog, s.scover] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn adding_hallucination_never_lowers_chair(caps in prop::collection::vec(caption(), 4), k in 0usize..4) {
            let render = |caps: &[String]| caps.iter().enumerate()
                .map(|(i, c)| format!("For Image {}: {c}", i + 1))
                .collect::<Vec<_>>().join(" ");
            let gt = disjoint_gt();
            let before = score_sequence(&render(&caps), &gt, &lexicon());
            let mut more = caps.clone();
            // "horse" is in the lexicon and in no image's ground truth
            more[k].push_str(" horse");
            let after = score_sequence(&render(&more), &gt, &lexicon());
            prop_assert!(after.chair >= before.chair);
        }

        #[test]
        fn deleting_an_index_never_raises_scover(caps in prop::collection::vec(caption(), 4), k in 0usize..4) {
            let render = |skip: Option<usize>| caps.iter().enumerate()
                .filter(|(i, _)| Some(*i) != skip)
                .map(|(i, c)| format!("For Image {}: {c}", i + 1))
                .collect::<Vec<_>>().join(" ");
            let gt = disjoint_gt();
            let full = score_sequence(&render(None), &gt, &lexicon());
            let cut = score_sequence(&render(Some(k)), &gt, &lexicon());
            prop_assert!(cut.scover <= full.scover);
        }
    }
}
