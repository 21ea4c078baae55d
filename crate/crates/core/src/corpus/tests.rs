use std::io::Cursor;

use proptest::prelude::*;

use super::*;

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|s| s.to_string()).collect()
}

fn read(text: &str) -> crate::Result<Dataset> {
    read_jsonl(
        Cursor::new(text.as_bytes()),
        &LabelSpace::sentiment(),
        &LoadOptions::default(),
    )
}

#[test]
fn loads_three_line_fixture() {
    let text = r#"{"id":"a","split":"train","words":["good","movie"],"label":"positive","evidence":[[0,1]]}
{"id":"b","split":"train","words":["bad","movie"],"label":"negative"}
{"id":"c","split":"test","words":["fine"],"label":"positive"}
"#;
    let ds = read(text).unwrap();
    assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (2, 0, 1));
    assert_eq!(ds.train[0].id, "a");
    assert_eq!(ds.train[1].label, 1);
    assert_eq!(ds.train[0].evidence, Some(vec![Span::new(0, 1)]));
    ds.validate().unwrap();
}

#[test]
fn rejects_out_of_bounds_span() {
    let text = r#"{"id":"a","split":"train","words":["good","movie"],"label":"positive","evidence":[[0,3]]}"#;
    let err = read(text).unwrap_err();
    assert!(matches!(err, Error::SpanOutOfBounds { line: 1, .. }));
    assert!(err.to_string().contains("span out of bounds"));
}

#[test]
fn rejects_unknown_label() {
    let text = r#"{"id":"a","split":"train","words":["ok"],"label":"positive"}
{"id":"b","split":"train","words":["meh"],"label":"neutral"}"#;
    let err = read(text).unwrap_err();
    assert!(matches!(err, Error::UnknownLabel { line: 2, .. }));
    assert!(err.to_string().contains("unknown label"));
}

#[test]
fn reports_malformed_line_and_duplicates() {
    let text = "{\"id\":\"a\",\"split\":\"train\",\"words\":[\"x\"],\"label\":\"positive\"}\nnot json\n";
    assert!(matches!(
        read(text).unwrap_err(),
        Error::MalformedRecord { line: 2, .. }
    ));
    let text = r#"{"id":"a","split":"train","words":["x"],"label":"positive"}
{"id":"a","split":"test","words":["y"],"label":"negative"}"#;
    assert!(matches!(
        read(text).unwrap_err(),
        Error::DuplicateId { line: 2, .. }
    ));
    let text = r#"{"id":"a","split":"train","words":[],"label":"positive"}"#;
    assert!(matches!(
        read(text).unwrap_err(),
        Error::MalformedRecord { line: 1, .. }
    ));
}

#[test]
fn truncates_long_documents() {
    let ws: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
    let rec = serde_json::json!({
        "id": "a", "split": "train", "words": ws, "label": "positive",
        "evidence": [[2, 4], [5, 9]]
    });
    let opts = LoadOptions {
        max_words: 6,
        tokenizer: None,
    };
    let ds = read_jsonl(
        Cursor::new(rec.to_string().into_bytes()),
        &LabelSpace::sentiment(),
        &opts,
    )
    .unwrap();
    let doc = &ds.train[0];
    assert!(doc.truncated);
    assert_eq!(doc.n_words(), 6);
    assert_eq!(doc.evidence, Some(vec![Span::new(2, 4), Span::new(5, 6)]));
    assert!(validate(doc, &ds.labelspace).is_empty());
}

#[test]
fn tokenize_identity_case() {
    let vocab = SubwordVocab::from_pieces(["good", "movie"]);
    let (sub, align) = tokenize_subwords(&words(&["good", "movie"]), &vocab).unwrap();
    assert_eq!(sub, vec!["good", "movie"]);
    assert_eq!(align, vec![0, 1]);
}

#[test]
fn tokenize_splits_into_pieces() {
    let vocab = SubwordVocab::from_pieces(["un", "believ", "able"]);
    let (sub, align) = tokenize_subwords(&words(&["unbelievable"]), &vocab).unwrap();
    assert_eq!(sub, vec!["un", "##believ", "##able"]);
    assert_eq!(align, vec![0, 0, 0]);
}

#[test]
fn tokenize_falls_back_to_characters() {
    let vocab = SubwordVocab::from_pieces(["good"]);
    let (sub, align) = tokenize_subwords(&words(&["good", "héy"]), &vocab).unwrap();
    assert_eq!(sub, vec!["good", "h", "##é", "##y"]);
    assert_eq!(align, vec![0, 1, 1, 1]);
}

#[test]
fn tokenize_rejects_empty_word() {
    let vocab = SubwordVocab::default();
    assert!(matches!(
        tokenize_subwords(&words(&["a", ""]), &vocab),
        Err(Error::EmptyWord(1))
    ));
}

#[test]
fn validate_reports_each_problem() {
    let labels = LabelSpace::sentiment();
    let doc = Document::new("d", words(&["a", "b", "c", "d"]), 0, None);
    assert!(validate(&doc, &labels).is_empty());

    let mut skip = doc.clone();
    skip.subtokens = words(&["a", "b", "d"]);
    skip.alignment = vec![0, 1, 3];
    let v = validate(&skip, &labels);
    assert_eq!(v, vec![Violation::AlignmentCoverage(vec![2])]);
    assert!(v[0].to_string().contains("alignment coverage"));

    let mut overlap = doc.clone();
    overlap.evidence = Some(vec![Span::new(0, 3), Span::new(1, 4)]);
    assert!(validate(&overlap, &labels).is_empty());
    assert_eq!(overlap.gold_mask(), Some(vec![true; 4]));

    let mut bad = doc;
    bad.label = 5;
    bad.evidence = Some(vec![Span::new(2, 2)]);
    assert_eq!(validate(&bad, &labels).len(), 2);
}

#[test]
fn label_space_invariants() {
    assert!(LabelSpace::new(["only"]).is_err());
    assert!(LabelSpace::new(["a", "a"]).is_err());
    let l = LabelSpace::new(["x", "y", "z"]).unwrap();
    assert_eq!(l.index_of("z"), Some(2));
}

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    let word = "[a-z]{1,6}";
    let doc = (
        proptest::collection::vec(word, 1..12),
        0usize..2,
        proptest::option::of(proptest::collection::vec((0usize..12, 1usize..4), 0..3)),
        0usize..3,
    );
    proptest::collection::vec(doc, 1..8).prop_map(|docs| {
        let mut ds = Dataset::new(LabelSpace::sentiment());
        for (i, (ws, label, ev, split)) in docs.into_iter().enumerate() {
            let n = ws.len();
            let evidence = ev.map(|spans| {
                spans
                    .into_iter()
                    .map(|(s, l)| {
                        let s = s % n;
                        Span::new(s, (s + l).min(n))
                    })
                    .collect()
            });
            let doc = Document::new(format!("d{i}"), ws, label, evidence);
            ds.split_mut(Split::ALL[split]).push(doc);
        }
        ds
    })
}

proptest! {
    #[test]
    fn jsonl_round_trip_is_identity(ds in arb_dataset()) {
        let mut buf = Vec::new();
        write_jsonl(&ds, &mut buf).unwrap();
        let back = read_jsonl(Cursor::new(buf), &ds.labelspace, &LoadOptions::default()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn tokenization_preserves_words(
        ws in proptest::collection::vec("[a-d]{1,8}", 1..10),
        pieces in proptest::collection::vec("[a-d]{1,3}", 0..10),
    ) {
        let vocab = SubwordVocab::from_pieces(&pieces);
        let (sub, align) = tokenize_subwords(&ws, &vocab).unwrap();
        prop_assert!(sub.iter().all(|s| !strip_marker(s).is_empty()));
        let mut rebuilt = vec![String::new(); ws.len()];
        for (s, &w) in sub.iter().zip(&align) {
            rebuilt[w].push_str(strip_marker(s));
        }
        prop_assert_eq!(&rebuilt, &ws);
        let mut doc = Document::new("d", ws, 0, None);
        doc.retokenize(Some(&vocab)).unwrap();
        prop_assert!(validate(&doc, &LabelSpace::sentiment()).is_empty());
    }
}
