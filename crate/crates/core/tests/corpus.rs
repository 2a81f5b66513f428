use attnguide::code::{parse_corpus, read_corpus, write_corpus, AstKind, SyntaxClass};
use attnguide::harness::{gen_corpus, CorpusParams};

#[test]
fn every_class_and_kind_is_common() {
    let recs = gen_corpus(&CorpusParams {
        num_snippets: 2000,
        seed: 7,
    });
    let units = parse_corpus(&recs).unwrap();
    assert_eq!(units.len(), 2000);
    let floor = units.len() / 100;
    for class in SyntaxClass::STUDIED {
        let n = units
            .iter()
            .filter(|u| u.tokens.iter().any(|t| t.syntax_class == class))
            .count();
        assert!(n >= floor, "{class:?} appears in only {n} snippets");
    }
    for kind in AstKind::ALL {
        let n = units.iter().filter(|u| u.ast_spans.iter().any(|s| s.kind == kind)).count();
        assert!(n >= floor, "{kind:?} appears in only {n} snippets");
    }
}

#[test]
fn jsonl_round_trip_is_byte_identical() {
    let recs = gen_corpus(&CorpusParams { num_snippets: 50, seed: 7 });
    let mut a = Vec::new();
    write_corpus(&mut a, &recs).unwrap();
    let back = read_corpus(a.as_slice()).unwrap();
    assert_eq!(back, recs);
    let mut b = Vec::new();
    write_corpus(&mut b, &gen_corpus(&CorpusParams { num_snippets: 50, seed: 7 })).unwrap();
    assert_eq!(a, b);
}
