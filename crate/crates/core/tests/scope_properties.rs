mod common;

use common::{heads_of, path_set_oracle, rng, scope_oracle, student};
use proptest::prelude::*;
use rand::Rng;
use scopenet::harness::random_tree;
use scopenet::ingest::{candidate_targets, parse_conllu, to_conllu};
use scopenet::scope::{compute_scope, path_set, scope_mask, ScopeError};

#[test]
fn student_fixture_scopes() {
    let s = student();
    let tree = &s.tree;
    assert_eq!(tree.root(), 5);
    assert_eq!(
        path_set(tree, 3).unwrap().into_iter().collect::<Vec<_>>(),
        vec![1, 2, 3, 5]
    );
    let sc = compute_scope(tree, 3, 3).unwrap();
    assert_eq!((sc.start, sc.end), (1, 5));
    assert!(sc.contains(4), "interval contiguity pulls in the adverb");
    let root = compute_scope(tree, 5, 5).unwrap();
    assert_eq!((root.start, root.end), (1, 9));
    assert_eq!(
        scope_mask(&[sc], 9),
        vec![vec![
            true, true, true, true, true, false, false, false, false
        ]]
    );
    assert_eq!(candidate_targets(tree), vec![3, 8, 9]);
    let span = compute_scope(tree, 8, 9).unwrap();
    assert_eq!(span.anchor, 9);
    assert_eq!((span.start, span.end), (5, 9));
}

#[test]
fn single_token_scopes_match_the_path_set_oracle() {
    let mut r = rng(2024);
    for _ in 0..1000 {
        let n = r.gen_range(1..=12);
        let tree = random_tree(&mut r, n);
        let heads = heads_of(&tree);
        for t in 1..=n {
            let oracle = path_set_oracle(&heads, t);
            assert_eq!(
                path_set(&tree, t).unwrap().into_iter().collect::<Vec<_>>(),
                oracle
            );
            let sc = compute_scope(&tree, t, t).unwrap();
            assert_eq!((sc.start, sc.end, sc.anchor), scope_oracle(&heads, t, t));
        }
    }
}

#[test]
fn span_scopes_match_the_union_oracle() {
    let mut r = rng(77);
    for _ in 0..500 {
        let n = r.gen_range(2..=12);
        let tree = random_tree(&mut r, n);
        let heads = heads_of(&tree);
        let s = r.gen_range(1..n);
        let e = r.gen_range(s..=n.min(s + 3));
        let sc = compute_scope(&tree, s, e).unwrap();
        assert_eq!((sc.start, sc.end, sc.anchor), scope_oracle(&heads, s, e));
        assert_eq!((sc.target_start, sc.target_end), (s, e));
    }
}

#[test]
fn out_of_range_targets_are_rejected() {
    let tree = student().tree;
    assert!(matches!(
        compute_scope(&tree, 0, 0),
        Err(ScopeError::OutOfRange { .. })
    ));
    assert!(matches!(
        compute_scope(&tree, 10, 10),
        Err(ScopeError::OutOfRange { .. })
    ));
    assert!(compute_scope(&tree, 4, 3).is_err());
}

#[test]
fn candidate_filter_matches_upos_oracle() {
    let mut r = rng(5);
    for _ in 0..300 {
        let n = r.gen_range(1..=12);
        let tree = random_tree(&mut r, n);
        let oracle: Vec<usize> = tree
            .tokens()
            .iter()
            .filter(|t| ["NOUN", "PROPN", "PRON"].contains(&t.upos.as_str()))
            .map(|t| t.index)
            .collect();
        assert_eq!(candidate_targets(&tree), oracle);
    }
}

proptest! {
    #[test]
    fn scope_covers_its_path_set_and_round_trips(seed in any::<u64>(), n in 1usize..=12) {
        let mut r = rng(seed);
        let tree = random_tree(&mut r, n);
        for t in 1..=n {
            let sc = compute_scope(&tree, t, t).unwrap();
            for j in path_set(&tree, t).unwrap() {
                prop_assert!(sc.contains(j));
            }
            prop_assert!(sc.contains(t));
            prop_assert_eq!(sc.mask(n).iter().filter(|&&b| b).count(), sc.len());
        }
        let back = parse_conllu(&to_conllu(std::slice::from_ref(&tree))).unwrap();
        prop_assert_eq!(back, vec![tree]);
    }
}
