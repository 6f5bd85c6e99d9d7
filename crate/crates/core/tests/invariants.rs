//! Structural and numerical invariants across the parsing, vocabulary,
//! encoder and metric layers.

mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s2v_core::ast::{load_ast_file, save_ast_file, Ast, AstNode};
use s2v_core::autodiff::Tape;
use s2v_core::downstream::{
    adjusted_rand_index, clone_metrics, cosine_similarity, detect_clone, mean_reciprocal_rank, search, EmbeddingIndex,
    IndexEntry, Prf,
};
use s2v_core::encoder::{encode, forward_on_tape, AggregateMode, EncoderParams, InitMode, PreparedTree};
use s2v_core::subtree::{build_type_vocab, build_vocab, identify_subtrees};
use s2v_core::synth::{alpha_rename, synthetic_corpus};
use s2v_core::trainer::{predict_subtree_distribution, PredictionHead};
use s2v_core::{parse_minilang, NodeType};

use common::{random_ast, test_vocabs, uniform_tensor};

fn scaled_params<R: Rng>(rng: &mut R, type_rows: usize, token_rows: usize, dim: usize, layers: usize, factor: f64) -> EncoderParams {
    let mut params = EncoderParams::random(type_rows, token_rows, dim, layers, rng);
    for (_, t) in params.tensors_mut() {
        for v in t.data_mut() {
            *v *= factor;
        }
    }
    params
}

/// Same tree with every id replaced through a random injective map and the
/// node list shuffled.
fn relabel_ids<R: Rng>(ast: &Ast, rng: &mut R) -> Ast {
    let old: Vec<u32> = ast.nodes().map(|n| n.id).collect();
    let mut fresh: Vec<u32> = (0..old.len() as u32).map(|i| 1000 + 7 * i).collect();
    fresh.shuffle(rng);
    let map = |id: u32| fresh[old.iter().position(|&o| o == id).expect("known id")];
    let mut nodes: Vec<AstNode> = ast
        .nodes()
        .map(|n| AstNode::new(map(n.id), n.node_type.clone(), n.token.clone(), n.children.iter().map(|&c| map(c)).collect()))
        .collect();
    nodes.shuffle(rng);
    Ast::new(ast.source_id(), map(ast.root()), nodes).unwrap()
}

fn corpus_asts(per_class: usize, seed: u64) -> Vec<Ast> {
    synthetic_corpus(per_class, seed).iter().map(|p| p.parse().unwrap()).collect()
}

// ---------------------------------------------------------------- ast

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn save_load_round_trip(seed in any::<u64>()) {
        let ast = random_ast(&mut ChaCha8Rng::seed_from_u64(seed), 30);
        let back = load_ast_file(&save_ast_file(&ast)).unwrap();
        prop_assert!(back.same_structure(&ast));
        prop_assert_eq!(back, ast);
    }

    #[test]
    fn delete_component_removes_exactly_the_subtree(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ast = random_ast(&mut rng, 20);
        let ids: Vec<u32> = ast.preorder().into_iter().skip(1).collect();
        prop_assume!(!ids.is_empty());
        let id = *ids.choose(&mut rng).unwrap();
        let before = ast.clone();
        let out = ast.delete_component(id).unwrap();
        prop_assert_eq!(out.len(), ast.len() - ast.subtree_size(id));
        prop_assert!(out.node(id).is_none());
        prop_assert_eq!(&ast, &before);
    }

    #[test]
    fn disjoint_deletions_commute(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ast = random_ast(&mut rng, 20);
        let ids: Vec<u32> = ast.preorder().into_iter().skip(1).collect();
        prop_assume!(ids.len() >= 2);
        let a = *ids.choose(&mut rng).unwrap();
        let b = *ids.choose(&mut rng).unwrap();
        prop_assume!(!ast.preorder_from(a).contains(&b) && !ast.preorder_from(b).contains(&a));
        let ab = ast.delete_component(a).unwrap().delete_component(b).unwrap();
        let ba = ast.delete_component(b).unwrap().delete_component(a).unwrap();
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn subtree_count_matches_qualifying_nodes(seed in any::<u64>()) {
        let ast = random_ast(&mut ChaCha8Rng::seed_from_u64(seed), 30);
        let expected = ast
            .nodes()
            .filter(|n| n.node_type.is_subtree_root() || n.node_type.is_keyword())
            .count();
        prop_assert_eq!(identify_subtrees(&ast).len(), expected);
    }
}

#[test]
fn parsing_is_deterministic_and_spans_nest() {
    for p in synthetic_corpus(10, 3) {
        let a = parse_minilang(&p.source, &p.source_id).unwrap();
        let b = parse_minilang(&p.source, &p.source_id).unwrap();
        assert_eq!(a, b);
        assert!(a.has_spans());
        for node in a.nodes() {
            let outer = a.span(node.id).unwrap();
            assert!(outer.start <= outer.end);
            for &c in &node.children {
                let inner = a.span(c).unwrap();
                assert!(
                    outer.start <= inner.start && inner.end <= outer.end,
                    "{}: span of {c} escapes its parent {}",
                    p.source_id,
                    node.id
                );
            }
        }
    }
}

// ---------------------------------------------------------------- vocab

#[test]
fn vocab_ignores_corpus_order() {
    let corpus = corpus_asts(10, 5);
    let reference = build_vocab(&corpus, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..5 {
        let mut shuffled = corpus.clone();
        shuffled.shuffle(&mut rng);
        let v = build_vocab(&shuffled, 2).unwrap();
        assert_eq!(v.to_tsv(), reference.to_tsv());
    }
    for i in 0..reference.len() {
        assert_eq!(reference.index_of(reference.key(i).unwrap()), Some(i));
        assert!(reference.count(i).unwrap() >= 2);
    }
}

#[test]
fn alpha_renaming_leaves_structure_unchanged() {
    let corpus = corpus_asts(10, 11);
    let renamed: Vec<Ast> = corpus.iter().enumerate().map(|(i, a)| alpha_rename(a, i as u64)).collect();
    assert_ne!(corpus, renamed);
    for (a, b) in corpus.iter().zip(&renamed) {
        assert_eq!(identify_subtrees(a), identify_subtrees(b));
    }
    assert_eq!(build_vocab(&corpus, 2).unwrap(), build_vocab(&renamed, 2).unwrap());
    let types = build_type_vocab(&corpus).unwrap();
    assert_eq!(types, build_type_vocab(&renamed).unwrap());

    let (_, tokens) = test_vocabs();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = EncoderParams::random(types.len() + 1, tokens.len() + 1, 16, 2, &mut rng);
    for (a, b) in corpus.iter().zip(&renamed) {
        for agg in [AggregateMode::Attention, AggregateMode::Max] {
            let (va, _) = encode(a, &params, &types, &tokens, InitMode::Type, agg).unwrap();
            let (vb, _) = encode(b, &params, &types, &tokens, InitMode::Type, agg).unwrap();
            assert_eq!(va.values, vb.values);
        }
    }
}

// ---------------------------------------------------------------- encoder

#[test]
fn attention_weights_and_label_distribution_are_normalized() {
    let (types, tokens) = test_vocabs();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_alpha: f64 = 0.0;
    let mut worst_q: f64 = 0.0;
    for i in 0..1000 {
        let ast = random_ast(&mut rng, 40);
        let dim = rng.gen_range(2..=16);
        let params = scaled_params(&mut rng, types.len() + 1, tokens.len() + 1, dim, 1 + i % 2, 10.0);
        let init = [InitMode::Type, InitMode::Token, InitMode::Combine][i % 3];
        let (v, alpha) = encode(&ast, &params, &types, &tokens, init, AggregateMode::Attention).unwrap();
        let alpha = alpha.unwrap();
        assert_eq!(alpha.len(), ast.len());
        assert!(alpha.iter().all(|&a| a > 0.0));
        worst_alpha = worst_alpha.max((alpha.iter().sum::<f64>() - 1.0).abs());

        let rows = rng.gen_range(1..=50);
        let head = PredictionHead { w_subtrees: uniform_tensor(&mut rng, &[rows, dim], 3.0) };
        let q = predict_subtree_distribution(&v, &head).unwrap();
        assert_eq!(q.len(), rows);
        assert!(q.iter().all(|&p| p > 0.0));
        worst_q = worst_q.max((q.iter().sum::<f64>() - 1.0).abs());
    }
    assert!(worst_alpha <= 1e-9, "alpha sum off by {worst_alpha}");
    assert!(worst_q <= 1e-9, "q sum off by {worst_q}");
}

#[test]
fn code_vector_lies_in_convex_hull_of_node_states() {
    let (types, tokens) = test_vocabs();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let ast = random_ast(&mut rng, 30);
        let dim = rng.gen_range(2..=12);
        let params = scaled_params(&mut rng, types.len() + 1, tokens.len() + 1, dim, 2, 10.0);
        let tree = PreparedTree::new(&ast, &types, &tokens).unwrap();
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, false);
        let fwd = forward_on_tape(&mut tape, &vars, &tree, 2, InitMode::Combine, AggregateMode::Attention).unwrap();
        let h = tape.value(fwd.states);
        let v = tape.value(fwd.code);
        for k in 0..dim {
            let col: Vec<f64> = (0..h.rows()).map(|r| h.row(r)[k]).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let x = v.data()[k];
            assert!(lo - 1e-12 <= x && x <= hi + 1e-12, "dim {k}: {x} outside [{lo}, {hi}]");
        }
    }
}

#[test]
fn storage_order_does_not_change_the_encoding() {
    let (types, tokens) = test_vocabs();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..200 {
        let ast = random_ast(&mut rng, 25);
        let shuffled = relabel_ids(&ast, &mut rng);
        assert!(shuffled.same_structure(&ast));
        let params = scaled_params(&mut rng, types.len() + 1, tokens.len() + 1, 8, 2, 10.0);
        let init = [InitMode::Type, InitMode::Token, InitMode::Combine][i % 3];
        for agg in [AggregateMode::Attention, AggregateMode::Max] {
            let (a, alpha_a) = encode(&ast, &params, &types, &tokens, init, agg).unwrap();
            let (b, alpha_b) = encode(&shuffled, &params, &types, &tokens, init, agg).unwrap();
            assert_eq!(a.values, b.values);
            assert_eq!(alpha_a, alpha_b);
        }
    }
}

#[test]
fn sibling_order_is_significant() {
    let a = parse_minilang("int f(int x) { x = x - 1; return x * 2; }", "a").unwrap();
    let b = parse_minilang("int f(int x) { return x * 2; x = x - 1; }", "b").unwrap();
    let (types, tokens) = test_vocabs();
    let params = scaled_params(&mut ChaCha8Rng::seed_from_u64(2), types.len() + 1, tokens.len() + 1, 8, 2, 10.0);
    let (va, _) = encode(&a, &params, &types, &tokens, InitMode::Type, AggregateMode::Attention).unwrap();
    let (vb, _) = encode(&b, &params, &types, &tokens, InitMode::Type, AggregateMode::Attention).unwrap();
    assert_ne!(va.values, vb.values);
}

// ---------------------------------------------------------------- metrics

#[test]
fn random_labelings_have_zero_expected_ari() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let truth: Vec<usize> = (0..150).map(|i| i % 3).collect();
    let trials = 1000;
    let mean = (0..trials)
        .map(|_| {
            let guess: Vec<usize> = (0..truth.len()).map(|_| rng.gen_range(0..3)).collect();
            adjusted_rand_index(&guess, &truth).unwrap()
        })
        .sum::<f64>()
        / trials as f64;
    assert!(mean.abs() <= 0.05, "mean ARI {mean}");
    assert_eq!(adjusted_rand_index(&truth, &truth).unwrap(), 1.0);
}

fn vector(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

proptest! {
    #[test]
    fn clone_detection_is_symmetric_and_scale_invariant(
        (a, b) in (1usize..12).prop_flat_map(|n| (vector(n), vector(n))),
        c in 0.01f64..100.0,
    ) {
        let na: f64 = a.iter().map(|x| x * x).sum();
        let nb: f64 = b.iter().map(|x| x * x).sum();
        prop_assume!(na > 1e-6 && nb > 1e-6);
        let s = cosine_similarity(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert_eq!(s, cosine_similarity(&b, &a).unwrap());
        let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
        prop_assert!((cosine_similarity(&scaled, &b).unwrap() - s).abs() < 1e-12);
        for t in [0.0, 0.5, 0.8, 0.95] {
            prop_assert_eq!(detect_clone(&a, &b, t).unwrap(), detect_clone(&b, &a, t).unwrap());
            if (s - t).abs() > 1e-9 {
                prop_assert_eq!(detect_clone(&scaled, &b, t).unwrap(), detect_clone(&a, &b, t).unwrap());
            }
        }
        prop_assert_eq!(cosine_similarity(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn f1_is_bounded_by_the_arithmetic_mean(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
        let Prf { precision, recall, f1 } = Prf::from_counts(tp, fp, fn_);
        for m in [precision, recall, f1] {
            prop_assert!((0.0..=1.0).contains(&m));
        }
        prop_assert!(f1 <= (precision + recall) / 2.0 + 1e-12);
    }

    #[test]
    fn clone_metrics_are_probabilities(pairs in prop::collection::vec(any::<(bool, bool)>(), 0..40)) {
        let m = clone_metrics(&pairs);
        for x in [m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn mrr_is_a_probability(ranks in prop::collection::vec(prop::option::of(0usize..10), 0..20)) {
        let queries: Vec<(Vec<String>, String)> = ranks
            .iter()
            .map(|r| {
                let list: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
                let target = r.map(|i| format!("c{i}")).unwrap_or_else(|| "absent".into());
                (list, target)
            })
            .collect();
        let mrr = mean_reciprocal_rank(&queries);
        prop_assert!((0.0..=1.0).contains(&mrr));
    }

    #[test]
    fn search_is_ordered_and_stable(seed in any::<u64>(), n in 1usize..30, k in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut index = EmbeddingIndex::new(3);
        for i in 0..n {
            // Coarse grid so that ties occur.
            let vector: Vec<f64> = (0..3).map(|_| rng.gen_range(-2i32..=2) as f64 + 0.5).collect();
            index.push(IndexEntry { source_id: format!("s{i:02}"), language: "ml".into(), task_id: None, vector }).unwrap();
        }
        let q = [1.0, -0.5, 0.25];
        let hits = search(&q, &index, k, None).unwrap();
        prop_assert_eq!(hits.len(), k.min(n));
        for w in hits.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].source_id < w[1].source_id));
        }
        prop_assert_eq!(hits, search(&q, &index, k, None).unwrap());
    }
}

#[test]
fn keyword_and_root_types_exist_in_the_minilang_set() {
    let roots = NodeType::MINILANG.iter().filter(|t| t.is_subtree_root()).count();
    let keywords = NodeType::MINILANG.iter().filter(|t| t.is_keyword()).count();
    assert_eq!((roots, keywords), (4, 3));
}
