//! Perturbation-based explanations of a trained classifier.

mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use s2v_core::downstream::{finetune, Classifier, FinetuneConfig};
use s2v_core::encoder::{AggregateMode, InitMode};
use s2v_core::interpretability::{
    confidence_delta, explain, is_component, node_attention_scores, perturb_all, render_heat, render_svg, SHADES,
};
use s2v_core::trainer::TrainConfig;
use s2v_core::{Ast, NodeType};

use common::{small_checkpoint_with, while_corpus};

/// Classifier for "has a while loop" plus its training corpus.
fn while_classifier() -> (Classifier, Vec<(Ast, usize)>) {
    let corpus = while_corpus(&mut ChaCha8Rng::seed_from_u64(2), 15);
    let asts: Vec<Ast> = corpus.iter().map(|(a, _)| a.clone()).collect();
    let ckpt = small_checkpoint_with(&asts, 16, InitMode::Type);
    let cfg = FinetuneConfig {
        train: TrainConfig {
            epochs: 60,
            batch_size: 4,
            seed: 1,
            ..TrainConfig::default()
        },
        ..FinetuneConfig::default()
    };
    let (clf, report) = finetune(&ckpt, &corpus, &cfg).unwrap();
    assert!(report.accuracy >= 0.8, "{report:?}");
    (clf, corpus)
}

#[test]
fn unchanged_program_has_zero_delta() {
    let (clf, corpus) = while_classifier();
    for (ast, class) in &corpus {
        assert_eq!(confidence_delta(&clf, ast, ast, *class).unwrap(), 0.0);
    }
    assert!(confidence_delta(&clf, &corpus[0].0, &corpus[0].0, 2).is_err());
}

#[test]
fn deleting_the_discriminative_loop_lowers_confidence() {
    let (clf, corpus) = while_classifier();
    let mut checked = 0;
    for (ast, class) in corpus.iter().filter(|(_, c)| *c == 1) {
        let loops: Vec<_> = perturb_all(ast)
            .into_iter()
            .filter(|(id, _)| ast.node(*id).unwrap().node_type == NodeType::While)
            .collect();
        assert_eq!(loops.len(), 1);
        let (_, without) = &loops[0];
        let delta = confidence_delta(&clf, ast, without, *class).unwrap();
        assert!(delta > 0.0, "{}: delta {delta}", ast.source_id());
        checked += 1;
    }
    assert_eq!(checked, 15);
}

#[test]
fn explanation_reports_are_well_formed() {
    let (clf, corpus) = while_classifier();
    for (ast, class) in corpus.iter().take(6) {
        let report = explain(&clf, ast, *class).unwrap();
        let components = ast
            .nodes()
            .filter(|n| n.id != ast.root() && is_component(&n.node_type))
            .count();
        assert_eq!(report.records.len(), components);
        for r in &report.records {
            assert!((-1.0..=1.0).contains(&r.delta));
            assert!((0.0..=1.0).contains(&r.attention_mass));
        }
        assert!((report.raw_alpha.values().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(report.display_scores.values().any(|&s| s == 1.0));
        assert!(report.display_scores.values().all(|&s| (0.0..=1.0).contains(&s)));
        assert_eq!(report.correlation.method, "spearman");
        if let Some(rho) = report.correlation.value {
            assert!((-1.0..=1.0).contains(&rho));
        }
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["source_id"], ast.source_id());
        assert_eq!(report, explain(&clf, ast, *class).unwrap());
    }
}

#[test]
fn heat_rendering_covers_every_node() {
    let (clf, corpus) = while_classifier();
    let ast = &corpus[1].0;
    let scores = node_attention_scores(ast, &clf.encoder).unwrap();
    let tree = render_heat(ast, &scores.display, None).unwrap();
    assert_eq!(tree.lines().count(), ast.len());
    assert!(tree.contains(SHADES[4]));
    let svg = render_svg(ast, &scores.display).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<rect").count(), ast.len());

    let mut pooled = clf.encoder.clone();
    pooled.aggregate_mode = AggregateMode::Max;
    assert!(node_attention_scores(ast, &pooled).is_err());
}
