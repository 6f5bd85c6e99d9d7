//! Training loop behavior and checkpoint persistence.

mod common;

use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use s2v_core::autodiff::Tensor;
use s2v_core::encoder::{AggregateMode, Encoder, EncoderParams, InitMode};
use s2v_core::subtree::{canonical_id, identify_subtrees};
use s2v_core::synth::synthetic_corpus;
use s2v_core::trainer::{
    example_loss, load_checkpoint, save_checkpoint, train, vocab_paths, Checkpoint, PredictionHead, TrainConfig,
    Vocabularies,
};
use s2v_core::vocab::{Counter, LabelMode, Vocab, VocabKind};
use s2v_core::{parse_minilang, Ast, Error};

fn desk_corpus(per_class: usize) -> Vec<Ast> {
    synthetic_corpus(per_class, 2024).iter().map(|p| p.parse().unwrap()).collect()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        dim: 16,
        epochs: 3,
        batch_size: 8,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn trained_small() -> (Checkpoint, Vec<Ast>) {
    let corpus = desk_corpus(4);
    let cfg = small_config();
    let vocabs = Vocabularies::build(&corpus, cfg.label_mode, cfg.min_count).unwrap();
    let (ckpt, _) = train(&corpus, vocabs, &cfg).unwrap();
    (ckpt, corpus)
}

#[test]
fn memorizes_a_single_example() {
    let ast = parse_minilang("void f(int x) { x = x + 1; }", "one").unwrap();
    let stmt = identify_subtrees(&ast)
        .into_iter()
        .find(|s| s.canonical_id.starts_with("expr_stmt"))
        .unwrap();
    let mut labels = Counter::new();
    labels.add(stmt.canonical_id.clone());
    labels.add("condition(expr)");
    let corpus = vec![ast];
    let base = Vocabularies::build(&corpus, LabelMode::Token, 1).unwrap();
    let vocabs = Vocabularies {
        labels: Vocab::from_counter(VocabKind::Subtree, labels, 1).unwrap(),
        ..base
    };
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 1,
        ..TrainConfig::default()
    };
    let (ckpt, report) = train(&corpus, vocabs, &cfg).unwrap();
    assert_eq!(ckpt.step, 200);
    assert_eq!(report.used, 1);
    assert!(ckpt.final_loss < 0.01, "final loss {}", ckpt.final_loss);
}

#[test]
fn first_epoch_loss_is_near_uniform_and_training_does_not_diverge() {
    let corpus = desk_corpus(20);
    let cfg = TrainConfig {
        dim: 32,
        epochs: 5,
        batch_size: 8,
        seed: 11,
        ..TrainConfig::default()
    };
    let vocabs = Vocabularies::build(&corpus, cfg.label_mode, cfg.min_count).unwrap();
    let uniform = (vocabs.labels.len() as f64).ln();
    let (_, report) = train(&corpus, vocabs, &cfg).unwrap();
    let losses = &report.epoch_losses;
    assert_eq!(losses.len(), 5);
    assert!((losses[0] - uniform).abs() <= 0.1 * uniform, "epoch 0 loss {} vs ln|L| {uniform}", losses[0]);
    for w in losses.windows(2) {
        assert!(w[1] <= w[0] * 1.05, "loss rose from {} to {}", w[0], w[1]);
    }
}

fn tiny_encoder(dim: usize) -> (Encoder, Ast) {
    let ast = parse_minilang("int f(int x) { return x; }", "t").unwrap();
    let (types, tokens) = common::test_vocabs();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let encoder = Encoder {
        params: EncoderParams::random(types.len() + 1, tokens.len() + 1, dim, 2, &mut rng),
        types,
        tokens,
        init_mode: InitMode::Combine,
        aggregate_mode: AggregateMode::Attention,
        mask_names: false,
    };
    (encoder, ast)
}

#[test]
fn example_loss_of_a_uniform_head_is_ln_of_label_count() {
    let (encoder, ast) = tiny_encoder(6);
    let head = PredictionHead { w_subtrees: Tensor::zeros(&[4, 6]) };
    for label in 0..4 {
        let loss = example_loss(&ast, &[label], &encoder, &head).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }
    assert!(example_loss(&ast, &[], &encoder, &head).is_err());
}

#[test]
fn example_loss_averages_over_labels() {
    // No conv layers and type init with every type row (1, 0): each node
    // state is (1, 0), so v = (1, 0) and the logits are the first head
    // column.
    let (mut encoder, ast) = tiny_encoder(2);
    encoder.params = EncoderParams::zeros(encoder.types.len() + 1, encoder.tokens.len() + 1, 2, 0);
    encoder.init_mode = InitMode::Type;
    for v in encoder.params.w_type.data_mut().chunks_mut(2) {
        v[0] = 1.0;
    }
    let head = PredictionHead {
        w_subtrees: Tensor::matrix(2, 2, vec![3f64.ln(), 0.0, 0.0, 0.0]).unwrap(),
    };
    let loss = example_loss(&ast, &[0, 1], &encoder, &head).unwrap();
    let expected = 0.5 * (-(0.75f64.ln()) - 0.25f64.ln());
    assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    assert!((loss - 0.8369).abs() < 1e-4);
}

#[test]
fn checkpoint_round_trip_is_lossless() {
    let (ckpt, corpus) = trained_small();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&ckpt, &path).unwrap();
    let first = fs::read(&path).unwrap();
    for p in vocab_paths(&path) {
        assert!(p.exists(), "{} missing", p.display());
    }
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.to_json_bytes(), ckpt.to_json_bytes());
    let again = dir.path().join("again.json");
    save_checkpoint(&loaded, &again).unwrap();
    assert_eq!(fs::read(&again).unwrap(), first);

    let (a, b) = (ckpt.encoder(), loaded.encoder());
    for ast in &corpus {
        let (ea, eb) = (a.encode(ast).unwrap(), b.encode(ast).unwrap());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&ea.code.values), bits(&eb.code.values));
        assert_eq!(ea.alpha, eb.alpha);
    }
}

#[test]
fn training_is_reproducible() {
    let (a, _) = trained_small();
    let (b, _) = trained_small();
    assert_eq!(a.to_json_bytes(), b.to_json_bytes());
    let corpus = desk_corpus(4);
    let cfg = TrainConfig { seed: 4, ..small_config() };
    let vocabs = Vocabularies::build(&corpus, cfg.label_mode, cfg.min_count).unwrap();
    let (c, _) = train(&corpus, vocabs, &cfg).unwrap();
    assert_ne!(a.to_json_bytes(), c.to_json_bytes());
}

#[test]
fn load_rejects_edited_vocab_truncation_and_future_versions() {
    let (ckpt, _) = trained_small();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_checkpoint(&ckpt, &path).unwrap();

    let [labels, tokens, _] = vocab_paths(&path);
    let original = fs::read_to_string(&tokens).unwrap();
    let edited = original.replacen("\t", "x\t", 1);
    let edited = if edited == original { format!("{original}zz\t9\n") } else { edited };
    fs::write(&tokens, edited).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::FingerprintMismatch(_)) | Err(Error::MalformedVocab(_))));
    fs::write(&tokens, &original).unwrap();

    let label_text = fs::read_to_string(&labels).unwrap();
    let mut lines: Vec<&str> = label_text.lines().collect();
    lines.truncate(lines.len() - 1);
    fs::write(&labels, lines.join("\n") + "\n").unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::FingerprintMismatch(k)) if k == "subtree"));
    fs::write(&labels, &label_text).unwrap();
    load_checkpoint(&path).unwrap();

    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint(_))));

    let text = String::from_utf8(bytes).unwrap().replacen("\"version\":1", "\"version\":2", 1);
    fs::write(&path, text).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(Error::CheckpointVersion { found: 2, expected: 1 })
    ));
}

#[test]
fn every_label_mode_and_init_mode_trains() {
    let corpus = desk_corpus(3);
    for label_mode in [LabelMode::Subtree, LabelMode::Token, LabelMode::MethodName] {
        for init_mode in [InitMode::Type, InitMode::Token, InitMode::Combine] {
            let cfg = TrainConfig {
                label_mode,
                init_mode,
                min_count: 1,
                epochs: 1,
                ..small_config()
            };
            let vocabs = Vocabularies::build(&corpus, label_mode, cfg.min_count).unwrap();
            let (ckpt, report) = train(&corpus, vocabs, &cfg).unwrap();
            assert!(ckpt.final_loss.is_finite());
            assert_eq!(report.used + report.skipped, corpus.len());
            let enc = ckpt.encoder();
            assert_eq!(enc.mask_names, label_mode == LabelMode::MethodName);
            enc.encode(&corpus[0]).unwrap();
        }
    }
}

#[test]
fn canonical_ids_ignore_tokens() {
    let a = parse_minilang("int g(int y) { return y * 7; }", "a").unwrap();
    let b = parse_minilang("int h(int z) { return z * 9; }", "b").unwrap();
    assert_eq!(canonical_id(&a, a.root()).unwrap(), canonical_id(&b, b.root()).unwrap());
}
