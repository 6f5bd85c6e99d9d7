#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use s2v_core::ast::{Ast, AstNode, NodeType};
use s2v_core::autodiff::Tensor;
use s2v_core::encoder::InitMode;
use s2v_core::trainer::{train, Checkpoint, TrainConfig, Vocabularies};
use s2v_core::vocab::{Counter, Vocab, VocabKind};

pub const TOKENS: &[&str] = &["x", "y", "arr", "n", "0", "1", "+", "<"];

const INNER: &[NodeType] = &[
    NodeType::Block,
    NodeType::ExprStmt,
    NodeType::DeclStmt,
    NodeType::Expr,
    NodeType::Condition,
    NodeType::If,
    NodeType::While,
    NodeType::For,
    NodeType::BinOp,
    NodeType::Call,
    NodeType::Index,
    NodeType::Return,
];

/// Random valid tree with 1..=max_nodes nodes. Ids are a random
/// permutation so storage order differs from pre-order.
pub fn random_ast<R: Rng>(rng: &mut R, max_nodes: usize) -> Ast {
    let n = rng.gen_range(1..=max_nodes);
    let mut parent = vec![None; n];
    for (i, p) in parent.iter_mut().enumerate().skip(1) {
        *p = Some(rng.gen_range(0..i));
    }
    let mut ids: Vec<u32> = (0..n as u32).map(|i| i * 3 + 1).collect();
    ids.shuffle(rng);
    let mut nodes = Vec::with_capacity(n);
    for i in 0..n {
        let children: Vec<u32> = (0..n).filter(|&c| parent[c] == Some(i)).map(|c| ids[c]).collect();
        let (node_type, token) = if children.is_empty() {
            match rng.gen_range(0..4) {
                0 => (NodeType::Literal, Some(["0", "1", "42"][rng.gen_range(0..3)].to_string())),
                1 => (NodeType::Expr, None),
                _ => (NodeType::Ident, Some(["x", "y", "arr", "zz"][rng.gen_range(0..4)].to_string())),
            }
        } else {
            let t = INNER.choose(rng).expect("nonempty").clone();
            let tok = (t == NodeType::BinOp).then(|| ["+", "<", "*"][rng.gen_range(0..3)].to_string());
            (t, tok)
        };
        nodes.push(AstNode::new(ids[i], node_type, token, children));
    }
    Ast::new(format!("rand{}", rng.gen::<u32>()), ids[0], nodes).expect("generated tree is valid")
}

/// Type vocabulary missing `while` and token vocabulary missing `zz`, `42`
/// and `*`, so that UNK rows are exercised.
pub fn test_vocabs() -> (Vocab, Vocab) {
    let mut types = Counter::new();
    for t in NodeType::MINILANG {
        if t != NodeType::While {
            types.add(t.as_str());
        }
    }
    let mut tokens = Counter::new();
    for t in TOKENS {
        tokens.add(*t);
    }
    (
        Vocab::from_counter(VocabKind::Type, types, 1).unwrap(),
        Vocab::from_counter(VocabKind::Token, tokens, 1).unwrap(),
    )
}

pub fn uniform_tensor<R: Rng>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..=scale)).collect()).unwrap()
}

/// Briefly pretrained checkpoint on `corpus`, small enough for tests.
pub fn small_checkpoint(corpus: &[Ast], dim: usize) -> Checkpoint {
    small_checkpoint_with(corpus, dim, InitMode::Combine)
}

pub fn small_checkpoint_with(corpus: &[Ast], dim: usize, init_mode: InitMode) -> Checkpoint {
    let cfg = TrainConfig {
        dim,
        init_mode,
        epochs: 3,
        batch_size: 8,
        seed: 5,
        min_count: 1,
        ..TrainConfig::default()
    };
    let vocabs = Vocabularies::build(corpus, cfg.label_mode, cfg.min_count).unwrap();
    train(corpus, vocabs, &cfg).unwrap().0
}

/// Two-class corpus in which the presence of a `while` loop alone decides
/// the class. The remaining statements are drawn from the same pool.
pub fn while_corpus<R: Rng>(rng: &mut R, per_class: usize) -> Vec<(Ast, usize)> {
    let mut out = Vec::new();
    for i in 0..per_class {
        for class in 0..2 {
            let mut body = String::new();
            for _ in 0..rng.gen_range(1..4) {
                let c = rng.gen_range(1..9);
                body.push_str(&match rng.gen_range(0..3) {
                    0 => format!("  x = x + {c};\n"),
                    1 => format!("  int y{c} = x * {c};\n"),
                    _ => format!("  x = x - n;\n"),
                });
            }
            if class == 1 {
                body.push_str("  while (x < n) {\n    x = x * 2;\n  }\n");
            }
            let src = format!("int f(int x, int n) {{\n{body}  return x;\n}}\n");
            let ast = s2v_core::parse_minilang(&src, &format!("c{class}_{i:03}")).unwrap();
            out.push((ast, class));
        }
    }
    out
}
