//! Pseudo-label extraction: subtree identification, canonical subtree ids,
//! and the corpus vocabularies built from them.

use rayon::prelude::*;

use crate::ast::{Ast, NodeId, NodeType};
use crate::error::{Error, Result};
use crate::names::split_subtokens;
use crate::vocab::{Counter, LabelMode, Vocab, VocabKind};

/// Default frequency cutoff for label and token vocabularies.
pub const DEFAULT_MIN_COUNT: u64 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubtreeRef {
    pub source_id: String,
    pub root: NodeId,
    pub canonical_id: String,
    pub size: usize,
}

/// Controls what goes into a canonical subtree id.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CanonicalOptions {
    /// Append the operator spelling to `binop`/`unaryop` labels
    /// (`binop:+`). Off by default: subtree identity is structural.
    pub operator_tokens: bool,
}

/// Structural serialization of the subtree rooted at `root`:
/// `label(child,child,...)` in pre-order, tokens omitted.
pub fn canonical_id(ast: &Ast, root: NodeId) -> Result<String> {
    canonical_id_with(ast, root, CanonicalOptions::default())
}

pub fn canonical_id_with(ast: &Ast, root: NodeId, opts: CanonicalOptions) -> Result<String> {
    ast.node_or_err(root)?;
    let mut out = String::new();
    write_canonical(ast, root, opts, &mut out);
    Ok(out)
}

fn write_canonical(ast: &Ast, id: NodeId, opts: CanonicalOptions, out: &mut String) {
    let node = ast.node(id).expect("validated tree");
    out.push_str(node.node_type.as_str());
    if opts.operator_tokens && matches!(node.node_type, NodeType::BinOp | NodeType::UnaryOp) {
        if let Some(tok) = &node.token {
            out.push(':');
            out.push_str(tok);
        }
    }
    if node.children.is_empty() {
        return;
    }
    out.push('(');
    for (i, child) in node.children.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_canonical(ast, *child, opts, out);
    }
    out.push(')');
}

/// Every subtree rooted at an `expr_stmt`, `decl_stmt`, `expr` or `condition`
/// node, plus a size-1 subtree for each `if`/`for`/`while` keyword node, in
/// pre-order. Nested qualifying subtrees are all reported.
pub fn identify_subtrees(ast: &Ast) -> Vec<SubtreeRef> {
    identify_subtrees_with(ast, CanonicalOptions::default())
}

pub fn identify_subtrees_with(ast: &Ast, opts: CanonicalOptions) -> Vec<SubtreeRef> {
    let mut out = Vec::new();
    for id in ast.preorder() {
        let node = ast.node(id).expect("preorder ids exist");
        if node.node_type.is_subtree_root() {
            let mut canonical = String::new();
            write_canonical(ast, id, opts, &mut canonical);
            out.push(SubtreeRef {
                source_id: ast.source_id().to_string(),
                root: id,
                canonical_id: canonical,
                size: ast.subtree_size(id),
            });
        } else if node.node_type.is_keyword() {
            out.push(SubtreeRef {
                source_id: ast.source_id().to_string(),
                root: id,
                canonical_id: node.node_type.to_string(),
                size: 1,
            });
        }
    }
    out
}

fn count_par<F>(corpus: &[Ast], per_tree: F) -> Counter
where
    F: Fn(&Ast, &mut Counter) + Sync,
{
    corpus
        .par_iter()
        .fold(Counter::new, |mut c, ast| {
            per_tree(ast, &mut c);
            c
        })
        .reduce(Counter::new, Counter::merge)
}

/// Builds the subtree vocabulary over a corpus.
pub fn build_vocab(corpus: &[Ast], min_count: u64) -> Result<Vocab> {
    build_vocab_with(corpus, min_count, CanonicalOptions::default())
}

pub fn build_vocab_with(corpus: &[Ast], min_count: u64, opts: CanonicalOptions) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let counter = count_par(corpus, |ast, c| {
        for s in identify_subtrees_with(ast, opts) {
            c.add(s.canonical_id);
        }
    });
    Vocab::from_counter(VocabKind::Subtree, counter, min_count)
}

/// Vocabulary of node tokens (identifiers, literals, operators, type names).
pub fn build_token_vocab(corpus: &[Ast], min_count: u64) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let counter = count_par(corpus, |ast, c| {
        for node in ast.nodes() {
            if let Some(tok) = &node.token {
                c.add(tok.clone());
            }
        }
    });
    Vocab::from_counter(VocabKind::Token, counter, min_count)
}

/// Vocabulary of node type labels seen in the corpus (no cutoff).
pub fn build_type_vocab(corpus: &[Ast]) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let counter = count_par(corpus, |ast, c| {
        for node in ast.nodes() {
            c.add(node.node_type.to_string());
        }
    });
    Vocab::from_counter(VocabKind::Type, counter, 1)
}

/// Vocabulary of method-name sub-tokens.
pub fn build_method_name_vocab(corpus: &[Ast], min_count: u64) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let counter = count_par(corpus, |ast, c| {
        for name in function_names(ast) {
            for sub in split_subtokens(&name) {
                c.add(sub);
            }
        }
    });
    Vocab::from_counter(VocabKind::MethodName, counter, min_count)
}

/// Node ids of the name identifiers of every function, in pre-order.
pub fn function_name_nodes(ast: &Ast) -> Vec<NodeId> {
    ast.preorder()
        .into_iter()
        .filter_map(|id| {
            let node = ast.node(id)?;
            if node.node_type != NodeType::Function {
                return None;
            }
            node.children
                .iter()
                .copied()
                .find(|c| ast.node(*c).is_some_and(|n| n.node_type == NodeType::Ident))
        })
        .collect()
}

pub fn function_names(ast: &Ast) -> Vec<String> {
    function_name_nodes(ast)
        .into_iter()
        .filter_map(|id| ast.node(id).and_then(|n| n.token.clone()))
        .collect()
}

/// Placeholder that replaces a function's own name when the name is the
/// prediction target.
pub const NAME_MASK: &str = "<name>";

/// Replaces every identifier spelling a function's name, at its definition
/// and at call sites, with [`NAME_MASK`].
pub fn mask_function_names(ast: &Ast) -> Ast {
    let names: std::collections::BTreeSet<String> = function_names(ast).into_iter().collect();
    if names.is_empty() {
        return ast.clone();
    }
    ast.rename_identifiers(|tok| {
        if names.contains(tok) {
            NAME_MASK.to_string()
        } else {
            tok.to_string()
        }
    })
}

/// Training labels for one tree. Duplicates are kept: a label seen k times
/// contributes k training pairs. Out-of-vocabulary items are skipped.
pub fn label_set(ast: &Ast, labels: &Vocab, mode: LabelMode) -> Result<Vec<usize>> {
    match mode {
        LabelMode::Subtree => Ok(identify_subtrees(ast)
            .iter()
            .filter_map(|s| labels.index_of(&s.canonical_id))
            .collect()),
        LabelMode::Token => Ok(ast
            .preorder()
            .into_iter()
            .filter_map(|id| ast.node(id)?.token.as_deref().and_then(|t| labels.index_of(t)))
            .collect()),
        LabelMode::MethodName => {
            let names = function_names(ast);
            if names.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "{} has no function node to take a method name from",
                    ast.source_id()
                )));
            }
            Ok(names
                .iter()
                .flat_map(|n| split_subtokens(n))
                .filter_map(|s| labels.index_of(&s))
                .collect())
        }
    }
}

/// Builds the label vocabulary for a label mode.
pub fn build_label_vocab(corpus: &[Ast], mode: LabelMode, min_count: u64) -> Result<Vocab> {
    match mode {
        LabelMode::Subtree => build_vocab(corpus, min_count),
        LabelMode::Token => build_token_vocab(corpus, min_count),
        LabelMode::MethodName => build_method_name_vocab(corpus, min_count),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::AstNode;
    use crate::minilang::parse_minilang;

    fn parse(src: &str) -> Ast {
        parse_minilang(src, "t").unwrap()
    }

    #[test]
    fn declaration_and_inner_expression_both_identified() {
        let ast = parse("int n = len(arr);");
        let subs = identify_subtrees(&ast);
        let ids: Vec<&str> = subs.iter().map(|s| s.canonical_id.as_str()).collect();
        assert_eq!(
            ids,
            vec![
                "decl_stmt(type_name,ident,expr(call(ident,expr(ident))))",
                "expr(call(ident,expr(ident)))",
                "expr(ident)",
            ]
        );
        assert_eq!(subs[0].size, 8);
        assert_eq!(subs[1].size, 5);
    }

    #[test]
    fn keywords_are_size_one() {
        let ast = parse("while (i < n) { i = i + 1; }");
        let subs = identify_subtrees(&ast);
        assert_eq!(subs[0].canonical_id, "while");
        assert_eq!(subs[0].size, 1);
        assert_eq!(subs[1].canonical_id, "condition(expr(binop(ident,ident)))");
    }

    #[test]
    fn literal_alone_has_no_subtrees() {
        let ast = Ast::new("l", 0, vec![AstNode::new(0, NodeType::Literal, Some("1".into()), vec![])]).unwrap();
        assert!(identify_subtrees(&ast).is_empty());
    }

    #[test]
    fn count_equals_qualifying_nodes() {
        let ast = parse("int f(int a) { for (int i = 0; i < a; i++) { if (a[i] > 0) { a[i] = 0; } } return a; }");
        let expected = ast
            .nodes()
            .filter(|n| n.node_type.is_subtree_root() || n.node_type.is_keyword())
            .count();
        assert_eq!(identify_subtrees(&ast).len(), expected);
    }

    #[test]
    fn canonical_ignores_identifiers_and_operators() {
        let a = parse("x = arr[j] > arr[j+1];");
        let b = parse("y = arr[i] > arr[i+1];");
        let ca: Vec<String> = identify_subtrees(&a).into_iter().map(|s| s.canonical_id).collect();
        let cb: Vec<String> = identify_subtrees(&b).into_iter().map(|s| s.canonical_id).collect();
        assert_eq!(ca, cb);

        // Hand-serialized: both trees are expr(binop(ident,ident)).
        let plus = parse("a + b;");
        let minus = parse("a - b;");
        assert_eq!(canonical_id(&plus, 2).unwrap(), "expr(binop(ident,ident))");
        assert_eq!(canonical_id(&minus, 2).unwrap(), "expr(binop(ident,ident))");
        let opts = CanonicalOptions { operator_tokens: true };
        assert_ne!(
            canonical_id_with(&plus, 2, opts).unwrap(),
            canonical_id_with(&minus, 2, opts).unwrap()
        );
    }

    #[test]
    fn comparison_subtree_matches_documented_form() {
        let ast = parse("if (arr[j] > arr[j+1]) { t = 0; }");
        let cond = ast.nodes().find(|n| n.node_type == NodeType::Condition).unwrap().id;
        let expr = ast.node(cond).unwrap().children[0];
        assert_eq!(
            canonical_id(&ast, expr).unwrap(),
            "expr(binop(index(ident,expr(ident)),index(ident,expr(binop(ident,literal)))))"
        );
    }

    #[test]
    fn single_ident_and_missing_node() {
        let ast = Ast::new("i", 4, vec![AstNode::new(4, NodeType::Ident, Some("x".into()), vec![])]).unwrap();
        assert_eq!(canonical_id(&ast, 4).unwrap(), "ident");
        assert!(canonical_id(&ast, 5).is_err());
    }

    #[test]
    fn vocab_sizes_and_errors() {
        let ast = parse("x = 1; if (y) { z = f(w); }");
        // expr_stmt(x=1), expr(x=1), if, condition, expr(y), expr_stmt(z=f(w)), expr(z=f(w)), expr(w)
        let distinct: std::collections::BTreeSet<String> =
            identify_subtrees(&ast).into_iter().map(|s| s.canonical_id).collect();
        let v = build_vocab(std::slice::from_ref(&ast), 1).unwrap();
        assert_eq!(v.len(), distinct.len());

        let three = parse("int a = 1; while (b) { }");
        // decl_stmt, expr(literal), while, condition, expr(ident): 5 distinct
        assert_eq!(build_vocab(std::slice::from_ref(&three), 1).unwrap().len(), 5);
        assert!(matches!(build_vocab(&[three], 2), Err(Error::EmptyVocab(2))));
        assert!(matches!(build_vocab(&[], 1), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn label_modes() {
        let ast = parse("int n = len(arr);");
        let v = build_vocab(std::slice::from_ref(&ast), 1).unwrap();
        assert_eq!(label_set(&ast, &v, LabelMode::Subtree).unwrap().len(), 3);

        let x = Ast::new("x", 0, vec![AstNode::new(0, NodeType::Ident, Some("x".into()), vec![])]).unwrap();
        let tv = build_token_vocab(std::slice::from_ref(&x), 1).unwrap();
        assert_eq!(label_set(&x, &tv, LabelMode::Token).unwrap(), vec![0]);
        assert!(label_set(&x, &tv, LabelMode::MethodName).is_err());

        let f = parse("void bubbleSort(int[] a) { return; }");
        let mv = build_method_name_vocab(std::slice::from_ref(&f), 1).unwrap();
        let labels = label_set(&f, &mv, LabelMode::MethodName).unwrap();
        let mut words: Vec<&str> = labels.iter().map(|i| mv.key(*i).unwrap()).collect();
        words.sort();
        assert_eq!(words, vec!["bubble", "sort"]);
    }

    #[test]
    fn duplicates_are_kept() {
        let ast = parse("a = b; c = d;");
        let v = build_vocab(std::slice::from_ref(&ast), 1).unwrap();
        let labels = label_set(&ast, &v, LabelMode::Subtree).unwrap();
        assert_eq!(labels.len(), 4);
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn masking_hides_function_names() {
        let f = parse("int addTwo(int a) { return a + 2; }");
        let masked = mask_function_names(&f);
        assert_eq!(function_names(&masked), vec![NAME_MASK.to_string()]);
        assert_eq!(function_names(&f), vec!["addTwo".to_string()]);

        let rec = parse("int fact(int n) { return n * fact(n - 1); }");
        let masked = mask_function_names(&rec);
        assert!(masked.nodes().all(|n| n.token.as_deref() != Some("fact")));
        assert!(masked.nodes().any(|n| n.token.as_deref() == Some("n")));
    }
}
