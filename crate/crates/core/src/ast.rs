//! AST data model and the JSON interchange format.
//!
//! An [`Ast`] is an ordered rooted tree. Nodes are stored in a table keyed by
//! id; ids need not be dense (deletion leaves gaps). Every traversal the rest
//! of the crate performs goes through [`Ast::preorder`], so the storage order
//! of the table never leaks into results.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AstDefect, Error, Result};

pub type NodeId = u32;

/// Node type label.
///
/// The eighteen named variants are the MiniLang vocabulary. Trees ingested
/// from the interchange format may use any other label, kept verbatim in
/// [`NodeType::Other`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeType {
    Program,
    Function,
    Block,
    DeclStmt,
    ExprStmt,
    Expr,
    Condition,
    If,
    While,
    For,
    Return,
    BinOp,
    UnaryOp,
    Index,
    Call,
    Ident,
    Literal,
    TypeName,
    Other(String),
}

impl NodeType {
    pub const MINILANG: [NodeType; 18] = [
        NodeType::Program,
        NodeType::Function,
        NodeType::Block,
        NodeType::DeclStmt,
        NodeType::ExprStmt,
        NodeType::Expr,
        NodeType::Condition,
        NodeType::If,
        NodeType::While,
        NodeType::For,
        NodeType::Return,
        NodeType::BinOp,
        NodeType::UnaryOp,
        NodeType::Index,
        NodeType::Call,
        NodeType::Ident,
        NodeType::Literal,
        NodeType::TypeName,
    ];

    pub fn as_str(&self) -> &str {
        match self {
            NodeType::Program => "program",
            NodeType::Function => "function",
            NodeType::Block => "block",
            NodeType::DeclStmt => "decl_stmt",
            NodeType::ExprStmt => "expr_stmt",
            NodeType::Expr => "expr",
            NodeType::Condition => "condition",
            NodeType::If => "if",
            NodeType::While => "while",
            NodeType::For => "for",
            NodeType::Return => "return",
            NodeType::BinOp => "binop",
            NodeType::UnaryOp => "unaryop",
            NodeType::Index => "index",
            NodeType::Call => "call",
            NodeType::Ident => "ident",
            NodeType::Literal => "literal",
            NodeType::TypeName => "type_name",
            NodeType::Other(s) => s,
        }
    }

    /// Types whose subtrees are used as pseudo-labels.
    pub fn is_subtree_root(&self) -> bool {
        matches!(
            self,
            NodeType::ExprStmt | NodeType::DeclStmt | NodeType::Expr | NodeType::Condition
        )
    }

    /// Keyword nodes that count as size-1 subtrees.
    pub fn is_keyword(&self) -> bool {
        matches!(self, NodeType::If | NodeType::For | NodeType::While)
    }

    /// Leaf kinds that must carry a token.
    pub fn is_terminal(&self) -> bool {
        matches!(self, NodeType::Ident | NodeType::Literal)
    }
}

impl FromStr for NodeType {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(NodeType::MINILANG
            .iter()
            .find(|t| t.as_str() == s)
            .cloned()
            .unwrap_or_else(|| NodeType::Other(s.to_string())))
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstNode {
    pub id: NodeId,
    pub node_type: NodeType,
    pub token: Option<String>,
    pub children: Vec<NodeId>,
}

impl AstNode {
    pub fn new(id: NodeId, node_type: NodeType, token: Option<String>, children: Vec<NodeId>) -> Self {
        AstNode {
            id,
            node_type,
            token,
            children,
        }
    }
}

/// Byte range of a node in the text it was parsed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceSpan {
    pub node: NodeId,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ast {
    source_id: String,
    root: NodeId,
    nodes: BTreeMap<NodeId, AstNode>,
    spans: BTreeMap<NodeId, SourceSpan>,
}

impl Ast {
    /// Builds a tree from a node list, checking every structural invariant.
    pub fn new(source_id: impl Into<String>, root: NodeId, nodes: Vec<AstNode>) -> Result<Self> {
        Self::with_spans(source_id, root, nodes, Vec::new())
    }

    pub fn with_spans(
        source_id: impl Into<String>,
        root: NodeId,
        nodes: Vec<AstNode>,
        spans: Vec<SourceSpan>,
    ) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidAst(AstDefect::Empty));
        }
        let mut table = BTreeMap::new();
        for node in nodes {
            let id = node.id;
            if table.insert(id, node).is_some() {
                return Err(Error::InvalidAst(AstDefect::DuplicateId(id)));
            }
        }
        let ast = Ast {
            source_id: source_id.into(),
            root,
            nodes: table,
            spans: spans.into_iter().map(|s| (s.node, s)).collect(),
        };
        ast.validate()?;
        Ok(ast)
    }

    fn validate(&self) -> Result<()> {
        let defect = |d| Err(Error::InvalidAst(d));
        if !self.nodes.contains_key(&self.root) {
            return defect(AstDefect::MissingRoot(self.root));
        }
        let mut has_parent = BTreeSet::new();
        for node in self.nodes.values() {
            for &child in &node.children {
                if !self.nodes.contains_key(&child) {
                    return defect(AstDefect::DanglingChild {
                        parent: node.id,
                        child,
                    });
                }
                if !has_parent.insert(child) {
                    return defect(AstDefect::MultipleParents(child));
                }
            }
            if node.node_type.is_terminal() && (node.token.is_none() || !node.children.is_empty()) {
                return defect(AstDefect::LeafShape {
                    id: node.id,
                    kind: node.node_type.to_string(),
                });
            }
        }
        if has_parent.contains(&self.root) {
            return defect(AstDefect::Cycle(self.root));
        }
        let orphans: Vec<NodeId> = self
            .nodes
            .keys()
            .copied()
            .filter(|id| *id != self.root && !has_parent.contains(id))
            .collect();
        if !orphans.is_empty() {
            let mut roots = vec![self.root];
            roots.extend(orphans);
            return defect(AstDefect::MultipleRoots(roots));
        }
        // Every node has exactly one parent and the root has none, so any
        // node not reachable from the root sits on a cycle.
        let reached = self.preorder().len();
        if reached != self.nodes.len() {
            let seen: BTreeSet<NodeId> = self.preorder().into_iter().collect();
            let first = self.nodes.keys().find(|id| !seen.contains(id)).copied().unwrap_or(self.root);
            return defect(AstDefect::Cycle(first));
        }
        for span in self.spans.values() {
            if !self.nodes.contains_key(&span.node) || span.start > span.end {
                return Err(Error::InvalidNode(span.node, "bad source span".into()));
            }
        }
        Ok(())
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn set_source_id(&mut self, id: impl Into<String>) {
        self.source_id = id.into();
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&AstNode> {
        self.nodes.get(&id)
    }

    pub(crate) fn node_or_err(&self, id: NodeId) -> Result<&AstNode> {
        self.nodes
            .get(&id)
            .ok_or_else(|| Error::InvalidNode(id, "no such node".into()))
    }

    /// Nodes in id order.
    pub fn nodes(&self) -> impl Iterator<Item = &AstNode> {
        self.nodes.values()
    }

    pub fn span(&self, id: NodeId) -> Option<SourceSpan> {
        self.spans.get(&id).copied()
    }

    pub fn has_spans(&self) -> bool {
        !self.spans.is_empty()
    }

    /// Pre-order (parent before children, children in source order).
    pub fn preorder(&self) -> Vec<NodeId> {
        self.preorder_from(self.root)
    }

    pub fn preorder_from(&self, start: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut visited = BTreeSet::new();
        let mut stack = vec![start];
        while let Some(id) = stack.pop() {
            // Guard against cycles while validating; valid trees never revisit.
            if !visited.insert(id) {
                continue;
            }
            let Some(node) = self.nodes.get(&id) else {
                continue;
            };
            out.push(id);
            stack.extend(node.children.iter().rev().copied());
        }
        out
    }

    pub fn subtree_size(&self, id: NodeId) -> usize {
        self.preorder_from(id).len()
    }

    pub fn parent_of(&self, id: NodeId) -> Option<NodeId> {
        self.nodes
            .values()
            .find(|n| n.children.contains(&id))
            .map(|n| n.id)
    }

    /// Removes the subtree rooted at `id` and returns the result as a new tree.
    pub fn delete_component(&self, id: NodeId) -> Result<Ast> {
        if id == self.root {
            return Err(Error::InvalidNode(id, "the root cannot be deleted".into()));
        }
        self.node_or_err(id)?;
        let removed: BTreeSet<NodeId> = self.preorder_from(id).into_iter().collect();
        let mut out = self.clone();
        out.nodes.retain(|k, _| !removed.contains(k));
        out.spans.retain(|k, _| !removed.contains(k));
        for node in out.nodes.values_mut() {
            node.children.retain(|c| *c != id);
        }
        Ok(out)
    }

    /// Applies `rename` to every identifier token. Literal tokens are kept.
    pub fn rename_identifiers(&self, mut rename: impl FnMut(&str) -> String) -> Ast {
        let mut out = self.clone();
        for node in out.nodes.values_mut() {
            if node.node_type == NodeType::Ident {
                if let Some(tok) = node.token.as_mut() {
                    *tok = rename(tok);
                }
            }
        }
        out
    }

    /// Replaces the token of a single node.
    pub fn with_token(&self, id: NodeId, token: Option<String>) -> Result<Ast> {
        self.node_or_err(id)?;
        let mut out = self.clone();
        if let Some(node) = out.nodes.get_mut(&id) {
            node.token = token;
        }
        out.validate()?;
        Ok(out)
    }

    /// Shape of the tree independent of node ids: pre-order
    /// (type, token, child count) triples.
    pub fn shape(&self) -> Vec<(NodeType, Option<String>, usize)> {
        self.preorder()
            .into_iter()
            .map(|id| {
                let n = &self.nodes[&id];
                (n.node_type.clone(), n.token.clone(), n.children.len())
            })
            .collect()
    }

    /// Equal shape and source id, ignoring ids and spans.
    pub fn same_structure(&self, other: &Ast) -> bool {
        self.source_id == other.source_id && self.shape() == other.shape()
    }

    /// Reassigns ids densely in pre-order, dropping spans.
    pub fn renumbered(&self) -> Ast {
        let order = self.preorder();
        let remap: BTreeMap<NodeId, NodeId> = order
            .iter()
            .enumerate()
            .map(|(i, id)| (*id, i as NodeId))
            .collect();
        let nodes = order
            .iter()
            .map(|id| {
                let n = &self.nodes[id];
                AstNode::new(
                    remap[id],
                    n.node_type.clone(),
                    n.token.clone(),
                    n.children.iter().map(|c| remap[c]).collect(),
                )
            })
            .collect();
        Ast::new(self.source_id.clone(), 0, nodes).expect("renumbering preserves validity")
    }

    /// Parses a document in the interchange format.
    pub fn from_json(bytes: &[u8]) -> Result<Ast> {
        let doc: AstDocument =
            serde_json::from_slice(bytes).map_err(|e| Error::MalformedAst(e.to_string()))?;
        let nodes = doc
            .nodes
            .into_iter()
            .map(|n| {
                let node_type = n.node_type.parse().unwrap_or_else(|e| match e {});
                AstNode::new(n.id, node_type, n.token, n.children)
            })
            .collect();
        Ast::new(doc.source_id, doc.root, nodes)
    }

    /// Canonical serialization: nodes sorted by id, fixed field order,
    /// compact JSON followed by a newline.
    pub fn to_json(&self) -> Vec<u8> {
        let doc = AstDocument {
            source_id: self.source_id.clone(),
            root: self.root,
            nodes: self
                .nodes
                .values()
                .map(|n| NodeDocument {
                    id: n.id,
                    node_type: n.node_type.to_string(),
                    token: n.token.clone(),
                    children: n.children.clone(),
                })
                .collect(),
        };
        let mut out = serde_json::to_vec(&doc).expect("AST documents always serialize");
        out.push(b'\n');
        out
    }
}

/// Loads an AST from interchange-format bytes.
pub fn load_ast_file(bytes: &[u8]) -> Result<Ast> {
    Ast::from_json(bytes)
}

/// Serializes an AST to canonical interchange-format bytes.
pub fn save_ast_file(ast: &Ast) -> Vec<u8> {
    ast.to_json()
}

#[derive(Serialize, Deserialize)]
struct AstDocument {
    source_id: String,
    root: NodeId,
    nodes: Vec<NodeDocument>,
}

#[derive(Serialize, Deserialize)]
struct NodeDocument {
    id: NodeId,
    #[serde(rename = "type")]
    node_type: String,
    token: Option<String>,
    children: Vec<NodeId>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(id: NodeId, t: NodeType, tok: &str) -> AstNode {
        AstNode::new(id, t, Some(tok.into()), vec![])
    }

    fn two_node() -> Ast {
        Ast::new(
            "t",
            0,
            vec![
                AstNode::new(0, NodeType::ExprStmt, None, vec![1]),
                leaf(1, NodeType::Ident, "x"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_node_document() {
        let ast = load_ast_file(
            br#"{"source_id":"s","root":0,"nodes":[{"id":0,"type":"ident","token":"x","children":[]}]}"#,
        )
        .unwrap();
        assert_eq!(ast.len(), 1);
        assert_eq!(ast.node(0).unwrap().token.as_deref(), Some("x"));
    }

    #[test]
    fn dangling_child_rejected() {
        let err = load_ast_file(
            br#"{"source_id":"s","root":0,"nodes":[{"id":0,"type":"block","token":null,"children":[7]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::InvalidAst(AstDefect::DanglingChild { parent: 0, child: 7 })
        ));
    }

    #[test]
    fn duplicate_and_multiple_roots_rejected() {
        let dup = load_ast_file(
            br#"{"source_id":"s","root":0,"nodes":[{"id":0,"type":"block","token":null,"children":[]},{"id":0,"type":"block","token":null,"children":[]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(dup, Error::InvalidAst(AstDefect::DuplicateId(0))));

        let roots = load_ast_file(
            br#"{"source_id":"s","root":0,"nodes":[{"id":0,"type":"block","token":null,"children":[]},{"id":1,"type":"block","token":null,"children":[]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(roots, Error::InvalidAst(AstDefect::MultipleRoots(_))));
    }

    #[test]
    fn cycles_and_garbage_rejected() {
        let cyc = load_ast_file(
            br#"{"source_id":"s","root":0,"nodes":[{"id":0,"type":"block","token":null,"children":[]},{"id":1,"type":"block","token":null,"children":[2]},{"id":2,"type":"block","token":null,"children":[1]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(cyc, Error::InvalidAst(AstDefect::Cycle(_))));
        assert!(matches!(load_ast_file(b"{not json"), Err(Error::MalformedAst(_))));
    }

    #[test]
    fn unknown_labels_kept_verbatim() {
        let ast = load_ast_file(
            br#"{"source_id":"s","root":3,"nodes":[{"id":3,"type":"lambda_expr","token":null,"children":[]}]}"#,
        )
        .unwrap();
        assert_eq!(ast.node(3).unwrap().node_type, NodeType::Other("lambda_expr".into()));
        assert!(String::from_utf8(save_ast_file(&ast)).unwrap().contains("\"lambda_expr\""));
    }

    #[test]
    fn canonical_bytes_ignore_construction_order() {
        let a = two_node();
        let b = Ast::new(
            "t",
            0,
            vec![
                leaf(1, NodeType::Ident, "x"),
                AstNode::new(0, NodeType::ExprStmt, None, vec![1]),
            ],
        )
        .unwrap();
        assert_eq!(save_ast_file(&a), save_ast_file(&b));
        let text = String::from_utf8(save_ast_file(&a)).unwrap();
        assert_eq!(
            text,
            "{\"source_id\":\"t\",\"root\":0,\"nodes\":[{\"id\":0,\"type\":\"expr_stmt\",\"token\":null,\"children\":[1]},{\"id\":1,\"type\":\"ident\",\"token\":\"x\",\"children\":[]}]}\n"
        );
    }

    #[test]
    fn delete_sole_child() {
        let a = two_node();
        let b = a.delete_component(1).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(a.len(), 2);
        assert!(b.node(0).unwrap().children.is_empty());
        assert!(a.delete_component(0).is_err());
        assert!(a.delete_component(9).is_err());
    }

    #[test]
    fn ident_without_token_rejected() {
        let err = Ast::new("t", 0, vec![AstNode::new(0, NodeType::Ident, None, vec![])]).unwrap_err();
        assert!(matches!(err, Error::InvalidAst(AstDefect::LeafShape { id: 0, .. })));
    }
}
