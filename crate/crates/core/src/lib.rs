//! Self-supervised code representations: a tree-based convolutional encoder
//! trained to predict the subtrees of its own input, plus the downstream
//! tools built on the resulting code vectors.

pub mod ast;
pub mod autodiff;
pub mod encoder;
pub mod downstream;
pub mod error;
pub mod interpretability;
pub mod minilang;
pub mod names;
pub mod subtree;
pub mod synth;
pub mod trainer;
pub mod vocab;

pub use ast::{load_ast_file, save_ast_file, Ast, AstNode, NodeId, NodeType, SourceSpan};
pub use error::{AstDefect, Error, Result};
pub use minilang::parse_minilang;
