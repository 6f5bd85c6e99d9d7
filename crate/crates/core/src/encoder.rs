//! Tree-based convolutional encoder with attention aggregation.
//!
//! Node vectors are initialized from type and token embeddings, refined by
//! `num_conv_layers` tree convolutions over (parent, children) windows, and
//! combined into one code vector by softmax attention against a learned
//! global vector.
//!
//! Convolution weights follow the continuous binary tree: inside the window
//! of node `p` with children `c_1..c_m`, the parent contributes through
//! `W_t` alone, and child `c_i` through
//! `eta_r * W_r + eta_l * W_l` with `eta_r = (i-1)/(m-1)`, `eta_l = 1 - eta_r`.
//! A single child gets `eta_r = eta_l = 1/2`. All weight matrices are shared
//! across layers.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ast::{Ast, NodeId};
use crate::autodiff::{RowMix, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::subtree::mask_function_names;
use crate::vocab::Vocab;

/// Half-width of the uniform distribution used to initialize parameters.
pub const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Type,
    Token,
    Combine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateMode {
    Attention,
    Max,
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "type" => Ok(InitMode::Type),
            "token" => Ok(InitMode::Token),
            "combine" => Ok(InitMode::Combine),
            other => Err(Error::InvalidArgument(format!("unknown init mode {other:?}"))),
        }
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMode::Type => "type",
            InitMode::Token => "token",
            InitMode::Combine => "combine",
        })
    }
}

impl FromStr for AggregateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(AggregateMode::Attention),
            "max" => Ok(AggregateMode::Max),
            other => Err(Error::InvalidArgument(format!("unknown aggregate mode {other:?}"))),
        }
    }
}

impl fmt::Display for AggregateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregateMode::Attention => "attention",
            AggregateMode::Max => "max",
        })
    }
}

/// Every learnable tensor of the encoder. Row 0 of both embedding tables is
/// reserved for unknown types/tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub dim: usize,
    pub num_conv_layers: usize,
    pub w_type: Tensor,
    pub w_token: Tensor,
    pub w_fuse: Tensor,
    pub b_fuse: Tensor,
    pub w_t: Tensor,
    pub w_l: Tensor,
    pub w_r: Tensor,
    pub b_conv: Tensor,
    pub attention: Tensor,
}

impl EncoderParams {
    pub const NAMES: [&'static str; 9] =
        ["W_type", "W_token", "W_fuse", "b_fuse", "W_t", "W_l", "W_r", "b_conv", "a"];

    /// Parameters drawn uniformly from `[-INIT_SCALE, INIT_SCALE]`.
    pub fn random<R: Rng>(type_rows: usize, token_rows: usize, dim: usize, num_conv_layers: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(type_rows, token_rows, dim, num_conv_layers);
        for (_, t) in p.tensors_mut() {
            for v in t.data_mut() {
                *v = rng.gen_range(-INIT_SCALE..=INIT_SCALE);
            }
        }
        p
    }

    pub fn zeros(type_rows: usize, token_rows: usize, dim: usize, num_conv_layers: usize) -> Self {
        EncoderParams {
            dim,
            num_conv_layers,
            w_type: Tensor::zeros(&[type_rows, dim]),
            w_token: Tensor::zeros(&[token_rows, dim]),
            w_fuse: Tensor::zeros(&[2 * dim, dim]),
            b_fuse: Tensor::zeros(&[dim]),
            w_t: Tensor::zeros(&[dim, dim]),
            w_l: Tensor::zeros(&[dim, dim]),
            w_r: Tensor::zeros(&[dim, dim]),
            b_conv: Tensor::zeros(&[dim]),
            attention: Tensor::zeros(&[dim]),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 9] {
        let n = Self::NAMES;
        [
            (n[0], &self.w_type),
            (n[1], &self.w_token),
            (n[2], &self.w_fuse),
            (n[3], &self.b_fuse),
            (n[4], &self.w_t),
            (n[5], &self.w_l),
            (n[6], &self.w_r),
            (n[7], &self.b_conv),
            (n[8], &self.attention),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 9] {
        let n = Self::NAMES;
        [
            (n[0], &mut self.w_type),
            (n[1], &mut self.w_token),
            (n[2], &mut self.w_fuse),
            (n[3], &mut self.b_fuse),
            (n[4], &mut self.w_t),
            (n[5], &mut self.w_l),
            (n[6], &mut self.w_r),
            (n[7], &mut self.b_conv),
            (n[8], &mut self.attention),
        ]
    }

    /// Puts every tensor on `tape` as a leaf.
    pub fn register(&self, tape: &mut Tape, requires_grad: bool) -> ParamVars {
        ParamVars {
            w_type: tape.leaf(self.w_type.clone(), requires_grad),
            w_token: tape.leaf(self.w_token.clone(), requires_grad),
            w_fuse: tape.leaf(self.w_fuse.clone(), requires_grad),
            b_fuse: tape.leaf(self.b_fuse.clone(), requires_grad),
            w_t: tape.leaf(self.w_t.clone(), requires_grad),
            w_l: tape.leaf(self.w_l.clone(), requires_grad),
            w_r: tape.leaf(self.w_r.clone(), requires_grad),
            b_conv: tape.leaf(self.b_conv.clone(), requires_grad),
            attention: tape.leaf(self.attention.clone(), requires_grad),
        }
    }
}

/// Tape handles for [`EncoderParams`], in [`EncoderParams::NAMES`] order.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub w_type: Var,
    pub w_token: Var,
    pub w_fuse: Var,
    pub b_fuse: Var,
    pub w_t: Var,
    pub w_l: Var,
    pub w_r: Var,
    pub b_conv: Var,
    pub attention: Var,
}

impl ParamVars {
    pub fn all(&self) -> [Var; 9] {
        [
            self.w_type,
            self.w_token,
            self.w_fuse,
            self.b_fuse,
            self.w_t,
            self.w_l,
            self.w_r,
            self.b_conv,
            self.attention,
        ]
    }
}

/// Per-tree data the forward pass needs: node order, embedding rows and
/// the convolution window coefficients.
#[derive(Debug, Clone)]
pub struct PreparedTree {
    pub order: Vec<NodeId>,
    pub type_rows: Vec<usize>,
    pub token_rows: Vec<usize>,
    left: Arc<RowMix>,
    right: Arc<RowMix>,
}

/// Window coefficients `(eta_t, eta_l, eta_r)` for child `position`
/// (1-based) of `siblings` children.
pub fn child_coefficients(position: usize, siblings: usize) -> (f64, f64, f64) {
    let eta_t = 0.0;
    let eta_r = if siblings == 1 {
        0.5
    } else {
        (1.0 - eta_t) * (position as f64 - 1.0) / (siblings as f64 - 1.0)
    };
    let eta_l = if siblings == 1 { 0.5 } else { (1.0 - eta_t) * (1.0 - eta_r) };
    (eta_t, eta_l, eta_r)
}

impl PreparedTree {
    pub fn new(ast: &Ast, types: &Vocab, tokens: &Vocab) -> Result<PreparedTree> {
        let order = ast.preorder();
        let pos: std::collections::HashMap<NodeId, usize> =
            order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut type_rows = Vec::with_capacity(order.len());
        let mut token_rows = Vec::with_capacity(order.len());
        let mut left = Vec::new();
        let mut right = Vec::new();
        for (p, id) in order.iter().enumerate() {
            let node = ast.node_or_err(*id)?;
            type_rows.push(types.embedding_row(Some(node.node_type.as_str())));
            token_rows.push(tokens.embedding_row(node.token.as_deref()));
            let m = node.children.len();
            for (i, child) in node.children.iter().enumerate() {
                let (_, eta_l, eta_r) = child_coefficients(i + 1, m);
                let c = pos[child];
                if eta_l != 0.0 {
                    left.push((p, c, eta_l));
                }
                if eta_r != 0.0 {
                    right.push((p, c, eta_r));
                }
            }
        }
        let n = order.len();
        Ok(PreparedTree {
            order,
            type_rows,
            token_rows,
            left: Arc::new(RowMix::new(n, n, left)?),
            right: Arc::new(RowMix::new(n, n, right)?),
        })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Node vectors on a tape.
pub fn init_nodes_on_tape(tape: &mut Tape, vars: &ParamVars, tree: &PreparedTree, mode: InitMode) -> Result<Var> {
    match mode {
        InitMode::Type => tape.embedding_lookup(vars.w_type, &tree.type_rows),
        InitMode::Token => tape.embedding_lookup(vars.w_token, &tree.token_rows),
        InitMode::Combine => {
            let ty = tape.embedding_lookup(vars.w_type, &tree.type_rows)?;
            let tok = tape.embedding_lookup(vars.w_token, &tree.token_rows)?;
            let both = tape.concat(ty, tok)?;
            let lin = tape.matmul(both, vars.w_fuse)?;
            let lin = tape.add(lin, vars.b_fuse)?;
            Ok(tape.tanh(lin))
        }
    }
}

/// One tree convolution on a tape.
pub fn conv_on_tape(tape: &mut Tape, vars: &ParamVars, tree: &PreparedTree, states: Var) -> Result<Var> {
    // The parent's own coefficient is eta_t = 1, so the top term needs no mixing.
    let top = tape.matmul(states, vars.w_t)?;
    let hl = tape.matmul(states, vars.w_l)?;
    let left = tape.row_mix(tree.left.clone(), hl)?;
    let hr = tape.matmul(states, vars.w_r)?;
    let right = tape.row_mix(tree.right.clone(), hr)?;
    let sum = tape.add(top, left)?;
    let sum = tape.add(sum, right)?;
    let sum = tape.add(sum, vars.b_conv)?;
    Ok(tape.tanh(sum))
}

pub struct AttentionVars {
    pub alpha: Var,
    pub code: Var,
}

pub fn attention_on_tape(tape: &mut Tape, vars: &ParamVars, states: Var) -> Result<AttentionVars> {
    let scores = tape.matmul(states, vars.attention)?;
    let alpha = tape.softmax(scores, 0)?;
    let code = tape.weighted_sum(alpha, states)?;
    Ok(AttentionVars { alpha, code })
}

pub struct ForwardVars {
    pub states: Var,
    pub alpha: Option<Var>,
    pub code: Var,
}

/// Full encoder forward pass on a tape.
pub fn forward_on_tape(
    tape: &mut Tape,
    vars: &ParamVars,
    tree: &PreparedTree,
    num_conv_layers: usize,
    init: InitMode,
    aggregate: AggregateMode,
) -> Result<ForwardVars> {
    let mut states = init_nodes_on_tape(tape, vars, tree, init)?;
    for _ in 0..num_conv_layers {
        states = conv_on_tape(tape, vars, tree, states)?;
    }
    match aggregate {
        AggregateMode::Attention => {
            let att = attention_on_tape(tape, vars, states)?;
            Ok(ForwardVars {
                states,
                alpha: Some(att.alpha),
                code: att.code,
            })
        }
        AggregateMode::Max => {
            let code = tape.max(states, 0)?;
            Ok(ForwardVars {
                states,
                alpha: None,
                code,
            })
        }
    }
}

/// Hidden vectors of all nodes, rows in pre-order.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStates {
    pub order: Vec<NodeId>,
    pub rows: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodeVector {
    pub source_id: String,
    pub values: Vec<f64>,
}

pub fn init_node_embeddings(
    ast: &Ast,
    params: &EncoderParams,
    types: &Vocab,
    tokens: &Vocab,
    mode: InitMode,
) -> Result<NodeStates> {
    let tree = PreparedTree::new(ast, types, tokens)?;
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let states = init_nodes_on_tape(&mut tape, &vars, &tree, mode)?;
    Ok(NodeStates {
        order: tree.order,
        rows: tape.value(states).clone(),
    })
}

/// Applies one convolution to `states`, which must be row-aligned with the
/// pre-order of `ast`.
pub fn tbcnn_conv_layer(ast: &Ast, states: &NodeStates, params: &EncoderParams, types: &Vocab, tokens: &Vocab) -> Result<NodeStates> {
    let tree = PreparedTree::new(ast, types, tokens)?;
    if tree.order != states.order {
        return Err(Error::Shape("node states are not aligned with the tree".into()));
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let h = tape.constant(states.rows.clone());
    let out = conv_on_tape(&mut tape, &vars, &tree, h)?;
    Ok(NodeStates {
        order: tree.order,
        rows: tape.value(out).clone(),
    })
}

/// Softmax attention over node states: returns the weights and the
/// weighted sum of rows.
pub fn attention_aggregate(states: &NodeStates, params: &EncoderParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let h = tape.constant(states.rows.clone());
    let att = attention_on_tape(&mut tape, &vars, h)?;
    Ok((tape.value(att.alpha).data().to_vec(), tape.value(att.code).data().to_vec()))
}

/// Result of encoding one tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub code: CodeVector,
    /// Attention weights aligned with `order` (attention mode only).
    pub alpha: Option<Vec<f64>>,
    pub order: Vec<NodeId>,
}

/// Encoder parameters bundled with the vocabularies and modes needed to
/// embed trees.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub params: EncoderParams,
    pub types: Vocab,
    pub tokens: Vocab,
    pub init_mode: InitMode,
    pub aggregate_mode: AggregateMode,
    /// Hide function names before encoding (used when names are labels).
    pub mask_names: bool,
}

impl Encoder {
    pub fn prepare(&self, ast: &Ast) -> Result<PreparedTree> {
        if self.mask_names {
            PreparedTree::new(&mask_function_names(ast), &self.types, &self.tokens)
        } else {
            PreparedTree::new(ast, &self.types, &self.tokens)
        }
    }

    pub fn encode(&self, ast: &Ast) -> Result<Encoding> {
        let tree = self.prepare(ast)?;
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, false);
        let fwd = forward_on_tape(
            &mut tape,
            &vars,
            &tree,
            self.params.num_conv_layers,
            self.init_mode,
            self.aggregate_mode,
        )?;
        Ok(Encoding {
            code: CodeVector {
                source_id: ast.source_id().to_string(),
                values: tape.value(fwd.code).data().to_vec(),
            },
            alpha: fwd.alpha.map(|a| tape.value(a).data().to_vec()),
            order: tree.order,
        })
    }
}

/// Encodes `ast` with explicit parameters and modes.
pub fn encode(
    ast: &Ast,
    params: &EncoderParams,
    types: &Vocab,
    tokens: &Vocab,
    init: InitMode,
    aggregate: AggregateMode,
) -> Result<(CodeVector, Option<Vec<f64>>)> {
    let enc = Encoder {
        params: params.clone(),
        types: types.clone(),
        tokens: tokens.clone(),
        init_mode: init,
        aggregate_mode: aggregate,
        mask_names: false,
    };
    let out = enc.encode(ast)?;
    Ok((out.code, out.alpha))
}
