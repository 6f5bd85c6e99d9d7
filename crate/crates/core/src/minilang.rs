//! MiniLang: a small C-like language with a hand-written recursive descent
//! parser producing [`Ast`]s.
//!
//! Grammar (EBNF; `//` line comments and whitespace are skipped):
//!
//! ```text
//! program   = item { item } ;
//! item      = function | stmt ;
//! function  = type IDENT "(" [ param { "," param } ] ")" block ;
//! param     = type IDENT ;
//! type      = ( "int" | "float" | "bool" | "char" | "void" ) [ "[" "]" ] ;
//! stmt      = block | decl ";" | if | while | for | return | expr ";" ;
//! block     = "{" { stmt } "}" ;
//! decl      = type IDENT [ "=" expr ] ;
//! if        = "if" "(" expr ")" stmt [ "else" stmt ] ;
//! while     = "while" "(" expr ")" stmt ;
//! for       = "for" "(" [ decl | expr ] ";" [ expr ] ";" [ expr ] ")" stmt ;
//! return    = "return" [ expr ] ";" ;
//! expr      = assign ;
//! assign    = or [ ( "=" | "+=" | "-=" | "*=" | "/=" | "%=" ) assign ] ;
//! or        = and { "||" and } ;
//! and       = eq { "&&" eq } ;
//! eq        = rel { ( "==" | "!=" ) rel } ;
//! rel       = add { ( "<" | "<=" | ">" | ">=" ) add } ;
//! add       = mul { ( "+" | "-" ) mul } ;
//! mul       = unary { ( "*" | "/" | "%" ) unary } ;
//! unary     = ( "-" | "!" | "++" | "--" ) unary | postfix ;
//! postfix   = primary { "[" expr "]" | "++" | "--" } ;
//! primary   = INT | FLOAT | "true" | "false" | IDENT [ "(" [ expr { "," expr } ] ")" ]
//!           | "(" expr ")" ;
//! ```
//!
//! Tree shape. Every expression that fills a syntactic slot (initializer,
//! statement expression, condition, subscript, call argument, return value,
//! `for` update) is wrapped in an `expr` node; operands inside an expression
//! are not. Conditions of `if`/`while`/`for` are `condition(expr(..))`.
//! Parameters are `decl_stmt(type_name, ident)`. `else` branches become the
//! third child of `if`. Parentheses leave no node behind.

use crate::ast::{Ast, AstNode, NodeId, NodeType, SourceSpan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(String),
    Float(String),
    Kw(&'static str),
    Punct(&'static str),
    Eof,
}

const KEYWORDS: &[&str] = &[
    "int", "float", "bool", "char", "void", "if", "else", "while", "for", "return", "true", "false",
];

const TYPE_KEYWORDS: &[&str] = &["int", "float", "bool", "char", "void"];

// Longest first so that greedy matching works.
const PUNCT: &[&str] = &[
    "+=", "-=", "*=", "/=", "%=", "==", "!=", "<=", ">=", "&&", "||", "++", "--", "(", ")", "{",
    "}", "[", "]", ";", ",", "=", "<", ">", "+", "-", "*", "/", "%", "!",
];

#[derive(Debug, Clone)]
struct Lexeme {
    tok: Tok,
    start: usize,
    end: usize,
}

fn position(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn syntax_error(src: &str, offset: usize, message: impl Into<String>) -> Error {
    let (line, column) = position(src, offset);
    Error::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn lex(src: &str) -> Result<Vec<Lexeme>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if src[i..].starts_with("//") {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &src[start..i];
            let tok = match KEYWORDS.iter().find(|k| **k == word) {
                Some(k) => Tok::Kw(k),
                None => Tok::Ident(word.to_string()),
            };
            out.push(Lexeme { tok, start, end: i });
            continue;
        }
        if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let mut is_float = false;
            if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                is_float = true;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let text = src[start..i].to_string();
            let tok = if is_float { Tok::Float(text) } else { Tok::Int(text) };
            out.push(Lexeme { tok, start, end: i });
            continue;
        }
        match PUNCT.iter().find(|p| src[i..].starts_with(**p)) {
            Some(p) => {
                i += p.len();
                out.push(Lexeme {
                    tok: Tok::Punct(p),
                    start,
                    end: i,
                });
            }
            None => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(syntax_error(src, i, format!("unexpected character {ch:?}")));
            }
        }
    }
    out.push(Lexeme {
        tok: Tok::Eof,
        start: src.len(),
        end: src.len(),
    });
    Ok(out)
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<Lexeme>,
    pos: usize,
    nodes: Vec<AstNode>,
    spans: Vec<SourceSpan>,
}

/// A parsed node: its id and byte span.
#[derive(Clone, Copy)]
struct Built {
    id: NodeId,
    start: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn here(&self) -> &Lexeme {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Lexeme {
        let lx = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        lx
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Kw(q) if *q == k)
    }

    fn is_type_kw(&self) -> bool {
        matches!(self.peek(), Tok::Kw(k) if TYPE_KEYWORDS.contains(k))
    }

    fn error_here(&self, message: impl Into<String>) -> Error {
        let lx = self.here();
        let found = match &lx.tok {
            Tok::Eof => "end of input".to_string(),
            Tok::Ident(s) | Tok::Int(s) | Tok::Float(s) => format!("'{s}'"),
            Tok::Kw(s) | Tok::Punct(s) => format!("'{s}'"),
        };
        syntax_error(self.src, lx.start, format!("{}, found {found}", message.into()))
    }

    fn expect_punct(&mut self, p: &str) -> Result<Lexeme> {
        if self.is_punct(p) {
            Ok(self.bump())
        } else {
            Err(self.error_here(format!("expected '{p}'")))
        }
    }

    fn expect_kw(&mut self, k: &str) -> Result<Lexeme> {
        if self.is_kw(k) {
            Ok(self.bump())
        } else {
            Err(self.error_here(format!("expected '{k}'")))
        }
    }

    fn add(
        &mut self,
        node_type: NodeType,
        token: Option<String>,
        children: &[Built],
        start: usize,
        end: usize,
    ) -> Built {
        let id = self.nodes.len() as NodeId;
        self.nodes.push(AstNode::new(
            id,
            node_type,
            token,
            children.iter().map(|c| c.id).collect(),
        ));
        self.spans.push(SourceSpan {
            node: id,
            start,
            end,
        });
        Built { id, start, end }
    }

    fn wrap(&mut self, node_type: NodeType, inner: Built) -> Built {
        self.add(node_type, None, &[inner], inner.start, inner.end)
    }

    fn program(&mut self) -> Result<Built> {
        if matches!(self.peek(), Tok::Eof) {
            return Err(self.error_here("empty program"));
        }
        let mut items = Vec::new();
        while !matches!(self.peek(), Tok::Eof) {
            let is_function = self.is_type_kw()
                && matches!(self.peek_at(1), Tok::Ident(_))
                && matches!(self.peek_at(2), Tok::Punct("("));
            let is_array_function = self.is_type_kw()
                && matches!(self.peek_at(1), Tok::Punct("["))
                && matches!(self.peek_at(3), Tok::Ident(_))
                && matches!(self.peek_at(4), Tok::Punct("("));
            let item = if is_function || is_array_function {
                self.function()?
            } else {
                self.stmt()?
            };
            items.push(item);
        }
        Ok(self.add(NodeType::Program, None, &items, 0, self.src.len()))
    }

    fn type_name(&mut self) -> Result<Built> {
        if !self.is_type_kw() {
            return Err(self.error_here("expected a type"));
        }
        let lx = self.bump();
        let Tok::Kw(name) = lx.tok else { unreachable!() };
        let mut spelling = name.to_string();
        let mut end = lx.end;
        if self.is_punct("[") {
            self.bump();
            end = self.expect_punct("]")?.end;
            spelling.push_str("[]");
        }
        Ok(self.add(NodeType::TypeName, Some(spelling), &[], lx.start, end))
    }

    fn ident(&mut self) -> Result<Built> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                let lx = self.bump();
                Ok(self.add(NodeType::Ident, Some(name), &[], lx.start, lx.end))
            }
            _ => Err(self.error_here("expected an identifier")),
        }
    }

    fn function(&mut self) -> Result<Built> {
        let ty = self.type_name()?;
        let name = self.ident()?;
        self.expect_punct("(")?;
        let mut children = vec![ty, name];
        if !self.is_punct(")") {
            loop {
                let pty = self.type_name()?;
                let pname = self.ident()?;
                children.push(self.add(NodeType::DeclStmt, None, &[pty, pname], pty.start, pname.end));
                if self.is_punct(",") {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        let body = self.block()?;
        children.push(body);
        Ok(self.add(NodeType::Function, None, &children, ty.start, body.end))
    }

    fn block(&mut self) -> Result<Built> {
        let open = self.expect_punct("{")?;
        let mut stmts = Vec::new();
        while !self.is_punct("}") {
            if matches!(self.peek(), Tok::Eof) {
                return Err(self.error_here("expected '}'"));
            }
            stmts.push(self.stmt()?);
        }
        let close = self.bump();
        Ok(self.add(NodeType::Block, None, &stmts, open.start, close.end))
    }

    fn stmt(&mut self) -> Result<Built> {
        if self.is_punct("{") {
            return self.block();
        }
        if self.is_type_kw() {
            let decl = self.decl()?;
            let semi = self.expect_punct(";")?;
            return Ok(self.extend(decl, semi.end));
        }
        if self.is_kw("if") {
            return self.if_stmt();
        }
        if self.is_kw("while") {
            let kw = self.bump();
            let cond = self.condition()?;
            let body = self.stmt()?;
            return Ok(self.add(NodeType::While, None, &[cond, body], kw.start, body.end));
        }
        if self.is_kw("for") {
            return self.for_stmt();
        }
        if self.is_kw("return") {
            let kw = self.bump();
            let mut children = Vec::new();
            if !self.is_punct(";") {
                let e = self.expr()?;
                children.push(self.wrap(NodeType::Expr, e));
            }
            let semi = self.expect_punct(";")?;
            return Ok(self.add(NodeType::Return, None, &children, kw.start, semi.end));
        }
        let stmt = self.expr_stmt()?;
        let semi = self.expect_punct(";")?;
        Ok(self.extend(stmt, semi.end))
    }

    fn extend(&mut self, built: Built, end: usize) -> Built {
        self.spans[built.id as usize].end = end;
        Built { end, ..built }
    }

    fn decl(&mut self) -> Result<Built> {
        let ty = self.type_name()?;
        let name = self.ident()?;
        let mut children = vec![ty, name];
        let mut end = name.end;
        if self.is_punct("=") {
            self.bump();
            let init = self.expr()?;
            end = init.end;
            children.push(self.wrap(NodeType::Expr, init));
        }
        Ok(self.add(NodeType::DeclStmt, None, &children, ty.start, end))
    }

    fn expr_stmt(&mut self) -> Result<Built> {
        let e = self.expr()?;
        let wrapped = self.wrap(NodeType::Expr, e);
        Ok(self.wrap(NodeType::ExprStmt, wrapped))
    }

    fn condition(&mut self) -> Result<Built> {
        self.expect_punct("(")?;
        let e = self.expr()?;
        self.expect_punct(")")?;
        let wrapped = self.wrap(NodeType::Expr, e);
        Ok(self.wrap(NodeType::Condition, wrapped))
    }

    fn if_stmt(&mut self) -> Result<Built> {
        let kw = self.expect_kw("if")?;
        let cond = self.condition()?;
        let then = self.stmt()?;
        let mut children = vec![cond, then];
        let mut end = then.end;
        if self.is_kw("else") {
            self.bump();
            let other = self.stmt()?;
            end = other.end;
            children.push(other);
        }
        Ok(self.add(NodeType::If, None, &children, kw.start, end))
    }

    fn for_stmt(&mut self) -> Result<Built> {
        let kw = self.expect_kw("for")?;
        self.expect_punct("(")?;
        let mut children = Vec::new();
        if !self.is_punct(";") {
            let init = if self.is_type_kw() { self.decl()? } else { self.expr_stmt()? };
            children.push(init);
        }
        self.expect_punct(";")?;
        if !self.is_punct(";") {
            let e = self.expr()?;
            let wrapped = self.wrap(NodeType::Expr, e);
            children.push(self.wrap(NodeType::Condition, wrapped));
        }
        self.expect_punct(";")?;
        if !self.is_punct(")") {
            let e = self.expr()?;
            children.push(self.wrap(NodeType::Expr, e));
        }
        self.expect_punct(")")?;
        let body = self.stmt()?;
        children.push(body);
        Ok(self.add(NodeType::For, None, &children, kw.start, body.end))
    }

    fn expr(&mut self) -> Result<Built> {
        self.assign()
    }

    fn assign(&mut self) -> Result<Built> {
        let lhs = self.binary(0)?;
        for op in ["=", "+=", "-=", "*=", "/=", "%="] {
            if self.is_punct(op) {
                self.bump();
                let rhs = self.assign()?;
                return Ok(self.add(NodeType::BinOp, Some(op.into()), &[lhs, rhs], lhs.start, rhs.end));
            }
        }
        Ok(lhs)
    }

    fn binary(&mut self, level: usize) -> Result<Built> {
        const LEVELS: &[&[&str]] = &[
            &["||"],
            &["&&"],
            &["==", "!="],
            &["<", "<=", ">", ">="],
            &["+", "-"],
            &["*", "/", "%"],
        ];
        if level == LEVELS.len() {
            return self.unary();
        }
        let mut lhs = self.binary(level + 1)?;
        loop {
            let op = LEVELS[level].iter().find(|op| self.is_punct(op));
            let Some(op) = op else { break };
            self.bump();
            let rhs = self.binary(level + 1)?;
            lhs = self.add(NodeType::BinOp, Some(op.to_string()), &[lhs, rhs], lhs.start, rhs.end);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Built> {
        for op in ["-", "!", "++", "--"] {
            if self.is_punct(op) {
                let lx = self.bump();
                let operand = self.unary()?;
                return Ok(self.add(NodeType::UnaryOp, Some(op.into()), &[operand], lx.start, operand.end));
            }
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Built> {
        let mut base = self.primary()?;
        loop {
            if self.is_punct("[") {
                self.bump();
                let sub = self.expr()?;
                let close = self.expect_punct("]")?;
                let wrapped = self.wrap(NodeType::Expr, sub);
                base = self.add(NodeType::Index, None, &[base, wrapped], base.start, close.end);
            } else if self.is_punct("++") || self.is_punct("--") {
                let lx = self.bump();
                let Tok::Punct(op) = lx.tok else { unreachable!() };
                base = self.add(NodeType::UnaryOp, Some(op.into()), &[base], base.start, lx.end);
            } else {
                return Ok(base);
            }
        }
    }

    fn primary(&mut self) -> Result<Built> {
        match self.peek().clone() {
            Tok::Int(text) | Tok::Float(text) => {
                let lx = self.bump();
                Ok(self.add(NodeType::Literal, Some(text), &[], lx.start, lx.end))
            }
            Tok::Kw(k @ ("true" | "false")) => {
                let lx = self.bump();
                Ok(self.add(NodeType::Literal, Some(k.into()), &[], lx.start, lx.end))
            }
            Tok::Ident(_) => {
                let name = self.ident()?;
                if !self.is_punct("(") {
                    return Ok(name);
                }
                self.bump();
                let mut children = vec![name];
                if !self.is_punct(")") {
                    loop {
                        let arg = self.expr()?;
                        children.push(self.wrap(NodeType::Expr, arg));
                        if self.is_punct(",") {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                }
                let close = self.expect_punct(")")?;
                Ok(self.add(NodeType::Call, None, &children, name.start, close.end))
            }
            Tok::Punct("(") => {
                let open = self.bump();
                let inner = self.expr()?;
                let close = self.expect_punct(")")?;
                // Parentheses vanish from the tree but the span keeps them.
                self.spans[inner.id as usize].start = open.start;
                self.spans[inner.id as usize].end = close.end;
                Ok(Built {
                    start: open.start,
                    end: close.end,
                    ..inner
                })
            }
            _ => Err(self.error_here("expected an expression")),
        }
    }
}

/// Parses MiniLang source into an AST with node ids assigned in pre-order
/// and a source span on every node.
pub fn parse_minilang(source: &str, source_id: &str) -> Result<Ast> {
    let toks = lex(source)?;
    let mut parser = Parser {
        src: source,
        toks,
        pos: 0,
        nodes: Vec::new(),
        spans: Vec::new(),
    };
    let root = parser.program()?;

    // Renumber to pre-order so ids read top-down.
    let mut order = Vec::with_capacity(parser.nodes.len());
    let mut stack = vec![root.id];
    while let Some(id) = stack.pop() {
        order.push(id);
        stack.extend(parser.nodes[id as usize].children.iter().rev().copied());
    }
    let mut remap = vec![0 as NodeId; parser.nodes.len()];
    for (new, old) in order.iter().enumerate() {
        remap[*old as usize] = new as NodeId;
    }
    let nodes = order
        .iter()
        .map(|&old| {
            let n = &parser.nodes[old as usize];
            AstNode::new(
                remap[old as usize],
                n.node_type.clone(),
                n.token.clone(),
                n.children.iter().map(|c| remap[*c as usize]).collect(),
            )
        })
        .collect();
    let spans = order
        .iter()
        .map(|&old| {
            let s = parser.spans[old as usize];
            SourceSpan {
                node: remap[old as usize],
                ..s
            }
        })
        .collect();
    Ast::with_spans(source_id, 0, nodes, spans)
}
