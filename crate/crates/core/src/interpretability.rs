//! Explanations for a trained classifier: attention scores per node,
//! deletion of code components one at a time, the resulting drop in the
//! correct class's confidence, and their rank correlation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ast::{Ast, NodeId, NodeType};
use crate::downstream::Classifier;
use crate::encoder::Encoder;
use crate::error::{Error, Result};

/// Attention weights of one tree and their max-normalized display form.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionScores {
    pub alpha: BTreeMap<NodeId, f64>,
    pub display: BTreeMap<NodeId, f64>,
}

fn scores_from_alpha(order: &[NodeId], alpha: &[f64]) -> AttentionScores {
    let max = alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    AttentionScores {
        alpha: order.iter().copied().zip(alpha.iter().copied()).collect(),
        display: order.iter().copied().zip(alpha.iter().map(|a| a / max)).collect(),
    }
}

/// `score_i = alpha_i / max_j alpha_j`. Requires attention aggregation.
pub fn node_attention_scores(ast: &Ast, encoder: &Encoder) -> Result<AttentionScores> {
    let enc = encoder.encode(ast)?;
    let alpha = enc
        .alpha
        .ok_or_else(|| Error::InvalidArgument("max aggregation produces no attention weights".into()))?;
    Ok(scores_from_alpha(&enc.order, &alpha))
}

/// Node types that count as deletable code components.
pub fn is_component(t: &NodeType) -> bool {
    t.is_subtree_root() || t.is_keyword()
}

/// One tree per qualifying non-root node, with that node's subtree
/// deleted, in pre-order.
pub fn perturb_all(ast: &Ast) -> Vec<(NodeId, Ast)> {
    ast.preorder()
        .into_iter()
        .filter(|&id| id != ast.root())
        .filter(|&id| ast.node(id).is_some_and(|n| is_component(&n.node_type)))
        .map(|id| (id, ast.delete_component(id).expect("non-root node exists")))
        .collect()
}

/// Correct-class probability on `original` minus that on `perturbed`.
pub fn confidence_delta(classifier: &Classifier, original: &Ast, perturbed: &Ast, class: usize) -> Result<f64> {
    let c = classifier.num_classes();
    if class >= c {
        return Err(Error::IndexOutOfRange { index: class, len: c });
    }
    let before = classifier.predict_proba(original)?[class];
    let after = classifier.predict_proba(perturbed)?[class];
    Ok(before - after)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub node_id: NodeId,
    #[serde(rename = "type")]
    pub node_type: String,
    pub delta: f64,
    pub attention_mass: f64,
}

/// Ranks starting at 1; tied values share their average rank.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("{} values against {}", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::InvalidArgument("rank correlation needs at least 3 pairs".into()));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Undefined("rank correlation of a constant sequence".into()));
    }
    Ok((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation between deltas and attention masses.
pub fn delta_attention_correlation(records: &[PerturbationRecord]) -> Result<f64> {
    let deltas: Vec<f64> = records.iter().map(|r| r.delta).collect();
    let masses: Vec<f64> = records.iter().map(|r| r.attention_mass).collect();
    spearman(&deltas, &masses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub method: String,
    /// `None` when undefined (too few records or a constant side).
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub source_id: String,
    pub correct_class: usize,
    pub records: Vec<PerturbationRecord>,
    pub correlation: Correlation,
    pub display_scores: BTreeMap<NodeId, f64>,
    pub raw_alpha: BTreeMap<NodeId, f64>,
}

impl ExplanationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Deletes every component of `ast`, measuring the confidence drop and the
/// attention mass of what was removed. Records are in node-id order.
pub fn explain(classifier: &Classifier, ast: &Ast, correct_class: usize) -> Result<ExplanationReport> {
    let c = classifier.num_classes();
    if correct_class >= c {
        return Err(Error::IndexOutOfRange {
            index: correct_class,
            len: c,
        });
    }
    let (probs, alpha) = classifier.forward(ast)?;
    let alpha =
        alpha.ok_or_else(|| Error::InvalidArgument("max aggregation produces no attention weights".into()))?;
    let scores = scores_from_alpha(&ast.preorder(), &alpha);
    let base = probs[correct_class];
    let mut records = perturb_all(ast)
        .par_iter()
        .map(|(id, perturbed)| {
            let after = classifier.predict_proba(perturbed)?[correct_class];
            let attention_mass = ast.preorder_from(*id).iter().map(|n| scores.alpha[n]).sum::<f64>();
            Ok(PerturbationRecord {
                node_id: *id,
                node_type: ast.node(*id).expect("perturbed node exists").node_type.to_string(),
                delta: base - after,
                attention_mass: attention_mass.min(1.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by_key(|r| r.node_id);
    let value = match delta_attention_correlation(&records) {
        Ok(v) => Some(v),
        Err(Error::InvalidArgument(_) | Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(ExplanationReport {
        source_id: ast.source_id().to_string(),
        correct_class,
        records,
        correlation: Correlation {
            method: "spearman".into(),
            value,
        },
        display_scores: scores.display,
        raw_alpha: scores.alpha,
    })
}

/// Shade characters from lightest to darkest.
pub const SHADES: [char; 5] = [' ', '░', '▒', '▓', '█'];

/// Bucket of a display score: `[0, .2)`, `[.2, .4)`, ..., `[.8, 1]`.
pub fn shade_level(score: f64) -> usize {
    ((score.clamp(0.0, 1.0) * 5.0).floor() as usize).min(4)
}

fn check_alignment(ast: &Ast, scores: &BTreeMap<NodeId, f64>) -> Result<()> {
    if scores.len() != ast.len() || ast.nodes().any(|n| !scores.contains_key(&n.id)) {
        return Err(Error::Shape(format!(
            "{} scores for a tree of {} nodes",
            scores.len(),
            ast.len()
        )));
    }
    Ok(())
}

/// Text heat map. With source text and spans, each source line is followed
/// by a line of shade characters taken from the innermost node covering
/// each column. Otherwise an indented node listing with scores.
pub fn render_heat(ast: &Ast, scores: &BTreeMap<NodeId, f64>, source: Option<&str>) -> Result<String> {
    check_alignment(ast, scores)?;
    match source {
        Some(text) if ast.has_spans() => Ok(render_source(ast, scores, text)),
        _ => Ok(render_tree(ast, scores)),
    }
}

fn render_source(ast: &Ast, scores: &BTreeMap<NodeId, f64>, text: &str) -> String {
    // Innermost covering node per byte: visiting in pre-order lets
    // descendants overwrite their ancestors.
    let mut owner: Vec<Option<NodeId>> = vec![None; text.len()];
    for id in ast.preorder() {
        if let Some(span) = ast.span(id) {
            for slot in owner.iter_mut().take(span.end.min(text.len())).skip(span.start) {
                *slot = Some(id);
            }
        }
    }
    let mut out = String::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.trim_end_matches(['\n', '\r']);
        out.push_str(body);
        out.push('\n');
        let mut shades = String::new();
        for (i, _) in body.char_indices() {
            let ch = match owner[offset + i] {
                Some(id) if !body[i..].starts_with(char::is_whitespace) => SHADES[shade_level(scores[&id])],
                _ => ' ',
            };
            shades.push(ch);
        }
        out.push_str(shades.trim_end());
        out.push('\n');
        offset += line.len();
    }
    out
}

fn render_tree(ast: &Ast, scores: &BTreeMap<NodeId, f64>) -> String {
    let mut out = String::new();
    let mut stack = vec![(ast.root(), 0usize)];
    while let Some((id, depth)) = stack.pop() {
        let node = ast.node(id).expect("preorder ids exist");
        let s = scores[&id];
        let label = match &node.token {
            Some(t) => format!("{}:{}", node.node_type, t),
            None => node.node_type.to_string(),
        };
        let _ = writeln!(out, "{}{} {:.3} {}", "  ".repeat(depth), label, s, SHADES[shade_level(s)]);
        for c in node.children.iter().rev() {
            stack.push((*c, depth + 1));
        }
    }
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG drawing of the tree; a node's fill darkens with its score.
pub fn render_svg(ast: &Ast, scores: &BTreeMap<NodeId, f64>) -> Result<String> {
    check_alignment(ast, scores)?;
    const W: f64 = 90.0;
    const H: f64 = 56.0;
    // Leaves take consecutive columns; a parent sits above its children's midpoint.
    fn place(ast: &Ast, id: NodeId, depth: usize, next: &mut f64, pos: &mut BTreeMap<NodeId, (f64, usize)>) -> f64 {
        let node = ast.node(id).expect("ids exist");
        let x = if node.children.is_empty() {
            *next += 1.0;
            *next - 1.0
        } else {
            let xs: Vec<f64> = node.children.iter().map(|c| place(ast, *c, depth + 1, next, pos)).collect();
            (xs[0] + xs[xs.len() - 1]) / 2.0
        };
        pos.insert(id, (x, depth));
        x
    }
    let mut pos = BTreeMap::new();
    let mut columns = 0.0;
    place(ast, ast.root(), 0, &mut columns, &mut pos);
    let depth = pos.values().map(|(_, d)| *d).max().unwrap_or(0);
    let width = columns * W + 20.0;
    let height = (depth as f64 + 1.0) * H + 20.0;
    let center = |id: &NodeId| {
        let (x, d) = pos[id];
        (10.0 + x * W + W / 2.0, 10.0 + d as f64 * H + 16.0)
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="monospace" font-size="10">"#
    );
    for node in ast.nodes() {
        let (x1, y1) = center(&node.id);
        for c in &node.children {
            let (x2, y2) = center(c);
            let _ = writeln!(out, r##"<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="#999"/>"##);
        }
    }
    for node in ast.nodes() {
        let (cx, cy) = center(&node.id);
        let s = scores[&node.id].clamp(0.0, 1.0);
        let g = (255.0 * (1.0 - s)).round() as u8;
        let ink = if g < 128 { "#fff" } else { "#000" };
        let label = match &node.token {
            Some(t) => format!("{}:{}", node.node_type, t),
            None => node.node_type.to_string(),
        };
        let _ = writeln!(
            out,
            r##"<rect x="{}" y="{}" width="{}" height="22" rx="4" fill="rgb({g},{g},{g})" stroke="#333"/>"##,
            cx - W / 2.0 + 4.0,
            cy - 11.0,
            W - 8.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{cx}" y="{}" text-anchor="middle" fill="{ink}">{}</text>"#,
            cy + 4.0,
            xml_escape(&label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::parse_minilang;

    fn rec(delta: f64, mass: f64) -> PerturbationRecord {
        PerturbationRecord {
            node_id: 0,
            node_type: "expr".into(),
            delta,
            attention_mass: mass,
        }
    }

    #[test]
    fn spearman_examples() {
        let r = |d: &[f64], m: &[f64]| {
            let recs: Vec<_> = d.iter().zip(m).map(|(a, b)| rec(*a, *b)).collect();
            delta_attention_correlation(&recs)
        };
        assert_eq!(r(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(r(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!((r(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap() - 0.6).abs() < 1e-12);
        assert!(matches!(r(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::InvalidArgument(_))));
        assert!(matches!(r(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::Undefined(_))));
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn perturbation_counts() {
        let ast = parse_minilang("x = 1; y = 2;", "p").unwrap();
        // Two expr_stmt and two inner expr nodes.
        let perturbed = perturb_all(&ast);
        assert_eq!(perturbed.len(), 4);
        for (_, p) in &perturbed {
            assert!(p.len() < ast.len());
        }
        let leaf = Ast::new(
            "leaf",
            0,
            vec![crate::ast::AstNode::new(0, NodeType::Ident, Some("x".into()), vec![])],
        )
        .unwrap();
        assert!(perturb_all(&leaf).is_empty());
    }

    #[test]
    fn shade_buckets() {
        assert_eq!(SHADES[shade_level(1.0)], '█');
        assert_eq!(SHADES[shade_level(0.0)], ' ');
        assert_eq!(shade_level(0.2), 1);
        assert_eq!(shade_level(0.79), 3);
    }

    #[test]
    fn renderings() {
        let src = "x = 1;\nif (x > 0) { y = x; }\n";
        let ast = parse_minilang(src, "r").unwrap();
        let ones: BTreeMap<NodeId, f64> = ast.nodes().map(|n| (n.id, 1.0)).collect();
        let text = render_heat(&ast, &ones, Some(src)).unwrap();
        let shade_lines: Vec<&str> = text.lines().skip(1).step_by(2).collect();
        assert!(shade_lines.iter().all(|l| l.chars().all(|c| c == '█' || c == ' ')));
        assert_eq!(text, render_heat(&ast, &ones, Some(src)).unwrap());

        let tree = render_heat(&ast, &ones, None).unwrap();
        assert_eq!(tree.lines().count(), ast.len());
        assert!(tree.starts_with("program 1.000 █"));

        let svg = render_svg(&ast, &ones).unwrap();
        assert_eq!(svg.matches("<rect").count(), ast.len());
        assert!(svg.contains("rgb(0,0,0)"));

        let mut short = ones.clone();
        short.pop_first();
        assert!(render_heat(&ast, &short, None).is_err());
        assert!(render_svg(&ast, &short).is_err());
    }
}
