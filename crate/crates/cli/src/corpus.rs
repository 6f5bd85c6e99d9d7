//! Corpus directories: `*.ml` MiniLang sources and `*.json` interchange
//! trees, plus an optional `manifest.tsv` with per-snippet metadata.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use s2v_core::ast::load_ast_file;
use s2v_core::{parse_minilang, Ast};

use crate::CliError;

pub const MANIFEST: &str = "manifest.tsv";
pub const DEFAULT_LANGUAGE: &str = "minilang";

/// One manifest row: `source_id \t label \t language \t task_id`. Empty or
/// `-` fields are absent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Meta {
    pub label: Option<String>,
    pub language: Option<String>,
    pub task_id: Option<String>,
}

pub type Manifest = BTreeMap<String, Meta>;

fn field(s: Option<&str>) -> Option<String> {
    s.map(str::trim).filter(|s| !s.is_empty() && *s != "-").map(str::to_string)
}

pub fn parse_manifest(text: &str, origin: &str) -> Result<Manifest, CliError> {
    let mut out = Manifest::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') || (n == 0 && line.starts_with("source_id\t")) {
            continue;
        }
        let mut cols = line.split('\t');
        let id = field(cols.next()).ok_or_else(|| CliError::data(format!("{origin}:{}: missing source_id", n + 1)))?;
        let meta = Meta {
            label: field(cols.next()),
            language: field(cols.next()),
            task_id: field(cols.next()),
        };
        if out.insert(id.clone(), meta).is_some() {
            return Err(CliError::data(format!("{origin}:{}: duplicate source_id {id}", n + 1)));
        }
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Manifest, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    parse_manifest(&text, &path.display().to_string())
}

pub fn manifest_text(rows: &[(String, Meta)]) -> String {
    let mut out = String::from("source_id\tlabel\tlanguage\ttask_id\n");
    for (id, m) in rows {
        let f = |x: &Option<String>| x.clone().unwrap_or_else(|| "-".into());
        out.push_str(&format!("{id}\t{}\t{}\t{}\n", f(&m.label), f(&m.language), f(&m.task_id)));
    }
    out
}

/// A parsed snippet with its original text (MiniLang only).
#[derive(Debug, Clone)]
pub struct Snippet {
    pub ast: Ast,
    pub source: Option<String>,
    pub path: PathBuf,
}

/// Reads one `.ml` or `.json` file. MiniLang snippets are named after the
/// file stem.
pub fn load_file(path: &Path) -> Result<Snippet, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let at = |e: s2v_core::Error| CliError::from(e).context(&path.display().to_string());
    match path.extension().and_then(|e| e.to_str()) {
        Some("ml") => {
            let text = String::from_utf8(bytes).map_err(|_| CliError::data(format!("{}: not UTF-8", path.display())))?;
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let ast = parse_minilang(&text, &id).map_err(at)?;
            Ok(Snippet {
                ast,
                source: Some(text),
                path: path.to_path_buf(),
            })
        }
        Some("json") => Ok(Snippet {
            ast: load_ast_file(&bytes).map_err(at)?,
            source: None,
            path: path.to_path_buf(),
        }),
        _ => Err(CliError::data(format!("{}: expected a .ml or .json file", path.display()))),
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub snippets: Vec<Snippet>,
    pub manifest: Manifest,
}

impl Corpus {
    /// Loads every snippet of `dir` in file-name order.
    pub fn load(dir: &Path) -> Result<Corpus, CliError> {
        let entries = fs::read_dir(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("ml" | "json")))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(CliError::data(format!("{}: no .ml or .json files", dir.display())));
        }
        let snippets = paths.iter().map(|p| load_file(p)).collect::<Result<Vec<_>, _>>()?;
        let mut seen = BTreeMap::new();
        for s in &snippets {
            if let Some(prev) = seen.insert(s.ast.source_id().to_string(), s.path.clone()) {
                return Err(CliError::data(format!(
                    "source_id {} appears in both {} and {}",
                    s.ast.source_id(),
                    prev.display(),
                    s.path.display()
                )));
            }
        }
        let manifest_path = dir.join(MANIFEST);
        let manifest = if manifest_path.exists() {
            read_manifest(&manifest_path)?
        } else {
            Manifest::new()
        };
        Ok(Corpus { snippets, manifest })
    }

    pub fn asts(&self) -> Vec<Ast> {
        self.snippets.iter().map(|s| s.ast.clone()).collect()
    }

    pub fn meta(&self, id: &str) -> Meta {
        self.manifest.get(id).cloned().unwrap_or_default()
    }

    /// Class names (sorted) and each snippet's class index. Every snippet
    /// needs a label.
    pub fn labeled(&self) -> Result<(Vec<String>, Vec<(Ast, usize)>), CliError> {
        let mut labels = Vec::with_capacity(self.snippets.len());
        for s in &self.snippets {
            let id = s.ast.source_id();
            let label = self
                .meta(id)
                .label
                .ok_or_else(|| CliError::data(format!("{id} has no label in {MANIFEST}")))?;
            labels.push(label);
        }
        let mut classes = labels.clone();
        classes.sort();
        classes.dedup();
        let out = self
            .snippets
            .iter()
            .zip(&labels)
            .map(|(s, l)| (s.ast.clone(), classes.binary_search(l).expect("label collected")))
            .collect();
        Ok((classes, out))
    }
}
