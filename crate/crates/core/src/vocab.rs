//! String vocabularies with dense indices and their TSV file format.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VocabKind {
    Subtree,
    Token,
    Type,
    MethodName,
}

impl VocabKind {
    fn header_tag(self) -> &'static str {
        match self {
            VocabKind::Subtree => "subtree-vocab",
            VocabKind::Token => "token-vocab",
            VocabKind::Type => "type-vocab",
            VocabKind::MethodName => "method-name-vocab",
        }
    }

    fn from_header_tag(tag: &str) -> Option<Self> {
        [VocabKind::Subtree, VocabKind::Token, VocabKind::Type, VocabKind::MethodName]
            .into_iter()
            .find(|k| k.header_tag() == tag)
    }
}

impl fmt::Display for VocabKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.header_tag())
    }
}

/// Occurrence counts of vocabulary keys. Merging is commutative, so shards
/// of a corpus can be counted independently.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counter {
    counts: BTreeMap<String, u64>,
}

impl Counter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, key: impl Into<String>) {
        *self.counts.entry(key.into()).or_insert(0) += 1;
    }

    pub fn merge(mut self, other: Counter) -> Counter {
        for (k, c) in other.counts {
            *self.counts.entry(k).or_insert(0) += c;
        }
        self
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Bijection between keys and dense indices `0..len`, with counts.
///
/// Indices are assigned by descending count, ties broken by the key's
/// lexicographic order, so the assignment depends only on the multiset of
/// observations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    kind: VocabKind,
    min_count: u64,
    entries: Vec<(String, u64)>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_counter(kind: VocabKind, counter: Counter, min_count: u64) -> Result<Vocab> {
        if min_count == 0 {
            return Err(Error::InvalidArgument("min_count must be positive".into()));
        }
        let mut entries: Vec<(String, u64)> = counter
            .counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .collect();
        if entries.is_empty() {
            return Err(Error::EmptyVocab(min_count as usize));
        }
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_entries(kind, min_count, entries))
    }

    fn from_entries(kind: VocabKind, min_count: u64, entries: Vec<(String, u64)>) -> Vocab {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (k, _))| (k.clone(), i))
            .collect();
        Vocab {
            kind,
            min_count,
            entries,
            index,
        }
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn key(&self, index: usize) -> Option<&str> {
        self.entries.get(index).map(|(k, _)| k.as_str())
    }

    pub fn count(&self, index: usize) -> Option<u64> {
        self.entries.get(index).map(|(_, c)| *c)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    /// Row in an embedding table that reserves row 0 for unknown keys.
    pub fn embedding_row(&self, key: Option<&str>) -> usize {
        key.and_then(|k| self.index_of(k)).map_or(0, |i| i + 1)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("#{} v1 min_count={}\n", self.kind.header_tag(), self.min_count);
        for (i, (key, count)) in self.entries.iter().enumerate() {
            out.push_str(&format!("{i}\t{count}\t{}\n", escape(key)));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Vocab> {
        let bad = |m: String| Error::MalformedVocab(m);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("missing header".into()))?;
        let rest = header
            .strip_prefix('#')
            .ok_or_else(|| bad(format!("bad header {header:?}")))?;
        let parts: Vec<&str> = rest.split(' ').collect();
        let (kind, min_count) = match parts.as_slice() {
            [tag, "v1", mc] => {
                let kind = VocabKind::from_header_tag(tag)
                    .ok_or_else(|| bad(format!("unknown vocabulary kind {tag:?}")))?;
                let mc = mc
                    .strip_prefix("min_count=")
                    .and_then(|v| v.parse::<u64>().ok())
                    .ok_or_else(|| bad(format!("bad min_count field {mc:?}")))?;
                (kind, mc)
            }
            _ => return Err(bad(format!("bad header {header:?}"))),
        };
        let mut entries = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.splitn(3, '\t').collect();
            let [idx, count, key] = fields.as_slice() else {
                return Err(bad(format!("line {}: expected 3 fields", lineno + 2)));
            };
            let idx: usize = idx
                .parse()
                .map_err(|_| bad(format!("line {}: bad index", lineno + 2)))?;
            let count: u64 = count
                .parse()
                .map_err(|_| bad(format!("line {}: bad count", lineno + 2)))?;
            if idx != entries.len() {
                return Err(bad(format!("line {}: indices must be dense", lineno + 2)));
            }
            if count < min_count {
                return Err(bad(format!("line {}: count below min_count", lineno + 2)));
            }
            entries.push((unescape(key), count));
        }
        let vocab = Self::from_entries(kind, min_count, entries);
        if vocab.index.len() != vocab.entries.len() {
            return Err(bad("duplicate keys".into()));
        }
        Ok(vocab)
    }

    /// SHA-256 of the TSV serialization, hex encoded.
    pub fn fingerprint(&self) -> String {
        sha256_hex(self.to_tsv().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

/// What the pretext task predicts for each tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Subtree,
    Token,
    MethodName,
}

impl FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subtree" => Ok(LabelMode::Subtree),
            "token" => Ok(LabelMode::Token),
            "method_name" => Ok(LabelMode::MethodName),
            other => Err(Error::InvalidArgument(format!("unknown label mode {other:?}"))),
        }
    }
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelMode::Subtree => "subtree",
            LabelMode::Token => "token",
            LabelMode::MethodName => "method_name",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counter(keys: &[&str]) -> Counter {
        let mut c = Counter::new();
        for k in keys {
            c.add(*k);
        }
        c
    }

    #[test]
    fn order_by_count_then_key() {
        let v = Vocab::from_counter(VocabKind::Token, counter(&["b", "a", "c", "c", "b"]), 1).unwrap();
        assert_eq!(v.keys().collect::<Vec<_>>(), vec!["b", "c", "a"]);
        assert_eq!(v.count(1), Some(2));
    }

    #[test]
    fn threshold_can_empty_the_vocab() {
        let err = Vocab::from_counter(VocabKind::Subtree, counter(&["x", "y"]), 2).unwrap_err();
        assert!(matches!(err, Error::EmptyVocab(2)));
    }

    #[test]
    fn header_and_rows() {
        let v = Vocab::from_counter(VocabKind::Subtree, counter(&["expr(ident)", "expr(ident)", "if"]), 1).unwrap();
        assert_eq!(v.to_tsv(), "#subtree-vocab v1 min_count=1\n0\t2\texpr(ident)\n1\t1\tif\n");
    }

    #[test]
    fn malformed_files_rejected() {
        assert!(Vocab::from_tsv("").is_err());
        assert!(Vocab::from_tsv("#subtree-vocab v2 min_count=1\n").is_err());
        assert!(Vocab::from_tsv("#subtree-vocab v1 min_count=1\n1\t3\tx\n").is_err());
        assert!(Vocab::from_tsv("#subtree-vocab v1 min_count=2\n0\t1\tx\n").is_err());
        assert!(Vocab::from_tsv("#subtree-vocab v1 min_count=1\n0\t1\tx\n1\t1\tx\n").is_err());
    }

    #[test]
    fn unknown_label_mode() {
        assert!("subtree".parse::<LabelMode>().is_ok());
        assert!(matches!("paths".parse::<LabelMode>(), Err(Error::InvalidArgument(_))));
    }

    proptest! {
        #[test]
        fn tsv_round_trip(keys in proptest::collection::vec("[a-z\\t\\\\()]{1,6}", 1..30)) {
            let mut c = Counter::new();
            for k in &keys { c.add(k.clone()); }
            let v = Vocab::from_counter(VocabKind::Token, c, 1).unwrap();
            let back = Vocab::from_tsv(&v.to_tsv()).unwrap();
            prop_assert_eq!(&back, &v);
            for (i, k) in v.keys().enumerate() {
                prop_assert_eq!(v.index_of(k), Some(i));
            }
        }
    }
}
