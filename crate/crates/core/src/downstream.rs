//! Uses of code vectors: clustering, clone detection, code search,
//! fine-tuned classification and method-name prediction, with their
//! evaluation metrics.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ast::Ast;
use crate::autodiff::{softmax_slice, Tape, Tensor};
use crate::encoder::{Encoder, EncoderParams};
use crate::error::{Error, Result};
use crate::names::split_subtokens;
use crate::subtree::function_names;
use crate::trainer::{fit, logits_on_tape, register_model, Checkpoint, Example, Model, Modes, TrainConfig};

/// One embedded snippet.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub source_id: String,
    pub language: String,
    pub task_id: Option<String>,
    pub vector: Vec<f64>,
}

/// Code vectors of a corpus with their metadata. Source ids are unique and
/// every vector has the same dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
    ids: HashSet<String>,
}

impl EmbeddingIndex {
    pub fn new(dim: usize) -> Self {
        EmbeddingIndex {
            dim,
            entries: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn push(&mut self, entry: IndexEntry) -> Result<()> {
        if entry.vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "{} has dimension {}, index has {}",
                entry.source_id,
                entry.vector.len(),
                self.dim
            )));
        }
        if entry.vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("{} has a non-finite entry", entry.source_id)));
        }
        if !self.ids.insert(entry.source_id.clone()) {
            return Err(Error::InvalidArgument(format!("duplicate source id {}", entry.source_id)));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn vectors(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| e.vector.clone()).collect()
    }

    /// `#embeddings v1 dim=D` header, then
    /// `source_id \t language \t task_id \t space-separated floats`.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("#embeddings v1 dim={}\n", self.dim);
        for e in &self.entries {
            let floats: Vec<String> = e.vector.iter().map(|x| format!("{x:?}")).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.source_id,
                e.language,
                e.task_id.as_deref().unwrap_or(""),
                floats.join(" ")
            ));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<EmbeddingIndex> {
        let bad = |m: String| Error::InvalidArgument(format!("embedding file: {m}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("missing header".into()))?;
        let dim = header
            .strip_prefix("#embeddings v1 dim=")
            .and_then(|d| d.parse::<usize>().ok())
            .ok_or_else(|| bad(format!("bad header {header:?}")))?;
        let mut index = EmbeddingIndex::new(dim);
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, lang, task, floats] = fields.as_slice() else {
                return Err(bad(format!("line {}: expected 4 fields", n + 2)));
            };
            let vector = floats
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("line {}: {e}", n + 2)))?;
            index.push(IndexEntry {
                source_id: id.to_string(),
                language: lang.to_string(),
                task_id: (!task.is_empty()).then(|| task.to_string()),
                vector,
            })?;
        }
        Ok(index)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

/// Lloyd's algorithm under squared Euclidean distance with k-means++
/// seeding. Ties in assignment go to the lowest cluster index; an emptied
/// cluster keeps its previous centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<KMeansResult> {
    let n = points.len();
    if k < 1 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds the {n} points")));
    }
    if max_iters < 1 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("points have different dimensions".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.gen_range(0..n)].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // Guard against rounding landing on an existing centroid.
            if nearest[chosen] == 0.0 {
                chosen = (0..n).rev().find(|&i| nearest[i] > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(p, &points[next]));
        }
    }

    let assign = |centroids: &[Vec<f64>]| -> Vec<usize> {
        points
            .iter()
            .map(|p| {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (c, centroid) in centroids.iter().enumerate() {
                    let d = sq_dist(p, centroid);
                    if d < best_d {
                        best = c;
                        best_d = d;
                    }
                }
                best
            })
            .collect()
    };

    let mut assignment = assign(&centroids);
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next = assign(&centroids);
        if next == assignment {
            break;
        }
        assignment = next;
    }
    let inertia = points
        .iter()
        .zip(&assignment)
        .map(|(p, &c)| sq_dist(p, &centroids[c]))
        .sum();
    Ok(KMeansResult {
        assignment,
        centroids,
        inertia,
        iterations,
    })
}

fn choose2(x: u64) -> i128 {
    (x as i128) * (x as i128 - 1) / 2
}

/// Adjusted Rand index from the contingency table, computed in integers up
/// to a single final division. When both partitions are trivial in the
/// same way (the denominator vanishes) the result is 1.
pub fn adjusted_rand_index<A: Ord, B: Ord>(assignment: &[A], truth: &[B]) -> Result<f64> {
    if assignment.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} assignments against {} truth labels",
            assignment.len(),
            truth.len()
        )));
    }
    let n = assignment.len() as u64;
    if n < 2 {
        return Err(Error::InvalidArgument("ARI needs at least 2 items".into()));
    }
    let mut table: BTreeMap<(&A, &B), u64> = BTreeMap::new();
    let mut rows: BTreeMap<&A, u64> = BTreeMap::new();
    let mut cols: BTreeMap<&B, u64> = BTreeMap::new();
    for (a, b) in assignment.iter().zip(truth) {
        *table.entry((a, b)).or_insert(0) += 1;
        *rows.entry(a).or_insert(0) += 1;
        *cols.entry(b).or_insert(0) += 1;
    }
    let index: i128 = table.values().map(|&c| choose2(c)).sum();
    let sum_rows: i128 = rows.values().map(|&c| choose2(c)).sum();
    let sum_cols: i128 = cols.values().map(|&c| choose2(c)).sum();
    let pairs = choose2(n);
    // (index - E) / (max - E) with E = rows*cols/pairs and max = (rows+cols)/2,
    // scaled by 2*pairs.
    let num = 2 * pairs * index - 2 * sum_rows * sum_cols;
    let den = pairs * (sum_rows + sum_cols) - 2 * sum_rows * sum_cols;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("cosine similarity of a zero vector".into()));
    }
    // sqrt(x * x) == x exactly when x * x is normal, so cos(a, a) is 1.0.
    let prod = na * nb;
    let norm = if prod.is_normal() { prod.sqrt() } else { na.sqrt() * nb.sqrt() };
    Ok((dot / norm).clamp(-1.0, 1.0))
}

pub const DEFAULT_CLONE_THRESHOLD: f64 = 0.8;

pub fn detect_clone(a: &[f64], b: &[f64], threshold: f64) -> Result<bool> {
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside [-1, 1]")));
    }
    Ok(cosine_similarity(a, b)? >= threshold)
}

/// Precision, recall and F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// From counts; a ratio with a zero denominator is 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    }
}

/// P/R/F1 over `(predicted, actual)` pairs.
pub fn clone_metrics(pairs: &[(bool, bool)]) -> Prf {
    let tp = pairs.iter().filter(|(p, a)| *p && *a).count();
    let fp = pairs.iter().filter(|(p, a)| *p && !*a).count();
    let fn_ = pairs.iter().filter(|(p, a)| !*p && *a).count();
    Prf::from_counts(tp, fp, fn_)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub source_id: String,
    pub score: f64,
}

fn rank(mut hits: Vec<SearchHit>, k: usize) -> Vec<SearchHit> {
    hits.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.source_id.cmp(&b.source_id))
    });
    hits.truncate(k);
    hits
}

fn search_filtered(
    query: &[f64],
    index: &EmbeddingIndex,
    k: usize,
    keep: impl Fn(&IndexEntry) -> bool + Sync,
) -> Result<Vec<SearchHit>> {
    if index.is_empty() {
        return Err(Error::InvalidArgument("search over an empty index".into()));
    }
    if k < 1 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let hits = index
        .entries
        .par_iter()
        .filter(|e| keep(e))
        .map(|e| {
            Ok(SearchHit {
                source_id: e.source_id.clone(),
                score: cosine_similarity(query, &e.vector)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rank(hits, k))
}

/// Top-`k` entries by cosine similarity, ties broken by source id. With
/// `exclude_language`, entries of that language are skipped.
pub fn search(query: &[f64], index: &EmbeddingIndex, k: usize, exclude_language: Option<&str>) -> Result<Vec<SearchHit>> {
    search_filtered(query, index, k, |e| Some(e.language.as_str()) != exclude_language)
}

/// Like [`search`] with an indexed entry as the query; the entry itself is
/// never returned.
pub fn search_entry(
    index: &EmbeddingIndex,
    position: usize,
    k: usize,
    exclude_language: Option<&str>,
) -> Result<Vec<SearchHit>> {
    let query = index.entries.get(position).ok_or(Error::IndexOutOfRange {
        index: position,
        len: index.len(),
    })?;
    search_filtered(&query.vector, index, k, |e| {
        e.source_id != query.source_id && Some(e.language.as_str()) != exclude_language
    })
}

/// Mean over queries of 1/rank of the relevant id; an absent id counts 0.
pub fn mean_reciprocal_rank(queries: &[(Vec<String>, String)]) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    let total: f64 = queries
        .iter()
        .map(|(ranked, relevant)| {
            ranked
                .iter()
                .position(|id| id == relevant)
                .map_or(0.0, |p| 1.0 / (p as f64 + 1.0))
        })
        .sum();
    total / queries.len() as f64
}

/// Where fine-tuning starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneInit {
    Pretrained,
    Random,
}

impl FromStr for FinetuneInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained" => Ok(FinetuneInit::Pretrained),
            "random" => Ok(FinetuneInit::Random),
            other => Err(Error::InvalidArgument(format!("unknown init {other:?}"))),
        }
    }
}

impl fmt::Display for FinetuneInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FinetuneInit::Pretrained => "pretrained",
            FinetuneInit::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    /// Share of the training pool used, in (0, 1].
    pub fraction: f64,
    pub init: FinetuneInit,
    /// Share of each class held out for testing, in [0, 1).
    pub test_fraction: f64,
    /// Optimizer, epochs, batch size and seed. Model shape comes from the
    /// checkpoint.
    pub train: TrainConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            fraction: 1.0,
            init: FinetuneInit::Pretrained,
            test_fraction: 0.3,
            train: TrainConfig {
                epochs: 30,
                batch_size: 8,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub w_cls: Tensor,
    pub b_cls: Tensor,
}

/// Encoder with a softmax classification layer on the code vector.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub encoder: Encoder,
    pub head: ClassifierHead,
}

impl Classifier {
    pub fn num_classes(&self) -> usize {
        self.head.w_cls.rows()
    }

    fn model(&self) -> Model {
        Model {
            encoder: self.encoder.params.clone(),
            head: self.head.w_cls.clone(),
            bias: Some(self.head.b_cls.clone()),
        }
    }

    /// Class probabilities and, in attention mode, the node weights in
    /// pre-order.
    pub fn forward(&self, ast: &Ast) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let tree = self.encoder.prepare(ast)?;
        let model = self.model();
        let mut tape = Tape::new();
        let vars = register_model(&mut tape, &model, false);
        let modes = Modes {
            init: self.encoder.init_mode,
            aggregate: self.encoder.aggregate_mode,
        };
        let (logits, alpha) = logits_on_tape(&mut tape, &vars, &tree, model.encoder.num_conv_layers, modes)?;
        let probs = softmax_slice(tape.value(logits).data());
        Ok((probs, alpha.map(|a| tape.value(a).data().to_vec())))
    }

    pub fn predict_proba(&self, ast: &Ast) -> Result<Vec<f64>> {
        Ok(self.forward(ast)?.0)
    }

    /// Most probable class; ties go to the lowest index.
    pub fn predict(&self, ast: &Ast) -> Result<usize> {
        Ok(argmax(&self.predict_proba(ast)?))
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub init: FinetuneInit,
    pub fraction: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub accuracy: f64,
    pub epoch_losses: Vec<f64>,
    pub test_ids: Vec<String>,
}

/// Splits `labels` per class into (pool, test) index lists. Each class
/// gives `round(test_fraction * size)` items to the test side.
fn stratified_split(labels: &[usize], test_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut pool = Vec::new();
    let mut test = Vec::new();
    for members in by_class.values_mut() {
        members.shuffle(rng);
        let t = (test_fraction * members.len() as f64).round() as usize;
        let t = t.min(members.len());
        test.extend_from_slice(&members[..t]);
        pool.extend_from_slice(&members[t..]);
    }
    pool.sort_unstable();
    test.sort_unstable();
    (pool, test)
}

/// Draws `max(1, round(fraction * |pool|))` items, allocated to classes in
/// proportion to their pool share by the largest-remainder rule.
fn stratified_sample(pool: &[usize], labels: &[usize], fraction: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in pool {
        by_class.entry(labels[i]).or_default().push(i);
    }
    let total = ((fraction * pool.len() as f64).round() as usize).max(1);
    let quotas: Vec<(usize, f64)> = by_class
        .iter()
        .map(|(&c, m)| (c, total as f64 * m.len() as f64 / pool.len() as f64))
        .collect();
    let mut alloc: BTreeMap<usize, usize> = quotas.iter().map(|&(c, q)| (c, q.floor() as usize)).collect();
    let assigned: usize = alloc.values().sum();
    let mut remainders: Vec<(usize, f64)> = quotas.iter().map(|&(c, q)| (c, q - q.floor())).collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    for (c, _) in remainders.into_iter().take(total - assigned) {
        *alloc.get_mut(&c).expect("class present") += 1;
    }
    let mut out = Vec::new();
    for (c, members) in by_class.iter_mut() {
        members.shuffle(rng);
        out.extend_from_slice(&members[..alloc[c].min(members.len())]);
    }
    out.sort_unstable();
    out
}

const SPLIT_STREAM: u64 = 0x5eed_0001;
const INIT_STREAM: u64 = 0x5eed_0002;
const SHUFFLE_STREAM: u64 = 0x5eed_0003;

fn stream(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt)
}

/// Attaches a softmax classifier to the checkpoint's encoder and trains
/// both jointly on a stratified sample of `corpus`, then reports held-out
/// accuracy. The split, sample, head initialization and batch order depend
/// only on the seed, so pretrained and random starts see the same data.
pub fn finetune(ckpt: &Checkpoint, corpus: &[(Ast, usize)], cfg: &FinetuneConfig) -> Result<(Classifier, FinetuneReport)> {
    cfg.train.validate()?;
    if !(cfg.fraction > 0.0 && cfg.fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {} outside (0, 1]", cfg.fraction)));
    }
    if !(0.0..1.0).contains(&cfg.test_fraction) {
        return Err(Error::InvalidArgument(format!(
            "test fraction {} outside [0, 1)",
            cfg.test_fraction
        )));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let labels: Vec<usize> = corpus.iter().map(|(_, c)| *c).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    if num_classes < 2 {
        return Err(Error::InvalidArgument("classification needs at least 2 classes".into()));
    }
    let present: HashSet<usize> = labels.iter().copied().collect();
    if let Some(c) = (0..num_classes).find(|c| !present.contains(c)) {
        return Err(Error::MissingClass(format!("class {c} has no examples in the corpus")));
    }

    let mut split_rng = stream(cfg.train.seed, SPLIT_STREAM);
    let (pool, test) = stratified_split(&labels, cfg.test_fraction, &mut split_rng);
    let train_idx = stratified_sample(&pool, &labels, cfg.fraction, &mut split_rng);
    let sampled: HashSet<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    if let Some(c) = (0..num_classes).find(|c| !sampled.contains(c)) {
        return Err(Error::MissingClass(format!(
            "class {c} is absent from the {} sampled training examples; raise the fraction or change the seed",
            train_idx.len()
        )));
    }

    let base = ckpt.encoder();
    let dim = base.params.dim;
    let mut init_rng = stream(cfg.train.seed, INIT_STREAM);
    let (w_cls, b_cls) = Model::random_head(num_classes, dim, true, &mut init_rng);
    let encoder_params = match cfg.init {
        FinetuneInit::Pretrained => base.params.clone(),
        FinetuneInit::Random => EncoderParams::random(
            base.params.w_type.rows(),
            base.params.w_token.rows(),
            dim,
            base.params.num_conv_layers,
            &mut init_rng,
        ),
    };
    let mut model = Model {
        encoder: encoder_params,
        head: w_cls,
        bias: b_cls,
    };
    let examples = train_idx
        .iter()
        .map(|&i| {
            Ok(Example {
                tree: base.prepare(&corpus[i].0)?,
                labels: vec![labels[i]],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let modes = Modes {
        init: base.init_mode,
        aggregate: base.aggregate_mode,
    };
    let mut shuffle_rng = stream(cfg.train.seed, SHUFFLE_STREAM);
    let stats = fit(&mut model, &examples, &cfg.train, modes, &mut shuffle_rng, |_, _| {})?;

    let classifier = Classifier {
        encoder: Encoder {
            params: model.encoder,
            ..base
        },
        head: ClassifierHead {
            w_cls: model.head,
            b_cls: model.bias.expect("classifier has a bias"),
        },
    };
    let predictions = test
        .par_iter()
        .map(|&i| classifier.predict(&corpus[i].0))
        .collect::<Result<Vec<_>>>()?;
    let correct = predictions.iter().zip(&test).filter(|(p, &i)| **p == labels[i]).count();
    let accuracy = if test.is_empty() {
        f64::NAN
    } else {
        correct as f64 / test.len() as f64
    };
    let report = FinetuneReport {
        init: cfg.init,
        fraction: cfg.fraction,
        train_size: train_idx.len(),
        test_size: test.len(),
        accuracy,
        epoch_losses: stats.epoch_losses,
        test_ids: test.iter().map(|&i| corpus[i].0.source_id().to_string()).collect(),
    };
    Ok((classifier, report))
}

/// Sub-word precision, recall and F1 of a predicted name against the true
/// name, over case-insensitive sub-token multisets.
pub fn subword_f1(predicted: &str, truth: &str) -> Result<Prf> {
    let (tp, fp, fn_) = subword_counts(predicted, truth)?;
    Ok(Prf::from_counts(tp, fp, fn_))
}

fn subword_counts(predicted: &str, truth: &str) -> Result<(usize, usize, usize)> {
    let p = split_subtokens(predicted);
    let t = split_subtokens(truth);
    if p.is_empty() || t.is_empty() {
        return Err(Error::InvalidArgument("name has no sub-tokens".into()));
    }
    let mut remaining: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &t {
        *remaining.entry(s).or_insert(0) += 1;
    }
    let mut tp = 0;
    for s in &p {
        if let Some(c) = remaining.get_mut(s.as_str()) {
            if *c > 0 {
                *c -= 1;
                tp += 1;
            }
        }
    }
    Ok((tp, p.len() - tp, t.len() - tp))
}

/// Method names with learned embeddings, one row per name.
#[derive(Debug, Clone, PartialEq)]
pub struct NameTable {
    pub names: Vec<String>,
    pub embeddings: Tensor,
}

/// Candidate names ranked by `softmax(v . nameEmb)`, ties broken by name.
pub fn predict_method_name(v: &[f64], table: &NameTable) -> Result<Vec<(String, f64)>> {
    if table.names.is_empty() {
        return Err(Error::InvalidArgument("empty name table".into()));
    }
    if table.embeddings.rows() != table.names.len() || table.embeddings.cols() != v.len() {
        return Err(Error::Shape(format!(
            "name table {:?} for {} names and a code vector of length {}",
            table.embeddings.shape(),
            table.names.len(),
            v.len()
        )));
    }
    let logits: Vec<f64> = (0..table.names.len())
        .map(|i| table.embeddings.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect();
    let probs = softmax_slice(&logits);
    let mut ranked: Vec<(String, f64)> = table.names.iter().cloned().zip(probs).collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamePrediction {
    pub source_id: String,
    pub truth: String,
    pub predicted: String,
    pub scores: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamingReport {
    pub init: FinetuneInit,
    pub train_size: usize,
    pub test_size: usize,
    /// Sub-token counts pooled over all test methods.
    pub micro: Prf,
    pub predictions: Vec<NamePrediction>,
}

/// First function name of a tree.
fn method_name(ast: &Ast) -> Result<String> {
    function_names(ast).into_iter().next().ok_or_else(|| {
        Error::InvalidArgument(format!("{} has no function to name", ast.source_id()))
    })
}

/// Trains a name table on top of the checkpoint's encoder (names hidden
/// from the input) and scores top-1 predictions on a held-out split.
pub fn train_name_predictor(
    ckpt: &Checkpoint,
    corpus: &[Ast],
    cfg: &FinetuneConfig,
) -> Result<(Encoder, NameTable, NamingReport)> {
    cfg.train.validate()?;
    if corpus.len() < 2 {
        return Err(Error::EmptyCorpus);
    }
    let truths = corpus.iter().map(method_name).collect::<Result<Vec<_>>>()?;
    let mut split_rng = stream(cfg.train.seed, SPLIT_STREAM);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut split_rng);
    let n_test = ((cfg.test_fraction * corpus.len() as f64).round() as usize).min(corpus.len() - 1);
    let (test, pool) = order.split_at(n_test);
    let n_train = ((cfg.fraction * pool.len() as f64).round() as usize).clamp(1, pool.len());
    let mut train_idx = pool[..n_train].to_vec();
    train_idx.sort_unstable();

    let names: Vec<String> = train_idx
        .iter()
        .map(|&i| truths[i].clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let name_index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();

    let base = Encoder {
        mask_names: true,
        ..ckpt.encoder()
    };
    let dim = base.params.dim;
    let mut init_rng = stream(cfg.train.seed, INIT_STREAM);
    let (table, _) = Model::random_head(names.len(), dim, false, &mut init_rng);
    let encoder_params = match cfg.init {
        FinetuneInit::Pretrained => base.params.clone(),
        FinetuneInit::Random => EncoderParams::random(
            base.params.w_type.rows(),
            base.params.w_token.rows(),
            dim,
            base.params.num_conv_layers,
            &mut init_rng,
        ),
    };
    let mut model = Model {
        encoder: encoder_params,
        head: table,
        bias: None,
    };
    let examples = train_idx
        .iter()
        .map(|&i| {
            Ok(Example {
                tree: base.prepare(&corpus[i])?,
                labels: vec![name_index[truths[i].as_str()]],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let modes = Modes {
        init: base.init_mode,
        aggregate: base.aggregate_mode,
    };
    let mut shuffle_rng = stream(cfg.train.seed, SHUFFLE_STREAM);
    fit(&mut model, &examples, &cfg.train, modes, &mut shuffle_rng, |_, _| {})?;

    let encoder = Encoder {
        params: model.encoder,
        ..base
    };
    let table = NameTable {
        names,
        embeddings: model.head,
    };
    let mut test_idx = test.to_vec();
    test_idx.sort_unstable();
    let predictions = test_idx
        .par_iter()
        .map(|&i| {
            let v = encoder.encode(&corpus[i])?.code.values;
            let predicted = predict_method_name(&v, &table)?[0].0.clone();
            let scores = subword_f1(&predicted, &truths[i])?;
            Ok(NamePrediction {
                source_id: corpus[i].source_id().to_string(),
                truth: truths[i].clone(),
                predicted,
                scores,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for p in &predictions {
        let (a, b, c) = subword_counts(&p.predicted, &p.truth)?;
        tp += a;
        fp += b;
        fn_ += c;
    }
    let report = NamingReport {
        init: cfg.init,
        train_size: train_idx.len(),
        test_size: test_idx.len(),
        micro: Prf::from_counts(tp, fp, fn_),
        predictions,
    };
    Ok((encoder, table, report))
}
