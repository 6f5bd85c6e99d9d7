//! Pretext training: the encoder predicts the pseudo-labels of its own input
//! through a softmax over the label vocabulary, optimized with Adam.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ast::Ast;
use crate::autodiff::{softmax_slice, Tape, Tensor, Var};
use crate::encoder::{
    forward_on_tape, AggregateMode, CodeVector, Encoder, EncoderParams, InitMode, ParamVars, PreparedTree,
    INIT_SCALE,
};
use crate::error::{Error, Result};
use crate::subtree::{build_label_vocab, build_token_vocab, build_type_vocab, label_set, mask_function_names};
use crate::vocab::{LabelMode, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dim: usize,
    pub num_conv_layers: usize,
    pub init_mode: InitMode,
    pub label_mode: LabelMode,
    pub aggregate_mode: AggregateMode,
    pub min_count: u64,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 20,
            batch_size: 32,
            seed: 42,
            dim: 100,
            num_conv_layers: 2,
            init_mode: InitMode::Combine,
            label_mode: LabelMode::Subtree,
            aggregate_mode: AggregateMode::Attention,
            min_count: 2,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if self.min_count == 0 {
            return bad("min_count must be at least 1");
        }
        Ok(())
    }
}

/// Type, token and label vocabularies of a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabularies {
    pub types: Vocab,
    pub tokens: Vocab,
    pub labels: Vocab,
}

impl Vocabularies {
    /// Builds all three vocabularies from a corpus. Function names are
    /// masked out of the token vocabulary when they are the labels.
    pub fn build(corpus: &[Ast], label_mode: LabelMode, min_count: u64) -> Result<Vocabularies> {
        let masked;
        let inputs = if label_mode == LabelMode::MethodName {
            masked = corpus.iter().map(mask_function_names).collect::<Vec<_>>();
            masked.as_slice()
        } else {
            corpus
        };
        let types = build_type_vocab(inputs)?;
        let tokens = build_token_vocab(inputs, min_count)?;
        let labels = match label_mode {
            LabelMode::Token => tokens.clone(),
            _ => build_label_vocab(corpus, label_mode, min_count)?,
        };
        Ok(Vocabularies { types, tokens, labels })
    }
}

/// `W_subtrees`: one row per label.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionHead {
    pub w_subtrees: Tensor,
}

/// Label distribution `q = softmax(W_subtrees v)`.
pub fn predict_subtree_distribution(v: &CodeVector, head: &PredictionHead) -> Result<Vec<f64>> {
    if head.w_subtrees.cols() != v.values.len() {
        return Err(Error::Shape(format!(
            "code vector of length {} against head {:?}",
            v.values.len(),
            head.w_subtrees.shape()
        )));
    }
    let logits: Vec<f64> = (0..head.w_subtrees.rows())
        .map(|i| head.w_subtrees.row(i).iter().zip(&v.values).map(|(a, b)| a * b).sum())
        .collect();
    Ok(softmax_slice(&logits))
}

/// Encoder plus an output layer; shared by pretraining and fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Model {
    pub encoder: EncoderParams,
    pub head: Tensor,
    pub bias: Option<Tensor>,
}

impl Model {
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.encoder.tensors_mut().into_iter().map(|(_, t)| t).collect();
        out.push(&mut self.head);
        if let Some(b) = self.bias.as_mut() {
            out.push(b);
        }
        out
    }

    pub fn random_head<R: Rng>(rows: usize, dim: usize, bias: bool, rng: &mut R) -> (Tensor, Option<Tensor>) {
        let mut head = Tensor::zeros(&[rows, dim]);
        for v in head.data_mut() {
            *v = rng.gen_range(-INIT_SCALE..=INIT_SCALE);
        }
        (head, bias.then(|| Tensor::zeros(&[rows])))
    }
}

/// Tape handles for an encoder plus an output layer.
pub struct ModelVars {
    pub encoder: ParamVars,
    pub head: Var,
    pub bias: Option<Var>,
}

impl ModelVars {
    fn all(&self) -> Vec<Var> {
        let mut v = self.encoder.all().to_vec();
        v.push(self.head);
        v.extend(self.bias);
        v
    }
}

pub(crate) fn register_model(tape: &mut Tape, model: &Model, requires_grad: bool) -> ModelVars {
    ModelVars {
        encoder: model.encoder.register(tape, requires_grad),
        head: tape.leaf(model.head.clone(), requires_grad),
        bias: model.bias.as_ref().map(|b| tape.leaf(b.clone(), requires_grad)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Modes {
    pub init: InitMode,
    pub aggregate: AggregateMode,
}

/// Output logits for one tree, plus its attention weights when present.
pub fn logits_on_tape(
    tape: &mut Tape,
    vars: &ModelVars,
    tree: &PreparedTree,
    layers: usize,
    modes: Modes,
) -> Result<(Var, Option<Var>)> {
    let fwd = forward_on_tape(tape, &vars.encoder, tree, layers, modes.init, modes.aggregate)?;
    let logits = tape.matmul(vars.head, fwd.code)?;
    let logits = match vars.bias {
        Some(b) => tape.add(logits, b)?,
        None => logits,
    };
    Ok((logits, fwd.alpha))
}

/// Mean cross-entropy over `labels` for one tree.
pub fn loss_on_tape(
    tape: &mut Tape,
    vars: &ModelVars,
    tree: &PreparedTree,
    labels: &[usize],
    layers: usize,
    modes: Modes,
) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("example has no labels".into()));
    }
    let (logits, _) = logits_on_tape(tape, vars, tree, layers, modes)?;
    let mut total: Option<Var> = None;
    for &l in labels {
        let ce = tape.cross_entropy(logits, l)?;
        total = Some(match total {
            Some(t) => tape.add(t, ce)?,
            None => ce,
        });
    }
    Ok(tape.scale(total.expect("labels nonempty"), 1.0 / labels.len() as f64))
}

/// Mean over `labels` of `-ln q(label)` for the code vector of `ast`.
pub fn example_loss(ast: &Ast, labels: &[usize], encoder: &Encoder, head: &PredictionHead) -> Result<f64> {
    let tree = encoder.prepare(ast)?;
    let model = Model {
        encoder: encoder.params.clone(),
        head: head.w_subtrees.clone(),
        bias: None,
    };
    let mut tape = Tape::new();
    let vars = register_model(&mut tape, &model, false);
    let modes = Modes {
        init: encoder.init_mode,
        aggregate: encoder.aggregate_mode,
    };
    let loss = loss_on_tape(&mut tape, &vars, &tree, labels, encoder.params.num_conv_layers, modes)?;
    Ok(tape.value(loss).item())
}

pub(crate) struct Example {
    pub tree: PreparedTree,
    pub labels: Vec<usize>,
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *x -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitStats {
    pub steps: u64,
    pub epoch_losses: Vec<f64>,
}

fn example_grads(model: &Model, ex: &Example, layers: usize, modes: Modes) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let vars = register_model(&mut tape, model, true);
    let loss = loss_on_tape(&mut tape, &vars, &ex.tree, &ex.labels, layers, modes)?;
    let mut grads = tape.backward(loss)?;
    let value = tape.value(loss).item();
    let flat = vars
        .all()
        .into_iter()
        .map(|v| {
            grads
                .take(v)
                .map(Tensor::into_data)
                .unwrap_or_else(|| vec![0.0; tape.value(v).numel()])
        })
        .collect();
    Ok((value, flat))
}

/// Minibatch Adam over `examples`. Per-example gradients are computed in
/// parallel and summed in example order, so results do not depend on the
/// thread count.
pub(crate) fn fit(
    model: &mut Model,
    examples: &[Example],
    cfg: &TrainConfig,
    modes: Modes,
    rng: &mut ChaCha8Rng,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<FitStats> {
    let layers = model.encoder.num_conv_layers;
    let mut adam = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut stats = FitStats::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Result<(f64, Vec<Vec<f64>>)>> = batch
                .par_iter()
                .map(|&i| example_grads(model, &examples[i], layers, modes))
                .collect();
            let mut sum: Option<Vec<Vec<f64>>> = None;
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, grads) = r?;
                batch_loss += loss;
                match sum.as_mut() {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (x, y) in a.iter_mut().zip(g) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite {
                    step: adam.steps() as usize,
                    detail: format!("batch loss {batch_loss} in epoch {epoch}"),
                });
            }
            let mut grads = sum.expect("batches are nonempty");
            let scale = 1.0 / batch.len() as f64;
            for g in grads.iter_mut().flatten() {
                *g *= scale;
            }
            if grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    step: adam.steps() as usize,
                    detail: "non-finite gradient".into(),
                });
            }
            adam.step(&mut model.tensors_mut(), &grads);
            epoch_loss += batch_loss;
        }
        let mean = epoch_loss / examples.len() as f64;
        stats.epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    stats.steps = adam.steps();
    Ok(stats)
}

pub const CHECKPOINT_VERSION: u64 = 1;

/// Trained encoder, prediction head and everything needed to reuse them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocabs: Vocabularies,
    pub encoder: EncoderParams,
    pub head: PredictionHead,
    pub step: u64,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub skipped: usize,
    pub used: usize,
}

impl Checkpoint {
    pub fn encoder(&self) -> Encoder {
        Encoder {
            params: self.encoder.clone(),
            types: self.vocabs.types.clone(),
            tokens: self.vocabs.tokens.clone(),
            init_mode: self.config.init_mode,
            aggregate_mode: self.config.aggregate_mode,
            mask_names: self.config.label_mode == LabelMode::MethodName,
        }
    }
}

/// Trains an encoder and prediction head from scratch.
pub fn train(corpus: &[Ast], vocabs: Vocabularies, config: &TrainConfig) -> Result<(Checkpoint, TrainReport)> {
    train_with_progress(corpus, vocabs, config, |_, _| {})
}

pub fn train_with_progress(
    corpus: &[Ast],
    vocabs: Vocabularies,
    config: &TrainConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(Checkpoint, TrainReport)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let encoder_params = EncoderParams::random(
        vocabs.types.len() + 1,
        vocabs.tokens.len() + 1,
        config.dim,
        config.num_conv_layers,
        &mut rng,
    );
    let (head, _) = Model::random_head(vocabs.labels.len(), config.dim, false, &mut rng);
    let mut ckpt = Checkpoint {
        config: config.clone(),
        vocabs,
        encoder: encoder_params,
        head: PredictionHead { w_subtrees: head },
        step: 0,
        final_loss: f64::NAN,
        epoch_losses: Vec::new(),
    };
    let encoder = ckpt.encoder();

    let mut examples = Vec::new();
    let mut skipped = 0;
    for ast in corpus {
        let labels = label_set(ast, &ckpt.vocabs.labels, config.label_mode)?;
        if labels.is_empty() {
            skipped += 1;
            continue;
        }
        examples.push(Example {
            tree: encoder.prepare(ast)?,
            labels,
        });
    }
    if examples.is_empty() {
        return Err(Error::NoLabels);
    }

    let mut model = Model {
        encoder: ckpt.encoder.clone(),
        head: ckpt.head.w_subtrees.clone(),
        bias: None,
    };
    let modes = Modes {
        init: config.init_mode,
        aggregate: config.aggregate_mode,
    };
    let stats = fit(&mut model, &examples, config, modes, &mut rng, on_epoch)?;
    ckpt.encoder = model.encoder;
    ckpt.head.w_subtrees = model.head;
    ckpt.step = stats.steps;
    ckpt.final_loss = *stats.epoch_losses.last().expect("epochs >= 1");
    ckpt.epoch_losses = stats.epoch_losses.clone();
    let report = TrainReport {
        epoch_losses: stats.epoch_losses,
        skipped,
        used: examples.len(),
    };
    Ok((ckpt, report))
}

#[derive(Serialize, Deserialize)]
struct Fingerprints {
    subtree: String,
    token: String,
    #[serde(rename = "type")]
    types: String,
}

#[derive(Serialize, Deserialize)]
struct TensorDoc {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    version: u64,
    config: TrainConfig,
    vocab_sha256: Fingerprints,
    step: u64,
    final_loss: f64,
    epoch_losses: Vec<f64>,
    tensors: BTreeMap<String, TensorDoc>,
}

/// Paths of the vocabulary files stored next to a checkpoint:
/// `<stem>.labels.tsv`, `<stem>.tokens.tsv`, `<stem>.types.tsv`.
pub fn vocab_paths(checkpoint: &Path) -> [PathBuf; 3] {
    let stem = checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let dir = checkpoint.parent().unwrap_or_else(|| Path::new(""));
    ["labels", "tokens", "types"].map(|k| dir.join(format!("{stem}.{k}.tsv")))
}

impl Checkpoint {
    /// Canonical JSON form of the checkpoint document.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut tensors = BTreeMap::new();
        for (name, t) in self.encoder.tensors() {
            tensors.insert(
                name.to_string(),
                TensorDoc {
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                },
            );
        }
        tensors.insert(
            "W_subtrees".to_string(),
            TensorDoc {
                shape: self.head.w_subtrees.shape().to_vec(),
                data: self.head.w_subtrees.data().to_vec(),
            },
        );
        let doc = CheckpointDoc {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            vocab_sha256: Fingerprints {
                subtree: self.vocabs.labels.fingerprint(),
                token: self.vocabs.tokens.fingerprint(),
                types: self.vocabs.types.fingerprint(),
            },
            step: self.step,
            final_loss: self.final_loss,
            epoch_losses: self.epoch_losses.clone(),
            tensors,
        };
        let mut out = serde_json::to_vec(&doc).expect("checkpoint serializes");
        out.push(b'\n');
        out
    }

    /// Parses a checkpoint document and checks it against the given
    /// vocabularies.
    pub fn from_json_bytes(bytes: &[u8], vocabs: Vocabularies) -> Result<Checkpoint> {
        let corrupt = |m: String| Error::CorruptCheckpoint(m);
        let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| corrupt(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| corrupt("missing version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let doc: CheckpointDoc = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
        if doc.vocab_sha256.subtree != vocabs.labels.fingerprint() {
            return Err(Error::FingerprintMismatch("subtree".into()));
        }
        if doc.vocab_sha256.token != vocabs.tokens.fingerprint() {
            return Err(Error::FingerprintMismatch("token".into()));
        }
        if doc.vocab_sha256.types != vocabs.types.fingerprint() {
            return Err(Error::FingerprintMismatch("type".into()));
        }
        let cfg = doc.config;
        let mut tensors = doc.tensors;
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = tensors
                .remove(name)
                .ok_or_else(|| corrupt(format!("missing tensor {name}")))?;
            if t.shape != shape {
                return Err(corrupt(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape)));
            }
            Tensor::new(t.shape, t.data).map_err(|e| corrupt(format!("tensor {name}: {e}")))
        };
        let d = cfg.dim;
        let mut encoder = EncoderParams::zeros(vocabs.types.len() + 1, vocabs.tokens.len() + 1, d, cfg.num_conv_layers);
        for (name, slot) in encoder.tensors_mut() {
            let shape = slot.shape().to_vec();
            *slot = take(name, &shape)?;
        }
        let w_subtrees = take("W_subtrees", &[vocabs.labels.len(), d])?;
        if let Some(extra) = tensors.keys().next() {
            return Err(corrupt(format!("unexpected tensor {extra}")));
        }
        Ok(Checkpoint {
            config: cfg,
            vocabs,
            encoder,
            head: PredictionHead { w_subtrees },
            step: doc.step,
            final_loss: doc.final_loss,
            epoch_losses: doc.epoch_losses,
        })
    }
}

/// Writes the checkpoint document and its three vocabulary files.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let [labels, tokens, types] = vocab_paths(path);
    fs::write(&labels, ckpt.vocabs.labels.to_tsv())?;
    fs::write(&tokens, ckpt.vocabs.tokens.to_tsv())?;
    fs::write(&types, ckpt.vocabs.types.to_tsv())?;
    fs::write(path, ckpt.to_json_bytes())?;
    Ok(())
}

/// Reads a checkpoint and the vocabulary files beside it, verifying the
/// format version and vocabulary fingerprints.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let [labels, tokens, types] = vocab_paths(path);
    let read = |p: &Path| -> Result<Vocab> { Vocab::from_tsv(&fs::read_to_string(p)?) };
    let vocabs = Vocabularies {
        labels: read(&labels)?,
        tokens: read(&tokens)?,
        types: read(&types)?,
    };
    Checkpoint::from_json_bytes(&bytes, vocabs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::parse_minilang;

    fn v(values: Vec<f64>) -> CodeVector {
        CodeVector {
            source_id: "v".into(),
            values,
        }
    }

    #[test]
    fn zero_head_gives_uniform() {
        let head = PredictionHead {
            w_subtrees: Tensor::zeros(&[4, 3]),
        };
        let q = predict_subtree_distribution(&v(vec![1.0, -2.0, 0.5]), &head).unwrap();
        assert_eq!(q, vec![0.25; 4]);
    }

    #[test]
    fn two_label_hand_softmax() {
        // v . row0 = ln 3, v . row1 = 0
        let head = PredictionHead {
            w_subtrees: Tensor::matrix(2, 2, vec![3f64.ln(), 0.0, 0.0, 0.0]).unwrap(),
        };
        let q = predict_subtree_distribution(&v(vec![1.0, 5.0]), &head).unwrap();
        assert!((q[0] - 0.75).abs() < 1e-12 && (q[1] - 0.25).abs() < 1e-12);
        assert!(predict_subtree_distribution(&v(vec![1.0]), &head).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Tensor::vector(vec![1.0, -1.0]);
        let mut adam = Adam::new(0.1, 0.9, 0.999, 1e-8);
        adam.step(&mut [&mut p], &[vec![3.0, -0.5]]);
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        assert!((p.data()[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn label_free_corpus_is_rejected() {
        let corpus = vec![parse_minilang("x = 1;", "a").unwrap()];
        let vocabs = Vocabularies::build(&corpus, LabelMode::Subtree, 1).unwrap();
        // A tree whose subtrees are all out of vocabulary.
        let other = vec![parse_minilang("while (a) { }", "b").unwrap()];
        let cfg = TrainConfig {
            dim: 4,
            epochs: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&other, vocabs, &cfg), Err(Error::NoLabels)));
    }

    #[test]
    fn empty_labels_rejected() {
        let ast = parse_minilang("x = 1;", "a").unwrap();
        let vocabs = Vocabularies::build(std::slice::from_ref(&ast), LabelMode::Subtree, 1).unwrap();
        let cfg = TrainConfig {
            dim: 4,
            epochs: 1,
            ..TrainConfig::default()
        };
        let (ckpt, _) = train(std::slice::from_ref(&ast), vocabs, &cfg).unwrap();
        assert!(example_loss(&ast, &[], &ckpt.encoder(), &ckpt.head).is_err());
    }
}
