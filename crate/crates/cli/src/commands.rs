use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use s2v_core::autodiff::Tensor;
use s2v_core::downstream::{
    adjusted_rand_index, clone_metrics, cosine_similarity, finetune, kmeans, mean_reciprocal_rank, search_entry,
    train_name_predictor, Classifier, ClassifierHead, EmbeddingIndex, IndexEntry,
};
use s2v_core::interpretability::{explain, render_heat, render_svg};
use s2v_core::synth::{synthetic_corpus, CLASS_NAMES};
use s2v_core::trainer::{load_checkpoint, save_checkpoint, train_with_progress, Checkpoint, Vocabularies};
use serde_json::json;

use crate::config::RunConfig;
use crate::corpus::{load_file, manifest_text, read_manifest, Corpus, Meta, DEFAULT_LANGUAGE};
use crate::{Cli, CliError, Command};

type Result<T> = std::result::Result<T, CliError>;

/// Collects the flags that mirror config keys, in order, so they can be
/// applied after the config file.
struct Overrides(Vec<(&'static str, String)>);

impl Overrides {
    fn new() -> Self {
        Overrides(Vec::new())
    }

    fn opt<T: ToString>(mut self, key: &'static str, value: &Option<T>) -> Self {
        if let Some(v) = value {
            self.0.push((key, v.to_string()));
        }
        self
    }

    fn apply(self, cfg: &mut RunConfig) -> Result<()> {
        for (k, v) in self.0 {
            cfg.set(k, &v)?;
        }
        Ok(())
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::data(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn read_index(path: &Path) -> Result<EmbeddingIndex> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    EmbeddingIndex::from_tsv(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn load_ckpt(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(path).map_err(|e| CliError::from(e).context(&path.display().to_string()))
}

fn classes_path(ckpt: &Path) -> PathBuf {
    let stem = ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    ckpt.with_file_name(format!("{stem}.classes.json"))
}

fn tensor_json(t: &Tensor) -> serde_json::Value {
    json!({ "shape": t.shape(), "data": t.data() })
}

fn tensor_from_json(v: &serde_json::Value, name: &str) -> Result<Tensor> {
    let bad = || CliError::data(format!("classifier file: bad tensor {name}"));
    let shape: Vec<usize> = serde_json::from_value(v.get("shape").cloned().ok_or_else(bad)?).map_err(|_| bad())?;
    let data: Vec<f64> = serde_json::from_value(v.get("data").cloned().ok_or_else(bad)?).map_err(|_| bad())?;
    Tensor::new(shape, data).map_err(|_| bad())
}

fn save_classifier(base: &Checkpoint, clf: &Classifier, classes: &[String], path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        encoder: clf.encoder.params.clone(),
        ..base.clone()
    };
    save_checkpoint(&ckpt, path)?;
    let doc = json!({
        "classes": classes,
        "w_cls": tensor_json(&clf.head.w_cls),
        "b_cls": tensor_json(&clf.head.b_cls),
    });
    let mut bytes = serde_json::to_vec(&doc).map_err(s2v_core::Error::from)?;
    bytes.push(b'\n');
    fs::write(classes_path(path), bytes)?;
    Ok(())
}

fn load_classifier(path: &Path) -> Result<(Classifier, Vec<String>)> {
    let ckpt = load_ckpt(path)?;
    let cpath = classes_path(path);
    let bytes = fs::read(&cpath).map_err(|e| CliError::data(format!("{}: {e}", cpath.display())))?;
    let doc: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| CliError::data(format!("{}: {e}", cpath.display())))?;
    let classes: Vec<String> = serde_json::from_value(doc["classes"].clone())
        .map_err(|_| CliError::data(format!("{}: missing class names", cpath.display())))?;
    let head = ClassifierHead {
        w_cls: tensor_from_json(&doc["w_cls"], "w_cls")?,
        b_cls: tensor_from_json(&doc["b_cls"], "b_cls")?,
    };
    if head.w_cls.shape() != [classes.len(), ckpt.config.dim] || head.b_cls.shape() != [classes.len()] {
        return Err(CliError::data(format!("{}: head shape does not match the checkpoint", cpath.display())));
    }
    Ok((
        Classifier {
            encoder: ckpt.encoder(),
            head,
        },
        classes,
    ))
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.global.jobs {
        if j == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    let mut cfg = RunConfig::load(cli.global.config.as_deref())?;
    cfg.apply_overrides(&cli.global.set)?;
    match cli.command {
        Command::Parse { files, out } => parse(&files, &out),
        Command::Vocab {
            corpus,
            min_count,
            label_mode,
            out,
        } => {
            Overrides::new().opt("min_count", &min_count).opt("label_mode", &label_mode).apply(&mut cfg)?;
            vocab(&cfg, &corpus, out.as_deref())
        }
        Command::Pretrain {
            corpus,
            out,
            epochs,
            seed,
            dim,
            batch_size,
            init_mode,
            label_mode,
            deterministic,
        } => {
            Overrides::new()
                .opt("epochs", &epochs)
                .opt("seed", &seed)
                .opt("dim", &dim)
                .opt("batch_size", &batch_size)
                .opt("init_mode", &init_mode)
                .opt("label_mode", &label_mode)
                .opt("deterministic", &deterministic.then_some(true))
                .apply(&mut cfg)?;
            pretrain(&cfg, &corpus, &out)
        }
        Command::Embed { corpus, ckpt, out } => embed(&corpus, &ckpt, out.as_deref()),
        Command::Cluster {
            embeddings,
            k,
            seed,
            max_iters,
            truth,
        } => {
            Overrides::new().opt("k", &k).opt("seed", &seed).opt("max_iters", &max_iters).apply(&mut cfg)?;
            cluster(&cfg, &embeddings, truth.as_deref())
        }
        Command::Clone {
            embeddings,
            threshold,
            truth,
        } => {
            Overrides::new().opt("threshold", &threshold).apply(&mut cfg)?;
            clone(&cfg, &embeddings, truth.as_deref())
        }
        Command::Search {
            embeddings,
            query,
            k,
            exclude_lang,
        } => search(&embeddings, query.as_deref(), k, exclude_lang.as_deref()),
        Command::Finetune {
            corpus,
            ckpt,
            fraction,
            init,
            seed,
            epochs,
            out,
        } => {
            Overrides::new()
                .opt("fraction", &fraction)
                .opt("finetune_init", &init)
                .opt("seed", &seed)
                .opt("finetune_epochs", &epochs)
                .apply(&mut cfg)?;
            run_finetune(&cfg, &corpus, &ckpt, out.as_deref())
        }
        Command::Name {
            corpus,
            ckpt,
            seed,
            epochs,
        } => {
            Overrides::new().opt("seed", &seed).opt("finetune_epochs", &epochs).apply(&mut cfg)?;
            name(&cfg, &corpus, &ckpt)
        }
        Command::Explain {
            file,
            ckpt,
            class,
            svg,
            heat,
        } => run_explain(&file, &ckpt, &class, svg.as_deref(), heat.as_deref()),
        Command::Synth { out, per_class, seed } => synth(&out, per_class, seed),
    }
}

fn parse(files: &[PathBuf], out: &Path) -> Result<()> {
    if files.is_empty() {
        return Err(CliError::usage("no input files"));
    }
    fs::create_dir_all(out)?;
    for f in files {
        let snippet = load_file(f)?;
        let id = snippet.ast.source_id().to_string();
        let dest = out.join(format!("{id}.json"));
        fs::write(&dest, snippet.ast.to_json())?;
        println!("{id}\t{}\t{}", snippet.ast.len(), dest.display());
    }
    Ok(())
}

fn vocab(cfg: &RunConfig, corpus: &Path, out: Option<&Path>) -> Result<()> {
    let corpus = Corpus::load(corpus)?;
    let v = Vocabularies::build(&corpus.asts(), cfg.train.label_mode, cfg.train.min_count)?;
    eprintln!(
        "{} labels, {} tokens, {} types",
        v.labels.len(),
        v.tokens.len(),
        v.types.len()
    );
    write_out(out, &v.labels.to_tsv())
}

fn pretrain(cfg: &RunConfig, corpus: &Path, out: &Path) -> Result<()> {
    let corpus = Corpus::load(corpus)?;
    let asts = corpus.asts();
    let t = &cfg.train;
    let vocabs = Vocabularies::build(&asts, t.label_mode, t.min_count)?;
    println!(
        "# pretrain snippets={} labels={} dim={} epochs={} batch_size={} seed={} init_mode={} label_mode={:?}",
        asts.len(),
        vocabs.labels.len(),
        t.dim,
        t.epochs,
        t.batch_size,
        t.seed,
        t.init_mode,
        t.label_mode
    );
    println!("epoch\tmean_loss");
    let (ckpt, report) = train_with_progress(&asts, vocabs, t, |epoch, loss| println!("{epoch}\t{loss:.6}"))?;
    if report.skipped > 0 {
        eprintln!("skipped {} snippets without in-vocabulary labels", report.skipped);
    }
    save_checkpoint(&ckpt, out)?;
    println!("# checkpoint {} steps={} final_loss={:.6}", out.display(), ckpt.step, ckpt.final_loss);
    Ok(())
}

fn embed(corpus: &Path, ckpt: &Path, out: Option<&Path>) -> Result<()> {
    let corpus = Corpus::load(corpus)?;
    let encoder = load_ckpt(ckpt)?.encoder();
    let mut index = EmbeddingIndex::new(encoder.params.dim);
    for s in &corpus.snippets {
        let id = s.ast.source_id().to_string();
        let meta = corpus.meta(&id);
        index.push(IndexEntry {
            vector: encoder.encode(&s.ast)?.code.values,
            source_id: id,
            language: meta.language.unwrap_or_else(|| DEFAULT_LANGUAGE.into()),
            task_id: meta.task_id,
        })?;
    }
    write_out(out, &index.to_tsv())
}

/// True labels of the index entries, from a manifest.
fn truth_labels(index: &EmbeddingIndex, truth: &Path) -> Result<Vec<String>> {
    let manifest = read_manifest(truth)?;
    index
        .entries()
        .iter()
        .map(|e| {
            manifest
                .get(&e.source_id)
                .and_then(|m| m.label.clone())
                .ok_or_else(|| CliError::data(format!("{} has no label in {}", e.source_id, truth.display())))
        })
        .collect()
}

fn cluster(cfg: &RunConfig, embeddings: &Path, truth: Option<&Path>) -> Result<()> {
    let index = read_index(embeddings)?;
    let km = kmeans(&index.vectors(), cfg.k, cfg.train.seed, cfg.max_iters)?;
    println!(
        "# kmeans k={} seed={} iterations={} inertia={:.6}",
        cfg.k, cfg.train.seed, km.iterations, km.inertia
    );
    for (e, c) in index.entries().iter().zip(&km.assignment) {
        println!("{}\t{c}", e.source_id);
    }
    if let Some(t) = truth {
        let labels = truth_labels(&index, t)?;
        println!("# ari\t{:.6}", adjusted_rand_index(&km.assignment, &labels)?);
    }
    Ok(())
}

fn clone(cfg: &RunConfig, embeddings: &Path, truth: Option<&Path>) -> Result<()> {
    let index = read_index(embeddings)?;
    let labels = truth.map(|t| truth_labels(&index, t)).transpose()?;
    let entries = index.entries();
    println!("# clone threshold={}", cfg.threshold);
    println!("a\tb\tcosine\tclone");
    let mut pairs = Vec::new();
    for i in 0..entries.len() {
        for j in i + 1..entries.len() {
            let s = cosine_similarity(&entries[i].vector, &entries[j].vector)?;
            let predicted = s >= cfg.threshold;
            println!("{}\t{}\t{s:.6}\t{}", entries[i].source_id, entries[j].source_id, u8::from(predicted));
            if let Some(l) = &labels {
                pairs.push((predicted, l[i] == l[j]));
            }
        }
    }
    if labels.is_some() {
        let m = clone_metrics(&pairs);
        println!("# precision\t{:.6}\trecall\t{:.6}\tf1\t{:.6}", m.precision, m.recall, m.f1);
    }
    Ok(())
}

fn search(embeddings: &Path, query: Option<&Path>, k: usize, exclude: Option<&str>) -> Result<()> {
    let index = read_index(embeddings)?;
    let entries = index.entries();
    let positions: Vec<usize> = match query {
        None => (0..entries.len()).collect(),
        Some(q) => {
            let text = fs::read_to_string(q).map_err(|e| CliError::data(format!("{}: {e}", q.display())))?;
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(|id| {
                    entries
                        .iter()
                        .position(|e| e.source_id == id)
                        .ok_or_else(|| CliError::data(format!("query {id} is not in the index")))
                })
                .collect::<Result<_>>()?
        }
    };
    println!("# search k={k} exclude_lang={}", exclude.unwrap_or("-"));
    println!("query\trank\tsource_id\tcosine");
    let mut mrr_queries = Vec::new();
    for &pos in &positions {
        let q = &entries[pos];
        let hits = search_entry(&index, pos, k, exclude)?;
        for (r, h) in hits.iter().enumerate() {
            println!("{}\t{}\t{}\t{:.6}", q.source_id, r + 1, h.source_id, h.score);
        }
        let Some(task) = &q.task_id else { continue };
        // The relevant result is the best-ranked candidate sharing the task.
        let ranked: Vec<String> = search_entry(&index, pos, entries.len(), exclude)?
            .into_iter()
            .map(|h| h.source_id)
            .collect();
        let relevant = ranked
            .iter()
            .find(|id| entries.iter().any(|e| &e.source_id == *id && e.task_id.as_ref() == Some(task)));
        if let Some(rel) = relevant {
            let top: Vec<String> = ranked.iter().take(k).cloned().collect();
            mrr_queries.push((top, rel.clone()));
        }
    }
    if !mrr_queries.is_empty() {
        println!("# mrr\t{:.6}\tqueries\t{}", mean_reciprocal_rank(&mrr_queries), mrr_queries.len());
    }
    Ok(())
}

fn run_finetune(cfg: &RunConfig, corpus: &Path, ckpt_path: &Path, out: Option<&Path>) -> Result<()> {
    let corpus = Corpus::load(corpus)?;
    let (classes, labeled) = corpus.labeled()?;
    let ckpt = load_ckpt(ckpt_path)?;
    let fc = cfg.finetune_config();
    let (clf, report) = finetune(&ckpt, &labeled, &fc)?;
    println!(
        "# finetune init={} fraction={} seed={} epochs={} classes={}",
        fc.init,
        fc.fraction,
        fc.train.seed,
        fc.train.epochs,
        classes.join(",")
    );
    println!("epoch\tmean_loss");
    for (e, l) in report.epoch_losses.iter().enumerate() {
        println!("{e}\t{l:.6}");
    }
    println!("train_size\t{}", report.train_size);
    println!("test_size\t{}", report.test_size);
    println!("accuracy\t{:.6}", report.accuracy);
    if let Some(p) = out {
        save_classifier(&ckpt, &clf, &classes, p)?;
        println!("# classifier {}", p.display());
    }
    Ok(())
}

fn name(cfg: &RunConfig, corpus: &Path, ckpt: &Path) -> Result<()> {
    let corpus = Corpus::load(corpus)?;
    let ckpt = load_ckpt(ckpt)?;
    let fc = cfg.finetune_config();
    let (_, _, report) = train_name_predictor(&ckpt, &corpus.asts(), &fc)?;
    println!(
        "# name init={} seed={} train={} test={}",
        report.init, fc.train.seed, report.train_size, report.test_size
    );
    println!("source_id\ttruth\tpredicted\tprecision\trecall\tf1");
    for p in &report.predictions {
        println!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            p.source_id, p.truth, p.predicted, p.scores.precision, p.scores.recall, p.scores.f1
        );
    }
    let m = report.micro;
    println!("# micro\tprecision\t{:.6}\trecall\t{:.6}\tf1\t{:.6}", m.precision, m.recall, m.f1);
    Ok(())
}

fn run_explain(file: &Path, ckpt: &Path, class: &str, svg: Option<&Path>, heat: Option<&Path>) -> Result<()> {
    let (clf, classes) = load_classifier(ckpt)?;
    let class_idx = match classes.iter().position(|c| c == class) {
        Some(i) => i,
        None => class
            .parse::<usize>()
            .ok()
            .filter(|&i| i < classes.len())
            .ok_or_else(|| CliError::usage(format!("unknown class {class:?}; known: {}", classes.join(", "))))?,
    };
    let snippet = load_file(file)?;
    let report = explain(&clf, &snippet.ast, class_idx)?;
    println!("{}", report.to_json());
    if let Some(p) = heat {
        let text = render_heat(&snippet.ast, &report.display_scores, snippet.source.as_deref())?;
        fs::write(p, text)?;
    }
    if let Some(p) = svg {
        fs::write(p, render_svg(&snippet.ast, &report.display_scores)?)?;
    }
    Ok(())
}

fn synth(out: &Path, per_class: usize, seed: u64) -> Result<()> {
    if per_class == 0 {
        return Err(CliError::usage("--per-class must be at least 1"));
    }
    fs::create_dir_all(out)?;
    let programs = synthetic_corpus(per_class, seed);
    let mut rows = Vec::with_capacity(programs.len());
    for p in &programs {
        fs::write(out.join(format!("{}.ml", p.source_id)), &p.source)?;
        rows.push((
            p.source_id.clone(),
            Meta {
                label: Some(CLASS_NAMES[p.class].to_string()),
                language: Some(DEFAULT_LANGUAGE.to_string()),
                task_id: None,
            },
        ));
    }
    fs::write(out.join(crate::corpus::MANIFEST), manifest_text(&rows))?;
    println!("# synth per_class={per_class} seed={seed} programs={}", programs.len());
    Ok(())
}
