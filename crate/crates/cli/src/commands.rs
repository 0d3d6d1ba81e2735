//! Implementations of the pipeline subcommands.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;

use lmm::corpus::{self, ClickRecord, CrossCovariance, TermVector, Vocabulary};
use lmm::eval;
use lmm::knowledge::{self, KnowledgePair, SynonymPair, TagTermPair};
use lmm::scorer::{self, Collection, Model, RankedList, ScoreMode};
use lmm::trainer::{self, TrainConfig};

use crate::args::{
    BuildCorpusArgs, Cli, Command, EvaluateArgs, MineSynonymsArgs, MineTagsArgs, RankArgs,
    TrainArgs,
};
use crate::manifest::Manifest;

/// Routes a parsed command line to its subcommand.
pub fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    let manifest = cli.manifest.as_deref();
    match &cli.command {
        Command::BuildCorpus(a) => build_corpus(a, manifest),
        Command::MineSynonyms(a) => mine_synonyms(a, manifest),
        Command::MineTags(a) => mine_tags(a, manifest),
        Command::Train(a) => train(a, manifest),
        Command::Rank(a) => rank(a, manifest),
        Command::Evaluate(a) => evaluate(a, manifest),
    }
}

// ---------------------------------------------------------------------------
// build-corpus
// ---------------------------------------------------------------------------

fn build_corpus(args: &BuildCorpusArgs, manifest: Option<&Path>) -> anyhow::Result<()> {
    let records = load_clicks(&args.clicks)?;
    let vocab = corpus::build_vocabulary(&records, args.min_count)?;
    let idf = corpus::compute_idf(&records, &vocab);
    let cc = corpus::covariance_from_records(&records, &vocab, &idf)?;
    vocab.save(&args.vocab_out)?;
    cc.save(&args.covariance_out)?;
    if let Some(path) = &args.idf_out {
        corpus::write_idf(path, &vocab, &idf)?;
    }
    log::info!(
        "built vocabulary of {} terms and a {}x{} covariance with {} nonzeros from {} pairs",
        vocab.len(),
        cc.rows(),
        cc.cols(),
        cc.nnz(),
        cc.n()
    );
    if let Some(path) = manifest {
        let mut m = Manifest::new("build-corpus", args)?;
        m.input("clicks", &args.clicks)
            .output("vocabulary", &args.vocab_out)
            .output("covariance", &args.covariance_out);
        if let Some(p) = &args.idf_out {
            m.output("idf", p);
        }
        m.write(path)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// mine-synonyms
// ---------------------------------------------------------------------------

fn mine_synonyms(args: &MineSynonymsArgs, manifest: Option<&Path>) -> anyhow::Result<()> {
    let records = load_clicks(&args.clicks)?;
    let graph = knowledge::ClickGraph::from_records(&records);
    let pairs = knowledge::mine_synonyms(&graph, args.top_k, args.weight_scale);
    if pairs.is_empty() {
        log::warn!("no synonym pairs shared a click context; writing an empty file");
    }
    knowledge::write_synonyms(&args.out, &pairs)?;
    log::info!("mined {} synonym pairs into {}", pairs.len(), args.out.display());
    if let Some(path) = manifest {
        let mut m = Manifest::new("mine-synonyms", args)?;
        m.input("clicks", &args.clicks).output("synonyms", &args.out);
        m.write(path)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// mine-tags
// ---------------------------------------------------------------------------

fn mine_tags(args: &MineTagsArgs, manifest: Option<&Path>) -> anyhow::Result<()> {
    let records = load_clicks(&args.clicks)?;
    let vocab = corpus::build_vocabulary(&records, args.min_count)?;
    let idf = corpus::compute_idf(&records, &vocab);
    let (assignments, bad_lines) = knowledge::read_tag_assignments(&args.tags)?;
    if bad_lines > 0 {
        log::warn!("skipped {bad_lines} malformed tag-assignment lines");
    }

    // One vector per distinct clicked document (titles repeat across records).
    let mut doc_vectors: HashMap<&str, TermVector> = HashMap::new();
    for r in &records {
        doc_vectors
            .entry(r.doc_id.as_str())
            .or_insert_with(|| corpus::vectorize_document(&r.doc_title, &vocab, &idf));
    }
    let mut tagged: BTreeMap<String, Vec<&TermVector>> = BTreeMap::new();
    let mut unknown_docs = 0usize;
    for (doc_id, tags) in &assignments {
        match doc_vectors.get(doc_id.as_str()) {
            Some(v) => {
                for tag in tags {
                    tagged.entry(tag.clone()).or_default().push(v);
                }
            }
            None => unknown_docs += 1,
        }
    }
    if unknown_docs > 0 {
        log::warn!("skipped {unknown_docs} tagged documents absent from the click log");
    }

    let (pairs, empty_tags) = knowledge::mine_tag_terms(&tagged, &vocab, args.top_k);
    if empty_tags > 0 {
        log::warn!("{empty_tags} tags had no in-vocabulary title terms");
    }
    knowledge::write_tag_terms(&args.out, &pairs)?;
    log::info!(
        "mined {} tag-term pairs over {} tags into {}",
        pairs.len(),
        tagged.len(),
        args.out.display()
    );
    if let Some(path) = manifest {
        let mut m = Manifest::new("mine-tags", args)?;
        m.input("clicks", &args.clicks)
            .input("tags", &args.tags)
            .output("tag_terms", &args.out);
        m.write(path)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn train(args: &TrainArgs, manifest: Option<&Path>) -> anyhow::Result<()> {
    // Knowledge inputs are read first so tag pseudo-terms can size the vocabulary.
    let syn_pairs: Option<Vec<SynonymPair>> =
        args.synonyms.as_ref().map(|p| knowledge::read_synonyms(p)).transpose()?;
    let tag_pairs: Option<Vec<TagTermPair>> =
        args.tag_terms.as_ref().map(|p| knowledge::read_tag_terms(p)).transpose()?;

    // A warm start supplies learned mappings plus the vocabulary they are
    // row-aligned with; every later id must extend that vocabulary.
    let warm = match &args.warm_start {
        Some(path) => {
            let (maps, stored) = trainer::read_model(path)?;
            let vocab_path = stored_vocab_path(path, &stored);
            let vocab = Vocabulary::load(&vocab_path).with_context(|| {
                format!("loading warm-start vocabulary {}", vocab_path.display())
            })?;
            if maps.dx() != vocab.len() || maps.dy() != vocab.len() {
                return Err(lmm::Error::DimensionMismatch(format!(
                    "warm-start model maps {}x{} terms but its vocabulary has {}",
                    maps.dx(),
                    maps.dy(),
                    vocab.len()
                ))
                .into());
            }
            Some((maps, vocab))
        }
        None => None,
    };

    let (vocab, cc) = if let Some(cov_path) = &args.covariance {
        let vocab_path = args.vocab.as_ref().expect("clap enforces --vocab with --covariance");
        let vocab = Vocabulary::load(vocab_path)?;
        let cc = CrossCovariance::load(cov_path)?;
        if cc.rows() != vocab.len() || cc.cols() != vocab.len() {
            return Err(lmm::Error::DimensionMismatch(format!(
                "covariance is {}x{} but the vocabulary has {} terms",
                cc.rows(),
                cc.cols(),
                vocab.len()
            ))
            .into());
        }
        if let Some((_, wv)) = &warm {
            ensure_vocab_prefix(wv, &vocab)?;
        }
        (vocab, cc)
    } else {
        let clicks = args.clicks.as_ref().expect("clap enforces --clicks or --covariance");
        let records = load_clicks(clicks)?;
        let corpus_vocab = corpus::build_vocabulary(&records, args.min_count)?;
        let mut vocab = match &warm {
            Some((_, wv)) => wv.extended(corpus_vocab.terms().iter().cloned()),
            None => corpus_vocab,
        };
        if let Some(pairs) = &tag_pairs {
            let pseudo: BTreeSet<String> =
                pairs.iter().map(|p| knowledge::tag_vocab_term(&p.tag)).collect();
            vocab = vocab.extended(pseudo);
        }
        let idf = corpus::compute_idf(&records, &vocab);
        let cc = corpus::covariance_from_records(&records, &vocab, &idf)?;
        (vocab, cc)
    };

    // Hyperparameters: config file under flag overrides, d resolved from
    // --dim, then the config file, then the warm-start model.
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::new(1),
    };
    let d = args
        .dim
        .or_else(|| args.config.as_ref().map(|_| cfg.d))
        .or_else(|| warm.as_ref().map(|(m, _)| m.latent_dim()));
    let Some(d) = d else {
        return Err(lmm::Error::InvalidArgument(
            "latent dimension is required: pass --dim, a --config file with d=, or --warm-start"
                .into(),
        )
        .into());
    };
    cfg.d = d;
    if let Some(v) = args.theta2 {
        cfg.theta2 = v;
    }
    if let Some(v) = args.lambda2 {
        cfg.lambda2 = v;
    }
    if let Some(v) = args.rho2 {
        cfg.rho2 = v;
    }
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.beta {
        cfg.beta = v;
    }
    if let Some(v) = args.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = args.max_iters {
        cfg.max_iters = v;
    }
    if let Some(v) = args.tol {
        cfg.tol = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(m) = &args.method {
        cfg.method = m.parse()?;
    }

    let rx = match &syn_pairs {
        Some(pairs) => {
            if cfg.alpha == 0.0 {
                log::warn!("--synonyms given but alpha is 0; the pairs will not affect training");
            }
            let kp: Vec<KnowledgePair> =
                pairs.iter().map(SynonymPair::to_knowledge_pair).collect();
            let (m, dropped) = knowledge::build_knowledge_matrix(&kp, &vocab)?;
            if dropped > 0 {
                log::warn!("dropped {dropped} synonym pairs with out-of-vocabulary terms");
            }
            Some(m)
        }
        None => None,
    };
    let ry = match &tag_pairs {
        Some(pairs) => {
            if cfg.beta == 0.0 {
                log::warn!("--tag-terms given but beta is 0; the pairs will not affect training");
            }
            let kp: Vec<KnowledgePair> =
                pairs.iter().map(TagTermPair::to_knowledge_pair).collect();
            let (m, dropped) = knowledge::build_knowledge_matrix(&kp, &vocab)?;
            if dropped > 0 {
                log::warn!("dropped {dropped} tag-term pairs with out-of-vocabulary members");
            }
            Some(m)
        }
        None => None,
    };

    let warm_maps = match warm {
        Some((maps, wv)) => {
            if maps.latent_dim() != cfg.d {
                return Err(lmm::Error::InvalidArgument(format!(
                    "warm-start model has latent dimension {} but {} was requested",
                    maps.latent_dim(),
                    cfg.d
                ))
                .into());
            }
            Some(if wv.len() < vocab.len() {
                trainer::extend_mappings(&maps, vocab.len(), vocab.len(), cfg.seed)?
            } else {
                maps
            })
        }
        None => None,
    };

    let (maps, report) = trainer::train(&cc, rx.as_ref(), ry.as_ref(), &cfg, warm_maps.as_ref())?;

    let vocab_out =
        args.vocab_out.clone().unwrap_or_else(|| args.out.with_extension("vocab.txt"));
    let trace_out =
        args.trace_out.clone().unwrap_or_else(|| args.out.with_extension("trace.csv"));
    vocab.save(&vocab_out)?;
    trainer::write_model(&args.out, &maps, &model_vocab_reference(&args.out, &vocab_out))?;
    write_trace(&trace_out, &report.objective_trace)?;
    let final_objective = report.objective_trace.last().copied().unwrap_or(f64::NAN);
    log::info!(
        "trained {} iterations at {:.3}s/iter (converged: {}); final objective {final_objective:.6}",
        report.iterations,
        report.wall_clock_per_iter,
        report.converged
    );
    log::info!("wrote model {} with vocabulary {}", args.out.display(), vocab_out.display());

    if let Some(path) = manifest {
        let mut m = Manifest::new("train", &(args, resolved_config(&cfg)))?;
        m.input_opt("clicks", args.clicks.as_deref())
            .input_opt("covariance", args.covariance.as_deref())
            .input_opt("vocabulary", args.vocab.as_deref())
            .input_opt("synonyms", args.synonyms.as_deref())
            .input_opt("tag_terms", args.tag_terms.as_deref())
            .input_opt("warm_start", args.warm_start.as_deref())
            .input_opt("config", args.config.as_deref())
            .output("model", &args.out)
            .output("vocabulary", &vocab_out)
            .output("trace", &trace_out);
        m.write(path)?;
    }
    Ok(())
}

/// Flattens the effective hyperparameters for manifest hashing.
fn resolved_config(cfg: &TrainConfig) -> BTreeMap<&'static str, String> {
    BTreeMap::from([
        ("d", cfg.d.to_string()),
        ("theta2", cfg.theta2.to_string()),
        ("lambda2", cfg.lambda2.to_string()),
        ("rho2", cfg.rho2.to_string()),
        ("alpha", cfg.alpha.to_string()),
        ("beta", cfg.beta.to_string()),
        ("gamma", cfg.gamma.to_string()),
        ("max_iters", cfg.max_iters.to_string()),
        ("tol", cfg.tol.to_string()),
        ("seed", cfg.seed.to_string()),
        ("method", cfg.method.to_string()),
    ])
}

// ---------------------------------------------------------------------------
// rank
// ---------------------------------------------------------------------------

fn rank(args: &RankArgs, manifest: Option<&Path>) -> anyhow::Result<()> {
    let mode: ScoreMode = args.mode.parse()?;
    let model = Model::load(&args.model, args.vocab.as_deref())?;
    let entries = scorer::read_collection(&args.collection)?;
    let collection = Collection::build(&entries, model.vocab(), None)?;
    let queries = read_query_lines(&args.queries)?;
    let lists: Vec<RankedList> = queries
        .iter()
        .map(|q| scorer::rank_top_k(&model, q, &collection, args.k, mode))
        .collect::<lmm::Result<_>>()?;
    scorer::write_rankings(&args.out, &lists)?;
    log::info!(
        "ranked {} queries over {} documents into {}",
        lists.len(),
        collection.len(),
        args.out.display()
    );
    if let Some(path) = manifest {
        let mut m = Manifest::new("rank", args)?;
        m.input("model", &args.model)
            .input("collection", &args.collection)
            .input("queries", &args.queries)
            .input_opt("vocabulary", args.vocab.as_deref())
            .output("rankings", &args.out);
        m.write(path)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

fn evaluate(args: &EvaluateArgs, manifest: Option<&Path>) -> anyhow::Result<()> {
    if args.cutoffs.contains(&0) {
        return Err(lmm::Error::InvalidArgument("cutoffs must be positive".into()).into());
    }
    let judgments = eval::read_judgments(&args.judgments)?;
    let rankings = match &args.run {
        Some(path) => scorer::read_rankings(path)?,
        None => {
            let mode: ScoreMode = args.mode.as_deref().unwrap_or("combined").parse()?;
            let model_path = args.model.as_ref().expect("clap enforces --run or --model");
            let cand_path = args.candidates.as_ref().expect("clap enforces --candidates");
            let model = Model::load(model_path, args.vocab.as_deref())?;
            let groups = read_candidates(cand_path)?;
            groups
                .iter()
                .map(|(query, entries)| {
                    let collection = Collection::build(entries, model.vocab(), None)?;
                    let k = args.k.unwrap_or(entries.len());
                    scorer::rank_top_k(&model, query, &collection, k, mode)
                })
                .collect::<lmm::Result<Vec<_>>>()?
        }
    };
    let frequencies = match (&args.clicks, &args.frequencies) {
        (Some(path), _) => {
            let records = load_clicks(path)?;
            Some(eval::query_frequencies_from_clicks(&records))
        }
        (None, Some(path)) => Some(eval::read_frequencies(path)?),
        (None, None) => None,
    };
    let (report, _excluded) =
        eval::evaluate_run(&rankings, &judgments, frequencies.as_ref(), &args.cutoffs);
    print!("{}", report.text_table());
    if let Some(path) = &args.csv_out {
        fs::write(path, report.to_csv())
            .with_context(|| format!("writing report CSV {}", path.display()))?;
        log::info!("wrote report CSV {}", path.display());
    }
    if let Some(path) = manifest {
        let mut m = Manifest::new("evaluate", args)?;
        m.input("judgments", &args.judgments)
            .input_opt("run", args.run.as_deref())
            .input_opt("model", args.model.as_deref())
            .input_opt("candidates", args.candidates.as_deref())
            .input_opt("vocabulary", args.vocab.as_deref())
            .input_opt("clicks", args.clicks.as_deref())
            .input_opt("frequencies", args.frequencies.as_deref());
        if let Some(p) = &args.csv_out {
            m.output("report_csv", p);
        }
        m.write(path)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Reads a click log and logs what was kept and dropped.
fn load_clicks(path: &Path) -> anyhow::Result<Vec<ClickRecord>> {
    let (records, stats) = corpus::read_click_log(path)?;
    log::info!(
        "read {} click records from {} ({} malformed, {} zero-click lines skipped)",
        records.len(),
        path.display(),
        stats.malformed,
        stats.zero_click
    );
    Ok(records)
}

/// Resolves the vocabulary path stored inside a model file.
fn stored_vocab_path(model_path: &Path, stored: &str) -> PathBuf {
    let as_is = PathBuf::from(stored);
    if as_is.exists() {
        return as_is;
    }
    match model_path.parent() {
        Some(dir) => dir.join(stored),
        None => as_is,
    }
}

/// Picks the vocabulary reference written into a model: just the file name
/// when the two files share a directory (keeping the pair relocatable).
fn model_vocab_reference(model_out: &Path, vocab_out: &Path) -> String {
    if model_out.parent() == vocab_out.parent() {
        if let Some(name) = vocab_out.file_name() {
            return name.to_string_lossy().into_owned();
        }
    }
    vocab_out.display().to_string()
}

/// Errors unless `prefix` is an id-aligned prefix of `vocab`.
fn ensure_vocab_prefix(prefix: &Vocabulary, vocab: &Vocabulary) -> anyhow::Result<()> {
    let ok = prefix.len() <= vocab.len()
        && prefix.terms().iter().zip(vocab.terms()).all(|(a, b)| a == b);
    if !ok {
        return Err(lmm::Error::DimensionMismatch(
            "the warm-start vocabulary is not a prefix of the training vocabulary; \
             term ids would be misaligned"
                .into(),
        )
        .into());
    }
    Ok(())
}

/// Writes the objective trace as `iteration,objective` CSV (row 0 is the start).
fn write_trace(path: &Path, trace: &[f64]) -> anyhow::Result<()> {
    let mut w = BufWriter::new(
        File::create(path).with_context(|| format!("creating trace {}", path.display()))?,
    );
    writeln!(w, "iteration,objective")?;
    for (i, objective) in trace.iter().enumerate() {
        writeln!(w, "{i},{objective}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads non-empty query lines.
fn read_query_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading queries {}", path.display()))?;
    let queries: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if queries.is_empty() {
        return Err(lmm::Error::EmptyCorpus(format!("no queries in {}", path.display())).into());
    }
    Ok(queries)
}

/// Candidate documents `(doc_id, title)` grouped under one query.
type CandidateGroup = (String, Vec<(String, String)>);

/// Reads a `query<TAB>doc_id<TAB>doc_title` candidate pool grouped per query
/// in first-appearance order.
fn read_candidates(path: &Path) -> anyhow::Result<Vec<CandidateGroup>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading candidates {}", path.display()))?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(String, String)>> = HashMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(lmm::Error::parse(
                path,
                i + 1,
                "expected query<TAB>doc_id<TAB>doc_title",
            )
            .into());
        }
        let (query, doc_id, title) = (fields[0], fields[1], fields[2]);
        if !seen.insert((query.to_string(), doc_id.to_string())) {
            return Err(lmm::Error::parse(
                path,
                i + 1,
                format!("duplicate candidate {doc_id:?} for query {query:?}"),
            )
            .into());
        }
        if !groups.contains_key(query) {
            order.push(query.to_string());
        }
        groups
            .entry(query.to_string())
            .or_default()
            .push((doc_id.to_string(), title.to_string()));
    }
    if order.is_empty() {
        return Err(
            lmm::Error::EmptyCorpus(format!("no candidates in {}", path.display())).into()
        );
    }
    Ok(order
        .into_iter()
        .map(|q| {
            let entries = groups.remove(&q).expect("grouped above");
            (q, entries)
        })
        .collect())
}
