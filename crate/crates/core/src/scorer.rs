//! Scoring and ranking: latent matching scores, combined IR scores that add
//! the exact-term dot product, an Okapi BM25 baseline, and deterministic
//! top-k ranking over a document collection.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;

use crate::corpus::{idf_from_titles, vectorize_document, vectorize_query, TermVector, Vocabulary};
use crate::error::{Error, Result};
use crate::trainer::{read_model, MappingPair};

/// Default BM25 term-frequency saturation parameter.
pub const BM25_K1_DEFAULT: f64 = 1.2;

/// Default BM25 length-normalization parameter.
pub const BM25_B_DEFAULT: f64 = 0.75;

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Trained mapping pair bundled with the vocabulary it was fit on.
#[derive(Debug, Clone)]
pub struct Model {
    mappings: MappingPair,
    vocab: Vocabulary,
}

impl Model {
    /// Bundles mappings and vocabulary, checking that both sides agree on size.
    pub fn new(mappings: MappingPair, vocab: Vocabulary) -> Result<Self> {
        if mappings.dx() != vocab.len() || mappings.dy() != vocab.len() {
            return Err(Error::DimensionMismatch(format!(
                "mappings cover {}x{} terms but the vocabulary has {}",
                mappings.dx(),
                mappings.dy(),
                vocab.len()
            )));
        }
        Ok(Model { mappings, vocab })
    }

    /// Loads a model file and its vocabulary.
    ///
    /// The vocabulary path stored in the model is tried as given, then
    /// relative to the model's directory; `vocab_override` bypasses both.
    pub fn load(path: &Path, vocab_override: Option<&Path>) -> Result<Self> {
        let (mappings, stored) = read_model(path)?;
        let vocab_path = match vocab_override {
            Some(p) => p.to_path_buf(),
            None => {
                let as_is = PathBuf::from(&stored);
                if as_is.exists() {
                    as_is
                } else {
                    match path.parent() {
                        Some(dir) => dir.join(&stored),
                        None => as_is,
                    }
                }
            }
        };
        let vocab = Vocabulary::load(&vocab_path)?;
        Model::new(mappings, vocab)
    }

    /// The mapping pair.
    pub fn mappings(&self) -> &MappingPair {
        &self.mappings
    }

    /// The shared vocabulary.
    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Latent dimensionality d.
    pub fn latent_dim(&self) -> usize {
        self.mappings.latent_dim()
    }
}

// ---------------------------------------------------------------------------
// Matching scores
// ---------------------------------------------------------------------------

/// Projects a sparse term vector into the latent space: map' * v.
fn project(map: &Array2<f64>, v: &TermVector) -> Vec<f64> {
    assert_eq!(v.dim(), map.nrows(), "vector built from a different vocabulary");
    let d = map.ncols();
    let mut out = vec![0.0; d];
    for &(id, w) in v.entries() {
        let row = map.row(id as usize);
        let row = row.as_slice().expect("mapping rows are contiguous");
        for (acc, m) in out.iter_mut().zip(row) {
            *acc += w * m;
        }
    }
    out
}

/// Latent matching score: the inner product of the two projected vectors.
pub fn latent_match(model: &Model, x: &TermVector, y: &TermVector) -> f64 {
    let px = project(model.mappings.x_map(), x);
    let py = project(model.mappings.y_map(), y);
    px.iter().zip(&py).map(|(a, b)| a * b).sum()
}

/// Combined IR score: the latent score plus the exact-term dot product.
pub fn score_ir(model: &Model, x: &TermVector, y: &TermVector) -> f64 {
    latent_match(model, x, y) + x.dot(y)
}

// ---------------------------------------------------------------------------
// BM25 baseline
// ---------------------------------------------------------------------------

/// Collection-level statistics needed by BM25.
#[derive(Debug, Clone)]
pub struct CollectionStats {
    doc_count: usize,
    avg_len: f64,
    df: Vec<u32>,
}

impl CollectionStats {
    /// Number of documents.
    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    /// Mean in-vocabulary document length.
    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    /// Number of documents containing the term.
    pub fn df(&self, id: u32) -> u32 {
        self.df[id as usize]
    }
}

/// Okapi BM25 score of a raw term-frequency document against a query.
///
/// Each distinct query term t contributes idf_t * tf_t*(k1+1) /
/// (tf_t + k1*(1-b+b*len/avg_len)) with idf_t = ln((N-df+0.5)/(df+0.5)+1);
/// document length is the in-vocabulary token count.
pub fn bm25_score(
    stats: &CollectionStats,
    query: &TermVector,
    doc_tf: &TermVector,
    k1: f64,
    b: f64,
) -> f64 {
    let n = stats.doc_count as f64;
    let len = doc_tf.total_weight();
    let norm = if stats.avg_len > 0.0 {
        1.0 - b + b * len / stats.avg_len
    } else {
        1.0
    };
    let mut score = 0.0;
    for &(id, _) in query.entries() {
        let tf = doc_tf.get(id);
        if tf <= 0.0 {
            continue;
        }
        let df = stats.df[id as usize] as f64;
        let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
        score += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
    }
    score
}

// ---------------------------------------------------------------------------
// Collections and ranking
// ---------------------------------------------------------------------------

/// One document: id plus raw term-frequency and tf-idf vectorizations.
#[derive(Debug, Clone)]
pub struct Document {
    /// Stable document identifier.
    pub id: String,
    /// Raw in-vocabulary term frequencies (BM25 side).
    pub tf: TermVector,
    /// Tf-idf weights (latent and combined sides).
    pub tfidf: TermVector,
}

/// An immutable scored collection with precomputed statistics.
#[derive(Debug, Clone)]
pub struct Collection {
    docs: Vec<Document>,
    stats: CollectionStats,
}

impl Collection {
    /// Vectorizes `(doc_id, title)` pairs against `vocab`.
    ///
    /// When `idf` is absent a table is derived from the collection's own
    /// titles. Duplicate ids are rejected; an empty collection is an error.
    pub fn build(
        entries: &[(String, String)],
        vocab: &Vocabulary,
        idf: Option<&[f64]>,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyCorpus("no documents in collection".into()));
        }
        let mut seen = HashSet::new();
        for (id, _) in entries {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate document id '{id}'")));
            }
        }
        let derived;
        let idf = match idf {
            Some(t) => {
                if t.len() != vocab.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "idf table has {} entries for a vocabulary of {}",
                        t.len(),
                        vocab.len()
                    )));
                }
                t
            }
            None => {
                derived = idf_from_titles(
                    entries.iter().map(|(id, title)| (id.as_str(), title.as_str())),
                    vocab,
                );
                &derived
            }
        };
        let docs: Vec<Document> = entries
            .iter()
            .map(|(id, title)| Document {
                id: id.clone(),
                tf: vectorize_query(title, vocab),
                tfidf: vectorize_document(title, vocab, idf),
            })
            .collect();
        let mut df = vec![0u32; vocab.len()];
        let mut total_len = 0.0;
        for doc in &docs {
            for &(id, _) in doc.tf.entries() {
                df[id as usize] += 1;
            }
            total_len += doc.tf.total_weight();
        }
        let stats = CollectionStats {
            doc_count: docs.len(),
            avg_len: total_len / docs.len() as f64,
            df,
        };
        Ok(Collection { docs, stats })
    }

    /// Number of documents.
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    /// Whether the collection is empty (never true for a built collection).
    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// The documents in insertion order.
    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    /// Collection statistics.
    pub fn stats(&self) -> &CollectionStats {
        &self.stats
    }
}

/// Reads a `doc_id<TAB>title` collection file.
pub fn read_collection(path: &Path) -> Result<Vec<(String, String)>> {
    let file = File::open(path)?;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (id, title) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected doc_id<TAB>title"))?;
        if id.is_empty() {
            return Err(Error::parse(path, i + 1, "empty document id"));
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::parse(path, i + 1, format!("duplicate document id '{id}'")));
        }
        entries.push((id.to_string(), title.to_string()));
    }
    Ok(entries)
}

/// Which score orders a ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Latent matching score only.
    Latent,
    /// Latent score plus exact-term dot product.
    Combined,
    /// Okapi BM25 over raw term frequencies.
    Bm25,
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latent" => Ok(ScoreMode::Latent),
            "combined" => Ok(ScoreMode::Combined),
            "bm25" => Ok(ScoreMode::Bm25),
            other => Err(Error::InvalidArgument(format!(
                "unknown score mode '{other}' (expected latent, combined, or bm25)"
            ))),
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreMode::Latent => f.write_str("latent"),
            ScoreMode::Combined => f.write_str("combined"),
            ScoreMode::Bm25 => f.write_str("bm25"),
        }
    }
}

/// A query's ranked documents, scores non-increasing, ties by doc id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    /// Query text.
    pub query: String,
    /// `(doc_id, score)` pairs in rank order.
    pub items: Vec<(String, f64)>,
}

/// Scores every document under `mode` and returns the top `k`.
///
/// Scoring is exhaustive and parallel over documents; the merged order is
/// deterministic (score descending, then doc id ascending).
pub fn rank_top_k(
    model: &Model,
    query: &str,
    collection: &Collection,
    k: usize,
    mode: ScoreMode,
) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let q = vectorize_query(query, model.vocab());
    let stats = collection.stats();
    let mut scored: Vec<(String, f64)> = collection
        .docs()
        .par_iter()
        .map(|doc| {
            let score = match mode {
                ScoreMode::Latent => latent_match(model, &q, &doc.tfidf),
                ScoreMode::Combined => score_ir(model, &q, &doc.tfidf),
                ScoreMode::Bm25 => bm25_score(stats, &q, &doc.tf, BM25_K1_DEFAULT, BM25_B_DEFAULT),
            };
            (doc.id.clone(), score)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(RankedList {
        query: query.to_string(),
        items: scored,
    })
}

// ---------------------------------------------------------------------------
// Ranking files
// ---------------------------------------------------------------------------

/// Writes rankings as `query<TAB>rank<TAB>doc_id<TAB>score` with 6 decimals.
pub fn write_rankings(path: &Path, lists: &[RankedList]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for list in lists {
        for (rank, (doc_id, score)) in list.items.iter().enumerate() {
            writeln!(w, "{}\t{}\t{}\t{:.6}", list.query, rank + 1, doc_id, score)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a rankings file back into per-query lists (file order preserved).
pub fn read_rankings(path: &Path) -> Result<Vec<RankedList>> {
    let file = File::open(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut by_query: HashMap<String, Vec<(usize, String, f64)>> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(path, i + 1, "expected query<TAB>rank<TAB>doc_id<TAB>score"));
        }
        let rank: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad rank '{}'", fields[1])))?;
        let score: f64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad score '{}'", fields[3])))?;
        let query = fields[0].to_string();
        if !by_query.contains_key(&query) {
            order.push(query.clone());
        }
        by_query
            .entry(query)
            .or_default()
            .push((rank, fields[2].to_string(), score));
    }
    let mut lists = Vec::with_capacity(order.len());
    for query in order {
        let mut rows = by_query.remove(&query).expect("tracked query");
        rows.sort_by_key(|row| row.0);
        lists.push(RankedList {
            query,
            items: rows.into_iter().map(|(_, id, s)| (id, s)).collect(),
        });
    }
    Ok(lists)
}
