//! Semantic-knowledge mining: synonym pairs from the click bipartite graph,
//! tag-term pairs from tagged documents, and the symmetric knowledge matrices
//! they induce for training-time regularization.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::{tokenize, ClickRecord, TermVector, Vocabulary};
use crate::error::{Error, Result};

/// Prefix that turns a tag into a vocabulary term, keeping tags collision-free
/// from query/title tokens (which never contain `:` followed by whitespace-free
/// tag text produced by tokenization — tokens are lowercased query words).
pub const TAG_PREFIX: &str = "tag:";

/// Vocabulary term for a tag.
pub fn tag_vocab_term(tag: &str) -> String {
    format!("{TAG_PREFIX}{tag}")
}

/// Replaces the token at `position` with `*` and joins with single spaces:
/// the context of that token within the query.
pub fn extract_context<S: AsRef<str>>(tokens: &[S], position: usize) -> Result<String> {
    if position >= tokens.len() {
        return Err(Error::InvalidArgument(format!(
            "position {position} out of range for {} tokens",
            tokens.len()
        )));
    }
    let parts: Vec<&str> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| if i == position { "*" } else { t.as_ref() })
        .collect();
    Ok(parts.join(" "))
}

/// Click bipartite graph: for each document, the distinct queries that
/// clicked it (zero-click records never enter).
#[derive(Debug, Clone, Default)]
pub struct ClickGraph {
    per_doc: BTreeMap<String, BTreeSet<String>>,
}

impl ClickGraph {
    pub fn from_records(records: &[ClickRecord]) -> Self {
        let mut per_doc: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for r in records {
            if r.clicks == 0 {
                continue;
            }
            per_doc.entry(r.doc_id.clone()).or_default().insert(r.query.clone());
        }
        ClickGraph { per_doc }
    }

    pub fn doc_count(&self) -> usize {
        self.per_doc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_doc.is_empty()
    }

    /// Documents and their clicked queries, in document-id order.
    pub fn docs(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.per_doc.iter().map(|(d, q)| (d.as_str(), q))
    }
}

/// A mined synonym candidate: support counts (document, shared context)
/// occurrences, weight is its logistic transform.
#[derive(Debug, Clone, PartialEq)]
pub struct SynonymPair {
    pub term1: String,
    pub term2: String,
    pub support: u32,
    pub weight: f64,
}

/// 1 / (1 + exp(-support/scale)): monotone map from support to (0, 1).
pub fn logistic_weight(support: u32, scale: f64) -> f64 {
    assert!(scale > 0.0, "scale must be positive");
    1.0 / (1.0 + (-(support as f64) / scale).exp())
}

/// Support counts per candidate pair for one document's query set: one count
/// per distinct (term1, term2, context) triple, pairs in lexicographic order.
fn doc_candidates(queries: &BTreeSet<String>) -> HashMap<(String, String), u32> {
    // context -> set of terms seen with it (the set view of (term, context))
    let mut by_context: HashMap<String, BTreeSet<String>> = HashMap::new();
    for q in queries {
        let tokens = tokenize(q);
        for pos in 0..tokens.len() {
            let ctx = extract_context(&tokens, pos).expect("pos < len");
            by_context.entry(ctx).or_default().insert(tokens[pos].clone());
        }
    }
    let mut counts: HashMap<(String, String), u32> = HashMap::new();
    for terms in by_context.values() {
        let terms: Vec<&String> = terms.iter().collect();
        for i in 0..terms.len() {
            for j in i + 1..terms.len() {
                // BTreeSet iteration is sorted, so (i, j) is canonical order
                *counts
                    .entry((terms[i].clone(), terms[j].clone()))
                    .or_insert(0) += 1;
            }
        }
    }
    counts
}

/// Mines synonym pairs: per document, terms sharing a context in that
/// document's clicked queries become candidates; support accumulates across
/// documents; the top `k` by (support desc, pair lexicographic) are returned
/// with logistic weights at the given `scale`.
pub fn mine_synonyms(graph: &ClickGraph, k: usize, scale: f64) -> Vec<SynonymPair> {
    let docs: Vec<&BTreeSet<String>> = graph.per_doc.values().collect();
    let support: HashMap<(String, String), u32> = docs
        .par_iter()
        .map(|queries| doc_candidates(queries))
        .reduce(HashMap::new, |mut a, b| {
            // u32 addition is associative: any merge order yields the same sums
            for (pair, c) in b {
                *a.entry(pair).or_insert(0) += c;
            }
            a
        });
    let mut ranked: Vec<((String, String), u32)> = support.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
        .into_iter()
        .map(|((term1, term2), support)| SynonymPair {
            term1,
            term2,
            support,
            weight: logistic_weight(support, scale),
        })
        .collect()
}

/// Writes `term1<TAB>term2<TAB>support<TAB>weight`, sorted by support
/// descending (the miner's output order).
pub fn write_synonyms(path: &Path, pairs: &[SynonymPair]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in pairs {
        writeln!(w, "{}\t{}\t{}\t{}", p.term1, p.term2, p.support, p.weight)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a synonym dictionary written by [`write_synonyms`].
pub fn read_synonyms(path: &Path) -> Result<Vec<SynonymPair>> {
    let reader = BufReader::new(File::open(path)?);
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(path, i + 1, "expected term1<TAB>term2<TAB>support<TAB>weight"));
        }
        let support: u32 = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad support {:?}", fields[2])))?;
        let weight: f64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad weight {:?}", fields[3])))?;
        if !weight.is_finite() {
            return Err(Error::parse(path, i + 1, "non-finite weight"));
        }
        pairs.push(SynonymPair {
            term1: fields[0].to_string(),
            term2: fields[1].to_string(),
            support,
            weight,
        });
    }
    Ok(pairs)
}

/// A mined tag-term association; weight is the tag's average tf-idf value for
/// the term over all documents carrying the tag.
#[derive(Debug, Clone, PartialEq)]
pub struct TagTermPair {
    pub tag: String,
    pub term: String,
    pub weight: f64,
}

/// Mines tag-term pairs: for each tag, averages the tf-idf vectors of its
/// documents (dividing by the full document count, absent terms contributing
/// zero) and keeps the top `k` terms by (average desc, term-id asc).
///
/// Tags mapped to zero documents are skipped with a warning; the skip count is
/// returned alongside the pairs.
pub fn mine_tag_terms(
    tagged: &BTreeMap<String, Vec<&TermVector>>,
    vocab: &Vocabulary,
    k: usize,
) -> (Vec<TagTermPair>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0usize;
    for (tag, docs) in tagged {
        if docs.is_empty() {
            log::warn!("tag {tag:?} has no documents; skipped");
            skipped += 1;
            continue;
        }
        let mut sums: HashMap<u32, f64> = HashMap::new();
        for v in docs {
            for &(id, w) in v.entries() {
                *sums.entry(id).or_insert(0.0) += w;
            }
        }
        let m = docs.len() as f64;
        let mut averaged: Vec<(u32, f64)> = sums.into_iter().map(|(id, s)| (id, s / m)).collect();
        averaged.sort_unstable_by(|a, b| {
            b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0))
        });
        averaged.truncate(k);
        for (id, weight) in averaged {
            let term = vocab
                .term(id)
                .unwrap_or_else(|| panic!("term id {id} not in vocabulary"))
                .to_string();
            out.push(TagTermPair { tag: tag.clone(), term, weight });
        }
    }
    (out, skipped)
}

/// Reads tag assignments `doc_id<TAB>tag1,tag2,...`; returns doc -> tags plus
/// the count of skipped (short or tagless) lines.
pub fn read_tag_assignments(path: &Path) -> Result<(BTreeMap<String, Vec<String>>, usize)> {
    let reader = BufReader::new(File::open(path)?);
    let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut skipped = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let Some((doc_id, tags)) = line.split_once('\t') else {
            skipped += 1;
            log::debug!("{}:{}: skipped, expected doc_id<TAB>tags", path.display(), i + 1);
            continue;
        };
        let tags: BTreeSet<String> = tags
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect();
        if tags.is_empty() {
            skipped += 1;
            continue;
        }
        map.entry(doc_id.to_string()).or_default().extend(tags);
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} line(s)", path.display());
    }
    for tags in map.values_mut() {
        tags.sort_unstable();
        tags.dedup();
    }
    Ok((map, skipped))
}

/// Writes `tag<TAB>term<TAB>weight`.
pub fn write_tag_terms(path: &Path, pairs: &[TagTermPair]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in pairs {
        writeln!(w, "{}\t{}\t{}", p.tag, p.term, p.weight)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads tag-term pairs written by [`write_tag_terms`].
pub fn read_tag_terms(path: &Path) -> Result<Vec<TagTermPair>> {
    let reader = BufReader::new(File::open(path)?);
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(path, i + 1, "expected tag<TAB>term<TAB>weight"));
        }
        let weight: f64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad weight {:?}", fields[2])))?;
        if !weight.is_finite() || weight < 0.0 {
            return Err(Error::parse(path, i + 1, "weight must be finite and >= 0"));
        }
        pairs.push(TagTermPair {
            tag: fields[0].to_string(),
            term: fields[1].to_string(),
            weight,
        });
    }
    Ok(pairs)
}

/// A weighted pair of vocabulary terms feeding a knowledge matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgePair {
    pub member1: String,
    pub member2: String,
    pub weight: f64,
}

impl SynonymPair {
    pub fn to_knowledge_pair(&self) -> KnowledgePair {
        KnowledgePair {
            member1: self.term1.clone(),
            member2: self.term2.clone(),
            weight: self.weight,
        }
    }
}

impl TagTermPair {
    /// Pairs the prefixed tag term with the mined term.
    pub fn to_knowledge_pair(&self) -> KnowledgePair {
        KnowledgePair {
            member1: tag_vocab_term(&self.tag),
            member2: self.term.clone(),
            weight: self.weight,
        }
    }
}

/// Symmetric sparse knowledge matrix R = (1/m) Σ s_i (w1 w2ᵀ + w2 w1ᵀ)/2 over
/// the retained pair set; both orientations of every entry are stored.
#[derive(Debug, Clone)]
pub struct KnowledgeMatrix {
    dim: usize,
    pair_count: usize,
    /// Entries sorted by (u, v); for u ≠ v the mirrored entry is also present
    /// with the bitwise-identical value.
    entries: Vec<(u32, u32, f64)>,
    row_start: Vec<usize>,
}

impl KnowledgeMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of retained pairs m.
    pub fn pair_count(&self) -> usize {
        self.pair_count
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// All stored entries (both orientations), sorted by (u, v).
    pub fn entries(&self) -> &[(u32, u32, f64)] {
        &self.entries
    }

    /// Entries of row u (equal to column u by symmetry), sorted by v.
    pub fn row(&self, u: usize) -> &[(u32, u32, f64)] {
        &self.entries[self.row_start[u]..self.row_start[u + 1]]
    }

    /// r_{u,v} (0 when absent).
    pub fn get(&self, u: u32, v: u32) -> f64 {
        let row = self.row(u as usize);
        match row.binary_search_by_key(&v, |e| e.1) {
            Ok(i) => row[i].2,
            Err(_) => 0.0,
        }
    }

    /// Dense copy, for small instances and tests.
    pub fn to_dense(&self) -> ndarray::Array2<f64> {
        let mut m = ndarray::Array2::zeros((self.dim, self.dim));
        for &(u, v, r) in &self.entries {
            m[[u as usize, v as usize]] = r;
        }
        m
    }
}

/// Assembles a knowledge matrix from term pairs, resolving members against
/// `vocab`. Unresolvable pairs are dropped; the drop count is returned.
pub fn build_knowledge_matrix(
    pairs: &[KnowledgePair],
    vocab: &Vocabulary,
) -> Result<(KnowledgeMatrix, usize)> {
    let mut resolved: Vec<(u32, u32, f64)> = Vec::with_capacity(pairs.len());
    let mut dropped = 0usize;
    for p in pairs {
        match (vocab.id(&p.member1), vocab.id(&p.member2)) {
            (Some(u), Some(v)) => resolved.push((u, v, p.weight)),
            _ => {
                dropped += 1;
                log::debug!("knowledge pair ({:?}, {:?}) not in vocabulary; dropped", p.member1, p.member2);
            }
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} knowledge pair(s) not resolvable in the vocabulary");
    }
    if resolved.is_empty() {
        return Err(Error::EmptyKnowledge("no pair resolvable in the vocabulary".into()));
    }
    let m = resolved.len() as f64;
    let mut acc: HashMap<(u32, u32), f64> = HashMap::new();
    for (u, v, s) in resolved {
        if u == v {
            // (e_u e_uᵀ + e_u e_uᵀ)/2 = e_u e_uᵀ
            *acc.entry((u, u)).or_insert(0.0) += s / m;
        } else {
            // both orientations receive identical adds in identical order,
            // so symmetry is exact, not just within rounding
            let half = s / (2.0 * m);
            *acc.entry((u, v)).or_insert(0.0) += half;
            *acc.entry((v, u)).or_insert(0.0) += half;
        }
    }
    let mut entries: Vec<(u32, u32, f64)> = acc
        .into_iter()
        .filter(|&(_, r)| r != 0.0)
        .map(|((u, v), r)| (u, v, r))
        .collect();
    entries.sort_unstable_by_key(|&(u, v, _)| (u, v));
    let dim = vocab.len();
    let row_start = {
        let mut counts = vec![0usize; dim + 1];
        for &(u, _, _) in &entries {
            counts[u as usize + 1] += 1;
        }
        for i in 0..dim {
            counts[i + 1] += counts[i];
        }
        counts
    };
    Ok((
        KnowledgeMatrix {
            dim,
            pair_count: pairs.len() - dropped,
            entries,
            row_start,
        },
        dropped,
    ))
}
