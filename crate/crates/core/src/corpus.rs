//! Click-log ingestion: shared vocabulary, term-frequency / tf-idf
//! vectorization, and the empirical cross-covariance matrix accumulated
//! from weighted click pairs.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

use crate::linalg::ACC_CHUNK;

/// Lowercased whitespace tokens of `text`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

/// Dense bidirectional term <-> id map shared by queries and documents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from unique terms; ids follow slice order.
    pub fn from_terms(terms: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate term {t:?}")));
            }
        }
        Ok(Vocabulary { terms, ids })
    }

    /// Number of terms V.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Id of `term`, if present.
    pub fn id(&self, term: &str) -> Option<u32> {
        self.ids.get(term).copied()
    }

    /// Term string for `id`, if in range.
    pub fn term(&self, id: u32) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// New vocabulary with `extra` terms appended after the existing ids;
    /// terms already present are skipped.
    pub fn extended<I: IntoIterator<Item = String>>(&self, extra: I) -> Self {
        let mut terms = self.terms.clone();
        let mut ids = self.ids.clone();
        for t in extra {
            if !ids.contains_key(&t) {
                ids.insert(t.clone(), terms.len() as u32);
                terms.push(t);
            }
        }
        Vocabulary { terms, ids }
    }

    /// Writes one term per line; the 0-based line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for t in &self.terms {
            writeln!(w, "{t}")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a vocabulary written by [`Vocabulary::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut terms = Vec::new();
        let mut ids = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let term = line?;
            if term.is_empty() {
                return Err(Error::parse(path, i + 1, "empty term"));
            }
            if ids.insert(term.clone(), terms.len() as u32).is_some() {
                return Err(Error::parse(path, i + 1, format!("duplicate term {term:?}")));
            }
            terms.push(term);
        }
        Ok(Vocabulary { terms, ids })
    }
}

// ---------------------------------------------------------------------------
// Click records
// ---------------------------------------------------------------------------

/// One aggregated click-log line: a query, a clicked document, its title, and
/// the click count. Only records with clicks >= 1 enter training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClickRecord {
    pub query: String,
    pub doc_id: String,
    pub doc_title: String,
    pub clicks: u32,
}

/// Bookkeeping for lines dropped while reading a click log.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ClickLogStats {
    /// Total lines seen.
    pub lines: usize,
    /// Lines with fewer than 4 tab-separated fields or a non-integer click count.
    pub malformed: usize,
    /// Well-formed lines with clicks = 0 (excluded from training).
    pub zero_click: usize,
}

/// Reads a TSV click log: `query<TAB>doc_id<TAB>doc_title<TAB>clicks`.
/// Malformed lines are skipped and counted, not fatal.
pub fn read_click_log(path: &Path) -> Result<(Vec<ClickRecord>, ClickLogStats)> {
    let reader = BufReader::new(File::open(path)?);
    parse_click_log(reader, &path.display().to_string())
}

/// Parses click-log lines from any reader; `origin` names the source in logs.
pub fn parse_click_log<R: BufRead>(reader: R, origin: &str) -> Result<(Vec<ClickRecord>, ClickLogStats)> {
    let mut records = Vec::new();
    let mut stats = ClickLogStats::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        stats.lines += 1;
        let mut fields = line.split('\t');
        let (Some(query), Some(doc_id), Some(title), Some(clicks)) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            stats.malformed += 1;
            log::debug!("{origin}:{}: skipped, fewer than 4 fields", i + 1);
            continue;
        };
        let Ok(clicks) = clicks.trim().parse::<u32>() else {
            stats.malformed += 1;
            log::debug!("{origin}:{}: skipped, bad click count {clicks:?}", i + 1);
            continue;
        };
        if clicks == 0 {
            stats.zero_click += 1;
            continue;
        }
        records.push(ClickRecord {
            query: query.to_string(),
            doc_id: doc_id.to_string(),
            doc_title: title.to_string(),
            clicks,
        });
    }
    if stats.malformed > 0 {
        log::warn!("{origin}: skipped {} malformed line(s)", stats.malformed);
    }
    Ok((records, stats))
}

/// Builds the shared vocabulary: every term occurring at least `min_count`
/// times across queries and titles combined, ids in first-occurrence order.
pub fn build_vocabulary(records: &[ClickRecord], min_count: u32) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::InvalidArgument("min_count must be >= 1".into()));
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus("no click records".into()));
    }
    // term -> (occurrence count, first-occurrence index)
    let mut counts: HashMap<String, (u32, usize)> = HashMap::new();
    let mut next = 0usize;
    for r in records {
        for tok in tokenize(&r.query).into_iter().chain(tokenize(&r.doc_title)) {
            let e = counts.entry(tok).or_insert_with(|| {
                let idx = next;
                next += 1;
                (0, idx)
            });
            e.0 += 1;
        }
    }
    let mut kept: Vec<(usize, String)> = counts
        .into_iter()
        .filter(|(_, (c, _))| *c >= min_count)
        .map(|(t, (_, first))| (first, t))
        .collect();
    kept.sort_unstable();
    if kept.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "no term occurs at least {min_count} times"
        )));
    }
    Vocabulary::from_terms(kept.into_iter().map(|(_, t)| t).collect())
}

/// Smoothed idf over distinct documents: ln((N+1)/(df+1)) + 1.
///
/// `titles` yields (doc_id, title); repeated doc ids count once and the first
/// title seen for an id wins.
pub fn idf_from_titles<'a, I>(titles: I, vocab: &Vocabulary) -> Vec<f64>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut seen: HashMap<&str, ()> = HashMap::new();
    let mut df = vec![0u64; vocab.len()];
    let mut n_docs = 0u64;
    for (doc_id, title) in titles {
        if seen.insert(doc_id, ()).is_some() {
            continue;
        }
        n_docs += 1;
        let mut ids: Vec<u32> = tokenize(title).iter().filter_map(|t| vocab.id(t)).collect();
        ids.sort_unstable();
        ids.dedup();
        for id in ids {
            df[id as usize] += 1;
        }
    }
    df.iter()
        .map(|&d| ((n_docs as f64 + 1.0) / (d as f64 + 1.0)).ln() + 1.0)
        .collect()
}

/// Idf table for a click corpus, indexed by term id.
pub fn compute_idf(records: &[ClickRecord], vocab: &Vocabulary) -> Vec<f64> {
    idf_from_titles(
        records.iter().map(|r| (r.doc_id.as_str(), r.doc_title.as_str())),
        vocab,
    )
}

/// Writes `term<TAB>idf`, one line per vocabulary id.
pub fn write_idf(path: &Path, vocab: &Vocabulary, idf: &[f64]) -> Result<()> {
    if idf.len() != vocab.len() {
        return Err(Error::DimensionMismatch(format!(
            "idf table has {} entries for a vocabulary of {}",
            idf.len(),
            vocab.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    for (t, v) in vocab.terms().iter().zip(idf) {
        writeln!(w, "{t}\t{v}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an idf sidecar written by [`write_idf`]; order must match `vocab`.
pub fn read_idf(path: &Path, vocab: &Vocabulary) -> Result<Vec<f64>> {
    let reader = BufReader::new(File::open(path)?);
    let mut idf = Vec::with_capacity(vocab.len());
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let (term, value) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected term<TAB>idf"))?;
        if vocab.term(i as u32) != Some(term) {
            return Err(Error::parse(
                path,
                i + 1,
                format!("term {term:?} does not match vocabulary id {i}"),
            ));
        }
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad idf value {value:?}")))?;
        idf.push(value);
    }
    if idf.len() != vocab.len() {
        return Err(Error::DimensionMismatch(format!(
            "idf file has {} lines for a vocabulary of {}",
            idf.len(),
            vocab.len()
        )));
    }
    Ok(idf)
}

// ---------------------------------------------------------------------------
// Term vectors
// ---------------------------------------------------------------------------

/// Sparse vector of (term-id, weight) with strictly increasing ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TermVector {
    entries: Vec<(u32, f64)>,
    dim: usize,
}

impl TermVector {
    /// Builds from unsorted entries; duplicate or out-of-range ids and
    /// non-finite weights are rejected, zero weights dropped.
    pub fn new(mut entries: Vec<(u32, f64)>, dim: usize) -> Result<Self> {
        entries.sort_unstable_by_key(|e| e.0);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidArgument(format!("duplicate term id {}", w[0].0)));
            }
        }
        for &(id, w) in &entries {
            if id as usize >= dim {
                return Err(Error::InvalidArgument(format!(
                    "term id {id} out of range for dim {dim}"
                )));
            }
            if !w.is_finite() {
                return Err(Error::Numerical(format!("non-finite weight for term {id}")));
            }
        }
        entries.retain(|&(_, w)| w != 0.0);
        Ok(TermVector { entries, dim })
    }

    pub fn empty(dim: usize) -> Self {
        TermVector { entries: Vec::new(), dim }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored (nonzero) entries.
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Weight for `id` (0 when absent).
    pub fn get(&self, id: u32) -> f64 {
        match self.entries.binary_search_by_key(&id, |e| e.0) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0.0,
        }
    }

    /// Sum of stored weights.
    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Sparse dot product by merge walk.
    pub fn dot(&self, other: &TermVector) -> f64 {
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.entries, &other.entries);
        let mut sum = 0.0;
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    sum += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        sum
    }
}

fn counts_to_vector(counts: HashMap<u32, f64>, dim: usize) -> TermVector {
    let mut entries: Vec<(u32, f64)> = counts.into_iter().filter(|&(_, w)| w != 0.0).collect();
    entries.sort_unstable_by_key(|e| e.0);
    TermVector { entries, dim }
}

/// Raw term-frequency vector of a query; out-of-vocabulary terms are dropped.
pub fn vectorize_query(text: &str, vocab: &Vocabulary) -> TermVector {
    let mut counts: HashMap<u32, f64> = HashMap::new();
    for tok in tokenize(text) {
        if let Some(id) = vocab.id(&tok) {
            *counts.entry(id).or_insert(0.0) += 1.0;
        }
    }
    counts_to_vector(counts, vocab.len())
}

/// Tf-idf vector of a document title: weight(t) = tf(t) * idf(t).
pub fn vectorize_document(title: &str, vocab: &Vocabulary, idf: &[f64]) -> TermVector {
    assert_eq!(idf.len(), vocab.len(), "idf table built from a different vocabulary");
    let mut counts: HashMap<u32, f64> = HashMap::new();
    for tok in tokenize(title) {
        if let Some(id) = vocab.id(&tok) {
            *counts.entry(id).or_insert(0.0) += 1.0;
        }
    }
    for (id, w) in counts.iter_mut() {
        *w *= idf[*id as usize];
    }
    counts_to_vector(counts, vocab.len())
}

// ---------------------------------------------------------------------------
// Cross covariance
// ---------------------------------------------------------------------------

/// Sparse empirical cross covariance C = (1/n) Σ w_i · x_i y_iᵀ, where a pair
/// with click count w contributes w copies and n is the total weighted count.
#[derive(Debug, Clone)]
pub struct CrossCovariance {
    rows: usize,
    cols: usize,
    /// Weighted pair count; 0 when loaded from a cache file (not stored there).
    n: u64,
    /// Entries sorted by (u, v).
    by_row: Vec<(u32, u32, f64)>,
    row_start: Vec<usize>,
    /// The same entries sorted by (v, u).
    by_col: Vec<(u32, u32, f64)>,
    col_start: Vec<usize>,
}

impl CrossCovariance {
    fn from_entries(mut entries: Vec<(u32, u32, f64)>, rows: usize, cols: usize, n: u64) -> Result<Self> {
        entries.sort_unstable_by_key(|&(u, v, _)| (u, v));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::InvalidArgument(format!(
                    "duplicate entry ({}, {})",
                    w[0].0, w[0].1
                )));
            }
        }
        for &(u, v, c) in &entries {
            if u as usize >= rows || v as usize >= cols {
                return Err(Error::DimensionMismatch(format!(
                    "entry ({u}, {v}) out of range for {rows}x{cols}"
                )));
            }
            if !c.is_finite() {
                return Err(Error::Numerical(format!("non-finite entry at ({u}, {v})")));
            }
        }
        let row_start = index_starts(entries.iter().map(|e| e.0 as usize), rows);
        let mut by_col = entries.clone();
        by_col.sort_unstable_by_key(|&(u, v, _)| (v, u));
        let col_start = index_starts(by_col.iter().map(|e| e.1 as usize), cols);
        Ok(CrossCovariance { rows, cols, n, by_row: entries, row_start, by_col, col_start })
    }

    /// Builds directly from sparse entries; the weighted pair count is
    /// unknown here and reported as 0, as for loaded caches.
    pub fn from_triples(entries: Vec<(u32, u32, f64)>, rows: usize, cols: usize) -> Result<Self> {
        Self::from_entries(entries, rows, cols, 0)
    }

    /// d_x.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// d_y.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Weighted pair count behind the average (0 for cache-loaded matrices).
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.by_row.len()
    }

    /// All entries as (u, v, c), sorted by (u, v).
    pub fn entries(&self) -> &[(u32, u32, f64)] {
        &self.by_row
    }

    /// Entries of row u, sorted by v.
    pub fn row(&self, u: usize) -> &[(u32, u32, f64)] {
        &self.by_row[self.row_start[u]..self.row_start[u + 1]]
    }

    /// Entries of column v, sorted by u.
    pub fn col(&self, v: usize) -> &[(u32, u32, f64)] {
        &self.by_col[self.col_start[v]..self.col_start[v + 1]]
    }

    /// c_{u,v} (0 when absent).
    pub fn get(&self, u: u32, v: u32) -> f64 {
        let row = self.row(u as usize);
        match row.binary_search_by_key(&v, |e| e.1) {
            Ok(i) => row[i].2,
            Err(_) => 0.0,
        }
    }

    /// Dense copy, for small instances and tests.
    pub fn to_dense(&self) -> ndarray::Array2<f64> {
        let mut m = ndarray::Array2::zeros((self.rows, self.cols));
        for &(u, v, c) in &self.by_row {
            m[[u as usize, v as usize]] = c;
        }
        m
    }

    /// Binary cache: magic `LMC1`, little-endian u64 d_x, d_y, nnz, then nnz
    /// triples (u: u32, v: u32, value: f64).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(b"LMC1")?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        w.write_all(&(self.by_row.len() as u64).to_le_bytes())?;
        for &(u, v, c) in &self.by_row {
            w.write_all(&u.to_le_bytes())?;
            w.write_all(&v.to_le_bytes())?;
            w.write_all(&c.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a cache written by [`CrossCovariance::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"LMC1" {
            return Err(Error::InvalidArgument(format!(
                "{}: not a cross-covariance cache (bad magic)",
                path.display()
            )));
        }
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let nnz = read_u64(&mut r)? as usize;
        let mut entries = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            let u = read_u32(&mut r)?;
            let v = read_u32(&mut r)?;
            let c = read_f64(&mut r)?;
            entries.push((u, v, c));
        }
        CrossCovariance::from_entries(entries, rows, cols, 0)
    }
}

fn index_starts(sorted_keys: impl Iterator<Item = usize>, n: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n + 1];
    for k in sorted_keys {
        counts[k + 1] += 1;
    }
    for i in 0..n {
        counts[i + 1] += counts[i];
    }
    counts
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Accumulates C = (1/n) Σ w · x yᵀ over weighted pairs.
///
/// Accumulation is parallel over fixed-size chunks with an in-order reduction,
/// so the result is bitwise identical for any worker count.
pub fn build_cross_covariance(
    pairs: &[(TermVector, TermVector, u32)],
    dims: (usize, usize),
) -> Result<CrossCovariance> {
    let (dx, dy) = dims;
    for (x, y, _) in pairs {
        if x.dim() != dx || y.dim() != dy {
            return Err(Error::DimensionMismatch(format!(
                "pair has dims ({}, {}), expected ({dx}, {dy})",
                x.dim(),
                y.dim()
            )));
        }
    }
    type Partial = (HashMap<(u32, u32), f64>, u64);
    let partials: Vec<Partial> = pairs
        .par_chunks(ACC_CHUNK)
        .map(|chunk| {
            let mut acc: HashMap<(u32, u32), f64> = HashMap::new();
            let mut n = 0u64;
            for (x, y, w) in chunk {
                if *w == 0 {
                    continue;
                }
                n += u64::from(*w);
                let wf = f64::from(*w);
                for &(u, xw) in x.entries() {
                    for &(v, yw) in y.entries() {
                        *acc.entry((u, v)).or_insert(0.0) += wf * xw * yw;
                    }
                }
            }
            (acc, n)
        })
        .collect();

    // In-order merge: each key's total is the chunk-ordered sum of per-chunk
    // sums, independent of map iteration order.
    let mut acc: HashMap<(u32, u32), f64> = HashMap::new();
    let mut n = 0u64;
    for (partial, pn) in partials {
        n += pn;
        for (k, v) in partial {
            *acc.entry(k).or_insert(0.0) += v;
        }
    }
    if n == 0 {
        return Err(Error::EmptyCorpus("no weighted pairs to accumulate".into()));
    }
    let nf = n as f64;
    let entries: Vec<(u32, u32, f64)> = acc
        .into_iter()
        .map(|((u, v), c)| (u, v, c / nf))
        .filter(|&(_, _, c)| c != 0.0)
        .collect();
    CrossCovariance::from_entries(entries, dx, dy, n)
}

/// Vectorizes every record and accumulates the cross covariance in one step.
pub fn covariance_from_records(
    records: &[ClickRecord],
    vocab: &Vocabulary,
    idf: &[f64],
) -> Result<CrossCovariance> {
    let pairs: Vec<(TermVector, TermVector, u32)> = records
        .par_iter()
        .map(|r| {
            (
                vectorize_query(&r.query, vocab),
                vectorize_document(&r.doc_title, vocab, idf),
                r.clicks,
            )
        })
        .collect();
    build_cross_covariance(&pairs, (vocab.len(), vocab.len()))
}
