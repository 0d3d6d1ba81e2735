//! Ranking evaluation: graded NDCG at fixed cutoffs, head/tail query splits
//! by frequency, report assembly, and a paired t-test helper over per-query
//! NDCG vectors.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::ClickRecord;
use crate::error::{Error, Result};
use crate::scorer::RankedList;

/// Rank cutoffs reported by default.
pub const DEFAULT_CUTOFFS: [usize; 4] = [1, 3, 5, 10];

// ---------------------------------------------------------------------------
// Judgments
// ---------------------------------------------------------------------------

/// One graded relevance label: 0 Bad, 1 Fair, 2 Good, 3 Excellent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Judgment {
    /// Query text.
    pub query: String,
    /// Judged document id.
    pub doc_id: String,
    /// Relevance grade in 0..=3.
    pub label: u8,
}

/// Reads a `query<TAB>doc_id<TAB>label` judgments file, rejecting duplicates.
pub fn read_judgments(path: &Path) -> Result<Vec<Judgment>> {
    let file = File::open(path)?;
    let mut judgments = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(path, i + 1, "expected query<TAB>doc_id<TAB>label"));
        }
        let label: u8 = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad label '{}'", fields[2])))?;
        if label > 3 {
            return Err(Error::parse(path, i + 1, format!("label {label} outside 0..=3")));
        }
        if !seen.insert((fields[0].to_string(), fields[1].to_string())) {
            return Err(Error::parse(
                path,
                i + 1,
                format!("duplicate judgment for ('{}', '{}')", fields[0], fields[1]),
            ));
        }
        judgments.push(Judgment {
            query: fields[0].to_string(),
            doc_id: fields[1].to_string(),
            label,
        });
    }
    Ok(judgments)
}

// ---------------------------------------------------------------------------
// NDCG
// ---------------------------------------------------------------------------

/// Graded gain: 2^label - 1.
fn gain(label: u8) -> f64 {
    2.0_f64.powi(label as i32) - 1.0
}

/// DCG@k of labels in ranked order: sum of gain / log2(rank + 1).
fn dcg_at_k(labels: &[u8], k: usize) -> f64 {
    labels
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &l)| gain(l) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k of labels in ranked order; all-zero or empty lists score 0.
pub fn ndcg_at_k(labels: &[u8], k: usize) -> f64 {
    assert!(k >= 1, "cutoff must be positive");
    if labels.is_empty() {
        log::warn!("ndcg over an empty ranking, scoring 0");
        return 0.0;
    }
    let mut ideal = labels.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg_at_k(&ideal, k);
    if idcg == 0.0 {
        return 0.0;
    }
    dcg_at_k(labels, k) / idcg
}

// ---------------------------------------------------------------------------
// Head/tail split
// ---------------------------------------------------------------------------

/// Splits queries by frequency: descending count (lexicographic tie-break),
/// the top half is the head; odd counts give the extra query to the head.
/// Queries missing from the table count as frequency 0.
pub fn split_head_tail(
    queries: &[String],
    frequencies: &HashMap<String, u64>,
) -> (Vec<String>, Vec<String>) {
    let mut sorted: Vec<&String> = queries.iter().collect();
    sorted.sort_by(|a, b| {
        let fa = frequencies.get(*a).copied().unwrap_or(0);
        let fb = frequencies.get(*b).copied().unwrap_or(0);
        fb.cmp(&fa).then_with(|| a.cmp(b))
    });
    let head_len = sorted.len().div_ceil(2);
    let head = sorted[..head_len].iter().map(|q| q.to_string()).collect();
    let tail = sorted[head_len..].iter().map(|q| q.to_string()).collect();
    (head, tail)
}

/// Per-query frequencies summed from click counts.
pub fn query_frequencies_from_clicks(records: &[ClickRecord]) -> HashMap<String, u64> {
    let mut freq: HashMap<String, u64> = HashMap::new();
    for r in records {
        *freq.entry(r.query.clone()).or_insert(0) += u64::from(r.clicks);
    }
    freq
}

/// Reads a `query<TAB>count` frequency file, rejecting duplicates.
pub fn read_frequencies(path: &Path) -> Result<HashMap<String, u64>> {
    let file = File::open(path)?;
    let mut freq = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (query, count) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected query<TAB>count"))?;
        let count: u64 = count
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad count '{count}'")))?;
        if freq.insert(query.to_string(), count).is_some() {
            return Err(Error::parse(path, i + 1, format!("duplicate query '{query}'")));
        }
    }
    Ok(freq)
}

// ---------------------------------------------------------------------------
// Run evaluation
// ---------------------------------------------------------------------------

/// Mean NDCG per split and cutoff, with query counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    cutoffs: Vec<usize>,
    rows: Vec<SplitRow>,
}

/// One split's row: name, query count, and mean NDCG per cutoff.
#[derive(Debug, Clone, PartialEq)]
struct SplitRow {
    split: String,
    n_queries: usize,
    ndcg: Vec<f64>,
}

impl EvalReport {
    /// The cutoffs each row reports.
    pub fn cutoffs(&self) -> &[usize] {
        &self.cutoffs
    }

    /// Split names in report order.
    pub fn splits(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.split.as_str()).collect()
    }

    /// Mean NDCG for a split at a cutoff.
    pub fn ndcg(&self, split: &str, cutoff: usize) -> Option<f64> {
        let col = self.cutoffs.iter().position(|&c| c == cutoff)?;
        self.rows.iter().find(|r| r.split == split).map(|r| r.ndcg[col])
    }

    /// Number of queries contributing to a split.
    pub fn n_queries(&self, split: &str) -> Option<usize> {
        self.rows.iter().find(|r| r.split == split).map(|r| r.n_queries)
    }

    /// Aligned text table of the report.
    pub fn text_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<8} {:>9}", "split", "n_queries"));
        for c in &self.cutoffs {
            out.push_str(&format!(" {:>9}", format!("ndcg@{c}")));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{:<8} {:>9}", row.split, row.n_queries));
            for v in &row.ndcg {
                out.push_str(&format!(" {:>9.4}", v));
            }
            out.push('\n');
        }
        out
    }

    /// CSV rendering with header `split,cutoff,ndcg,n_queries`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("split,cutoff,ndcg,n_queries\n");
        for row in &self.rows {
            for (c, v) in self.cutoffs.iter().zip(&row.ndcg) {
                out.push_str(&format!("{},{},{:.6},{}\n", row.split, c, v, row.n_queries));
            }
        }
        out
    }
}

/// NDCG@k per ranked query; queries without judgments are skipped.
pub fn per_query_ndcg(
    rankings: &[RankedList],
    judgments: &[Judgment],
    k: usize,
) -> Vec<(String, f64)> {
    let by_query = judgment_map(judgments);
    rankings
        .iter()
        .filter_map(|list| {
            let labels = labels_for(list, &by_query)?;
            Some((list.query.clone(), ndcg_at_k(&labels, k)))
        })
        .collect()
}

fn judgment_map(judgments: &[Judgment]) -> HashMap<&str, HashMap<&str, u8>> {
    let mut map: HashMap<&str, HashMap<&str, u8>> = HashMap::new();
    for j in judgments {
        map.entry(&j.query).or_default().insert(&j.doc_id, j.label);
    }
    map
}

/// Ranked labels for one query; None when the query has no judgments.
/// Unjudged documents count as label 0.
fn labels_for(list: &RankedList, by_query: &HashMap<&str, HashMap<&str, u8>>) -> Option<Vec<u8>> {
    let judged = by_query.get(list.query.as_str())?;
    Some(
        list.items
            .iter()
            .map(|(doc_id, _)| judged.get(doc_id.as_str()).copied().unwrap_or(0))
            .collect(),
    )
}

/// Macro-averaged NDCG over all queries plus head/tail splits when
/// frequencies are given; returns the report and the number of ranked
/// queries excluded for having no judgments.
pub fn evaluate_run(
    rankings: &[RankedList],
    judgments: &[Judgment],
    frequencies: Option<&HashMap<String, u64>>,
    cutoffs: &[usize],
) -> (EvalReport, usize) {
    let by_query = judgment_map(judgments);
    let per_query: Vec<Option<(String, Vec<f64>)>> = rankings
        .par_iter()
        .map(|list| {
            let labels = labels_for(list, &by_query)?;
            let ndcg = cutoffs.iter().map(|&k| ndcg_at_k(&labels, k)).collect();
            Some((list.query.clone(), ndcg))
        })
        .collect();
    let excluded = per_query.iter().filter(|r| r.is_none()).count();
    if excluded > 0 {
        log::warn!("excluded {excluded} ranked queries with no judgments");
    }
    let included: Vec<(String, Vec<f64>)> = per_query.into_iter().flatten().collect();

    let mut rows = vec![mean_row("all", &included, cutoffs, None)];
    if let Some(freq) = frequencies {
        let queries: Vec<String> = included.iter().map(|(q, _)| q.clone()).collect();
        let (head, tail) = split_head_tail(&queries, freq);
        let head: HashSet<String> = head.into_iter().collect();
        let tail: HashSet<String> = tail.into_iter().collect();
        rows.push(mean_row("head", &included, cutoffs, Some(&head)));
        rows.push(mean_row("tail", &included, cutoffs, Some(&tail)));
    }
    let report = EvalReport {
        cutoffs: cutoffs.to_vec(),
        rows,
    };
    (report, excluded)
}

/// Deterministic mean over the (optionally filtered) per-query NDCG vectors.
fn mean_row(
    split: &str,
    per_query: &[(String, Vec<f64>)],
    cutoffs: &[usize],
    members: Option<&HashSet<String>>,
) -> SplitRow {
    let mut sums = vec![0.0; cutoffs.len()];
    let mut n = 0usize;
    for (query, ndcg) in per_query {
        if members.is_some_and(|m| !m.contains(query)) {
            continue;
        }
        n += 1;
        for (s, v) in sums.iter_mut().zip(ndcg) {
            *s += v;
        }
    }
    let ndcg = if n == 0 {
        vec![0.0; cutoffs.len()]
    } else {
        sums.into_iter().map(|s| s / n as f64).collect()
    };
    SplitRow {
        split: split.to_string(),
        n_queries: n,
        ndcg,
    }
}

// ---------------------------------------------------------------------------
// Paired t-test
// ---------------------------------------------------------------------------

/// Paired t-test outcome: statistic, degrees of freedom, two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    /// t statistic of the mean paired difference.
    pub t: f64,
    /// Degrees of freedom (n - 1).
    pub df: usize,
    /// Two-sided p-value from the Student-t distribution.
    pub p_value: f64,
}

/// Paired t-test over two aligned per-query metric vectors.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "paired samples have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 paired samples".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        if mean == 0.0 {
            return Ok(TTestResult { t: 0.0, df, p_value: 1.0 });
        }
        return Err(Error::Numerical("zero variance in paired differences".into()));
    }
    let t = mean / (var / n as f64).sqrt();
    let x = df as f64 / (df as f64 + t * t);
    let p_value = reg_inc_beta(df as f64 / 2.0, 0.5, x).clamp(0.0, 1.0);
    Ok(TTestResult { t, df, p_value })
}

/// Natural log of the gamma function (Lanczos approximation, g = 7).
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let pi = std::f64::consts::PI;
    if x < 0.5 {
        (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let t = x + 7.5;
        let mut a = COEF[0];
        for (i, &c) in COEF.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * pi).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }
}

/// Continued fraction for the regularized incomplete beta (modified Lentz).
fn beta_cont_frac(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 200;
    const EPS: f64 = 1e-14;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_bt = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let bt = ln_bt.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * beta_cont_frac(a, b, x) / a
    } else {
        1.0 - bt * beta_cont_frac(b, a, 1.0 - x) / b
    }
}
