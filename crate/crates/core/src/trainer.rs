//! Trainer for latent mapping pairs: the regularized matching objective,
//! coordinate-descent sweeps with one shared SPD factorization per side,
//! simultaneous gradient steps, and the outer convergence loop.
//!
//! All reductions are output-partitioned or chunked in fixed order, so a
//! training run is bitwise reproducible for any worker count.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{read_f64, read_u32, read_u64, CrossCovariance};
use crate::error::{Error, Result};
use crate::knowledge::KnowledgeMatrix;
use crate::linalg::{chunked_sum, gram, matmul_rows, Cholesky, ACC_CHUNK};

pub use crate::linalg::solve_spd_multi_rhs;

/// Training aborts once |objective| exceeds this bound.
const DIVERGENCE_LIMIT: f64 = 1e12;

/// Optimization method for the mapping pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Coordinate,
    Gradient,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cd" | "coordinate" => Ok(Method::Coordinate),
            "gd" | "gradient" => Ok(Method::Gradient),
            other => Err(Error::InvalidArgument(format!(
                "unknown method {other:?}: expected cd or gd"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Coordinate => "cd",
            Method::Gradient => "gd",
        })
    }
}

/// Hyper-parameters and stopping rules for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Latent dimension.
    pub d: usize,
    /// Weight of the matching-matrix penalty ½‖LxᵀLy‖²_F.
    pub theta2: f64,
    /// Query-side ridge weight (must be positive).
    pub lambda2: f64,
    /// Document-side ridge weight (must be positive).
    pub rho2: f64,
    /// Query-side knowledge weight.
    pub alpha: f64,
    /// Document-side knowledge weight.
    pub beta: f64,
    /// Gradient-descent step size.
    pub gamma: f64,
    pub max_iters: usize,
    /// Relative objective-change tolerance for convergence.
    pub tol: f64,
    pub seed: u64,
    pub method: Method,
}

impl TrainConfig {
    /// Default iteration cap when refining an existing model.
    pub const WARM_START_MAX_ITERS: usize = 20;

    pub fn new(d: usize) -> Self {
        TrainConfig {
            d,
            theta2: 0.01,
            lambda2: 0.1,
            rho2: 0.1,
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.01,
            max_iters: 100,
            tol: 1e-5,
            seed: 0,
            method: Method::Coordinate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidArgument("latent dimension d must be at least 1".into()));
        }
        let nonneg = [
            ("theta2", self.theta2),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("tol", self.tol),
        ];
        for (name, v) in nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and non-negative (got {v})"
                )));
            }
        }
        for (name, v) in [("lambda2", self.lambda2), ("rho2", self.rho2)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive (got {v}); the linear systems are only positive definite with a positive ridge"
                )));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        Ok(())
    }

    /// Writes the config as `key=value` lines.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "d={}", self.d)?;
        writeln!(w, "theta2={}", self.theta2)?;
        writeln!(w, "lambda2={}", self.lambda2)?;
        writeln!(w, "rho2={}", self.rho2)?;
        writeln!(w, "alpha={}", self.alpha)?;
        writeln!(w, "beta={}", self.beta)?;
        writeln!(w, "gamma={}", self.gamma)?;
        writeln!(w, "max_iters={}", self.max_iters)?;
        writeln!(w, "tol={}", self.tol)?;
        writeln!(w, "seed={}", self.seed)?;
        writeln!(w, "method={}", self.method)?;
        w.flush()?;
        Ok(())
    }

    /// Reads a `key=value` config file; `d` is required, other keys default.
    ///
    /// Only quadratic penalties exist here: the sparsity knobs `theta1`,
    /// `lambda1`, and `rho1` are rejected unless set to 0.
    pub fn load(path: &Path) -> Result<TrainConfig> {
        let reader = BufReader::new(File::open(path)?);
        let mut pairs: Vec<(String, String, usize)> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let Some((k, v)) = t.split_once('=') else {
                return Err(Error::parse(path, i + 1, "expected key=value"));
            };
            pairs.push((k.trim().to_string(), v.trim().to_string(), i + 1));
        }
        let mut d = None;
        for (k, v, ln) in &pairs {
            if k == "d" {
                d = Some(parse_key::<usize>(path, *ln, k, v)?);
            }
        }
        let Some(d) = d else {
            return Err(Error::InvalidArgument(format!(
                "{}: missing required key d",
                path.display()
            )));
        };
        let mut cfg = TrainConfig::new(d);
        for (k, v, ln) in &pairs {
            let ln = *ln;
            match k.as_str() {
                "d" => {}
                "theta2" => cfg.theta2 = parse_key(path, ln, k, v)?,
                "lambda2" => cfg.lambda2 = parse_key(path, ln, k, v)?,
                "rho2" => cfg.rho2 = parse_key(path, ln, k, v)?,
                "alpha" => cfg.alpha = parse_key(path, ln, k, v)?,
                "beta" => cfg.beta = parse_key(path, ln, k, v)?,
                "gamma" => cfg.gamma = parse_key(path, ln, k, v)?,
                "max_iters" => cfg.max_iters = parse_key(path, ln, k, v)?,
                "tol" => cfg.tol = parse_key(path, ln, k, v)?,
                "seed" => cfg.seed = parse_key(path, ln, k, v)?,
                "method" => cfg.method = v.parse().map_err(|e| Error::parse(path, ln, format!("{e}")))?,
                "theta1" | "lambda1" | "rho1" => {
                    let v: f64 = parse_key(path, ln, k, v)?;
                    if v != 0.0 {
                        return Err(Error::parse(
                            path,
                            ln,
                            format!("{k} is not supported: only the quadratic penalties (theta2, lambda2, rho2) are implemented; remove it or set it to 0"),
                        ));
                    }
                }
                other => return Err(Error::parse(path, ln, format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_key<T: FromStr>(path: &Path, line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::parse(path, line, format!("bad value {value:?} for {key}")))
}

/// The learned pair of linear mappings into the shared latent space.
///
/// Internally each side is stored with one row per vocabulary term, so row `u`
/// of the query-side map is the latent representation of term `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingPair {
    x_map: Array2<f64>,
    y_map: Array2<f64>,
}

impl MappingPair {
    /// Builds from row-per-term matrices of shapes (d_x, d) and (d_y, d).
    pub fn from_maps(x_map: Array2<f64>, y_map: Array2<f64>) -> Result<Self> {
        if x_map.ncols() != y_map.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "latent dimensions disagree: {} vs {}",
                x_map.ncols(),
                y_map.ncols()
            )));
        }
        let x_map = standardize(x_map);
        let y_map = standardize(y_map);
        for m in [&x_map, &y_map] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("non-finite mapping entry".into()));
            }
        }
        Ok(MappingPair { x_map, y_map })
    }

    /// Builds from column-per-term matrices of shapes (d, d_x) and (d, d_y).
    pub fn from_lx_ly(lx: &Array2<f64>, ly: &Array2<f64>) -> Result<Self> {
        Self::from_maps(lx.t().as_standard_layout().to_owned(), ly.t().as_standard_layout().to_owned())
    }

    pub fn latent_dim(&self) -> usize {
        self.x_map.ncols()
    }

    /// Query-side vocabulary size.
    pub fn dx(&self) -> usize {
        self.x_map.nrows()
    }

    /// Document-side vocabulary size.
    pub fn dy(&self) -> usize {
        self.y_map.nrows()
    }

    /// Query-side map, one row per term.
    pub fn x_map(&self) -> &Array2<f64> {
        &self.x_map
    }

    /// Document-side map, one row per term.
    pub fn y_map(&self) -> &Array2<f64> {
        &self.y_map
    }

    /// Latent representation of query-side term `u`.
    pub fn latent_x(&self, u: usize) -> ndarray::ArrayView1<'_, f64> {
        self.x_map.row(u)
    }

    /// Latent representation of document-side term `v`.
    pub fn latent_y(&self, v: usize) -> ndarray::ArrayView1<'_, f64> {
        self.y_map.row(v)
    }

    /// Query-side map in column-per-term orientation (d, d_x).
    pub fn lx(&self) -> Array2<f64> {
        self.x_map.t().as_standard_layout().to_owned()
    }

    /// Document-side map in column-per-term orientation (d, d_y).
    pub fn ly(&self) -> Array2<f64> {
        self.y_map.t().as_standard_layout().to_owned()
    }
}

fn standardize(m: Array2<f64>) -> Array2<f64> {
    if m.is_standard_layout() {
        m
    } else {
        m.as_standard_layout().to_owned()
    }
}

/// Outcome bookkeeping for one training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Objective value before training, then after every iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Mean seconds per iteration.
    pub wall_clock_per_iter: f64,
}

/// Fresh mappings with entries i.i.d. uniform on [-1/√d, 1/√d] from the
/// config seed, or a verified copy of `warm_start`.
pub fn init_mappings(
    config: &TrainConfig,
    d_x: usize,
    d_y: usize,
    warm_start: Option<&MappingPair>,
) -> Result<MappingPair> {
    if config.d == 0 {
        return Err(Error::InvalidArgument("latent dimension d must be at least 1".into()));
    }
    if d_x == 0 || d_y == 0 {
        return Err(Error::InvalidArgument(format!(
            "vocabulary sizes must be at least 1 (got {d_x} and {d_y})"
        )));
    }
    if let Some(ws) = warm_start {
        if ws.dx() != d_x || ws.dy() != d_y || ws.latent_dim() != config.d {
            return Err(Error::DimensionMismatch(format!(
                "warm start is {}x{} with latent dimension {}, expected {d_x}x{d_y} with {}",
                ws.dx(),
                ws.dy(),
                ws.latent_dim(),
                config.d
            )));
        }
        return Ok(ws.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let x_map = random_map(&mut rng, d_x, config.d);
    let y_map = random_map(&mut rng, d_y, config.d);
    MappingPair::from_maps(x_map, y_map)
}

/// Grows a mapping pair to larger vocabularies, keeping every learned row and
/// drawing fresh rows for the new terms from `seed`.
pub fn extend_mappings(
    prev: &MappingPair,
    new_dx: usize,
    new_dy: usize,
    seed: u64,
) -> Result<MappingPair> {
    if new_dx < prev.dx() || new_dy < prev.dy() {
        return Err(Error::DimensionMismatch(format!(
            "cannot shrink mappings from {}x{} to {new_dx}x{new_dy}",
            prev.dx(),
            prev.dy()
        )));
    }
    let d = prev.latent_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fresh_x = random_map(&mut rng, new_dx - prev.dx(), d);
    let fresh_y = random_map(&mut rng, new_dy - prev.dy(), d);
    let mut x_map = Array2::zeros((new_dx, d));
    x_map.slice_mut(ndarray::s![..prev.dx(), ..]).assign(prev.x_map());
    x_map.slice_mut(ndarray::s![prev.dx().., ..]).assign(&fresh_x);
    let mut y_map = Array2::zeros((new_dy, d));
    y_map.slice_mut(ndarray::s![..prev.dy(), ..]).assign(prev.y_map());
    y_map.slice_mut(ndarray::s![prev.dy().., ..]).assign(&fresh_y);
    MappingPair::from_maps(x_map, y_map)
}

fn random_map(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Array2<f64> {
    let scale = 1.0 / (d as f64).sqrt();
    let data: Vec<f64> = (0..rows * d)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
        .collect();
    Array2::from_shape_vec((rows, d), data).expect("shape")
}

fn check_dims(
    c: &CrossCovariance,
    maps: &MappingPair,
    rx: Option<&KnowledgeMatrix>,
    ry: Option<&KnowledgeMatrix>,
) -> Result<()> {
    if maps.dx() != c.rows() || maps.dy() != c.cols() {
        return Err(Error::DimensionMismatch(format!(
            "mappings are {}x{} but the cross covariance is {}x{}",
            maps.dx(),
            maps.dy(),
            c.rows(),
            c.cols()
        )));
    }
    if let Some(r) = rx {
        if r.dim() != maps.dx() {
            return Err(Error::DimensionMismatch(format!(
                "query-side knowledge matrix has dimension {} but the vocabulary has {}",
                r.dim(),
                maps.dx()
            )));
        }
    }
    if let Some(r) = ry {
        if r.dim() != maps.dy() {
            return Err(Error::DimensionMismatch(format!(
                "document-side knowledge matrix has dimension {} but the vocabulary has {}",
                r.dim(),
                maps.dy()
            )));
        }
    }
    Ok(())
}

fn row_dot(a: &Array2<f64>, i: usize, b: &Array2<f64>, j: usize) -> f64 {
    let ra = a.row(i);
    let rb = b.row(j);
    let ra = ra.as_slice().expect("standard layout");
    let rb = rb.as_slice().expect("standard layout");
    ra.iter().zip(rb).map(|(p, q)| p * q).sum()
}

/// The training objective: the negated empirical match plus knowledge terms,
/// the matching-matrix penalty, and both ridges.
pub fn objective(
    c: &CrossCovariance,
    maps: &MappingPair,
    rx: Option<&KnowledgeMatrix>,
    ry: Option<&KnowledgeMatrix>,
    config: &TrainConfig,
) -> Result<f64> {
    check_dims(c, maps, rx, ry)?;
    let gx = gram(maps.x_map());
    let gy = gram(maps.y_map());
    objective_with_grams(c, maps, rx, ry, config, &gx, &gy)
}

fn objective_with_grams(
    c: &CrossCovariance,
    maps: &MappingPair,
    rx: Option<&KnowledgeMatrix>,
    ry: Option<&KnowledgeMatrix>,
    config: &TrainConfig,
    gx: &Array2<f64>,
    gy: &Array2<f64>,
) -> Result<f64> {
    let x = maps.x_map();
    let y = maps.y_map();
    let mut total = -chunked_sum(c.entries(), ACC_CHUNK, |&(u, v, w)| {
        w * row_dot(x, u as usize, y, v as usize)
    });
    if config.alpha != 0.0 {
        if let Some(r) = rx {
            total -= config.alpha
                * chunked_sum(r.entries(), ACC_CHUNK, |&(u, u2, s)| {
                    s * row_dot(x, u as usize, x, u2 as usize)
                });
        }
    }
    if config.beta != 0.0 {
        if let Some(r) = ry {
            total -= config.beta
                * chunked_sum(r.entries(), ACC_CHUNK, |&(v, v2, s)| {
                    s * row_dot(y, v as usize, y, v2 as usize)
                });
        }
    }
    // ‖LxᵀLy‖²_F equals the inner product of the two d×d Gram matrices;
    // skipped entirely at theta2 = 0, where unpenalized mappings may grow so
    // large that the product of the two Grams overflows
    if config.theta2 != 0.0 {
        let gxs = gx.as_slice().expect("standard layout");
        let gys = gy.as_slice().expect("standard layout");
        let cross: f64 = gxs.iter().zip(gys).map(|(a, b)| a * b).sum();
        total += 0.5 * config.theta2 * cross;
    }
    let xs = x.as_slice().expect("standard layout");
    let ys = y.as_slice().expect("standard layout");
    total += 0.5 * config.lambda2 * chunked_sum(xs, ACC_CHUNK, |&v| v * v);
    total += 0.5 * config.rho2 * chunked_sum(ys, ACC_CHUNK, |&v| v * v);
    if !total.is_finite() {
        return Err(Error::Numerical("objective is not finite".into()));
    }
    Ok(total)
}

/// Right-hand sides for the query-side update: row u collects the covariance-
/// weighted document rows plus (doubled, since the stored knowledge matrix
/// halves its symmetrization) the knowledge-weighted query rows.
fn assemble_rhs_x(
    c: &CrossCovariance,
    maps: &MappingPair,
    rx: Option<&KnowledgeMatrix>,
    alpha: f64,
) -> Array2<f64> {
    let d = maps.latent_dim();
    let dx = maps.dx();
    let x = maps.x_map().as_slice().expect("standard layout");
    let y = maps.y_map().as_slice().expect("standard layout");
    let mut rhs = vec![0.0f64; dx * d];
    rhs.par_chunks_mut(d).enumerate().for_each(|(u, out)| {
        for &(_, v, w) in c.row(u) {
            let yr = &y[v as usize * d..(v as usize + 1) * d];
            for (o, &q) in out.iter_mut().zip(yr) {
                *o += w * q;
            }
        }
        if alpha != 0.0 {
            if let Some(r) = rx {
                for &(_, u2, s) in r.row(u) {
                    let k = 2.0 * alpha * s;
                    let xr = &x[u2 as usize * d..(u2 as usize + 1) * d];
                    for (o, &q) in out.iter_mut().zip(xr) {
                        *o += k * q;
                    }
                }
            }
        }
    });
    Array2::from_shape_vec((dx, d), rhs).expect("shape")
}

fn assemble_rhs_y(
    c: &CrossCovariance,
    maps: &MappingPair,
    ry: Option<&KnowledgeMatrix>,
    beta: f64,
) -> Array2<f64> {
    let d = maps.latent_dim();
    let dy = maps.dy();
    let x = maps.x_map().as_slice().expect("standard layout");
    let y = maps.y_map().as_slice().expect("standard layout");
    let mut rhs = vec![0.0f64; dy * d];
    rhs.par_chunks_mut(d).enumerate().for_each(|(v, out)| {
        for &(u, _, w) in c.col(v) {
            let xr = &x[u as usize * d..(u as usize + 1) * d];
            for (o, &q) in out.iter_mut().zip(xr) {
                *o += w * q;
            }
        }
        if beta != 0.0 {
            if let Some(r) = ry {
                for &(_, v2, s) in r.row(v) {
                    let k = 2.0 * beta * s;
                    let yr = &y[v2 as usize * d..(v2 as usize + 1) * d];
                    for (o, &q) in out.iter_mut().zip(yr) {
                        *o += k * q;
                    }
                }
            }
        }
    });
    Array2::from_shape_vec((dy, d), rhs).expect("shape")
}

fn shifted_gram(g: &Array2<f64>, theta2: f64, shift: f64) -> Array2<f64> {
    let mut a = g * theta2;
    for i in 0..a.nrows() {
        a[[i, i]] += shift;
    }
    a
}

/// One simultaneous coordinate-descent sweep: both sides are refreshed from
/// the same snapshot, each by a shared SPD factorization over all terms.
pub fn cd_sweep(
    c: &CrossCovariance,
    maps: &MappingPair,
    rx: Option<&KnowledgeMatrix>,
    ry: Option<&KnowledgeMatrix>,
    config: &TrainConfig,
) -> Result<MappingPair> {
    config.validate()?;
    check_dims(c, maps, rx, ry)?;
    let gx = gram(maps.x_map());
    let gy = gram(maps.y_map());
    cd_sweep_with_grams(c, maps, rx, ry, config, &gx, &gy)
}

fn cd_sweep_with_grams(
    c: &CrossCovariance,
    maps: &MappingPair,
    rx: Option<&KnowledgeMatrix>,
    ry: Option<&KnowledgeMatrix>,
    config: &TrainConfig,
    gx: &Array2<f64>,
    gy: &Array2<f64>,
) -> Result<MappingPair> {
    let system_x = shifted_gram(gy, config.theta2, config.lambda2);
    let system_y = shifted_gram(gx, config.theta2, config.rho2);
    let rhs_x = assemble_rhs_x(c, maps, rx, config.alpha);
    let rhs_y = assemble_rhs_y(c, maps, ry, config.beta);
    let new_x = Cholesky::factor(&system_x)?.solve_rows(&rhs_x);
    let new_y = Cholesky::factor(&system_y)?.solve_rows(&rhs_y);
    MappingPair::from_maps(new_x, new_y)
}

/// Sequential two-block variant of [`cd_sweep`]: the query side is refreshed
/// first and the document side is then solved against the refreshed rows.
///
/// With alpha = beta = 0 each half is the exact minimizer of its block, so the
/// objective never increases across this sweep.
pub fn cd_sweep_sequential(
    c: &CrossCovariance,
    maps: &MappingPair,
    rx: Option<&KnowledgeMatrix>,
    ry: Option<&KnowledgeMatrix>,
    config: &TrainConfig,
) -> Result<MappingPair> {
    config.validate()?;
    check_dims(c, maps, rx, ry)?;
    let gy = gram(maps.y_map());
    let system_x = shifted_gram(&gy, config.theta2, config.lambda2);
    let rhs_x = assemble_rhs_x(c, maps, rx, config.alpha);
    let new_x = Cholesky::factor(&system_x)?.solve_rows(&rhs_x);
    let half = MappingPair::from_maps(new_x, maps.y_map().clone())?;
    let gx = gram(half.x_map());
    let system_y = shifted_gram(&gx, config.theta2, config.rho2);
    let rhs_y = assemble_rhs_y(c, &half, ry, config.beta);
    let new_y = Cholesky::factor(&system_y)?.solve_rows(&rhs_y);
    MappingPair::from_maps(half.x_map().clone(), new_y)
}

/// One simultaneous gradient step with step size `gamma`, both sides updated
/// from the same snapshot.
pub fn gd_step(
    c: &CrossCovariance,
    maps: &MappingPair,
    rx: Option<&KnowledgeMatrix>,
    ry: Option<&KnowledgeMatrix>,
    config: &TrainConfig,
) -> Result<MappingPair> {
    config.validate()?;
    check_dims(c, maps, rx, ry)?;
    let gx = gram(maps.x_map());
    let gy = gram(maps.y_map());
    gd_step_with_grams(c, maps, rx, ry, config, &gx, &gy)
}

fn gd_step_with_grams(
    c: &CrossCovariance,
    maps: &MappingPair,
    rx: Option<&KnowledgeMatrix>,
    ry: Option<&KnowledgeMatrix>,
    config: &TrainConfig,
    gx: &Array2<f64>,
    gy: &Array2<f64>,
) -> Result<MappingPair> {
    let rhs_x = assemble_rhs_x(c, maps, rx, config.alpha);
    let rhs_y = assemble_rhs_y(c, maps, ry, config.beta);
    let px = matmul_rows(maps.x_map(), gy);
    let py = matmul_rows(maps.y_map(), gx);
    let new_x = descend(maps.x_map(), &rhs_x, &px, config.gamma, config.theta2, config.lambda2);
    let new_y = descend(maps.y_map(), &rhs_y, &py, config.gamma, config.theta2, config.rho2);
    MappingPair::from_maps(new_x, new_y)
}

fn descend(
    m: &Array2<f64>,
    rhs: &Array2<f64>,
    penalty: &Array2<f64>,
    gamma: f64,
    theta2: f64,
    ridge: f64,
) -> Array2<f64> {
    let ms = m.as_slice().expect("standard layout");
    let rs = rhs.as_slice().expect("standard layout");
    let ps = penalty.as_slice().expect("standard layout");
    let data: Vec<f64> = ms
        .iter()
        .zip(rs)
        .zip(ps)
        .map(|((&mv, &rv), &pv)| mv + gamma * (rv - theta2 * pv - ridge * mv))
        .collect();
    Array2::from_shape_vec(m.dim(), data).expect("shape")
}

/// Trains a mapping pair on the cross covariance, optionally regularized by
/// knowledge matrices and started from an existing pair.
///
/// Stops when the relative objective change drops below `config.tol` or after
/// `config.max_iters` iterations; errors out if |objective| exceeds 1e12.
pub fn train(
    c: &CrossCovariance,
    rx: Option<&KnowledgeMatrix>,
    ry: Option<&KnowledgeMatrix>,
    config: &TrainConfig,
    warm_start: Option<&MappingPair>,
) -> Result<(MappingPair, TrainReport)> {
    config.validate()?;
    let mut maps = init_mappings(config, c.rows(), c.cols(), warm_start)?;
    check_dims(c, &maps, rx, ry)?;
    let mut gx = gram(maps.x_map());
    let mut gy = gram(maps.y_map());
    let mut prev = objective_with_grams(c, &maps, rx, ry, config, &gx, &gy)?;
    let mut trace = vec![prev];
    let mut converged = false;
    let mut iterations = 0;
    let start = Instant::now();
    for t in 1..=config.max_iters {
        maps = match config.method {
            Method::Coordinate => cd_sweep_with_grams(c, &maps, rx, ry, config, &gx, &gy)?,
            Method::Gradient => gd_step_with_grams(c, &maps, rx, ry, config, &gx, &gy)?,
        };
        gx = gram(maps.x_map());
        gy = gram(maps.y_map());
        let f = objective_with_grams(c, &maps, rx, ry, config, &gx, &gy)?;
        trace.push(f);
        iterations = t;
        // only the gradient path diverges by overshooting; coordinate descent
        // may grow without bound legitimately when theta2 = 0 (the degenerate
        // regime), so the bound is not policed there
        if config.method == Method::Gradient && f.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Divergence { objective: f });
        }
        let rel = (f - prev).abs() / prev.abs().max(1e-12);
        log::info!("iteration {t}: objective {f:.6e}, relative change {rel:.3e}");
        prev = f;
        if rel < config.tol {
            converged = true;
            break;
        }
    }
    let report = TrainReport {
        objective_trace: trace,
        iterations,
        converged,
        wall_clock_per_iter: start.elapsed().as_secs_f64() / iterations.max(1) as f64,
    };
    Ok((maps, report))
}

/// Writes a model file: magic `LMM1`, little-endian u32 version, u64 latent
/// and vocabulary dimensions, both maps as row-major (d × terms) f64 blocks,
/// then the u64 length-prefixed UTF-8 vocabulary path.
pub fn write_model(path: &Path, maps: &MappingPair, vocab_path: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"LMM1")?;
    w.write_all(&1u32.to_le_bytes())?;
    w.write_all(&(maps.latent_dim() as u64).to_le_bytes())?;
    w.write_all(&(maps.dx() as u64).to_le_bytes())?;
    w.write_all(&(maps.dy() as u64).to_le_bytes())?;
    write_transposed(&mut w, maps.x_map())?;
    write_transposed(&mut w, maps.y_map())?;
    let vb = vocab_path.as_bytes();
    w.write_all(&(vb.len() as u64).to_le_bytes())?;
    w.write_all(vb)?;
    w.flush()?;
    Ok(())
}

fn write_transposed<W: Write>(w: &mut W, m: &Array2<f64>) -> Result<()> {
    for i in 0..m.ncols() {
        for u in 0..m.nrows() {
            w.write_all(&m[[u, i]].to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a model file written by [`write_model`]; returns the mappings and the
/// recorded vocabulary path.
pub fn read_model(path: &Path) -> Result<(MappingPair, String)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != b"LMM1" {
        return Err(Error::InvalidArgument(format!(
            "{}: not a model file (bad magic)",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != 1 {
        return Err(Error::InvalidArgument(format!(
            "{}: unsupported model version {version}",
            path.display()
        )));
    }
    let d = read_u64(&mut r)? as usize;
    let dx = read_u64(&mut r)? as usize;
    let dy = read_u64(&mut r)? as usize;
    if d == 0 || dx == 0 || dy == 0 {
        return Err(Error::InvalidArgument(format!(
            "{}: degenerate model dimensions {d}x{dx}/{dy}",
            path.display()
        )));
    }
    let x_map = read_transposed(&mut r, d, dx)?;
    let y_map = read_transposed(&mut r, d, dy)?;
    let len = read_u64(&mut r)? as usize;
    let mut vb = vec![0u8; len];
    r.read_exact(&mut vb)?;
    let vocab_path = String::from_utf8(vb).map_err(|_| {
        Error::InvalidArgument(format!("{}: vocabulary path is not UTF-8", path.display()))
    })?;
    Ok((MappingPair::from_maps(x_map, y_map)?, vocab_path))
}

fn read_transposed<R: Read>(r: &mut R, d: usize, terms: usize) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((terms, d));
    for i in 0..d {
        for u in 0..terms {
            m[[u, i]] = read_f64(r)?;
        }
    }
    Ok(m)
}
