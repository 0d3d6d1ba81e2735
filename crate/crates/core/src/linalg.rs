//! Dense numerics for the trainer: parallel Gram products, a Cholesky-based
//! symmetric positive definite multi-RHS solver, and a Jacobi eigensolver for
//! small symmetric matrices.
//!
//! Every parallel routine here partitions its *output*: each output element is
//! produced by exactly one task with a fixed sequential inner loop, so results
//! are bitwise identical for any worker count.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Fixed chunk size for parallel accumulation; reductions run in chunk order
/// so results do not depend on the worker count.
pub(crate) const ACC_CHUNK: usize = 1024;

/// Gᵀ·G for `m` of shape (n, d): returns the d×d matrix mᵀ·m.
pub fn gram(m: &Array2<f64>) -> Array2<f64> {
    let (n, d) = m.dim();
    let ms = m.as_slice().expect("standard layout");
    let mut g = Array2::zeros((d, d));
    if d == 0 {
        return g;
    }
    g.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(i, out_row)| {
            for u in 0..n {
                let a = ms[u * d + i];
                if a != 0.0 {
                    let row = &ms[u * d..u * d + d];
                    for (o, &v) in out_row.iter_mut().zip(row) {
                        *o += a * v;
                    }
                }
            }
        });
    g
}

/// a·b for `a` of shape (n, d) and square `b` of shape (d, d); parallel over
/// rows of the output.
pub fn matmul_rows(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, d) = a.dim();
    assert_eq!(b.dim(), (d, d), "b must be d x d");
    let asl = a.as_slice().expect("standard layout");
    let bsl = b.as_slice().expect("standard layout");
    let mut out = Array2::zeros((n, d));
    if d == 0 {
        return out;
    }
    out.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(i, out_row)| {
            let arow = &asl[i * d..i * d + d];
            for (k, &aik) in arow.iter().enumerate() {
                if aik != 0.0 {
                    let brow = &bsl[k * d..k * d + d];
                    for (o, &bkj) in out_row.iter_mut().zip(brow) {
                        *o += aik * bkj;
                    }
                }
            }
        });
    out
}

/// Sum of f(item) over `items`, parallel over fixed-size chunks reduced in
/// chunk order — identical for any worker count.
pub fn chunked_sum<T: Sync>(items: &[T], chunk: usize, f: impl Fn(&T) -> f64 + Sync) -> f64 {
    items
        .par_chunks(chunk.max(1))
        .map(|c| c.iter().map(&f).sum::<f64>())
        .collect::<Vec<f64>>()
        .into_iter()
        .sum()
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub struct Cholesky {
    l: Vec<f64>,
    d: usize,
}

impl Cholesky {
    /// Factors A = L·Lᵀ. Fails with a numerical error on non-finite input or a
    /// non-positive pivot (A not positive definite).
    pub fn factor(a: &Array2<f64>) -> Result<Self> {
        let (d, d2) = a.dim();
        if d != d2 {
            return Err(Error::DimensionMismatch(format!("matrix is {d}x{d2}, not square")));
        }
        let asl = a.as_slice().expect("standard layout");
        if !asl.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite entry in SPD matrix".into()));
        }
        let mut l = vec![0.0f64; d * d];
        for i in 0..d {
            for j in 0..=i {
                let mut s = asl[i * d + j];
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::Numerical(format!(
                            "matrix is not positive definite (pivot {s:.3e} at {i})"
                        )));
                    }
                    l[i * d + i] = s.sqrt();
                } else {
                    l[i * d + j] = s / l[j * d + j];
                }
            }
        }
        Ok(Cholesky { l, d })
    }

    /// Solves A·x = b in place via forward then backward substitution.
    #[allow(clippy::needless_range_loop)] // triangular index arithmetic reads clearer raw
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let d = self.d;
        debug_assert_eq!(b.len(), d);
        for i in 0..d {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * d + k] * b[k];
            }
            b[i] = s / self.l[i * d + i];
        }
        for i in (0..d).rev() {
            let mut s = b[i];
            for k in i + 1..d {
                s -= self.l[k * d + i] * b[k];
            }
            b[i] = s / self.l[i * d + i];
        }
    }

    /// Solves A·xᵀ = bᵀ row-wise: each row of `bt` is one right-hand side.
    /// Rows are independent, so they solve in parallel after the one shared
    /// factorization.
    pub fn solve_rows(&self, bt: &Array2<f64>) -> Array2<f64> {
        let (n, d) = bt.dim();
        assert_eq!(d, self.d, "rhs width must equal the factored dimension");
        let mut out = bt.clone();
        out.as_slice_mut()
            .expect("standard layout")
            .par_chunks_mut(d.max(1))
            .take(n)
            .for_each(|row| self.solve_in_place(row));
        out
    }
}

/// Solves A·X = B for symmetric positive definite A (d×d) and B (d×k),
/// factoring A once and solving the k columns in parallel.
pub fn solve_spd_multi_rhs(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let (d, _) = a.dim();
    let (bd, _k) = b.dim();
    if bd != d {
        return Err(Error::DimensionMismatch(format!(
            "A is {d}x{d} but B has {bd} rows"
        )));
    }
    if !b.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in right-hand side".into()));
    }
    let chol = Cholesky::factor(a)?;
    let bt = b.t().as_standard_layout().to_owned();
    let xt = chol.solve_rows(&bt);
    Ok(xt.t().as_standard_layout().to_owned())
}

/// Eigenvalues of a small symmetric matrix by the cyclic Jacobi method,
/// sorted descending. Intended for measurement in tests (d up to ~100).
pub fn symmetric_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let (d, d2) = a.dim();
    assert_eq!(d, d2, "matrix must be square");
    let mut m = a.clone();
    // normalize so the squared entries below cannot overflow even for inputs
    // near the top of the f64 range; rotations are scale-invariant
    let max_abs = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if max_abs == 0.0 {
        return vec![0.0; d];
    }
    m.mapv_inplace(|v| v / max_abs);
    let scale: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..d {
            for j in i + 1..d {
                off += m[[i, j] ] * m[[i, j]];
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..d {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..d).map(|i| m[[i, i]] * max_abs).collect();
    eigs.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
    eigs
}

/// Singular values of `m` (any shape), sorted descending, via the eigenvalues
/// of the smaller Gram matrix.
pub fn singular_values(m: &Array2<f64>) -> Vec<f64> {
    let (r, c) = m.dim();
    let g = if r <= c {
        // m·mᵀ
        gram(&m.t().as_standard_layout().to_owned())
    } else {
        gram(m)
    };
    symmetric_eigenvalues(&g)
        .into_iter()
        .map(|e| e.max(0.0).sqrt())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gram_matches_hand_product() {
        let m = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let g = gram(&m);
        // mᵀm = [[35, 44], [44, 56]]
        assert_eq!(g, array![[35.0, 44.0], [44.0, 56.0]]);
    }

    #[test]
    fn matmul_rows_matches_ndarray() {
        let a = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]];
        let b = array![[2.0, 1.0], [-1.0, 4.0]];
        let ours = matmul_rows(&a, &b);
        let theirs = a.dot(&b);
        assert!(ours.iter().zip(theirs.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let a = Array2::eye(3);
        let b = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let x = solve_spd_multi_rhs(&a, &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn scaled_identity_solve_scales_rhs() {
        let a = Array2::eye(4) * 2.0;
        let b = Array2::ones((4, 3));
        let x = solve_spd_multi_rhs(&a, &b).unwrap();
        assert!(x.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn spd_solve_meets_residual_contract() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let d = 8;
        let m = Array2::from_shape_fn((d, d), |_| rng.random::<f64>() - 0.5);
        let a = gram(&m) + Array2::<f64>::eye(d) * 0.5; // SPD by construction
        let b = Array2::from_shape_fn((d, 5), |_| rng.random::<f64>() - 0.5);
        let x = solve_spd_multi_rhs(&a, &b).unwrap();
        let resid = (&a.dot(&x) - &b).iter().map(|v| v * v).sum::<f64>().sqrt();
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(resid / bnorm < 1e-10, "relative residual {}", resid / bnorm);
    }

    #[test]
    fn non_spd_matrix_is_a_numerical_error() {
        let a = array![[1.0, 2.0], [2.0, 1.0]]; // eigenvalues 3, -1
        let b = Array2::ones((2, 1));
        assert!(matches!(
            solve_spd_multi_rhs(&a, &b),
            Err(crate::error::Error::Numerical(_))
        ));
    }

    #[test]
    fn non_finite_rhs_is_a_numerical_error() {
        let a = Array2::eye(2);
        let mut b = Array2::ones((2, 1));
        b[[0, 0]] = f64::NAN;
        assert!(matches!(
            solve_spd_multi_rhs(&a, &b),
            Err(crate::error::Error::Numerical(_))
        ));
    }

    #[test]
    fn jacobi_eigenvalues_match_known_spectrum() {
        let a = array![[2.0, 1.0], [1.0, 2.0]]; // eigenvalues 3, 1
        let e = symmetric_eigenvalues(&a);
        assert!((e[0] - 3.0).abs() < 1e-12);
        assert!((e[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_values_of_diagonal() {
        let m = array![[3.0, 0.0], [0.0, -4.0], [0.0, 0.0]];
        let s = singular_values(&m);
        assert!((s[0] - 4.0).abs() < 1e-12);
        assert!((s[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn chunked_sum_is_chunk_invariant_to_worker_count() {
        let items: Vec<f64> = (0..10_000).map(|i| (i as f64) * 0.1).collect();
        let one = chunked_sum(&items, 1024, |x| x * 1.5);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let four = pool.install(|| chunked_sum(&items, 1024, |x| x * 1.5));
        assert_eq!(one.to_bits(), four.to_bits());
    }
}
