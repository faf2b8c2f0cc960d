//! Dense row-major matrices and the handful of kernels the crate needs:
//! batched matrix products for network passes and a Jacobi eigensolver
//! for the covariance work in the metrics.
//!
//! Parallelism only ever splits work across disjoint output rows, so
//! results are bit-identical whether or not rayon kicks in.

use rayon::prelude::*;

use crate::{Error, Result};

/// Row threshold above which the matmul kernels go parallel.
const PAR_ROWS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dim {
                what: "matrix data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, 0));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Dim {
                    what: "row length",
                    expected: cols,
                    got: rows[i].len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Column-wise mean.
    pub fn mean_rows(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (m, v) in mean.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let n = self.rows as f64;
        for m in &mut mean {
            *m /= n;
        }
        mean
    }
}

/// `C = A * B^T` where `a` is `n x k` and `b` is `m x k`.
///
/// This is the shape of a batched forward pass: inputs times a weight
/// matrix stored as `(out, in)`.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.cols, "matmul_nt inner dimensions");
    let (n, k, m) = (a.rows, a.cols, b.rows);
    let mut out = Matrix::zeros(n, m);
    let body = |i: usize, out_row: &mut [f64]| {
        let a_row = &a.data[i * k..(i + 1) * k];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b.data[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            *o = acc;
        }
    };
    if n >= PAR_ROWS {
        out.data
            .par_chunks_mut(m)
            .enumerate()
            .for_each(|(i, row)| body(i, row));
    } else {
        for (i, row) in out.data.chunks_mut(m).enumerate() {
            body(i, row);
        }
    }
    out
}

/// `C = A * B` where `a` is `n x k` and `b` is `k x m`.
pub fn matmul_nn(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.rows, "matmul_nn inner dimensions");
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = Matrix::zeros(n, m);
    let body = |i: usize, out_row: &mut [f64]| {
        let a_row = &a.data[i * k..(i + 1) * k];
        for (l, &a_il) in a_row.iter().enumerate() {
            let b_row = &b.data[l * m..(l + 1) * m];
            for (o, &b_lj) in out_row.iter_mut().zip(b_row) {
                *o += a_il * b_lj;
            }
        }
    };
    if n >= PAR_ROWS {
        out.data
            .par_chunks_mut(m)
            .enumerate()
            .for_each(|(i, row)| body(i, row));
    } else {
        for (i, row) in out.data.chunks_mut(m).enumerate() {
            body(i, row);
        }
    }
    out
}

/// `C = A^T * B` where `a` is `n x k` and `b` is `n x m`.
///
/// This is the shape of a weight gradient: upstream deltas transposed
/// times layer inputs. Parallelism is over rows of `C`, each of which is
/// accumulated sequentially over the batch.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.rows, b.rows, "matmul_tn inner dimensions");
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = Matrix::zeros(k, m);
    let body = |j: usize, out_row: &mut [f64]| {
        for i in 0..n {
            let a_ij = a.data[i * k + j];
            if a_ij == 0.0 {
                continue;
            }
            let b_row = &b.data[i * m..(i + 1) * m];
            for (o, &b_il) in out_row.iter_mut().zip(b_row) {
                *o += a_ij * b_il;
            }
        }
    };
    if n >= PAR_ROWS && k > 1 {
        out.data
            .par_chunks_mut(m)
            .enumerate()
            .for_each(|(j, row)| body(j, row));
    } else {
        for (j, row) in out.data.chunks_mut(m).enumerate() {
            body(j, row);
        }
    }
    out
}

/// Sum over rows: returns a `cols`-length vector.
pub fn column_sums(a: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; a.cols];
    for i in 0..a.rows {
        for (o, v) in out.iter_mut().zip(a.row(i)) {
            *o += v;
        }
    }
    out
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvalues in ascending
/// order and eigenvectors as the corresponding columns.
pub fn sym_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if a.rows != a.cols {
        return Err(Error::Dim {
            what: "symmetric eigen input",
            expected: a.rows,
            got: a.cols,
        });
    }
    let n = a.rows;
    if n == 0 {
        return Ok((Vec::new(), Matrix::zeros(0, 0)));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("symmetric eigen input".into()));
    }
    let mut m = a.clone();
    // Symmetrize to guard against caller round-off.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m.get(i, j) + m.get(j, i));
            m.set(i, j, avg);
            m.set(j, i, avg);
        }
    }
    let mut v = Matrix::identity(n);
    let frob: f64 = m.data.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-14 * frob.max(1e-300);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m.get(i, j).powi(2);
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(i, i).partial_cmp(&m.get(j, j)).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(k, new_col, v.get(k, old_col));
        }
    }
    Ok((eigenvalues, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_shapes_agree_with_naive() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Matrix::from_vec(2, 3, vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5]).unwrap();
        let c = matmul_nt(&a, &b);
        assert_eq!(c.rows(), 2);
        assert_eq!(c.cols(), 2);
        assert_eq!(c.get(0, 0), 1.0 * 1.0 + 2.0 * 0.0 + 3.0 * (-1.0));
        assert_eq!(c.get(1, 1), 0.5 * (4.0 + 5.0 + 6.0));

        let d = matmul_nn(&a, &b.transpose());
        assert_eq!(d, c);

        let e = matmul_tn(&a, &a);
        // e = a^T a, symmetric 3x3
        assert_eq!(e.rows(), 3);
        assert_eq!(e.get(0, 1), e.get(1, 0));
        assert_eq!(e.get(0, 0), 1.0 + 16.0);
    }

    #[test]
    fn jacobi_recovers_diagonal() {
        let a = Matrix::from_vec(3, 3, vec![3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        let (vals, _) = sym_eigen(&a).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 2.0).abs() < 1e-12);
        assert!((vals[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let a = Matrix::from_vec(
            3,
            3,
            vec![2.0, -1.0, 0.3, -1.0, 2.5, 0.7, 0.3, 0.7, 1.2],
        )
        .unwrap();
        let (vals, vecs) = sym_eigen(&a).unwrap();
        // A = V diag(vals) V^T
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += vecs.get(i, k) * vals[k] * vecs.get(j, k);
                }
                assert!((acc - a.get(i, j)).abs() < 1e-10, "({i},{j})");
            }
        }
    }
}
