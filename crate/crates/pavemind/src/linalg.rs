//! Small dense-matrix helpers used by the numeric kernels.
//!
//! Everything here is sized for the problems in this crate (dozens to a few
//! hundred rows), so the implementations favour clarity and determinism over
//! asymptotics: row-major storage, straightforward elimination, no dynamic
//! dispatch.

use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `y = A^T x` without materialising the transpose.
    pub fn matvec_t(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.rows);
        let mut y = vec![S::zero(); self.cols];
        for r in 0..self.rows {
            let xr = x[r];
            let row = self.row(r);
            for c in 0..self.cols {
                y[c] += row[c] * xr;
            }
        }
        y
    }

    /// Rank-one accumulation `A += u v^T`.
    pub fn add_outer(&mut self, u: &[S], v: &[S]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for r in 0..self.rows {
            let ur = u[r];
            let row = self.row_mut(r);
            for c in 0..v.len() {
                row[c] += ur * v[c];
            }
        }
    }
}

/// Dot product with four independent accumulators. The explicit unroll fixes
/// the summation order (deterministic output) while still giving the compiler
/// instruction-level parallelism on the hot DQN/LSTM paths.
pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4 * 4;
    let mut s0 = S::zero();
    let mut s1 = S::zero();
    let mut s2 = S::zero();
    let mut s3 = S::zero();
    let mut i = 0;
    while i < chunks {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        i += 4;
    }
    let mut tail = S::zero();
    while i < n {
        tail += a[i] * b[i];
        i += 1;
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

/// A pivot too small to divide by, reported with the column it occurred in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct SingularColumn(pub usize);

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
///
/// Returns the offending column when a pivot is numerically zero (relative to
/// the largest entry of `A`), which callers translate into their own
/// rank-deficiency errors.
pub(crate) fn solve<S: Scalar>(a: &Matrix<S>, b: &[S]) -> Result<Vec<S>, SingularColumn> {
    let n = a.rows();
    debug_assert_eq!(a.cols(), n);
    debug_assert_eq!(b.len(), n);

    let mut m = a.clone();
    let mut rhs = b.to_vec();
    let scale = m
        .as_slice()
        .iter()
        .fold(S::zero(), |acc, v| acc.max(v.abs()))
        .max(S::one());
    let tol = S::epsilon() * scale * S::of(n as f64 * 16.0);

    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_abs = m.get(col, col).abs();
        for r in col + 1..n {
            let v = m.get(r, col).abs();
            if v > pivot_abs {
                pivot_abs = v;
                pivot_row = r;
            }
        }
        if pivot_abs <= tol {
            return Err(SingularColumn(col));
        }
        if pivot_row != col {
            for c in 0..n {
                let tmp = m.get(col, c);
                m.set(col, c, m.get(pivot_row, c));
                m.set(pivot_row, c, tmp);
            }
            rhs.swap(col, pivot_row);
        }
        let pivot = m.get(col, col);
        for r in col + 1..n {
            let factor = m.get(r, col) / pivot;
            if factor == S::zero() {
                continue;
            }
            for c in col..n {
                let v = m.get(r, c) - factor * m.get(col, c);
                m.set(r, c, v);
            }
            let nv = rhs[r] - factor * rhs[col];
            rhs[r] = nv;
        }
    }

    let mut x = vec![S::zero(); n];
    for col in (0..n).rev() {
        let mut acc = rhs[col];
        for c in col + 1..n {
            acc = acc - m.get(col, c) * x[c];
        }
        x[col] = acc / m.get(col, col);
    }
    Ok(x)
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
/// or `None` when the matrix is not positive definite.
pub(crate) fn cholesky<S: Scalar>(a: &Matrix<S>) -> Option<Matrix<S>> {
    let n = a.rows();
    debug_assert_eq!(a.cols(), n);
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            for k in 0..j {
                sum = sum - l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if sum <= S::zero() {
                    return None;
                }
                l.set(i, j, sum.sqrt());
            } else {
                l.set(i, j, sum / l.get(j, j));
            }
        }
    }
    Some(l)
}

/// Solves `L L^T x = b` given the lower Cholesky factor.
pub(crate) fn cholesky_solve<S: Scalar>(l: &Matrix<S>, b: &[S]) -> Vec<S> {
    let n = l.rows();
    let mut y = vec![S::zero(); n];
    for i in 0..n {
        let mut acc = b[i];
        for k in 0..i {
            acc = acc - l.get(i, k) * y[k];
        }
        y[i] = acc / l.get(i, i);
    }
    let mut x = vec![S::zero(); n];
    for i in (0..n).rev() {
        let mut acc = y[i];
        for k in i + 1..n {
            acc = acc - l.get(k, i) * x[k];
        }
        x[i] = acc / l.get(i, i);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_matches_hand_computation() {
        let a = Matrix::from_fn(2, 3, |r, c| (r * 3 + c) as f64);
        assert_eq!(a.matvec(&[1.0, 1.0, 1.0]), vec![3.0, 12.0]);
        assert_eq!(a.matvec_t(&[1.0, 2.0]), vec![6.0, 9.0, 12.0]);
    }

    #[test]
    fn dot_handles_all_lengths() {
        for n in 0..9 {
            let a: Vec<f64> = (0..n).map(|i| i as f64 + 1.0).collect();
            let expected: f64 = a.iter().map(|v| v * v).sum();
            assert_eq!(dot(&a, &a), expected);
        }
    }

    #[test]
    fn solve_recovers_known_solution() {
        // A = [[2,1],[1,3]], x = [1, -2] -> b = [0, -5]
        let a: Matrix<f64> = Matrix::from_fn(2, 2, |r, c| [[2.0, 1.0], [1.0, 3.0]][r][c]);
        let x = solve(&a, &[0.0, -5.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn solve_reports_singular_column() {
        // Second column is a copy of the first.
        let a: Matrix<f64> = Matrix::from_fn(2, 2, |r, _| if r == 0 { 1.0 } else { 2.0 });
        assert_eq!(solve(&a, &[1.0, 2.0]), Err(SingularColumn(1)));
    }

    #[test]
    fn cholesky_round_trips() {
        let a: Matrix<f64> = Matrix::from_fn(2, 2, |r, c| [[4.0, 2.0], [2.0, 3.0]][r][c]);
        let l = cholesky(&a).unwrap();
        let x = cholesky_solve(&l, &[10.0, 8.0]);
        // Verify A x = b.
        let b = a.matvec(&x);
        assert!((b[0] - 10.0).abs() < 1e-12);
        assert!((b[1] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a: Matrix<f64> = Matrix::from_fn(2, 2, |r, c| if r == c { -1.0 } else { 0.0 });
        assert!(cholesky(&a).is_none());
    }

    proptest::proptest! {
        // Diagonally dominant matrices are well conditioned, so a solve
        // followed by a matvec must reproduce the right-hand side.
        #[test]
        fn solve_round_trips_on_diagonally_dominant_systems(
            n in 1usize..6,
            raw in proptest::collection::vec(-1.0f64..1.0, 36),
            b in proptest::collection::vec(-10.0f64..10.0, 6),
        ) {
            let a: Matrix<f64> = Matrix::from_fn(n, n, |r, c| {
                let v = raw[r * 6 + c];
                if r == c { v + (n as f64) * 2.0 } else { v }
            });
            let x = solve(&a, &b[..n]).unwrap();
            let back = a.matvec(&x);
            for (got, want) in back.iter().zip(&b[..n]) {
                proptest::prop_assert!((got - want).abs() < 1e-9);
            }
        }
    }
}
