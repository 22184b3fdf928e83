//! Dense row-major matrices and the Cholesky factorization used by the CRF.
//!
//! The graphs handled here have at most a couple of thousand nodes, so a dense
//! `O(n^3)` factorization is used throughout.

use std::ops::{Index, IndexMut};

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Builds a matrix from row-major data.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has wrong length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self::from_row_major(r, c, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        if !self.is_square() {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self[(i, j)] - self[(j, i)]).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    /// `vᵀ M v`.
    pub fn quad_form(&self, v: &[T]) -> T {
        dot(v, &self.mul_vec(v))
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d = *d + a * b;
                }
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Matrix<T>) -> T {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
///
/// The factor keeps the row profile of `A`: if row `i` of the lower triangle
/// of `A` is zero left of column `first[i]`, so is row `i` of `L`. Work is
/// restricted to that envelope, which for graph Laplacians with a locality
/// preserving node order is far smaller than the full triangle.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    lower: Matrix<T>,
    first: Vec<usize>,
}

/// The leading minor at `pivot` was not positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NotPositiveDefinite {
    pub pivot: usize,
}

impl<T: Scalar> Cholesky<T> {
    /// Factorizes a symmetric matrix. Only the lower triangle is read.
    /// No jitter is added: a non-positive pivot is reported as an error.
    pub fn factor(a: &Matrix<T>) -> Result<Self, NotPositiveDefinite> {
        assert!(a.is_square(), "Cholesky needs a square matrix");
        let first = (0..a.rows())
            .map(|i| (0..i).find(|&j| a[(i, j)] != T::zero()).unwrap_or(i))
            .collect();
        Self::factor_with_profile(a, first)
    }

    /// Factorizes with a caller-supplied profile: `first[i] ≤ i` is the
    /// leftmost column of row `i` that may be nonzero. Entries of `A` left of
    /// the profile are treated as zero. A wider profile than necessary is
    /// harmless; it only costs time.
    pub fn factor_with_profile(
        a: &Matrix<T>,
        first: Vec<usize>,
    ) -> Result<Self, NotPositiveDefinite> {
        assert!(a.is_square(), "Cholesky needs a square matrix");
        let n = a.rows();
        assert_eq!(first.len(), n, "profile length differs from dimension");
        assert!(
            first.iter().enumerate().all(|(i, &f)| f <= i),
            "profile past diagonal"
        );
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let fj = first[j];
            let lj = &l.data[j * n + fj..j * n + j];
            let mut d = a[(j, j)] - dot(lj, lj);
            if !(d > T::zero()) || !d.is_finite() {
                return Err(NotPositiveDefinite { pivot: j });
            }
            d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let fi = first[i];
                if fi > j {
                    continue;
                }
                let start = fi.max(fj);
                let (head, tail) = l.data.split_at_mut(i * n);
                let s = dot(&tail[start..j], &head[j * n + start..j * n + j]);
                tail[j] = (a[(i, j)] - s) / d;
            }
        }
        Ok(Self { lower: l, first })
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    pub fn lower(&self) -> &Matrix<T> {
        &self.lower
    }

    /// Leftmost possibly-nonzero column of each row of `L`.
    pub fn profile(&self) -> &[usize] {
        &self.first
    }

    /// `log |A| = 2 Σ log L_ii`, computed without forming the determinant.
    pub fn log_det(&self) -> T {
        let two = T::one() + T::one();
        two * (0..self.dim()).map(|i| self.lower[(i, i)].ln()).sum::<T>()
    }

    /// Solves `L x = b` in place.
    pub fn forward_substitute(&self, b: &mut [T]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        for i in 0..n {
            let f = self.first[i];
            let s = dot(&self.lower.row(i)[f..i], &b[f..i]);
            b[i] = (b[i] - s) / self.lower[(i, i)];
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn backward_substitute(&self, b: &mut [T]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                if self.first[k] <= i {
                    s = s - self.lower[(k, i)] * b[k];
                }
            }
            b[i] = s / self.lower[(i, i)];
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.forward_substitute(&mut x);
        self.backward_substitute(&mut x);
        x
    }

    /// Inverse of the Cholesky factor, `L⁻¹`, which is lower triangular.
    pub fn inverse_lower(&self) -> Matrix<T> {
        let n = self.dim();
        let l = &self.lower;
        let mut inv = Matrix::zeros(n, n);
        for j in 0..n {
            inv[(j, j)] = T::one() / l[(j, j)];
            for i in (j + 1)..n {
                let mut s = T::zero();
                for k in j.max(self.first[i])..i {
                    s = s + l[(i, k)] * inv[(k, j)];
                }
                inv[(i, j)] = -s / l[(i, i)];
            }
        }
        inv
    }

    /// Dense `A⁻¹`.
    pub fn inverse(&self) -> Matrix<T> {
        InverseEntries::new(self).dense()
    }
}

/// Entries of `A⁻¹` on the profile of `L` (which always covers the diagonal
/// and every structurally nonzero entry of `A`), by the Takahashi recurrence
///
/// ```text
/// Z_ij = (δ_ij / L_ii − Σ_{k>i} L_ki Z_kj) / L_ii,    j ≥ i,
/// ```
///
/// run from the last row upwards. The envelope is closed under this
/// recurrence, so nothing outside it is ever needed.
pub struct SelectedInverse<T> {
    // Lower triangle only, indexed (max, min).
    z: Matrix<T>,
    first: Vec<usize>,
}

impl<T: Scalar> SelectedInverse<T> {
    pub fn new(chol: &Cholesky<T>) -> Self {
        let n = chol.dim();
        let l = chol.lower();
        let first = chol.profile().to_vec();
        // below[i]: rows k > i with L_ki inside the profile.
        let mut below: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (k, &f) in first.iter().enumerate() {
            for b in &mut below[f..k] {
                b.push(k);
            }
        }
        let mut z = Matrix::zeros(n, n);
        let at = |z: &Matrix<T>, a: usize, b: usize| {
            if a >= b {
                z[(a, b)]
            } else {
                z[(b, a)]
            }
        };
        for i in (0..n).rev() {
            let lii = l[(i, i)];
            for &j in &below[i] {
                let s = below[i]
                    .iter()
                    .fold(T::zero(), |acc, &k| acc + l[(k, i)] * at(&z, k, j));
                z[(j, i)] = -s / lii;
            }
            let s = below[i]
                .iter()
                .fold(T::zero(), |acc, &k| acc + l[(k, i)] * z[(k, i)]);
            z[(i, i)] = (T::one() / lii - s) / lii;
        }
        Self { z, first }
    }

    /// `(A⁻¹)_pq` if it lies inside the profile.
    pub fn get(&self, p: usize, q: usize) -> Option<T> {
        let (hi, lo) = if p >= q { (p, q) } else { (q, p) };
        (lo >= self.first[hi]).then(|| self.z[(hi, lo)])
    }
}

/// Random access to entries of `A⁻¹ = L⁻ᵀ L⁻¹` without materializing the
/// whole inverse.
pub struct InverseEntries<T> {
    // Columns of L⁻¹ stored as rows of its transpose, so each entry is a dot
    // product of two contiguous slices.
    inv_lower_t: Matrix<T>,
}

impl<T: Scalar> InverseEntries<T> {
    pub fn new(chol: &Cholesky<T>) -> Self {
        let inv = chol.inverse_lower();
        let n = inv.rows();
        let mut t = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                t[(j, i)] = inv[(i, j)];
            }
        }
        Self { inv_lower_t: t }
    }

    /// `(A⁻¹)_pq`.
    pub fn get(&self, p: usize, q: usize) -> T {
        let n = self.inv_lower_t.rows();
        // Column p of L⁻¹ is zero above row p.
        let start = p.max(q);
        dot(
            &self.inv_lower_t.row(p)[start..n],
            &self.inv_lower_t.row(q)[start..n],
        )
    }

    pub fn dense(&self) -> Matrix<T> {
        let n = self.inv_lower_t.rows();
        let mut out = Matrix::zeros(n, n);
        for p in 0..n {
            for q in 0..=p {
                let v = self.get(p, q);
                out[(p, q)] = v;
                out[(q, p)] = v;
            }
        }
        out
    }
}
