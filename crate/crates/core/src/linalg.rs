//! Dense and sparse linear algebra used by the potential-theoretic solvers.
//!
//! Everything here is small and self-contained: a row-major dense matrix with
//! partial-pivoting LU, a CSR matrix, a banded matrix (LU without pivoting and
//! the GTH stationary solver) and a Jacobi-preconditioned BiCGSTAB.

use crate::error::{Error, Result};
use crate::real::Real;

/// Largest system solved with dense LU by [`solve_sparse`].
pub const DENSE_MAX: usize = 1000;
/// Banded elimination is used while `n * kl * ku` stays below this.
pub const BAND_WORK_MAX: f64 = 2e10;
const BICGSTAB_MAX_ITER: usize = 200_000;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch { expected: c, got: row.len() });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch { expected: self.cols, got: other.rows });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch { expected: self.cols, got: x.len() });
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect())
    }

    /// Submatrix with the given row and column index lists.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut out = Self::zeros(rows.len(), cols.len());
        for (i, &r) in rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                out[(i, j)] = self[(r, c)];
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn lu(&self) -> Result<Lu<T>> {
        Lu::new(self.clone())
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        self.lu()?.solve(b)
    }
}

impl<T> std::ops::Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for DenseMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorisation with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    lu: DenseMatrix<T>,
    perm: Vec<usize>,
}

impl<T: Real> Lu<T> {
    fn new(mut a: DenseMatrix<T>) -> Result<Self> {
        let n = a.rows;
        if n != a.cols {
            return Err(Error::DimensionMismatch { expected: n, got: a.cols });
        }
        let scale = a.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pv) = (k..n)
                .map(|i| (i, a[(i, k)].abs()))
                .fold((k, T::zero()), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pv <= scale * T::epsilon() * T::of(n.max(1)) {
                return Err(Error::Singular(format!("zero pivot in column {k}")));
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    a.data.swap(p * n + j, k * n + j);
                }
            }
            let piv = a[(k, k)];
            for i in k + 1..n {
                let l = a[(i, k)] / piv;
                a[(i, k)] = l;
                if l == T::zero() {
                    continue;
                }
                for j in k + 1..n {
                    let u = a[(k, j)];
                    a[(i, j)] -= l * u;
                }
            }
        }
        Ok(Self { lu: a, perm })
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        let n = self.lu.rows;
        if b.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: b.len() });
        }
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        Ok(x)
    }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct CsrMatrix<T> {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut trip: Vec<(usize, usize, T)>) -> Self {
        trip.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(trip.len());
        let mut values: Vec<T> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            assert!(r < n_rows && c < n_cols, "triplet out of range");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n_rows, n_cols, row_ptr, col_idx, values }
    }

    /// Assembles row by row; each row must already be sorted by column.
    pub fn from_sorted_rows(n_cols: usize, rows: impl IntoIterator<Item = Vec<(usize, T)>>) -> Self {
        let mut row_ptr = vec![0usize];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            for (c, v) in row {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self { n_rows: row_ptr.len() - 1, n_cols, row_ptr, col_idx, values }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => T::zero(),
        }
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n_rows).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.n_cols);
        (0..self.n_rows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `x^T A`, i.e. the action on measures.
    pub fn vec_mul(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.n_rows);
        let mut out = vec![T::zero(); self.n_cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            for (j, v) in self.row(i) {
                out[j] += xi * v;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![T::zero(); self.nnz()];
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                let k = next[j];
                col_idx[k] = i;
                values[k] = v;
                next[j] += 1;
            }
        }
        Self { n_rows: self.n_cols, n_cols: self.n_rows, row_ptr: counts, col_idx, values }
    }

    /// `shift * I + scale * A` for square `A`.
    pub fn shifted(&self, shift: T, scale: T) -> Self {
        let rows = (0..self.n_rows).map(|i| {
            let mut row: Vec<(usize, T)> = self.row(i).map(|(j, v)| (j, scale * v)).collect();
            match row.binary_search_by_key(&i, |e| e.0) {
                Ok(k) => row[k].1 += shift,
                Err(k) => row.insert(k, (i, shift)),
            }
            row
        });
        Self::from_sorted_rows(self.n_cols, rows)
    }

    /// Principal submatrix on `idx` (sorted, distinct).
    pub fn principal(&self, idx: &[usize]) -> Self {
        let mut local = vec![usize::MAX; self.n_cols];
        for (k, &i) in idx.iter().enumerate() {
            local[i] = k;
        }
        let rows = idx.iter().map(|&i| {
            self.row(i)
                .filter_map(|(j, v)| (local[j] != usize::MAX).then(|| (local[j], v)))
                .collect()
        });
        Self::from_sorted_rows(idx.len(), rows)
    }

    /// Lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for i in 0..self.n_rows {
            for (j, _) in self.row(i) {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut d = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }

    pub fn to_band(&self) -> BandMatrix<T> {
        let (kl, ku) = self.bandwidths();
        let mut b = BandMatrix::zeros(self.n_rows, kl, ku);
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                b.set(i, j, v);
            }
        }
        b
    }

    fn inf_norm(&self) -> T {
        (0..self.n_rows)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }
}

/// Square banded matrix with `kl` sub- and `ku` super-diagonals.
#[derive(Clone, Debug)]
pub struct BandMatrix<T> {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<T>,
}

impl<T: Real> BandMatrix<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self { n, kl, ku, data: vec![T::zero(); n * (kl + ku + 1)] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        if j + self.kl < i || j > i + self.ku {
            T::zero()
        } else {
            self.data[self.idx(i, j)]
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    /// In-place LU without pivoting. Stable for diagonally dominant and
    /// M-matrices, which is all this crate feeds it.
    pub fn factor_in_place(&mut self) -> Result<()> {
        let n = self.n;
        for k in 0..n {
            let piv = self.get(k, k);
            if piv == T::zero() || !piv.is_finite() {
                return Err(Error::Singular(format!("zero pivot at {k}")));
            }
            let imax = (k + self.kl + 1).min(n);
            let jmax = (k + self.ku + 1).min(n);
            for i in k + 1..imax {
                let ik = self.idx(i, k);
                let l = self.data[ik] / piv;
                self.data[ik] = l;
                if l == T::zero() {
                    continue;
                }
                for j in k + 1..jmax {
                    let kj = self.data[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.data[ij] -= l * kj;
                }
            }
        }
        Ok(())
    }

    /// Solves with a matrix previously passed through [`Self::factor_in_place`].
    pub fn solve_factored(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(self.kl);
            let mut s = x[i];
            for j in lo..i {
                s -= self.data[self.idx(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + self.ku + 1).min(n);
            let mut s = x[i];
            for j in i + 1..hi {
                s -= self.data[self.idx(i, j)] * x[j];
            }
            x[i] = s / self.data[self.idx(i, i)];
        }
        x
    }

    /// Stationary distribution of the generator stored in `self` by the
    /// Grassmann-Taksar-Heyman state reduction. Diagonal entries are ignored.
    pub fn gth_stationary(mut self) -> Result<Vec<T>> {
        let n = self.n;
        let mut out_rate = vec![T::zero(); n];
        for k in (1..n).rev() {
            let jlo = k.saturating_sub(self.kl);
            let s: T = (jlo..k).map(|j| self.data[self.idx(k, j)]).sum();
            if s <= T::zero() {
                return Err(Error::Singular(format!("generator reducible at state {k}")));
            }
            out_rate[k] = s;
            let ilo = k.saturating_sub(self.ku);
            for i in ilo..k {
                let qik = self.data[self.idx(i, k)];
                if qik == T::zero() {
                    continue;
                }
                let f = qik / s;
                for j in jlo..k {
                    if j == i {
                        continue;
                    }
                    let qkj = self.data[self.idx(k, j)];
                    if qkj != T::zero() {
                        let ij = self.idx(i, j);
                        self.data[ij] += f * qkj;
                    }
                }
            }
        }
        let mut pi = vec![T::zero(); n];
        pi[0] = T::one();
        for k in 1..n {
            let ilo = k.saturating_sub(self.ku);
            let s: T = (ilo..k).map(|i| pi[i] * self.data[self.idx(i, k)]).sum();
            pi[k] = s / out_rate[k];
        }
        let total: T = pi.iter().copied().sum();
        for p in &mut pi {
            *p /= total;
        }
        Ok(pi)
    }
}

/// Normwise backward error `|Ax-b|_inf / (|A|_inf |x|_inf + |b|_inf)`.
pub fn backward_error<T: Real>(a: &CsrMatrix<T>, x: &[T], b: &[T]) -> T {
    let ax = a.mul_vec(x);
    let r = ax.iter().zip(b).map(|(&p, &q)| (p - q).abs()).fold(T::zero(), T::max);
    let xn = x.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    let bn = b.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    let den = a.inf_norm() * xn + bn;
    if den == T::zero() {
        T::zero()
    } else {
        r / den
    }
}

/// Jacobi-preconditioned BiCGSTAB with relative residual tolerance `tol`.
pub fn bicgstab<T: Real>(a: &CsrMatrix<T>, b: &[T], tol: T) -> Result<Vec<T>> {
    let n = b.len();
    let dinv: Vec<T> = a
        .diagonal()
        .into_iter()
        .map(|d| if d == T::zero() { T::one() } else { T::one() / d })
        .collect();
    let dot = |u: &[T], v: &[T]| -> T { u.iter().zip(v).map(|(&p, &q)| p * q).sum() };
    let norm = |u: &[T]| dot(u, u).sqrt();
    let bnorm = norm(b);
    let mut x = vec![T::zero(); n];
    if bnorm == T::zero() {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (T::one(), T::one(), T::one());
    let mut v = vec![T::zero(); n];
    let mut p = vec![T::zero(); n];
    for it in 0..BICGSTAB_MAX_ITER {
        let rho_new = dot(&r0, &r);
        if rho_new == T::zero() {
            return Err(Error::NoConvergence { iterations: it, residual: (norm(&r) / bnorm).as_f64() });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let y: Vec<T> = p.iter().zip(&dinv).map(|(&a, &d)| a * d).collect();
        v = a.mul_vec(&y);
        alpha = rho / dot(&r0, &v);
        let s: Vec<T> = r.iter().zip(&v).map(|(&ri, &vi)| ri - alpha * vi).collect();
        if norm(&s) / bnorm < tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(x);
        }
        let z: Vec<T> = s.iter().zip(&dinv).map(|(&a, &d)| a * d).collect();
        let t = a.mul_vec(&z);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) / bnorm < tol {
            return Ok(x);
        }
    }
    Err(Error::NoConvergence { iterations: BICGSTAB_MAX_ITER, residual: (norm(&r) / bnorm).as_f64() })
}

/// Solves `A x = b` for a diagonally dominant or M-matrix `A`.
///
/// Small systems use dense LU, banded ones banded elimination, and the rest
/// BiCGSTAB. The result is rejected if its backward error exceeds `tol`.
pub fn solve_sparse<T: Real>(a: &CsrMatrix<T>, b: &[T], tol: T) -> Result<Vec<T>> {
    let n = a.n_rows();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let x = if n <= DENSE_MAX {
        a.to_dense().solve(b)?
    } else {
        let (kl, ku) = a.bandwidths();
        if (n as f64) * (kl as f64) * (ku as f64) <= BAND_WORK_MAX {
            let mut band = a.to_band();
            band.factor_in_place()?;
            band.solve_factored(b)
        } else {
            bicgstab(a, b, tol * T::c(1e-3))?
        }
    };
    let be = backward_error(a, &x, b);
    if !(be <= tol) {
        return Err(Error::Residual { residual: be.as_f64(), tol: tol.as_f64() });
    }
    Ok(x)
}

/// Stationary distribution of an irreducible generator in CSR form.
pub fn stationary_distribution<T: Real>(q: &CsrMatrix<T>) -> Result<Vec<T>> {
    let n = q.n_rows();
    if n == 1 {
        return Ok(vec![T::one()]);
    }
    let (kl, ku) = q.bandwidths();
    if (n as f64) * (kl as f64) * (ku as f64) > BAND_WORK_MAX {
        return Err(Error::InvalidParameter(format!(
            "stationary solve of {n} states with bandwidths ({kl},{ku}) is too large"
        )));
    }
    q.to_band().gth_stationary()
}
