//! Dense real linear algebra: matrices, symmetric eigendecompositions,
//! Moore-Penrose pseudoinverses, the QR-based Cholesky factorization of
//! information matrices, and exact integer determinants.
//!
//! Everything here is sized for design problems (dimensions up to a few
//! hundred), so the implementations favour robustness over asymptotics:
//! cyclic Jacobi for symmetric eigenproblems, Householder QR, and
//! fraction-free Bareiss elimination for integer determinants.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric within tolerance")]
    NotSymmetric,
    #[error("matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("matrix {0} is rank-deficient")]
    RankDeficient(&'static str),
    #[error("integer overflow during exact elimination")]
    Overflow,
    #[error("singular linear system")]
    Singular,
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Column vector from a slice.
    pub fn col_vec(v: &[f64]) -> Self {
        Matrix { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// self * self^T.
    pub fn gram(&self) -> Matrix {
        self.matmul(&self.transpose())
    }

    pub fn scaled(&self, a: f64) -> Matrix {
        let mut m = self.clone();
        for v in &mut m.data {
            *v *= a;
        }
        m
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut m = self.clone();
        for (v, &o) in m.data.iter_mut().zip(&other.data) {
            *v += o;
        }
        m
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut m = self.clone();
        for (v, &o) in m.data.iter_mut().zip(&other.data) {
            *v -= o;
        }
        m
    }

    /// In-place `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (v, &o) in self.data.iter_mut().zip(&other.data) {
            *v += a * o;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Horizontal concatenation [self, other].
    pub fn hcat(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows);
        let mut m = Matrix::zeros(self.rows, self.cols + other.cols);
        for i in 0..self.rows {
            m.data[i * m.cols..i * m.cols + self.cols].copy_from_slice(self.row(i));
            m.data[i * m.cols + self.cols..(i + 1) * m.cols].copy_from_slice(other.row(i));
        }
        m
    }

    /// Copy of the square sub-block with rows `r0..r0+n`, cols `c0..c0+n`.
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Matrix {
        assert!(r0 + nr <= self.rows && c0 + nc <= self.cols);
        Matrix::from_fn(nr, nc, |i, j| self[(r0 + i, c0 + j)])
    }

    /// Solve `self * x = b` by LU with partial pivoting; `b` may have many columns.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix, LinalgError> {
        assert_eq!(self.rows, self.cols);
        assert_eq!(self.rows, b.rows);
        let n = self.rows;
        let mut lu = self.clone();
        let mut x = b.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[(k, k)].abs();
            for i in k + 1..n {
                let v = lu[(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best < 1e-300 {
                return Err(LinalgError::Singular);
            }
            if p != k {
                piv.swap(p, k);
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
                for j in 0..x.cols {
                    let tmp = x[(k, j)];
                    x[(k, j)] = x[(p, j)];
                    x[(p, j)] = tmp;
                }
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                for j in k + 1..n {
                    lu[(i, j)] -= f * lu[(k, j)];
                }
                for j in 0..x.cols {
                    x[(i, j)] -= f * x[(k, j)];
                }
            }
        }
        for j in 0..x.cols {
            for ii in (0..n).rev() {
                let mut s = x[(ii, j)];
                for k in ii + 1..n {
                    s -= lu[(ii, k)] * x[(k, j)];
                }
                x[(ii, j)] = s / lu[(ii, ii)];
            }
        }
        Ok(x)
    }

    /// Determinant via LU; intended for small well-scaled matrices.
    pub fn det(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut lu = self.clone();
        let mut sign = 1.0;
        for k in 0..n {
            let mut p = k;
            let mut best = lu[(k, k)].abs();
            for i in k + 1..n {
                if lu[(i, k)].abs() > best {
                    best = lu[(i, k)].abs();
                    p = i;
                }
            }
            if best == 0.0 {
                return 0.0;
            }
            if p != k {
                sign = -sign;
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
            }
            for i in k + 1..n {
                let f = lu[(i, k)] / lu[(k, k)];
                for j in k + 1..n {
                    lu[(i, j)] -= f * lu[(k, j)];
                }
            }
        }
        (0..n).fold(sign, |acc, i| acc * lu[(i, i)])
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Symmetric positive semidefinite matrix, validated on construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SymPsd {
    mat: Matrix,
}

impl SymPsd {
    /// Accepts matrices symmetric to 1e-12 relative with eigenvalues
    /// bounded below by -1e-10 times the largest eigenvalue.
    pub fn try_new(mat: Matrix) -> Result<Self, LinalgError> {
        if mat.rows() != mat.cols() {
            return Err(LinalgError::DimensionMismatch("SymPsd requires a square matrix".into()));
        }
        let scale = mat.max_abs().max(1.0);
        for i in 0..mat.rows() {
            for j in 0..i {
                if (mat[(i, j)] - mat[(j, i)]).abs() > 1e-12 * scale {
                    return Err(LinalgError::NotSymmetric);
                }
            }
        }
        let (eigs, _) = sym_eigen(&mat);
        let max_eig = eigs.iter().fold(0.0_f64, |a, &v| a.max(v));
        let min_eig = eigs.iter().fold(f64::INFINITY, |a, &v| a.min(v));
        if min_eig < -1e-10 * max_eig.max(1e-300) {
            return Err(LinalgError::NotPsd(min_eig));
        }
        Ok(SymPsd { mat })
    }

    /// Symmetrizes by construction; panics only on shape mismatch.
    pub fn from_gram_sum(terms: &[(f64, &Matrix)], dim: usize) -> SymPsd {
        let mut m = Matrix::zeros(dim, dim);
        for &(w, a) in terms {
            debug_assert_eq!(a.rows(), dim);
            if w == 0.0 {
                continue;
            }
            for i in 0..dim {
                for j in 0..=i {
                    let mut s = 0.0;
                    for l in 0..a.cols() {
                        s += a[(i, l)] * a[(j, l)];
                    }
                    m[(i, j)] += w * s;
                }
            }
        }
        for i in 0..dim {
            for j in 0..i {
                m[(j, i)] = m[(i, j)];
            }
        }
        SymPsd { mat: m }
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.mat
    }

    pub fn into_matrix(self) -> Matrix {
        self.mat
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi.
///
/// Returns (eigenvalues, V) with `m = V diag(eigs) V^T`; eigenvalues ascending.
pub fn sym_eigen(m: &Matrix) -> (Vec<f64>, Matrix) {
    assert_eq!(m.rows(), m.cols());
    let n = m.rows();
    let mut a = m.clone();
    // symmetrize defensively against 1e-15-level asymmetry in inputs
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut v = Matrix::identity(n);
    let scale = a.max_abs().max(1e-300);
    for _sweep in 0..64 {
        let mut off = 0.0_f64;
        for i in 0..n {
            for j in i + 1..n {
                off = off.max(a[(i, j)].abs());
            }
        }
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-18 * scale {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap());
    let eigs: Vec<f64> = idx.iter().map(|&i| a[(i, i)]).collect();
    let vecs = Matrix::from_fn(n, n, |i, j| v[(i, idx[j])]);
    (eigs, vecs)
}

/// Rank tolerance used throughout: eigenvalues at or below
/// `dim * eps * max_eig` are treated as zero.
pub fn rank_tolerance(dim: usize, max_eig: f64) -> f64 {
    dim as f64 * f64::EPSILON * max_eig.max(0.0)
}

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix via its
/// spectral decomposition.
pub fn pseudo_inverse(m: &SymPsd) -> Matrix {
    let (eigs, v) = sym_eigen(m.matrix());
    let n = m.dim();
    let max_eig = eigs.last().copied().unwrap_or(0.0);
    let tol = rank_tolerance(n, max_eig);
    let mut out = Matrix::zeros(n, n);
    for k in 0..n {
        if eigs[k] <= tol {
            continue;
        }
        let inv = 1.0 / eigs[k];
        for i in 0..n {
            let vik = v[(i, k)];
            if vik == 0.0 {
                continue;
            }
            for j in 0..=i {
                out[(i, j)] += inv * vik * v[(j, k)];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            out[(j, i)] = out[(i, j)];
        }
    }
    out
}

/// Numerical rank of a symmetric PSD matrix under [`rank_tolerance`].
pub fn psd_rank(m: &SymPsd) -> usize {
    let (eigs, _) = sym_eigen(m.matrix());
    let max_eig = eigs.last().copied().unwrap_or(0.0);
    let tol = rank_tolerance(m.dim(), max_eig);
    eigs.iter().filter(|&&e| e > tol).count()
}

/// True iff range(K) is contained in range(M): `||(I - M M^+) K||_F <= tol ||K||_F`.
pub fn range_contains(m: &SymPsd, k: &Matrix, tol: f64) -> Result<bool, LinalgError> {
    if k.rows() != m.dim() {
        return Err(LinalgError::DimensionMismatch(format!(
            "K has {} rows, M is {}x{}",
            k.rows(),
            m.dim(),
            m.dim()
        )));
    }
    let pinv = pseudo_inverse(m);
    let proj = m.matrix().matmul(&pinv); // orthogonal projector onto range(M)
    let resid = k.sub(&proj.matmul(k));
    let knorm = k.frobenius_norm();
    if knorm == 0.0 {
        return Ok(true);
    }
    Ok(resid.frobenius_norm() <= tol * knorm)
}

/// Thin Householder QR of an n x m matrix (m <= n): `input = Q R`,
/// Q n x m with orthonormal columns, R m x m upper triangular.
fn householder_qr(input: &Matrix) -> (Matrix, Matrix) {
    let n = input.rows();
    let m = input.cols();
    assert!(m <= n, "qr expects a tall matrix");
    let mut a = input.clone();
    let mut qfull = Matrix::identity(n);
    for j in 0..m {
        let mut norm = 0.0;
        for i in j..n {
            norm += a[(i, j)] * a[(i, j)];
        }
        norm = norm.sqrt();
        if norm < 1e-300 {
            continue;
        }
        let alpha = if a[(j, j)] >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; n - j];
        v[0] = a[(j, j)] - alpha;
        for i in j + 1..n {
            v[i - j] = a[(i, j)];
        }
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 < 1e-300 {
            continue;
        }
        // apply H = I - 2 v v^T / (v^T v) to A (left) and accumulate into Q
        for col in j..m {
            let mut dot = 0.0;
            for i in j..n {
                dot += v[i - j] * a[(i, col)];
            }
            let f = 2.0 * dot / vnorm2;
            for i in j..n {
                a[(i, col)] -= f * v[i - j];
            }
        }
        for col in 0..n {
            let mut dot = 0.0;
            for i in j..n {
                dot += v[i - j] * qfull[(i, col)];
            }
            let f = 2.0 * dot / vnorm2;
            for i in j..n {
                qfull[(i, col)] -= f * v[i - j];
            }
        }
    }
    // qfull holds H_{m-1}...H_0, so Q = qfull^T restricted to m columns
    let q = Matrix::from_fn(n, m, |i, j| qfull[(j, i)]);
    let mut r = Matrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            r[(i, j)] = a[(i, j)];
        }
    }
    (q, r)
}

/// Absolute threshold below which a diagonal entry of R counts as zero.
const ZERO_ROW_TOL: f64 = 1e-12;

/// QR decomposition with the zero-row normalization: `R_ii >= 0`, and
/// `R_ii = 0` forces the whole row i of R to zero. Givens rotations between
/// row i and rows below restore the property without breaking triangularity.
pub fn qr_zero_row(input: &Matrix) -> (Matrix, Matrix) {
    let (mut q, mut r) = householder_qr(input);
    let m = r.rows();
    let scale = r.max_abs().max(1.0);
    for i in 0..m {
        if r[(i, i)].abs() > ZERO_ROW_TOL * scale {
            continue;
        }
        r[(i, i)] = 0.0;
        for j in i + 1..m {
            let rij = r[(i, j)];
            if rij == 0.0 {
                continue;
            }
            let rjj = r[(j, j)];
            let hyp = (rij * rij + rjj * rjj).sqrt();
            if hyp < 1e-300 {
                r[(i, j)] = 0.0;
                continue;
            }
            // rotate rows (i, j) of R so the (i, j) entry vanishes;
            // columns (i, j) of Q rotate inversely to keep Q R invariant
            let c = rjj / hyp;
            let s = rij / hyp;
            for col in j..m {
                let a = r[(i, col)];
                let b = r[(j, col)];
                r[(i, col)] = c * a - s * b;
                r[(j, col)] = s * a + c * b;
            }
            r[(i, j)] = 0.0;
            for row in 0..q.rows() {
                let a = q[(row, i)];
                let b = q[(row, j)];
                q[(row, i)] = c * a - s * b;
                q[(row, j)] = s * a + c * b;
            }
        }
        for j in i + 1..m {
            r[(i, j)] = 0.0;
        }
    }
    for i in 0..m {
        if r[(i, i)] < 0.0 {
            for j in 0..m {
                r[(i, j)] = -r[(i, j)];
            }
            for row in 0..q.rows() {
                q[(row, i)] = -q[(row, i)];
            }
        }
    }
    (q, r)
}

/// Orthonormal basis of the orthogonal complement of range(K) in R^m,
/// returned as an m x (m - rank K) matrix.
pub fn orth_complement(k: &Matrix) -> Matrix {
    let m = k.rows();
    let gram = SymPsd::from_gram_sum(&[(1.0, k)], m);
    let (eigs, v) = sym_eigen(gram.matrix());
    let max_eig = eigs.last().copied().unwrap_or(0.0);
    let tol = rank_tolerance(m, max_eig);
    let null_cols: Vec<usize> = (0..m).filter(|&i| eigs[i] <= tol).collect();
    Matrix::from_fn(m, null_cols.len(), |i, j| v[(i, null_cols[j])])
}

/// Cholesky factor of the information matrix `C_K(H H^T)` for the parameter
/// subsystem given by K: returns lower-triangular `L` with
/// `C_K(H H^T) = L L^T`. H is m x n (m <= n), K is m x k of full column rank;
/// for k < m an orthonormal completion of range(K) is chosen internally.
pub fn cholesky_information(h: &Matrix, k: &Matrix) -> Result<Matrix, LinalgError> {
    let m = h.rows();
    let kk = k.cols();
    if k.rows() != m {
        return Err(LinalgError::DimensionMismatch(format!(
            "K has {} rows, H has {} rows",
            k.rows(),
            m
        )));
    }
    if h.cols() < m {
        return Err(LinalgError::DimensionMismatch(
            "H must have at least as many columns as rows".into(),
        ));
    }
    if kk > m {
        return Err(LinalgError::DimensionMismatch("K cannot have more columns than rows".into()));
    }
    let u = if kk == m {
        k.clone()
    } else {
        let v = orth_complement(k);
        if v.cols() != m - kk {
            return Err(LinalgError::RankDeficient("K"));
        }
        v.hcat(k)
    };
    // H^T U^{-T} = (U^{-1} H)^T
    let uinv_h = u.solve(h).map_err(|_| LinalgError::RankDeficient("K"))?;
    let (_q, r) = qr_zero_row(&uinv_h.transpose());
    // L_*^T is the trailing k x k block of R
    let lt = r.block(m - kk, m - kk, kk, kk);
    Ok(lt.transpose())
}

/// Exact determinant of an integer matrix by Bareiss fraction-free
/// elimination in i128 with overflow checks.
pub fn integer_determinant(m: &[Vec<i128>]) -> Result<i128, LinalgError> {
    let n = m.len();
    if m.iter().any(|row| row.len() != n) {
        return Err(LinalgError::DimensionMismatch("integer matrix must be square".into()));
    }
    if n == 0 {
        return Ok(1);
    }
    let mut a: Vec<Vec<i128>> = m.to_vec();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n - 1 {
        if a[k][k] == 0 {
            let swap = (k + 1..n).find(|&i| a[i][k] != 0);
            match swap {
                Some(i) => {
                    a.swap(i, k);
                    sign = -sign;
                }
                None => return Ok(0),
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                let t1 = a[i][j].checked_mul(a[k][k]).ok_or(LinalgError::Overflow)?;
                let t2 = a[i][k].checked_mul(a[k][j]).ok_or(LinalgError::Overflow)?;
                let num = t1.checked_sub(t2).ok_or(LinalgError::Overflow)?;
                a[i][j] = num / prev; // exact division by Bareiss' identity
            }
            a[i][k] = 0;
        }
        prev = a[k][k];
    }
    Ok(sign * a[n - 1][n - 1])
}
