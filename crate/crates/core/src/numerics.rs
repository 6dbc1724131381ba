//! Dense matrix and vector kernels for small state dimensions.
//!
//! All matrices are row-major `f64` buffers. Covariances are wrapped in
//! [`SpdMat`], which symmetrizes and Cholesky-factorizes once at
//! construction; solves, log-determinants and sigma-point square roots
//! reuse the cached factor. Explicit matrix inverses are never formed.

use thiserror::Error;

/// Numerical failures surfaced by the matrix kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericError {
    /// A Cholesky pivot was not strictly positive; the matrix is not SPD.
    #[error("matrix is not positive definite (pivot {pivot:e} at row {index})")]
    NonPositivePivot { index: usize, pivot: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length must be rows*cols");
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    /// n x 1 column from a slice.
    pub fn from_column(x: &[f64]) -> Self {
        Mat {
            rows: x.len(),
            cols: 1,
            data: x.to_vec(),
        }
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn set_column(&mut self, j: usize, col: &[f64]) {
        assert_eq!(col.len(), self.rows);
        for (i, &v) in col.iter().enumerate() {
            self.data[i * self.cols + j] = v;
        }
    }

    /// `self * rhs`
    pub fn matmul(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.rows, "matmul inner dimensions");
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let arow = self.row(i);
            let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &aik) in arow.iter().enumerate() {
                let brow = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += aik * b;
                }
            }
        }
        out
    }

    /// `self * rhsᵀ` (both operands row-major; contraction over matching columns).
    pub fn matmul_bt(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.cols, "matmul_bt inner dimensions");
        let mut out = Mat::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            let orow = &mut out.data[i * rhs.rows..(i + 1) * rhs.rows];
            for (j, o) in orow.iter_mut().enumerate() {
                *o = dot(arow, rhs.row(j));
            }
        }
        out
    }

    /// `selfᵀ * rhs`
    pub fn tr_matmul(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.rows, rhs.rows, "tr_matmul inner dimensions");
        let mut out = Mat::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = rhs.row(k);
            for (i, &a) in arow.iter().enumerate() {
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec dimensions");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add(&self, rhs: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let mut out = self.clone();
        for (o, &b) in out.data.iter_mut().zip(&rhs.data) {
            *o += b;
        }
        out
    }

    pub fn sub(&self, rhs: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let mut out = self.clone();
        for (o, &b) in out.data.iter_mut().zip(&rhs.data) {
            *o -= b;
        }
        out
    }

    pub fn scale(&self, c: f64) -> Mat {
        let mut out = self.clone();
        for o in &mut out.data {
            *o *= c;
        }
        out
    }

    /// `(self + selfᵀ) / 2`
    pub fn symmetrized(&self) -> Mat {
        assert_eq!(self.rows, self.cols, "symmetrize requires square");
        let n = self.rows;
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out.data[i * n + j] = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
            }
        }
        out
    }

    pub fn add_diagonal(&self, eps: f64) -> Mat {
        assert_eq!(self.rows, self.cols);
        let mut out = self.clone();
        for i in 0..self.rows {
            out.data[i * self.cols + i] += eps;
        }
        out
    }

    pub fn trace(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        (0..self.rows).map(|i| self.data[i * self.cols + i]).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Symmetric positive-definite matrix with a cached Cholesky factor.
///
/// The constructor symmetrizes via `(M + Mᵀ)/2`, rejects non-finite
/// entries, and fails with [`NumericError::NonPositivePivot`] if the
/// factorization hits a pivot `<= 0`. After construction the matrix is
/// immutable, so the cached factor stays valid.
#[derive(Debug, Clone)]
pub struct SpdMat {
    dim: usize,
    data: Vec<f64>,
    chol: Vec<f64>, // lower triangular, row-major, zeros above the diagonal
}

impl PartialEq for SpdMat {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.data == other.data
    }
}

impl SpdMat {
    pub fn new(m: Mat) -> Result<Self, NumericError> {
        let n = m.rows();
        if m.cols() != n {
            return Err(NumericError::DimensionMismatch(format!(
                "SpdMat requires square input, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        if !m.is_finite() {
            return Err(NumericError::NonFinite("SpdMat input".into()));
        }
        let sym = m.symmetrized();
        let chol = cholesky_factor(n, sym.data())?;
        Ok(SpdMat {
            dim: n,
            data: sym.data.clone(),
            chol,
        })
    }

    pub fn identity(n: usize) -> Self {
        SpdMat::new(Mat::identity(n)).expect("identity is SPD")
    }

    pub fn scaled_identity(n: usize, c: f64) -> Result<Self, NumericError> {
        SpdMat::new(Mat::identity(n).scale(c))
    }

    pub fn diagonal(d: &[f64]) -> Result<Self, NumericError> {
        let n = d.len();
        let mut m = Mat::zeros(n, n);
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        SpdMat::new(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mat(&self) -> Mat {
        Mat::from_vec(self.dim, self.dim, self.data.clone())
    }

    /// Lower-triangular `L` with `L Lᵀ = self`, from the cached factor.
    pub fn cholesky(&self) -> Mat {
        Mat::from_vec(self.dim, self.dim, self.chol.clone())
    }

    /// `ln |self| = 2 Σ ln L_ii`
    pub fn log_det(&self) -> f64 {
        let n = self.dim;
        2.0 * (0..n).map(|i| self.chol[i * n + i].ln()).sum::<f64>()
    }

    /// Solve `self * y = b` via forward/back substitution on the factor.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim, "solve rhs length");
        let mut y = b.to_vec();
        self.solve_in_place(&mut y);
        y
    }

    fn solve_in_place(&self, y: &mut [f64]) {
        let n = self.dim;
        let l = &self.chol;
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[i * n + k] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[k * n + i] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
    }

    /// Solve `self * X = B` column by column.
    pub fn solve_mat(&self, b: &Mat) -> Mat {
        assert_eq!(b.rows(), self.dim, "solve_mat rhs rows");
        let mut out = b.clone();
        let mut col = vec![0.0; self.dim];
        for j in 0..b.cols() {
            for i in 0..self.dim {
                col[i] = b[(i, j)];
            }
            self.solve_in_place(&mut col);
            for i in 0..self.dim {
                out[(i, j)] = col[i];
            }
        }
        out
    }

    /// `rᵀ self⁻¹ r`
    pub fn quad_form(&self, r: &[f64]) -> f64 {
        dot(r, &self.solve(r))
    }
}

fn cholesky_factor(n: usize, a: &[f64]) -> Result<Vec<f64>, NumericError> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                // !(s > 0) also catches NaN pivots
                if !(s > 0.0) {
                    return Err(NumericError::NonPositivePivot { index: i, pivot: s });
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Truncated Taylor-series matrix exponential
/// `I + Σ_{j=1}^{J} (a·dt)^j / j!`, accumulated as
/// `term_j = term_{j-1} · (a·dt) / j`.
///
/// This truncated series is the discrete-time model itself, not an
/// approximation to be replaced by scaling-and-squaring.
pub fn taylor_matrix_exp(a: &Mat, dt: f64, j_terms: usize) -> Result<Mat, NumericError> {
    if a.rows() != a.cols() {
        return Err(NumericError::DimensionMismatch(format!(
            "matrix exponential requires square input, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    assert!(j_terms >= 1, "j_terms must be >= 1");
    assert!(dt > 0.0, "dt must be positive");
    let n = a.rows();
    let scaled = a.scale(dt);
    let mut acc = Mat::identity(n);
    let mut term = Mat::identity(n);
    for j in 1..=j_terms {
        term = term.matmul(&scaled).scale(1.0 / j as f64);
        acc = acc.add(&term);
    }
    Ok(acc)
}
