//! Dense complex linear algebra for the sensing pipeline.
//!
//! Only what the pipeline needs is here: products, Hermitian transpose,
//! Householder QR and a Hermitian eigensolver driven by shifted QR
//! iteration with deflation.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense complex matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Domain(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Domain(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row slices; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Domain("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Diagonal matrix from real entries.
    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        m
    }

    /// Column vector from a slice.
    pub fn column_vector(v: &[Complex64]) -> Self {
        Self::from_fn(v.len(), 1, |i, _| v[i])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [Complex64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Matrix made of the listed columns, in that order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.cols) {
            return Err(Error::Domain(format!(
                "column {bad} out of range for {} columns",
                self.cols
            )));
        }
        Self::new(
            self.rows,
            cols.len(),
            (0..self.rows)
                .flat_map(|i| cols.iter().map(move |&j| (i, j)))
                .map(|(i, j)| self[(i, j)])
                .collect(),
        )
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|z| z * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Largest |a[i][j] - conj(a[j][i])|; infinite for non-square input.
    pub fn hermitian_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in i..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Frobenius norm of the strictly off-diagonal part.
    pub fn off_diagonal_norm(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                if i != j {
                    acc += self[(i, j)].norm_sqr();
                }
            }
        }
        acc.sqrt()
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;

    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for z in self.row(i) {
                write!(f, "{:+.6}{:+.6}j  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

pub fn matmul(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.cols != b.rows {
        return Err(Error::Shape {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = ComplexMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in arow.iter().enumerate() {
            for (o, &bkj) in orow.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Conjugate transpose.
pub fn hermitian(a: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix::from_fn(a.cols, a.rows, |i, j| a[(j, i)].conj())
}

/// Householder QR factorization of a square matrix: `a = q * r`.
///
/// Columns whose sub-diagonal part is already zero are left alone, so
/// triangular input comes back with `q = I`. A zero column yields a zero
/// diagonal entry in `r`.
pub fn qr_decompose(a: &ComplexMatrix) -> Result<(ComplexMatrix, ComplexMatrix)> {
    if !a.is_square() {
        return Err(Error::Shape {
            op: "qr_decompose",
            left: a.shape(),
            right: a.shape(),
        });
    }
    let n = a.rows;
    let mut r = a.clone();
    let mut q = ComplexMatrix::identity(n);
    let mut v = vec![Complex64::new(0.0, 0.0); n];

    for k in 0..n.saturating_sub(1) {
        let tail: f64 = (k + 1..n).map(|i| r[(i, k)].norm_sqr()).sum();
        if tail == 0.0 {
            continue;
        }
        let x0 = r[(k, k)];
        let norm = (x0.norm_sqr() + tail).sqrt();
        let phase = if x0.norm() == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            x0 / x0.norm()
        };
        let alpha = -phase * norm;

        let len = n - k;
        for (t, vt) in v[..len].iter_mut().enumerate() {
            *vt = r[(k + t, k)];
        }
        v[0] -= alpha;
        let vnorm2: f64 = v[..len].iter().map(Complex64::norm_sqr).sum();
        let beta = 2.0 / vnorm2;

        // r <- H r, H = I - beta v v^H
        for j in k..n {
            let s: Complex64 = (0..len).map(|t| v[t].conj() * r[(k + t, j)]).sum();
            let s = s * beta;
            for t in 0..len {
                r[(k + t, j)] -= v[t] * s;
            }
        }
        r[(k, k)] = alpha;
        for i in k + 1..n {
            r[(i, k)] = Complex64::new(0.0, 0.0);
        }

        // q <- q H
        for i in 0..n {
            let s: Complex64 = (0..len).map(|t| q[(i, k + t)] * v[t]).sum();
            let s = s * beta;
            for t in 0..len {
                q[(i, k + t)] -= s * v[t].conj();
            }
        }
    }
    Ok((q, r))
}

/// Eigenpairs of a Hermitian matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Column `j` pairs with `eigenvalues[j]`.
    pub eigenvectors: ComplexMatrix,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V diag(λ) V^H`.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let v = &self.eigenvectors;
        let n = self.dim();
        ComplexMatrix::from_fn(n, n, |i, j| {
            (0..n).map(|k| v[(i, k)] * self.eigenvalues[k] * v[(j, k)].conj()).sum()
        })
    }
}

/// Stopping rule for the QR iteration.
#[derive(Debug, Clone, Copy)]
pub struct EvdOptions {
    /// Converged once the off-diagonal Frobenius norm drops below
    /// `tolerance * ||A||_F`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for EvdOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 500,
        }
    }
}

/// Shifted QR iteration on a Hermitian matrix.
///
/// Each step factors the active leading block as `A - μI = QR` and
/// replaces the whole iterate by the similarity `Q^H A Q` (the active
/// block becomes `RQ + μI`). The trailing row is deflated once its
/// off-diagonal part is negligible. `V` accumulates the `Q` factors so
/// that `A_0 = V A_k V^H` at every step.
#[derive(Debug, Clone)]
pub struct QrIteration {
    a: ComplexMatrix,
    v: ComplexMatrix,
    active: usize,
    iterations: usize,
    stalled: usize,
    deflate_below: f64,
}

impl QrIteration {
    pub fn new(a: &ComplexMatrix, opts: &EvdOptions) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Shape {
                op: "evd_hermitian",
                left: a.shape(),
                right: a.shape(),
            });
        }
        let n = a.rows;
        let mut sym = a.clone();
        for i in 0..n {
            for j in 0..n {
                sym[(i, j)] = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            }
        }
        let scale = sym.frobenius_norm();
        Ok(Self {
            a: sym,
            v: ComplexMatrix::identity(n),
            active: n,
            iterations: 0,
            stalled: 0,
            // Keeps the final off-diagonal norm below tolerance * ||A||_F
            // after up to n separate deflations.
            deflate_below: opts.tolerance * scale / (2.0 * n as f64),
        })
    }

    pub fn iterate(&self) -> &ComplexMatrix {
        &self.a
    }

    pub fn accumulated(&self) -> &ComplexMatrix {
        &self.v
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn is_done(&self) -> bool {
        self.active <= 1
    }

    fn trailing_row_norm(&self) -> f64 {
        let last = self.active - 1;
        (0..last).map(|j| self.a[(last, j)].norm_sqr()).sum::<f64>().sqrt()
    }

    fn deflate(&mut self) {
        while self.active > 1 && self.trailing_row_norm() <= self.deflate_below {
            self.active -= 1;
        }
    }

    /// Performs one QR step on the active block. Returns `false` once
    /// every row has been deflated.
    pub fn step(&mut self) -> bool {
        self.deflate();
        if self.is_done() {
            return false;
        }
        let n = self.a.rows;
        let m = self.active;
        let shift = self.shift();

        let block = ComplexMatrix::from_fn(m, m, |i, j| {
            let z = self.a[(i, j)];
            if i == j {
                z - shift
            } else {
                z
            }
        });
        let (q, r) = qr_decompose(&block).expect("active block is square");
        let mut next = matmul(&r, &q).expect("square factors");
        for i in 0..m {
            next[(i, i)] += shift;
        }
        for i in 0..m {
            for j in i..m {
                let h = (next[(i, j)] + next[(j, i)].conj()) * 0.5;
                next[(i, j)] = h;
                next[(j, i)] = h.conj();
            }
            next[(i, i)].im = 0.0;
        }

        // Coupling block A[0..m, m..n] <- Q^H A[0..m, m..n]; the lower
        // block mirrors it.
        for c in m..n {
            let col: Vec<Complex64> = (0..m).map(|i| self.a[(i, c)]).collect();
            for i in 0..m {
                let z: Complex64 = (0..m).map(|k| q[(k, i)].conj() * col[k]).sum();
                self.a[(i, c)] = z;
                self.a[(c, i)] = z.conj();
            }
        }
        for i in 0..m {
            for j in 0..m {
                self.a[(i, j)] = next[(i, j)];
            }
        }
        for row in 0..n {
            let old: Vec<Complex64> = (0..m).map(|k| self.v[(row, k)]).collect();
            for j in 0..m {
                self.v[(row, j)] = (0..m).map(|k| old[k] * q[(k, j)]).sum();
            }
        }

        self.iterations += 1;
        let before = self.active;
        self.deflate();
        if self.active == before {
            self.stalled += 1;
        } else {
            self.stalled = 0;
        }
        !self.is_done()
    }

    /// Wilkinson shift from the trailing 2x2 of the active block, with an
    /// exceptional shift every 16 stalled steps.
    fn shift(&self) -> f64 {
        let m = self.active;
        let a = self.a[(m - 2, m - 2)].re;
        let c = self.a[(m - 1, m - 1)].re;
        let b = self.a[(m - 1, m - 2)].norm();
        if self.stalled > 0 && self.stalled % 16 == 0 {
            return c + 0.75 * self.trailing_row_norm();
        }
        let delta = (a - c) / 2.0;
        if b == 0.0 {
            return c;
        }
        let sign = if delta >= 0.0 { 1.0 } else { -1.0 };
        c - b * b / (delta + sign * (delta * delta + b * b).sqrt())
    }
}

/// Eigendecomposition of a Hermitian matrix with default options.
pub fn evd_hermitian(a: &ComplexMatrix) -> Result<EigenDecomposition> {
    evd_hermitian_with(a, &EvdOptions::default())
}

pub fn evd_hermitian_with(a: &ComplexMatrix, opts: &EvdOptions) -> Result<EigenDecomposition> {
    let mut it = QrIteration::new(a, opts)?;
    let scale = it.iterate().frobenius_norm();
    while !it.is_done() {
        if it.iterations() >= opts.max_iterations {
            return Err(Error::Convergence {
                iterations: it.iterations(),
                off_norm: it.iterate().off_diagonal_norm(),
            });
        }
        it.step();
    }
    let off = it.iterate().off_diagonal_norm();
    if off > opts.tolerance * scale {
        return Err(Error::Convergence {
            iterations: it.iterations(),
            off_norm: off,
        });
    }

    let n = a.rows();
    let diag: Vec<f64> = (0..n).map(|i| it.iterate()[(i, i)].re).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable: equal eigenvalues keep discovery order.
    order.sort_by(|&x, &y| diag[y].total_cmp(&diag[x]));
    let eigenvalues = order.iter().map(|&i| diag[i]).collect();
    let eigenvectors = it.accumulated().select_columns(&order)?;
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}
