//! Sparse-array pre-processing: auto-correlation, coarray vectorization
//! with redundancy removal, and Toeplitz rearrangement into the spatially
//! smoothed `L' x L'` matrix.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fxp::Arith;
use crate::numerics::{hermitian, matmul, ComplexMatrix};
use crate::wrfe::ArrayGeometry;

/// `R = (1/K) Y Y^H`.
pub fn acf(y: &ComplexMatrix) -> ComplexMatrix {
    let r = matmul(y, &hermitian(y)).expect("Y times Y^H is conformant");
    r.scale(1.0 / y.cols() as f64)
}

/// Auto-correlation through a datapath: every product and accumulation
/// is rounded by `arith`, then the sum is normalized by `1/K` with one
/// final rounding.
pub fn acf_with(y: &ComplexMatrix, arith: Arith) -> ComplexMatrix {
    if arith == Arith::Float64 {
        return acf(y);
    }
    let l = y.rows();
    let inv_k = 1.0 / y.cols() as f64;
    ComplexMatrix::from_fn(l, l, |i, j| {
        let sum = y
            .row(i)
            .iter()
            .zip(y.row(j))
            .fold(Complex64::new(0.0, 0.0), |acc, (&a, &b)| {
                arith.cadd(acc, arith.cmul(a, b.conj()))
            });
        arith.round_c(sum * inv_k)
    })
}

/// Averaged difference-coarray lags `-(L'-1) ..= L'-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarrayVector {
    r_hat: Vec<Complex64>,
    weights: Vec<usize>,
}

impl CoarrayVector {
    pub fn new(r_hat: Vec<Complex64>, weights: Vec<usize>) -> Result<Self> {
        if r_hat.len() % 2 == 0 {
            return Err(Error::Domain(format!(
                "coarray vector length must be odd (2L'-1), got {}",
                r_hat.len()
            )));
        }
        if weights.len() != r_hat.len() {
            return Err(Error::Domain("coarray weights and values differ in length".into()));
        }
        Ok(Self { r_hat, weights })
    }

    pub fn len(&self) -> usize {
        self.r_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_hat.is_empty()
    }

    /// Virtual aperture `L'`.
    pub fn slots(&self) -> usize {
        self.r_hat.len().div_ceil(2)
    }

    pub fn values(&self) -> &[Complex64] {
        &self.r_hat
    }

    pub fn weights(&self) -> &[usize] {
        &self.weights
    }

    pub fn lag(&self, lag: i64) -> Complex64 {
        self.r_hat[(lag + self.slots() as i64 - 1) as usize]
    }

    pub fn weight(&self, lag: i64) -> usize {
        self.weights[(lag + self.slots() as i64 - 1) as usize]
    }
}

/// Lag coverage of the geometry's difference coarray.
pub fn coarray_weights(geom: &ArrayGeometry) -> Vec<usize> {
    let span = geom.num_slots() as i64 - 1;
    let mut weights = vec![0usize; (2 * span + 1) as usize];
    for &a in geom.positions() {
        for &b in geom.positions() {
            weights[(a as i64 - b as i64 + span) as usize] += 1;
        }
    }
    weights
}

pub fn vectorize_and_reduce(r_yy: &ComplexMatrix, geom: &ArrayGeometry) -> Result<CoarrayVector> {
    vectorize_and_reduce_with(r_yy, geom, Arith::Float64)
}

/// Maps `R[i][j]` to lag `p_i - p_j` and averages duplicate lags.
pub fn vectorize_and_reduce_with(r_yy: &ComplexMatrix, geom: &ArrayGeometry, arith: Arith) -> Result<CoarrayVector> {
    let l = geom.num_antennas();
    if r_yy.shape() != (l, l) {
        return Err(Error::Shape {
            op: "vectorize_and_reduce",
            left: r_yy.shape(),
            right: (l, l),
        });
    }
    let weights = coarray_weights(geom);
    let span = geom.num_slots() as i64 - 1;
    if let Some(lag) = (1..=span).find(|&k| weights[(k + span) as usize] == 0) {
        return Err(Error::CoarrayHole { lag });
    }
    let mut sums = vec![Complex64::new(0.0, 0.0); weights.len()];
    // Column-wise read of R, as vec(R) would produce.
    for j in 0..l {
        for i in 0..l {
            let idx = (geom.positions()[i] as i64 - geom.positions()[j] as i64 + span) as usize;
            sums[idx] = arith.cadd(sums[idx], r_yy[(i, j)]);
        }
    }
    let r_hat = sums
        .iter()
        .zip(&weights)
        .map(|(&s, &w)| if w == 1 { s } else { arith.round_c(s / w as f64) })
        .collect();
    CoarrayVector::new(r_hat, weights)
}

/// Hermitian Toeplitz `L' x L'` matrix built from the coarray.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedMatrix {
    pub y_hat: ComplexMatrix,
}

impl SmoothedMatrix {
    /// Largest deviation from constant diagonals.
    pub fn toeplitz_defect(&self) -> f64 {
        let m = &self.y_hat;
        let n = m.rows();
        let mut worst = 0.0f64;
        for i in 1..n {
            for j in 1..n {
                worst = worst.max((m[(i, j)] - m[(i - 1, j - 1)]).norm());
            }
        }
        worst
    }
}

/// Column `i` (1-based) of `Y_hat` is `[r_{L'+1-i}, ..., r_{2L'-i}]` with
/// `r` indexed 1-based over lags `-(L'-1) ..= L'-1`, i.e.
/// `Y_hat[j][i] = r(lag j - i)`.
pub fn smooth(rv: &CoarrayVector) -> Result<SmoothedMatrix> {
    if rv.len() % 2 == 0 || rv.is_empty() {
        return Err(Error::Domain(format!(
            "coarray vector length must be odd (2L'-1), got {}",
            rv.len()
        )));
    }
    let n = rv.slots();
    let y_hat = ComplexMatrix::from_fn(n, n, |row, col| rv.values()[n - 1 + row - col]);
    Ok(SmoothedMatrix { y_hat })
}

/// `acf -> vectorize_and_reduce -> smooth`.
pub fn sap_pipeline(y: &ComplexMatrix, geom: &ArrayGeometry) -> Result<SmoothedMatrix> {
    smooth(&vectorize_and_reduce(&acf(y), geom)?)
}
