//! MUSIC direction-of-arrival estimation with an M-keyed registry of
//! noise-subspace/spectrum stages.
//!
//! The ULA path is `acf -> evd -> extract V_n -> MSG -> peaks`. The sparse
//! path takes the smoothed matrix from [`crate::sap`] and runs the EVD on
//! it directly, scanning the virtual `L'`-slot steering grid.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fxp::{apply_block, pow2_scale, Arith, Block, NumericMode};
use crate::numerics::{evd_hermitian, ComplexMatrix, EigenDecomposition};
use crate::sap::{acf_with, smooth, vectorize_and_reduce_with, SmoothedMatrix};
use crate::wrfe::{ArrayGeometry, ArrayKind};

/// Number of grid angles, `0..=180` degrees in 1 degree steps.
pub const GRID_POINTS: usize = 181;

/// Smallest MUSIC denominator before the reciprocal.
pub const DENOM_FLOOR: f64 = 1e-12;

/// Extended steering matrix evaluated on the angle grid.
#[derive(Debug, Clone)]
pub struct SteeringGrid {
    pub s_e: ComplexMatrix,
    pub thetas: Vec<f64>,
    pub f_hz: f64,
}

impl SteeringGrid {
    /// Rows follow the physical positions, or slots `1..=L'` when
    /// `virtual_slots` is set (sparse geometry only).
    pub fn build(geom: &ArrayGeometry, f_hz: f64, virtual_slots: bool) -> Result<Self> {
        if virtual_slots && geom.kind() != ArrayKind::Sparse {
            return Err(Error::Config("virtual steering grid requires a sparse geometry".into()));
        }
        let slots: Vec<usize> = if virtual_slots {
            (1..=geom.num_slots()).collect()
        } else {
            geom.positions().to_vec()
        };
        let thetas: Vec<f64> = (0..GRID_POINTS).map(|i| i as f64).collect();
        let mut s_e = ComplexMatrix::zeros(slots.len(), GRID_POINTS);
        for (p, &theta) in thetas.iter().enumerate() {
            for (row, &slot) in slots.iter().enumerate() {
                s_e[(row, p)] = Complex64::from_polar(1.0, 2.0 * PI * f_hz * geom.tau(slot, theta)?);
            }
        }
        Ok(Self { s_e, thetas, f_hz })
    }

    /// Grid for the array's natural estimation domain: physical rows for a
    /// ULA, virtual slots for a sparse array.
    pub fn for_geometry(geom: &ArrayGeometry, f_hz: f64) -> Result<Self> {
        Self::build(geom, f_hz, geom.kind() == ArrayKind::Sparse)
    }

    /// Hadamard-scales every column by per-row gains, e.g. the per-antenna
    /// mixing coefficients of one band.
    pub fn with_element_gains(mut self, gains: &[f64]) -> Result<Self> {
        if gains.len() != self.s_e.rows() {
            return Err(Error::Shape {
                op: "with_element_gains",
                left: self.s_e.shape(),
                right: (gains.len(), 1),
            });
        }
        for (row, &g) in gains.iter().enumerate() {
            self.s_e.row_mut(row).iter_mut().for_each(|z| *z *= g);
        }
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.s_e.rows()
    }
}

#[derive(Debug, Clone)]
pub struct NoiseSubspace {
    pub v_n: ComplexMatrix,
    pub m: usize,
}

/// Eigenvectors of the `dim - m` smallest eigenvalues, ascending.
pub fn extract_vn(evd: &EigenDecomposition, m: usize) -> Result<NoiseSubspace> {
    let dim = evd.dim();
    if m >= dim {
        return Err(Error::TooManySources { m, dim });
    }
    if m == 0 {
        return Err(Error::Domain("source count must be at least 1".into()));
    }
    let cols: Vec<usize> = (m..dim).rev().collect();
    Ok(NoiseSubspace {
        v_n: evd.eigenvectors.select_columns(&cols)?,
        m,
    })
}

pub fn msg(grid: &SteeringGrid, vn: &NoiseSubspace) -> Result<Vec<f64>> {
    msg_with(grid, vn, Arith::Float64)
}

/// MUSIC spectrum `P[i] = 1 / ||S_e[:, i]^H V_n||^2`, no square root.
pub fn msg_with(grid: &SteeringGrid, vn: &NoiseSubspace, arith: Arith) -> Result<Vec<f64>> {
    let rows = grid.rows();
    if vn.v_n.rows() != rows {
        return Err(Error::Shape {
            op: "msg",
            left: grid.s_e.shape(),
            right: vn.v_n.shape(),
        });
    }
    let cols = vn.v_n.cols();
    Ok((0..grid.s_e.cols())
        .map(|i| {
            let mut denom = 0.0;
            for k in 0..cols {
                let mut q = Complex64::new(0.0, 0.0);
                for l in 0..rows {
                    let s = arith.round_c(grid.s_e[(l, i)]);
                    q = arith.cadd(q, arith.cmul(s.conj(), vn.v_n[(l, k)]));
                }
                denom = arith.add(denom, arith.norm_sqr(q));
            }
            1.0 / denom.max(DENOM_FLOOR)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MusicResult {
    pub spectrum: Vec<f64>,
    /// Local maxima, strongest first.
    pub peak_indices: Vec<usize>,
    pub doas_deg: Vec<f64>,
    pub m_used: usize,
    /// Fewer local maxima than requested sources.
    pub short: bool,
}

/// Strict local maxima; an endpoint counts when it beats its one
/// neighbour. Plateaus are not peaks.
pub fn peak_candidates(p: &[f64]) -> Vec<usize> {
    let n = p.len();
    match n {
        0 => Vec::new(),
        1 => vec![0],
        _ => (0..n)
            .filter(|&i| {
                let left = i == 0 || p[i] > p[i - 1];
                let right = i == n - 1 || p[i] > p[i + 1];
                left && right
            })
            .collect(),
    }
}

pub fn find_peaks(p: &[f64], m: usize) -> MusicResult {
    let mut peaks = peak_candidates(p);
    peaks.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
    let take = m.min(peaks.len());
    MusicResult {
        spectrum: p.to_vec(),
        doas_deg: peaks[..take].iter().map(|&i| i as f64).collect(),
        short: peaks.len() < m,
        peak_indices: peaks,
        m_used: m,
    }
}

/// One registered stage pair: `V_n` extraction and spectrum generation
/// specialised for a source count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageVariant {
    pub m: usize,
}

impl StageVariant {
    pub fn extract(&self, evd: &EigenDecomposition) -> Result<NoiseSubspace> {
        extract_vn(evd, self.m)
    }

    pub fn spectrum(&self, grid: &SteeringGrid, vn: &NoiseSubspace, arith: Arith) -> Result<Vec<f64>> {
        msg_with(grid, vn, arith)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwapRecord {
    pub from: usize,
    pub to: usize,
    pub swapped: bool,
    pub latency: Duration,
}

/// Registry of M-specific stages plus the active selection.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    dim: usize,
    registry: BTreeMap<usize, StageVariant>,
    active: usize,
    last_swap: Option<SwapRecord>,
}

impl EstimatorConfig {
    /// `dim` is the estimation-domain size (`L` for a ULA, `L'` for a
    /// sparse array); every registered M must be below it.
    pub fn new(dim: usize, ms: impl IntoIterator<Item = usize>, active: usize) -> Result<Self> {
        if active >= dim {
            return Err(Error::TooManySources { m: active, dim });
        }
        let mut registry = BTreeMap::new();
        for m in ms {
            if m >= dim {
                return Err(Error::TooManySources { m, dim });
            }
            if m == 0 {
                return Err(Error::Config("source count must be at least 1".into()));
            }
            registry.insert(m, StageVariant { m });
        }
        if !registry.contains_key(&active) {
            return Err(Error::Unregistered {
                m: active,
                registered: registry.keys().copied().collect(),
            });
        }
        Ok(Self {
            dim,
            registry,
            active,
            last_swap: None,
        })
    }

    /// Registers every `M` in `1..dim`.
    pub fn full(dim: usize, active: usize) -> Result<Self> {
        Self::new(dim, 1..dim, active)
    }

    pub fn active(&self) -> usize {
        self.active
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn registered(&self) -> Vec<usize> {
        self.registry.keys().copied().collect()
    }

    pub fn variant(&self) -> &StageVariant {
        &self.registry[&self.active]
    }

    pub fn last_swap(&self) -> Option<&SwapRecord> {
        self.last_swap.as_ref()
    }

    /// Swaps the active stage pair. Upstream state is untouched.
    pub fn reconfigure(&mut self, m_new: usize) -> Result<SwapRecord> {
        let start = Instant::now();
        if m_new >= self.dim {
            return Err(Error::TooManySources {
                m: m_new,
                dim: self.dim,
            });
        }
        if !self.registry.contains_key(&m_new) {
            return Err(Error::Unregistered {
                m: m_new,
                registered: self.registered(),
            });
        }
        let swapped = m_new != self.active;
        let from = self.active;
        self.active = m_new;
        let record = SwapRecord {
            from,
            to: m_new,
            swapped,
            latency: if swapped { start.elapsed() } else { Duration::ZERO },
        };
        self.last_swap = Some(record.clone());
        Ok(record)
    }
}

/// Estimator input: raw samples (ULA path starts with the ACF) or an
/// already formed covariance-like matrix (`R_yy` or the smoothed matrix).
#[derive(Debug, Clone, Copy)]
pub enum EstimatorInput<'a> {
    Batch(&'a ComplexMatrix),
    Covariance(&'a ComplexMatrix),
}

/// ADC quantization followed by the ACF block.
pub fn covariance_stage(y: &ComplexMatrix, mode: &NumericMode) -> ComplexMatrix {
    if mode.is_float64() {
        return crate::sap::acf(y);
    }
    let adc = apply_block(y, mode, Block::Input);
    let y_true = pow2_scale(&adc.matrix, -adc.exponent);
    let acf_in = apply_block(&y_true, mode, Block::Acf);
    let r = acf_with(&acf_in.matrix, mode.arith());
    pow2_scale(&r, -2 * acf_in.exponent)
}

/// Vectorization, redundancy removal and smoothing under `mode`.
pub fn sap_stage(r_yy: &ComplexMatrix, geom: &ArrayGeometry, mode: &NumericMode) -> Result<SmoothedMatrix> {
    let input = apply_block(r_yy, mode, Block::Sap);
    let rv = vectorize_and_reduce_with(&input.matrix, geom, mode.arith())?;
    let s = smooth(&rv)?;
    Ok(SmoothedMatrix {
        y_hat: pow2_scale(&s.y_hat, -input.exponent),
    })
}

/// EVD with quantized input and outputs; the iteration itself runs in
/// float64.
pub fn evd_stage(r: &ComplexMatrix, mode: &NumericMode) -> Result<EigenDecomposition> {
    if mode.is_float64() {
        return evd_hermitian(r);
    }
    let input = apply_block(r, mode, Block::Evd);
    let e = evd_hermitian(&input.matrix)?;
    let arith = mode.arith();
    let unscale = 2f64.powi(-input.exponent);
    Ok(EigenDecomposition {
        eigenvalues: e.eigenvalues.iter().map(|&l| arith.round(l) * unscale).collect(),
        eigenvectors: e.eigenvectors.map(|z| arith.round_c(z)),
    })
}

fn msg_stage(variant: &StageVariant, grid: &SteeringGrid, vn: &NoiseSubspace, mode: &NumericMode) -> Result<Vec<f64>> {
    if mode.is_float64() {
        return variant.spectrum(grid, vn, Arith::Float64);
    }
    let input = apply_block(&vn.v_n, mode, Block::Msg);
    let scaled = NoiseSubspace {
        v_n: input.matrix,
        m: vn.m,
    };
    let p = variant.spectrum(grid, &scaled, mode.arith())?;
    // P carries 2^(-2e) from the scaled V_n; a positive factor leaves
    // peaks unchanged but is removed to keep P in true units.
    let factor = 2f64.powi(2 * input.exponent);
    Ok(p.into_iter().map(|x| x * factor).collect())
}

/// Runs the active stage pair on `input`.
pub fn estimate(
    input: EstimatorInput<'_>,
    grid: &SteeringGrid,
    cfg: &EstimatorConfig,
    mode: &NumericMode,
) -> Result<MusicResult> {
    let owned;
    let cov = match input {
        EstimatorInput::Batch(y) => {
            owned = covariance_stage(y, mode);
            &owned
        }
        EstimatorInput::Covariance(r) => r,
    };
    if cov.rows() != grid.rows() {
        return Err(Error::Shape {
            op: "estimate",
            left: cov.shape(),
            right: grid.s_e.shape(),
        });
    }
    let evd = evd_stage(cov, mode)?;
    let variant = cfg.variant();
    let vn = variant.extract(&evd)?;
    let p = msg_stage(variant, grid, &vn, mode)?;
    Ok(find_peaks(&p, variant.m))
}

/// Full chain for one array: batch in, DoAs out.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub geom: ArrayGeometry,
    pub grid: SteeringGrid,
    pub config: EstimatorConfig,
    pub mode: NumericMode,
}

impl Pipeline {
    /// Registers every feasible M and activates `m`.
    pub fn new(geom: ArrayGeometry, f_hz: f64, m: usize, mode: NumericMode) -> Result<Self> {
        let grid = SteeringGrid::for_geometry(&geom, f_hz)?;
        let config = EstimatorConfig::full(grid.rows(), m)?;
        Ok(Self {
            geom,
            grid,
            config,
            mode,
        })
    }

    /// Smoothed matrix for a sparse array's batch.
    pub fn smoothed(&self, y: &ComplexMatrix) -> Result<SmoothedMatrix> {
        let r = covariance_stage(y, &self.mode);
        sap_stage(&r, &self.geom, &self.mode)
    }

    pub fn run_batch(&self, y: &ComplexMatrix) -> Result<MusicResult> {
        match self.geom.kind() {
            ArrayKind::Uniform => estimate(EstimatorInput::Batch(y), &self.grid, &self.config, &self.mode),
            ArrayKind::Sparse => self.run_smoothed(&self.smoothed(y)?),
        }
    }

    pub fn run_smoothed(&self, s: &SmoothedMatrix) -> Result<MusicResult> {
        estimate(
            EstimatorInput::Covariance(&s.y_hat),
            &self.grid,
            &self.config,
            &self.mode,
        )
    }

    /// Starts from an element-space covariance instead of samples.
    pub fn run_covariance(&self, r: &ComplexMatrix) -> Result<MusicResult> {
        match self.geom.kind() {
            ArrayKind::Uniform => estimate(EstimatorInput::Covariance(r), &self.grid, &self.config, &self.mode),
            ArrayKind::Sparse => self.run_smoothed(&sap_stage(r, &self.geom, &self.mode)?),
        }
    }

    pub fn reconfigure(&mut self, m: usize) -> Result<SwapRecord> {
        self.config.reconfigure(m)
    }
}
