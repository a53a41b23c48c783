//! Wideband DoA sensing: front-end simulation, sparse-array
//! pre-processing, MUSIC estimation and a fixed-point model of the
//! datapath.

pub mod doa;
pub mod error;
pub mod fxp;
pub mod harness;
pub mod numerics;
pub mod sap;
pub mod wrfe;

pub use doa::{
    estimate, extract_vn, find_peaks, msg, msg_with, EstimatorConfig, EstimatorInput, MusicResult, NoiseSubspace,
    Pipeline, SteeringGrid, SwapRecord,
};
pub use error::{Error, Result};
pub use fxp::{quantize, quantize_complex, Arith, Block, FxpFormat, NumericKind, NumericMode, Overflow, Rounding};
pub use harness::{
    emit_csv, match_errors, ndee, parse_csv, run_point, run_sweep, ExperimentConfig, NdeeRecord, SweepKind,
};
pub use num_complex::Complex64;
pub use numerics::{evd_hermitian, hermitian, matmul, qr_decompose, ComplexMatrix, EigenDecomposition};
pub use sap::{acf, sap_pipeline, smooth, vectorize_and_reduce, CoarrayVector, SmoothedMatrix};
pub use wrfe::{
    exact_covariance, nyquist_digitize, sns_digitize, synthesize_rf, ArrayGeometry, ArrayKind, BasebandBatch,
    MixingPolicy, NyquistBand, Sampling, SnsConfig, Source, SourceScene,
};
