//! Scene generation and the wideband radio front-end.
//!
//! Sources are synthesized as a complex baseband-equivalent capture of the
//! whole `N * B` span, referenced to the centre of band 1 (`f_ref`). Band
//! `b` is centred at `f_ref + (b - 1) B` and is `B` wide. The spatial phase
//! at every antenna uses the physical carrier.
//!
//! The sub-Nyquist chain multiplies each antenna by its mixing function
//! `m_l(t) = sum_{b in beta} alpha_{l,b} exp(-j 2 pi (b - 1) B t)`, applies
//! an ideal low-pass at `B/2` and samples at `B`, folding every selected
//! band onto the same baseband.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::numerics::ComplexMatrix;

pub const SPEED_OF_LIGHT: f64 = 2.99792458e8;

/// Output samples a measurement should skip after the brick-wall filter.
pub const SETTLING_DISCARD: usize = 32;

/// Fraction of the band occupied by a band-limited envelope.
pub const ENVELOPE_BANDWIDTH: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayKind {
    Uniform,
    Sparse,
}

impl ArrayKind {
    pub fn label(self) -> &'static str {
        match self {
            ArrayKind::Uniform => "ula",
            ArrayKind::Sparse => "saa",
        }
    }
}

/// Antenna placement on a grid of slots `1..=L'` spaced `d` apart.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    kind: ArrayKind,
    positions: Vec<usize>,
    spacing_m: f64,
    speed: f64,
}

impl ArrayGeometry {
    pub fn ula(antennas: usize, spacing_m: f64) -> Result<Self> {
        if antennas == 0 {
            return Err(Error::Domain("array needs at least one antenna".into()));
        }
        Self::checked(ArrayKind::Uniform, (1..=antennas).collect(), spacing_m)
    }

    pub fn sparse(positions: Vec<usize>, spacing_m: f64) -> Result<Self> {
        if positions.first() != Some(&1) {
            return Err(Error::Domain("sparse positions must start at slot 1".into()));
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("sparse positions must be strictly increasing".into()));
        }
        let last = *positions.last().expect("nonempty");
        if last <= positions.len() {
            return Err(Error::Domain(format!(
                "sparse geometry needs L' > L, got L' = {last} with L = {}",
                positions.len()
            )));
        }
        Self::checked(ArrayKind::Sparse, positions, spacing_m)
    }

    /// Two-level nested array `{1, 2, 3, 6}`: 4 antennas, 6 slots, hole-free
    /// coarray over `[-5, 5]`.
    pub fn nested_default(spacing_m: f64) -> Result<Self> {
        Self::sparse(vec![1, 2, 3, 6], spacing_m)
    }

    fn checked(kind: ArrayKind, positions: Vec<usize>, spacing_m: f64) -> Result<Self> {
        if !(spacing_m > 0.0 && spacing_m.is_finite()) {
            return Err(Error::Domain(format!("spacing must be positive, got {spacing_m}")));
        }
        Ok(Self {
            kind,
            positions,
            spacing_m,
            speed: SPEED_OF_LIGHT,
        })
    }

    pub fn with_speed(mut self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Domain(format!("propagation speed must be positive, got {c}")));
        }
        self.speed = c;
        Ok(self)
    }

    pub fn kind(&self) -> ArrayKind {
        self.kind
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// Physical antennas `L`.
    pub fn num_antennas(&self) -> usize {
        self.positions.len()
    }

    /// Total slots `L'` (equal to `L` for a ULA).
    pub fn num_slots(&self) -> usize {
        *self.positions.last().expect("nonempty")
    }

    pub fn spacing(&self) -> f64 {
        self.spacing_m
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    /// Delay `(l - 1) (d / c) cos(theta)` at slot `l` (1-based).
    pub fn tau(&self, slot: usize, theta_deg: f64) -> Result<f64> {
        if slot < 1 || slot > self.num_slots() {
            return Err(Error::Domain(format!("slot {slot} outside [1, {}]", self.num_slots())));
        }
        check_angle(theta_deg)?;
        Ok((slot - 1) as f64 * self.spacing_m / self.speed * (theta_deg * PI / 180.0).cos())
    }

    /// `exp(j 2 pi f tau_l(theta))` for each listed slot.
    pub fn steering_vector(&self, slots: &[usize], f_hz: f64, theta_deg: f64) -> Result<Vec<Complex64>> {
        slots
            .iter()
            .map(|&l| Ok(Complex64::from_polar(1.0, 2.0 * PI * f_hz * self.tau(l, theta_deg)?)))
            .collect()
    }
}

fn check_angle(theta_deg: f64) -> Result<()> {
    if !(0.0..=180.0).contains(&theta_deg) {
        return Err(Error::Domain(format!("angle {theta_deg} outside [0, 180] degrees")));
    }
    Ok(())
}

/// Half-wavelength spacing at `f_hz`.
pub fn half_wavelength(f_hz: f64) -> f64 {
    SPEED_OF_LIGHT / (2.0 * f_hz)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Envelope {
    /// Circular Gaussian low-passed to `0.8 B`, unit power.
    #[default]
    BandLimited,
    /// `a(t) = 1`.
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub theta_deg: f64,
    pub carrier_hz: f64,
    /// 1-based band index.
    pub band: usize,
    pub amplitude: f64,
    pub waveform_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceScene {
    pub sources: Vec<Source>,
    /// Per-antenna SNR of the summed sources; `f64::INFINITY` disables noise.
    pub snr_db: f64,
    /// RF-rate samples per antenna.
    pub k_rf: usize,
    pub envelope: Envelope,
}

impl SourceScene {
    /// One unit-amplitude source per listed band, each at its band centre.
    pub fn at_band_centres(
        thetas_deg: &[f64],
        bands: &[usize],
        sns: &SnsConfig,
        snr_db: f64,
        k_rf: usize,
    ) -> Result<Self> {
        if thetas_deg.len() != bands.len() {
            return Err(Error::Config(format!(
                "{} angles but {} bands",
                thetas_deg.len(),
                bands.len()
            )));
        }
        let sources = thetas_deg
            .iter()
            .zip(bands)
            .enumerate()
            .map(|(i, (&theta_deg, &band))| Source {
                theta_deg,
                carrier_hz: sns.band_centre(band),
                band,
                amplitude: 1.0,
                waveform_seed: i as u64,
            })
            .collect();
        let scene = Self {
            sources,
            snr_db,
            k_rf,
            envelope: Envelope::BandLimited,
        };
        scene.validate(sns)?;
        Ok(scene)
    }

    pub fn m(&self) -> usize {
        self.sources.len()
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.sources.iter().map(|s| s.theta_deg).collect()
    }

    pub fn max_carrier(&self) -> f64 {
        self.sources.iter().map(|s| s.carrier_hz).fold(0.0, f64::max)
    }

    pub fn mean_carrier(&self) -> f64 {
        self.sources.iter().map(|s| s.carrier_hz).sum::<f64>() / self.sources.len() as f64
    }

    pub fn signal_power(&self) -> f64 {
        self.sources.iter().map(|s| s.amplitude * s.amplitude).sum()
    }

    /// Noise variance per antenna implied by the SNR.
    pub fn noise_power(&self) -> f64 {
        if self.snr_db == f64::INFINITY {
            0.0
        } else {
            self.signal_power() / 10f64.powf(self.snr_db / 10.0)
        }
    }

    pub fn validate(&self, sns: &SnsConfig) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::Config("scene needs at least one source".into()));
        }
        if self.k_rf == 0 {
            return Err(Error::Config("scene needs at least one RF sample".into()));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Config("SNR is NaN".into()));
        }
        for (i, s) in self.sources.iter().enumerate() {
            check_angle(s.theta_deg)?;
            if s.band < 1 || s.band > sns.n_bands {
                return Err(Error::Config(format!(
                    "source {i}: band {} outside [1, {}]",
                    s.band, sns.n_bands
                )));
            }
            let offset = s.carrier_hz - sns.band_centre(s.band);
            if !(-sns.band_width_hz / 2.0..sns.band_width_hz / 2.0).contains(&offset) {
                return Err(Error::Config(format!(
                    "source {i}: carrier {} Hz is not inside band {}",
                    s.carrier_hz, s.band
                )));
            }
            if self.sources[..i].iter().any(|o| o.carrier_hz == s.carrier_hz) {
                return Err(Error::Config(format!(
                    "source {i}: carrier {} Hz is not disjoint",
                    s.carrier_hz
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MixingPolicy {
    /// One Gaussian coefficient per band, common to all antennas.
    #[default]
    Shared,
    /// Independent Gaussian coefficients per antenna and band.
    PerAntenna,
}

/// Sub-Nyquist chain parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SnsConfig {
    pub n_bands: usize,
    pub band_width_hz: f64,
    /// Physical centre frequency of band 1.
    pub f_ref_hz: f64,
    /// Selected bands (1-based, ascending).
    pub beta: Vec<usize>,
    pub antennas: usize,
    pub policy: MixingPolicy,
    pub mixing_seed: u64,
    /// `alpha[l][b - 1]`.
    alpha: Vec<Vec<f64>>,
}

impl SnsConfig {
    pub const DEFAULT_BANDS: usize = 5;
    pub const DEFAULT_BAND_WIDTH: f64 = 2e6;
    pub const DEFAULT_F_REF: f64 = 2.4e9;
    pub const DEFAULT_MIXING_SEED: u64 = 2021;

    pub fn new(
        n_bands: usize,
        band_width_hz: f64,
        f_ref_hz: f64,
        beta: Vec<usize>,
        antennas: usize,
        policy: MixingPolicy,
        mixing_seed: u64,
    ) -> Result<Self> {
        if n_bands == 0 || antennas == 0 {
            return Err(Error::Config("need at least one band and one antenna".into()));
        }
        if !(band_width_hz > 0.0 && band_width_hz.is_finite()) {
            return Err(Error::Config(format!(
                "band width must be positive, got {band_width_hz}"
            )));
        }
        let mut beta = beta;
        beta.sort_unstable();
        beta.dedup();
        if beta.is_empty() || beta.iter().any(|&b| b < 1 || b > n_bands) {
            return Err(Error::Config(format!(
                "selected bands {beta:?} must be a nonempty subset of [1, {n_bands}]"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mixing_seed);
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        let alpha = match policy {
            MixingPolicy::Shared => {
                let row: Vec<f64> = (0..n_bands).map(|_| draw()).collect();
                vec![row; antennas]
            }
            MixingPolicy::PerAntenna => (0..antennas).map(|_| (0..n_bands).map(|_| draw()).collect()).collect(),
        };
        Ok(Self {
            n_bands,
            band_width_hz,
            f_ref_hz,
            beta,
            antennas,
            policy,
            mixing_seed,
            alpha,
        })
    }

    /// Default band plan with every band selected.
    pub fn default_for(antennas: usize) -> Self {
        Self::new(
            Self::DEFAULT_BANDS,
            Self::DEFAULT_BAND_WIDTH,
            Self::DEFAULT_F_REF,
            (1..=Self::DEFAULT_BANDS).collect(),
            antennas,
            MixingPolicy::Shared,
            Self::DEFAULT_MIXING_SEED,
        )
        .expect("default band plan is valid")
    }

    /// Replaces the mixing coefficients (`antennas x n_bands`).
    pub fn with_mixing(mut self, alpha: Vec<Vec<f64>>) -> Result<Self> {
        if alpha.len() != self.antennas || alpha.iter().any(|r| r.len() != self.n_bands) {
            return Err(Error::Config(format!(
                "mixing matrix must be {}x{}",
                self.antennas, self.n_bands
            )));
        }
        self.alpha = alpha;
        Ok(self)
    }

    pub fn alpha(&self, antenna: usize, band: usize) -> f64 {
        self.alpha[antenna][band - 1]
    }

    pub fn mixing(&self) -> &[Vec<f64>] {
        &self.alpha
    }

    /// Column `b` of the mixing matrix: the per-antenna gain of band `b`.
    pub fn band_gains(&self, band: usize) -> Vec<f64> {
        self.alpha.iter().map(|row| row[band - 1]).collect()
    }

    /// Wideband Nyquist rate `N * B`.
    pub fn rate(&self) -> f64 {
        self.n_bands as f64 * self.band_width_hz
    }

    pub fn decimation(&self) -> usize {
        self.n_bands
    }

    pub fn band_centre(&self, band: usize) -> f64 {
        self.f_ref_hz + (band as f64 - 1.0) * self.band_width_hz
    }

    pub fn selects(&self, band: usize) -> bool {
        self.beta.binary_search(&band).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Nyquist,
    SubNyquist,
}

impl Sampling {
    pub fn label(self) -> &'static str {
        match self {
            Sampling::Nyquist => "ns",
            Sampling::SubNyquist => "sns",
        }
    }

    fn code(self) -> u8 {
        match self {
            Sampling::Nyquist => 0,
            Sampling::SubNyquist => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Sampling::Nyquist),
            1 => Ok(Sampling::SubNyquist),
            other => Err(Error::Format(format!("unknown sampling code {other}"))),
        }
    }
}

/// Digitized `L x K` baseband samples.
#[derive(Debug, Clone)]
pub struct BasebandBatch {
    pub samples: ComplexMatrix,
    pub sampling: Sampling,
    /// Per source, per antenna `exp(j 2 pi f_m tau_l(theta_m))`; empty
    /// unless attached with [`BasebandBatch::with_phase_truth`].
    pub phase_truth: Vec<Vec<Complex64>>,
}

impl BasebandBatch {
    pub fn k(&self) -> usize {
        self.samples.cols()
    }

    pub fn antennas(&self) -> usize {
        self.samples.rows()
    }

    pub fn with_phase_truth(mut self, scene: &SourceScene, geom: &ArrayGeometry) -> Result<Self> {
        self.phase_truth = scene
            .sources
            .iter()
            .map(|s| geom.steering_vector(geom.positions(), s.carrier_hz, s.theta_deg))
            .collect::<Result<_>>()?;
        Ok(self)
    }
}

fn unit_power_envelope(
    k_rf: usize,
    n_bands: usize,
    rng: &mut ChaCha8Rng,
    planner: &mut FftPlanner<f64>,
) -> Vec<Complex64> {
    // Drawing the in-band bins directly is equivalent to low-passing white
    // circular Gaussian noise.
    let half_bins = ENVELOPE_BANDWIDTH / 2.0 * k_rf as f64 / n_bands as f64;
    let mut spec = vec![Complex64::new(0.0, 0.0); k_rf];
    for (k, bin) in spec.iter_mut().enumerate() {
        let freq = if k <= k_rf / 2 {
            k as f64
        } else {
            k as f64 - k_rf as f64
        };
        if freq.abs() < half_bins || k == 0 {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *bin = Complex64::new(re, im);
        }
    }
    planner.plan_fft_inverse(k_rf).process(&mut spec);
    let power = spec.iter().map(Complex64::norm_sqr).sum::<f64>() / k_rf as f64;
    let norm = if power > 0.0 { power.sqrt().recip() } else { 0.0 };
    spec.iter_mut().for_each(|z| *z *= norm);
    spec
}

/// RF-rate capture `x_l(t) = sum_m a_m(t) e^{j 2 pi f_m t} e^{j 2 pi f_m tau_l} + n_l(t)`,
/// returned as `L x K_rf` samples relative to `f_ref`.
///
/// Deterministic in `seed` and the per-source waveform seeds: source
/// envelopes use ChaCha stream `1 + waveform_seed`, noise uses stream 0.
pub fn synthesize_rf(
    scene: &SourceScene,
    geom: &ArrayGeometry,
    sns: &SnsConfig,
    rate_hz: f64,
    seed: u64,
) -> Result<ComplexMatrix> {
    let nyquist = sns.rate();
    if (rate_hz - nyquist).abs() > 1e-9 * nyquist {
        return Err(Error::Config(format!(
            "RF rate {rate_hz} Hz must equal N*B = {nyquist} Hz"
        )));
    }
    scene.validate(sns)?;
    let l = geom.num_antennas();
    let k_rf = scene.k_rf;
    let mut out = ComplexMatrix::zeros(l, k_rf);
    let mut planner = FftPlanner::new();

    for src in &scene.sources {
        if src.amplitude == 0.0 {
            continue;
        }
        let envelope = match scene.envelope {
            Envelope::Constant => vec![Complex64::new(1.0, 0.0); k_rf],
            Envelope::BandLimited => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(1 + src.waveform_seed);
                unit_power_envelope(k_rf, sns.n_bands, &mut rng, &mut planner)
            }
        };
        let offset = src.carrier_hz - sns.f_ref_hz;
        let carrier: Vec<Complex64> = (0..k_rf)
            .map(|n| {
                let cycles = (offset * n as f64 / rate_hz).rem_euclid(1.0);
                src.amplitude * envelope[n] * Complex64::from_polar(1.0, 2.0 * PI * cycles)
            })
            .collect();
        let steering = geom.steering_vector(geom.positions(), src.carrier_hz, src.theta_deg)?;
        for (row, &phase) in steering.iter().enumerate() {
            for (x, &c) in out.row_mut(row).iter_mut().zip(&carrier) {
                *x += c * phase;
            }
        }
    }

    let noise_power = scene.noise_power();
    if noise_power > 0.0 {
        let sigma = (noise_power / 2.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        for x in out.data_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *x += Complex64::new(re, im) * sigma;
        }
    }
    Ok(out)
}

fn check_rf(rf: &ComplexMatrix, cfg: &SnsConfig) -> Result<()> {
    if rf.rows() != cfg.antennas {
        return Err(Error::Shape {
            op: "digitize",
            left: rf.shape(),
            right: (cfg.antennas, rf.cols()),
        });
    }
    if rf.cols() % cfg.decimation() != 0 {
        return Err(Error::Shape {
            op: "digitize (K_rf divisible by N)",
            left: rf.shape(),
            right: (cfg.antennas, cfg.decimation()),
        });
    }
    Ok(())
}

/// Spectrum bin feeding output index `j` of a `k_out`-point baseband
/// covering `[-B/2, B/2)`.
fn baseband_bin(j: usize, k_out: usize, k_in: usize) -> usize {
    if j < k_out.div_ceil(2) {
        j
    } else {
        k_in - (k_out - j)
    }
}

/// Mix, low-pass at `B/2` and sample at `B`: `K = K_rf / N`.
pub fn sns_digitize(rf: &ComplexMatrix, cfg: &SnsConfig) -> Result<BasebandBatch> {
    check_rf(rf, cfg)?;
    let k_rf = rf.cols();
    let n = cfg.decimation();
    let k = k_rf / n;
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(k_rf);
    let inverse = planner.plan_fft_inverse(k);
    let mut out = ComplexMatrix::zeros(rf.rows(), k);

    for l in 0..rf.rows() {
        // The mixing sequence has period N at the RF rate.
        let mix: Vec<Complex64> = (0..n)
            .map(|p| {
                cfg.beta
                    .iter()
                    .map(|&b| {
                        let cycles = ((b - 1) * p % n) as f64 / n as f64;
                        cfg.alpha(l, b) * Complex64::from_polar(1.0, -2.0 * PI * cycles)
                    })
                    .sum()
            })
            .collect();
        let mut buf: Vec<Complex64> = rf.row(l).iter().enumerate().map(|(t, &x)| x * mix[t % n]).collect();
        forward.process(&mut buf);
        let mut base: Vec<Complex64> = (0..k).map(|j| buf[baseband_bin(j, k, k_rf)]).collect();
        inverse.process(&mut base);
        let norm = 1.0 / k_rf as f64;
        for (o, z) in out.row_mut(l).iter_mut().zip(base) {
            *o = z * norm;
        }
    }
    Ok(BasebandBatch {
        samples: out,
        sampling: Sampling::SubNyquist,
        phase_truth: Vec::new(),
    })
}

/// What the Nyquist-rate reference keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NyquistBand {
    /// Downconvert band `b` and low-pass at `B/2`, no decimation.
    Band(usize),
    /// The whole `N * B` span as captured.
    All,
}

/// Nyquist-rate digitization: `K = K_rf`.
pub fn nyquist_digitize(rf: &ComplexMatrix, band: NyquistBand, cfg: &SnsConfig) -> Result<BasebandBatch> {
    check_rf(rf, cfg)?;
    let samples = match band {
        NyquistBand::All => rf.clone(),
        NyquistBand::Band(b) => {
            if b < 1 || b > cfg.n_bands {
                return Err(Error::Config(format!("band {b} outside [1, {}]", cfg.n_bands)));
            }
            let k_rf = rf.cols();
            let n = cfg.decimation();
            let k_pass = k_rf / n;
            let mut planner = FftPlanner::new();
            let forward = planner.plan_fft_forward(k_rf);
            let inverse = planner.plan_fft_inverse(k_rf);
            let mut out = ComplexMatrix::zeros(rf.rows(), k_rf);
            for l in 0..rf.rows() {
                let mut buf: Vec<Complex64> = rf
                    .row(l)
                    .iter()
                    .enumerate()
                    .map(|(t, &x)| {
                        let cycles = ((b - 1) * t % n) as f64 / n as f64;
                        x * Complex64::from_polar(1.0, -2.0 * PI * cycles)
                    })
                    .collect();
                forward.process(&mut buf);
                let mut filtered = vec![Complex64::new(0.0, 0.0); k_rf];
                for j in 0..k_pass {
                    let bin = baseband_bin(j, k_pass, k_rf);
                    filtered[bin] = buf[bin];
                }
                inverse.process(&mut filtered);
                let norm = 1.0 / k_rf as f64;
                for (o, z) in out.row_mut(l).iter_mut().zip(filtered) {
                    *o = z * norm;
                }
            }
            out
        }
    };
    Ok(BasebandBatch {
        samples,
        sampling: Sampling::Nyquist,
        phase_truth: Vec::new(),
    })
}

/// Element-space covariance `sum_m p_m s_m s_m^H + sigma^2 I` of the
/// physical antennas, with steering at each source's own carrier.
pub fn exact_covariance(scene: &SourceScene, geom: &ArrayGeometry) -> Result<ComplexMatrix> {
    let l = geom.num_antennas();
    let mut r = ComplexMatrix::zeros(l, l);
    for s in &scene.sources {
        let v = geom.steering_vector(geom.positions(), s.carrier_hz, s.theta_deg)?;
        let p = s.amplitude * s.amplitude;
        for i in 0..l {
            for j in 0..l {
                r[(i, j)] += v[i] * v[j].conj() * p;
            }
        }
    }
    let noise = scene.noise_power();
    for i in 0..l {
        r[(i, i)] += noise;
    }
    Ok(r)
}

/// Numeric representation tag stored in the batch header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NumericTag {
    Float64 = 0,
    Float32 = 1,
    Fixed = 2,
}

impl NumericTag {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(NumericTag::Float64),
            1 => Ok(NumericTag::Float32),
            2 => Ok(NumericTag::Fixed),
            other => Err(Error::Format(format!("unknown numeric-kind code {other}"))),
        }
    }
}

pub const BATCH_MAGIC: [u8; 4] = *b"WRFE";
pub const BATCH_VERSION: u32 = 1;

/// Header of the binary batch format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchHeader {
    pub version: u32,
    pub rows: u32,
    pub cols: u32,
    pub sampling: Sampling,
    pub numeric: NumericTag,
}

/// Writes `magic, version, L, K, sampling, numeric-kind` followed by
/// row-major little-endian `(re, im)` float64 pairs.
pub fn write_matrix<W: Write>(
    mut w: W,
    m: &ComplexMatrix,
    sampling: Sampling,
    numeric: NumericTag,
) -> std::io::Result<()> {
    let dim = |x: usize| {
        u32::try_from(x).map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "dimension exceeds u32"))
    };
    w.write_all(&BATCH_MAGIC)?;
    w.write_all(&BATCH_VERSION.to_le_bytes())?;
    w.write_all(&dim(m.rows())?.to_le_bytes())?;
    w.write_all(&dim(m.cols())?.to_le_bytes())?;
    w.write_all(&[sampling.code(), numeric as u8])?;
    let mut buf = Vec::with_capacity(m.data().len() * 16);
    for z in m.data() {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<(BatchHeader, ComplexMatrix)> {
    let io = |e: std::io::Error| Error::Format(format!("truncated batch: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if magic != BATCH_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    let mut next_u32 = |r: &mut R| -> Result<u32> {
        r.read_exact(&mut word).map_err(io)?;
        Ok(u32::from_le_bytes(word))
    };
    let version = next_u32(&mut r)?;
    if version != BATCH_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let rows = next_u32(&mut r)?;
    let cols = next_u32(&mut r)?;
    let mut tags = [0u8; 2];
    r.read_exact(&mut tags).map_err(io)?;
    let header = BatchHeader {
        version,
        rows,
        cols,
        sampling: Sampling::from_code(tags[0])?,
        numeric: NumericTag::from_code(tags[1])?,
    };
    let count = rows as usize * cols as usize;
    let mut raw = vec![0u8; count * 16];
    r.read_exact(&mut raw).map_err(io)?;
    let data = raw
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            Complex64::new(re, im)
        })
        .collect();
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err(Error::Format("trailing bytes after matrix data".into()));
    }
    Ok((header, ComplexMatrix::new(rows as usize, cols as usize, data)?))
}

pub fn write_batch_file(path: &Path, batch: &BasebandBatch, numeric: NumericTag) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_matrix(std::io::BufWriter::new(file), &batch.samples, batch.sampling, numeric).map_err(|e| Error::io(path, e))
}

pub fn read_batch_file(path: &Path) -> Result<(BatchHeader, BasebandBatch)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let (header, samples) = read_matrix(std::io::BufReader::new(file))?;
    Ok((
        header,
        BasebandBatch {
            samples,
            sampling: header.sampling,
            phase_truth: Vec::new(),
        },
    ))
}
