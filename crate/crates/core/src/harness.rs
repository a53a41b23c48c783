//! Monte-Carlo experiment runner: NDEE metric, config loading, sweeps and
//! CSV records.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doa::Pipeline;
use crate::error::{Error, Result};
use crate::fxp::{Block, FxpFormat, NumericKind, NumericMode, Overflow, Rounding};
use crate::wrfe::{
    half_wavelength, nyquist_digitize, sns_digitize, synthesize_rf, ArrayGeometry, ArrayKind, BasebandBatch, Envelope,
    MixingPolicy, NyquistBand, Sampling, SnsConfig, Source, SourceScene,
};

pub const SEED_ENV: &str = "SENSE_SEED";

/// Absolute error per true DoA under the optimal one-to-one matching, in
/// degrees and in `truth` order. Unmatched truths cost 180.
pub fn match_errors(estimated: &[f64], truth: &[f64]) -> Result<Vec<f64>> {
    if truth.is_empty() {
        return Err(Error::Domain("NDEE needs at least one true DoA".into()));
    }
    if estimated.len() > truth.len() {
        return Err(Error::Domain(format!(
            "{} estimates for {} true DoAs",
            estimated.len(),
            truth.len()
        )));
    }
    let best = (0..truth.len())
        .permutations(estimated.len())
        .min_by(|a, b| cost(a, estimated, truth).total_cmp(&cost(b, estimated, truth)))
        .expect("at least one assignment");
    let mut errors = vec![180.0; truth.len()];
    for (&t, &e) in best.iter().zip(estimated) {
        errors[t] = (e - truth[t]).abs();
    }
    Ok(errors)
}

fn cost(assign: &[usize], estimated: &[f64], truth: &[f64]) -> f64 {
    assign.iter().zip(estimated).map(|(&t, &e)| (e - truth[t]).abs()).sum()
}

/// Normalized DoA error: mean of [`match_errors`] over 180 degrees.
pub fn ndee(estimated: &[f64], truth: &[f64]) -> Result<f64> {
    let errors = match_errors(estimated, truth)?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64 / 180.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Samples,
    Snr,
    WlInteger,
    WlFraction,
    None,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Samples => "samples",
            SweepKind::Snr => "snr",
            SweepKind::WlInteger => "wl-integer",
            SweepKind::WlFraction => "wl-fraction",
            SweepKind::None => "none",
        }
    }
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "samples" => SweepKind::Samples,
            "snr" => SweepKind::Snr,
            "wl-integer" => SweepKind::WlInteger,
            "wl-fraction" => SweepKind::WlFraction,
            "none" => SweepKind::None,
            other => return Err(Error::Config(format!("unknown sweep kind '{other}'"))),
        })
    }
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Built-in experiment presets.
pub const PRESETS: [&str; 4] = ["fig5a", "fig5b", "fig5c", "fig6"];

const DEFAULTS_TOML: &str = include_str!("../presets/defaults.toml");

fn preset_toml(name: &str) -> Result<&'static str> {
    Ok(match name {
        "fig5a" => include_str!("../presets/fig5a.toml"),
        "fig5b" => include_str!("../presets/fig5b.toml"),
        "fig5c" => include_str!("../presets/fig5c.toml"),
        "fig6" => include_str!("../presets/fig6.toml"),
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}' (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: u64,
    trials: usize,
    sampling: Vec<String>,
    sweep: RawSweep,
    scene: RawScene,
    array: RawArray,
    sns: RawSns,
    numeric: RawNumeric,
    estimator: RawEstimator,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    kind: String,
    values: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    thetas: Vec<f64>,
    bands: Vec<usize>,
    offsets: Vec<f64>,
    snr_db: f64,
    k_rf: usize,
    envelope: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArray {
    kind: String,
    antennas: usize,
    positions: Vec<usize>,
    spacing: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSns {
    bands: usize,
    band_width: f64,
    f_ref: f64,
    beta: Vec<usize>,
    mixing_seed: u64,
    policy: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNumeric {
    modes: Vec<String>,
    scaling: Vec<String>,
    rounding: String,
    overflow: String,
    scales: BTreeMap<String, i32>,
    kind: Option<String>,
    total_bits: Option<u32>,
    integer_bits: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEstimator {
    m: usize,
}

/// Recursively overlays `over` onto `base`; tables merge, anything else
/// replaces.
fn deep_merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => deep_merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn parse_table(text: &str, what: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::Config(format!("{what}: {e}")))
}

/// One compared arithmetic: a base mode and whether block scales apply.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericVariant {
    pub mode: NumericMode,
    pub scaled: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub sweep: SweepKind,
    pub values: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub scene: SourceScene,
    pub geometry: ArrayGeometry,
    pub sns: SnsConfig,
    pub samplings: Vec<Sampling>,
    pub variants: Vec<NumericVariant>,
    /// Block exponents used by scaled variants.
    pub scales: BTreeMap<Block, i32>,
    /// Sources the estimator looks for.
    pub m: usize,
}

fn parse_sampling(s: &str) -> Result<Sampling> {
    match s {
        "ns" | "nyquist" => Ok(Sampling::Nyquist),
        "sns" | "sub-nyquist" => Ok(Sampling::SubNyquist),
        other => Err(Error::Config(format!("unknown sampling '{other}'"))),
    }
}

fn parse_array_kind(s: &str) -> Result<ArrayKind> {
    match s {
        "ula" | "uniform" => Ok(ArrayKind::Uniform),
        "sparse" | "saa" | "nested" => Ok(ArrayKind::Sparse),
        other => Err(Error::Config(format!("unknown array kind '{other}'"))),
    }
}

impl ExperimentConfig {
    /// Defaults, then `preset`, then `overrides` (TOML text).
    pub fn load(preset: Option<&str>, overrides: Option<&str>) -> Result<Self> {
        let mut table = parse_table(DEFAULTS_TOML, "defaults")?;
        if let Some(name) = preset {
            deep_merge(&mut table, parse_table(preset_toml(name)?, name)?);
        }
        if let Some(text) = overrides {
            deep_merge(&mut table, parse_table(text, "config")?);
        }
        let raw: RawConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::from_raw(raw)
    }

    pub fn preset(name: &str) -> Result<Self> {
        Self::load(Some(name), None)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::load(None, Some(text))
    }

    pub fn from_file(preset: Option<&str>, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::load(preset, Some(&text))
    }

    /// Applies `SENSE_SEED` if set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}='{v}' is not an unsigned integer")))?;
        }
        Ok(self)
    }

    fn from_raw(raw: RawConfig) -> Result<Self> {
        let sweep: SweepKind = raw.sweep.kind.parse()?;

        let mut sns = SnsConfig::new(
            raw.sns.bands,
            raw.sns.band_width,
            raw.sns.f_ref,
            if raw.sns.beta.is_empty() {
                (1..=raw.sns.bands).collect()
            } else {
                raw.sns.beta
            },
            1,
            MixingPolicy::Shared,
            raw.sns.mixing_seed,
        )?;
        let policy = match raw.sns.policy.as_str() {
            "shared" => MixingPolicy::Shared,
            "per-antenna" => MixingPolicy::PerAntenna,
            other => return Err(Error::Config(format!("unknown mixing policy '{other}'"))),
        };

        let spacing = if raw.array.spacing > 0.0 {
            raw.array.spacing
        } else {
            half_wavelength(sns.band_centre(sns.n_bands))
        };
        let geometry = match parse_array_kind(&raw.array.kind)? {
            ArrayKind::Uniform => ArrayGeometry::ula(raw.array.antennas, spacing)?,
            ArrayKind::Sparse => ArrayGeometry::sparse(raw.array.positions, spacing)?,
        };
        sns = SnsConfig::new(
            sns.n_bands,
            sns.band_width_hz,
            sns.f_ref_hz,
            sns.beta,
            geometry.num_antennas(),
            policy,
            sns.mixing_seed,
        )?;

        let m = raw.scene.thetas.len();
        let bands: Vec<usize> = if raw.scene.bands.is_empty() {
            if m > sns.beta.len() {
                return Err(Error::Config(format!(
                    "{m} sources but only {} selected bands; list scene.bands and scene.offsets",
                    sns.beta.len()
                )));
            }
            sns.beta[..m].to_vec()
        } else {
            raw.scene.bands
        };
        if bands.len() != m {
            return Err(Error::Config(format!("{m} angles but {} bands", bands.len())));
        }
        let offsets = if raw.scene.offsets.is_empty() {
            vec![0.0; m]
        } else if raw.scene.offsets.len() == m {
            raw.scene.offsets
        } else {
            return Err(Error::Config(format!(
                "{m} angles but {} carrier offsets",
                raw.scene.offsets.len()
            )));
        };
        let envelope = match raw.scene.envelope.as_str() {
            "band-limited" => Envelope::BandLimited,
            "constant" => Envelope::Constant,
            other => return Err(Error::Config(format!("unknown envelope '{other}'"))),
        };
        let scene = SourceScene {
            sources: (0..m)
                .map(|i| Source {
                    theta_deg: raw.scene.thetas[i],
                    carrier_hz: sns.band_centre(bands[i]) + offsets[i],
                    band: bands[i],
                    amplitude: 1.0,
                    waveform_seed: i as u64,
                })
                .collect(),
            snr_db: raw.scene.snr_db,
            k_rf: raw.scene.k_rf,
            envelope,
        };

        let rounding = match raw.numeric.rounding.as_str() {
            "truncate" => Rounding::Truncate,
            "nearest-even" => Rounding::NearestEven,
            other => return Err(Error::Config(format!("unknown rounding '{other}'"))),
        };
        let overflow = match raw.numeric.overflow.as_str() {
            "saturate" => Overflow::Saturate,
            "wrap" => Overflow::Wrap,
            other => return Err(Error::Config(format!("unknown overflow '{other}'"))),
        };
        let mut modes: Vec<NumericMode> = match raw.numeric.kind.as_deref() {
            None => raw.numeric.modes.iter().map(|s| s.parse()).collect::<Result<_>>()?,
            Some("fixed") => {
                let (Some(w), Some(i)) = (raw.numeric.total_bits, raw.numeric.integer_bits) else {
                    return Err(Error::Config(
                        "numeric.kind = \"fixed\" needs numeric.total_bits and numeric.integer_bits".into(),
                    ));
                };
                vec![NumericMode::fixed(FxpFormat::new(w, i)?)]
            }
            Some(other) => vec![other.parse()?],
        };
        for mode in &mut modes {
            if let NumericKind::Fixed(fmt) = mode.kind {
                mode.kind = NumericKind::Fixed(fmt.with_rounding(rounding).with_overflow(overflow));
            }
        }
        let mut scales = BTreeMap::new();
        for (name, e) in raw.numeric.scales {
            let block: Block = name.parse()?;
            // Validates the range.
            NumericMode::float64().with_scale(block, e)?;
            if e != 0 {
                scales.insert(block, e);
            }
        }
        let scaling: Vec<bool> = raw
            .numeric
            .scaling
            .iter()
            .map(|s| match s.as_str() {
                "off" => Ok(false),
                "on" => Ok(true),
                other => Err(Error::Config(format!("unknown scaling option '{other}'"))),
            })
            .collect::<Result<_>>()?;
        let mut variants = Vec::new();
        for mode in &modes {
            for &scaled in &scaling {
                // Scales only exist in fixed point.
                let v = NumericVariant {
                    mode: mode.clone(),
                    scaled: scaled && matches!(mode.kind, NumericKind::Fixed(_)),
                };
                if !variants.contains(&v) {
                    variants.push(v);
                }
            }
        }

        let cfg = Self {
            sweep,
            values: raw.sweep.values,
            trials: raw.trials,
            seed: raw.seed,
            scene,
            geometry,
            sns,
            samplings: raw.sampling.iter().map(|s| parse_sampling(s)).collect::<Result<_>>()?,
            variants,
            scales,
            m: if raw.estimator.m == 0 { m } else { raw.estimator.m },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.values.is_empty() {
            return Err(Error::Config("sweep values must be nonempty".into()));
        }
        if self.values.windows(2).any(|w| w[0] >= w[1]) || self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(
                "sweep values must be finite and strictly ascending".into(),
            ));
        }
        if self.samplings.is_empty() || self.variants.is_empty() {
            return Err(Error::Config(
                "need at least one sampling kind and one numeric mode".into(),
            ));
        }
        if self.scene.m() > 5 {
            return Err(Error::Config("at most 5 sources are supported".into()));
        }
        for &v in &self.values {
            let point = self.scene_at(v)?;
            point.validate(&self.sns)?;
            if point.k_rf % self.sns.decimation() != 0 {
                return Err(Error::Config(format!(
                    "RF sample count {} is not a multiple of N = {}",
                    point.k_rf,
                    self.sns.decimation()
                )));
            }
            for variant in &self.variants {
                self.mode_at(variant, v)?;
            }
        }
        // Registry feasibility for the estimator's M.
        Pipeline::new(
            self.geometry.clone(),
            self.grid_frequency(),
            self.m,
            NumericMode::float64(),
        )?;
        Ok(())
    }

    /// Scene with the sweep value applied.
    pub fn scene_at(&self, value: f64) -> Result<SourceScene> {
        let mut scene = self.scene.clone();
        match self.sweep {
            SweepKind::Samples => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!("sample count {value} is not a positive integer")));
                }
                scene.k_rf = value as usize;
            }
            SweepKind::Snr => scene.snr_db = value,
            _ => {}
        }
        Ok(scene)
    }

    /// Numeric mode for a variant with the sweep value applied.
    pub fn mode_at(&self, variant: &NumericVariant, value: f64) -> Result<NumericMode> {
        let mut mode = variant.mode.clone();
        if let NumericKind::Fixed(fmt) = mode.kind {
            let bits = |v: f64| -> Result<u32> {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Config(format!("bit count {v} is not a nonnegative integer")));
                }
                Ok(v as u32)
            };
            let (w, i) = match self.sweep {
                SweepKind::WlInteger => {
                    let i = bits(value)?;
                    (i + fmt.frac_bits(), i)
                }
                SweepKind::WlFraction => {
                    let f = bits(value)?;
                    (fmt.integer_bits() + f, fmt.integer_bits())
                }
                _ => (fmt.total_bits(), fmt.integer_bits()),
            };
            mode.kind = NumericKind::Fixed(
                FxpFormat::new(w, i)?
                    .with_rounding(fmt.rounding)
                    .with_overflow(fmt.overflow),
            );
            if variant.scaled {
                for (&block, &e) in &self.scales {
                    mode.set_scale(block, e)?;
                }
            }
        }
        Ok(mode)
    }

    /// Steering-grid frequency: the mean carrier of the busy bands.
    pub fn grid_frequency(&self) -> f64 {
        self.scene.mean_carrier()
    }

    /// Digitized batch of one trial.
    pub fn batch(&self, scene: &SourceScene, sampling: Sampling, seed: u64) -> Result<BasebandBatch> {
        let rf = synthesize_rf(scene, &self.geometry, &self.sns, self.sns.rate(), seed)?;
        digitize(&rf, sampling, &self.sns)
    }
}

fn digitize(rf: &crate::numerics::ComplexMatrix, sampling: Sampling, sns: &SnsConfig) -> Result<BasebandBatch> {
    match sampling {
        Sampling::Nyquist => nyquist_digitize(rf, NyquistBand::All, sns),
        Sampling::SubNyquist => sns_digitize(rf, sns),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdeeRecord {
    pub sweep_param: SweepKind,
    pub value: f64,
    pub array: ArrayKind,
    pub sampling: Sampling,
    pub numeric: String,
    pub mean_ndee: f64,
    pub std_ndee: f64,
    pub trials: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    sweep_param: String,
    value: f64,
    array: String,
    sampling: String,
    numeric: String,
    mean_ndee: f64,
    std_ndee: f64,
    trials: usize,
}

/// Mean and sample standard deviation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-trial NDEE for every `(sampling, variant)` pair at one sweep value.
/// Row-major: `out[trial][sampling * variants + variant]`.
pub fn run_trials(cfg: &ExperimentConfig, value: f64) -> Result<Vec<Vec<f64>>> {
    let scene = cfg.scene_at(value)?;
    let truth = scene.thetas();
    let f = cfg.grid_frequency();
    let pipelines: Vec<Pipeline> = cfg
        .variants
        .iter()
        .map(|v| Pipeline::new(cfg.geometry.clone(), f, cfg.m, cfg.mode_at(v, value)?))
        .collect::<Result<_>>()?;

    let one = |index: usize| -> Result<Vec<f64>> {
        let seed = cfg.seed.wrapping_add(index as u64);
        let rf = synthesize_rf(&scene, &cfg.geometry, &cfg.sns, cfg.sns.rate(), seed)?;
        let mut out = Vec::with_capacity(cfg.samplings.len() * pipelines.len());
        for &sampling in &cfg.samplings {
            let batch = digitize(&rf, sampling, &cfg.sns)?;
            for p in &pipelines {
                let res = p.run_batch(&batch.samples)?;
                out.push(ndee(&res.doas_deg, &truth)?);
            }
        }
        Ok(out)
    };
    let results: Vec<Result<Vec<f64>>> = (0..cfg.trials).into_par_iter().map(one).collect();
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| Error::Trial {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Records for one sweep value, in `(sampling, variant)` order.
pub fn run_point(cfg: &ExperimentConfig, value: f64) -> Result<Vec<NdeeRecord>> {
    let trials = run_trials(cfg, value)?;
    let mut records = Vec::new();
    for (s, &sampling) in cfg.samplings.iter().enumerate() {
        for (v, variant) in cfg.variants.iter().enumerate() {
            let col = s * cfg.variants.len() + v;
            let xs: Vec<f64> = trials.iter().map(|t| t[col]).collect();
            let (mean_ndee, std_ndee) = mean_std(&xs);
            records.push(NdeeRecord {
                sweep_param: cfg.sweep,
                value,
                array: cfg.geometry.kind(),
                sampling,
                numeric: cfg.mode_at(variant, value)?.label(),
                mean_ndee,
                std_ndee,
                trials: cfg.trials,
            });
        }
    }
    Ok(records)
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<NdeeRecord>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for &v in &cfg.values {
        out.extend(run_point(cfg, v)?);
    }
    Ok(out)
}

/// Writes records as CSV, stably sorted by sweep value.
pub fn write_csv<W: std::io::Write>(records: &[NdeeRecord], w: W) -> std::result::Result<(), csv::Error> {
    let mut sorted: Vec<&NdeeRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.value.total_cmp(&b.value));
    let mut writer = csv::Writer::from_writer(w);
    for r in sorted {
        writer.serialize(CsvRow {
            sweep_param: r.sweep_param.name().into(),
            value: r.value,
            array: r.array.label().into(),
            sampling: r.sampling.label().into(),
            numeric: r.numeric.clone(),
            mean_ndee: r.mean_ndee,
            std_ndee: r.std_ndee,
            trials: r.trials,
        })?;
    }
    writer.flush()?;
    Ok(())
}

pub fn emit_csv(records: &[NdeeRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Config("no records to write".into()));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(records, std::io::BufWriter::new(file)).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<NdeeRecord>> {
    let mut reader = csv::Reader::from_reader(r);
    let header = reader.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    let expected = "sweep_param,value,array,sampling,numeric,mean_ndee,std_ndee,trials";
    if header.iter().join(",") != expected {
        return Err(Error::Format(format!(
            "unexpected CSV header '{}'",
            header.iter().join(",")
        )));
    }
    reader
        .deserialize::<CsvRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::Format(e.to_string()))?;
            Ok(NdeeRecord {
                sweep_param: row.sweep_param.parse()?,
                value: row.value,
                array: parse_array_kind(&row.array)?,
                sampling: parse_sampling(&row.sampling)?,
                numeric: row.numeric,
                mean_ndee: row.mean_ndee,
                std_ndee: row.std_ndee,
                trials: row.trials,
            })
        })
        .collect()
}

pub fn parse_csv(path: &Path) -> Result<Vec<NdeeRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}
