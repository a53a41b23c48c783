use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sense_core::doa::Pipeline;
use sense_core::fxp::{Block, NumericMode};
use sense_core::harness::{emit_csv, run_sweep, ExperimentConfig, PRESETS};
use sense_core::wrfe::{read_batch_file, write_batch_file, write_matrix, ArrayGeometry, NumericTag, Sampling};
use sense_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "sense",
    about = "Wideband DoA sensing experiments",
    disable_version_flag = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArrayArg {
    Ula,
    Sparse,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplingArg {
    Ns,
    Sns,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize and digitize one batch from an experiment file.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Preset the config file is layered over.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "sns")]
        sampling: SamplingArg,
        /// Added to the seed, like a trial index.
        #[arg(long, default_value_t = 0)]
        trial: u64,
    },
    /// Estimate DoAs from a batch file.
    Estimate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        array: Option<ArrayArg>,
        #[arg(long)]
        m: Option<usize>,
        /// Steering-grid frequency in Hz.
        #[arg(long)]
        band_freq: Option<f64>,
        /// float64, float32 or fixed:W,I.
        #[arg(long, default_value = "float64")]
        numeric: String,
        /// Block exponent, e.g. acf=-2. Repeatable.
        #[arg(long = "scale", value_name = "BLOCK=EXP")]
        scales: Vec<String>,
        /// Sparse element positions, e.g. 1,2,3,6.
        #[arg(long, value_delimiter = ',')]
        positions: Option<Vec<usize>>,
        /// Unit spacing in metres.
        #[arg(long)]
        spacing: Option<f64>,
        /// Experiment file supplying geometry, M and grid frequency.
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV `theta_deg,P`.
        #[arg(long)]
        dump_spectrum: Option<PathBuf>,
        /// The matrix entering the EVD, in batch format.
        #[arg(long)]
        dump_sap: Option<PathBuf>,
    },
    /// Run a Monte-Carlo sweep and write NDEE records.
    Sweep {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        preset: String,
        /// Overrides layered over the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the version.
    Version,
}

fn load(preset: Option<&str>, config: Option<&Path>) -> Result<ExperimentConfig> {
    match config {
        Some(path) => ExperimentConfig::from_file(preset, path),
        None => ExperimentConfig::load(preset, None),
    }?
    .with_env_seed()
}

fn parse_scale(s: &str) -> Result<(Block, i32)> {
    let (block, exp) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("scale '{s}' is not BLOCK=EXP")))?;
    let exp = exp
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("scale exponent in '{s}' is not an integer")))?;
    Ok((block.trim().parse()?, exp))
}

fn write_spectrum(path: &Path, thetas: &[f64], p: &[f64]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["theta_deg", "P"]).map_err(csv_err)?;
    for (t, v) in thetas.iter().zip(p) {
        w.write_record([t.to_string(), v.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn simulate(config: Option<&Path>, preset: Option<&str>, out: &Path, sampling: SamplingArg, trial: u64) -> Result<()> {
    let cfg = load(preset, config)?;
    let sampling = match sampling {
        SamplingArg::Ns => Sampling::Nyquist,
        SamplingArg::Sns => Sampling::SubNyquist,
    };
    let batch = cfg.batch(&cfg.scene, sampling, cfg.seed.wrapping_add(trial))?;
    write_batch_file(out, &batch, NumericTag::Float64)?;
    eprintln!(
        "wrote {} x {} {} batch to {}",
        batch.antennas(),
        batch.k(),
        sampling.label(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn estimate(
    input: &Path,
    array: Option<ArrayArg>,
    m: Option<usize>,
    band_freq: Option<f64>,
    numeric: &str,
    scales: &[String],
    positions: Option<Vec<usize>>,
    spacing: Option<f64>,
    config: Option<&Path>,
    dump_spectrum: Option<&Path>,
    dump_sap: Option<&Path>,
) -> Result<()> {
    let cfg = load(None, config)?;
    let (header, batch) = read_batch_file(input)?;
    let spacing = spacing.unwrap_or(cfg.geometry.spacing());
    let sparse = match array {
        Some(ArrayArg::Sparse) => true,
        Some(ArrayArg::Ula) => false,
        None => cfg.geometry.kind() == sense_core::ArrayKind::Sparse,
    };
    let geom = if sparse {
        let positions = positions.unwrap_or_else(|| {
            if cfg.geometry.kind() == sense_core::ArrayKind::Sparse {
                cfg.geometry.positions().to_vec()
            } else {
                vec![1, 2, 3, 6]
            }
        });
        ArrayGeometry::sparse(positions, spacing)?
    } else {
        ArrayGeometry::ula(batch.antennas(), spacing)?
    };
    if geom.num_antennas() != batch.antennas() {
        return Err(Error::Shape {
            op: "estimate (antennas vs batch rows)",
            left: (geom.num_antennas(), 1),
            right: (header.rows as usize, header.cols as usize),
        });
    }
    let mut mode: NumericMode = numeric.parse()?;
    for s in scales {
        let (block, e) = parse_scale(s)?;
        mode.set_scale(block, e)?;
    }
    let m = m.unwrap_or(cfg.m);
    let pipeline = Pipeline::new(geom, band_freq.unwrap_or(cfg.grid_frequency()), m, mode)?;

    let result = if sparse {
        let smoothed = pipeline.smoothed(&batch.samples)?;
        if let Some(path) = dump_sap {
            dump_matrix(path, &smoothed.y_hat, header.sampling)?;
        }
        pipeline.run_smoothed(&smoothed)?
    } else {
        if let Some(path) = dump_sap {
            let r = sense_core::doa::covariance_stage(&batch.samples, &pipeline.mode);
            dump_matrix(path, &r, header.sampling)?;
        }
        pipeline.run_batch(&batch.samples)?
    };
    if let Some(path) = dump_spectrum {
        write_spectrum(path, &pipeline.grid.thetas, &result.spectrum)?;
    }
    for doa in &result.doas_deg {
        println!("{doa}");
    }
    if result.short {
        eprintln!(
            "warning: {} peak(s) found for {} source(s)",
            result.doas_deg.len(),
            result.m_used
        );
    }
    Ok(())
}

fn dump_matrix(path: &Path, m: &sense_core::ComplexMatrix, sampling: Sampling) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    write_matrix(std::io::BufWriter::new(file), m, sampling, NumericTag::Float64).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn sweep(preset: &str, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load(Some(preset), config)?;
    let records = run_sweep(&cfg)?;
    emit_csv(&records, out)?;
    eprintln!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            preset,
            out,
            sampling,
            trial,
        } => simulate(config.as_deref(), preset.as_deref(), &out, sampling, trial),
        Command::Estimate {
            input,
            array,
            m,
            band_freq,
            numeric,
            scales,
            positions,
            spacing,
            config,
            dump_spectrum,
            dump_sap,
        } => estimate(
            &input,
            array,
            m,
            band_freq,
            &numeric,
            &scales,
            positions,
            spacing,
            config.as_deref(),
            dump_spectrum.as_deref(),
            dump_sap.as_deref(),
        ),
        Command::Sweep { preset, config, out } => sweep(&preset, config.as_deref(), &out),
        Command::Version => {
            println!("sense {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
