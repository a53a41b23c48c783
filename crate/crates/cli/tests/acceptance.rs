//! Acceptance criteria. Runs every criterion, prints one line each and
//! exits non-zero if any fails. Pass a substring to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use sense_core::doa::{estimate, extract_vn, find_peaks, msg, EstimatorConfig, EstimatorInput, Pipeline, SteeringGrid};
use sense_core::fxp::NumericMode;
use sense_core::harness::{match_errors, ndee, run_sweep, ExperimentConfig, NdeeRecord};
use sense_core::numerics::{evd_hermitian, hermitian, matmul, qr_decompose, ComplexMatrix};
use sense_core::sap::{sap_pipeline, vectorize_and_reduce};
use sense_core::wrfe::{exact_covariance, half_wavelength, ArrayGeometry, Sampling, SnsConfig, SourceScene};
use sense_core::{Complex64, Error};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Criterion = (usize, &'static str, Duration, fn() -> Outcome);

fn gaussian_matrix(rng: &mut StdRng, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

fn random_psd(rng: &mut StdRng, n: usize, rank: usize, noise: f64) -> ComplexMatrix {
    let b = gaussian_matrix(rng, n, rank);
    let r = matmul(&b, &hermitian(&b)).unwrap();
    r.add(&ComplexMatrix::identity(n).scale(noise)).unwrap()
}

fn config(preset: Option<&str>, overrides: &str) -> ExperimentConfig {
    ExperimentConfig::load(preset, Some(overrides)).expect("valid experiment config")
}

fn noiseless_exactness() -> Outcome {
    let sns = SnsConfig::default_for(4);
    let f = sns.band_centre(1);
    let geom = ArrayGeometry::ula(4, half_wavelength(sns.band_centre(sns.n_bands))).unwrap();
    let p = Pipeline::new(geom.clone(), f, 1, NumericMode::float64()).unwrap();
    let mut worst = 0.0f64;
    for theta in 0..=180 {
        let scene = SourceScene::at_band_centres(&[theta as f64], &[1], &sns, f64::INFINITY, 1000).unwrap();
        let r = exact_covariance(&scene, &geom).unwrap();
        let res = p.run_covariance(&r).unwrap();
        worst = worst.max(ndee(&res.doas_deg, &[theta as f64]).unwrap());
    }
    outcome(worst == 0.0, format!("max NDEE over 181 grid angles = {worst}"))
}

fn ula_error_bound() -> Outcome {
    let cfg = config(
        Some("fig5a"),
        "sampling = [\"sns\"]\nsweep.kind = \"none\"\nsweep.values = [0.0]\nscene.k_rf = 2000\ntrials = 200\n",
    );
    let r = &run_sweep(&cfg).unwrap()[0];
    outcome(
        r.mean_ndee < 0.03,
        format!("mean NDEE = {:.5} over {} trials (bound 0.03)", r.mean_ndee, r.trials),
    )
}

fn sparse_super_resolution() -> Outcome {
    let thetas = [20.0, 50.0, 80.0, 110.0, 140.0];
    let cfg = config(
        None,
        "array.kind = \"sparse\"\nscene.thetas = [20.0, 50.0, 80.0, 110.0, 140.0]\nscene.snr_db = 20.0\nscene.k_rf = 2000\ntrials = 200\n",
    );
    let p = Pipeline::new(cfg.geometry.clone(), cfg.grid_frequency(), 5, NumericMode::float64()).unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    for sampling in [Sampling::SubNyquist, Sampling::Nyquist] {
        let mut errors = Vec::new();
        for t in 0..cfg.trials {
            let batch = cfg.batch(&cfg.scene, sampling, cfg.seed + t as u64).unwrap();
            let res = p.run_batch(&batch.samples).unwrap();
            errors.extend(match_errors(&res.doas_deg, &thetas).unwrap());
        }
        errors.sort_by(f64::total_cmp);
        let median = (errors[errors.len() / 2 - 1] + errors[errors.len() / 2]) / 2.0;
        pass &= median <= 3.0;
        details.push(format!("{} median error {median} deg", sampling.label()));
    }
    outcome(pass, format!("M=5 on 4 antennas: {}", details.join(", ")))
}

fn series(records: &[NdeeRecord], sampling: Sampling) -> Vec<&NdeeRecord> {
    let mut s: Vec<&NdeeRecord> = records.iter().filter(|r| r.sampling == sampling).collect();
    s.sort_by(|a, b| a.value.total_cmp(&b.value));
    s
}

fn ndee_trends() -> Outcome {
    let runs = [
        ("ula samples", Some("fig5a"), ""),
        ("saa samples", Some("fig5b"), ""),
        ("ula snr", Some("fig5c"), ""),
        (
            "saa snr",
            Some("fig5c"),
            "array.kind = \"sparse\"\nscene.thetas = [40.0, 85.0, 130.0]\n",
        ),
    ];
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, preset, extra) in runs {
        let records = run_sweep(&config(preset, extra)).unwrap();
        for sampling in [Sampling::Nyquist, Sampling::SubNyquist] {
            let s = series(&records, sampling);
            for w in s.windows(2) {
                if w[1].mean_ndee > w[0].mean_ndee + w[0].std_ndee {
                    pass = false;
                    notes.push(format!(
                        "{name} {}: {} -> {} rises {:.4} -> {:.4}",
                        sampling.label(),
                        w[0].value,
                        w[1].value,
                        w[0].mean_ndee,
                        w[1].mean_ndee
                    ));
                }
            }
        }
        let ns = series(&records, Sampling::Nyquist);
        let sns = series(&records, Sampling::SubNyquist);
        for (a, b) in ns.iter().zip(&sns) {
            if b.mean_ndee < a.mean_ndee {
                pass = false;
                notes.push(format!(
                    "{name} at {}: sns {:.4} < ns {:.4}",
                    a.value, b.mean_ndee, a.mean_ndee
                ));
            }
        }
        let last = sns.last().unwrap();
        notes.push(format!("{name} sns {:.4}->{:.4}", sns[0].mean_ndee, last.mean_ndee));
    }
    outcome(pass, notes.join("; "))
}

fn word_length_ordering() -> Outcome {
    let arrays = [
        ("ula", "array.kind = \"ula\"\nscene.thetas = [50.0, 110.0]\n"),
        ("saa", "array.kind = \"sparse\"\nscene.thetas = [40.0, 85.0, 130.0]\n"),
    ];
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, array) in arrays {
        // Precision ordering on matched seeds, with the fig6 block scales
        // keeping every format in range.
        let text = format!(
            "{array}sweep.kind = \"none\"\nsweep.values = [0.0]\ntrials = 200\n\
             numeric.modes = [\"float32\", \"fixed:24,8\", \"fixed:17,7\"]\nnumeric.scaling = [\"on\"]\n"
        );
        let r = run_sweep(&config(Some("fig6"), &text)).unwrap();
        let means: Vec<f64> = r.iter().map(|x| x.mean_ndee).collect();
        let ordered = means[0] <= means[1] && means[1] <= means[2];
        pass &= ordered;
        notes.push(format!(
            "{name} {}={:.4} {}={:.4} {}={:.4}",
            r[0].numeric, means[0], r[1].numeric, means[1], r[2].numeric, means[2]
        ));

        // Scaling at small integer budgets.
        let text = format!("{array}sweep.values = [2.0, 3.0]\ntrials = 200\n");
        let r = run_sweep(&config(Some("fig6"), &text)).unwrap();
        for pair in r.chunks(2) {
            let (off, on) = (&pair[0], &pair[1]);
            let better = on.mean_ndee < off.mean_ndee;
            pass &= better;
            notes.push(format!(
                "{name} I={} unscaled {:.4} scaled {:.4}",
                off.value, off.mean_ndee, on.mean_ndee
            ));
        }
    }
    outcome(pass, notes.join("; "))
}

fn numerics_suite() -> Outcome {
    let mut rng = StdRng::seed_from_u64(6);
    let mut worst_evd = 0.0f64;
    let mut worst_pair = 0.0f64;
    let mut worst_qr = 0.0f64;
    let mut worst_unitary = 0.0f64;
    let mut worst_lower = 0.0f64;
    for n in [4, 6] {
        for _ in 0..1000 {
            let rank = rng.random_range(1..=n);
            let a = random_psd(&mut rng, n, rank, 0.0);
            let norm = a.frobenius_norm();
            let e = evd_hermitian(&a).unwrap();
            worst_evd = worst_evd.max(a.sub(&e.reconstruct()).unwrap().frobenius_norm() / norm);
            for (j, &lambda) in e.eigenvalues.iter().enumerate() {
                let v = ComplexMatrix::column_vector(&e.eigenvectors.column(j));
                let av = matmul(&a, &v).unwrap();
                worst_pair = worst_pair.max(av.sub(&v.scale(lambda)).unwrap().frobenius_norm() / norm);
            }

            let h = gaussian_matrix(&mut rng, n, n);
            let h = h.add(&hermitian(&h)).unwrap();
            let (q, r) = qr_decompose(&h).unwrap();
            let hn = h.frobenius_norm();
            worst_qr = worst_qr.max(h.sub(&matmul(&q, &r).unwrap()).unwrap().frobenius_norm() / hn);
            let qhq = matmul(&hermitian(&q), &q).unwrap();
            worst_unitary = worst_unitary.max(qhq.sub(&ComplexMatrix::identity(n)).unwrap().max_abs());
            for i in 0..n {
                for j in 0..i {
                    worst_lower = worst_lower.max(r[(i, j)].norm());
                }
            }
        }
    }
    let pass = worst_evd < 1e-6 && worst_pair < 1e-7 && worst_qr < 1e-10 && worst_unitary < 1e-9 && worst_lower < 1e-9;
    outcome(
        pass,
        format!(
            "2000 matrices: evd {worst_evd:.2e}, eigenpair {worst_pair:.2e}, qr {worst_qr:.2e}, unitarity {worst_unitary:.2e}, lower {worst_lower:.2e}"
        ),
    )
}

/// Smallest positive lag missing from the difference coarray, by
/// enumerating all pairs.
fn first_hole(positions: &[usize]) -> Option<i64> {
    let span = *positions.last().unwrap() as i64 - 1;
    (1..=span).find(|&lag| {
        !positions
            .iter()
            .any(|&a| positions.iter().any(|&b| a as i64 - b as i64 == lag))
    })
}

fn sap_structure() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let geom = ArrayGeometry::nested_default(0.0625).unwrap();
    let mut worst_herm = 0.0f64;
    let mut worst_toeplitz = 0.0f64;
    let mut lengths_ok = true;
    for _ in 0..500 {
        let k = rng.random_range(8..=256);
        let y = gaussian_matrix(&mut rng, 4, k);
        let r = sense_core::sap::acf(&y);
        lengths_ok &= vectorize_and_reduce(&r, &geom).unwrap().len() == 11;
        let s = sap_pipeline(&y, &geom).unwrap();
        worst_herm = worst_herm.max(s.y_hat.hermitian_defect());
        worst_toeplitz = worst_toeplitz.max(s.toeplitz_defect());
    }
    let mut holes_ok = true;
    let mut named = Vec::new();
    for positions in [vec![1, 2, 6], vec![1, 3, 7], vec![1, 2, 5, 9], vec![1, 4, 5, 11]] {
        let expected = first_hole(&positions).expect("geometry has a hole");
        let g = ArrayGeometry::sparse(positions.clone(), 0.0625).unwrap();
        let l = positions.len();
        match vectorize_and_reduce(&ComplexMatrix::identity(l), &g) {
            Err(e @ Error::CoarrayHole { lag }) if lag == expected => {
                holes_ok &= e.to_string().contains(&format!("lag {expected}"));
                named.push(format!("{positions:?}->{lag}"));
            }
            other => {
                holes_ok = false;
                named.push(format!("{positions:?}->{other:?}"));
            }
        }
    }
    let pass = lengths_ok && worst_herm < 1e-9 && worst_toeplitz == 0.0 && holes_ok;
    outcome(
        pass,
        format!(
            "500 batches: r_hat length 11 {lengths_ok}, hermitian defect {worst_herm:.1e}, toeplitz defect {worst_toeplitz:.1e}; holes {}",
            named.join(" ")
        ),
    )
}

fn music_invariance() -> Outcome {
    let mut rng = StdRng::seed_from_u64(8);
    let f = 2.4e9;
    let ula = ArrayGeometry::ula(4, half_wavelength(f)).unwrap();
    let nested = ArrayGeometry::nested_default(half_wavelength(f)).unwrap();
    let grids = [
        SteeringGrid::for_geometry(&ula, f).unwrap(),
        SteeringGrid::for_geometry(&nested, f).unwrap(),
    ];
    let mode = NumericMode::float64();
    let mut scale_fail = 0;
    let mut sqrt_fail = 0;
    for t in 0..1000 {
        let grid = &grids[t % 2];
        let n = grid.rows();
        let m = rng.random_range(1..n);
        let noise = rng.random_range(0.01..1.0);
        let r = random_psd(&mut rng, n, m, noise);
        let cfg = EstimatorConfig::full(n, m).unwrap();
        let base = estimate(EstimatorInput::Covariance(&r), grid, &cfg, &mode).unwrap();
        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled = estimate(EstimatorInput::Covariance(&r.scale(c)), grid, &cfg, &mode).unwrap();
        if scaled.peak_indices != base.peak_indices {
            scale_fail += 1;
        }

        let vn = extract_vn(&evd_hermitian(&r).unwrap(), m).unwrap();
        let p = msg(grid, &vn).unwrap();
        let p_root: Vec<f64> = (0..grid.s_e.cols())
            .map(|i| {
                let norm_sqr: f64 = (0..vn.v_n.cols())
                    .map(|k| {
                        (0..n)
                            .map(|l| grid.s_e[(l, i)].conj() * vn.v_n[(l, k)])
                            .sum::<Complex64>()
                            .norm_sqr()
                    })
                    .sum();
                1.0 / norm_sqr.sqrt().max(1e-6)
            })
            .collect();
        if find_peaks(&p_root, m).peak_indices != find_peaks(&p, m).peak_indices {
            sqrt_fail += 1;
        }
    }
    outcome(
        scale_fail == 0 && sqrt_fail == 0,
        format!("1000 spectra: {scale_fail} scaling mismatches, {sqrt_fail} square-root mismatches"),
    )
}

fn reconfiguration() -> Outcome {
    let cfg = config(
        None,
        "array.kind = \"sparse\"\nscene.thetas = [20.0, 50.0, 80.0, 110.0, 140.0]\nscene.k_rf = 1000\n",
    );
    let f = cfg.grid_frequency();
    let modes = [
        NumericMode::float64(),
        ExperimentConfig::preset("fig6")
            .unwrap()
            .mode_at(
                &sense_core::harness::NumericVariant {
                    mode: "fixed:17,7".parse().unwrap(),
                    scaled: true,
                },
                7.0,
            )
            .unwrap(),
    ];
    let schedule = [1, 3, 5, 2, 4, 4, 1, 5, 3, 2, 5, 1];
    let mut mismatches = 0;
    let mut upstream_changed = 0;
    let mut swaps = 0;
    let mut batches = 0;
    for mode in &modes {
        let mut p = Pipeline::new(cfg.geometry.clone(), f, 1, mode.clone()).unwrap();
        if p.config.registered() != vec![1, 2, 3, 4, 5] {
            return outcome(false, format!("registry is {:?}", p.config.registered()));
        }
        for (i, &m) in schedule.iter().enumerate() {
            let batch = cfg.batch(&cfg.scene, Sampling::SubNyquist, 100 + i as u64).unwrap();
            let before = p.smoothed(&batch.samples).unwrap();
            let rec = p.reconfigure(m).unwrap();
            swaps += rec.swapped as usize;
            let after = p.smoothed(&batch.samples).unwrap();
            if before.y_hat != after.y_hat {
                upstream_changed += 1;
            }
            let got = p.run_batch(&batch.samples).unwrap();
            let fresh = Pipeline::new(cfg.geometry.clone(), f, m, mode.clone())
                .unwrap()
                .run_batch(&batch.samples)
                .unwrap();
            let bit_exact = got.peak_indices == fresh.peak_indices
                && got.doas_deg == fresh.doas_deg
                && got
                    .spectrum
                    .iter()
                    .zip(&fresh.spectrum)
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if !bit_exact {
                mismatches += 1;
            }
            batches += 1;
        }
    }
    let too_many = matches!(
        Pipeline::new(cfg.geometry.clone(), f, 1, NumericMode::float64())
            .unwrap()
            .reconfigure(7),
        Err(Error::TooManySources { .. })
    );
    outcome(
        mismatches == 0 && upstream_changed == 0 && too_many,
        format!(
            "{batches} batches, {swaps} swaps: {mismatches} mismatches vs fresh pipelines, {upstream_changed} upstream changes, M=7 rejected {too_many}"
        ),
    )
}

fn sweep_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| -> Vec<u8> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_sense"))
            .args(["sweep", "--preset", "fig5a", "--out"])
            .arg(&out)
            .env("SENSE_SEED", "2024")
            .status()
            .expect("run sense");
        assert!(status.success(), "sense sweep exited with {status}");
        std::fs::read(out).unwrap()
    };
    let a = run("a.csv");
    let b = run("b.csv");
    outcome(
        a == b && !a.is_empty(),
        format!("two runs, {} and {} bytes, identical {}", a.len(), b.len(), a == b),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, "noiseless-exactness", Duration::from_secs(1), noiseless_exactness),
        (2, "ula-error-bound", Duration::from_secs(120), ula_error_bound),
        (
            3,
            "sparse-super-resolution",
            Duration::from_secs(120),
            sparse_super_resolution,
        ),
        (4, "ndee-trends", Duration::from_secs(300), ndee_trends),
        (
            5,
            "word-length-ordering",
            Duration::from_secs(600),
            word_length_ordering,
        ),
        (6, "numerics", Duration::from_secs(30), numerics_suite),
        (7, "sap-structure", Duration::from_secs(10), sap_structure),
        (8, "music-invariance", Duration::from_secs(10), music_invariance),
        (9, "reconfiguration", Duration::from_secs(30), reconfiguration),
        (10, "sweep-determinism", Duration::from_secs(300), sweep_determinism),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = result.pass && in_time;
        failed += !pass as usize;
        println!(
            "criterion {id:>2} {name:<24} {} ({:.2?} of {:?}{}) {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed,
            budget,
            if in_time { "" } else { ", over budget" },
            result.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
