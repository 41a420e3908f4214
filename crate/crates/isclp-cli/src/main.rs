//! Command-line front-end: enhancement of multichannel WAV recordings,
//! synthetic-scene experiments with objective metrics, and a quick self-test.

mod config;
mod wav;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;

use config::{Estimator, Mode, RetfInitChoice, RunConfig};
use isclp::experiment::{render_csv, run_experiment, EstimatorChoice, ExperimentConfig};
use isclp::pipeline::{enhance_signal, EstimatorKind, PipelineConfig, RetfInit};
use isclp::scenario::{SceneConfig, SourceConfig, SourceSignal};
use isclp::stft::StftConfig;

/// Multichannel speech enhancement: joint sidelobe cancellation and linear
/// prediction driven by a per-bin Kalman filter.
///
/// Default tuning: forgetting-factor leakage -25 dB, gain decay limit -2 dB,
/// prediction prior -4 dB per block, SC prior 0 dB at DC to -15 dB at
/// Nyquist, 6 prediction frames, square-root Hann 512/256 at 16 kHz.
#[derive(Parser, Debug)]
#[command(name = "isclp", version, about)]
struct Cli {
    /// enhance | experiment | selftest
    #[arg(long)]
    mode: Option<String>,
    /// Key = value configuration file; flags override file entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input multichannel WAV (enhance mode)
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// SNR in dB, comma list for sweeps; "inf" disables noise
    #[arg(long)]
    snr_db: Option<String>,
    /// Prediction filter length in frames (>= 2), comma list for sweeps
    #[arg(long)]
    filter_length: Option<String>,
    /// Forgetting factor as 10 log10(1 - alpha) [default -25]
    #[arg(long)]
    alpha_db: Option<f64>,
    /// Gain decay limit as 20 log10(beta) [default -2]
    #[arg(long)]
    beta_db: Option<f64>,
    /// Prediction prior decay per block as 10 log10 [default -4]
    #[arg(long)]
    psi_lp_db: Option<f64>,
    /// SC prior at DC in dB [default 0]
    #[arg(long)]
    psi_sc_db_low: Option<f64>,
    /// SC prior at Nyquist in dB [default -15]
    #[arg(long)]
    psi_sc_db_high: Option<f64>,
    /// blind | oracle, comma list to run both (experiment mode)
    #[arg(long)]
    estimator: Option<String>,
    /// Scene seed(s), comma list
    #[arg(long)]
    seed: Option<String>,
    /// Reverberation time for synthetic scenes, seconds
    #[arg(long)]
    t60_s: Option<f64>,
    /// Microphone count for synthetic scenes
    #[arg(long)]
    mics: Option<usize>,
    /// Scene duration, seconds
    #[arg(long)]
    duration_s: Option<f64>,
    /// Interfering-speech direction of arrival in degrees; omit for none
    #[arg(long)]
    interferer_doa_deg: Option<f64>,
    /// Number of point sources assumed by the blind estimator (enhance mode)
    #[arg(long)]
    n_sources: Option<usize>,
    /// Target direction used for steering initialization (enhance mode)
    #[arg(long)]
    target_doa_deg: Option<f64>,
    /// steering | reference | ground-truth
    #[arg(long)]
    retf_init: Option<String>,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    if let Some(v) = &cli.mode {
        cfg.apply_pair("mode", v)?;
    }
    if let Some(v) = &cli.input {
        cfg.input = Some(v.clone());
    }
    if let Some(v) = &cli.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = &cli.snr_db {
        cfg.apply_pair("snr-db", v)?;
    }
    if let Some(v) = &cli.filter_length {
        cfg.apply_pair("filter-length", v)?;
    }
    if let Some(v) = cli.alpha_db {
        cfg.alpha_db = v;
    }
    if let Some(v) = cli.beta_db {
        cfg.beta_db = v;
    }
    if let Some(v) = cli.psi_lp_db {
        cfg.psi_lp_db = v;
    }
    if let Some(v) = cli.psi_sc_db_low {
        cfg.psi_sc_db_low = v;
    }
    if let Some(v) = cli.psi_sc_db_high {
        cfg.psi_sc_db_high = v;
    }
    if let Some(v) = &cli.estimator {
        cfg.apply_pair("estimator", v)?;
    }
    if let Some(v) = &cli.seed {
        cfg.apply_pair("seeds", v)?;
    }
    if let Some(v) = cli.t60_s {
        cfg.t60_s = v;
    }
    if let Some(v) = cli.mics {
        cfg.mics = v;
    }
    if let Some(v) = cli.duration_s {
        cfg.duration_s = v;
    }
    if let Some(v) = cli.interferer_doa_deg {
        cfg.interferer_doa_deg = Some(v);
    }
    if let Some(v) = cli.n_sources {
        cfg.n_sources = v;
    }
    if let Some(v) = cli.target_doa_deg {
        cfg.target_doa_deg = v;
    }
    if let Some(v) = &cli.retf_init {
        cfg.apply_pair("retf-init", v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_enhance(cfg: &RunConfig) -> Result<()> {
    let input = cfg.input.as_ref().expect("validated");
    let (signal, sample_rate) = wav::read_wav(input)?;
    if signal.ncols() < 2 {
        bail!(
            "{}: enhancement needs at least two channels, got {}",
            input.display(),
            signal.ncols()
        );
    }
    let stft = StftConfig::new(512, 256, sample_rate)?;
    let init = match cfg.retf_init {
        RetfInitChoice::Steering => {
            let mut doas = vec![cfg.target_doa_deg];
            if let Some(doa) = cfg.interferer_doa_deg {
                doas.push(doa);
            }
            if doas.len() < cfg.n_sources {
                bail!(
                    "steering initialization needs a direction per source \
                     ({} sources, {} directions)",
                    cfg.n_sources,
                    doas.len()
                );
            }
            doas.truncate(cfg.n_sources);
            RetfInit::Steering { doas_deg: doas }
        }
        RetfInitChoice::Reference => RetfInit::Reference {
            n_sources: cfg.n_sources,
        },
        RetfInitChoice::GroundTruth => unreachable!("rejected by validation"),
    };
    // the first estimated source is the enhancement target
    let pipeline = PipelineConfig {
        model: cfg.model_config(),
        estimator: EstimatorKind::Blind {
            config: cfg.estimator_config(),
            init,
            n_sources: cfg.n_sources,
        },
        spacing_m: cfg.spacing_m,
        targets: vec![0],
    };
    let (mono, out) = enhance_signal(&signal, &stft, &pipeline, None)?;

    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("cannot create output directory {}", cfg.out_dir.display()))?;
    let wav_path = cfg.out_dir.join("enhanced.wav");
    wav::write_wav_mono(&wav_path, &mono, sample_rate)?;
    let csv_path = cfg.out_dir.join("diagnostics.csv");
    let mut csv = String::from("frame,time_s,gain_mean,error_psd_mean,target_psd_mean,retf_change\n");
    for (l, d) in out.diagnostics.iter().enumerate() {
        csv.push_str(&format!(
            "{},{:.4},{:.6},{:.6e},{:.6e},{:.6e}\n",
            l,
            l as f64 * stft.hop as f64 / sample_rate,
            d.gain_mean,
            d.error_psd_mean,
            d.target_psd_mean,
            d.retf_change
        ));
    }
    std::fs::write(&csv_path, csv)
        .with_context(|| format!("cannot write {}", csv_path.display()))?;
    println!("wrote {}", wav_path.display());
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn load_source(
    base: SourceConfig,
    signal_wav: &Option<PathBuf>,
    rir_wav: &Option<PathBuf>,
) -> Result<SourceConfig> {
    let mut source = base;
    if let Some(path) = signal_wav {
        let (data, _) = wav::read_wav(path)?;
        let mono = ndarray::Array1::from_shape_fn(data.nrows(), |n| data[(n, 0)]);
        source.signal = SourceSignal::Samples(mono);
    }
    if let Some(path) = rir_wav {
        let (data, _) = wav::read_wav(path)?;
        source.rir = Some(data);
    }
    Ok(source)
}

fn dump_scene(out_dir: &std::path::Path, scene: &isclp::scenario::SceneTruth) -> Result<()> {
    let fs = scene.config.stft.sample_rate;
    wav::write_wav_multi(&out_dir.join("scene_mix.wav"), &scene.mix, fs)?;
    wav::write_wav_multi(&out_dir.join("scene_noise.wav"), &scene.noise, fs)?;
    wav::write_wav_mono(&out_dir.join("scene_reference.wav"), &scene.reference, fs)?;
    for (i, component) in scene.components.iter().enumerate() {
        wav::write_wav_multi(&out_dir.join(format!("scene_source_{i}.wav")), component, fs)?;
    }
    Ok(())
}

fn run_experiment_mode(cfg: &RunConfig) -> Result<()> {
    let mut sources = vec![load_source(
        SourceConfig::synthetic(cfg.target_doa_deg, true),
        &cfg.source_wav,
        &cfg.source_rir_wav,
    )?];
    if let Some(doa) = cfg.interferer_doa_deg {
        sources.push(load_source(
            SourceConfig::synthetic(doa, false),
            &cfg.interferer_wav,
            &cfg.interferer_rir_wav,
        )?);
    }
    let experiment = ExperimentConfig {
        scene: SceneConfig {
            mics: cfg.mics,
            spacing_m: cfg.spacing_m,
            sources,
            t60_s: cfg.t60_s,
            snr_db: cfg.snr_values[0],
            duration_s: cfg.duration_s,
            seed: cfg.seeds[0],
            stft: StftConfig::default(),
        },
        seeds: cfg.seeds.clone(),
        snr_values: cfg.snr_values.clone(),
        filter_lengths: cfg.filter_lengths.clone(),
        estimators: cfg
            .estimators
            .iter()
            .map(|e| match e {
                Estimator::Oracle => EstimatorChoice::Oracle,
                Estimator::Blind => EstimatorChoice::Blind,
            })
            .collect(),
        model: cfg.model_config(),
        blind: cfg.estimator_config(),
        blind_init_ground_truth: cfg.retf_init == RetfInitChoice::GroundTruth,
        oracle_smoothing: cfg.oracle_smoothing,
        eval_start_s: cfg.eval_start_s,
        eval_end_s: cfg.eval_end_s.min(cfg.duration_s),
    };
    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("cannot create output directory {}", cfg.out_dir.display()))?;
    if cfg.dump_scene {
        let mut scene_cfg = experiment.scene.clone();
        scene_cfg.seed = cfg.seeds[0];
        scene_cfg.snr_db = cfg.snr_values[0];
        let scene = isclp::scenario::build_scene(&scene_cfg)?;
        dump_scene(&cfg.out_dir, &scene)?;
    }
    let report = run_experiment(&experiment)?;
    let csv_path = cfg.out_dir.join("experiment.csv");
    std::fs::write(&csv_path, render_csv(&report))
        .with_context(|| format!("cannot write {}", csv_path.display()))?;
    for m in &report.medians {
        println!(
            "median snr={} L={} {}: fwseg-SIR {:.2} dB (impr {:+.2}), CD {:.2} dB (impr {:+.2})",
            m.snr_db.map_or("inf".into(), |v| format!("{v}")),
            m.filter_length,
            m.estimator,
            m.fwseg_sir_db,
            m.fwseg_sir_impr_db,
            m.cd_db,
            m.cd_impr_db
        );
    }
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn run_selftest() -> Result<()> {
    use isclp::kalman::{KalmanState, ProcessModel};
    use ndarray::{Array1, Array2};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut failures = 0;
    let mut check = |name: &str, ok: bool| {
        println!("{}: {}", name, if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    // STFT round trip
    let stft = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let signal = Array2::from_shape_fn((8192, 2), |_| rng.gen_range(-1.0f64..1.0));
    let grid = isclp::stft::analyze(&signal.view(), &stft)?;
    let rt = isclp::stft::synthesize(&grid)?;
    let mut err = 0.0;
    let mut norm = 0.0;
    for ch in 0..2 {
        for n in 512..8192 - 512 {
            err += (rt[(n, ch)] - signal[(n, ch)]).powi(2);
            norm += signal[(n, ch)].powi(2);
        }
    }
    check("stft round-trip", 10.0 * (err / norm).log10() < -80.0);

    // spatial constraints
    let mut ok = true;
    for _ in 0..100 {
        let mut h = Array2::from_shape_fn((4, 1), |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        h[(0, 0)] = Complex64::new(1.0, 0.0);
        let g = isclp::spatial::build_mf(&h)?;
        let b = isclp::spatial::build_bm(&h)?;
        let resp: Complex64 = (0..4).map(|i| g[i].conj() * h[(i, 0)]).sum();
        ok &= (resp - Complex64::new(1.0, 0.0)).norm() < 1e-10;
        for c in 0..3 {
            let blocked: Complex64 = (0..4).map(|i| b[(i, c)].conj() * h[(i, 0)]).sum();
            ok &= blocked.norm() < 1e-10;
        }
    }
    check("spatial constraints", ok);

    // posterior identity and gain contract
    let model = ProcessModel::new(0.995, 0.5, 1.0, 0.5, 3, 3, 1)?;
    let mut state = KalmanState::new(&model);
    let mut ok = true;
    let mut prev_gain = 1.0;
    for _ in 0..100 {
        state.time_update(&model);
        let u = Array1::from_shape_fn(model.state_dim(), |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let q = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let phi: f64 = rng.gen_range(0.01..1.0);
        let outcome = state.measurement_update(&u, q, phi)?;
        let posterior = state.posterior_error(&u, q);
        let wiener = outcome.error * (phi / outcome.error_psd);
        ok &= (posterior - wiener).norm() <= 1e-12 * outcome.error.norm();
        let (_, gamma) = state.post_gain(outcome.error, outcome.error_psd, phi, 0.5);
        ok &= gamma > 0.0 && gamma <= 1.0 && gamma >= 0.5 * prev_gain - 1e-15;
        prev_gain = gamma;
    }
    check("kalman posterior identity and gain contract", ok);

    // desmoothing inversion
    let lambda = 0.8;
    let mut prev = 0.0;
    let mut ok = true;
    for _ in 0..200 {
        let raw: f64 = rng.gen_range(0.1..5.0);
        let smoothed = lambda * prev + (1.0 - lambda) * raw;
        let rec = isclp::estimator::desmooth_eigenvalues(
            &Array1::from_vec(vec![smoothed]),
            &Array1::from_vec(vec![prev]),
            lambda,
            0.0,
        );
        ok &= (rec[0] - raw).abs() < 1e-10;
        prev = smoothed;
    }
    check("desmoothing inversion", ok);

    if failures > 0 {
        bail!("{failures} self-test check(s) failed");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve(&cli).and_then(|cfg| match cfg.mode {
        Mode::Enhance => run_enhance(&cfg),
        Mode::Experiment => run_experiment_mode(&cfg),
        Mode::Selftest => run_selftest(),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
