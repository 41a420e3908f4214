//! Full-grid orchestration: runs the per-bin estimator and Kalman recursion
//! over every frequency bin of an analyzed multichannel signal, in parallel
//! across bins, and assembles the enhanced one-channel grid plus per-frame
//! diagnostics.

use ndarray::{Array1, Array2, Array3};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{BlindEstimator, EstimatorConfig, OracleEstimator};
use crate::kalman::{process_bin, ModelConfig, RetfStream};
use crate::linalg::frobenius_norm;
use crate::scenario::SceneTruth;
use crate::spatial::{diffuse_coherence, RetfMatrix};
use crate::stft::{analyze, StftConfig, TimeFrequencyGrid};

/// How the pipeline obtains the target PSD and RETF streams.
#[derive(Debug, Clone)]
pub enum EstimatorKind {
    /// Ground-truth early target image and RETFs from the scene.
    Oracle { smoothing: Option<f64> },
    /// GEVD-based blind estimation from the microphone signals.
    Blind {
        config: EstimatorConfig,
        init: RetfInit,
        n_sources: usize,
    },
}

/// Initial RETF estimate handed to the blind estimator.
#[derive(Debug, Clone)]
pub enum RetfInit {
    /// True RETFs from the scene (requires ground truth).
    GroundTruth,
    /// Far-field steering phases for the given directions of arrival.
    Steering { doas_deg: Vec<f64> },
    /// Reference-anchored guess: unit at the first microphone, zero
    /// elsewhere.
    Reference { n_sources: usize },
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub estimator: EstimatorKind,
    /// Linear-array microphone spacing, used for the diffuse coherence model
    /// and steering-vector initialization.
    pub spacing_m: f64,
    /// Indices of the target sources among the estimated sources.
    pub targets: Vec<usize>,
}

/// Per-frame diagnostics averaged over bins.
#[derive(Debug, Clone, Copy)]
pub struct FrameDiagnostics {
    pub gain_mean: f64,
    pub error_psd_mean: f64,
    pub target_psd_mean: f64,
    pub retf_change: f64,
}

pub struct EnhanceOutput {
    /// Post-processed estimate `e+`, one channel.
    pub enhanced: TimeFrequencyGrid,
    /// Prior estimate `e`, one channel.
    pub prior: TimeFrequencyGrid,
    /// Matched filter output `q`, one channel.
    pub mf_output: TimeFrequencyGrid,
    pub diagnostics: Vec<FrameDiagnostics>,
}

struct BinRun {
    enhanced: Vec<Complex64>,
    prior: Vec<Complex64>,
    mf: Vec<Complex64>,
    gains: Vec<f64>,
    error_psds: Vec<f64>,
    target_psds: Vec<f64>,
    retf_change: Vec<f64>,
}

fn steering_retf(
    bin_freq: f64,
    spacing_m: f64,
    mics: usize,
    doas_deg: &[f64],
) -> Array2<Complex64> {
    Array2::from_shape_fn((mics, doas_deg.len()), |(m, j)| {
        let tau = m as f64 * spacing_m * doas_deg[j].to_radians().sin()
            / crate::spatial::SOUND_SPEED;
        let phase = -2.0 * std::f64::consts::PI * bin_freq * tau;
        Complex64::new(phase.cos(), phase.sin())
    })
}

/// Enhances an analyzed multichannel grid. `truth` is required for the
/// oracle estimator and for ground-truth RETF initialization of the blind
/// estimator.
pub fn enhance_grid(
    grid: &TimeFrequencyGrid,
    cfg: &PipelineConfig,
    truth: Option<&SceneTruth>,
) -> Result<EnhanceOutput> {
    let bins = grid.bins();
    let frames = grid.frames();
    let channels = grid.channels();
    if channels < 2 {
        return Err(Error::Input("enhancement needs at least two channels".into()));
    }
    if cfg.targets.is_empty() {
        return Err(Error::Input("target set is empty".into()));
    }

    // reference STFT for the oracle path
    let reference_grid = match (&cfg.estimator, truth) {
        (EstimatorKind::Oracle { .. }, Some(scene)) => {
            let two_d = scene
                .reference
                .view()
                .into_shape_with_order((scene.reference.len(), 1))
                .expect("vector reshape")
                .to_owned();
            let rg = analyze(&two_d.view(), &grid.config)?;
            if rg.frames() < frames {
                return Err(Error::Input(
                    "reference shorter than the microphone signal".into(),
                ));
            }
            Some(rg)
        }
        (EstimatorKind::Oracle { .. }, None) => {
            return Err(Error::Input(
                "oracle estimator requires scene ground truth".into(),
            ));
        }
        _ => None,
    };
    if let (EstimatorKind::Blind { init: RetfInit::GroundTruth, .. }, None) =
        (&cfg.estimator, truth)
    {
        return Err(Error::Input(
            "ground-truth RETF initialization requires scene ground truth".into(),
        ));
    }

    let positions = Array2::from_shape_fn((channels, 3), |(i, j)| {
        if j == 0 {
            i as f64 * cfg.spacing_m
        } else {
            0.0
        }
    });
    let coherence = diffuse_coherence(
        &positions,
        grid.config.sample_rate,
        grid.config.window_length,
    )?;

    let bin_results: Vec<Result<BinRun>> = (0..bins)
        .into_par_iter()
        .map(|k| run_one_bin(grid, cfg, truth, reference_grid.as_ref(), &coherence.per_bin[k], k))
        .collect();

    let mut enhanced = Array3::zeros((frames, bins, 1));
    let mut prior = Array3::zeros((frames, bins, 1));
    let mut mf = Array3::zeros((frames, bins, 1));
    let mut diagnostics = vec![
        FrameDiagnostics {
            gain_mean: 0.0,
            error_psd_mean: 0.0,
            target_psd_mean: 0.0,
            retf_change: 0.0,
        };
        frames
    ];
    for (k, result) in bin_results.into_iter().enumerate() {
        let run = result?;
        for l in 0..frames {
            enhanced[(l, k, 0)] = run.enhanced[l];
            prior[(l, k, 0)] = run.prior[l];
            mf[(l, k, 0)] = run.mf[l];
            diagnostics[l].gain_mean += run.gains[l] / bins as f64;
            diagnostics[l].error_psd_mean += run.error_psds[l] / bins as f64;
            diagnostics[l].target_psd_mean += run.target_psds[l] / bins as f64;
            diagnostics[l].retf_change += run.retf_change[l] / bins as f64;
        }
    }
    let config = grid.config.clone();
    Ok(EnhanceOutput {
        enhanced: TimeFrequencyGrid {
            data: enhanced,
            config: config.clone(),
        },
        prior: TimeFrequencyGrid {
            data: prior,
            config: config.clone(),
        },
        mf_output: TimeFrequencyGrid { data: mf, config },
        diagnostics,
    })
}

fn run_one_bin(
    grid: &TimeFrequencyGrid,
    cfg: &PipelineConfig,
    truth: Option<&SceneTruth>,
    reference_grid: Option<&TimeFrequencyGrid>,
    gamma: &crate::linalg::HermitianMatrix,
    k: usize,
) -> Result<BinRun> {
    let frames = grid.frames();
    let channels = grid.channels();
    let bins = grid.bins();
    let freq = grid.config.bin_frequency(k);
    let y: Vec<Array1<Complex64>> = (0..frames)
        .map(|l| Array1::from_shape_fn(channels, |ch| grid.data[(l, k, ch)]))
        .collect();

    let mut psd = vec![0.0f64; frames];
    let mut retf_change = vec![0.0f64; frames];
    let model = cfg
        .model
        .model_for_bin(k, bins, channels, cfg.targets.len())?;

    let (outputs, target_psds) = match &cfg.estimator {
        EstimatorKind::Oracle { smoothing } => {
            let scene = truth.expect("checked by caller");
            let rg = reference_grid.expect("checked by caller");
            let mut oracle = OracleEstimator::new(*smoothing)?;
            for (l, slot) in psd.iter_mut().enumerate() {
                *slot = oracle.update(rg.data[(l, k, 0)]);
            }
            let retf =
                RetfMatrix::new(scene.true_retf[k].clone(), scene.target_set.clone())?;
            let h_t = retf.target_columns();
            let (outputs, _) = process_bin(&y, &RetfStream::Constant(&h_t), &psd, &model)?;
            (outputs, psd.clone())
        }
        EstimatorKind::Blind {
            config,
            init,
            n_sources,
        } => {
            let initial = match init {
                RetfInit::GroundTruth => {
                    let scene = truth.expect("checked by caller");
                    scene.true_retf[k].clone()
                }
                RetfInit::Steering { doas_deg } => {
                    steering_retf(freq, cfg.spacing_m, channels, doas_deg)
                }
                RetfInit::Reference { n_sources } => {
                    let mut h = Array2::zeros((channels, *n_sources));
                    for j in 0..*n_sources {
                        h[(0, j)] = Complex64::new(1.0, 0.0);
                    }
                    h
                }
            };
            if initial.ncols() != *n_sources {
                return Err(Error::Input(format!(
                    "RETF initialization provides {} sources, expected {n_sources}",
                    initial.ncols()
                )));
            }
            let mut blind = BlindEstimator::new(
                config.clone(),
                gamma.clone(),
                initial,
                cfg.targets.clone(),
            )?;
            let mut retfs = Vec::with_capacity(frames);
            for (l, frame) in y.iter().enumerate() {
                let est = blind.update(frame)?;
                psd[l] = est.phi_st;
                if l > 0 {
                    let prev: &Array2<Complex64> = &retfs[l - 1];
                    retf_change[l] = frobenius_norm(&(&est.retf_targets - prev));
                }
                retfs.push(est.retf_targets);
            }
            let (outputs, _) = process_bin(&y, &RetfStream::PerFrame(&retfs), &psd, &model)?;
            (outputs, psd.clone())
        }
    };

    Ok(BinRun {
        enhanced: outputs.iter().map(|o| o.enhanced).collect(),
        prior: outputs.iter().map(|o| o.error).collect(),
        mf: outputs.iter().map(|o| o.mf_output).collect(),
        gains: outputs.iter().map(|o| o.gain).collect(),
        error_psds: outputs.iter().map(|o| o.error_psd).collect(),
        target_psds,
        retf_change,
    })
}

/// Convenience front-end: analyze a time-domain multichannel signal, enhance
/// it, and synthesize the one-channel result trimmed to the input length.
pub fn enhance_signal(
    signal: &Array2<f64>,
    stft: &StftConfig,
    cfg: &PipelineConfig,
    truth: Option<&SceneTruth>,
) -> Result<(Array1<f64>, EnhanceOutput)> {
    let grid = analyze(&signal.view(), stft)?;
    let out = enhance_grid(&grid, cfg, truth)?;
    let time = crate::stft::synthesize(&out.enhanced)?;
    let samples = signal.nrows().min(time.nrows());
    let mono = Array1::from_shape_fn(samples, |n| time[(n, 0)]);
    Ok((mono, out))
}
