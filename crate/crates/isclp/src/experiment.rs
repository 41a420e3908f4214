//! Scenario experiment runner: builds seeded scenes, runs the enhancement
//! pipeline in its configured variants, evaluates fwseg-SIR and cepstral
//! distance against the early-target reference, and renders a stable CSV.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::kalman::ModelConfig;
use crate::pipeline::{enhance_signal, EstimatorKind, PipelineConfig, RetfInit};
use crate::scenario::metrics::{cepstral_distance, fwseg_sir};
use crate::scenario::{build_scene, SceneConfig, SceneTruth};

/// Which estimator variants an experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorChoice {
    Oracle,
    Blind,
}

impl EstimatorChoice {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorChoice::Oracle => "oracle",
            EstimatorChoice::Blind => "blind",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Scene template; the seed field is replaced by each entry of `seeds`.
    pub scene: SceneConfig,
    pub seeds: Vec<u64>,
    /// SNR values to sweep; `None` entries disable the noise component.
    pub snr_values: Vec<Option<f64>>,
    /// Prediction filter lengths to sweep.
    pub filter_lengths: Vec<usize>,
    pub estimators: Vec<EstimatorChoice>,
    pub model: ModelConfig,
    pub blind: EstimatorConfig,
    /// Blind RETF initialization: ground truth when available, otherwise
    /// steering vectors from the configured source directions.
    pub blind_init_ground_truth: bool,
    pub oracle_smoothing: Option<f64>,
    /// Metric evaluation window in seconds.
    pub eval_start_s: f64,
    pub eval_end_s: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("need at least one seed".into()));
        }
        if self.snr_values.is_empty() || self.filter_lengths.is_empty() {
            return Err(Error::Config("empty sweep axis".into()));
        }
        if self.filter_lengths.iter().any(|&l| l < 2) {
            return Err(Error::Config("prediction length must be at least 2".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("need at least one estimator variant".into()));
        }
        if !(self.eval_start_s >= 0.0 && self.eval_end_s > self.eval_start_s) {
            return Err(Error::Config("invalid evaluation window".into()));
        }
        Ok(())
    }
}

/// One measured condition. `estimator == "none"` rows hold the unprocessed
/// first-microphone scores.
#[derive(Debug, Clone)]
pub struct ExperimentRow {
    pub seed: u64,
    pub snr_db: Option<f64>,
    pub filter_length: usize,
    pub estimator: String,
    pub fwseg_sir_db: f64,
    pub cd_db: f64,
}

#[derive(Debug, Clone)]
pub struct MedianRow {
    pub snr_db: Option<f64>,
    pub filter_length: usize,
    pub estimator: String,
    pub fwseg_sir_db: f64,
    pub cd_db: f64,
    /// Median improvements over the unprocessed rows of the same condition.
    pub fwseg_sir_impr_db: f64,
    pub cd_impr_db: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub rows: Vec<ExperimentRow>,
    pub medians: Vec<MedianRow>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn eval_window(signal: &Array1<f64>, start_s: f64, end_s: f64, sample_rate: f64) -> Vec<f64> {
    let start = ((start_s * sample_rate).round() as usize).min(signal.len());
    let end = ((end_s * sample_rate).round() as usize).min(signal.len());
    signal.iter().skip(start).take(end - start).cloned().collect()
}

/// Runs every (seed, SNR, L, estimator) combination and the unprocessed
/// baseline per (seed, SNR).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let fs = cfg.scene.stft.sample_rate;
    let mut rows = Vec::new();
    for &snr in &cfg.snr_values {
        for &seed in &cfg.seeds {
            let mut scene_cfg = cfg.scene.clone();
            scene_cfg.seed = seed;
            scene_cfg.snr_db = snr;
            let scene = build_scene(&scene_cfg)?;
            let reference = eval_window(&scene.reference, cfg.eval_start_s, cfg.eval_end_s, fs);
            let mic1 = Array1::from_shape_fn(scene.mix.nrows(), |n| scene.mix[(n, 0)]);
            let mic1_eval = eval_window(&mic1, cfg.eval_start_s, cfg.eval_end_s, fs);
            rows.push(ExperimentRow {
                seed,
                snr_db: snr,
                filter_length: 0,
                estimator: "none".into(),
                fwseg_sir_db: fwseg_sir(&reference, &mic1_eval, fs)?,
                cd_db: cepstral_distance(&reference, &mic1_eval, fs)?,
            });
            for &filter_length in &cfg.filter_lengths {
                for est in &cfg.estimators {
                    let enhanced =
                        run_variant(cfg, &scene, filter_length, *est)?;
                    let enhanced_eval =
                        eval_window(&enhanced, cfg.eval_start_s, cfg.eval_end_s, fs);
                    rows.push(ExperimentRow {
                        seed,
                        snr_db: snr,
                        filter_length,
                        estimator: est.label().into(),
                        fwseg_sir_db: fwseg_sir(&reference, &enhanced_eval, fs)?,
                        cd_db: cepstral_distance(&reference, &enhanced_eval, fs)?,
                    });
                }
            }
        }
    }

    let mut medians = Vec::new();
    for &snr in &cfg.snr_values {
        let mut base_sir = Vec::new();
        let mut base_cd = Vec::new();
        for row in rows.iter().filter(|r| {
            r.snr_db == snr && r.estimator == "none"
        }) {
            base_sir.push(row.fwseg_sir_db);
            base_cd.push(row.cd_db);
        }
        medians.push(MedianRow {
            snr_db: snr,
            filter_length: 0,
            estimator: "none".into(),
            fwseg_sir_db: median(&mut base_sir.clone()),
            cd_db: median(&mut base_cd.clone()),
            fwseg_sir_impr_db: 0.0,
            cd_impr_db: 0.0,
        });
        for &filter_length in &cfg.filter_lengths {
            for est in &cfg.estimators {
                let mut sir = Vec::new();
                let mut cd = Vec::new();
                let mut sir_impr = Vec::new();
                let mut cd_impr = Vec::new();
                for &seed in &cfg.seeds {
                    let processed = rows
                        .iter()
                        .find(|r| {
                            r.seed == seed
                                && r.snr_db == snr
                                && r.filter_length == filter_length
                                && r.estimator == est.label()
                        })
                        .expect("row exists");
                    let baseline = rows
                        .iter()
                        .find(|r| r.seed == seed && r.snr_db == snr && r.estimator == "none")
                        .expect("baseline exists");
                    sir.push(processed.fwseg_sir_db);
                    cd.push(processed.cd_db);
                    sir_impr.push(processed.fwseg_sir_db - baseline.fwseg_sir_db);
                    cd_impr.push(processed.cd_db - baseline.cd_db);
                }
                medians.push(MedianRow {
                    snr_db: snr,
                    filter_length,
                    estimator: est.label().into(),
                    fwseg_sir_db: median(&mut sir),
                    cd_db: median(&mut cd),
                    fwseg_sir_impr_db: median(&mut sir_impr),
                    cd_impr_db: median(&mut cd_impr),
                });
            }
        }
    }
    Ok(ExperimentReport { rows, medians })
}

fn run_variant(
    cfg: &ExperimentConfig,
    scene: &SceneTruth,
    filter_length: usize,
    est: EstimatorChoice,
) -> Result<Array1<f64>> {
    let mut model = cfg.model.clone();
    model.prediction_frames = filter_length;
    let estimator = match est {
        EstimatorChoice::Oracle => EstimatorKind::Oracle {
            smoothing: cfg.oracle_smoothing,
        },
        EstimatorChoice::Blind => EstimatorKind::Blind {
            config: cfg.blind.clone(),
            init: if cfg.blind_init_ground_truth {
                RetfInit::GroundTruth
            } else {
                RetfInit::Steering {
                    doas_deg: scene.config.sources.iter().map(|s| s.doa_deg).collect(),
                }
            },
            n_sources: scene.config.sources.len(),
        },
    };
    let pipeline = PipelineConfig {
        model,
        estimator,
        spacing_m: scene.config.spacing_m,
        targets: scene.target_set.clone(),
    };
    let (mono, _) = enhance_signal(&scene.mix, &scene.config.stft, &pipeline, Some(scene))?;
    Ok(mono)
}

fn fmt_snr(snr: Option<f64>) -> String {
    match snr {
        Some(v) => format!("{v:.2}"),
        None => "inf".into(),
    }
}

/// Stable CSV rendering: per-condition rows first, then `median` rows with
/// improvement columns.
pub fn render_csv(report: &ExperimentReport) -> String {
    let mut out = String::new();
    out.push_str(
        "seed,snr_db,filter_length,estimator,fwseg_sir_db,cd_db,fwseg_sir_impr_db,cd_impr_db\n",
    );
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},,\n",
            row.seed,
            fmt_snr(row.snr_db),
            row.filter_length,
            row.estimator,
            row.fwseg_sir_db,
            row.cd_db
        ));
    }
    for row in &report.medians {
        out.push_str(&format!(
            "median,{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
            fmt_snr(row.snr_db),
            row.filter_length,
            row.estimator,
            row.fwseg_sir_db,
            row.cd_db,
            row.fwseg_sir_impr_db,
            row.cd_impr_db
        ));
    }
    out
}
