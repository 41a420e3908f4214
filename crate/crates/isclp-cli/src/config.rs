//! Run configuration: a key = value file merged with command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use isclp::estimator::EstimatorConfig;
use isclp::kalman::{alpha_from_db, db_to_amplitude, db_to_power, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Enhance,
    Experiment,
    Selftest,
}

impl std::str::FromStr for Mode {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "enhance" => Ok(Mode::Enhance),
            "experiment" => Ok(Mode::Experiment),
            "selftest" => Ok(Mode::Selftest),
            other => bail!("unknown mode '{other}' (enhance | experiment | selftest)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Blind,
    Oracle,
}

impl std::str::FromStr for Estimator {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blind" => Ok(Estimator::Blind),
            "oracle" => Ok(Estimator::Oracle),
            other => bail!("unknown estimator '{other}' (blind | oracle)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetfInitChoice {
    Steering,
    Reference,
    GroundTruth,
}

impl std::str::FromStr for RetfInitChoice {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "steering" => Ok(RetfInitChoice::Steering),
            "reference" => Ok(RetfInitChoice::Reference),
            "ground-truth" => Ok(RetfInitChoice::GroundTruth),
            other => bail!("unknown retf-init '{other}' (steering | reference | ground-truth)"),
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub estimators: Vec<Estimator>,
    pub retf_init: RetfInitChoice,
    // process model tuning, in the dB parameterizations used throughout
    pub alpha_db: f64,
    pub beta_db: f64,
    pub psi_lp_db: f64,
    pub psi_sc_db_low: f64,
    pub psi_sc_db_high: f64,
    pub filter_lengths: Vec<usize>,
    // scene / geometry
    pub mics: usize,
    pub spacing_m: f64,
    pub t60_s: f64,
    pub duration_s: f64,
    pub snr_values: Vec<Option<f64>>,
    pub seeds: Vec<u64>,
    pub target_doa_deg: f64,
    pub interferer_doa_deg: Option<f64>,
    pub n_sources: usize,
    pub eval_start_s: f64,
    pub eval_end_s: f64,
    pub oracle_smoothing: Option<f64>,
    // user-supplied material for experiment scenes
    pub source_wav: Option<PathBuf>,
    pub interferer_wav: Option<PathBuf>,
    pub source_rir_wav: Option<PathBuf>,
    pub interferer_rir_wav: Option<PathBuf>,
    /// Write the first scene's ground-truth components as WAV.
    pub dump_scene: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Selftest,
            input: None,
            out_dir: PathBuf::from("."),
            estimators: vec![Estimator::Blind],
            retf_init: RetfInitChoice::Steering,
            alpha_db: -25.0,
            beta_db: -2.0,
            psi_lp_db: -4.0,
            psi_sc_db_low: 0.0,
            psi_sc_db_high: -15.0,
            filter_lengths: vec![6],
            mics: 4,
            spacing_m: 0.08,
            t60_s: 0.4,
            duration_s: 10.0,
            snr_values: vec![Some(10.0)],
            seeds: vec![11, 22, 33, 44, 55],
            target_doa_deg: 0.0,
            interferer_doa_deg: None,
            n_sources: 1,
            eval_start_s: 4.0,
            eval_end_s: 10.0,
            oracle_smoothing: None,
            source_wav: None,
            interferer_wav: None,
            source_rir_wav: None,
            interferer_rir_wav: None,
            dump_scene: false,
        }
    }
}

fn parse_snr(value: &str) -> Result<Option<f64>> {
    if value == "inf" || value == "none" {
        Ok(None)
    } else {
        Ok(Some(value.parse::<f64>().context("bad SNR value")?))
    }
}

fn parse_list<T, F>(value: &str, parse: F) -> Result<Vec<T>>
where
    F: Fn(&str) -> Result<T>,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect()
}

impl RunConfig {
    /// Parses a `key = value` file; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(
                    "{}:{}: expected 'key = value', got '{line}'",
                    path.display(),
                    lineno + 1
                );
            };
            self.apply_pair(key.trim(), value.trim())
                .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        }
        Ok(())
    }

    pub fn apply_pair(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => self.mode = value.parse()?,
            "input" => self.input = Some(PathBuf::from(value)),
            "out" => self.out_dir = PathBuf::from(value),
            "estimator" => self.estimators = parse_list(value, |s| s.parse())?,
            "retf-init" => self.retf_init = value.parse()?,
            "alpha-db" => self.alpha_db = value.parse()?,
            "beta-db" => self.beta_db = value.parse()?,
            "psi-lp-db" => self.psi_lp_db = value.parse()?,
            "psi-sc-db-low" => self.psi_sc_db_low = value.parse()?,
            "psi-sc-db-high" => self.psi_sc_db_high = value.parse()?,
            "filter-length" => {
                self.filter_lengths = parse_list(value, |s| Ok(s.parse::<usize>()?))?
            }
            "mics" => self.mics = value.parse()?,
            "spacing-m" => self.spacing_m = value.parse()?,
            "t60-s" => self.t60_s = value.parse()?,
            "duration-s" => self.duration_s = value.parse()?,
            "snr-db" => self.snr_values = parse_list(value, parse_snr)?,
            "seed" | "seeds" => self.seeds = parse_list(value, |s| Ok(s.parse::<u64>()?))?,
            "target-doa-deg" => self.target_doa_deg = value.parse()?,
            "interferer-doa-deg" => {
                self.interferer_doa_deg = if value == "none" {
                    None
                } else {
                    Some(value.parse()?)
                }
            }
            "n-sources" => self.n_sources = value.parse()?,
            "eval-start-s" => self.eval_start_s = value.parse()?,
            "eval-end-s" => self.eval_end_s = value.parse()?,
            "oracle-smoothing" => {
                self.oracle_smoothing = if value == "none" {
                    None
                } else {
                    Some(value.parse()?)
                }
            }
            "source-wav" => self.source_wav = Some(PathBuf::from(value)),
            "interferer-wav" => self.interferer_wav = Some(PathBuf::from(value)),
            "source-rir-wav" => self.source_rir_wav = Some(PathBuf::from(value)),
            "interferer-rir-wav" => self.interferer_rir_wav = Some(PathBuf::from(value)),
            "dump-scene" => self.dump_scene = value.parse()?,
            other => bail!("unknown configuration key '{other}'"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.filter_lengths.is_empty() || self.filter_lengths.iter().any(|&l| l < 2) {
            bail!("filter length must be at least 2 frames");
        }
        if self.seeds.is_empty() {
            bail!("need at least one seed");
        }
        if self.estimators.is_empty() {
            bail!("need at least one estimator");
        }
        match self.mode {
            Mode::Enhance => {
                if self.input.is_none() {
                    bail!("enhance mode requires --input");
                }
                if self.estimators.contains(&Estimator::Oracle) {
                    bail!("oracle estimation needs scene ground truth; enhance mode is blind only");
                }
                if self.retf_init == RetfInitChoice::GroundTruth {
                    bail!("ground-truth RETF initialization is unavailable in enhance mode");
                }
            }
            Mode::Experiment => {
                if !(self.eval_end_s > self.eval_start_s) {
                    bail!("evaluation window is empty");
                }
                let sources = 1 + usize::from(self.interferer_doa_deg.is_some());
                if sources >= self.mics {
                    bail!("need fewer sources than microphones");
                }
            }
            Mode::Selftest => {}
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            alpha: alpha_from_db(self.alpha_db),
            beta: db_to_amplitude(self.beta_db),
            psi_lp: db_to_power(self.psi_lp_db),
            psi_sc_db_low: self.psi_sc_db_low,
            psi_sc_db_high: self.psi_sc_db_high,
            prediction_frames: self.filter_lengths[0],
        }
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig::default()
    }
}
