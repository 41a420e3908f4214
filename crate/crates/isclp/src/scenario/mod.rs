//! Synthetic acoustic scenes and the objective metrics evaluated on them.
//!
//! A scene convolves seeded speech-like (or user-supplied) sources with
//! synthetic far-field impulse responses for a linear array, adds spatially
//! diffuse noise at a requested SNR, and keeps every ground-truth component:
//! the per-source reverberant images, the noise, the early-target reference
//! signal and the true per-bin RETFs.

pub mod metrics;
pub mod noise;
pub mod rir;
pub mod source;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::spatial::diffuse_coherence;
use crate::stft::StftConfig;

/// Independent deterministic RNG stream derived from the scene seed.
pub(crate) fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One sound source in a scene.
#[derive(Debug, Clone)]
pub struct SourceConfig {
    pub signal: SourceSignal,
    pub doa_deg: f64,
    pub target: bool,
    /// Measured impulse response `taps x M`; `None` synthesizes one.
    pub rir: Option<Array2<f64>>,
}

impl SourceConfig {
    pub fn synthetic(doa_deg: f64, target: bool) -> Self {
        Self {
            signal: SourceSignal::Synthetic,
            doa_deg,
            target,
            rir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum SourceSignal {
    /// Seeded speech-like signal from [`source::synth_speech_like`].
    Synthetic,
    /// Caller-provided samples (e.g. read from WAV); padded or truncated to
    /// the scene duration.
    Samples(Array1<f64>),
}

#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub mics: usize,
    pub spacing_m: f64,
    pub sources: Vec<SourceConfig>,
    pub t60_s: f64,
    /// `None` disables the noise component entirely.
    pub snr_db: Option<f64>,
    pub duration_s: f64,
    pub seed: u64,
    pub stft: StftConfig,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if self.mics < 2 {
            return Err(Error::Input("need at least two microphones".into()));
        }
        if self.sources.is_empty() || self.sources.len() >= self.mics {
            return Err(Error::Input(
                "need at least one source and fewer sources than microphones".into(),
            ));
        }
        if !self.sources.iter().any(|s| s.target) {
            return Err(Error::Input("at least one source must be a target".into()));
        }
        if !(self.t60_s > 0.0) {
            return Err(Error::Input("T60 must be positive".into()));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::Input("duration must be positive".into()));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.duration_s * self.stft.sample_rate).round() as usize
    }

    pub fn target_set(&self) -> Vec<usize> {
        self.sources
            .iter()
            .enumerate()
            .filter(|(_, s)| s.target)
            .map(|(i, _)| i)
            .collect()
    }
}

/// A built scene with every ground-truth component.
#[derive(Debug, Clone)]
pub struct SceneTruth {
    /// Microphone mixture, `samples x M`; exactly the sum of all components.
    pub mix: Array2<f64>,
    /// Reverberant image of each source, `samples x M`.
    pub components: Vec<Array2<f64>>,
    /// Early-part-only image of each source (first `window_length` RIR
    /// taps), `samples x M`.
    pub early_components: Vec<Array2<f64>>,
    /// Scaled noise component, `samples x M` (zeros when disabled).
    pub noise: Array2<f64>,
    /// Early-target reference at the first microphone.
    pub reference: Array1<f64>,
    /// True RETFs per bin, `M x N` each.
    pub true_retf: Vec<Array2<Complex64>>,
    pub target_set: Vec<usize>,
    pub config: SceneConfig,
}

/// Linear convolution via FFT.
pub fn fft_convolve(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let out_len = signal.len() + kernel.len() - 1;
    let fft_len = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(fft_len);
    let ifft = planner.plan_fft_inverse(fft_len);
    let mut a: Vec<Complex64> = (0..fft_len)
        .map(|i| Complex64::new(*signal.get(i).unwrap_or(&0.0), 0.0))
        .collect();
    let mut b: Vec<Complex64> = (0..fft_len)
        .map(|i| Complex64::new(*kernel.get(i).unwrap_or(&0.0), 0.0))
        .collect();
    fft.process(&mut a);
    fft.process(&mut b);
    for (x, y) in a.iter_mut().zip(b.iter()) {
        *x *= y;
    }
    ifft.process(&mut a);
    let scale = 1.0 / fft_len as f64;
    a.iter().take(out_len).map(|v| v.re * scale).collect()
}

fn source_samples(cfg: &SceneConfig, index: usize) -> Array1<f64> {
    let samples = cfg.samples();
    match &cfg.sources[index].signal {
        SourceSignal::Synthetic => {
            let mut rng = sub_rng(cfg.seed, 1000 + index as u64);
            source::synth_speech_like(samples, cfg.stft.sample_rate, &mut rng)
        }
        SourceSignal::Samples(data) => {
            let mut out = Array1::zeros(samples);
            for i in 0..samples.min(data.len()) {
                out[i] = data[i];
            }
            out
        }
    }
}

/// Speech-like spectral tilt for the babble component: one-pole lowpass at
/// 450 Hz applied identically to every channel, which leaves the
/// inter-channel coherence untouched.
fn babble_tilt(noise: &mut Array2<f64>, sample_rate: f64) {
    let alpha = (-2.0 * std::f64::consts::PI * 450.0 / sample_rate).exp();
    for ch in 0..noise.ncols() {
        let mut state = 0.0;
        for n in 0..noise.nrows() {
            state = alpha * state + (1.0 - alpha) * noise[(n, ch)];
            noise[(n, ch)] = state;
        }
    }
}

/// One-sided spectrum of the first `window_length` taps of an impulse
/// response column.
fn early_spectrum(rir: &Array2<f64>, mic: usize, window_length: usize) -> Vec<Complex64> {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(window_length);
    let mut buf: Vec<Complex64> = (0..window_length)
        .map(|n| {
            let v = if n < rir.nrows() { rir[(n, mic)] } else { 0.0 };
            Complex64::new(v, 0.0)
        })
        .collect();
    fft.process(&mut buf);
    buf.truncate(window_length / 2 + 1);
    buf
}

/// Builds the scene: convolves sources with synthetic RIRs, scales diffuse
/// noise to the requested SNR against the reverberant power of the first
/// target source at the first microphone, and derives the reference signal
/// and true RETFs from the early RIR parts.
pub fn build_scene(cfg: &SceneConfig) -> Result<SceneTruth> {
    cfg.validate()?;
    let samples = cfg.samples();
    let m = cfg.mics;
    let n_sources = cfg.sources.len();
    let window = cfg.stft.window_length;

    let mut rirs = Vec::with_capacity(n_sources);
    let mut components = Vec::with_capacity(n_sources);
    let mut early_components = Vec::with_capacity(n_sources);
    for (i, src) in cfg.sources.iter().enumerate() {
        let rir = match &src.rir {
            Some(measured) => {
                if measured.ncols() != m {
                    return Err(Error::Input(format!(
                        "source {i}: RIR has {} channels, scene has {m} microphones",
                        measured.ncols()
                    )));
                }
                if measured.nrows() == 0 || measured.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Input(format!("source {i}: invalid RIR samples")));
                }
                measured.clone()
            }
            None => rir::synth_rir(
                m,
                cfg.spacing_m,
                src.doa_deg,
                cfg.t60_s,
                cfg.stft.sample_rate,
                cfg.seed.wrapping_add(2000 + i as u64),
            )?,
        };
        let sig = source_samples(cfg, i);
        let mut image = Array2::zeros((samples, m));
        let mut early_image = Array2::zeros((samples, m));
        for mic in 0..m {
            let col: Vec<f64> = rir.column(mic).to_vec();
            let conv = fft_convolve(sig.as_slice().unwrap(), &col);
            let early_conv = fft_convolve(sig.as_slice().unwrap(), &col[..window.min(col.len())]);
            for n in 0..samples {
                image[(n, mic)] = conv[n];
                early_image[(n, mic)] = early_conv[n];
            }
        }
        rirs.push(rir);
        components.push(image);
        early_components.push(early_image);
    }

    let target_set = cfg.target_set();
    let primary_target = target_set[0];

    let noise = match cfg.snr_db {
        None => Array2::zeros((samples, m)),
        Some(snr_db) => {
            let positions = Array2::from_shape_fn((m, 3), |(i, j)| {
                if j == 0 {
                    i as f64 * cfg.spacing_m
                } else {
                    0.0
                }
            });
            let coherence =
                diffuse_coherence(&positions, cfg.stft.sample_rate, cfg.stft.window_length)?;
            let mut raw = noise::diffuse_noise(
                &coherence.per_bin,
                samples,
                &cfg.stft,
                cfg.seed.wrapping_add(3000),
            )?;
            babble_tilt(&mut raw, cfg.stft.sample_rate);
            let p_target: f64 = (0..samples)
                .map(|n| components[primary_target][(n, 0)].powi(2))
                .sum::<f64>()
                / samples as f64;
            let p_noise: f64 =
                (0..samples).map(|n| raw[(n, 0)].powi(2)).sum::<f64>() / samples as f64;
            if p_noise <= 0.0 || p_target <= 0.0 {
                return Err(Error::Input("degenerate scene powers".into()));
            }
            let gain = (p_target / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
            raw * gain
        }
    };

    let mut mix = noise.clone();
    for image in &components {
        mix += image;
    }

    // early-target reference at the first microphone
    let mut reference = Array1::zeros(samples);
    for &t in &target_set {
        let sig = source_samples(cfg, t);
        let early: Vec<f64> = (0..window.min(rirs[t].nrows()))
            .map(|n| rirs[t][(n, 0)])
            .collect();
        let conv = fft_convolve(sig.as_slice().unwrap(), &early);
        for n in 0..samples {
            reference[n] += conv[n];
        }
    }

    // true RETFs from early RIR spectra, normalized to the first microphone
    let bins = cfg.stft.bins();
    let mut true_retf = Vec::with_capacity(bins);
    let spectra: Vec<Vec<Vec<Complex64>>> = (0..n_sources)
        .map(|src| (0..m).map(|mic| early_spectrum(&rirs[src], mic, window)).collect())
        .collect();
    for k in 0..bins {
        let mut h = Array2::zeros((m, n_sources));
        for src in 0..n_sources {
            let anchor = spectra[src][0][k];
            let peak = (0..m).map(|mic| spectra[src][mic][k].norm()).fold(0.0, f64::max);
            if anchor.norm() < 1e-8 * peak.max(f64::MIN_POSITIVE) {
                // reference microphone has a null here; fall back to a
                // reference-only anchor so the column stays usable
                h[(0, src)] = Complex64::new(1.0, 0.0);
                continue;
            }
            for mic in 0..m {
                h[(mic, src)] = spectra[src][mic][k] / anchor;
            }
        }
        true_retf.push(h);
    }

    Ok(SceneTruth {
        mix,
        components,
        early_components,
        noise,
        reference,
        true_retf,
        target_set,
        config: cfg.clone(),
    })
}

impl SceneTruth {
    /// Measured SNR at the first microphone between the first target's
    /// reverberant image and the noise component.
    pub fn measured_snr_db(&self) -> Option<f64> {
        let samples = self.mix.nrows();
        let primary = self.target_set[0];
        let p_noise: f64 =
            (0..samples).map(|n| self.noise[(n, 0)].powi(2)).sum::<f64>() / samples as f64;
        if p_noise <= 0.0 {
            return None;
        }
        let p_target: f64 = (0..samples)
            .map(|n| self.components[primary][(n, 0)].powi(2))
            .sum::<f64>()
            / samples as f64;
        Some(10.0 * (p_target / p_noise).log10())
    }
}
