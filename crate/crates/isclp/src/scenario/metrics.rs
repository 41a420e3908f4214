//! Intrusive objective metrics: frequency-weighted segmental
//! signal-to-interference ratio and cepstral distance.
//!
//! Both operate on 32 ms Hann-windowed frames with 50% overlap and skip
//! frames whose reference energy is more than 40 dB below the loudest frame.
//! fwseg-SIR uses 25 mel-spaced bands, per-band clipping to [-10, 35] dB and
//! `|S_ref|^0.2` weights; the cepstral distance uses LPC order 10, ten
//! cepstral coefficients (the gain term is excluded) and clipping to [0, 10].

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

const FRAME_SECONDS: f64 = 0.032;
const MEL_BANDS: usize = 25;
const SIR_CLIP_LOW: f64 = -10.0;
const SIR_CLIP_HIGH: f64 = 35.0;
const WEIGHT_EXPONENT: f64 = 0.2;
const ACTIVITY_THRESHOLD_DB: f64 = -40.0;
const LPC_ORDER: usize = 10;
const CD_CLIP_HIGH: f64 = 10.0;

fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos()))
        .collect()
}

fn mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_inv(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank over the one-sided spectrum.
fn mel_filterbank(bands: usize, fft_len: usize, sample_rate: f64) -> Vec<Vec<(usize, f64)>> {
    let bins = fft_len / 2 + 1;
    let mel_max = mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_inv(mel_max * i as f64 / (bands + 1) as f64))
        .collect();
    (0..bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            let mut taps = Vec::new();
            for k in 0..bins {
                let f = k as f64 * sample_rate / fft_len as f64;
                let w = if f >= lo && f <= mid && mid > lo {
                    (f - lo) / (mid - lo)
                } else if f > mid && f <= hi && hi > mid {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                if w > 0.0 {
                    taps.push((k, w));
                }
            }
            taps
        })
        .collect()
}

struct Framing {
    len: usize,
    hop: usize,
    window: Vec<f64>,
}

fn framing(sample_rate: f64) -> Framing {
    let len = (FRAME_SECONDS * sample_rate).round() as usize;
    Framing {
        len,
        hop: len / 2,
        window: hann(len),
    }
}

fn frame_count(samples: usize, f: &Framing) -> usize {
    if samples < f.len {
        0
    } else {
        (samples - f.len) / f.hop + 1
    }
}

fn windowed_energy(signal: &[f64], start: usize, f: &Framing) -> f64 {
    (0..f.len)
        .map(|i| (signal[start + i] * f.window[i]).powi(2))
        .sum()
}

/// Frames whose windowed reference energy is within 40 dB of the maximum.
fn active_frames(reference: &[f64], f: &Framing) -> Vec<usize> {
    let frames = frame_count(reference.len(), f);
    let energies: Vec<f64> = (0..frames)
        .map(|l| windowed_energy(reference, l * f.hop, f))
        .collect();
    let max = energies.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let threshold = max * 10f64.powf(ACTIVITY_THRESHOLD_DB / 10.0);
    (0..frames).filter(|&l| energies[l] > threshold).collect()
}

fn spectrum(frame: &[f64], window: &[f64], fft_len: usize) -> Vec<Complex64> {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(fft_len);
    let mut buf: Vec<Complex64> = (0..fft_len)
        .map(|i| {
            if i < frame.len() {
                Complex64::new(frame[i] * window[i], 0.0)
            } else {
                Complex64::default()
            }
        })
        .collect();
    fft.process(&mut buf);
    buf.truncate(fft_len / 2 + 1);
    buf
}

/// Frequency-weighted segmental SIR in dB between an aligned reference and
/// estimate.
pub fn fwseg_sir(reference: &[f64], estimate: &[f64], sample_rate: f64) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Input(format!(
            "length mismatch: {} vs {}",
            reference.len(),
            estimate.len()
        )));
    }
    let f = framing(sample_rate);
    if reference.len() < f.len {
        return Err(Error::Input("signals shorter than one metric frame".into()));
    }
    let active = active_frames(reference, &f);
    if active.is_empty() {
        return Err(Error::Input("reference has no active frames".into()));
    }
    let fft_len = f.len.next_power_of_two();
    let bank = mel_filterbank(MEL_BANDS, fft_len, sample_rate);
    let mut scores = Vec::with_capacity(active.len());
    for &l in &active {
        let start = l * f.hop;
        let ref_spec = spectrum(&reference[start..start + f.len], &f.window, fft_len);
        let est_spec = spectrum(&estimate[start..start + f.len], &f.window, fft_len);
        let mut weighted = 0.0;
        let mut weight_sum = 0.0;
        for taps in &bank {
            let mut ref_band = 0.0;
            let mut err_band = 0.0;
            for &(k, w) in taps {
                ref_band += w * ref_spec[k].norm_sqr();
                err_band += w * (ref_spec[k] - est_spec[k]).norm_sqr();
            }
            if ref_band <= 0.0 {
                continue;
            }
            let sir = if err_band > 0.0 {
                (10.0 * (ref_band / err_band).log10()).clamp(SIR_CLIP_LOW, SIR_CLIP_HIGH)
            } else {
                SIR_CLIP_HIGH
            };
            let weight = ref_band.powf(WEIGHT_EXPONENT / 2.0);
            weighted += weight * sir;
            weight_sum += weight;
        }
        if weight_sum > 0.0 {
            scores.push(weighted / weight_sum);
        }
    }
    if scores.is_empty() {
        return Err(Error::Input("no usable metric frames".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// LPC coefficients by Levinson-Durbin; `None` for unstable or silent frames.
fn lpc(frame: &[f64], window: &[f64], order: usize) -> Option<Vec<f64>> {
    let n = frame.len();
    let x: Vec<f64> = (0..n).map(|i| frame[i] * window[i]).collect();
    let mut r = vec![0.0; order + 1];
    for lag in 0..=order {
        r[lag] = (0..n - lag).map(|i| x[i] * x[i + lag]).sum();
    }
    if r[0] <= 0.0 {
        return None;
    }
    let mut a = vec![0.0; order + 1]; // predictor, a[0] unused
    let mut err = r[0];
    for i in 1..=order {
        let mut acc = r[i];
        for j in 1..i {
            acc -= a[j] * r[i - j];
        }
        let k = acc / err;
        if !k.is_finite() || k.abs() >= 1.0 {
            return None;
        }
        let mut new_a = a.clone();
        new_a[i] = k;
        for j in 1..i {
            new_a[j] = a[j] - k * a[i - j];
        }
        a = new_a;
        err *= 1.0 - k * k;
        if err <= 0.0 {
            return None;
        }
    }
    Some(a)
}

/// Cepstral coefficients `c_1..c_p` of the all-pole model from predictor
/// coefficients (gain term excluded).
fn lpc_cepstrum(a: &[f64], order: usize) -> Vec<f64> {
    // A(z) = 1 - sum a_j z^-j; c_m = a_m + sum_{k=1}^{m-1} (k/m) c_k a_{m-k}
    let mut c = vec![0.0; order + 1];
    for m in 1..=order {
        let mut acc = a[m];
        for k in 1..m {
            acc += (k as f64 / m as f64) * c[k] * a[m - k];
        }
        c[m] = acc;
    }
    c
}

/// Mean cepstral distance in dB over active frames; frames where either LPC
/// fit is unstable are skipped.
pub fn cepstral_distance(reference: &[f64], estimate: &[f64], sample_rate: f64) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Input(format!(
            "length mismatch: {} vs {}",
            reference.len(),
            estimate.len()
        )));
    }
    let f = framing(sample_rate);
    if reference.len() < f.len {
        return Err(Error::Input("signals shorter than one metric frame".into()));
    }
    let active = active_frames(reference, &f);
    if active.is_empty() {
        return Err(Error::Input("reference has no active frames".into()));
    }
    let scale = 10.0 / 10f64.ln();
    let mut values = Vec::new();
    for &l in &active {
        let start = l * f.hop;
        let ref_lpc = lpc(&reference[start..start + f.len], &f.window, LPC_ORDER);
        let est_lpc = lpc(&estimate[start..start + f.len], &f.window, LPC_ORDER);
        let (Some(ar), Some(ae)) = (ref_lpc, est_lpc) else {
            continue;
        };
        let cr = lpc_cepstrum(&ar, LPC_ORDER);
        let ce = lpc_cepstrum(&ae, LPC_ORDER);
        let sum_sq: f64 = (1..=LPC_ORDER).map(|k| (cr[k] - ce[k]).powi(2)).sum();
        values.push((scale * (2.0 * sum_sq).sqrt()).clamp(0.0, CD_CLIP_HIGH));
    }
    if values.is_empty() {
        // no stable frame pair; report the clip ceiling
        return Ok(CD_CLIP_HIGH);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
