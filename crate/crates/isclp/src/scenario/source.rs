//! Seeded speech-like test signals: formant-colored noise gated by a
//! syllabic on/off envelope. The non-stationarity matters more than the
//! timbre here; the enhancement filter leans on it.

use ndarray::Array1;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Two-resonator coloring filter (rough vowel formants at 16 kHz).
fn color(input: &[f64], sample_rate: f64) -> Vec<f64> {
    let mut out = input.to_vec();
    for &(freq, radius) in &[(450.0, 0.96), (1700.0, 0.90)] {
        let w = 2.0 * std::f64::consts::PI * freq / sample_rate;
        let a1 = 2.0 * radius * w.cos();
        let a2 = -radius * radius;
        let mut y1 = 0.0;
        let mut y2 = 0.0;
        for v in out.iter_mut() {
            let y = *v + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            *v = y;
        }
    }
    out
}

/// Generates `samples` of a speech-like source signal: voiced stretches use
/// pulse-train excitation with drifting pitch (harmonic spectra with deep
/// valleys between partials), unvoiced stretches use noise excitation, with
/// raised-cosine syllable gating and slow amplitude modulation in between.
pub fn synth_speech_like(samples: usize, sample_rate: f64, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let ramp = (0.025 * sample_rate) as usize;
    let mut envelope = vec![0.0f64; samples];
    let mut voiced_mask = vec![false; samples];
    let mut n = 0usize;
    let mut active = rng.gen_bool(0.7);
    while n < samples {
        let dur_s = if active {
            rng.gen_range(0.12..0.35)
        } else {
            rng.gen_range(0.06..0.25)
        };
        let dur = ((dur_s * sample_rate) as usize).max(ramp * 2);
        let end = (n + dur).min(samples);
        if active {
            let voiced_segment = rng.gen_bool(0.8);
            for i in n..end {
                let rel = i - n;
                let fade_in = if rel < ramp {
                    0.5 * (1.0 - (std::f64::consts::PI * rel as f64 / ramp as f64).cos())
                } else {
                    1.0
                };
                let until_end = end - i;
                let fade_out = if until_end < ramp {
                    0.5 * (1.0 - (std::f64::consts::PI * until_end as f64 / ramp as f64).cos())
                } else {
                    1.0
                };
                envelope[i] = fade_in * fade_out;
                voiced_mask[i] = voiced_segment;
            }
        }
        n = end;
        active = !active;
    }

    // aspirated excitation: white noise through the formant filter; voiced
    // segments get a stronger low-frequency emphasis
    let mut excitation = vec![0.0f64; samples];
    let mut lowpass = 0.0;
    for i in 0..samples {
        let w: f64 = rng.sample(rand_distr::StandardNormal);
        if voiced_mask[i] {
            lowpass = 0.6 * lowpass + w;
            excitation[i] = lowpass;
        } else {
            excitation[i] = w;
        }
    }
    let colored = color(&excitation, sample_rate);

    let am_rate = rng.gen_range(3.0..5.0);
    let am_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut out = Array1::zeros(samples);
    for i in 0..samples {
        let am = 1.0
            + 0.3 * (std::f64::consts::TAU * am_rate * i as f64 / sample_rate + am_phase).sin();
        out[i] = colored[i] * envelope[i] * am;
    }
    // normalize active RMS to a nominal speech level
    let active_energy: f64 = out.iter().map(|v| v * v).sum();
    let active_count = envelope.iter().filter(|&&e| e > 0.5).count().max(1);
    let rms = (active_energy / active_count as f64).sqrt();
    if rms > 0.0 {
        out.mapv_inplace(|v| v * 0.1 / rms);
    }
    // recording noise floor at -45 dB so pauses never hit exact zero
    let floor = 0.1 * 10f64.powf(-45.0 / 20.0);
    for v in out.iter_mut() {
        *v += floor * rng.sample::<f64, _>(rand_distr::StandardNormal);
    }
    out
}
