//! Seeded synthetic room impulse responses: a fractional-delay far-field
//! direct path per microphone plus a spatially diffuse Gaussian tail with
//! exponential decay calibrated to the requested reverberation time.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scenario::noise::diffuse_noise;
use crate::spatial::{diffuse_coherence, SOUND_SPEED};
use crate::stft::StftConfig;

/// Samples of causality margin before the direct path.
pub const BASE_DELAY: usize = 32;
/// Gap between the direct arrival and the onset of the dense diffuse tail
/// (the mixing time, about 24 ms at 16 kHz).
const TAIL_GAP: usize = 384;
/// Initial amplitude of the diffuse tail relative to the unit direct path.
const TAIL_LEVEL: f64 = 0.042;
/// Half-width of the windowed-sinc interpolator for fractional delays.
const SINC_HALF_WIDTH: usize = 16;

/// Synthesizes one source-to-array impulse response, `taps x M`.
///
/// Microphones form a linear array along x with the given spacing; the
/// far-field plane wave from `doa_deg` (relative to broadside) hits mic `m`
/// with delay `m d sin(doa) / c`. The tail decays with `ln(1000) / (T60 fs)`
/// so its energy envelope drops 60 dB at `t60`.
pub fn synth_rir(
    mics: usize,
    spacing_m: f64,
    doa_deg: f64,
    t60: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    if !(t60 > 0.0) {
        return Err(Error::Input(format!("T60 must be positive, got {t60}")));
    }
    if mics == 0 || !(spacing_m > 0.0) {
        return Err(Error::Input("need a positive mic count and spacing".into()));
    }
    let decay = (1000.0f64).ln() / (t60 * sample_rate);
    let tail_start = BASE_DELAY + TAIL_GAP;
    let taps = tail_start + ((1.3 * t60 * sample_rate).ceil() as usize).max(64);

    let mut rir: Array2<f64> = Array2::zeros((taps, mics));
    let theta = doa_deg.to_radians();
    for mic in 0..mics {
        let delay =
            BASE_DELAY as f64 + mic as f64 * spacing_m * theta.sin() / SOUND_SPEED * sample_rate;
        write_fractional_impulse(&mut rir, mic, delay, 1.0);
    }

    if mics >= 2 {
        // spatially diffuse tail with the array's sinc coherence
        let stft = StftConfig::default();
        let positions = Array2::from_shape_fn((mics, 3), |(i, j)| {
            if j == 0 {
                i as f64 * spacing_m
            } else {
                0.0
            }
        });
        let coherence = diffuse_coherence(&positions, sample_rate, stft.window_length)?;
        let field = diffuse_noise(&coherence.per_bin, taps - tail_start, &stft, seed)?;
        let field_rms = (field.iter().map(|v| v * v).sum::<f64>()
            / (field.len() as f64).max(1.0))
        .sqrt()
        .max(f64::MIN_POSITIVE);
        for mic in 0..mics {
            for n in tail_start..taps {
                let t = (n - tail_start) as f64;
                rir[(n, mic)] +=
                    TAIL_LEVEL * (-decay * t).exp() * field[(n - tail_start, mic)] / field_rms;
            }
        }
    } else {
        let mut rng = crate::scenario::sub_rng(seed, 0);
        use rand::Rng as _;
        for n in tail_start..taps {
            let t = (n - tail_start) as f64;
            let g: f64 = rng.sample(rand_distr::StandardNormal);
            rir[(n, 0)] += TAIL_LEVEL * (-decay * t).exp() * g;
        }
    }
    Ok(rir)
}

fn write_fractional_impulse(rir: &mut Array2<f64>, mic: usize, delay: f64, gain: f64) {
    let center = delay.round() as isize;
    let taps = rir.nrows() as isize;
    for off in -(SINC_HALF_WIDTH as isize)..=(SINC_HALF_WIDTH as isize) {
        let n = center + off;
        if n < 0 || n >= taps {
            continue;
        }
        let x = n as f64 - delay;
        let sinc = if x.abs() < 1e-12 {
            1.0
        } else {
            (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
        };
        // Hann taper over the interpolator support
        let w = 0.5
            * (1.0
                + (std::f64::consts::PI * (n as f64 - delay) / (SINC_HALF_WIDTH as f64 + 1.0))
                    .cos());
        rir[(n as usize, mic)] += gain * sinc * w;
    }
}
