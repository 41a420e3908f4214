//! Diffuse noise synthesis: per-bin complex Gaussian frames mixed through a
//! square root of the coherence matrix, then overlap-added to time domain.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::linalg::{hermitian_evd, HermitianMatrix};
use crate::stft::{synthesize, StftConfig, TimeFrequencyGrid};

/// PSD square root `X diag(sqrt(max(lambda, 0))) X^H` of a Hermitian PSD
/// matrix.
pub fn hermitian_sqrt(a: &HermitianMatrix) -> Result<Array2<Complex64>> {
    let (vals, vecs) = hermitian_evd(a)?;
    let n = a.dim();
    let mut out = Array2::zeros((n, n));
    for idx in 0..n {
        let s = vals[idx].max(0.0).sqrt();
        if s == 0.0 {
            continue;
        }
        for r in 0..n {
            out[(r, idx)] = vecs[(r, idx)] * s;
        }
    }
    Ok(out)
}

/// Generates `samples x M` of spatially diffuse noise whose inter-channel
/// coherence follows the given per-bin matrices.
pub fn diffuse_noise(
    gammas: &[HermitianMatrix],
    samples: usize,
    config: &StftConfig,
    seed: u64,
) -> Result<Array2<f64>> {
    let channels = gammas[0].dim();
    let bins = config.bins();
    assert_eq!(gammas.len(), bins, "one coherence matrix per bin");
    let window = config.window_length;
    // extra frames so the attenuated overlap-add edges can be trimmed
    let frames = (samples + 2 * window).div_ceil(config.hop) + 1;

    let roots: Vec<Array2<Complex64>> = gammas
        .iter()
        .map(hermitian_sqrt)
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 0.5f64.sqrt();
    let mut grid = Array3::zeros((frames, bins, channels));
    let mut white = vec![Complex64::default(); channels];
    for l in 0..frames {
        for k in 0..bins {
            for slot in white.iter_mut() {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *slot = Complex64::new(re * scale, im * scale);
            }
            let root = &roots[k];
            for ch in 0..channels {
                let mut acc = Complex64::default();
                for j in 0..channels {
                    acc += root[(ch, j)] * white[j];
                }
                grid[(l, k, ch)] = acc;
            }
        }
    }
    let long = synthesize(&TimeFrequencyGrid {
        data: grid,
        config: config.clone(),
    })?;
    let mut out = Array2::zeros((samples, channels));
    for ch in 0..channels {
        for n in 0..samples {
            out[(n, ch)] = long[(n + window, ch)];
        }
    }
    Ok(out)
}

/// Welch-style complex coherence between two channels, per bin.
pub fn estimate_coherence(
    signal: &Array2<f64>,
    a: usize,
    b: usize,
    config: &StftConfig,
) -> Result<Vec<Complex64>> {
    let grid = crate::stft::analyze(&signal.view(), config)?;
    let bins = grid.bins();
    let mut cross = vec![Complex64::default(); bins];
    let mut p_a = vec![0.0f64; bins];
    let mut p_b = vec![0.0f64; bins];
    for l in 0..grid.frames() {
        for k in 0..bins {
            let xa = grid.data[(l, k, a)];
            let xb = grid.data[(l, k, b)];
            cross[k] += xa * xb.conj();
            p_a[k] += xa.norm_sqr();
            p_b[k] += xb.norm_sqr();
        }
    }
    Ok((0..bins)
        .map(|k| {
            let denom = (p_a[k] * p_b[k]).sqrt();
            if denom > 0.0 {
                cross[k] / denom
            } else {
                Complex64::default()
            }
        })
        .collect())
}
