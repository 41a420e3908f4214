//! WOLA analysis/synthesis between multichannel time signals and the
//! per-frame, per-bin complex grid all further processing operates on.
//!
//! Analysis and synthesis both use the same square-root Hann window, so the
//! squared window must satisfy the constant-overlap-add property. Signals are
//! real; spectra are stored one-sided with Hermitian reconstruction.

use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// STFT framing parameters.
#[derive(Debug, Clone)]
pub struct StftConfig {
    pub window_length: usize,
    pub hop: usize,
    pub sample_rate: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_length: 512,
            hop: 256,
            sample_rate: 16_000.0,
        }
    }
}

impl StftConfig {
    pub fn new(window_length: usize, hop: usize, sample_rate: f64) -> Result<Self> {
        let cfg = Self {
            window_length,
            hop,
            sample_rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 || self.window_length % 2 != 0 {
            return Err(Error::Config(format!(
                "window length must be even and positive, got {}",
                self.window_length
            )));
        }
        if self.hop == 0 || self.window_length % self.hop != 0 {
            return Err(Error::Config(format!(
                "hop {} must divide window length {}",
                self.hop, self.window_length
            )));
        }
        if self.window_length < 2 * self.hop {
            return Err(Error::Config(format!(
                "window length {} must be at least twice the hop {}",
                self.window_length, self.hop
            )));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(())
    }

    /// Number of one-sided frequency bins, `window_length/2 + 1`.
    pub fn bins(&self) -> usize {
        self.window_length / 2 + 1
    }

    /// Center frequency of bin `k` in Hz, `k * fs / window_length`.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate / self.window_length as f64
    }

    /// Frame rate in frames per second.
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate / self.hop as f64
    }
}

/// Complex spectra indexed `[frame][bin][channel]`.
#[derive(Debug, Clone)]
pub struct TimeFrequencyGrid {
    pub data: Array3<Complex64>,
    pub config: StftConfig,
}

impl TimeFrequencyGrid {
    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[2]
    }

    /// All frames of one channel for one bin, as a dense copy.
    pub fn bin_channel_series(&self, bin: usize, channel: usize) -> Vec<Complex64> {
        (0..self.frames())
            .map(|l| self.data[(l, bin, channel)])
            .collect()
    }
}

/// Square-root periodic Hann window scaled so the squared window sums to one
/// over all hop shifts.
pub fn make_window(config: &StftConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let n = config.window_length;
    // Periodic Hann summed over shifts by `hop` equals n/(2*hop) exactly, so
    // the square-root window needs a 2*hop/n correction to reach COLA = 1.
    let cola_scale = (2.0 * config.hop as f64 / n as f64).sqrt();
    let window = (0..n)
        .map(|i| {
            let phase = std::f64::consts::PI * i as f64 / n as f64;
            // sqrt of periodic Hann = sin(pi n / N) on [0, N)
            cola_scale * phase.sin()
        })
        .collect();
    Ok(window)
}

fn check_signal(signal: &ArrayView2<f64>) -> Result<()> {
    if signal.is_empty() {
        return Err(Error::Input("empty signal".into()));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("signal contains non-finite samples".into()));
    }
    Ok(())
}

fn fft_pair(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    let mut planner = FftPlanner::new();
    (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
}

/// WOLA analysis of a real multichannel signal `[samples x channels]`.
///
/// Frame `l` covers samples `[l*hop, l*hop + window_length)`; the tail is
/// zero-padded so the last partial frame is complete.
pub fn analyze(signal: &ArrayView2<f64>, config: &StftConfig) -> Result<TimeFrequencyGrid> {
    check_signal(signal)?;
    let window = make_window(config)?;
    let n = config.window_length;
    let bins = config.bins();
    let samples = signal.shape()[0];
    let channels = signal.shape()[1];
    let frames = samples.div_ceil(config.hop);

    let (fft, _) = fft_pair(n);
    let mut data = Array3::zeros((frames, bins, channels));
    let mut buf = vec![Complex64::default(); n];
    for ch in 0..channels {
        for l in 0..frames {
            let start = l * config.hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                let idx = start + i;
                let s = if idx < samples { signal[(idx, ch)] } else { 0.0 };
                *slot = Complex64::new(s * window[i], 0.0);
            }
            fft.process(&mut buf);
            for k in 0..bins {
                data[(l, k, ch)] = buf[k];
            }
        }
    }
    Ok(TimeFrequencyGrid {
        data,
        config: config.clone(),
    })
}

/// WOLA synthesis back to the time domain, `[samples x channels]` with
/// `(frames-1)*hop + window_length` samples.
pub fn synthesize(grid: &TimeFrequencyGrid) -> Result<Array2<f64>> {
    let config = &grid.config;
    config.validate()?;
    let n = config.window_length;
    let bins = config.bins();
    if grid.bins() != bins {
        return Err(Error::Input(format!(
            "grid has {} bins, config implies {}",
            grid.bins(),
            bins
        )));
    }
    if grid.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("grid contains non-finite entries".into()));
    }
    let window = make_window(config)?;
    let frames = grid.frames();
    let channels = grid.channels();
    let out_len = (frames.max(1) - 1) * config.hop + n;

    let (_, ifft) = fft_pair(n);
    let mut out = Array2::zeros((out_len, channels));
    let mut buf = vec![Complex64::default(); n];
    let scale = 1.0 / n as f64;
    for ch in 0..channels {
        for l in 0..frames {
            buf[0] = Complex64::new(grid.data[(l, 0, ch)].re, 0.0);
            buf[n / 2] = Complex64::new(grid.data[(l, n / 2, ch)].re, 0.0);
            for k in 1..n / 2 {
                let v = grid.data[(l, k, ch)];
                buf[k] = v;
                buf[n - k] = v.conj();
            }
            ifft.process(&mut buf);
            let start = l * config.hop;
            for i in 0..n {
                out[(start + i, ch)] += buf[i].re * scale * window[i];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_config() -> StftConfig {
        StftConfig::default()
    }

    #[test]
    fn window_cola_at_half_overlap() {
        let cfg = default_config();
        let w = make_window(&cfg).unwrap();
        assert_eq!(w.len(), 512);
        // sum of squared shifted windows over interior positions
        for n in 0..cfg.hop {
            let s: f64 = (0..2).map(|shift| w[n + shift * cfg.hop].powi(2)).sum();
            assert!((s - 1.0).abs() < 1e-12, "COLA violated at {n}: {s}");
        }
    }

    #[test]
    fn window_length_four() {
        let cfg = StftConfig::new(4, 2, 16_000.0).unwrap();
        let w = make_window(&cfg).unwrap();
        let sq: Vec<f64> = w.iter().map(|v| v * v).collect();
        let expected = [0.0, 0.5, 1.0, 0.5];
        for (a, b) in sq.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12, "{sq:?}");
        }
        for n in 0..2 {
            let s = sq[n] + sq[n + 2];
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn window_rejects_bad_hop() {
        let cfg = StftConfig {
            window_length: 512,
            hop: 200,
            sample_rate: 16_000.0,
        };
        assert!(matches!(make_window(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn window_cola_at_quarter_overlap() {
        let cfg = StftConfig::new(512, 128, 16_000.0).unwrap();
        let w = make_window(&cfg).unwrap();
        for n in 0..cfg.hop {
            let s: f64 = (0..4).map(|shift| w[n + shift * cfg.hop].powi(2)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn analyze_zero_signal() {
        let cfg = default_config();
        let signal = Array2::zeros((4000, 2));
        let grid = analyze(&signal.view(), &cfg).unwrap();
        assert!(grid.data.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn analyze_empty_signal_errors() {
        let cfg = default_config();
        let signal = Array2::<f64>::zeros((0, 1));
        assert!(matches!(
            analyze(&signal.view(), &cfg),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn analyze_impulse_at_origin() {
        // sqrt-Hann is zero at sample 0, so frame 0 of a unit impulse at the
        // origin is the zero spectrum.
        let cfg = default_config();
        let mut signal = Array2::zeros((1024, 1));
        signal[(0, 0)] = 1.0;
        let grid = analyze(&signal.view(), &cfg).unwrap();
        for k in 0..grid.bins() {
            assert!(grid.data[(0, k, 0)].norm() < 1e-15);
        }
    }

    #[test]
    fn analyze_matches_direct_fft() {
        // oracle: windowed segment -> direct DFT sum
        let cfg = StftConfig::new(32, 16, 16_000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let signal = Array2::from_shape_fn((96, 1), |_| rng.gen_range(-1.0..1.0));
        let grid = analyze(&signal.view(), &cfg).unwrap();
        let w = make_window(&cfg).unwrap();
        let l = 2usize;
        for k in 0..cfg.bins() {
            let mut expected = Complex64::default();
            for n in 0..32 {
                let x = signal[(l * 16 + n, 0)] * w[n];
                let phase = -2.0 * std::f64::consts::PI * (k * n) as f64 / 32.0;
                expected += Complex64::new(x * phase.cos(), x * phase.sin());
            }
            let got = grid.data[(l, k, 0)];
            assert!((got - expected).norm() < 1e-10);
        }
    }

    #[test]
    fn analyze_sinusoid_concentrates_at_bin() {
        let cfg = default_config();
        let k0 = 40usize;
        let f = cfg.bin_frequency(k0);
        let n_samp = 16_000;
        let signal = Array2::from_shape_fn((n_samp, 1), |(i, _)| {
            (2.0 * std::f64::consts::PI * f * i as f64 / cfg.sample_rate).sin()
        });
        let grid = analyze(&signal.view(), &cfg).unwrap();
        // pick an interior frame; the sqrt-Hann main lobe spans the bin and
        // its immediate neighbours
        let l = 10;
        let total: f64 = (0..grid.bins()).map(|k| grid.data[(l, k, 0)].norm_sqr()).sum();
        let local: f64 = (k0 - 1..=k0 + 1).map(|k| grid.data[(l, k, 0)].norm_sqr()).sum();
        assert!(local / total >= 0.99, "concentration {}", local / total);
    }

    #[test]
    fn synthesize_zero_grid() {
        let cfg = default_config();
        let grid = TimeFrequencyGrid {
            data: Array3::zeros((5, cfg.bins(), 2)),
            config: cfg,
        };
        let out = synthesize(&grid).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn synthesize_single_frame_of_ones() {
        // oracle: direct inverse DFT of the Hermitian-extended all-ones
        // spectrum is a unit impulse at n = 0; windowing leaves w[0] * 1.
        let cfg = StftConfig::new(16, 8, 16_000.0).unwrap();
        let grid = TimeFrequencyGrid {
            data: Array3::from_elem((1, cfg.bins(), 1), Complex64::new(1.0, 0.0)),
            config: cfg.clone(),
        };
        let out = synthesize(&grid).unwrap();
        assert_eq!(out.shape(), &[16, 1]);
        let w = make_window(&cfg).unwrap();
        let mut expected = vec![0.0; 16];
        for n in 0..16 {
            let mut acc = Complex64::default();
            for k in 0..16 {
                // Hermitian extension of all-ones is all-ones
                let phase = 2.0 * std::f64::consts::PI * (k * n) as f64 / 16.0;
                acc += Complex64::new(phase.cos(), phase.sin());
            }
            expected[n] = acc.re / 16.0 * w[n];
        }
        for n in 0..16 {
            assert!((out[(n, 0)] - expected[n]).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_white_noise() {
        let cfg = default_config();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n_samp = 16_000;
        let signal = Array2::from_shape_fn((n_samp, 3), |_| rng.gen_range(-1.0..1.0));
        let grid = analyze(&signal.view(), &cfg).unwrap();
        let out = synthesize(&grid).unwrap();
        let w = cfg.window_length;
        let mut err = 0.0;
        let mut norm = 0.0;
        for ch in 0..3 {
            for n in w..n_samp - w {
                err += (out[(n, ch)] - signal[(n, ch)]).powi(2);
                norm += signal[(n, ch)].powi(2);
            }
        }
        let rel_db = 10.0 * (err / norm).log10();
        assert!(rel_db < -80.0, "round-trip error {rel_db} dB");
        assert!(
            (err.sqrt() / norm.sqrt()) < 1e-8,
            "interior norm ratio too large"
        );
    }

    #[test]
    fn linearity() {
        let cfg = StftConfig::new(64, 32, 16_000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Array2::from_shape_fn((300, 1), |_| rng.gen_range(-1.0..1.0));
        let y = Array2::from_shape_fn((300, 1), |_| rng.gen_range(-1.0..1.0));
        let (a, b) = (0.7, -2.3);
        let mixed = &x * a + &y * b;
        let gx = analyze(&x.view(), &cfg).unwrap();
        let gy = analyze(&y.view(), &cfg).unwrap();
        let gm = analyze(&mixed.view(), &cfg).unwrap();
        for ((vm, vx), vy) in gm.data.iter().zip(gx.data.iter()).zip(gy.data.iter()) {
            let expect = vx * a + vy * b;
            assert!((vm - expect).norm() < 1e-10);
        }
    }

    #[test]
    fn parseval_per_frame() {
        let cfg = default_config();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let signal = Array2::from_shape_fn((4096, 1), |_| rng.gen_range(-1.0..1.0));
        let grid = analyze(&signal.view(), &cfg).unwrap();
        let w = make_window(&cfg).unwrap();
        let n = cfg.window_length;
        let l = 3usize;
        let time_energy: f64 = (0..n)
            .map(|i| (signal[(l * cfg.hop + i, 0)] * w[i]).powi(2))
            .sum();
        // one-sided spectrum: interior bins count twice
        let mut spec_energy = grid.data[(l, 0, 0)].norm_sqr() + grid.data[(l, n / 2, 0)].norm_sqr();
        for k in 1..n / 2 {
            spec_energy += 2.0 * grid.data[(l, k, 0)].norm_sqr();
        }
        spec_energy /= n as f64;
        assert!((spec_energy - time_energy).abs() / time_energy < 1e-6);
    }
}
