//! Spatial pre-processing per frequency bin: matched filter, blocking
//! matrix, and the diffuse-field coherence model of the microphone array.
//!
//! The matched filter g passes the target early components undistorted,
//! `g^H H_T = 1^T`; the blocking matrix removes them, `B^H H_T = 0`. Both are
//! derived from the relative early transfer functions of the target sources.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{
    cholesky, cholesky_solve, conjugate_transpose, hermitian_evd, solve_gram, HermitianMatrix,
};

pub const SOUND_SPEED: f64 = 343.0;

/// Relative early transfer functions of all point sources in one bin,
/// `M x N` with unit first row, together with the target column set.
#[derive(Debug, Clone)]
pub struct RetfMatrix {
    pub h: Array2<Complex64>,
    pub target_set: Vec<usize>,
}

impl RetfMatrix {
    pub fn new(h: Array2<Complex64>, target_set: Vec<usize>) -> Result<Self> {
        let (m, n) = (h.nrows(), h.ncols());
        if n >= m {
            return Err(Error::Input(format!(
                "need fewer sources than microphones, got N={n}, M={m}"
            )));
        }
        if target_set.is_empty() || target_set.len() >= m {
            return Err(Error::Input("target set size must be in [1, M)".into()));
        }
        if target_set.iter().any(|&t| t >= n) {
            return Err(Error::Input("target index out of range".into()));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("RETF contains non-finite entries".into()));
        }
        for j in 0..n {
            if (h[(0, j)] - Complex64::new(1.0, 0.0)).norm() > 1e-9 {
                return Err(Error::Input(format!(
                    "RETF column {j} is not normalized to the reference microphone"
                )));
            }
        }
        Ok(Self { h, target_set })
    }

    pub fn mics(&self) -> usize {
        self.h.nrows()
    }

    pub fn sources(&self) -> usize {
        self.h.ncols()
    }

    pub fn targets(&self) -> usize {
        self.target_set.len()
    }

    /// Target columns `H_T`, `M x N_T`.
    pub fn target_columns(&self) -> Array2<Complex64> {
        let m = self.mics();
        Array2::from_shape_fn((m, self.targets()), |(i, j)| {
            self.h[(i, self.target_set[j])]
        })
    }
}

/// Spatial coherence of an ideal diffuse field, per bin.
#[derive(Debug, Clone)]
pub struct CoherenceModel {
    pub mic_positions: Array2<f64>,
    pub sound_speed: f64,
    /// One `M x M` coherence matrix per one-sided frequency bin.
    pub per_bin: Vec<HermitianMatrix>,
}

/// Diffuse coherence between two points at distance `d` for frequency `f`:
/// `sinc(2 pi f d / c)` with `sinc(x) = sin(x)/x`.
pub fn diffuse_coherence_at(distance: f64, frequency: f64, sound_speed: f64) -> f64 {
    let x = 2.0 * std::f64::consts::PI * frequency * distance / sound_speed;
    if x.abs() < 1e-12 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Builds the per-bin diffuse coherence matrices for a microphone geometry.
///
/// `positions` is `M x 3` in meters; bin `k` maps to `k * fs / window_length`.
pub fn diffuse_coherence(
    positions: &Array2<f64>,
    sample_rate: f64,
    window_length: usize,
) -> Result<CoherenceModel> {
    let m = positions.nrows();
    if m < 2 {
        return Err(Error::Input("need at least two microphones".into()));
    }
    if positions.ncols() != 3 {
        return Err(Error::Input("positions must be M x 3".into()));
    }
    let mut dist = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            let d: f64 = (0..3)
                .map(|c| (positions[(i, c)] - positions[(j, c)]).powi(2))
                .sum::<f64>()
                .sqrt();
            if i != j && d == 0.0 {
                return Err(Error::Input(format!("microphones {i} and {j} coincide")));
            }
            dist[(i, j)] = d;
        }
    }
    let bins = window_length / 2 + 1;
    let per_bin = (0..bins)
        .map(|k| {
            let f = k as f64 * sample_rate / window_length as f64;
            let g = Array2::from_shape_fn((m, m), |(i, j)| {
                Complex64::new(diffuse_coherence_at(dist[(i, j)], f, SOUND_SPEED), 0.0)
            });
            HermitianMatrix::new(g).expect("coherence matrix is finite")
        })
        .collect();
    Ok(CoherenceModel {
        mic_positions: positions.clone(),
        sound_speed: SOUND_SPEED,
        per_bin,
    })
}

/// Matched filter `g = H_T (H_T^H H_T)^{-1} 1`, satisfying `g^H H_T = 1^T`.
pub fn build_mf(h_t: &Array2<Complex64>) -> Result<Array1<Complex64>> {
    let ones = Array1::from_elem(h_t.ncols(), Complex64::new(1.0, 0.0));
    solve_gram(h_t, &ones)
}

/// Blocking matrix, `M x (M - N_T)` with `B^H H_T = 0` and full column rank.
///
/// Starts from the first `M - N_T` columns of the projection onto the null
/// space of `H_T^H`. When those columns are rank deficient (which happens for
/// valid RETFs such as `h = e_1`), the largest-norm projection columns are
/// used instead, and failing that the orthonormal null-space basis from the
/// projection's eigenvectors.
pub fn build_bm(h_t: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let m = h_t.nrows();
    let n_t = h_t.ncols();
    if n_t >= m {
        return Err(Error::Input("blocking matrix needs N_T < M".into()));
    }
    let cols = m - n_t;
    let gram = HermitianMatrix::new(conjugate_transpose(h_t).dot(h_t))?;
    let l = cholesky(&gram, 0.0)
        .map_err(|_| Error::Numerical("rank-deficient RETF in blocking matrix".into()))?;
    // P = I - H_T (H_T^H H_T)^{-1} H_T^H
    let z = cholesky_solve(&l, &conjugate_transpose(h_t));
    let mut projection = -h_t.dot(&z);
    for i in 0..m {
        projection[(i, i)] += Complex64::new(1.0, 0.0);
    }

    let first = projection
        .view()
        .split_at(ndarray::Axis(1), cols)
        .0
        .to_owned();
    if has_full_column_rank(&first)? {
        return Ok(first);
    }

    // repair 1: largest-norm projection columns
    let mut order: Vec<usize> = (0..m).collect();
    let norms: Vec<f64> = (0..m)
        .map(|j| projection.column(j).iter().map(|v| v.norm_sqr()).sum())
        .collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap().then(a.cmp(&b)));
    let picked = Array2::from_shape_fn((m, cols), |(i, j)| projection[(i, order[j])]);
    if has_full_column_rank(&picked)? {
        return Ok(picked);
    }

    // repair 2: orthonormal null-space basis (projection eigenvectors)
    let p_herm = HermitianMatrix::new(projection)?;
    let (vals, vecs) = hermitian_evd(&p_herm)?;
    for i in 0..cols {
        if vals[i] < 0.5 {
            return Err(Error::Numerical(
                "null space of target RETFs is rank deficient".into(),
            ));
        }
    }
    Ok(Array2::from_shape_fn((m, cols), |(i, j)| vecs[(i, j)]))
}

fn has_full_column_rank(a: &Array2<Complex64>) -> Result<bool> {
    let gram = HermitianMatrix::new(conjugate_transpose(a).dot(a))?;
    let (vals, _) = hermitian_evd(&gram)?;
    let max = vals[0].max(0.0).sqrt();
    let min = vals[vals.len() - 1].max(0.0).sqrt();
    Ok(max > 0.0 && min >= 1e-8 * max)
}
