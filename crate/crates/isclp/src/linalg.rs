//! Small dense complex linear algebra used per frequency bin.
//!
//! All matrices here are tiny (dimension <= ~30), so the kernels are direct:
//! Cholesky with diagonal loading, a cyclic Jacobi eigensolver for Hermitian
//! matrices, a generalized eigensolver via Cholesky whitening, Gram-system
//! solves, and a unitary Procrustes fit. Every factorization is checked by
//! reconstruction in the tests rather than trusted.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Hermitian matrix wrapper; construction symmetrizes so downstream code can
/// rely on `A == A^H` up to representation.
#[derive(Debug, Clone)]
pub struct HermitianMatrix {
    data: Array2<Complex64>,
}

impl HermitianMatrix {
    /// Builds from an arbitrary square matrix by averaging `(A + A^H)/2`.
    pub fn new(a: Array2<Complex64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Input(format!(
                "matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("matrix contains non-finite entries".into()));
        }
        let mut m = Self { data: a };
        m.resymmetrize();
        Ok(m)
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            data: Array2::zeros((dim, dim)),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            data: Array2::eye(dim),
        }
    }

    pub fn from_real_diagonal(diag: &Array1<f64>) -> Self {
        let mut data = Array2::zeros((diag.len(), diag.len()));
        for (i, v) in diag.iter().enumerate() {
            data[(i, i)] = Complex64::new(*v, 0.0);
        }
        Self { data }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_array(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<Complex64> {
        self.data
    }

    /// Direct mutable access; callers must `resymmetrize` afterwards.
    pub fn as_array_mut(&mut self) -> &mut Array2<Complex64> {
        &mut self.data
    }

    /// Replaces the contents with `(A + A^H)/2` and forces a real diagonal.
    pub fn resymmetrize(&mut self) {
        let n = self.dim();
        for i in 0..n {
            self.data[(i, i)] = Complex64::new(self.data[(i, i)].re, 0.0);
            for j in i + 1..n {
                let avg = 0.5 * (self.data[(i, j)] + self.data[(j, i)].conj());
                self.data[(i, j)] = avg;
                self.data[(j, i)] = avg.conj();
            }
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.data[(i, i)].re).sum()
    }

    /// `v^H A v`, real for Hermitian `A`.
    pub fn quadratic_form(&self, v: &Array1<Complex64>) -> f64 {
        let av = self.data.dot(v);
        v.iter().zip(av.iter()).map(|(x, y)| (x.conj() * y).re).sum()
    }
}

pub fn frobenius_norm(a: &Array2<Complex64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Lower-triangular `L` with `L L^H = A + loading * I`.
pub fn cholesky(a: &HermitianMatrix, loading: f64) -> Result<Array2<Complex64>> {
    let n = a.dim();
    let m = a.as_array();
    let mut l: Array2<Complex64> = Array2::zeros((n, n));
    for j in 0..n {
        let mut d = m[(j, j)].re + loading;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { minor: j });
        }
        let djj = d.sqrt();
        l[(j, j)] = Complex64::new(djj, 0.0);
        for i in j + 1..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L X = B` for lower-triangular `L`, overwriting nothing.
fn solve_lower(l: &Array2<Complex64>, b: &Array2<Complex64>) -> Array2<Complex64> {
    let n = l.nrows();
    let cols = b.ncols();
    let mut x = b.clone();
    for c in 0..cols {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Solves `L^H X = B` for lower-triangular `L`.
fn solve_upper_from_lower(l: &Array2<Complex64>, b: &Array2<Complex64>) -> Array2<Complex64> {
    let n = l.nrows();
    let cols = b.ncols();
    let mut x = b.clone();
    for c in 0..cols {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                // (L^H)[i][k] = conj(L[k][i])
                s -= l[(k, i)].conj() * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Solves `(L L^H) X = B` given the Cholesky factor `L`.
pub fn cholesky_solve(l: &Array2<Complex64>, b: &Array2<Complex64>) -> Array2<Complex64> {
    let y = solve_lower(l, b);
    solve_upper_from_lower(l, &y)
}

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues sorted descending (ties keep original order) and the
/// matching unitary eigenvector matrix `Q` with `A = Q diag(lambda) Q^H`.
pub fn hermitian_evd(a: &HermitianMatrix) -> Result<(Array1<f64>, Array2<Complex64>)> {
    let n = a.dim();
    if a.as_array().iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("matrix contains non-finite entries".into()));
    }
    let mut m = a.as_array().clone();
    let mut q: Array2<Complex64> = Array2::eye(n);
    let fro = frobenius_norm(&m);
    if fro > 0.0 {
        let tol = 1e-14 * fro;
        for _sweep in 0..64 {
            let mut off = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    off += 2.0 * m[(i, j)].norm_sqr();
                }
            }
            if off.sqrt() <= tol {
                break;
            }
            for p in 0..n {
                for qi in p + 1..n {
                    jacobi_rotate(&mut m, &mut q, p, qi);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m[(i, i)].re).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap().then(i.cmp(&j)));
    let eigenvalues = Array1::from_iter(order.iter().map(|&i| diag[i]));
    let mut vectors = Array2::zeros((n, n));
    for (c, &i) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, c)] = q[(r, i)];
        }
    }
    Ok((eigenvalues, vectors))
}

/// One two-sided Jacobi rotation zeroing `m[(p, q)]`.
fn jacobi_rotate(m: &mut Array2<Complex64>, acc: &mut Array2<Complex64>, p: usize, q: usize) {
    let apq = m[(p, q)];
    let r = apq.norm();
    if r == 0.0 {
        return;
    }
    let phase = apq / r; // e^{i phi}
    let app = m[(p, p)].re;
    let aqq = m[(q, q)].re;
    let tau = (aqq - app) / (2.0 * r);
    let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    // G = [[c, s], [-s e^{-i phi}, c e^{-i phi}]] applied as A <- G^H A G
    let g_pp = Complex64::new(c, 0.0);
    let g_pq = Complex64::new(s, 0.0);
    let g_qp = -s * phase.conj();
    let g_qq = c * phase.conj();
    let n = m.nrows();
    // column update: [A_ip, A_iq] <- [A_ip, A_iq] G
    for i in 0..n {
        let aip = m[(i, p)];
        let aiq = m[(i, q)];
        m[(i, p)] = aip * g_pp + aiq * g_qp;
        m[(i, q)] = aip * g_pq + aiq * g_qq;
    }
    // row update: rows of G^H A
    for j in 0..n {
        let apj = m[(p, j)];
        let aqj = m[(q, j)];
        m[(p, j)] = g_pp.conj() * apj + g_qp.conj() * aqj;
        m[(q, j)] = g_pq.conj() * apj + g_qq.conj() * aqj;
    }
    m[(p, q)] = Complex64::new(0.0, 0.0);
    m[(q, p)] = Complex64::new(0.0, 0.0);
    m[(p, p)] = Complex64::new(m[(p, p)].re, 0.0);
    m[(q, q)] = Complex64::new(m[(q, q)].re, 0.0);
    for i in 0..n {
        let vip = acc[(i, p)];
        let viq = acc[(i, q)];
        acc[(i, p)] = vip * g_pp + viq * g_qp;
        acc[(i, q)] = vip * g_pq + viq * g_qq;
    }
}

/// Generalized eigendecomposition of `(Psi, Gamma + loading I)`.
///
/// Whitens with the Cholesky factor of the loaded `Gamma`, solves the
/// standard Hermitian problem, and back-transforms. Eigenvalues come out
/// descending; eigenvectors `X` satisfy `X^H (Gamma + loading I) X = I`.
pub fn gevd(
    psi: &HermitianMatrix,
    gamma: &HermitianMatrix,
    loading: f64,
) -> Result<(Array1<f64>, Array2<Complex64>)> {
    if psi.dim() != gamma.dim() {
        return Err(Error::Input(format!(
            "dimension mismatch: {} vs {}",
            psi.dim(),
            gamma.dim()
        )));
    }
    let l = cholesky(gamma, loading)?;
    // S = L^{-1} Psi L^{-H}
    let t = solve_lower(&l, psi.as_array());
    let t_h = conjugate_transpose(&t);
    let z = solve_lower(&l, &t_h);
    let s = HermitianMatrix::new(conjugate_transpose(&z))?;
    let (values, q) = hermitian_evd(&s)?;
    let x = solve_upper_from_lower(&l, &q);
    Ok((values, x))
}

pub fn conjugate_transpose(a: &Array2<Complex64>) -> Array2<Complex64> {
    let (r, c) = (a.nrows(), a.ncols());
    Array2::from_shape_fn((c, r), |(i, j)| a[(j, i)].conj())
}

/// `H (H^H H)^{-1} rhs` for a full-column-rank `H`.
pub fn solve_gram(h: &Array2<Complex64>, rhs: &Array1<Complex64>) -> Result<Array1<Complex64>> {
    let gram = HermitianMatrix::new(conjugate_transpose(h).dot(h))?;
    let l = cholesky(&gram, 0.0).map_err(|_| rank_error(h))?;
    // condition estimate from the Cholesky diagonal
    let diag: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)].re).collect();
    let dmax = diag.iter().cloned().fold(0.0f64, f64::max);
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if dmin <= 0.0 || (dmax / dmin).powi(2) >= 1e12 {
        return Err(rank_error(h));
    }
    let rhs_col = rhs
        .view()
        .into_shape_with_order((rhs.len(), 1))
        .expect("vector reshape");
    let z = cholesky_solve(&l, &rhs_col.to_owned());
    Ok(h.dot(&z).column(0).to_owned())
}

fn rank_error(h: &Array2<Complex64>) -> Error {
    Error::Numerical(format!(
        "rank-deficient {}x{} matrix in Gram solve",
        h.nrows(),
        h.ncols()
    ))
}

/// Result of the unitary Procrustes fit.
pub struct ProcrustesRotation {
    pub omega: Array2<Complex64>,
    /// Set when the cross matrix `A^H B` was (numerically) zero and the
    /// returned rotation is the identity fallback.
    pub degenerate: bool,
}

/// Unitary `Omega` minimizing `||A Omega - B||_F`, from the polar factor of
/// `A^H B`.
pub fn procrustes_rotation(
    a: &Array2<Complex64>,
    b: &Array2<Complex64>,
) -> Result<ProcrustesRotation> {
    if a.shape() != b.shape() {
        return Err(Error::Input(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.nrows() < a.ncols() {
        return Err(Error::Input(
            "Procrustes fit expects at least as many rows as columns".into(),
        ));
    }
    let n = a.ncols();
    let c = conjugate_transpose(a).dot(b);
    let scale = frobenius_norm(a) * frobenius_norm(b);
    if scale == 0.0 || frobenius_norm(&c) < 1e-14 * scale {
        return Ok(ProcrustesRotation {
            omega: Array2::eye(n),
            degenerate: true,
        });
    }
    // SVD of C via the EVD of C^H C: C = U S V^H, Omega = U V^H.
    let gram = HermitianMatrix::new(conjugate_transpose(&c).dot(&c))?;
    let (lambda, v) = hermitian_evd(&gram)?;
    let sigma_max = lambda[0].max(0.0).sqrt();
    let mut u: Array2<Complex64> = Array2::zeros((n, n));
    let mut deficient = Vec::new();
    for i in 0..n {
        let sigma = lambda[i].max(0.0).sqrt();
        if sigma > 1e-12 * sigma_max {
            let ui = c.dot(&v.column(i).to_owned()) / Complex64::new(sigma, 0.0);
            for r in 0..n {
                u[(r, i)] = ui[r];
            }
        } else {
            deficient.push(i);
        }
    }
    // complete U to a unitary basis in the null directions
    for &i in &deficient {
        let mut filled = false;
        for seed in 0..n {
            let mut cand: Array1<Complex64> = Array1::zeros(n);
            cand[seed] = Complex64::new(1.0, 0.0);
            for j in 0..n {
                if deficient.contains(&j) && j >= i {
                    continue;
                }
                let col = u.column(j).to_owned();
                let proj: Complex64 = col.iter().zip(cand.iter()).map(|(x, y)| x.conj() * y).sum();
                for r in 0..n {
                    cand[r] -= proj * col[r];
                }
            }
            let norm = cand.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            if norm > 1e-3 {
                for r in 0..n {
                    u[(r, i)] = cand[r] / norm;
                }
                filled = true;
                break;
            }
        }
        if !filled {
            return Err(Error::Numerical("could not complete unitary basis".into()));
        }
    }
    Ok(ProcrustesRotation {
        omega: u.dot(&conjugate_transpose(&v)),
        degenerate: false,
    })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::Rng;

    pub fn random_complex_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<Complex64> {
        Array2::from_shape_fn((rows, cols), |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    pub fn random_spd<R: Rng>(rng: &mut R, dim: usize) -> HermitianMatrix {
        let b = random_complex_matrix(rng, dim, dim);
        let mut g = conjugate_transpose(&b).dot(&b);
        for i in 0..dim {
            g[(i, i)] += Complex64::new(0.1, 0.0);
        }
        HermitianMatrix::new(g).unwrap()
    }

    pub fn random_unitary<R: Rng>(rng: &mut R, dim: usize) -> Array2<Complex64> {
        // Gram-Schmidt on a random matrix
        let a = random_complex_matrix(rng, dim, dim);
        let mut q: Array2<Complex64> = Array2::zeros((dim, dim));
        for j in 0..dim {
            let mut col = a.column(j).to_owned();
            for k in 0..j {
                let prev = q.column(k).to_owned();
                let proj: Complex64 = prev.iter().zip(col.iter()).map(|(x, y)| x.conj() * y).sum();
                for r in 0..dim {
                    col[r] -= proj * prev[r];
                }
            }
            let norm = col.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            for r in 0..dim {
                q[(r, j)] = col[r] / norm;
            }
        }
        q
    }
}
