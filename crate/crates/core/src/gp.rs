//! Squared-exponential Gaussian processes in non-centred form.
//!
//! A latent path is `intercept + slope * t + L z` where `L L^T = K + jitter * sigma^2 * I`
//! and `z` is a vector of standard-normal innovations. The kernel is
//! `k(t, t') = sigma^2 exp(-(t - t')^2 / l^2)`, with no factor of two in the
//! denominator.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_JITTER: f64 = 1e-6;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self {
            rows: r,
            cols: c,
            data: rows.concat(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| dot(self.row(i), v))
            .collect()
    }

    /// `self^T v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len());
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self[(i, j)] == self[(j, i)]))
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SEKernel {
    pub sigma: f64,
    pub lengthscale: f64,
}

impl SEKernel {
    pub fn new(sigma: f64, lengthscale: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) || !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::Domain(format!(
                "kernel needs sigma > 0 and lengthscale > 0, got ({sigma}, {lengthscale})"
            )));
        }
        Ok(Self { sigma, lengthscale })
    }

    pub fn eval(&self, t: f64, u: f64) -> f64 {
        let d = (t - u) / self.lengthscale;
        self.sigma * self.sigma * (-d * d).exp()
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    for (i, a) in times.iter().enumerate() {
        if times[..i].contains(a) {
            return Err(Error::Domain(format!("duplicate time {a}")));
        }
    }
    Ok(())
}

/// Covariance `K + jitter * sigma^2 * I` over the given times.
pub fn build_cov(times: &[f64], kernel: &SEKernel, jitter: f64) -> Result<Matrix> {
    if !(jitter > 0.0) {
        return Err(Error::Domain(format!("jitter must be positive, got {jitter}")));
    }
    check_times(times)?;
    let n = times.len();
    let mut k = Matrix::zeros(n, n);
    let s2 = kernel.sigma * kernel.sigma;
    for i in 0..n {
        for j in 0..i {
            let v = kernel.eval(times[i], times[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] = s2 * (1.0 + jitter);
    }
    Ok(k)
}

/// Dot product with four independent accumulators, so it vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Lower Cholesky factor. Fails with the 1-based index of the first
/// non-positive leading minor.
pub fn cholesky(k: &Matrix) -> Result<Matrix> {
    let n = k.rows();
    if k.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: k.cols(),
        });
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        let (done, rest) = l.data.split_at_mut(i * n);
        let row_i = &mut rest[..n];
        for j in 0..=i {
            let d = if j == i {
                dot(&row_i[..i], &row_i[..i])
            } else {
                dot(&row_i[..j], &done[j * n..j * n + j])
            };
            let s = k[(i, j)] - d;
            if j == i {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite(i + 1));
                }
                row_i[i] = s.sqrt();
            } else {
                row_i[j] = s / done[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Solve `L X = B` for lower-triangular `L`, overwriting `b` row by row.
#[cfg(test)]
fn forward_substitute_rows(l: &Matrix, b: &mut Matrix) {
    let n = l.rows();
    let cols = b.cols();
    for i in 0..n {
        let (done, rest) = b.data.split_at_mut(i * cols);
        let row = &mut rest[..cols];
        for k in 0..i {
            let lik = l[(i, k)];
            if lik == 0.0 {
                continue;
            }
            let src = &done[k * cols..(k + 1) * cols];
            for (r, &s) in row.iter_mut().zip(src) {
                *r -= lik * s;
            }
        }
        let inv = 1.0 / l[(i, i)];
        row.iter_mut().for_each(|r| *r *= inv);
    }
}

/// Gaussian process with linear mean, in whitened form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGP {
    pub mean_intercept: f64,
    pub mean_slope: f64,
    pub kernel: SEKernel,
    pub whitened: Vec<f64>,
}

impl LatentGP {
    pub fn trend(&self, t: usize) -> f64 {
        self.mean_intercept + self.mean_slope * t as f64
    }
}

/// Realized path at t = 1..T: `intercept + slope * t + (L z)[t]`.
pub fn realize(gp: &LatentGP, l: &Matrix) -> Result<Vec<f64>> {
    let n = gp.whitened.len();
    if l.rows() != n || l.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: l.rows(),
        });
    }
    let dev = l.mul_vec(&gp.whitened);
    Ok(dev
        .iter()
        .enumerate()
        .map(|(i, d)| gp.trend(i + 1) + d)
        .collect())
}

/// Times 1..=T as reals.
pub fn unit_times(horizon: usize) -> Vec<f64> {
    (1..=horizon).map(|t| t as f64).collect()
}

type FactorKey = (usize, u64, u64);
const FACTOR_CACHE_SIZE: usize = 8;

/// Cholesky factor of the unit-scale kernel `exp(-d^2/l^2) + jitter I` on an
/// integer grid, with what is needed to differentiate through it.
#[derive(Debug, Clone)]
pub struct UnitFactor {
    lengthscale: f64,
    chol: Matrix,
}

impl UnitFactor {
    pub fn new(horizon: usize, lengthscale: f64, jitter: f64) -> Result<Self> {
        SEKernel::new(1.0, lengthscale)?;
        if !(jitter > 0.0) {
            return Err(Error::Domain(format!("jitter must be positive, got {jitter}")));
        }
        // On an integer grid the kernel depends only on the lag.
        let lags = lag_table(horizon, lengthscale);
        let mut k = Matrix::zeros(horizon, horizon);
        for i in 0..horizon {
            for j in 0..i {
                k[(i, j)] = lags[i - j];
                k[(j, i)] = lags[i - j];
            }
            k[(i, i)] = 1.0 + jitter;
        }
        Ok(Self {
            lengthscale,
            chol: cholesky(&k)?,
        })
    }

    /// Like [`UnitFactor::new`], reusing a factor recently built on this
    /// thread for the same grid, lengthscale and jitter.
    pub fn shared(horizon: usize, lengthscale: f64, jitter: f64) -> Result<Arc<Self>> {
        thread_local! {
            static RECENT: RefCell<VecDeque<(FactorKey, Arc<UnitFactor>)>> = const { RefCell::new(VecDeque::new()) };
        }
        let key = (horizon, lengthscale.to_bits(), jitter.to_bits());
        if let Some(f) = RECENT.with_borrow(|r| r.iter().find(|(k, _)| *k == key).map(|(_, f)| f.clone())) {
            return Ok(f);
        }
        let f = Arc::new(Self::new(horizon, lengthscale, jitter)?);
        RECENT.with_borrow_mut(|r| {
            if r.len() == FACTOR_CACHE_SIZE {
                r.pop_front();
            }
            r.push_back((key, f.clone()));
        });
        Ok(f)
    }

    pub fn chol(&self) -> &Matrix {
        &self.chol
    }

    /// Deviation `sigma * L1 z`.
    pub fn deviation(&self, sigma: f64, z: &[f64]) -> Vec<f64> {
        let mut d = self.chol.mul_vec(z);
        d.iter_mut().for_each(|v| *v *= sigma);
        d
    }

    /// Derivative of the Cholesky factor with respect to `ln lengthscale`,
    /// by differentiating the factorization recurrence.
    pub fn chol_log_lengthscale_derivative(&self) -> Matrix {
        let l = &self.chol;
        let n = l.rows();
        let lags = lag_table(n, self.lengthscale);
        let ls2 = self.lengthscale * self.lengthscale;
        let mut dl = Matrix::zeros(n, n);
        for i in 0..n {
            let li = l.row(i);
            for j in 0..i {
                let d = (i - j) as f64;
                let dk = lags[i - j] * 2.0 * d * d / ls2;
                let lj = l.row(j);
                let (dli, dlj) = (dl.row(i), dl.row(j));
                let s = dk - li[j] * dlj[j] - dot(&dli[..j], &lj[..j]) - dot(&li[..j], &dlj[..j]);
                dl[(i, j)] = s / lj[j];
            }
            dl[(i, i)] = -dot(&li[..i], &dl.row(i)[..i]) / li[i];
        }
        dl
    }

    /// Pull an adjoint `g = d(objective)/d(deviation)` back onto `z`, `ln sigma`
    /// and `ln lengthscale`.
    pub fn backprop(&self, sigma: f64, z: &[f64], g: &[f64]) -> (Vec<f64>, f64, f64) {
        let l = &self.chol;
        let u = l.tr_mul_vec(g);
        let grad_z: Vec<f64> = u.iter().map(|v| v * sigma).collect();
        let unit_dev = l.mul_vec(z);
        let d_log_sigma = sigma * g.iter().zip(&unit_dev).map(|(a, b)| a * b).sum::<f64>();
        let dl = self.chol_log_lengthscale_derivative();
        let d_log_l = sigma * g.iter().zip(dl.mul_vec(z)).map(|(a, b)| a * b).sum::<f64>();
        (grad_z, d_log_sigma, d_log_l)
    }
}

/// `exp(-(d / l)^2)` for lags `d = 0..n`.
fn lag_table(n: usize, lengthscale: f64) -> Vec<f64> {
    (0..n)
        .map(|d| {
            let r = d as f64 / lengthscale;
            (-r * r).exp()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    fn reconstruct(l: &Matrix) -> Matrix {
        l.matmul(&l.transpose())
    }

    #[test]
    fn cov_entries() {
        let k = SEKernel::new(2.0, 3.0).unwrap();
        let c = build_cov(&[0.0, 3.0, 10.0], &k, 1e-6).unwrap();
        assert!((c[(0, 0)] - 4.0 * (1.0 + 1e-6)).abs() < 1e-15);
        assert!((c[(0, 1)] - 4.0 * (-1f64).exp()).abs() < 1e-15);
        assert!(c.is_symmetric());
        let tiny = SEKernel::new(2.0, 1e-3).unwrap();
        let c = build_cov(&[1.0, 2.0, 3.0], &tiny, 1e-6).unwrap();
        assert_eq!(c[(0, 1)], 0.0);
        assert!(build_cov(&[1.0, 1.0], &k, 1e-6).is_err());
        assert!(build_cov(&[1.0], &k, 0.0).is_err());
    }

    #[test]
    fn kernel_symmetric_and_decreasing() {
        let k = SEKernel::new(0.7, 4.0).unwrap();
        let mut prev = f64::INFINITY;
        for d in 0..40 {
            let v = k.eval(10.0, 10.0 + d as f64);
            assert_eq!(v, k.eval(10.0 + d as f64, 10.0));
            assert!(v < prev || v == 0.0);
            prev = v;
        }
    }

    #[test]
    fn cholesky_small_cases() {
        let l = cholesky(&Matrix::identity(3)).unwrap();
        assert_eq!(l, Matrix::identity(3));
        let k = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]);
        let l = cholesky(&k).unwrap();
        assert_eq!(l[(0, 0)], 2.0);
        assert_eq!(l[(0, 1)], 0.0);
        assert_eq!(l[(1, 0)], 1.0);
        assert!((l[(1, 1)] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cholesky_reports_minor() {
        let k = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 1.0],
            vec![0.0, 1.0, 1.0],
        ]);
        assert!(matches!(cholesky(&k), Err(Error::NotPositiveDefinite(3))));
        let k = Matrix::from_rows(&[vec![-1.0]]);
        assert!(matches!(cholesky(&k), Err(Error::NotPositiveDefinite(1))));
    }

    #[test]
    fn cholesky_reconstructs_full_horizon() {
        let k = build_cov(&unit_times(120), &SEKernel::new(1.0, 5.0).unwrap(), 1e-6).unwrap();
        let l = cholesky(&k).unwrap();
        assert!(reconstruct(&l).max_abs_diff(&k) < 1e-8 * k.max_abs());
        for i in 0..120 {
            for j in (i + 1)..120 {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn realize_trend_only() {
        let gp = LatentGP {
            mean_intercept: 100f64.ln() - 0.03,
            mean_slope: 0.03,
            kernel: SEKernel::new(0.5, 3.0).unwrap(),
            whitened: vec![0.0; 101],
        };
        let l = cholesky(&build_cov(&unit_times(101), &gp.kernel, 1e-6).unwrap()).unwrap();
        let path = realize(&gp, &l).unwrap();
        assert!((path[0].exp() - 100.0).abs() < 1e-9);
        let rate_1900 = path[100].exp();
        assert!((rate_1900 - 100.0 * 3f64.exp()).abs() < 1e-6);
        assert!((2008.0..2009.0).contains(&rate_1900));
    }

    #[test]
    fn realize_constant_when_flat() {
        let gp = LatentGP {
            mean_intercept: 2.5,
            mean_slope: 0.0,
            kernel: SEKernel::new(1e-12, 3.0).unwrap(),
            whitened: vec![1.0; 10],
        };
        let l = cholesky(&build_cov(&unit_times(10), &gp.kernel, 1e-6).unwrap()).unwrap();
        for v in realize(&gp, &l).unwrap() {
            assert!((v - 2.5).abs() < 1e-10);
        }
        let short = Matrix::identity(3);
        assert!(matches!(realize(&gp, &short), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn realize_is_affine_in_z() {
        let kern = SEKernel::new(0.8, 2.0).unwrap();
        let l = cholesky(&build_cov(&unit_times(8), &kern, 1e-6).unwrap()).unwrap();
        let mk = |z: Vec<f64>| LatentGP {
            mean_intercept: 1.0,
            mean_slope: 0.1,
            kernel: kern,
            whitened: z,
        };
        let z1: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let z2: Vec<f64> = (0..8).map(|i| (i as f64 * 0.3).cos()).collect();
        let sum: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| a + b).collect();
        let base = realize(&mk(vec![0.0; 8]), &l).unwrap();
        let a = realize(&mk(z1), &l).unwrap();
        let b = realize(&mk(z2), &l).unwrap();
        let c = realize(&mk(sum), &l).unwrap();
        for i in 0..8 {
            assert!(((c[i] - base[i]) - (a[i] - base[i]) - (b[i] - base[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn whitening_recovers_covariance() {
        let kern = SEKernel::new(1.3, 2.5).unwrap();
        let k = build_cov(&unit_times(10), &kern, 1e-6).unwrap();
        let l = cholesky(&k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mut acc = Matrix::zeros(10, 10);
        for _ in 0..draws {
            let z: Vec<f64> = (0..10).map(|_| StandardNormal.sample(&mut rng)).collect();
            let e = l.mul_vec(&z);
            for i in 0..10 {
                for j in 0..10 {
                    acc[(i, j)] += e[i] * e[j];
                }
            }
        }
        for i in 0..10 {
            for j in 0..10 {
                assert!((acc[(i, j)] / draws as f64 - k[(i, j)]).abs() < 0.05);
            }
        }
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let n = 15;
        let z: Vec<f64> = (0..n).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.4).collect();
        let g: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let (sigma, ls) = (0.6, 3.2);
        let objective = |sigma: f64, ls: f64, z: &[f64]| -> f64 {
            let f = UnitFactor::new(n, ls, 1e-6).unwrap();
            f.deviation(sigma, z).iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let f = UnitFactor::new(n, ls, 1e-6).unwrap();
        let (gz, d_log_sigma, d_log_l) = f.backprop(sigma, &z, &g);
        let h: f64 = 1e-5;
        let num_ls = (objective(sigma, ls * h.exp(), &z) - objective(sigma, ls * (-h).exp(), &z)) / (2.0 * h);
        assert!((num_ls - d_log_l).abs() < 1e-6 * (1.0 + d_log_l.abs()), "{num_ls} vs {d_log_l}");
        let num_s = (objective(sigma * h.exp(), ls, &z) - objective(sigma * (-h).exp(), ls, &z)) / (2.0 * h);
        assert!((num_s - d_log_sigma).abs() < 1e-6 * (1.0 + d_log_sigma.abs()));
        for i in 0..n {
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let num = (objective(sigma, ls, &zp) - objective(sigma, ls, &zm)) / (2.0 * h);
            assert!((num - gz[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn cholesky_derivative_matches_the_congruence_formula() {
        // dL = L Phi(L^{-1} dK L^{-T}), Phi taking the lower triangle with half diagonal.
        let (n, ls) = (12, 2.7);
        let f = UnitFactor::new(n, ls, 1e-6).unwrap();
        let l = f.chol();
        let mut dk = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let d2 = ((i as f64 - j as f64) / ls).powi(2);
                dk[(i, j)] = (-d2).exp() * 2.0 * d2;
            }
        }
        let mut w = dk.clone();
        forward_substitute_rows(l, &mut w);
        let mut m = w.transpose();
        forward_substitute_rows(l, &mut m);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] *= match i.cmp(&j) {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
        let oracle = l.matmul(&m);
        assert!(oracle.max_abs_diff(&f.chol_log_lengthscale_derivative()) < 1e-8 * oracle.max_abs());
    }
}
