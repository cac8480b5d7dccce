//! Unscented transform with the scaled sigma-point set.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{cholesky_jitter, symmetrize};

const SIGMA_JITTER: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnscentedParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UnscentedParams {
    fn default() -> Self {
        UnscentedParams {
            alpha: 1e-3,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

/// `2n + 1` sigma points with their mean and covariance weights.
pub struct SigmaPoints {
    pub points: Vec<DVector<f64>>,
    pub wm: Vec<f64>,
    pub wc: Vec<f64>,
}

impl UnscentedParams {
    pub fn sigma_points(&self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<SigmaPoints> {
        let n = mean.len();
        let nf = n as f64;
        let lambda = self.alpha * self.alpha * (nf + self.kappa) - nf;
        let gamma = (nf + lambda).sqrt();
        let mut c = cov.clone();
        symmetrize(&mut c);
        let l = cholesky_jitter(&c, SIGMA_JITTER)?.l();
        let mut points = Vec::with_capacity(2 * n + 1);
        points.push(mean.clone());
        // Spreads are snapped to the grid of the mean so each pair is exactly
        // symmetric and cancels in the weighted mean.
        let spreads: Vec<DVector<f64>> = (0..n).map(|i| (mean + l.column(i) * gamma) - mean).collect();
        for s in &spreads {
            points.push(mean + s);
        }
        for s in &spreads {
            points.push(mean - s);
        }
        let w = 1.0 / (2.0 * (nf + lambda));
        let mut wm = vec![w; 2 * n + 1];
        let mut wc = wm.clone();
        wm[0] = lambda / (nf + lambda);
        wc[0] = wm[0] + 1.0 - self.alpha * self.alpha + self.beta;
        Ok(SigmaPoints { points, wm, wc })
    }
}

/// Weighted mean of transformed points, accumulated as offsets from the
/// central point to limit cancellation with tiny `alpha`.
pub fn weighted_mean(ys: &[DVector<f64>], wm: &[f64]) -> DVector<f64> {
    let mut mean = ys[0].clone();
    for (y, &w) in ys.iter().zip(wm).skip(1) {
        mean += (y - &ys[0]) * w;
    }
    mean
}

pub fn weighted_cross(xs: &[DVector<f64>], xm: &DVector<f64>, ys: &[DVector<f64>], ym: &DVector<f64>, wc: &[f64]) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(xm.len(), ym.len());
    for ((x, y), &w) in xs.iter().zip(ys).zip(wc) {
        acc += (x - xm) * (y - ym).transpose() * w;
    }
    acc
}

/// Propagates a Gaussian `(mean, cov)` through `f`.
pub fn unscented_transform<F>(mean: &DVector<f64>, cov: &DMatrix<f64>, params: &UnscentedParams, f: F) -> Result<(DVector<f64>, DMatrix<f64>)>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let sp = params.sigma_points(mean, cov)?;
    let ys: Vec<DVector<f64>> = sp.points.iter().map(&f).collect();
    let ym = weighted_mean(&ys, &sp.wm);
    let mut c = weighted_cross(&ys, &ym, &ys, &ym, &sp.wc);
    symmetrize(&mut c);
    Ok((ym, c))
}
