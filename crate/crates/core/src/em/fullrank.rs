//! Generalized EM for the unconstrained full-rank model, and its
//! variance-only restriction used when the spatial covariances are known.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};

use super::{projection_variances, EmConfig};

/// Parameters of one bin: `R_j(f)` and `v_j(n, f)` stored source-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FullRankEmState {
    pub r: Vec<CMatrix>,
    pub v: Vec<f64>,
}

/// E-step quantities for one frame and source.
#[derive(Debug, Clone)]
pub struct SourcePosterior {
    pub gain: CMatrix,
    pub mean: CVector,
    pub covariance: CMatrix,
}

impl FullRankEmState {
    /// Variances start from the projection of each frame on `h[j]`.
    pub fn initial(cols: &[CVector], r: Vec<CMatrix>, h: &[CVector], floor: f64) -> Self {
        let n = cols.len();
        let mut v = vec![0.0; r.len() * n];
        for (j, hj) in h.iter().enumerate() {
            projection_variances(cols, hj, floor, &mut v[j * n..(j + 1) * n]);
        }
        Self { r, v }
    }

    pub fn num_sources(&self) -> usize {
        self.r.len()
    }

    fn mixture(&self, n: usize, frames: usize) -> CMatrix {
        let i = self.r[0].nrows();
        let mut rx = CMatrix::zeros(i, i);
        for (j, rj) in self.r.iter().enumerate() {
            rx += rj.scale(self.v[j * frames + n]);
        }
        rx
    }

    /// Wiener gains, posterior means and covariances of every source image
    /// for frame `n`.
    pub fn posteriors(&self, x: &CVector, n: usize, frames: usize, ridge: f64) -> Result<Vec<SourcePosterior>> {
        let rx = self.mixture(n, frames);
        let (inv, _) = linalg::mixture_inverse(&rx, ridge).ok_or(Error::Singular { bin: 0, frame: n })?;
        let i = x.len();
        let id = CMatrix::identity(i, i);
        Ok(self
            .r
            .iter()
            .enumerate()
            .map(|(j, rj)| {
                let rc = rj.scale(self.v[j * frames + n]);
                let gain = &rc * &inv;
                let mean = &gain * x;
                let covariance = linalg::outer(&mean, &mean) + (&id - &gain) * &rc;
                SourcePosterior { gain, mean, covariance }
            })
            .collect())
    }

    pub fn log_likelihood(&self, cols: &[CVector], ridge: f64) -> Result<f64> {
        let frames = cols.len();
        let mut total = 0.0;
        for (n, x) in cols.iter().enumerate() {
            let rx = self.mixture(n, frames);
            let (inv, logdet) =
                linalg::mixture_inverse(&rx, ridge).ok_or(Error::Singular { bin: 0, frame: n })?;
            total += -(x.len() as f64) * PI.ln() - logdet - linalg::quad_form(&inv, x.as_slice()).re;
        }
        Ok(total)
    }

    /// One iteration. The variances are updated first with the current
    /// `R_j`, then (when `update_r`) `R_j` is re-estimated with the new
    /// variances. Returns the log-likelihood of the parameters the
    /// iteration started from.
    pub fn iterate(&mut self, cols: &[CVector], cfg: &EmConfig, floor: f64, update_r: bool) -> Result<f64> {
        let frames = cols.len();
        let j_count = self.num_sources();
        let i = self.r[0].nrows();
        let id = CMatrix::identity(i, i);
        let pinv: Vec<(CMatrix, usize)> = self
            .r
            .iter()
            .map(|m| linalg::psd_pseudo_inverse(m, 1e-10))
            .collect();
        let mut acc = vec![CMatrix::zeros(i, i); if update_r { j_count } else { 0 }];
        let mut v_new = vec![0.0; self.v.len()];
        let mut ll = 0.0;
        for (n, x) in cols.iter().enumerate() {
            let rx = self.mixture(n, frames);
            let (inv, logdet) =
                linalg::mixture_inverse(&rx, cfg.ridge).ok_or(Error::Singular { bin: 0, frame: n })?;
            ll += -(i as f64) * PI.ln() - logdet - linalg::quad_form(&inv, x.as_slice()).re;
            for j in 0..j_count {
                let rc = self.r[j].scale(self.v[j * frames + n]);
                let gain = &rc * &inv;
                let mean = &gain * x;
                let post = linalg::outer(&mean, &mean) + (&id - &gain) * &rc;
                let (p, rank) = &pinv[j];
                let vn = if *rank == 0 {
                    floor
                } else {
                    (linalg::trace_product(p, &post).re / *rank as f64).max(floor)
                };
                v_new[j * frames + n] = vn;
                if update_r {
                    acc[j] += post.unscale(vn);
                }
            }
        }
        self.v = v_new;
        if update_r {
            for (rj, a) in self.r.iter_mut().zip(acc) {
                *rj = linalg::clip_psd(&a.unscale(frames as f64));
            }
        }
        Ok(ll)
    }

    /// `cfg.iterations` iterations; the trace holds the log-likelihood
    /// before each iteration and after the last.
    pub fn run(&mut self, cols: &[CVector], cfg: &EmConfig, floor: f64, update_r: bool) -> Result<Vec<f64>> {
        let mut trace = Vec::with_capacity(cfg.iterations + 1);
        for _ in 0..cfg.iterations {
            trace.push(self.iterate(cols, cfg, floor, update_r)?);
        }
        trace.push(self.log_likelihood(cols, cfg.ridge)?);
        Ok(trace)
    }
}

/// One full-rank GEM iteration on a bin; see [`FullRankEmState::iterate`].
pub fn fullrank_iterate(state: &mut FullRankEmState, cols: &[CVector], cfg: &EmConfig, floor: f64) -> Result<f64> {
    state.iterate(cols, cfg, floor, true)
}
