//! EM for the rank-1 model with additive diagonal noise,
//! `x = H s + b`, `s ~ N(0, diag v)`, `b ~ N(0, R_b)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};

use super::{projection_variances, EmConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Rank1EmState {
    /// I x J mixing matrix.
    pub h: CMatrix,
    /// `v_j(n)`, source-major.
    pub v: Vec<f64>,
    /// Diagonal of `R_b`.
    pub noise: Vec<f64>,
    pub noise_floor: f64,
}

impl Rank1EmState {
    pub fn initial(cols: &[CVector], h_init: &[CVector], cfg: &EmConfig, floor: f64) -> Self {
        let i = cols.first().map_or(h_init[0].len(), |c| c.len());
        let n = cols.len();
        let h = CMatrix::from_columns(h_init);
        let mut v = vec![0.0; h_init.len() * n];
        for (j, hj) in h_init.iter().enumerate() {
            projection_variances(cols, hj, floor, &mut v[j * n..(j + 1) * n]);
        }
        let power = cols.iter().map(|c| c.norm_squared()).sum::<f64>() / (n * i).max(1) as f64;
        let noise_floor = (cfg.noise_floor * power).max(floor);
        let noise = vec![(cfg.noise_init * power).max(noise_floor); i];
        Self {
            h,
            v,
            noise,
            noise_floor,
        }
    }

    pub fn num_sources(&self) -> usize {
        self.h.ncols()
    }

    fn mixture(&self, n: usize, frames: usize) -> CMatrix {
        let i = self.h.nrows();
        let mut rx = CMatrix::from_diagonal(&CVector::from_iterator(
            i,
            self.noise.iter().map(|&b| b.into()),
        ));
        for j in 0..self.num_sources() {
            let hj = self.h.column(j);
            rx += (hj * hj.adjoint()).scale(self.v[j * frames + n]);
        }
        rx
    }

    pub fn log_likelihood(&self, cols: &[CVector], ridge: f64) -> Result<f64> {
        let frames = cols.len();
        let mut total = 0.0;
        for (n, x) in cols.iter().enumerate() {
            let (inv, logdet) = linalg::mixture_inverse(&self.mixture(n, frames), ridge)
                .ok_or(Error::Singular { bin: 0, frame: n })?;
            total += -(x.len() as f64) * PI.ln() - logdet - linalg::quad_form(&inv, x.as_slice()).re;
        }
        Ok(total)
    }
}

/// One EM iteration on a bin. Returns the log-likelihood of the parameters
/// the iteration started from.
pub fn rank1_iterate(state: &mut Rank1EmState, cols: &[CVector], cfg: &EmConfig, floor: f64) -> Result<f64> {
    let frames = cols.len();
    let (i, j_count) = (state.h.nrows(), state.num_sources());
    let id_j = CMatrix::identity(j_count, j_count);
    let mut rss = CMatrix::zeros(j_count, j_count);
    let mut rxs = CMatrix::zeros(i, j_count);
    let mut rxx = CMatrix::zeros(i, i);
    let mut v_new = vec![0.0; state.v.len()];
    let mut ll = 0.0;
    let hh = state.h.adjoint();
    for (n, x) in cols.iter().enumerate() {
        let (inv, logdet) = linalg::mixture_inverse(&state.mixture(n, frames), cfg.ridge)
            .ok_or(Error::Singular { bin: 0, frame: n })?;
        ll += -(i as f64) * PI.ln() - logdet - linalg::quad_form(&inv, x.as_slice()).re;
        let rs = CMatrix::from_diagonal(&CVector::from_iterator(
            j_count,
            (0..j_count).map(|j| state.v[j * frames + n].into()),
        ));
        let w = &rs * &hh * &inv;
        let s = &w * x;
        let post = linalg::outer(&s, &s) + (&id_j - &w * &state.h) * &rs;
        for j in 0..j_count {
            v_new[j * frames + n] = post[(j, j)].re.max(floor);
        }
        rss += post;
        rxs += linalg::outer(x, &s);
        rxx += linalg::outer(x, x);
    }
    let rss = linalg::hermitize(&rss);
    let inv_ss = match linalg::hermitian_inverse(&rss) {
        Some((m, _)) => m,
        None => linalg::hermitian_inverse(&linalg::ridge(&rss, cfg.ridge))
            .ok_or_else(|| Error::Bin {
                bin: 0,
                message: "source posterior covariance is singular".into(),
            })?
            .0,
    };
    let h = &rxs * inv_ss;
    let resid = &rxx - &h * rxs.adjoint() - &rxs * h.adjoint() + &h * &rss * h.adjoint();
    for (k, b) in state.noise.iter_mut().enumerate() {
        *b = (resid[(k, k)].re / frames as f64).max(state.noise_floor);
    }
    state.h = h;
    state.v = v_new;
    Ok(ll)
}
