//! Source image reconstruction: multichannel Wiener filtering for the
//! Gaussian models, plus binary masking and per-bin l1 minimisation as
//! reference baselines.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::audio::MultichannelAudio;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::spatial::{self, MixingVectorSet, SpatialCovarianceSet, VarianceMap};
use crate::stft::{istft, StftConfig, TfTensor};

#[derive(Debug, Clone)]
pub struct SeparationOutput {
    pub images_tf: Vec<TfTensor>,
    pub images: Vec<MultichannelAudio>,
}

impl SeparationOutput {
    pub fn from_tf(images_tf: Vec<TfTensor>) -> Result<Self> {
        let images = images_tf
            .iter()
            .map(|t| {
                let cfg = StftConfig::new(t.frame_size)?;
                istft(t, &cfg)
            })
            .collect::<Result<_>>()?;
        Ok(Self { images_tf, images })
    }
}

/// `c_j = v_j R_j R_x^-1 x` for every bin and frame.
pub fn wiener_images(
    x: &TfTensor,
    v: &VarianceMap,
    r: &SpatialCovarianceSet,
    ridge: f64,
) -> Result<Vec<TfTensor>> {
    spatial::check_dims(x, v, r)?;
    let (bins, frames, j_count) = (x.num_bins(), x.num_frames(), r.num_sources());
    let per_bin: Vec<Result<Vec<Complex64>>> = (0..bins)
        .into_par_iter()
        .map(|f| {
            // Output laid out (j, n, i) for this bin.
            let chans = x.num_channels();
            let mut out = vec![Complex64::new(0.0, 0.0); j_count * frames * chans];
            let vf = v.bin(f);
            let rf = r.bin(f);
            let mut vn = vec![0.0; j_count];
            for n in 0..frames {
                for (j, slot) in vn.iter_mut().enumerate() {
                    *slot = vf[j * frames + n];
                }
                let rx = spatial::mixture_covariance(&vn, rf);
                let (inv, _) = linalg::mixture_inverse(&rx, ridge).ok_or(Error::Singular { bin: f, frame: n })?;
                let z = &inv * linalg::from_slice(x.frame(f, n));
                for j in 0..j_count {
                    let c = rf[j].scale(vn[j]) * &z;
                    let k = (j * frames + n) * chans;
                    out[k..k + chans].copy_from_slice(c.as_slice());
                }
            }
            Ok(out)
        })
        .collect();
    collect_images(x, j_count, per_bin)
}

fn collect_images(x: &TfTensor, j_count: usize, per_bin: Vec<Result<Vec<Complex64>>>) -> Result<Vec<TfTensor>> {
    let (frames, chans) = (x.num_frames(), x.num_channels());
    let mut images = vec![x.zeros_like(); j_count];
    for (f, res) in per_bin.into_iter().enumerate() {
        let data = res?;
        for (j, img) in images.iter_mut().enumerate() {
            let k = j * frames * chans;
            img.bin_mut(f).copy_from_slice(&data[k..k + frames * chans]);
        }
    }
    Ok(images)
}

pub fn wiener_separate(
    x: &TfTensor,
    v: &VarianceMap,
    r: &SpatialCovarianceSet,
    ridge: f64,
) -> Result<SeparationOutput> {
    SeparationOutput::from_tf(wiener_images(x, v, r, ridge)?)
}

/// Assigns every time-frequency point entirely to the source whose
/// mixing direction best explains it.
pub fn binary_mask_images(x: &TfTensor, h: &MixingVectorSet) -> Result<Vec<TfTensor>> {
    check_vectors(x, h)?;
    let (frames, chans, j_count) = (x.num_frames(), x.num_channels(), h.num_sources());
    let per_bin: Vec<Result<Vec<Complex64>>> = (0..x.num_bins())
        .into_par_iter()
        .map(|f| {
            let units: Vec<CVector> = h
                .bin(f)
                .iter()
                .map(|hj| {
                    let n = hj.norm();
                    if n > 0.0 { hj.unscale(n) } else { hj.clone() }
                })
                .collect();
            let mut out = vec![Complex64::new(0.0, 0.0); j_count * frames * chans];
            for n in 0..frames {
                let xv = linalg::from_slice(x.frame(f, n));
                let best = (0..j_count)
                    .map(|j| (units[j].adjoint() * &xv)[(0, 0)].norm_sqr())
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (j, s)| if s > acc.1 { (j, s) } else { acc })
                    .0;
                let k = (best * frames + n) * chans;
                out[k..k + chans].copy_from_slice(x.frame(f, n));
            }
            Ok(out)
        })
        .collect();
    collect_images(x, j_count, per_bin)
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if n < k {
        return Vec::new();
    }
    let mut with: Vec<Vec<usize>> = subsets(n - 1, k - 1);
    for s in &mut with {
        s.push(n - 1);
    }
    let mut out = subsets(n - 1, k);
    out.extend(with);
    out
}

/// Per point, the minimum-l1 source vector among the exact solutions using
/// I active sources. Complex l1 over the source coefficients is minimised
/// at a vertex, so only I-subsets need to be examined.
pub fn l1_images(x: &TfTensor, h: &MixingVectorSet) -> Result<Vec<TfTensor>> {
    check_vectors(x, h)?;
    let (frames, chans, j_count) = (x.num_frames(), x.num_channels(), h.num_sources());
    let active = chans.min(j_count);
    let sets = subsets(j_count, active);
    let per_bin: Vec<Result<Vec<Complex64>>> = (0..x.num_bins())
        .into_par_iter()
        .map(|f| {
            let hb = h.bin(f);
            let solvers: Vec<Option<CMatrix>> = sets
                .iter()
                .map(|s| {
                    let m = CMatrix::from_columns(&s.iter().map(|&j| hb[j].clone()).collect::<Vec<_>>());
                    // Least squares when there are fewer sources than channels.
                    let normal = m.adjoint() * &m;
                    normal.try_inverse().map(|inv| inv * m.adjoint())
                })
                .collect();
            let mut out = vec![Complex64::new(0.0, 0.0); j_count * frames * chans];
            for n in 0..frames {
                let xv = linalg::from_slice(x.frame(f, n));
                let mut best: Option<(f64, usize, CVector)> = None;
                for (k, solver) in solvers.iter().enumerate() {
                    let Some(p) = solver else { continue };
                    let s = p * &xv;
                    let cost: f64 = s.iter().map(|z| z.norm()).sum();
                    if best.as_ref().is_none_or(|b| cost < b.0) {
                        best = Some((cost, k, s));
                    }
                }
                if let Some((_, k, s)) = best {
                    for (idx, &j) in sets[k].iter().enumerate() {
                        let c = &hb[j] * s[idx];
                        let o = (j * frames + n) * chans;
                        out[o..o + chans].copy_from_slice(c.as_slice());
                    }
                }
            }
            Ok(out)
        })
        .collect();
    collect_images(x, j_count, per_bin)
}

fn check_vectors(x: &TfTensor, h: &MixingVectorSet) -> Result<()> {
    if h.num_bins() != x.num_bins() || h.num_channels() != x.num_channels() {
        return Err(Error::Dimension(format!(
            "mixing vectors for {} bins of size {}, mixture has {} bins of size {}",
            h.num_bins(),
            h.num_channels(),
            x.num_bins(),
            x.num_channels()
        )));
    }
    Ok(())
}
