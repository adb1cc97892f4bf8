//! Per-bin maximum-likelihood estimation of the model parameters.
//!
//! Bins are independent problems and are processed in parallel; inside a
//! bin every reduction runs in frame order, so repeated runs are
//! bit-identical.

pub mod fullrank;
pub mod rank1;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::InitResult;
use crate::linalg::{self, CMatrix, CVector};
use crate::spatial::{self, MixingVectorSet, ModelKind, SpatialCovarianceSet, VarianceMap};
use crate::stft::TfTensor;
use crate::tensorfile::{Tensor, TensorBundle};

pub use fullrank::{fullrank_iterate, FullRankEmState};
pub use rank1::{rank1_iterate, Rank1EmState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmConfig {
    pub iterations: usize,
    /// Variance floor relative to the mean mixture power.
    pub variance_floor: f64,
    /// Diagonal loading applied before inverting mixture covariances.
    pub ridge: f64,
    /// Initial noise variance relative to the per-channel power of a bin.
    pub noise_init: f64,
    /// Lower bound on the noise variance, same reference.
    pub noise_floor: f64,
    /// Eigenvalue floor applied once to the initial full-rank matrices,
    /// relative to `tr(R) / I`.
    pub init_eigen_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            variance_floor: 1e-10,
            ridge: 1e-9,
            noise_init: 1e-4,
            noise_floor: 1e-8,
            init_eigen_floor: 1e-3,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("em.variance_floor", self.variance_floor),
            ("em.ridge", self.ridge),
            ("em.noise_init", self.noise_init),
            ("em.noise_floor", self.noise_floor),
        ];
        for (path, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(path, format!("must be positive, got {value}")));
            }
        }
        if !(self.init_eigen_floor.is_finite() && self.init_eigen_floor >= 0.0) {
            return Err(Error::config("em.init_eigen_floor", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Result of a per-bin EM run over a whole mixture.
#[derive(Debug, Clone)]
pub struct EmOutput {
    pub variances: VarianceMap,
    pub covariances: SpatialCovarianceSet,
    /// Mixing vectors for the rank-1 model.
    pub mixing: Option<MixingVectorSet>,
    /// Diagonal noise variances per bin (`F * I`), rank-1 model only.
    pub noise: Option<Vec<f64>>,
    /// Total log-likelihood before the first and after every iteration.
    pub loglik: Vec<f64>,
    /// The same trace per bin.
    pub bin_loglik: Vec<Vec<f64>>,
}

impl EmOutput {
    pub fn to_bundle(&self) -> Result<TensorBundle> {
        let mut b = spatial::parameters_to_bundle(&self.variances, &self.covariances)?;
        let iters = self.loglik.len();
        b.push(Tensor::real("loglik", vec![iters], self.loglik.clone())?);
        let flat: Vec<f64> = self.bin_loglik.iter().flatten().copied().collect();
        b.push(Tensor::real("bin_loglik", vec![self.bin_loglik.len(), iters], flat)?);
        if let Some(h) = &self.mixing {
            b.push(h.to_tensor("mixing")?);
        }
        if let Some(noise) = &self.noise {
            let i = self.covariances.num_channels();
            b.push(Tensor::real("noise", vec![noise.len() / i.max(1), i], noise.clone())?);
        }
        Ok(b)
    }
}

/// Mean power `|x|^2 / I` over the whole tensor.
pub(crate) fn mean_power(x: &TfTensor) -> f64 {
    x.mean_power()
}

/// `max(floor, |h^H x|^2 / |h|^4)` for every frame of one bin and source.
pub fn projection_variances(frames: &[linalg::CVector], h: &CVector, floor: f64, out: &mut [f64]) {
    let n2 = h.norm_squared();
    for (v, x) in out.iter_mut().zip(frames) {
        *v = if n2 > 0.0 {
            ((h.adjoint() * x)[(0, 0)].norm_sqr() / (n2 * n2)).max(floor)
        } else {
            floor
        };
    }
}

pub(crate) fn bin_columns(x: &TfTensor, f: usize) -> Vec<CVector> {
    (0..x.num_frames())
        .map(|n| linalg::from_slice(x.frame(f, n)))
        .collect()
}

/// Runs `cfg.iterations` EM iterations per bin from `init`.
///
/// Only the rank-1 convolutive and unconstrained full-rank models are
/// estimated blindly; other kinds are rejected.
pub fn em_run(x: &TfTensor, init: &InitResult, cfg: &EmConfig, kind: ModelKind) -> Result<EmOutput> {
    cfg.validate()?;
    if init.num_bins() != x.num_bins()
        || init.covariances.num_channels() != x.num_channels()
        || init.mixing.num_channels() != x.num_channels()
    {
        return Err(Error::Dimension(format!(
            "initialisation has {} bins of size {}, mixture has {} bins of size {}",
            init.num_bins(),
            init.covariances.num_channels(),
            x.num_bins(),
            x.num_channels()
        )));
    }
    let floor = (cfg.variance_floor * mean_power(x)).max(f64::MIN_POSITIVE);
    match kind {
        ModelKind::Rank1Convolutive => run_rank1(x, init, cfg, floor),
        ModelKind::FullrankUnconstrained => run_fullrank(x, init, cfg, floor),
        other => Err(Error::Precondition(format!(
            "blind estimation is not available for the {other} model"
        ))),
    }
}

fn run_rank1(x: &TfTensor, init: &InitResult, cfg: &EmConfig, floor: f64) -> Result<EmOutput> {
    let (bins, j_count, frames, chans) =
        (x.num_bins(), init.num_sources(), x.num_frames(), x.num_channels());
    let results: Vec<Result<(Rank1EmState, Vec<f64>)>> = (0..bins)
        .into_par_iter()
        .map(|f| {
            let cols = bin_columns(x, f);
            let mut state = Rank1EmState::initial(&cols, init.mixing.bin(f), cfg, floor);
            let mut trace = Vec::with_capacity(cfg.iterations + 1);
            for _ in 0..cfg.iterations {
                let ll = rank1_iterate(&mut state, &cols, cfg, floor)
                    .map_err(|e| with_bin(e, f))?;
                trace.push(ll);
            }
            trace.push(state.log_likelihood(&cols, cfg.ridge).map_err(|e| with_bin(e, f))?);
            Ok((state, trace))
        })
        .collect();

    let mut variances = VarianceMap::zeros(bins, j_count, frames);
    let mut mixing = Vec::with_capacity(bins * j_count);
    let mut noise = Vec::with_capacity(bins * chans);
    let mut bin_loglik = Vec::with_capacity(bins);
    for (f, r) in results.into_iter().enumerate() {
        let (state, trace) = r?;
        variances.bin_mut(f).copy_from_slice(&state.v);
        mixing.extend((0..j_count).map(|j| state.h.column(j).into_owned()));
        noise.extend_from_slice(&state.noise);
        bin_loglik.push(trace);
    }
    let mixing = MixingVectorSet::new(bins, j_count, mixing)?;
    Ok(EmOutput {
        variances,
        covariances: mixing.to_covariances(ModelKind::Rank1Convolutive),
        mixing: Some(mixing),
        noise: Some(noise),
        loglik: sum_traces(&bin_loglik),
        bin_loglik,
    })
}

fn run_fullrank(x: &TfTensor, init: &InitResult, cfg: &EmConfig, floor: f64) -> Result<EmOutput> {
    let (bins, j_count, frames) = (x.num_bins(), init.num_sources(), x.num_frames());
    let results: Vec<Result<(FullRankEmState, Vec<f64>)>> = (0..bins)
        .into_par_iter()
        .map(|f| {
            let cols = bin_columns(x, f);
            let r: Vec<CMatrix> = init
                .covariances
                .bin(f)
                .iter()
                .map(|m| {
                    let level = cfg.init_eigen_floor * linalg::trace_re(m) / m.nrows() as f64;
                    if level > 0.0 {
                        linalg::floor_eigenvalues(m, level)
                    } else {
                        m.clone()
                    }
                })
                .collect();
            let mut state = FullRankEmState::initial(&cols, r, init.mixing.bin(f), floor);
            let trace = state.run(&cols, cfg, floor, true).map_err(|e| with_bin(e, f))?;
            Ok((state, trace))
        })
        .collect();

    let mut variances = VarianceMap::zeros(bins, j_count, frames);
    let mut mats = Vec::with_capacity(bins * j_count);
    let mut bin_loglik = Vec::with_capacity(bins);
    for (f, r) in results.into_iter().enumerate() {
        let (state, trace) = r?;
        variances.bin_mut(f).copy_from_slice(&state.v);
        mats.extend(state.r);
        bin_loglik.push(trace);
    }
    Ok(EmOutput {
        variances,
        covariances: SpatialCovarianceSet::new(ModelKind::FullrankUnconstrained, bins, j_count, mats)?,
        mixing: None,
        noise: None,
        loglik: sum_traces(&bin_loglik),
        bin_loglik,
    })
}

/// Variance-only estimation with the spatial covariances held fixed.
/// Returns the variances and the total log-likelihood trace.
pub fn semiblind_variances(
    x: &TfTensor,
    r: &SpatialCovarianceSet,
    cfg: &EmConfig,
) -> Result<(VarianceMap, Vec<f64>)> {
    cfg.validate()?;
    if r.num_bins() != x.num_bins() || r.num_channels() != x.num_channels() {
        return Err(Error::Dimension(format!(
            "covariances for {} bins of size {}, mixture has {} bins of size {}",
            r.num_bins(),
            r.num_channels(),
            x.num_bins(),
            x.num_channels()
        )));
    }
    let floor = (cfg.variance_floor * mean_power(x)).max(f64::MIN_POSITIVE);
    let (bins, j_count, frames) = (x.num_bins(), r.num_sources(), x.num_frames());
    let results: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..bins)
        .into_par_iter()
        .map(|f| {
            let cols = bin_columns(x, f);
            let mats = r.bin(f).to_vec();
            let h: Vec<CVector> = mats.iter().map(principal_scaled).collect();
            let mut state = FullRankEmState::initial(&cols, mats, &h, floor);
            let trace = state.run(&cols, cfg, floor, false).map_err(|e| with_bin(e, f))?;
            Ok((state.v, trace))
        })
        .collect();
    let mut v = VarianceMap::zeros(bins, j_count, frames);
    let mut traces = Vec::with_capacity(bins);
    for (f, res) in results.into_iter().enumerate() {
        let (vf, trace) = res?;
        v.bin_mut(f).copy_from_slice(&vf);
        traces.push(trace);
    }
    Ok((v, sum_traces(&traces)))
}

/// `sqrt(lambda_max) * w_max`, the best rank-1 factor of a PSD matrix.
pub(crate) fn principal_scaled(m: &CMatrix) -> CVector {
    let (vals, vecs) = linalg::hermitian_eigen(m);
    let k = vals.len() - 1;
    vecs.column(k).scale(vals[k].max(0.0).sqrt())
}

fn sum_traces(traces: &[Vec<f64>]) -> Vec<f64> {
    let len = traces.first().map_or(0, Vec::len);
    (0..len).map(|k| traces.iter().map(|t| t[k]).sum()).collect()
}

fn with_bin(e: Error, f: usize) -> Error {
    match e {
        Error::Singular { frame, .. } => Error::Singular { bin: f, frame },
        Error::Bin { message, .. } => Error::Bin { bin: f, message },
        other => Error::Bin {
            bin: f,
            message: other.to_string(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{init_clustering, InitConfig};
    use crate::stft::StftConfig;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn synthetic(seed: u64, bins: usize, frames: usize) -> (TfTensor, SpatialCovarianceSet, VarianceMap) {
        synthetic_spread(seed, bins, frames, 1.5)
    }

    /// Data drawn from the full-rank model; log-variances are Gaussian
    /// with standard deviation `log_std`.
    fn synthetic_spread(seed: u64, bins: usize, frames: usize, log_std: f64) -> (TfTensor, SpatialCovarianceSet, VarianceMap) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = StftConfig::new(2 * (bins - 1)).unwrap();
        let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
        let j_count = 3;
        let mut mats = Vec::new();
        for _ in 0..bins * j_count {
            let a = CMatrix::from_fn(2, 2, |_, _| Complex64::new(gauss(), gauss()));
            let m = &a * a.adjoint() + CMatrix::identity(2, 2).scale(0.05);
            mats.push(m.scale(2.0 / linalg::trace_re(&m)));
        }
        let r = SpatialCovarianceSet::new(ModelKind::FullrankUnconstrained, bins, j_count, mats).unwrap();
        let mut v = VarianceMap::zeros(bins, j_count, frames);
        for f in 0..bins {
            for j in 0..j_count {
                for n in 0..frames {
                    v.set(f, j, n, (log_std * gauss()).exp());
                }
            }
        }
        let mut x = TfTensor::zeros(bins, frames, 2, &cfg, 16000);
        for f in 0..bins {
            for j in 0..j_count {
                let (vals, vecs) = linalg::hermitian_eigen(r.get(f, j));
                for n in 0..frames {
                    let z = CVector::from_fn(2, |k, _| {
                        Complex64::new(gauss(), gauss()) * (vals[k].max(0.0) * v.get(f, j, n) / 2.0).sqrt()
                    });
                    let c = &vecs * z;
                    for (dst, s) in x.frame_mut(f, n).iter_mut().zip(c.iter()) {
                        *dst += s;
                    }
                }
            }
        }
        (x, r, v)
    }

    fn synthetic_single(seed: u64, bins: usize, frames: usize, log_std: f64) -> (TfTensor, SpatialCovarianceSet, VarianceMap) {
        let (_, r3, _) = synthetic_spread(seed, bins, 1, log_std);
        let mats = (0..bins).map(|f| r3.get(f, 0).clone()).collect();
        let r = SpatialCovarianceSet::new(ModelKind::FullrankUnconstrained, bins, 1, mats).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
        let cfg = StftConfig::new(2 * (bins - 1)).unwrap();
        let mut v = VarianceMap::zeros(bins, 1, frames);
        let mut x = TfTensor::zeros(bins, frames, 2, &cfg, 16000);
        for f in 0..bins {
            let (vals, vecs) = linalg::hermitian_eigen(r.get(f, 0));
            for n in 0..frames {
                let vn = (log_std * gauss()).exp();
                v.set(f, 0, n, vn);
                let z = CVector::from_fn(2, |k, _| {
                    Complex64::new(gauss(), gauss()) * (vals[k].max(0.0) * vn / 2.0).sqrt()
                });
                x.frame_mut(f, n).copy_from_slice((&vecs * z).as_slice());
            }
        }
        (x, r, v)
    }

    fn assert_monotone(trace: &[f64]) {
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-6 * w[0].abs(), "decrease {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn zero_iterations_keep_initialisation() {
        let (x, _, _) = synthetic(1, 5, 40);
        let init = init_clustering(&x, &InitConfig::new(3)).unwrap();
        let cfg = EmConfig { iterations: 0, init_eigen_floor: 0.0, ..EmConfig::default() };
        let out = em_run(&x, &init, &cfg, ModelKind::FullrankUnconstrained).unwrap();
        assert_eq!(out.covariances, init.covariances);
        assert_eq!(out.loglik.len(), 1);
        let out = em_run(&x, &init, &cfg, ModelKind::Rank1Convolutive).unwrap();
        assert_eq!(out.mixing.unwrap(), init.mixing);
    }

    #[test]
    fn traces_are_monotone() {
        for seed in 0..4 {
            let (x, _, _) = synthetic(seed, 6, 60);
            let init = init_clustering(&x, &InitConfig::new(3)).unwrap();
            for kind in [ModelKind::FullrankUnconstrained, ModelKind::Rank1Convolutive] {
                let out = em_run(&x, &init, &EmConfig { iterations: 15, ..EmConfig::default() }, kind).unwrap();
                for t in &out.bin_loglik {
                    assert_monotone(t);
                }
                out.covariances.check_invariants().unwrap();
            }
        }
    }

    #[test]
    fn deterministic() {
        let (x, _, _) = synthetic(3, 4, 50);
        let init = init_clustering(&x, &InitConfig::new(3)).unwrap();
        let a = em_run(&x, &init, &EmConfig::default(), ModelKind::FullrankUnconstrained).unwrap();
        let b = em_run(&x, &init, &EmConfig::default(), ModelKind::FullrankUnconstrained).unwrap();
        assert_eq!(a.variances, b.variances);
        assert_eq!(a.covariances, b.covariances);
        assert_eq!(a.loglik, b.loglik);
    }

    #[test]
    fn unsupported_kinds_rejected() {
        let (x, _, _) = synthetic(2, 3, 40);
        let init = init_clustering(&x, &InitConfig::new(3)).unwrap();
        assert!(matches!(
            em_run(&x, &init, &EmConfig::default(), ModelKind::Rank1Anechoic),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn semiblind_single_source_reaches_information_bound() {
        // With one source and known R the estimate is x^H R^-1 x / I, whose
        // log has a Gamma(I) error of variance trigamma(I). For I = 2 and
        // log-variance spread 3 the attainable correlation is
        // sqrt(9 / (9 + trigamma(2))).
        let (x, r, v) = synthetic_single(11, 4, 1000, 3.0);
        let cfg = EmConfig { iterations: 50, ..EmConfig::default() };
        let (vhat, trace) = semiblind_variances(&x, &r, &cfg).unwrap();
        assert_monotone(&trace);
        let (a, b): (Vec<f64>, Vec<f64>) = (0..4)
            .flat_map(|f| (0..1000).map(move |n| (f, n)))
            .map(|(f, n)| (vhat.get(f, 0, n).ln(), v.get(f, 0, n).ln()))
            .unzip();
        let trigamma2 = std::f64::consts::PI.powi(2) / 6.0 - 1.0;
        let bound = (9.0 / (9.0 + trigamma2)).sqrt();
        let corr = crate::eval::pearson(&a, &b);
        assert!(corr > 0.95 && (corr - bound).abs() < 0.01, "{corr} vs {bound}");
    }

    #[test]
    fn semiblind_underdetermined_tracks_variances() {
        let (x, r, v) = synthetic_spread(12, 4, 300, 3.0);
        let cfg = EmConfig { iterations: 50, ..EmConfig::default() };
        let (vhat, trace) = semiblind_variances(&x, &r, &cfg).unwrap();
        assert_monotone(&trace);
        for j in 0..3 {
            let (a, b): (Vec<f64>, Vec<f64>) = (0..4)
                .flat_map(|f| (0..300).map(move |n| (f, n)))
                .map(|(f, n)| (vhat.get(f, j, n).ln(), v.get(f, j, n).ln()))
                .unzip();
            assert!(crate::eval::pearson(&a, &b) > 0.4);
        }
    }

    #[test]
    fn semiblind_scales_quadratically() {
        let (x, r, _) = synthetic(4, 3, 30);
        let mut x2 = x.clone();
        x2.as_mut_slice().iter_mut().for_each(|z| *z *= 2.0);
        let cfg = EmConfig { iterations: 20, ..EmConfig::default() };
        let (a, _) = semiblind_variances(&x, &r, &cfg).unwrap();
        let (b, _) = semiblind_variances(&x2, &r, &cfg).unwrap();
        for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((q / p - 4.0).abs() < 1e-6 * 4.0, "{p} {q}");
        }
    }

    #[test]
    fn semiblind_identity_single_source() {
        let cfg_stft = StftConfig::new(4).unwrap();
        let mut x = TfTensor::zeros(1, 3, 2, &cfg_stft, 8);
        let data = [[1.0, 2.0], [0.5, -0.5], [3.0, 0.0]];
        for (n, d) in data.iter().enumerate() {
            x.frame_mut(0, n)
                .copy_from_slice(&[Complex64::new(d[0], 0.0), Complex64::new(0.0, d[1])]);
        }
        let r = SpatialCovarianceSet::new(ModelKind::FullrankUnconstrained, 1, 1, vec![CMatrix::identity(2, 2)]).unwrap();
        let (v, _) = semiblind_variances(&x, &r, &EmConfig { iterations: 3, ..EmConfig::default() }).unwrap();
        for (n, d) in data.iter().enumerate() {
            let expect = (d[0] * d[0] + d[1] * d[1]) / 2.0;
            assert!((v.get(0, 0, n) - expect).abs() < 1e-12 * expect.max(1.0));
        }
    }
}
