//! Spatial covariance parameterisations, the mixture covariance and the
//! Gaussian log-likelihood of the observed STFT coefficients.
//!
//! Every source image `c_j(n, f)` is zero-mean Gaussian with covariance
//! `v_j(n, f) R_j(f)`. The four families of `R_j(f)` differ in how they
//! are parameterised; all of them end up as an I x I Hermitian PSD matrix
//! per source and bin, which is what [`SpatialCovarianceSet`] stores.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::roomsim::{diffuse_coherence, Point, SceneSpec};
use crate::stft::TfTensor;
use crate::tensorfile::{Tensor, TensorBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Rank1Anechoic,
    Rank1Convolutive,
    FullrankDirectDiffuse,
    FullrankUnconstrained,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Rank1Anechoic,
        ModelKind::Rank1Convolutive,
        ModelKind::FullrankDirectDiffuse,
        ModelKind::FullrankUnconstrained,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Rank1Anechoic => "rank1_anechoic",
            ModelKind::Rank1Convolutive => "rank1_convolutive",
            ModelKind::FullrankDirectDiffuse => "fullrank_direct_diffuse",
            ModelKind::FullrankUnconstrained => "fullrank_unconstrained",
        }
    }

    pub fn is_rank1(self) -> bool {
        matches!(self, ModelKind::Rank1Anechoic | ModelKind::Rank1Convolutive)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config("model", format!("unknown model kind `{s}`")))
    }
}

/// One complex I-vector per (bin, source).
#[derive(Debug, Clone, PartialEq)]
pub struct MixingVectorSet {
    num_bins: usize,
    num_sources: usize,
    vectors: Vec<CVector>,
}

impl MixingVectorSet {
    pub fn new(num_bins: usize, num_sources: usize, vectors: Vec<CVector>) -> Result<Self> {
        if vectors.len() != num_bins * num_sources {
            return Err(Error::Dimension(format!(
                "{} vectors for {num_bins} bins x {num_sources} sources",
                vectors.len()
            )));
        }
        Ok(Self {
            num_bins,
            num_sources,
            vectors,
        })
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_sources(&self) -> usize {
        self.num_sources
    }

    pub fn num_channels(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.len())
    }

    pub fn get(&self, f: usize, j: usize) -> &CVector {
        &self.vectors[f * self.num_sources + j]
    }

    pub fn get_mut(&mut self, f: usize, j: usize) -> &mut CVector {
        &mut self.vectors[f * self.num_sources + j]
    }

    pub fn bin(&self, f: usize) -> &[CVector] {
        &self.vectors[f * self.num_sources..(f + 1) * self.num_sources]
    }

    pub fn bin_mut(&mut self, f: usize) -> &mut [CVector] {
        &mut self.vectors[f * self.num_sources..(f + 1) * self.num_sources]
    }

    /// `R_j(f) = h_j(f) h_j(f)^H` for every entry.
    pub fn to_covariances(&self, kind: ModelKind) -> SpatialCovarianceSet {
        SpatialCovarianceSet {
            kind,
            num_bins: self.num_bins,
            num_sources: self.num_sources,
            mats: self.vectors.iter().map(rank1_covariance).collect(),
        }
    }

    pub fn to_tensor(&self, name: &str) -> Result<Tensor> {
        let i = self.num_channels();
        let data = self.vectors.iter().flat_map(|v| v.iter().copied()).collect();
        Tensor::complex(name, vec![self.num_bins, self.num_sources, i], data)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.dims.len() != 3 {
            return Err(Error::MalformedTensor(format!("mixing vectors dims {:?}", t.dims)));
        }
        let (f, j, i) = (t.dims[0], t.dims[1], t.dims[2]);
        let data = t.as_complex()?;
        let vectors = data
            .chunks_exact(i.max(1))
            .take(f * j)
            .map(linalg::from_slice)
            .collect();
        Self::new(f, j, vectors)
    }
}

/// Free-field delays `tau_ij = r_ij / c` and gains `kappa_ij = 1 / (sqrt(4 pi) r_ij)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnechoicParams {
    num_mics: usize,
    /// Indexed `j * I + i`.
    delays: Vec<f64>,
    gains: Vec<f64>,
}

impl AnechoicParams {
    pub fn from_distances(distances: &[Vec<f64>], sound_velocity: f64) -> Result<Self> {
        let num_mics = distances.first().map_or(0, Vec::len);
        let mut delays = Vec::new();
        let mut gains = Vec::new();
        for (j, row) in distances.iter().enumerate() {
            if row.len() != num_mics {
                return Err(Error::Dimension(format!("distance row {j} has wrong length")));
            }
            for &r in row {
                if !(r.is_finite() && r > 0.0) {
                    return Err(Error::Precondition(format!("distance {r} must be positive")));
                }
                delays.push(r / sound_velocity);
                gains.push(1.0 / ((4.0 * PI).sqrt() * r));
            }
        }
        Ok(Self {
            num_mics,
            delays,
            gains,
        })
    }

    pub fn from_scene(scene: &SceneSpec, sound_velocity: f64) -> Result<Self> {
        let d: Vec<Vec<f64>> = (0..scene.sources.len())
            .map(|j| (0..scene.mics.len()).map(|i| scene.source_mic_distance(j, i)).collect())
            .collect();
        Self::from_distances(&d, sound_velocity)
    }

    pub fn num_sources(&self) -> usize {
        self.delays.len() / self.num_mics.max(1)
    }

    pub fn num_mics(&self) -> usize {
        self.num_mics
    }

    pub fn delay(&self, i: usize, j: usize) -> f64 {
        self.delays[j * self.num_mics + i]
    }

    pub fn gain(&self, i: usize, j: usize) -> f64 {
        self.gains[j * self.num_mics + i]
    }
}

/// Free-field steering vector, entry `i` equal to `kappa_ij exp(-2 pi i f tau_ij)`.
pub fn anechoic_steering(params: &AnechoicParams, j: usize, f_hz: f64) -> CVector {
    CVector::from_fn(params.num_mics, |i, _| {
        Complex64::from_polar(params.gain(i, j), -2.0 * PI * f_hz * params.delay(i, j))
    })
}

/// `h h^H`.
pub fn rank1_covariance(h: &CVector) -> CMatrix {
    linalg::outer(h, h)
}

/// `a a^H + sigma2_rev * Psi`.
pub fn direct_diffuse_covariance(a: &CVector, sigma2_rev: f64, psi: &DMatrix<f64>) -> CMatrix {
    let mut r = rank1_covariance(a);
    for row in 0..r.nrows() {
        for col in 0..r.ncols() {
            r[(row, col)] += Complex64::new(sigma2_rev * psi[(row, col)], 0.0);
        }
    }
    r
}

/// Diffuse-field coherence matrix `Psi(f)` from pairwise mic distances.
pub fn diffuse_coherence_matrix(mics: &[Point], f_hz: f64, sound_velocity: f64) -> DMatrix<f64> {
    let n = mics.len();
    DMatrix::from_fn(n, n, |i, l| {
        diffuse_coherence(crate::roomsim::distance(&mics[i], &mics[l]), f_hz, sound_velocity)
    })
}

/// Per-source, per-bin I x I spatial covariance matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCovarianceSet {
    pub kind: ModelKind,
    num_bins: usize,
    num_sources: usize,
    mats: Vec<CMatrix>,
}

impl SpatialCovarianceSet {
    pub fn new(
        kind: ModelKind,
        num_bins: usize,
        num_sources: usize,
        mats: Vec<CMatrix>,
    ) -> Result<Self> {
        if mats.len() != num_bins * num_sources {
            return Err(Error::Dimension(format!(
                "{} matrices for {num_bins} bins x {num_sources} sources",
                mats.len()
            )));
        }
        Ok(Self {
            kind,
            num_bins,
            num_sources,
            mats,
        })
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_sources(&self) -> usize {
        self.num_sources
    }

    pub fn num_channels(&self) -> usize {
        self.mats.first().map_or(0, |m| m.nrows())
    }

    pub fn get(&self, f: usize, j: usize) -> &CMatrix {
        &self.mats[f * self.num_sources + j]
    }

    pub fn get_mut(&mut self, f: usize, j: usize) -> &mut CMatrix {
        &mut self.mats[f * self.num_sources + j]
    }

    pub fn bin(&self, f: usize) -> &[CMatrix] {
        &self.mats[f * self.num_sources..(f + 1) * self.num_sources]
    }

    pub fn bin_mut(&mut self, f: usize) -> &mut [CMatrix] {
        &mut self.mats[f * self.num_sources..(f + 1) * self.num_sources]
    }

    /// Rank-1 anechoic matrices `a_j a_j^H` at the STFT bin frequencies.
    pub fn rank1_anechoic(params: &AnechoicParams, num_bins: usize, bin_hz: f64) -> Self {
        let j_count = params.num_sources();
        let mats = (0..num_bins)
            .flat_map(|f| (0..j_count).map(move |j| (f, j)))
            .map(|(f, j)| rank1_covariance(&anechoic_steering(params, j, f as f64 * bin_hz)))
            .collect();
        Self {
            kind: ModelKind::Rank1Anechoic,
            num_bins,
            num_sources: j_count,
            mats,
        }
    }

    /// Direct+diffuse matrices at the STFT bin frequencies.
    pub fn direct_diffuse(
        params: &AnechoicParams,
        sigma2_rev: f64,
        mics: &[Point],
        sound_velocity: f64,
        num_bins: usize,
        bin_hz: f64,
    ) -> Self {
        let j_count = params.num_sources();
        let mut mats = Vec::with_capacity(num_bins * j_count);
        for f in 0..num_bins {
            let hz = f as f64 * bin_hz;
            let psi = diffuse_coherence_matrix(mics, hz, sound_velocity);
            for j in 0..j_count {
                mats.push(direct_diffuse_covariance(
                    &anechoic_steering(params, j, hz),
                    sigma2_rev,
                    &psi,
                ));
            }
        }
        Self {
            kind: ModelKind::FullrankDirectDiffuse,
            num_bins,
            num_sources: j_count,
            mats,
        }
    }

    /// Checks the Hermitian, PSD and (for rank-1 kinds) rank conditions of
    /// every matrix.
    pub fn check_invariants(&self) -> Result<()> {
        for (k, m) in self.mats.iter().enumerate() {
            let (f, j) = (k / self.num_sources, k % self.num_sources);
            let norm = linalg::frobenius(m);
            let asym = linalg::frobenius(&(m - m.adjoint()));
            if asym > 1e-12 * norm.max(f64::MIN_POSITIVE) {
                return Err(Error::Bin {
                    bin: f,
                    message: format!("R_{j} not Hermitian ({asym:e})"),
                });
            }
            let (vals, _) = linalg::hermitian_eigen(m);
            let tr = linalg::trace_re(m);
            if vals[0] < -1e-10 * tr.abs() {
                return Err(Error::Bin {
                    bin: f,
                    message: format!("R_{j} has eigenvalue {}", vals[0]),
                });
            }
            if self.kind.is_rank1() && vals.len() > 1 {
                let top = vals[vals.len() - 1];
                let second = vals[vals.len() - 2];
                if top > 0.0 && second / top >= 1e-10 {
                    return Err(Error::Bin {
                        bin: f,
                        message: format!("R_{j} is not rank one"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Rescales every `R_j(f)` to trace I and moves the scale into `v`.
    /// Mixture covariances and the likelihood are unchanged.
    pub fn normalize_trace(&mut self, v: &mut VarianceMap) {
        let i = self.num_channels() as f64;
        for f in 0..self.num_bins {
            for j in 0..self.num_sources {
                let m = self.get_mut(f, j);
                let tr = linalg::trace_re(m);
                if tr <= 0.0 {
                    continue;
                }
                let s = tr / i;
                *m = m.unscale(s);
                for x in v.frames_mut(f, j) {
                    *x *= s;
                }
            }
        }
    }

    pub fn to_tensor(&self, name: &str) -> Result<Tensor> {
        let i = self.num_channels();
        let mut data = Vec::with_capacity(self.mats.len() * i * i);
        for m in &self.mats {
            for r in 0..i {
                for c in 0..i {
                    data.push(m[(r, c)]);
                }
            }
        }
        Tensor::complex(name, vec![self.num_bins, self.num_sources, i, i], data)
    }

    pub fn from_tensor(t: &Tensor, kind: ModelKind) -> Result<Self> {
        if t.dims.len() != 4 || t.dims[2] != t.dims[3] {
            return Err(Error::MalformedTensor(format!("covariance dims {:?}", t.dims)));
        }
        let (f, j, i) = (t.dims[0], t.dims[1], t.dims[2]);
        let data = t.as_complex()?;
        let mats = data
            .chunks_exact((i * i).max(1))
            .take(f * j)
            .map(|c| CMatrix::from_row_slice(i, i, c))
            .collect();
        Self::new(kind, f, j, mats)
    }
}

/// Nonnegative source variances `v_j(n, f)`, laid out `(f, j, n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMap {
    num_bins: usize,
    num_sources: usize,
    num_frames: usize,
    data: Vec<f64>,
}

impl VarianceMap {
    pub fn zeros(num_bins: usize, num_sources: usize, num_frames: usize) -> Self {
        Self {
            num_bins,
            num_sources,
            num_frames,
            data: vec![0.0; num_bins * num_sources * num_frames],
        }
    }

    pub fn from_vec(
        num_bins: usize,
        num_sources: usize,
        num_frames: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != num_bins * num_sources * num_frames {
            return Err(Error::Dimension("variance map size mismatch".into()));
        }
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Precondition(format!("invalid variance {bad}")));
        }
        Ok(Self {
            num_bins,
            num_sources,
            num_frames,
            data,
        })
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_sources(&self) -> usize {
        self.num_sources
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn get(&self, f: usize, j: usize, n: usize) -> f64 {
        self.data[(f * self.num_sources + j) * self.num_frames + n]
    }

    pub fn set(&mut self, f: usize, j: usize, n: usize, value: f64) {
        self.data[(f * self.num_sources + j) * self.num_frames + n] = value;
    }

    /// `v_j(., f)` over all frames.
    pub fn frames(&self, f: usize, j: usize) -> &[f64] {
        let k = (f * self.num_sources + j) * self.num_frames;
        &self.data[k..k + self.num_frames]
    }

    pub fn frames_mut(&mut self, f: usize, j: usize) -> &mut [f64] {
        let k = (f * self.num_sources + j) * self.num_frames;
        &mut self.data[k..k + self.num_frames]
    }

    /// All sources of one bin, `J * N` values.
    pub fn bin(&self, f: usize) -> &[f64] {
        let len = self.num_sources * self.num_frames;
        &self.data[f * len..(f + 1) * len]
    }

    pub fn bin_mut(&mut self, f: usize) -> &mut [f64] {
        let len = self.num_sources * self.num_frames;
        &mut self.data[f * len..(f + 1) * len]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_tensor(&self, name: &str) -> Result<Tensor> {
        Tensor::real(
            name,
            vec![self.num_bins, self.num_sources, self.num_frames],
            self.data.clone(),
        )
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.dims.len() != 3 {
            return Err(Error::MalformedTensor(format!("variance dims {:?}", t.dims)));
        }
        Self::from_vec(t.dims[0], t.dims[1], t.dims[2], t.as_real()?.to_vec())
    }
}

/// `R_x = sum_j v_j R_j` for one time-frequency point.
pub fn mixture_covariance(v: &[f64], r: &[CMatrix]) -> CMatrix {
    let n = r.first().map_or(0, |m| m.nrows());
    let mut acc = CMatrix::zeros(n, n);
    for (vj, rj) in v.iter().zip(r) {
        acc += rj.scale(*vj);
    }
    acc
}

/// Gaussian log-density `-log det(pi R_x) - x^H R_x^{-1} x` of one frame,
/// with `R_x` loaded as in [`linalg::mixture_inverse`]. `None` when even
/// the loaded matrix is singular.
pub fn frame_log_likelihood(rx: &CMatrix, x: &[Complex64], ridge_eps: f64) -> Option<f64> {
    let (inv, logdet) = linalg::mixture_inverse(rx, ridge_eps)?;
    let q = linalg::quad_form(&inv, x).re;
    Some(-(x.len() as f64) * PI.ln() - logdet - q)
}

/// Log-likelihood of one bin given its variances (`J * N`, source-major)
/// and spatial covariances, optionally with an additive noise covariance.
pub fn bin_log_likelihood(
    frames: &[Complex64],
    num_channels: usize,
    v: &[f64],
    r: &[CMatrix],
    noise: Option<&CMatrix>,
    ridge_eps: f64,
    bin: usize,
) -> Result<f64> {
    let num_frames = frames.len() / num_channels.max(1);
    let j_count = r.len();
    let mut total = 0.0;
    let mut vn = vec![0.0; j_count];
    for n in 0..num_frames {
        for (j, slot) in vn.iter_mut().enumerate() {
            *slot = v[j * num_frames + n];
        }
        let mut rx = mixture_covariance(&vn, r);
        if let Some(b) = noise {
            rx += b;
        }
        let x = &frames[n * num_channels..(n + 1) * num_channels];
        total += frame_log_likelihood(&rx, x, ridge_eps).ok_or(Error::Singular { bin, frame: n })?;
    }
    Ok(total)
}

/// Observed-data log-likelihood summed over all bins in bin order.
pub fn log_likelihood(
    x: &TfTensor,
    v: &VarianceMap,
    r: &SpatialCovarianceSet,
    ridge_eps: f64,
) -> Result<f64> {
    check_dims(x, v, r)?;
    let mut total = 0.0;
    for f in 0..x.num_bins() {
        total += bin_log_likelihood(x.bin(f), x.num_channels(), v.bin(f), r.bin(f), None, ridge_eps, f)?;
    }
    Ok(total)
}

pub(crate) fn check_dims(x: &TfTensor, v: &VarianceMap, r: &SpatialCovarianceSet) -> Result<()> {
    if v.num_bins() != x.num_bins()
        || v.num_frames() != x.num_frames()
        || r.num_bins() != x.num_bins()
        || r.num_sources() != v.num_sources()
        || r.num_channels() != x.num_channels()
    {
        return Err(Error::Dimension(format!(
            "mixture {}x{}x{}, variances {}x{}x{}, covariances {}x{} of size {}",
            x.num_bins(),
            x.num_frames(),
            x.num_channels(),
            v.num_bins(),
            v.num_sources(),
            v.num_frames(),
            r.num_bins(),
            r.num_sources(),
            r.num_channels()
        )));
    }
    Ok(())
}

/// Outcome of [`empirical_covariance_ml`].
#[derive(Debug, Clone)]
pub struct EmpiricalCovariance {
    pub covariances: SpatialCovarianceSet,
    pub variances: VarianceMap,
    /// `(bin, source)` pairs that were silent and fell back to identity.
    pub fallback: Vec<(usize, usize)>,
}

/// Maximum-likelihood `R_j(f)` (with free per-frame variances) from the
/// STFTs of the true source images. Each source is treated as a
/// single-source problem, where the full-rank EM reduces to the
/// alternation `v = tr(R^-1 c c^H) / I`, `R = mean(c c^H / v)`.
/// Results are normalised to trace I.
pub fn empirical_covariance_ml(
    images: &[TfTensor],
    iterations: usize,
    variance_floor_rel: f64,
) -> Result<EmpiricalCovariance> {
    let first = images
        .first()
        .ok_or_else(|| Error::Precondition("no source images".into()))?;
    if images.iter().any(|t| !t.same_shape(first)) {
        return Err(Error::Dimension("source images differ in shape".into()));
    }
    let (bins, frames, chans) = (first.num_bins(), first.num_frames(), first.num_channels());
    let j_count = images.len();
    let mut mats = Vec::with_capacity(bins * j_count);
    let mut variances = VarianceMap::zeros(bins, j_count, frames);
    let mut fallback = Vec::new();

    let global_power: f64 =
        images.iter().map(TfTensor::mean_power).sum::<f64>() / j_count as f64;
    let floor = (variance_floor_rel * global_power).max(f64::MIN_POSITIVE);
    let id = CMatrix::identity(chans, chans);

    for f in 0..bins {
        for (j, img) in images.iter().enumerate() {
            let cols: Vec<CVector> = (0..frames)
                .map(|n| linalg::from_slice(img.frame(f, n)))
                .collect();
            let power: f64 = cols.iter().map(|c| c.norm_squared()).sum::<f64>() / frames as f64;
            if power <= floor * chans as f64 {
                mats.push(id.clone());
                variances.frames_mut(f, j).fill(floor);
                fallback.push((f, j));
                continue;
            }
            let mut r = cols
                .iter()
                .fold(CMatrix::zeros(chans, chans), |acc, c| acc + linalg::outer(c, c))
                .unscale(frames as f64);
            r = normalize_to_trace(&linalg::ridge(&r, 1e-9), chans);
            let mut v = vec![0.0; frames];
            for _ in 0..iterations.max(1) {
                let Some((inv, _)) = linalg::hermitian_inverse(&r) else {
                    break;
                };
                for (vn, c) in v.iter_mut().zip(&cols) {
                    *vn = (linalg::quad_form(&inv, c.as_slice()).re / chans as f64).max(floor);
                }
                let acc = cols
                    .iter()
                    .zip(&v)
                    .fold(CMatrix::zeros(chans, chans), |acc, (c, vn)| {
                        acc + linalg::outer(c, c).unscale(*vn)
                    })
                    .unscale(frames as f64);
                r = normalize_to_trace(&linalg::ridge(&linalg::hermitize(&acc), 1e-9), chans);
            }
            if let Some((inv, _)) = linalg::hermitian_inverse(&r) {
                for (vn, c) in v.iter_mut().zip(&cols) {
                    *vn = (linalg::quad_form(&inv, c.as_slice()).re / chans as f64).max(floor);
                }
            }
            variances.frames_mut(f, j).copy_from_slice(&v);
            mats.push(r);
        }
    }
    Ok(EmpiricalCovariance {
        covariances: SpatialCovarianceSet::new(ModelKind::FullrankUnconstrained, bins, j_count, mats)?,
        variances,
        fallback,
    })
}

fn normalize_to_trace(m: &CMatrix, target: usize) -> CMatrix {
    let tr = linalg::trace_re(m);
    if tr > 0.0 {
        m.scale(target as f64 / tr)
    } else {
        m.clone()
    }
}

/// Serialises model parameters in the shared tensor format.
pub fn parameters_to_bundle(v: &VarianceMap, r: &SpatialCovarianceSet) -> Result<TensorBundle> {
    let mut b = TensorBundle::new().with_meta("model", r.kind.as_str());
    b.push(v.to_tensor("variances")?);
    b.push(r.to_tensor("covariances")?);
    Ok(b)
}

pub fn parameters_from_bundle(b: &TensorBundle) -> Result<(VarianceMap, SpatialCovarianceSet)> {
    let kind: ModelKind = b.meta("model")?.parse()?;
    let v = VarianceMap::from_tensor(b.get("variances")?)?;
    let r = SpatialCovarianceSet::from_tensor(b.get("covariances")?, kind)?;
    if v.num_bins() != r.num_bins() || v.num_sources() != r.num_sources() {
        return Err(Error::MalformedTensor("variance and covariance shapes disagree".into()));
    }
    Ok((v, r))
}
