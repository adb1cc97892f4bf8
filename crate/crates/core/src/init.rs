//! Per-bin initialisation of the spatial parameters by agglomerative
//! clustering of normalised mixture frames.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::roomsim::Point;
use crate::spatial::{ModelKind, MixingVectorSet, SpatialCovarianceSet};
use crate::stft::TfTensor;
use crate::tensorfile::{Tensor, TensorBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    #[serde(default = "default_cluster_threshold")]
    pub cluster_threshold: usize,
    pub num_sources: usize,
}

fn default_cluster_threshold() -> usize {
    30
}

impl InitConfig {
    pub fn new(num_sources: usize) -> Self {
        Self {
            cluster_threshold: default_cluster_threshold(),
            num_sources,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_sources == 0 {
            return Err(Error::config("init.num_sources", "must be at least 1"));
        }
        if self.cluster_threshold < self.num_sources {
            return Err(Error::config(
                "init.cluster_threshold",
                format!("K = {} is below J = {}", self.cluster_threshold, self.num_sources),
            ));
        }
        Ok(())
    }
}

/// Which initialisation to run. Only clustering is used by default; the
/// other two are kept for comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum InitMethod {
    #[default]
    Clustering,
    Random {
        seed: u64,
    },
    Doa {
        azimuths_deg: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitResult {
    pub mixing: MixingVectorSet,
    pub covariances: SpatialCovarianceSet,
    /// Member count per `(f, j)`, indexed `f * J + j`. Zero for bins that
    /// were copied from a neighbour or not built by clustering.
    pub cluster_sizes: Vec<usize>,
    /// Bins whose parameters were copied from the nearest successful bin.
    pub fallback_bins: Vec<usize>,
}

impl InitResult {
    pub fn num_bins(&self) -> usize {
        self.mixing.num_bins()
    }

    pub fn num_sources(&self) -> usize {
        self.mixing.num_sources()
    }

    pub fn to_bundle(&self) -> Result<TensorBundle> {
        let mut b = TensorBundle::new().with_meta("kind", "init");
        b.push(self.mixing.to_tensor("h_init")?);
        b.push(self.covariances.to_tensor("r_init")?);
        b.push(Tensor::real(
            "cluster_sizes",
            vec![self.num_bins(), self.num_sources()],
            self.cluster_sizes.iter().map(|&c| c as f64).collect(),
        )?);
        Ok(b)
    }

    pub fn from_bundle(b: &TensorBundle) -> Result<Self> {
        let mixing = MixingVectorSet::from_tensor(b.get("h_init")?)?;
        let covariances =
            SpatialCovarianceSet::from_tensor(b.get("r_init")?, ModelKind::FullrankUnconstrained)?;
        let sizes = b.get("cluster_sizes")?;
        sizes.expect_dims(&[mixing.num_bins(), mixing.num_sources()])?;
        Ok(Self {
            mixing,
            covariances,
            cluster_sizes: sizes.as_real()?.iter().map(|&c| c as usize).collect(),
            fallback_bins: Vec::new(),
        })
    }
}

fn first_phase(x: &[Complex64]) -> Complex64 {
    let a = x[0].arg();
    Complex64::from_polar(1.0, -a)
}

/// `x / |x| * exp(-i arg x_1)`; `None` for the zero vector.
pub fn normalize_tf(x: &[Complex64]) -> Option<CVector> {
    let norm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return None;
    }
    let rot = first_phase(x) / norm;
    Some(CVector::from_iterator(x.len(), x.iter().map(|z| z * rot)))
}

/// `x * exp(-i arg x_1)`, amplitude kept.
pub fn phase_normalize(x: &[Complex64]) -> CVector {
    let rot = first_phase(x);
    CVector::from_iterator(x.len(), x.iter().map(|z| z * rot))
}

fn euclid(a: &CVector, b: &CVector) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Average pairwise Euclidean distance between the members of two clusters.
pub fn cluster_distance(a: &[CVector], b: &[CVector]) -> f64 {
    let mut total = 0.0;
    for u in a {
        for w in b {
            total += euclid(u, w);
        }
    }
    total / (a.len() * b.len()) as f64
}

/// Average-linkage agglomerative clustering of `points` down to at most
/// `cfg.cluster_threshold` clusters. Returns the `cfg.num_sources` largest
/// clusters as lists of point indices, largest first.
pub fn hierarchical_cluster(points: &[CVector], cfg: &InitConfig) -> Result<Vec<Vec<usize>>> {
    let clusters = agglomerate(points, cfg.cluster_threshold);
    select_largest(clusters, cfg.num_sources).ok_or(Error::TooFewFrames {
        usable: points.len(),
        sources: cfg.num_sources,
    })
}

/// All clusters left after merging, in index order of their lowest member.
fn agglomerate(points: &[CVector], target: usize) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut active = vec![true; n];
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = euclid(&points[i], &points[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    // Nearest active partner with larger index, first one on ties.
    let mut nn = vec![usize::MAX; n];
    let mut nn_dist = vec![f64::INFINITY; n];
    let refresh = |i: usize, active: &[bool], dist: &[f64], nn: &mut [usize], nn_dist: &mut [f64]| {
        nn[i] = usize::MAX;
        nn_dist[i] = f64::INFINITY;
        for j in i + 1..n {
            if active[j] && dist[i * n + j] < nn_dist[i] {
                nn_dist[i] = dist[i * n + j];
                nn[i] = j;
            }
        }
    };
    for i in 0..n {
        refresh(i, &active, &dist, &mut nn, &mut nn_dist);
    }

    let mut count = n;
    while count > target {
        let mut a = usize::MAX;
        let mut best = f64::INFINITY;
        for i in 0..n {
            if active[i] && nn[i] != usize::MAX && nn_dist[i] < best {
                best = nn_dist[i];
                a = i;
            }
        }
        if a == usize::MAX {
            break;
        }
        let b = nn[a];
        let (na, nb) = (members[a].len() as f64, members[b].len() as f64);
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        active[b] = false;
        count -= 1;
        for k in 0..n {
            if active[k] && k != a {
                let d = (na * dist[a * n + k] + nb * dist[b * n + k]) / (na + nb);
                dist[a * n + k] = d;
                dist[k * n + a] = d;
            }
        }
        refresh(a, &active, &dist, &mut nn, &mut nn_dist);
        for k in 0..a {
            if !active[k] {
                continue;
            }
            if nn[k] == a || nn[k] == b {
                refresh(k, &active, &dist, &mut nn, &mut nn_dist);
            } else {
                let d = dist[k * n + a];
                if d < nn_dist[k] || (d == nn_dist[k] && a < nn[k]) {
                    nn_dist[k] = d;
                    nn[k] = a;
                }
            }
        }
        for k in a + 1..b {
            if active[k] && nn[k] == b {
                refresh(k, &active, &dist, &mut nn, &mut nn_dist);
            }
        }
    }
    (0..n)
        .filter(|&i| active[i])
        .map(|i| {
            let mut m = std::mem::take(&mut members[i]);
            m.sort_unstable();
            m
        })
        .collect()
}

fn select_largest(clusters: Vec<Vec<usize>>, j: usize) -> Option<Vec<Vec<usize>>> {
    if clusters.len() < j {
        return None;
    }
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by(|&a, &b| clusters[b].len().cmp(&clusters[a].len()).then(a.cmp(&b)));
    let mut clusters: Vec<Option<Vec<usize>>> = clusters.into_iter().map(Some).collect();
    Some(order[..j].iter().map(|&k| clusters[k].take().unwrap()).collect())
}

/// Mean phase-normalised vector and mean outer product of one cluster.
pub fn init_params(cluster: &[&[Complex64]]) -> (CVector, CMatrix) {
    let i = cluster[0].len();
    let mut h = CVector::zeros(i);
    let mut r = CMatrix::zeros(i, i);
    for x in cluster {
        let xt = phase_normalize(x);
        r += linalg::outer(&xt, &xt);
        h += xt;
    }
    let n = cluster.len() as f64;
    (h.unscale(n), linalg::hermitize(&r.unscale(n)))
}

type BinInit = (Vec<CVector>, Vec<CMatrix>, Vec<usize>);

fn cluster_bin(x: &TfTensor, f: usize, cfg: &InitConfig) -> Result<BinInit> {
    let chans = x.num_channels();
    let frames: Vec<&[Complex64]> = (0..x.num_frames()).map(|n| x.frame(f, n)).collect();
    let norms: Vec<f64> = frames
        .iter()
        .map(|fr| fr.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..frames.len())
        .filter(|&n| norms[n] > 1e-12 * max_norm && norms[n] > 0.0)
        .collect();
    let points: Vec<CVector> = keep
        .iter()
        .map(|&n| normalize_tf(frames[n]).expect("nonzero frame"))
        .collect();
    let clusters = hierarchical_cluster(&points, cfg)?;
    let mut hs = Vec::with_capacity(cfg.num_sources);
    let mut rs = Vec::with_capacity(cfg.num_sources);
    let mut sizes = Vec::with_capacity(cfg.num_sources);
    for c in &clusters {
        let members: Vec<&[Complex64]> = c.iter().map(|&k| frames[keep[k]]).collect();
        let (h, r) = init_params(&members);
        debug_assert_eq!(h.len(), chans);
        hs.push(h);
        rs.push(r);
        sizes.push(c.len());
    }
    Ok((hs, rs, sizes))
}

/// Clustering initialisation for every bin. Bins with fewer usable frames
/// than sources copy the result of the nearest bin that succeeded.
pub fn init_clustering(x: &TfTensor, cfg: &InitConfig) -> Result<InitResult> {
    cfg.validate()?;
    let bins = x.num_bins();
    let per_bin: Vec<Result<BinInit>> = (0..bins)
        .into_par_iter()
        .map(|f| cluster_bin(x, f, cfg))
        .collect();
    let ok: Vec<usize> = (0..bins).filter(|&f| per_bin[f].is_ok()).collect();
    if ok.is_empty() {
        let usable = (0..x.num_frames())
            .filter(|&n| x.frame(0, n).iter().any(|z| z.norm_sqr() > 0.0))
            .count();
        return Err(Error::TooFewFrames {
            usable,
            sources: cfg.num_sources,
        });
    }
    let mut hs = Vec::with_capacity(bins * cfg.num_sources);
    let mut rs = Vec::with_capacity(bins * cfg.num_sources);
    let mut sizes = Vec::with_capacity(bins * cfg.num_sources);
    let mut fallback_bins = Vec::new();
    for f in 0..bins {
        let src = if per_bin[f].is_ok() {
            f
        } else {
            fallback_bins.push(f);
            *ok.iter().min_by_key(|&&g| (g.abs_diff(f), g)).unwrap()
        };
        let (h, r, s) = per_bin[src].as_ref().unwrap();
        hs.extend(h.iter().cloned());
        rs.extend(r.iter().cloned());
        if src == f {
            sizes.extend(s.iter().copied());
        } else {
            sizes.extend(std::iter::repeat_n(0, s.len()));
        }
    }
    Ok(InitResult {
        mixing: MixingVectorSet::new(bins, cfg.num_sources, hs)?,
        covariances: SpatialCovarianceSet::new(
            ModelKind::FullrankUnconstrained,
            bins,
            cfg.num_sources,
            rs,
        )?,
        cluster_sizes: sizes,
        fallback_bins,
    })
}

/// Random complex Gaussian mixing vectors scaled to the mixture level, with
/// `R = h h^H + 0.1 |h|^2 / I * Id`.
pub fn init_random(x: &TfTensor, num_sources: usize, seed: u64) -> Result<InitResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chans = x.num_channels();
    let bins = x.num_bins();
    let mut hs = Vec::with_capacity(bins * num_sources);
    let mut rs = Vec::with_capacity(bins * num_sources);
    for f in 0..bins {
        let power = x.bin(f).iter().map(|z| z.norm_sqr()).sum::<f64>() / x.num_frames() as f64;
        let scale = (power / chans as f64).sqrt().max(f64::MIN_POSITIVE);
        for _ in 0..num_sources {
            let h = CVector::from_fn(chans, |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im) * (scale / 2f64.sqrt())
            });
            let load = 0.1 * h.norm_squared() / chans as f64;
            rs.push(linalg::outer(&h, &h) + CMatrix::identity(chans, chans).scale(load));
            hs.push(h);
        }
    }
    Ok(InitResult {
        mixing: MixingVectorSet::new(bins, num_sources, hs)?,
        covariances: SpatialCovarianceSet::new(ModelKind::FullrankUnconstrained, bins, num_sources, rs)?,
        cluster_sizes: vec![0; bins * num_sources],
        fallback_bins: Vec::new(),
    })
}

/// Far-field steering vectors for assumed source azimuths (degrees from
/// broadside of the array, measured in the horizontal plane).
pub fn init_doa(
    x: &TfTensor,
    mics: &[Point],
    sound_velocity: f64,
    azimuths_deg: &[f64],
) -> Result<InitResult> {
    if mics.len() != x.num_channels() {
        return Err(Error::Dimension(format!(
            "{} microphones for {} channels",
            mics.len(),
            x.num_channels()
        )));
    }
    let chans = mics.len();
    let bins = x.num_bins();
    let j_count = azimuths_deg.len();
    let center: Point = std::array::from_fn(|k| mics.iter().map(|m| m[k]).sum::<f64>() / chans as f64);
    let mut hs = Vec::with_capacity(bins * j_count);
    let mut rs = Vec::with_capacity(bins * j_count);
    for f in 0..bins {
        let hz = x.bin_frequency(f);
        let power = x.bin(f).iter().map(|z| z.norm_sqr()).sum::<f64>() / x.num_frames() as f64;
        let scale = (power / chans as f64).sqrt();
        for az in azimuths_deg {
            let t = az.to_radians();
            let dir = [t.sin(), t.cos(), 0.0];
            let h = CVector::from_fn(chans, |i, _| {
                let proj: f64 = (0..3).map(|k| (mics[i][k] - center[k]) * dir[k]).sum();
                Complex64::from_polar(scale, 2.0 * PI * hz * proj / sound_velocity)
            });
            let load = 0.1 * h.norm_squared() / chans as f64;
            rs.push(linalg::outer(&h, &h) + CMatrix::identity(chans, chans).scale(load));
            hs.push(h);
        }
    }
    Ok(InitResult {
        mixing: MixingVectorSet::new(bins, j_count, hs)?,
        covariances: SpatialCovarianceSet::new(ModelKind::FullrankUnconstrained, bins, j_count, rs)?,
        cluster_sizes: vec![0; bins * j_count],
        fallback_bins: Vec::new(),
    })
}

pub fn initialize(
    x: &TfTensor,
    cfg: &InitConfig,
    method: &InitMethod,
    mics: Option<&[Point]>,
    sound_velocity: f64,
) -> Result<InitResult> {
    match method {
        InitMethod::Clustering => init_clustering(x, cfg),
        InitMethod::Random { seed } => init_random(x, cfg.num_sources, *seed),
        InitMethod::Doa { azimuths_deg } => {
            if azimuths_deg.len() != cfg.num_sources {
                return Err(Error::config(
                    "init.azimuths_deg",
                    format!("{} azimuths for {} sources", azimuths_deg.len(), cfg.num_sources),
                ));
            }
            let mics = mics.ok_or_else(|| {
                Error::config("geometry.mics", "DOA initialisation needs microphone positions")
            })?;
            init_doa(x, mics, sound_velocity, azimuths_deg)
        }
    }
}
