//! Alignment of source order across frequency bins.
//!
//! Each source's spatial parameters at a bin are summarised by a unit
//! direction vector, turned into inter-channel delays, and matched to J
//! delay centroids learned on the bins below the spatial aliasing limit.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::init::normalize_tf;
use crate::linalg::{self, CMatrix, CVector};
use crate::roomsim::{distance, Point};
use crate::spatial::{MixingVectorSet, SpatialCovarianceSet, VarianceMap};

const MAX_ROUNDS: usize = 50;
const EXHAUSTIVE_LIMIT: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    pub mics: Vec<Point>,
    pub sound_velocity: f64,
}

impl ArrayGeometry {
    pub fn new(mics: Vec<Point>, sound_velocity: f64) -> Result<Self> {
        let g = Self { mics, sound_velocity };
        if g.mics.len() < 2 || !(g.spacing() > 0.0) {
            return Err(Error::config("geometry.mics", "need at least two distinct microphones"));
        }
        if !(sound_velocity > 0.0) {
            return Err(Error::config("geometry.sound_velocity", "must be positive"));
        }
        Ok(g)
    }

    /// Largest distance between the reference microphone and another one.
    pub fn spacing(&self) -> f64 {
        self.mics[1..]
            .iter()
            .map(|m| distance(&self.mics[0], m))
            .fold(0.0, f64::max)
    }

    pub fn alias_frequency(&self) -> f64 {
        self.sound_velocity / (2.0 * self.spacing())
    }
}

/// `perms[f][k]` is the estimated source placed at output slot `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationMap {
    pub perms: Vec<Vec<usize>>,
    /// Whether the centroid iteration settled within the round budget.
    pub converged: bool,
}

impl PermutationMap {
    pub fn identity(num_bins: usize, num_sources: usize) -> Self {
        Self {
            perms: vec![(0..num_sources).collect(); num_bins],
            converged: true,
        }
    }

    pub fn inverse(&self) -> Self {
        let perms = self
            .perms
            .iter()
            .map(|p| {
                let mut inv = vec![0; p.len()];
                for (k, &src) in p.iter().enumerate() {
                    inv[src] = k;
                }
                inv
            })
            .collect();
        Self {
            perms,
            converged: self.converged,
        }
    }

    pub fn is_bijection(&self) -> bool {
        self.perms.iter().all(|p| {
            let mut seen = vec![false; p.len()];
            p.iter().all(|&k| k < p.len() && !std::mem::replace(&mut seen[k], true))
        })
    }
}

/// Principal eigenvector of `r`, normalised to unit norm with a real
/// nonnegative first entry. The flag is set when the top eigenvalue is
/// not separated from the next one.
pub fn principal_direction(r: &CMatrix) -> (CVector, bool) {
    let (vals, vecs) = linalg::hermitian_eigen(r);
    let k = vals.len() - 1;
    let top = vals[k];
    let ambiguous = k > 0 && (top - vals[k - 1]).abs() <= 1e-12 * top.abs().max(f64::MIN_POSITIVE);
    if ambiguous || !(top > 0.0) {
        let mut e = CVector::zeros(r.nrows());
        e[0] = Complex64::new(1.0, 0.0);
        return (e, true);
    }
    let w = vecs.column(k).into_owned();
    (normalize_tf(w.as_slice()).unwrap_or(w), false)
}

/// `arg(w_i / w_1) / (2 pi f)` for `i = 2..I`.
pub fn delay_feature(w: &CVector, f_hz: f64) -> Vec<f64> {
    let w0 = w[0];
    (1..w.len())
        .map(|i| {
            let ratio = if w0.norm() > 0.0 { w[i] / w0 } else { w[i] };
            ratio.arg() / (2.0 * PI * f_hz)
        })
        .collect()
}

/// Squared delay distance with phase wrapping at frequency `f_hz`.
fn delay_distance2(a: &[f64], b: &[f64], f_hz: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let phase = 2.0 * PI * f_hz * (x - y);
            let wrapped = phase - 2.0 * PI * (phase / (2.0 * PI)).round();
            let d = wrapped / (2.0 * PI * f_hz);
            d * d
        })
        .sum()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out.sort();
    out
}

/// Best assignment of the sources of one bin to the centroid slots.
fn assign(features: &[Vec<f64>], centroids: &[Vec<f64>], f_hz: f64, all: &[Vec<usize>]) -> Vec<usize> {
    let j_count = centroids.len();
    let cost: Vec<f64> = (0..j_count * j_count)
        .map(|k| delay_distance2(&features[k % j_count], &centroids[k / j_count], f_hz))
        .collect();
    if j_count <= EXHAUSTIVE_LIMIT {
        let mut best = (f64::INFINITY, 0);
        for (idx, p) in all.iter().enumerate() {
            let c: f64 = p.iter().enumerate().map(|(slot, &src)| cost[slot * j_count + src]).sum();
            if c < best.0 {
                best = (c, idx);
            }
        }
        return all[best.1].clone();
    }
    // Greedy: repeatedly take the cheapest remaining (slot, source) pair.
    let mut perm = vec![usize::MAX; j_count];
    let mut used = vec![false; j_count];
    for _ in 0..j_count {
        let mut best = (f64::INFINITY, 0, 0);
        for slot in (0..j_count).filter(|&s| perm[s] == usize::MAX) {
            for src in (0..j_count).filter(|&s| !used[s]) {
                if cost[slot * j_count + src] < best.0 {
                    best = (cost[slot * j_count + src], slot, src);
                }
            }
        }
        perm[best.1] = best.2;
        used[best.2] = true;
    }
    perm
}

/// Aligns per-bin direction vectors (`vectors.get(f, j)`, any scale) for
/// bins spaced `bin_hz` apart.
pub fn align_permutations(vectors: &MixingVectorSet, bin_hz: f64, geom: &ArrayGeometry) -> PermutationMap {
    let (bins, j_count) = (vectors.num_bins(), vectors.num_sources());
    if j_count <= 1 || bins == 0 {
        return PermutationMap::identity(bins, j_count);
    }
    let features: Vec<Vec<Vec<f64>>> = (0..bins)
        .map(|f| {
            (0..j_count)
                .map(|j| {
                    if f == 0 {
                        return Vec::new();
                    }
                    let w = normalize_tf(vectors.get(f, j).as_slice())
                        .unwrap_or_else(|| vectors.get(f, j).clone());
                    delay_feature(&w, f as f64 * bin_hz)
                })
                .collect()
        })
        .collect();
    let f_alias = geom.alias_frequency();
    let training: Vec<usize> = (1..bins).filter(|&f| (f as f64) * bin_hz < f_alias).collect();
    if training.is_empty() {
        return PermutationMap::identity(bins, j_count);
    }
    let dims = vectors.num_channels().saturating_sub(1).max(1);

    // Quantile start on the first delay coordinate.
    let mut pooled: Vec<&Vec<f64>> = training.iter().flat_map(|&f| features[f].iter()).collect();
    pooled.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut centroids: Vec<Vec<f64>> = (0..j_count)
        .map(|k| pooled[((k as f64 + 0.5) / j_count as f64 * pooled.len() as f64) as usize].clone())
        .collect();

    let all = if j_count <= EXHAUSTIVE_LIMIT {
        permutations(j_count)
    } else {
        Vec::new()
    };
    let mut perms: Vec<Vec<usize>> = vec![(0..j_count).collect(); bins];
    let mut converged = false;
    for round in 0..MAX_ROUNDS {
        let mut changed = round == 0;
        for &f in &training {
            let p = assign(&features[f], &centroids, f as f64 * bin_hz, &all);
            if p != perms[f] {
                perms[f] = p;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dims]; j_count];
        for &f in &training {
            for (slot, &src) in perms[f].iter().enumerate() {
                for (s, v) in sums[slot].iter_mut().zip(&features[f][src]) {
                    *s += v;
                }
            }
        }
        centroids = sums
            .into_iter()
            .map(|s| s.into_iter().map(|v| v / training.len() as f64).collect())
            .collect();
        if !changed {
            converged = true;
            break;
        }
    }
    for f in 1..bins {
        if (f as f64) * bin_hz >= f_alias {
            perms[f] = assign(&features[f], &centroids, f as f64 * bin_hz, &all);
        }
    }
    if bins > 1 {
        perms[0] = perms[1].clone();
    }
    PermutationMap { perms, converged }
}

/// Principal directions of every `R_j(f)`, as vectors for [`align_permutations`].
pub fn covariance_directions(r: &SpatialCovarianceSet) -> MixingVectorSet {
    let vectors = (0..r.num_bins())
        .flat_map(|f| (0..r.num_sources()).map(move |j| (f, j)))
        .map(|(f, j)| principal_direction(r.get(f, j)).0)
        .collect();
    MixingVectorSet::new(r.num_bins(), r.num_sources(), vectors).expect("sizes match")
}

pub fn permute_variances(v: &mut VarianceMap, perms: &PermutationMap) {
    let n = v.num_frames();
    for (f, p) in perms.perms.iter().enumerate() {
        let old = v.bin(f).to_vec();
        let bin = v.bin_mut(f);
        for (slot, &src) in p.iter().enumerate() {
            bin[slot * n..(slot + 1) * n].copy_from_slice(&old[src * n..(src + 1) * n]);
        }
    }
}

pub fn permute_covariances(r: &mut SpatialCovarianceSet, perms: &PermutationMap) {
    for (f, p) in perms.perms.iter().enumerate() {
        let old = r.bin(f).to_vec();
        for (slot, &src) in p.iter().enumerate() {
            r.bin_mut(f)[slot] = old[src].clone();
        }
    }
}

pub fn permute_vectors(h: &mut MixingVectorSet, perms: &PermutationMap) {
    for (f, p) in perms.perms.iter().enumerate() {
        let old = h.bin(f).to_vec();
        for (slot, &src) in p.iter().enumerate() {
            h.bin_mut(f)[slot] = old[src].clone();
        }
    }
}

/// Reorders variances and spatial covariances jointly.
pub fn apply_permutation(v: &mut VarianceMap, r: &mut SpatialCovarianceSet, perms: &PermutationMap) -> Result<()> {
    if perms.perms.len() != v.num_bins()
        || r.num_bins() != v.num_bins()
        || perms.perms.iter().any(|p| p.len() != v.num_sources())
        || !perms.is_bijection()
    {
        return Err(Error::Dimension("permutation map does not match parameters".into()));
    }
    permute_variances(v, perms);
    permute_covariances(r, perms);
    Ok(())
}

/// Per-bin `arg(w_2) / (2 pi f) * c / d` for every source, one line per
/// bin: `bin,freq_hz,src0,src1,...`. The quantity is dimensionless and
/// monotone in direction of arrival below the aliasing limit.
pub fn diagnostic_dump(vectors: &MixingVectorSet, bin_hz: f64, geom: &ArrayGeometry) -> String {
    let mut out = String::from("bin,freq_hz");
    for j in 0..vectors.num_sources() {
        let _ = write!(out, ",src{j}");
    }
    out.push('\n');
    let scale = geom.sound_velocity / geom.spacing();
    for f in 1..vectors.num_bins() {
        let hz = f as f64 * bin_hz;
        let _ = write!(out, "{f},{hz}");
        for j in 0..vectors.num_sources() {
            let w = normalize_tf(vectors.get(f, j).as_slice()).unwrap_or_else(|| vectors.get(f, j).clone());
            let _ = write!(out, ",{:.6}", delay_feature(&w, hz)[0] * scale);
        }
        out.push('\n');
    }
    out
}
