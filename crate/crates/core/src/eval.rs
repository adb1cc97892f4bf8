//! Separation quality in decibels: SDR, ISR, SIR and SAR of estimated
//! source images against the true images.
//!
//! Each estimate is split into the true image, a spatial distortion term
//! (what time-invariant FIR filtering of the true image can explain), an
//! interference term (what filtering of the other images adds) and the
//! remaining artifacts. Projections use 512-tap filters on every channel of
//! the images, over zero-padded signals so the Gram matrices are exactly
//! block Toeplitz.

use std::sync::Arc;

use faer::prelude::Solve;
use faer::{Mat, Side};
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::MultichannelAudio;
use crate::error::{Error, Result};

pub const FILTER_LEN: usize = 512;
pub const DB_CAP: f64 = 200.0;
const REGULARIZER: f64 = 1e-9;
const REFINEMENT_STEPS: usize = 3;

/// Scores per reference source, with `perm[k]` the estimate matched to
/// reference `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    pub sdr: Vec<f64>,
    pub isr: Vec<f64>,
    pub sir: Vec<f64>,
    pub sar: Vec<f64>,
    pub perm: Vec<usize>,
}

impl EvalScores {
    pub fn num_sources(&self) -> usize {
        self.sdr.len()
    }

    pub fn mean_sdr(&self) -> f64 {
        mean(&self.sdr)
    }

    pub fn mean_isr(&self) -> f64 {
        mean(&self.isr)
    }

    pub fn mean_sir(&self) -> f64 {
        mean(&self.sir)
    }

    pub fn mean_sar(&self) -> f64 {
        mean(&self.sar)
    }

    /// One record per reference source.
    pub fn records(&self) -> Vec<SourceScores> {
        (0..self.num_sources())
            .map(|k| SourceScores {
                source: k,
                estimate: self.perm[k],
                sdr: self.sdr[k],
                sir: self.sir[k],
                sar: self.sar[k],
                isr: self.isr[k],
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.records()).map_err(|e| Error::Precondition(e.to_string()))
    }

    /// `source,sdr,isr,sir,sar` with one row per reference.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("source,estimate,sdr,isr,sir,sar\n");
        for k in 0..self.num_sources() {
            s.push_str(&format!(
                "{k},{},{:.4},{:.4},{:.4},{:.4}\n",
                self.perm[k], self.sdr[k], self.isr[k], self.sir[k], self.sar[k]
            ));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceScores {
    pub source: usize,
    pub estimate: usize,
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
    pub isr: f64,
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// `10 log10(num / den)`, capped at [`DB_CAP`].
pub fn ratio_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 || num / den >= 10f64.powf(DB_CAP / 10.0) {
        return DB_CAP;
    }
    10.0 * (num / den).log10()
}

struct Spectra {
    nfft: usize,
    fwd: Arc<dyn RealToComplex<f64>>,
    inv: Arc<dyn ComplexToReal<f64>>,
}

impl Spectra {
    fn new(len: usize) -> Self {
        let nfft = len.next_power_of_two();
        let mut planner = RealFftPlanner::<f64>::new();
        Self {
            nfft,
            fwd: planner.plan_fft_forward(nfft),
            inv: planner.plan_fft_inverse(nfft),
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![0.0; self.nfft];
        buf[..x.len()].copy_from_slice(x);
        let mut out = self.fwd.make_output_vec();
        self.fwd.process(&mut buf, &mut out).expect("fft sizes");
        out
    }

    fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        spec[0].im = 0.0;
        let last = spec.len() - 1;
        spec[last].im = 0.0;
        let mut out = vec![0.0; self.nfft];
        self.inv.process(&mut spec, &mut out).expect("fft sizes");
        let s = 1.0 / self.nfft as f64;
        out.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `r(k) = sum_t a(t) b(t + k)` at circular index `k mod nfft`.
    fn xcorr(&self, a: &[Complex64], b: &[Complex64]) -> Vec<f64> {
        self.inverse(a.iter().zip(b).map(|(x, y)| x.conj() * y).collect())
    }
}

/// Least-squares projection onto the span of `flen` delayed copies of a
/// set of basis signals.
struct Projector {
    basis: Vec<usize>,
    llt: faer::linalg::solvers::Llt<f64>,
    gram: Mat<f64>,
}

impl Projector {
    /// `xc[a][b][lag + flen - 1]` holds the correlation at `lag`.
    fn new(basis: Vec<usize>, xc: &[Vec<Vec<f64>>], flen: usize) -> Result<Self> {
        let dim = basis.len() * flen;
        let mut gram = Mat::<f64>::zeros(dim, dim);
        for (ia, &a) in basis.iter().enumerate() {
            for (ib, &b) in basis.iter().enumerate() {
                let r = &xc[a][b];
                for p in 0..flen {
                    for q in 0..flen {
                        gram[(ia * flen + p, ib * flen + q)] = r[p + flen - 1 - q];
                    }
                }
            }
        }
        let mut loaded = gram.clone();
        for d in 0..dim {
            loaded[(d, d)] += REGULARIZER * gram[(d, d)].max(f64::MIN_POSITIVE);
        }
        let llt = loaded
            .llt(Side::Lower)
            .map_err(|_| Error::Precondition("reference Gram matrix is not positive definite".into()))?;
        Ok(Self { basis, llt, gram })
    }

    /// Filter coefficients for each right-hand side column, refined
    /// against the unloaded Gram matrix.
    fn solve(&self, rhs: &Mat<f64>) -> Mat<f64> {
        let mut c = self.llt.solve(rhs);
        for _ in 0..REFINEMENT_STEPS {
            let resid = rhs - &self.gram * &c;
            c += self.llt.solve(&resid);
        }
        c
    }
}

struct Problem {
    spectra: Spectra,
    /// Spectra of every reference channel, index `k * I + i`.
    basis_spec: Vec<Vec<Complex64>>,
    /// Pairwise correlations between basis signals at lags
    /// `-(flen - 1)..flen`.
    xc: Vec<Vec<Vec<f64>>>,
    refs: Vec<Vec<f64>>,
    flen: usize,
    out_len: usize,
    chans: usize,
}

impl Problem {
    fn new(references: &[MultichannelAudio], flen: usize) -> Self {
        let chans = references[0].num_channels();
        let samples = references[0].num_samples();
        let out_len = samples + flen - 1;
        let spectra = Spectra::new(out_len + flen);
        let refs: Vec<Vec<f64>> = references
            .iter()
            .flat_map(|r| r.channels().iter().cloned())
            .collect();
        let basis_spec: Vec<Vec<Complex64>> = refs.iter().map(|s| spectra.forward(s)).collect();
        let xc = basis_spec
            .iter()
            .map(|a| {
                basis_spec
                    .iter()
                    .map(|b| {
                        let r = spectra.xcorr(a, b);
                        let n = r.len();
                        (1..flen).rev().map(|k| r[n - k]).chain(r[..flen].iter().copied()).collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            spectra,
            basis_spec,
            xc,
            refs,
            flen,
            out_len,
            chans,
        }
    }

    fn projector(&self, sources: &[usize]) -> Result<Projector> {
        let basis = sources
            .iter()
            .flat_map(|&k| (0..self.chans).map(move |i| k * self.chans + i))
            .collect();
        Projector::new(basis, &self.xc, self.flen)
    }

    /// First `flen` lags of the correlation of every basis signal with
    /// every estimate channel, `out[a][col]`.
    fn correlations(&self, est_spec: &[Vec<Complex64>]) -> Vec<Vec<Vec<f64>>> {
        self.basis_spec
            .iter()
            .map(|b| {
                est_spec
                    .iter()
                    .map(|e| {
                        let mut r = self.spectra.xcorr(b, e);
                        r.truncate(self.flen);
                        r
                    })
                    .collect()
            })
            .collect()
    }

    /// Projections of every estimate channel onto the span of `proj`.
    fn project(&self, proj: &Projector, corr: &[Vec<Vec<f64>>], channels: usize) -> Vec<Vec<f64>> {
        let flen = self.flen;
        let dim = proj.basis.len() * flen;
        let mut rhs = Mat::<f64>::zeros(dim, channels);
        for col in 0..channels {
            for (ia, &a) in proj.basis.iter().enumerate() {
                for p in 0..flen {
                    rhs[(ia * flen + p, col)] = corr[a][col][p];
                }
            }
        }
        let coef = proj.solve(&rhs);
        (0..channels)
            .map(|col| {
                let mut acc = vec![Complex64::new(0.0, 0.0); self.basis_spec[0].len()];
                for (ia, &a) in proj.basis.iter().enumerate() {
                    let filt: Vec<f64> = (0..flen).map(|p| coef[(ia * flen + p, col)]).collect();
                    let fs = self.spectra.forward(&filt);
                    for ((dst, s), h) in acc.iter_mut().zip(&self.basis_spec[a]).zip(&fs) {
                        *dst += s * h;
                    }
                }
                let mut out = self.spectra.inverse(acc);
                out.truncate(self.out_len);
                out
            })
            .collect()
    }
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn check_inputs(estimates: &[MultichannelAudio], references: &[MultichannelAudio]) -> Result<()> {
    if estimates.len() != references.len() || references.is_empty() {
        return Err(Error::Dimension(format!(
            "{} estimates for {} references",
            estimates.len(),
            references.len()
        )));
    }
    let shape = (references[0].num_channels(), references[0].num_samples());
    for (k, a) in references.iter().chain(estimates).enumerate() {
        if (a.num_channels(), a.num_samples()) != shape {
            return Err(Error::Dimension(format!(
                "signal {k} is {}x{}, expected {}x{}",
                a.num_channels(),
                a.num_samples(),
                shape.0,
                shape.1
            )));
        }
    }
    if let Some(k) = references.iter().position(|r| r.energy() == 0.0) {
        return Err(Error::ZeroReference(k));
    }
    Ok(())
}

/// Four-way decomposition of estimate `est` against reference `target`,
/// channels concatenated.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub s_true: Vec<f64>,
    pub e_spat: Vec<f64>,
    pub e_interf: Vec<f64>,
    pub e_artif: Vec<f64>,
}

impl Decomposition {
    /// `(sdr, isr, sir, sar)`.
    pub fn ratios(&self) -> (f64, f64, f64, f64) {
        let target = energy(&self.s_true);
        let sum_with = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + y).collect() };
        let distortion: Vec<f64> = sum_with(&sum_with(&self.e_spat, &self.e_interf), &self.e_artif);
        let spat_target = sum_with(&self.s_true, &self.e_spat);
        let no_artif = sum_with(&spat_target, &self.e_interf);
        (
            ratio_db(target, energy(&distortion)),
            ratio_db(target, energy(&self.e_spat)),
            ratio_db(energy(&spat_target), energy(&self.e_interf)),
            ratio_db(energy(&no_artif), energy(&self.e_artif)),
        )
    }
}

/// All `(estimate, reference)` decompositions; `out[j][k]`.
pub fn decompose_all(
    estimates: &[MultichannelAudio],
    references: &[MultichannelAudio],
    flen: usize,
) -> Result<Vec<Vec<Decomposition>>> {
    check_inputs(estimates, references)?;
    if flen == 0 {
        return Err(Error::Precondition("filter length must be positive".into()));
    }
    let problem = Problem::new(references, flen);
    let j_count = references.len();
    let all = problem.projector(&(0..j_count).collect::<Vec<_>>())?;
    let singles: Vec<Projector> = (0..j_count)
        .map(|k| problem.projector(&[k]))
        .collect::<Result<_>>()?;
    let chans = problem.chans;
    let mut out = Vec::with_capacity(j_count);
    for est in estimates {
        let padded: Vec<Vec<f64>> = est
            .channels()
            .iter()
            .map(|c| {
                let mut v = c.clone();
                v.resize(problem.out_len, 0.0);
                v
            })
            .collect();
        let spec: Vec<Vec<Complex64>> = padded.iter().map(|c| problem.spectra.forward(c)).collect();
        let corr = problem.correlations(&spec);
        let p_all = problem.project(&all, &corr, spec.len());
        let mut row = Vec::with_capacity(j_count);
        for (k, single) in singles.iter().enumerate() {
            let p_k = problem.project(single, &corr, spec.len());
            let mut d = Decomposition {
                s_true: Vec::with_capacity(chans * problem.out_len),
                e_spat: Vec::with_capacity(chans * problem.out_len),
                e_interf: Vec::with_capacity(chans * problem.out_len),
                e_artif: Vec::with_capacity(chans * problem.out_len),
            };
            for i in 0..chans {
                let r = &problem.refs[k * chans + i];
                for t in 0..problem.out_len {
                    let s_true = if t < r.len() { r[t] } else { 0.0 };
                    d.s_true.push(s_true);
                    d.e_spat.push(p_k[i][t] - s_true);
                    d.e_interf.push(p_all[i][t] - p_k[i][t]);
                    d.e_artif.push(padded[i][t] - p_all[i][t]);
                }
            }
            row.push(d);
        }
        out.push(row);
    }
    Ok(out)
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

fn scores_for(ratios: &[Vec<(f64, f64, f64, f64)>], perm: Vec<usize>) -> EvalScores {
    let pick = |k: usize| ratios[perm[k]][k];
    let n = perm.len();
    EvalScores {
        sdr: (0..n).map(|k| pick(k).0).collect(),
        isr: (0..n).map(|k| pick(k).1).collect(),
        sir: (0..n).map(|k| pick(k).2).collect(),
        sar: (0..n).map(|k| pick(k).3).collect(),
        perm,
    }
}

/// Scores with the estimate-to-reference matching that maximises mean SDR.
pub fn bss_eval_images(estimates: &[MultichannelAudio], references: &[MultichannelAudio]) -> Result<EvalScores> {
    bss_eval_images_with(estimates, references, FILTER_LEN)
}

pub fn bss_eval_images_with(
    estimates: &[MultichannelAudio],
    references: &[MultichannelAudio],
    flen: usize,
) -> Result<EvalScores> {
    let ratios: Vec<Vec<_>> = decompose_all(estimates, references, flen)?
        .iter()
        .map(|row| row.iter().map(Decomposition::ratios).collect())
        .collect();
    let best = permutations(references.len())
        .into_iter()
        .max_by(|a, b| {
            let sa: f64 = a.iter().enumerate().map(|(k, &j)| ratios[j][k].0).sum();
            let sb: f64 = b.iter().enumerate().map(|(k, &j)| ratios[j][k].0).sum();
            sa.total_cmp(&sb).then_with(|| b.cmp(a))
        })
        .expect("at least one permutation");
    Ok(scores_for(&ratios, best))
}

/// Scores with estimate `k` matched to reference `k`.
pub fn bss_eval_images_fixed(
    estimates: &[MultichannelAudio],
    references: &[MultichannelAudio],
    flen: usize,
) -> Result<EvalScores> {
    let ratios: Vec<Vec<_>> = decompose_all(estimates, references, flen)?
        .iter()
        .map(|row| row.iter().map(Decomposition::ratios).collect())
        .collect();
    Ok(scores_for(&ratios, (0..references.len()).collect()))
}
