//! Acceptance run: one PASS/FAIL line per criterion, followed by indented
//! detail lines. Set `ACCEPTANCE_STRICT=1` to exit nonzero on any FAIL.

use std::collections::HashMap;
use std::time::Instant;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use covsep::audio::MultichannelAudio;
use covsep::em::{em_run, semiblind_variances, EmConfig};
use covsep::eval::{self, bss_eval_images};
use covsep::experiment::{self, ExperimentConfig, ExperimentReport, Protocol};
use covsep::init::{init_clustering, InitConfig};
use covsep::linalg::{self, CMatrix, CVector};
use covsep::permutation::{align_permutations, permute_vectors, ArrayGeometry, PermutationMap};
use covsep::pipeline::{self, PipelineConfig};
use covsep::roomsim::{mix, simulate_rir, RoomSpec, SceneSpec};
use covsep::sources::speech_like_set;
use covsep::spatial::{anechoic_steering, empirical_covariance_ml, AnechoicParams, MixingVectorSet, ModelKind, SpatialCovarianceSet, VarianceMap};
use covsep::stft::{istft, stft, StftConfig, TfTensor};

struct Verdict {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Verdict {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Self { pass, summary: summary.into(), details: Vec::new() }
    }

    fn note(mut self, line: impl Into<String>) -> Self {
        self.details.push(line.into());
        self
    }
}

type Check = fn() -> covsep::Result<Verdict>;

fn main() {
    let checks: [(u32, &str, Check); 9] = [
        (1, "stft round trip", stft_round_trip),
        (2, "em monotonicity", em_monotonicity),
        (3, "wiener conservation", wiener_conservation),
        (4, "parameter recovery", parameter_recovery),
        (5, "permutation recovery", permutation_recovery),
        (6, "t60 trend", t60_trend),
        (7, "semi-blind ordering", semiblind_ordering),
        (8, "bss_eval sanity", bss_eval_sanity),
        (9, "movement robustness", movement_robustness),
    ];
    let mut failures = 0;
    for (id, name, check) in checks {
        let start = Instant::now();
        let verdict = check().unwrap_or_else(|e| Verdict::new(false, format!("error: {e}")));
        let tag = if verdict.pass { "PASS" } else { "FAIL" };
        println!("criterion {id} {tag}: {name}: {} ({:.1} s)", verdict.summary, start.elapsed().as_secs_f64());
        for d in &verdict.details {
            println!("    {d}");
        }
        failures += usize::from(!verdict.pass);
    }
    println!("{} of 9 criteria passed", 9 - failures);
    if failures > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}

struct Synthetic {
    x: TfTensor,
    r: SpatialCovarianceSet,
    v: VarianceMap,
    images: Vec<TfTensor>,
}

/// Stereo data drawn from the full-rank model with random `R_j(f)` of
/// trace 2 and log-normal variances.
fn synthetic(seed: u64, j_count: usize, bins: usize, frames: usize, log_std: f64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = move || -> f64 { StandardNormal.sample(&mut rng) };
    let cfg = StftConfig::new(2 * (bins - 1)).unwrap();
    let mut mats = Vec::with_capacity(bins * j_count);
    for _ in 0..bins * j_count {
        let a = CMatrix::from_fn(2, 2, |_, _| Complex64::new(gauss(), gauss()));
        let m = &a * a.adjoint() + CMatrix::identity(2, 2).scale(0.05);
        mats.push(m.scale(2.0 / linalg::trace_re(&m)));
    }
    let r = SpatialCovarianceSet::new(ModelKind::FullrankUnconstrained, bins, j_count, mats).unwrap();
    let mut v = VarianceMap::zeros(bins, j_count, frames);
    let mut images: Vec<TfTensor> = (0..j_count).map(|_| TfTensor::zeros(bins, frames, 2, &cfg, 16000)).collect();
    for f in 0..bins {
        for (j, img) in images.iter_mut().enumerate() {
            let (vals, vecs) = linalg::hermitian_eigen(r.get(f, j));
            for n in 0..frames {
                let vn = (log_std * gauss()).exp();
                v.set(f, j, n, vn);
                let z = CVector::from_fn(2, |k, _| {
                    Complex64::new(gauss(), gauss()) * (vals[k].max(0.0) * vn / 2.0).sqrt()
                });
                img.frame_mut(f, n).copy_from_slice((&vecs * z).as_slice());
            }
        }
    }
    let mut x = images[0].zeros_like();
    for img in &images {
        x.add_assign(img).unwrap();
    }
    Synthetic { x, r, v, images }
}

fn stft_round_trip() -> covsep::Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fs = 16000;
    let len = 10 * fs as usize;
    let channels: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..len).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let audio = MultichannelAudio::new(channels, fs)?;
    let cfg = StftConfig::new(2048)?;
    let start = Instant::now();
    let tf = stft(&audio, &cfg)?;
    let back = istft(&tf, &cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    let interior = cfg.frame_size..back.num_samples() - cfg.frame_size;
    let (mut err, mut energy) = (0.0, 0.0);
    for i in 0..2 {
        for t in interior.clone() {
            err += (back.channel(i)[t] - audio.channel(i)[t]).powi(2);
            energy += audio.channel(i)[t].powi(2);
        }
    }
    let rel = (err / energy).sqrt();
    Ok(Verdict::new(
        rel < 1e-10 && elapsed < 1.0,
        format!("relative error {rel:.2e}, analysis + synthesis {elapsed:.3} s"),
    ))
}

fn em_monotonicity() -> covsep::Result<Verdict> {
    let cfg = EmConfig { iterations: 20, ..EmConfig::default() };
    let mut worst: HashMap<ModelKind, f64> = HashMap::new();
    let mut violations = 0;
    for seed in 0..20 {
        let data = synthetic(100 + seed, 3, 1025, 155, 1.5);
        let init = init_clustering(&data.x, &InitConfig::new(3))?;
        for kind in [ModelKind::Rank1Convolutive, ModelKind::FullrankUnconstrained] {
            let out = em_run(&data.x, &init, &cfg, kind)?;
            for trace in out.bin_loglik.iter().chain(std::iter::once(&out.loglik)) {
                for w in trace.windows(2) {
                    let drop = (w[0] - w[1]) / w[0].abs().max(f64::MIN_POSITIVE);
                    let e = worst.entry(kind).or_insert(f64::NEG_INFINITY);
                    *e = e.max(drop);
                    if drop > 1e-6 {
                        violations += 1;
                    }
                }
            }
        }
    }
    let mut v = Verdict::new(
        violations == 0,
        format!("{violations} decreasing steps over 20 datasets, 1025 bins, 20 iterations, both variants"),
    );
    for kind in [ModelKind::Rank1Convolutive, ModelKind::FullrankUnconstrained] {
        v = v.note(format!("{kind}: largest relative decrease {:.2e}", worst[&kind]));
    }
    Ok(v)
}

fn wiener_conservation() -> covsep::Result<Verdict> {
    let room = RoomSpec { t60: 0.25, ..RoomSpec::default() };
    let scene = SceneSpec::circular([2.3, 1.8, 1.4], 0.05, 0.5, &[-50.0, 0.0, 50.0]);
    let rirs = simulate_rir(&room, &scene, 16000, None)?;
    let (x, _) = mix(&speech_like_set(5, 3, 3.0, 16000)?, &rirs)?;
    let cfg = PipelineConfig { mics: Some(scene.mics.clone()), ..PipelineConfig::default() };
    let out = pipeline::run_blind(&x, &cfg)?;
    let tf = pipeline::analyze(&x, &cfg)?;
    let mut total = tf.zeros_like();
    for img in &out.separation.images_tf {
        total.add_assign(img)?;
    }
    let worst = total
        .as_slice()
        .iter()
        .zip(tf.as_slice())
        .map(|(a, b)| (a - b).norm() / b.norm().max(1.0))
        .fold(0.0, f64::max);
    Ok(Verdict::new(
        worst <= 1e-10,
        format!("max |sum of images - x| {worst:.2e} over {} bins x {} frames", tf.num_bins(), tf.num_frames()),
    ))
}

fn log_correlation(est: &VarianceMap, truth: &VarianceMap, j: usize) -> f64 {
    let (bins, frames) = (truth.num_bins(), truth.num_frames());
    let (a, b): (Vec<f64>, Vec<f64>) = (0..bins)
        .flat_map(|f| (0..frames).map(move |n| (f, n)))
        .map(|(f, n)| (est.get(f, j, n).ln(), truth.get(f, j, n).ln()))
        .unzip();
    eval::pearson(&a, &b)
}

fn frobenius_error(est: &SpatialCovarianceSet, truth: &SpatialCovarianceSet) -> f64 {
    let mut worst: f64 = 0.0;
    for f in 0..truth.num_bins() {
        for j in 0..truth.num_sources() {
            let e = linalg::frobenius(&(est.get(f, j) - truth.get(f, j))) / linalg::frobenius(truth.get(f, j));
            worst = worst.max(e);
        }
    }
    worst
}

fn mean_frobenius_error(est: &SpatialCovarianceSet, truth: &SpatialCovarianceSet) -> f64 {
    let mut total = 0.0;
    for f in 0..truth.num_bins() {
        for j in 0..truth.num_sources() {
            total += linalg::frobenius(&(est.get(f, j) - truth.get(f, j))) / linalg::frobenius(truth.get(f, j));
        }
    }
    total / (truth.num_bins() * truth.num_sources()) as f64
}

fn parameter_recovery() -> covsep::Result<Verdict> {
    let cfg = EmConfig { iterations: 50, ..EmConfig::default() };

    let data = synthetic(7, 3, 8, 500, 3.0);
    let (vhat, _) = semiblind_variances(&data.x, &data.r, &cfg)?;
    let corr: Vec<f64> = (0..3).map(|j| log_correlation(&vhat, &data.v, j)).collect();
    let min_corr = corr.iter().copied().fold(f64::INFINITY, f64::min);

    let ml = empirical_covariance_ml(&data.images, 20, 1e-10)?;
    let worst = frobenius_error(&ml.covariances, &data.r);
    let mean = mean_frobenius_error(&ml.covariances, &data.r);

    let single = synthetic(8, 1, 8, 500, 3.0);
    let (vs, _) = semiblind_variances(&single.x, &single.r, &cfg)?;
    let trigamma2 = std::f64::consts::PI.powi(2) / 6.0 - 1.0;
    let bound = (9.0 / (9.0 + trigamma2)).sqrt();

    let large = synthetic(9, 3, 4, 20000, 3.0);
    let ml_large = empirical_covariance_ml(&large.images, 20, 1e-10)?;

    let pass = min_corr > 0.95 && worst < 0.02;
    Ok(Verdict::new(
        pass,
        format!(
            "J=3 I=2 N=500: log-variance correlation {} (need > 0.95); R relative Frobenius error max {:.3}, mean {:.3} (need < 0.02)",
            corr.iter().map(|c| format!("{c:.3}")).collect::<Vec<_>>().join("/"),
            worst,
            mean
        ),
    )
    .note(format!(
        "J=1 I=2 N=500: correlation {:.3}, information bound {bound:.3}",
        log_correlation(&vs, &single.v, 0)
    ))
    .note(format!(
        "N=20000: R relative Frobenius error max {:.4}, mean {:.4}",
        frobenius_error(&ml_large.covariances, &large.r),
        mean_frobenius_error(&ml_large.covariances, &large.r)
    )))
}

fn permutation_recovery() -> covsep::Result<Verdict> {
    let mics = vec![[2.475, 1.5, 1.4], [2.525, 1.5, 1.4]];
    let scene = SceneSpec {
        sources: vec![[2.0, 2.5, 1.4], [2.5, 2.5, 1.4], [3.0, 2.5, 1.4]],
        mics: mics.clone(),
    };
    let geom = ArrayGeometry::new(mics, 334.0)?;
    let params = AnechoicParams::from_scene(&scene, 334.0)?;
    let (bins, bin_hz) = (1025, 16000.0 / 2048.0);
    let below: Vec<usize> = (1..bins).filter(|&f| f as f64 * bin_hz < geom.alias_frequency()).collect();
    let (mut good, mut total) = (0, 0);
    for seed in 0..10 {
        let vectors = (0..bins)
            .flat_map(|f| (0..3).map(move |j| (f, j)))
            .map(|(f, j)| anechoic_steering(&params, j, f as f64 * bin_hz))
            .collect();
        let mut h = MixingVectorSet::new(bins, 3, vectors)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut planted = PermutationMap::identity(bins, 3);
        for perm in planted.perms.iter_mut() {
            perm.shuffle(&mut rng);
        }
        permute_vectors(&mut h, &planted);
        let map = align_permutations(&h, bin_hz, &geom);
        // A global relabelling is allowed, so compare against the most
        // common composite permutation.
        let composite = |f: usize| -> Vec<usize> { map.perms[f].iter().map(|&k| planted.perms[f][k]).collect() };
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for &f in &below {
            *counts.entry(composite(f)).or_default() += 1;
        }
        good += counts.values().copied().max().unwrap_or(0);
        total += below.len();
    }
    let frac = good as f64 / total as f64;
    Ok(Verdict::new(
        frac > 0.95,
        format!(
            "{:.1}% of {} bins below {:.0} Hz realigned over 10 planted permutations",
            100.0 * frac,
            below.len(),
            geom.alias_frequency()
        ),
    ))
}

fn sdr(report: &ExperimentReport, condition: &str, model: ModelKind) -> covsep::Result<f64> {
    report
        .summary(condition, model.as_str())
        .and_then(|s| s.sdr)
        .ok_or_else(|| covsep::Error::Precondition(format!("no {model} score for {condition}")))
}

fn t60_trend() -> covsep::Result<Verdict> {
    let mut cfg = ExperimentConfig::new(Protocol::T60Sweep);
    cfg.t60_values = vec![0.05, 0.5];
    cfg.baselines = false;
    let report = experiment::run(&cfg)?;
    let (r1, fr) = (ModelKind::Rank1Convolutive, ModelKind::FullrankUnconstrained);
    let gap_long = sdr(&report, "t60=500ms", fr)? - sdr(&report, "t60=500ms", r1)?;
    let gap_short = sdr(&report, "t60=50ms", r1)? - sdr(&report, "t60=50ms", fr)?;
    let a = gap_long >= 1.0;
    let b = gap_short > 0.0;
    let mut v = Verdict::new(
        a && b,
        format!(
            "(a) {} full-rank minus rank-1 at 500 ms {gap_long:+.2} dB (need >= 1); (b) {} rank-1 minus full-rank at 50 ms {gap_short:+.2} dB (need > 0)",
            if a { "holds" } else { "fails" },
            if b { "holds" } else { "fails" },
        ),
    );
    for t in ["t60=50ms", "t60=500ms"] {
        v = v.note(format!(
            "{t}: rank-1 {:.2} dB, full-rank {:.2} dB over {} seeds",
            sdr(&report, t, r1)?,
            sdr(&report, t, fr)?,
            cfg.seeds.len()
        ));
    }
    Ok(v)
}

fn semiblind_ordering() -> covsep::Result<Verdict> {
    let mut cfg = ExperimentConfig::new(Protocol::Semiblind);
    cfg.baselines = false;
    let report = experiment::run(&cfg)?;
    let label = "t60=250ms";
    let fr = sdr(&report, label, ModelKind::FullrankUnconstrained)?;
    let r1 = sdr(&report, label, ModelKind::Rank1Convolutive)?;
    let an = sdr(&report, label, ModelKind::Rank1Anechoic)?;
    let dd = sdr(&report, label, ModelKind::FullrankDirectDiffuse)?;
    Ok(Verdict::new(
        fr > r1 && r1 > an,
        format!("full-rank {fr:.2} > rank-1 convolutive {r1:.2} > rank-1 anechoic {an:.2} dB"),
    )
    .note(format!("full-rank direct+diffuse {dd:.2} dB")))
}

fn bss_eval_sanity() -> covsep::Result<Verdict> {
    let room = RoomSpec { t60: 0.25, ..RoomSpec::default() };
    let scene = SceneSpec::circular([2.3, 1.8, 1.4], 0.05, 0.5, &[-30.0, 30.0]);
    let rirs = simulate_rir(&room, &scene, 16000, None)?;
    let (_, images) = mix(&speech_like_set(4, 2, 2.0, 16000)?, &rirs)?;
    let exact = bss_eval_images(&images, &images)?;
    let capped = [&exact.sdr, &exact.isr, &exact.sir, &exact.sar]
        .iter()
        .all(|s| s.iter().all(|&x| x == eval::DB_CAP));

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let noisy: Vec<MultichannelAudio> = images
        .iter()
        .map(|img| {
            let chans = img
                .channels()
                .iter()
                .map(|c| {
                    let power = c.iter().map(|s| s * s).sum::<f64>() / c.len() as f64;
                    let scale = (power * 0.01).sqrt();
                    c.iter()
                        .map(|s| s + scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                        .collect()
                })
                .collect();
            MultichannelAudio::new(chans, img.sample_rate()).unwrap()
        })
        .collect();
    let scores = bss_eval_images(&noisy, &images)?;
    let within = scores.sdr.iter().all(|s| (s - 20.0).abs() <= 1.0);
    Ok(Verdict::new(
        capped && within,
        format!(
            "exact estimate {} at the {} dB cap; -20 dB noise SDR {}",
            if capped { "all" } else { "not all" },
            eval::DB_CAP,
            scores.sdr.iter().map(|s| format!("{s:.2}")).collect::<Vec<_>>().join("/")
        ),
    ))
}

fn movement_robustness() -> covsep::Result<Verdict> {
    let mut cfg = ExperimentConfig::new(Protocol::Movement);
    cfg.movement_deg = vec![5.0];
    let report = experiment::run(&cfg)?;
    let drop = |m: ModelKind| -> covsep::Result<(f64, f64)> {
        let at0 = sdr(&report, "move=0deg", m)?;
        Ok((at0, at0 - sdr(&report, "move=5deg", m)?))
    };
    let (fr0, fr) = drop(ModelKind::FullrankUnconstrained)?;
    let (r10, r1) = drop(ModelKind::Rank1Convolutive)?;
    Ok(Verdict::new(
        fr < r1,
        format!("SDR drop at 5 degrees: full-rank {fr:.2} dB, rank-1 {r1:.2} dB over {} seeds", cfg.seeds.len()),
    )
    .note(format!("at the learned position: full-rank {fr0:.2} dB, rank-1 {r10:.2} dB")))
}
