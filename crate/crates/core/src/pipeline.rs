//! End-to-end separation: clustering initialisation, per-bin EM,
//! permutation alignment and Wiener reconstruction, plus the semi-blind
//! variant driven by oracle spatial parameters.

use std::time::Instant;

use num_complex::Complex64;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::MultichannelAudio;
use crate::em::{self, EmConfig, EmOutput};
use crate::error::{Error, Result};
use crate::init::{self, InitConfig, InitMethod};
use crate::linalg::CVector;
use crate::permutation::{self, ArrayGeometry, PermutationMap};
use crate::roomsim::{self, default_sound_velocity, ImpulseResponseSet, Point, RoomSpec, SceneSpec};
use crate::separate::{self, SeparationOutput};
use crate::spatial::{self, AnechoicParams, MixingVectorSet, ModelKind, SpatialCovarianceSet, VarianceMap};
use crate::stft::{self, StftConfig, TfTensor};
use crate::tensorfile::{Tensor, TensorBundle};

/// Iterations of the alternating ML estimate of `R_j` from true images.
pub const ORACLE_ML_ITERATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub model: ModelKind,
    pub sample_rate: u32,
    pub num_channels: usize,
    pub sound_velocity: f64,
    pub stft: StftConfig,
    pub init: InitConfig,
    pub init_method: InitMethod,
    pub em: EmConfig,
    /// Iterations of the variance-only EM when the spatial parameters are
    /// given.
    pub semiblind_iterations: usize,
    /// Microphone positions; needed for permutation alignment.
    pub mics: Option<Vec<Point>>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::FullrankUnconstrained,
            sample_rate: 16000,
            num_channels: 2,
            sound_velocity: default_sound_velocity(),
            stft: StftConfig::default(),
            init: InitConfig::new(3),
            init_method: InitMethod::Clustering,
            em: EmConfig::default(),
            semiblind_iterations: 50,
            mics: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate", "must be positive"));
        }
        if self.num_channels == 0 {
            return Err(Error::config("num_channels", "must be at least 1"));
        }
        if !(self.sound_velocity.is_finite() && self.sound_velocity > 0.0) {
            return Err(Error::config("sound_velocity", "must be positive"));
        }
        self.stft.validate()?;
        self.init.validate()?;
        self.em.validate()?;
        if let Some(mics) = &self.mics {
            if mics.len() != self.num_channels {
                return Err(Error::config(
                    "mics",
                    format!("{} positions for {} channels", mics.len(), self.num_channels),
                ));
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<Option<ArrayGeometry>> {
        self.mics
            .as_ref()
            .map(|m| ArrayGeometry::new(m.clone(), self.sound_velocity))
            .transpose()
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.stft.frame_size as f64
    }

    pub fn semiblind_em(&self) -> EmConfig {
        EmConfig {
            iterations: self.semiblind_iterations,
            ..self.em
        }
    }
}

/// STFT of a mixture after checking it against the configuration. Frames
/// are padded so that synthesis covers every sample.
pub fn analyze(mixture: &MultichannelAudio, cfg: &PipelineConfig) -> Result<TfTensor> {
    if mixture.sample_rate() != cfg.sample_rate {
        return Err(Error::Dimension(format!(
            "mixture sampled at {} Hz, configuration expects {} Hz",
            mixture.sample_rate(),
            cfg.sample_rate
        )));
    }
    if mixture.num_channels() != cfg.num_channels {
        return Err(Error::Dimension(format!(
            "mixture has {} channels, configuration expects {}",
            mixture.num_channels(),
            cfg.num_channels
        )));
    }
    stft::stft_padded(mixture, &cfg.stft)
}

#[derive(Debug, Clone)]
pub struct BlindResult {
    pub kind: ModelKind,
    pub em: EmOutput,
    /// Present when microphone positions were configured.
    pub perms: Option<PermutationMap>,
    pub fallback_bins: Vec<usize>,
    pub separation: SeparationOutput,
    pub warnings: Vec<String>,
    pub runtime_s: f64,
}

impl BlindResult {
    /// EM parameters after alignment, plus the permutation table.
    pub fn checkpoint(&self) -> Result<TensorBundle> {
        let mut b = self.em.to_bundle()?.with_meta("model", self.kind.as_str());
        if let Some(p) = &self.perms {
            let j = p.perms.first().map_or(0, Vec::len);
            let flat = p.perms.iter().flatten().map(|&k| k as f64).collect();
            b.push(Tensor::real("perms", vec![p.perms.len(), j], flat)?);
        }
        if !self.fallback_bins.is_empty() {
            let flat = self.fallback_bins.iter().map(|&f| f as f64).collect();
            b.push(Tensor::real("fallback_bins", vec![self.fallback_bins.len()], flat)?);
        }
        Ok(b)
    }
}

/// Blind separation of a mixture with the configured model.
pub fn run_blind(mixture: &MultichannelAudio, cfg: &PipelineConfig) -> Result<BlindResult> {
    cfg.validate()?;
    if !matches!(cfg.model, ModelKind::Rank1Convolutive | ModelKind::FullrankUnconstrained) {
        return Err(Error::config(
            "model",
            format!("{} parameters cannot be estimated blindly", cfg.model),
        ));
    }
    let start = Instant::now();
    let x = analyze(mixture, cfg)?;
    let geom = cfg.geometry()?;
    let init = init::initialize(&x, &cfg.init, &cfg.init_method, cfg.mics.as_deref(), cfg.sound_velocity)?;
    let mut warnings: Vec<String> = init
        .fallback_bins
        .iter()
        .map(|f| format!("bin {f}: clustering failed, copied the nearest bin"))
        .collect();
    let mut out = em::em_run(&x, &init, &cfg.em, cfg.model)?;
    let perms = match &geom {
        Some(g) => {
            let directions = match &out.mixing {
                Some(h) => h.clone(),
                None => permutation::covariance_directions(&out.covariances),
            };
            let p = permutation::align_permutations(&directions, cfg.bin_hz(), g);
            if !p.converged {
                warnings.push("permutation alignment hit its round limit".into());
            }
            permutation::apply_permutation(&mut out.variances, &mut out.covariances, &p)?;
            if let Some(h) = out.mixing.as_mut() {
                permutation::permute_vectors(h, &p);
            }
            Some(p)
        }
        None => {
            if init.num_sources() > 1 {
                warnings.push("no microphone positions given, permutations left unaligned".into());
            }
            None
        }
    };
    let separation = separate::wiener_separate(&x, &out.variances, &out.covariances, cfg.em.ridge)?;
    Ok(BlindResult {
        kind: cfg.model,
        em: out,
        perms,
        fallback_bins: init.fallback_bins,
        separation,
        warnings,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Ground truth available for a simulated mixture.
#[derive(Debug, Clone, Copy)]
pub struct Oracle<'a> {
    pub room: &'a RoomSpec,
    pub scene: &'a SceneSpec,
    pub rirs: &'a ImpulseResponseSet,
    pub images: &'a [MultichannelAudio],
}

/// Fourier transform of every mixing filter at the STFT bin frequencies
/// `f * fs / L`, whatever the filter length.
pub fn filter_responses(rirs: &ImpulseResponseSet, frame_size: usize) -> Result<MixingVectorSet> {
    let bins = frame_size / 2 + 1;
    let len = rirs.taps.iter().flatten().map(Vec::len).max().unwrap_or(0).max(1);
    let size = len.div_ceil(frame_size) * frame_size;
    let step = size / frame_size;
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(size);
    let mut input = fft.make_input_vec();
    let mut spectrum = fft.make_output_vec();
    let (j_count, chans) = (rirs.num_sources(), rirs.num_mics());
    // responses[j][i][f]
    let mut responses = vec![vec![Vec::new(); chans]; j_count];
    for (j, filters) in rirs.taps.iter().enumerate() {
        for (i, h) in filters.iter().enumerate() {
            input.iter_mut().for_each(|v| *v = 0.0);
            input[..h.len()].copy_from_slice(h);
            fft.process(&mut input, &mut spectrum)
                .map_err(|e| Error::Precondition(e.to_string()))?;
            responses[j][i] = (0..bins).map(|f| spectrum[f * step]).collect::<Vec<Complex64>>();
        }
    }
    let vectors = (0..bins)
        .flat_map(|f| (0..j_count).map(move |j| (f, j)))
        .map(|(f, j)| CVector::from_fn(chans, |i, _| responses[j][i][f]))
        .collect();
    MixingVectorSet::new(bins, j_count, vectors)
}

/// True spatial covariances of every source under `kind`: the anechoic
/// and direct+diffuse models from the geometry, the rank-1 convolutive
/// model from the mixing filters, and the unconstrained model by ML from
/// the source images.
pub fn oracle_covariances(kind: ModelKind, oracle: &Oracle<'_>, cfg: &PipelineConfig) -> Result<SpatialCovarianceSet> {
    let bins = cfg.stft.num_bins();
    let c = oracle.room.sound_velocity;
    match kind {
        ModelKind::Rank1Anechoic => {
            let params = AnechoicParams::from_scene(oracle.scene, c)?;
            Ok(SpatialCovarianceSet::rank1_anechoic(&params, bins, cfg.bin_hz()))
        }
        ModelKind::Rank1Convolutive => {
            Ok(filter_responses(oracle.rirs, cfg.stft.frame_size)?.to_covariances(ModelKind::Rank1Convolutive))
        }
        ModelKind::FullrankDirectDiffuse => {
            let params = AnechoicParams::from_scene(oracle.scene, c)?;
            let sigma2 = roomsim::reverberant_power(oracle.room)?;
            Ok(SpatialCovarianceSet::direct_diffuse(
                &params,
                sigma2,
                &oracle.scene.mics,
                c,
                bins,
                cfg.bin_hz(),
            ))
        }
        ModelKind::FullrankUnconstrained => {
            let tfs = oracle
                .images
                .iter()
                .map(|img| stft::stft_padded(img, &cfg.stft))
                .collect::<Result<Vec<_>>>()?;
            Ok(spatial::empirical_covariance_ml(&tfs, ORACLE_ML_ITERATIONS, cfg.em.variance_floor)?.covariances)
        }
    }
}

#[derive(Debug, Clone)]
pub struct SemiBlindResult {
    pub variances: VarianceMap,
    pub loglik: Vec<f64>,
    pub separation: SeparationOutput,
    pub runtime_s: f64,
}

/// Variance-only EM with the spatial covariances held at `r`, followed by
/// Wiener filtering.
pub fn run_semiblind(
    mixture: &MultichannelAudio,
    r: &SpatialCovarianceSet,
    cfg: &PipelineConfig,
) -> Result<SemiBlindResult> {
    cfg.validate()?;
    let start = Instant::now();
    let x = analyze(mixture, cfg)?;
    let (variances, loglik) = em::semiblind_variances(&x, r, &cfg.semiblind_em())?;
    let separation = separate::wiener_separate(&x, &variances, r, cfg.em.ridge)?;
    Ok(SemiBlindResult {
        variances,
        loglik,
        separation,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    BinaryMask,
    L1Min,
}

impl Baseline {
    pub const ALL: [Baseline; 2] = [Baseline::BinaryMask, Baseline::L1Min];

    pub fn as_str(self) -> &'static str {
        match self {
            Baseline::BinaryMask => "binary_mask",
            Baseline::L1Min => "l1_min",
        }
    }
}

/// Reference separators driven by given mixing vectors.
pub fn run_baseline(
    mixture: &MultichannelAudio,
    h: &MixingVectorSet,
    baseline: Baseline,
    cfg: &PipelineConfig,
) -> Result<SeparationOutput> {
    let x = analyze(mixture, cfg)?;
    let images = match baseline {
        Baseline::BinaryMask => separate::binary_mask_images(&x, h)?,
        Baseline::L1Min => separate::l1_images(&x, h)?,
    };
    SeparationOutput::from_tf(images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roomsim::{mix, simulate_rir};
    use crate::sources::speech_like_set;

    #[test]
    fn default_config_matches_common_settings() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.stft.frame_size, 2048);
        assert_eq!(cfg.stft.frame_shift, 1024);
        assert_eq!(cfg.stft.window, stft::Window::Sine);
        assert_eq!(cfg.sample_rate, 16000);
        assert_eq!(cfg.em.iterations, 10);
        assert_eq!(cfg.init.cluster_threshold, 30);
        assert_eq!(cfg.sound_velocity, 334.0);
        assert_eq!(cfg.num_channels, 2);
        assert_eq!(cfg.init.num_sources, 3);
        cfg.validate().unwrap();
    }

    fn small_cfg() -> PipelineConfig {
        PipelineConfig {
            stft: StftConfig::new(256).unwrap(),
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn filter_responses_match_direct_sum() {
        let rirs = ImpulseResponseSet {
            taps: vec![vec![vec![0.5, -0.25, 0.1, 0.0, 0.3, 0.2, -0.1], vec![1.0]]],
            sample_rate: 16000,
        };
        let h = filter_responses(&rirs, 4).unwrap();
        assert_eq!(h.num_bins(), 3);
        for f in 0..3 {
            for (i, taps) in rirs.taps[0].iter().enumerate() {
                let expect: Complex64 = taps
                    .iter()
                    .enumerate()
                    .map(|(t, &v)| Complex64::from_polar(v, -2.0 * std::f64::consts::PI * (f * t) as f64 / 4.0))
                    .sum();
                assert!((h.get(f, 0)[i] - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_mismatched_mixture() {
        let cfg = small_cfg();
        let mono = MultichannelAudio::mono(vec![0.0; 4000], 16000).unwrap();
        assert!(analyze(&mono, &cfg).is_err());
        let wrong_rate = MultichannelAudio::zeros(2, 4000, 8000).unwrap();
        assert!(analyze(&wrong_rate, &cfg).is_err());
        let blind_dd = PipelineConfig {
            model: ModelKind::FullrankDirectDiffuse,
            ..small_cfg()
        };
        let x = MultichannelAudio::zeros(2, 4000, 16000).unwrap();
        assert!(matches!(run_blind(&x, &blind_dd), Err(Error::Config { .. })));
    }

    #[test]
    fn single_source_output_is_the_mixture() {
        let room = RoomSpec::default();
        let scene = SceneSpec::circular([2.3, 1.8, 1.4], 0.05, 0.5, &[20.0]);
        let rirs = simulate_rir(&room, &scene, 16000, None).unwrap();
        let src = speech_like_set(1, 1, 1.0, 16000).unwrap();
        let (x, _) = mix(&src, &rirs).unwrap();
        let cfg = PipelineConfig {
            init: InitConfig::new(1),
            mics: Some(scene.mics.clone()),
            ..small_cfg()
        };
        let out = run_blind(&x, &cfg).unwrap();
        let y = &out.separation.images[0];
        for i in 0..2 {
            let err: f64 = y.channel(i).iter().zip(x.channel(i)).map(|(a, b)| (a - b).powi(2)).sum();
            let e: f64 = x.channel(i).iter().map(|v| v * v).sum();
            assert!(err / e < 1e-18, "{}", err / e);
        }
    }

    #[test]
    fn blind_run_is_deterministic_and_conservative() {
        let room = RoomSpec {
            t60: 0.13,
            ..RoomSpec::default()
        };
        let scene = SceneSpec::circular([2.3, 1.8, 1.4], 0.05, 0.5, &[-50.0, 0.0, 50.0]);
        let rirs = simulate_rir(&room, &scene, 16000, None).unwrap();
        let src = speech_like_set(2, 3, 1.0, 16000).unwrap();
        let (x, _) = mix(&src, &rirs).unwrap();
        let cfg = PipelineConfig {
            mics: Some(scene.mics.clone()),
            ..small_cfg()
        };
        let a = run_blind(&x, &cfg).unwrap();
        let b = run_blind(&x, &cfg).unwrap();
        assert_eq!(a.separation.images, b.separation.images);
        assert!(a.perms.as_ref().unwrap().is_bijection());
        let tf = analyze(&x, &cfg).unwrap();
        let mut total = tf.zeros_like();
        for img in &a.separation.images_tf {
            total.add_assign(img).unwrap();
        }
        let worst = total
            .as_slice()
            .iter()
            .zip(tf.as_slice())
            .map(|(p, q)| (p - q).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-10);
        let ckpt = a.checkpoint().unwrap();
        assert_eq!(ckpt.meta("model").unwrap(), "fullrank_unconstrained");
        assert!(ckpt.get("perms").is_ok());
    }

    #[test]
    fn oracle_covariances_have_expected_structure() {
        let room = RoomSpec::default();
        let scene = SceneSpec::circular([2.3, 1.8, 1.4], 0.05, 0.5, &[-50.0, 0.0, 50.0]);
        let rirs = simulate_rir(&room, &scene, 16000, None).unwrap();
        let src = speech_like_set(3, 3, 1.0, 16000).unwrap();
        let (_, images) = mix(&src, &rirs).unwrap();
        let cfg = small_cfg();
        let oracle = Oracle {
            room: &room,
            scene: &scene,
            rirs: &rirs,
            images: &images,
        };
        for kind in ModelKind::ALL {
            let r = oracle_covariances(kind, &oracle, &cfg).unwrap();
            assert_eq!(r.kind, kind);
            assert_eq!((r.num_bins(), r.num_sources(), r.num_channels()), (129, 3, 2));
            r.check_invariants().unwrap();
        }
    }
}
