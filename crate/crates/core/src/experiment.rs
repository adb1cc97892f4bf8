//! Experiment protocols over simulated mixtures: semi-blind potential
//! performance of every model, blind performance against reverberation
//! time, and robustness of learned spatial parameters to source movement.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_wav, MultichannelAudio};
use crate::error::{Error, Result};
use crate::eval::{self, EvalScores};
use crate::pipeline::{self, Baseline, Oracle, PipelineConfig};
use crate::roomsim::{self, ImpulseResponseSet, Point, RoomSpec, SceneSpec};
use crate::separate::SeparationOutput;
use crate::sources;
use crate::spatial::{MixingVectorSet, ModelKind, SpatialCovarianceSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Semiblind,
    T60Sweep,
    Movement,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Semiblind => "semiblind",
            Protocol::T60Sweep => "t60_sweep",
            Protocol::Movement => "movement",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Protocol::Semiblind, Protocol::T60Sweep, Protocol::Movement]
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::config("protocol", format!("unknown protocol `{s}`")))
    }
}

/// Protocol settings. Geometry fields left unset take the values used by
/// the protocol: 120 cm source distance and 20 cm spacing for the
/// semi-blind comparison, 50 cm and 5 cm otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default = "default_room_dims")]
    pub room_dims: [f64; 3],
    #[serde(default = "default_center")]
    pub array_center: Point,
    #[serde(default)]
    pub mic_spacing: Option<f64>,
    #[serde(default)]
    pub source_distance: Option<f64>,
    #[serde(default = "default_azimuths")]
    pub azimuths_deg: Vec<f64>,
    /// Reverberation time of the semi-blind and movement protocols.
    #[serde(default = "default_t60")]
    pub t60: f64,
    #[serde(default = "default_t60_values")]
    pub t60_values: Vec<f64>,
    #[serde(default = "default_movements")]
    pub movement_deg: Vec<f64>,
    /// Indices of the sources that are moved, one at a time, both ways.
    #[serde(default = "default_moved")]
    pub moved_sources: Vec<usize>,
    /// One mixture per seed in self-contained mode.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    /// Mono WAV files, one list per mixture. Replaces the generated sources.
    #[serde(default)]
    pub source_sets: Vec<Vec<PathBuf>>,
    #[serde(default = "default_true")]
    pub baselines: bool,
    /// Restrict the models run; empty means the protocol's full set.
    #[serde(default)]
    pub models: Vec<ModelKind>,
    #[serde(default = "default_filter_len")]
    pub eval_filter_len: usize,
}

fn default_room_dims() -> [f64; 3] {
    RoomSpec::default().dims
}

fn default_center() -> Point {
    [2.3, 1.8, 1.4]
}

fn default_azimuths() -> Vec<f64> {
    vec![-50.0, 0.0, 50.0]
}

fn default_t60() -> f64 {
    0.25
}

fn default_t60_values() -> Vec<f64> {
    vec![0.05, 0.13, 0.25, 0.5]
}

fn default_movements() -> Vec<f64> {
    vec![5.0, 10.0]
}

fn default_moved() -> Vec<usize> {
    vec![1, 2]
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn default_duration() -> f64 {
    10.0
}

fn default_true() -> bool {
    true
}

fn default_filter_len() -> usize {
    eval::FILTER_LEN
}

impl ExperimentConfig {
    pub fn new(protocol: Protocol) -> Self {
        Self {
            protocol,
            pipeline: PipelineConfig::default(),
            room_dims: default_room_dims(),
            array_center: default_center(),
            mic_spacing: None,
            source_distance: None,
            azimuths_deg: default_azimuths(),
            t60: default_t60(),
            t60_values: default_t60_values(),
            movement_deg: default_movements(),
            moved_sources: default_moved(),
            seeds: default_seeds(),
            duration_s: default_duration(),
            source_sets: Vec::new(),
            baselines: true,
            models: Vec::new(),
            eval_filter_len: default_filter_len(),
        }
    }

    pub fn spacing(&self) -> f64 {
        self.mic_spacing.unwrap_or(match self.protocol {
            Protocol::Semiblind => 0.2,
            _ => 0.05,
        })
    }

    pub fn distance(&self) -> f64 {
        self.source_distance.unwrap_or(match self.protocol {
            Protocol::Semiblind => 1.2,
            _ => 0.5,
        })
    }

    pub fn num_sources(&self) -> usize {
        self.azimuths_deg.len()
    }

    pub fn num_mixtures(&self) -> usize {
        if self.source_sets.is_empty() {
            self.seeds.len()
        } else {
            self.source_sets.len()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate().map_err(|e| prefix_path(e, "pipeline."))?;
        if self.azimuths_deg.is_empty() {
            return Err(Error::config("azimuths_deg", "at least one source required"));
        }
        if self.num_mixtures() == 0 {
            return Err(Error::config("seeds", "at least one mixture required"));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::config("duration_s", "must be positive"));
        }
        if self.eval_filter_len == 0 {
            return Err(Error::config("eval_filter_len", "must be positive"));
        }
        if self.pipeline.num_channels != 2 {
            return Err(Error::config("pipeline.num_channels", "protocols use a microphone pair"));
        }
        for (k, set) in self.source_sets.iter().enumerate() {
            if set.len() != self.num_sources() {
                return Err(Error::config(
                    format!("source_sets[{k}]"),
                    format!("{} files for {} sources", set.len(), self.num_sources()),
                ));
            }
        }
        for &j in &self.moved_sources {
            if j >= self.num_sources() {
                return Err(Error::config("moved_sources", format!("no source {j}")));
            }
        }
        if self.protocol == Protocol::T60Sweep && self.t60_values.is_empty() {
            return Err(Error::config("t60_values", "at least one value required"));
        }
        for (k, t) in self.t60_values.iter().enumerate() {
            if !(t.is_finite() && *t >= 0.0) {
                return Err(Error::config(format!("t60_values[{k}]"), "must be non-negative"));
            }
        }
        if !(self.t60.is_finite() && self.t60 >= 0.0) {
            return Err(Error::config("t60", "must be non-negative"));
        }
        if let Some(m) = self.models.iter().find(|m| !self.protocol_models().contains(m)) {
            return Err(Error::config("models", format!("{m} is not part of the {} protocol", self.protocol.as_str())));
        }
        if !(self.spacing().is_finite() && self.spacing() > 0.0) {
            return Err(Error::config("mic_spacing", "must be positive"));
        }
        if !(self.distance().is_finite() && self.distance() > 0.0) {
            return Err(Error::config("source_distance", "must be positive"));
        }
        let room = self.room(self.t60);
        room.validate().map_err(|e| match e {
            Error::Config { path, message } => Error::Config {
                path: path.replace("room.dims", "room_dims"),
                message,
            },
            other => other,
        })?;
        self.scene(&self.azimuths_deg).validate(&room)
    }

    fn protocol_models(&self) -> Vec<ModelKind> {
        match self.protocol {
            Protocol::Semiblind => ModelKind::ALL.to_vec(),
            _ => vec![ModelKind::Rank1Convolutive, ModelKind::FullrankUnconstrained],
        }
    }

    pub fn models(&self) -> Vec<ModelKind> {
        if self.models.is_empty() {
            self.protocol_models()
        } else {
            self.protocol_models().into_iter().filter(|m| self.models.contains(m)).collect()
        }
    }

    pub fn room(&self, t60: f64) -> RoomSpec {
        RoomSpec {
            dims: self.room_dims,
            t60,
            sound_velocity: self.pipeline.sound_velocity,
        }
    }

    pub fn scene(&self, azimuths: &[f64]) -> SceneSpec {
        SceneSpec::circular(self.array_center, self.spacing(), self.distance(), azimuths)
    }

    fn pipeline_for(&self, scene: &SceneSpec) -> PipelineConfig {
        let mut p = self.pipeline.clone();
        p.init.num_sources = scene.sources.len();
        p.init.cluster_threshold = p.init.cluster_threshold.max(scene.sources.len());
        p.mics = Some(scene.mics.clone());
        p
    }

    /// Dry sources of mixture `k`.
    pub fn sources(&self, k: usize) -> Result<Vec<MultichannelAudio>> {
        let fs = self.pipeline.sample_rate;
        if self.source_sets.is_empty() {
            return sources::speech_like_set(self.seeds[k], self.num_sources(), self.duration_s, fs);
        }
        let mut out = Vec::with_capacity(self.num_sources());
        for path in &self.source_sets[k] {
            let a = read_wav(path)?;
            if a.num_channels() != 1 || a.sample_rate() != fs {
                return Err(Error::Precondition(format!(
                    "{} must be mono at {fs} Hz",
                    path.display()
                )));
            }
            out.push(a);
        }
        let len = out.iter().map(|a| a.num_samples()).min().unwrap_or(0);
        let limit = (self.duration_s * fs as f64).round() as usize;
        out.into_iter()
            .map(|a| {
                let mut c = a.into_channels();
                c[0].truncate(len.min(limit));
                MultichannelAudio::new(c, fs)
            })
            .collect()
    }
}

fn prefix_path(e: Error, prefix: &str) -> Error {
    match e {
        Error::Config { path, message } => Error::Config {
            path: format!("{prefix}{path}"),
            message,
        },
        other => other,
    }
}

/// A simulated scene and everything derived from it.
#[derive(Debug, Clone)]
pub struct SimulatedMixture {
    pub room: RoomSpec,
    pub scene: SceneSpec,
    pub rirs: ImpulseResponseSet,
    pub mixture: MultichannelAudio,
    pub images: Vec<MultichannelAudio>,
}

impl SimulatedMixture {
    pub fn oracle(&self) -> Oracle<'_> {
        Oracle {
            room: &self.room,
            scene: &self.scene,
            rirs: &self.rirs,
            images: &self.images,
        }
    }
}

pub fn simulate_mixture(room: &RoomSpec, scene: &SceneSpec, sources: &[MultichannelAudio]) -> Result<SimulatedMixture> {
    let fs = sources
        .first()
        .ok_or_else(|| Error::Precondition("no sources".into()))?
        .sample_rate();
    let rirs = roomsim::simulate_rir(room, scene, fs, None)?;
    let (mixture, images) = roomsim::mix(sources, &rirs)?;
    Ok(SimulatedMixture {
        room: *room,
        scene: scene.clone(),
        rirs,
        mixture,
        images,
    })
}

/// Circular layout around a microphone pair, as an alternative to listing
/// positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayLayout {
    #[serde(default = "default_center")]
    pub center: Point,
    pub mic_spacing: f64,
    pub source_distance: f64,
    pub azimuths_deg: Vec<f64>,
}

/// Input of the `simulate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub room: RoomSpec,
    #[serde(default)]
    pub scene: Option<SceneSpec>,
    #[serde(default)]
    pub array: Option<ArrayLayout>,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    /// Mono source WAVs; generated sources are used when empty.
    #[serde(default)]
    pub sources: Vec<PathBuf>,
    #[serde(default)]
    pub rir_length: Option<usize>,
}

fn default_sample_rate() -> u32 {
    16000
}

impl SimulateConfig {
    /// 120 cm source distance and 20 cm microphone spacing at T60 = 250 ms.
    pub fn reference() -> Self {
        Self {
            room: RoomSpec::default(),
            scene: None,
            array: Some(ArrayLayout {
                center: default_center(),
                mic_spacing: 0.2,
                source_distance: 1.2,
                azimuths_deg: default_azimuths(),
            }),
            sample_rate: default_sample_rate(),
            duration_s: default_duration(),
            seed: 0,
            sources: Vec::new(),
            rir_length: None,
        }
    }

    pub fn resolved_scene(&self) -> Result<SceneSpec> {
        match (&self.scene, &self.array) {
            (Some(s), None) => Ok(s.clone()),
            (None, Some(a)) => Ok(SceneSpec::circular(a.center, a.mic_spacing, a.source_distance, &a.azimuths_deg)),
            (Some(_), Some(_)) => Err(Error::config("scene", "give either `scene` or `array`, not both")),
            (None, None) => Err(Error::config("scene", "missing; give `scene` or `array`")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate", "must be positive"));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::config("duration_s", "must be positive"));
        }
        if let Some(a) = &self.array {
            if !(a.mic_spacing.is_finite() && a.mic_spacing > 0.0) {
                return Err(Error::config("array.mic_spacing", "must be positive"));
            }
            if !(a.source_distance.is_finite() && a.source_distance > 0.0) {
                return Err(Error::config("array.source_distance", "must be positive"));
            }
        }
        let scene = self.resolved_scene()?;
        scene.validate(&self.room)?;
        if !self.sources.is_empty() && self.sources.len() != scene.sources.len() {
            return Err(Error::config(
                "sources",
                format!("{} files for {} source positions", self.sources.len(), scene.sources.len()),
            ));
        }
        if self.rir_length == Some(0) {
            return Err(Error::config("rir_length", "must be positive"));
        }
        Ok(())
    }

    pub fn dry_sources(&self) -> Result<Vec<MultichannelAudio>> {
        let count = self.resolved_scene()?.sources.len();
        if self.sources.is_empty() {
            return sources::speech_like_set(self.seed, count, self.duration_s, self.sample_rate);
        }
        let mut out = Vec::with_capacity(count);
        for path in &self.sources {
            let a = read_wav(path)?;
            if a.num_channels() != 1 || a.sample_rate() != self.sample_rate {
                return Err(Error::Precondition(format!(
                    "{} must be mono at {} Hz",
                    path.display(),
                    self.sample_rate
                )));
            }
            out.push(a);
        }
        let len = out.iter().map(|a| a.num_samples()).min().unwrap_or(0);
        out.into_iter()
            .map(|a| {
                let mut c = a.into_channels();
                c[0].truncate(len);
                MultichannelAudio::new(c, self.sample_rate)
            })
            .collect()
    }

    pub fn run(&self) -> Result<SimulatedMixture> {
        self.validate()?;
        let scene = self.resolved_scene()?;
        let dry = self.dry_sources()?;
        let rirs = roomsim::simulate_rir(&self.room, &scene, self.sample_rate, self.rir_length)?;
        let (mixture, images) = roomsim::mix(&dry, &rirs)?;
        Ok(SimulatedMixture {
            room: self.room,
            scene,
            rirs,
            mixture,
            images,
        })
    }
}

impl SimulatedMixture {
    /// Writes `mixture.wav`, `image_<j>.wav` and `rirs.tensor` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_wav(dir.join("mixture.wav"), &self.mixture)?;
        for (j, img) in self.images.iter().enumerate() {
            write_wav(dir.join(format!("image_{j}.wav")), img)?;
        }
        self.rirs.to_bundle()?.write(dir.join("rirs.tensor"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "detail")]
pub enum RowStatus {
    Ok,
    /// Some mixtures failed; their errors are listed.
    Partial(Vec<String>),
    Failed(Vec<String>),
    OutOfScopeStub,
}

/// Scores of one source in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub condition: String,
    pub method: String,
    pub mixture: usize,
    pub source: usize,
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
    pub isr: f64,
}

/// Means over every source of every mixture in one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    /// Numeric position on the protocol's axis (T60 in ms, angle in degrees).
    pub axis: f64,
    pub method: String,
    pub status: RowStatus,
    pub mixtures: usize,
    pub sdr: Option<f64>,
    pub sir: Option<f64>,
    pub sar: Option<f64>,
    pub isr: Option<f64>,
    /// Log-likelihood trace of each successful mixture.
    pub loglik: Vec<Vec<f64>>,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub protocol: Protocol,
    pub summaries: Vec<ConditionSummary>,
    pub sources: Vec<SourceRecord>,
}

impl ExperimentReport {
    pub fn summary(&self, condition: &str, method: &str) -> Option<&ConditionSummary> {
        self.summaries
            .iter()
            .find(|s| s.condition == condition && s.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("condition,axis,method,status,mixtures,sdr,sir,sar,isr,runtime_s\n");
        let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.4}"));
        for r in &self.summaries {
            let status = match &r.status {
                RowStatus::Ok => "ok",
                RowStatus::Partial(_) => "partial",
                RowStatus::Failed(_) => "failed",
                RowStatus::OutOfScopeStub => "out-of-scope-stub",
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{:.3}",
                r.condition,
                r.axis,
                r.method,
                status,
                r.mixtures,
                fmt(r.sdr),
                fmt(r.sir),
                fmt(r.sar),
                fmt(r.isr),
                r.runtime_s
            );
        }
        s
    }

    pub fn sources_csv(&self) -> String {
        let mut s = String::from("condition,method,mixture,source,sdr,sir,sar,isr\n");
        for r in &self.sources {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.4},{:.4},{:.4},{:.4}",
                r.condition, r.method, r.mixture, r.source, r.sdr, r.sir, r.sar, r.isr
            );
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Precondition(e.to_string()))
    }

    /// Writes `summary.csv`, `sources.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("summary.csv", self.to_csv()),
            ("sources.csv", self.sources_csv()),
            ("report.json", self.to_json()?),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Accumulates runs of one (condition, method) cell.
struct Cell {
    condition: String,
    axis: f64,
    method: String,
    records: Vec<SourceRecord>,
    loglik: Vec<Vec<f64>>,
    errors: Vec<String>,
    attempts: usize,
    runtime_s: f64,
    stub: bool,
}

impl Cell {
    fn new(condition: &str, axis: f64, method: &str) -> Self {
        Self {
            condition: condition.into(),
            axis,
            method: method.into(),
            records: Vec::new(),
            loglik: Vec::new(),
            errors: Vec::new(),
            attempts: 0,
            runtime_s: 0.0,
            stub: false,
        }
    }

    fn record(&mut self, mixture: usize, outcome: Result<(EvalScores, Vec<f64>)>, runtime_s: f64) {
        self.attempts += 1;
        self.runtime_s += runtime_s;
        match outcome {
            Ok((scores, trace)) => {
                for k in 0..scores.num_sources() {
                    self.records.push(SourceRecord {
                        condition: self.condition.clone(),
                        method: self.method.clone(),
                        mixture,
                        source: k,
                        sdr: scores.sdr[k],
                        sir: scores.sir[k],
                        sar: scores.sar[k],
                        isr: scores.isr[k],
                    });
                }
                if !trace.is_empty() {
                    self.loglik.push(trace);
                }
            }
            Err(e) => self.errors.push(format!("mixture {mixture}: {e}")),
        }
    }

    fn finish(self, report: &mut ExperimentReport) {
        let ok = self.attempts - self.errors.len();
        let status = if self.stub {
            RowStatus::OutOfScopeStub
        } else if self.errors.is_empty() {
            RowStatus::Ok
        } else if ok > 0 {
            RowStatus::Partial(self.errors)
        } else {
            RowStatus::Failed(self.errors)
        };
        let mean_of = |f: fn(&SourceRecord) -> f64| {
            (!self.records.is_empty())
                .then(|| eval::mean(&self.records.iter().map(f).collect::<Vec<_>>()))
        };
        report.summaries.push(ConditionSummary {
            condition: self.condition,
            axis: self.axis,
            method: self.method,
            status,
            mixtures: ok,
            sdr: mean_of(|r| r.sdr),
            sir: mean_of(|r| r.sir),
            sar: mean_of(|r| r.sar),
            isr: mean_of(|r| r.isr),
            loglik: self.loglik,
            runtime_s: self.runtime_s,
        });
        report.sources.extend(self.records);
    }
}

fn score(sep: &SeparationOutput, references: &[MultichannelAudio], flen: usize) -> Result<EvalScores> {
    eval::bss_eval_images_with(&sep.images, references, flen)
}

fn t60_label(t60: f64) -> String {
    format!("t60={}ms", (t60 * 1000.0).round())
}

/// Runs the configured protocol over every mixture.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut report = ExperimentReport {
        protocol: cfg.protocol,
        summaries: Vec::new(),
        sources: Vec::new(),
    };
    match cfg.protocol {
        Protocol::Semiblind => run_semiblind(cfg, &mut report)?,
        Protocol::T60Sweep => run_t60_sweep(cfg, &mut report)?,
        Protocol::Movement => run_movement(cfg, &mut report)?,
    }
    Ok(report)
}

fn run_semiblind(cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let label = t60_label(cfg.t60);
    let axis = cfg.t60 * 1000.0;
    let models = cfg.models();
    let mut cells: Vec<Cell> = models.iter().map(|m| Cell::new(&label, axis, m.as_str())).collect();
    let mut base: Vec<Cell> = Baseline::ALL.iter().map(|b| Cell::new(&label, axis, b.as_str())).collect();
    let room = cfg.room(cfg.t60);
    let scene = cfg.scene(&cfg.azimuths_deg);
    let p = cfg.pipeline_for(&scene);
    for k in 0..cfg.num_mixtures() {
        let sim = simulate_mixture(&room, &scene, &cfg.sources(k)?)?;
        for (cell, &kind) in cells.iter_mut().zip(&models) {
            let start = Instant::now();
            let outcome = pipeline::oracle_covariances(kind, &sim.oracle(), &p)
                .and_then(|r| pipeline::run_semiblind(&sim.mixture, &r, &p))
                .and_then(|out| Ok((score(&out.separation, &sim.images, cfg.eval_filter_len)?, out.loglik)));
            cell.record(k, outcome, start.elapsed().as_secs_f64());
        }
        if cfg.baselines {
            let h = pipeline::filter_responses(&sim.rirs, p.stft.frame_size)?;
            run_baselines(&mut base, &sim, &h, &p, cfg.eval_filter_len, k);
        }
    }
    for cell in cells {
        cell.finish(report);
    }
    for mut cell in base {
        cell.stub = !cfg.baselines;
        cell.finish(report);
    }
    Ok(())
}

fn run_baselines(
    cells: &mut [Cell],
    sim: &SimulatedMixture,
    h: &MixingVectorSet,
    p: &PipelineConfig,
    flen: usize,
    k: usize,
) {
    for (cell, b) in cells.iter_mut().zip(Baseline::ALL) {
        let start = Instant::now();
        let outcome = pipeline::run_baseline(&sim.mixture, h, b, p)
            .and_then(|sep| Ok((score(&sep, &sim.images, flen)?, Vec::new())));
        cell.record(k, outcome, start.elapsed().as_secs_f64());
    }
}

fn run_t60_sweep(cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let scene = cfg.scene(&cfg.azimuths_deg);
    let models = cfg.models();
    for &t60 in &cfg.t60_values {
        let label = t60_label(t60);
        let axis = t60 * 1000.0;
        let mut cells: Vec<Cell> = models.iter().map(|m| Cell::new(&label, axis, m.as_str())).collect();
        let mut base: Vec<Cell> = Baseline::ALL.iter().map(|b| Cell::new(&label, axis, b.as_str())).collect();
        let room = cfg.room(t60);
        for k in 0..cfg.num_mixtures() {
            let sim = simulate_mixture(&room, &scene, &cfg.sources(k)?)?;
            let mut rank1_vectors = None;
            for (cell, &kind) in cells.iter_mut().zip(&models) {
                let p = PipelineConfig {
                    model: kind,
                    ..cfg.pipeline_for(&scene)
                };
                let start = Instant::now();
                let outcome = pipeline::run_blind(&sim.mixture, &p).and_then(|out| {
                    if let Some(h) = &out.em.mixing {
                        rank1_vectors = Some(h.clone());
                    }
                    Ok((score(&out.separation, &sim.images, cfg.eval_filter_len)?, out.em.loglik))
                });
                cell.record(k, outcome, start.elapsed().as_secs_f64());
            }
            if cfg.baselines {
                // The baselines reuse the aligned blind rank-1 mixing vectors.
                let p = cfg.pipeline_for(&scene);
                let h = match rank1_vectors {
                    Some(h) => h,
                    None => {
                        let q = PipelineConfig {
                            model: ModelKind::Rank1Convolutive,
                            ..p.clone()
                        };
                        match pipeline::run_blind(&sim.mixture, &q) {
                            Ok(out) => out.em.mixing.expect("rank-1 run yields mixing vectors"),
                            Err(e) => {
                                for cell in base.iter_mut() {
                                    cell.record(k, Err(Error::Precondition(e.to_string())), 0.0);
                                }
                                continue;
                            }
                        }
                    }
                };
                run_baselines(&mut base, &sim, &h, &p, cfg.eval_filter_len, k);
            }
        }
        for cell in cells {
            cell.finish(report);
        }
        if cfg.baselines {
            for cell in base {
                cell.finish(report);
            }
        }
    }
    Ok(())
}

/// Spatial covariances learned at the reference positions: the unconstrained
/// model by ML from the source images, the rank-1 model from the filters.
fn learned_covariances(kind: ModelKind, sim: &SimulatedMixture, p: &PipelineConfig) -> Result<SpatialCovarianceSet> {
    pipeline::oracle_covariances(kind, &sim.oracle(), p)
}

fn run_movement(cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let room = cfg.room(cfg.t60);
    let scene0 = cfg.scene(&cfg.azimuths_deg);
    let p = cfg.pipeline_for(&scene0);
    let models = cfg.models();
    let mut angles = vec![0.0];
    angles.extend(cfg.movement_deg.iter().copied());
    let mut cells: Vec<Vec<Cell>> = angles
        .iter()
        .map(|a| {
            let label = format!("move={a}deg");
            models.iter().map(|m| Cell::new(&label, *a, m.as_str())).collect()
        })
        .collect();
    for k in 0..cfg.num_mixtures() {
        let dry = cfg.sources(k)?;
        let sim0 = simulate_mixture(&room, &scene0, &dry)?;
        let learned: Vec<Result<SpatialCovarianceSet>> =
            models.iter().map(|&m| learned_covariances(m, &sim0, &p)).collect();
        for (row, &angle) in cells.iter_mut().zip(&angles) {
            let variants: Vec<Vec<f64>> = if angle == 0.0 {
                vec![cfg.azimuths_deg.clone()]
            } else {
                cfg.moved_sources
                    .iter()
                    .flat_map(|&j| [-1.0, 1.0].map(|s| (j, s)))
                    .map(|(j, s)| {
                        let mut az = cfg.azimuths_deg.clone();
                        az[j] += s * angle;
                        az
                    })
                    .collect()
            };
            for az in variants {
                let moved = if angle == 0.0 {
                    Ok(sim0.clone())
                } else {
                    simulate_mixture(&room, &cfg.scene(&az), &dry)
                };
                for (cell, r) in row.iter_mut().zip(&learned) {
                    let start = Instant::now();
                    let outcome = match (&moved, r) {
                        (Ok(sim), Ok(r)) => pipeline::run_semiblind(&sim.mixture, r, &p)
                            .and_then(|out| Ok((score(&out.separation, &sim.images, cfg.eval_filter_len)?, out.loglik))),
                        (Err(e), _) | (_, Err(e)) => Err(Error::Precondition(e.to_string())),
                    };
                    cell.record(k, outcome, start.elapsed().as_secs_f64());
                }
            }
        }
    }
    for row in cells {
        for cell in row {
            cell.finish(report);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::StftConfig;

    fn quick(protocol: Protocol) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(protocol);
        cfg.pipeline.stft = StftConfig::new(512).unwrap();
        cfg.seeds = vec![1];
        cfg.duration_s = 1.0;
        cfg.eval_filter_len = 32;
        cfg.t60 = 0.1;
        cfg
    }

    fn check_consistency(report: &ExperimentReport) {
        for s in &report.summaries {
            let rows: Vec<&SourceRecord> = report
                .sources
                .iter()
                .filter(|r| r.condition == s.condition && r.method == s.method)
                .collect();
            if rows.is_empty() {
                assert!(s.sdr.is_none());
                continue;
            }
            let m = rows.iter().map(|r| r.sdr).sum::<f64>() / rows.len() as f64;
            assert!((s.sdr.unwrap() - m).abs() < 1e-12);
            let m = rows.iter().map(|r| r.isr).sum::<f64>() / rows.len() as f64;
            assert!((s.isr.unwrap() - m).abs() < 1e-12);
        }
    }

    #[test]
    fn semiblind_rows_cover_models_and_baselines() {
        let mut cfg = quick(Protocol::Semiblind);
        cfg.baselines = false;
        let report = run(&cfg).unwrap();
        let methods: Vec<&str> = report.summaries.iter().map(|s| s.method.as_str()).collect();
        assert_eq!(
            methods,
            [
                "rank1_anechoic",
                "rank1_convolutive",
                "fullrank_direct_diffuse",
                "fullrank_unconstrained",
                "binary_mask",
                "l1_min"
            ]
        );
        for s in &report.summaries[..4] {
            assert_eq!(s.status, RowStatus::Ok);
            assert_eq!(s.loglik.len(), 1);
        }
        for s in &report.summaries[4..] {
            assert_eq!(s.status, RowStatus::OutOfScopeStub);
        }
        check_consistency(&report);
        assert_eq!(report.sources.len(), 4 * 3);
    }

    #[test]
    fn sweep_and_movement_rows() {
        let mut cfg = quick(Protocol::T60Sweep);
        cfg.t60_values = vec![0.05, 0.2];
        let report = run(&cfg).unwrap();
        let cells: Vec<(String, String)> = report
            .summaries
            .iter()
            .map(|s| (s.condition.clone(), s.method.clone()))
            .collect();
        assert_eq!(cells.len(), 2 * 4);
        assert!(cells.contains(&("t60=50ms".into(), "fullrank_unconstrained".into())));
        assert!(cells.contains(&("t60=200ms".into(), "l1_min".into())));
        check_consistency(&report);

        let mut cfg = quick(Protocol::Movement);
        cfg.movement_deg = vec![5.0];
        cfg.moved_sources = vec![2];
        let report = run(&cfg).unwrap();
        let conditions: Vec<&str> = report.summaries.iter().map(|s| s.condition.as_str()).collect();
        assert_eq!(conditions, ["move=0deg", "move=0deg", "move=5deg", "move=5deg"]);
        // Two moved mixtures of three sources each.
        let moved = report.sources.iter().filter(|r| r.condition == "move=5deg").count();
        assert_eq!(moved, 2 * 2 * 3);
        check_consistency(&report);
    }

    #[test]
    fn deterministic_report() {
        let mut cfg = quick(Protocol::Semiblind);
        cfg.models = vec![ModelKind::FullrankUnconstrained];
        cfg.baselines = false;
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.sources, b.sources);
        let json = a.to_json().unwrap();
        let back: ExperimentReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.sources, a.sources);
        assert!(a.to_csv().lines().nth(1).unwrap().starts_with("t60=100ms,100,fullrank_unconstrained,ok,1,"));
    }

    #[test]
    fn validation_paths() {
        let mut cfg = quick(Protocol::T60Sweep);
        cfg.models = vec![ModelKind::Rank1Anechoic];
        assert!(matches!(cfg.validate(), Err(Error::Config { path, .. }) if path == "models"));
        let mut cfg = quick(Protocol::Movement);
        cfg.moved_sources = vec![7];
        assert!(matches!(cfg.validate(), Err(Error::Config { path, .. }) if path == "moved_sources"));
        let mut cfg = quick(Protocol::Semiblind);
        cfg.source_sets = vec![vec![PathBuf::from("a.wav")]];
        assert!(matches!(cfg.validate(), Err(Error::Config { path, .. }) if path == "source_sets[0]"));
    }
}
