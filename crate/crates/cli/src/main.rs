use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use covsep::audio::{read_wav, write_wav, MultichannelAudio};
use covsep::config;
use covsep::eval;
use covsep::experiment::{ExperimentConfig, Protocol, SimulateConfig};
use covsep::pipeline::{self, PipelineConfig};
use covsep::spatial::{ModelKind, SpatialCovarianceSet};
use covsep::stft::StftConfig;
use covsep::tensorfile::TensorBundle;

#[derive(Parser)]
#[command(name = "covsep", version, about = "Separate reverberant audio mixtures with spatial covariance models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a room and write the mixture, source images and filters.
    Simulate(SimulateArgs),
    /// Separate a mixture into source image estimates.
    Separate(SeparateArgs),
    /// Score estimated images against reference images.
    Evaluate(EvaluateArgs),
    /// Run one of the experiment protocols end to end.
    Experiment(ExperimentArgs),
}

/// Overrides for the common analysis and estimation settings.
#[derive(Args, Default)]
struct PipelineFlags {
    /// Model kind: rank1_convolutive, fullrank_unconstrained, ...
    #[arg(long)]
    model: Option<ModelKind>,
    /// Number of sources J.
    #[arg(long)]
    sources: Option<usize>,
    #[arg(long)]
    sample_rate: Option<u32>,
    /// STFT frame size; the shift is half of it.
    #[arg(long)]
    frame_size: Option<usize>,
    /// EM iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Cluster count K at which linking stops.
    #[arg(long)]
    cluster_threshold: Option<usize>,
    /// Speed of sound in m/s.
    #[arg(long)]
    sound_velocity: Option<f64>,
    /// Spacing of a microphone pair in metres, for permutation alignment.
    #[arg(long)]
    mic_spacing: Option<f64>,
    /// Variance-only EM iterations in semi-blind mode.
    #[arg(long)]
    semiblind_iterations: Option<usize>,
}

impl PipelineFlags {
    fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        if let Some(m) = self.model {
            cfg.model = m;
        }
        if let Some(j) = self.sources {
            cfg.init.num_sources = j;
        }
        if let Some(fs) = self.sample_rate {
            cfg.sample_rate = fs;
        }
        if let Some(l) = self.frame_size {
            cfg.stft = StftConfig::new(l)?;
        }
        if let Some(n) = self.iterations {
            cfg.em.iterations = n;
        }
        if let Some(k) = self.cluster_threshold {
            cfg.init.cluster_threshold = k;
        }
        if let Some(c) = self.sound_velocity {
            cfg.sound_velocity = c;
        }
        if let Some(d) = self.mic_spacing {
            cfg.mics = Some(vec![[0.0, 0.0, 0.0], [d, 0.0, 0.0]]);
        }
        if let Some(n) = self.semiblind_iterations {
            cfg.semiblind_iterations = n;
        }
        cfg.validate()?;
        Ok(())
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML scene description; the 120 cm / 20 cm reference scene if absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Reverberation time in seconds.
    #[arg(long)]
    t60: Option<f64>,
    #[arg(long)]
    duration: Option<f64>,
    /// Also write the true spatial covariances of every model kind, for
    /// semi-blind separation.
    #[arg(long)]
    oracle: bool,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args)]
struct SeparateArgs {
    #[arg(long)]
    mixture: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fixed spatial covariances (as written by `simulate --oracle`);
    /// only the variances are then estimated.
    #[arg(long)]
    covariances: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, num_args = 1.., required = true)]
    estimates: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    references: Vec<PathBuf>,
    /// Distortion filter length in taps.
    #[arg(long, default_value_t = eval::FILTER_LEN)]
    filter_len: usize,
    /// Directory for `scores.csv` and `scores.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// semiblind, t60_sweep or movement; overrides the config file.
    #[arg(long)]
    protocol: Option<Protocol>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated seeds, one mixture each.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    no_baselines: bool,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(a) => simulate(a),
        Command::Separate(a) => separate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => config::from_toml::<SimulateConfig>(&config::read_text(p)?)?,
        None => SimulateConfig::reference(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.t60 {
        cfg.room.t60 = t;
    }
    if let Some(d) = a.duration {
        cfg.duration_s = d;
    }
    if let Some(fs) = a.pipeline.sample_rate {
        cfg.sample_rate = fs;
    }
    if let Some(c) = a.pipeline.sound_velocity {
        cfg.room.sound_velocity = c;
    }
    cfg.validate()?;
    let sim = cfg.run()?;
    sim.write(&a.out)?;
    if a.oracle {
        let mut p = PipelineConfig {
            sample_rate: cfg.sample_rate,
            sound_velocity: cfg.room.sound_velocity,
            ..PipelineConfig::default()
        };
        a.pipeline.apply(&mut p)?;
        for kind in ModelKind::ALL {
            let r = pipeline::oracle_covariances(kind, &sim.oracle(), &p)?;
            write_covariances(&a.out.join(format!("oracle_{kind}.tensor")), &r)?;
        }
    }
    eprintln!(
        "wrote {} source images of {} samples to {}",
        sim.images.len(),
        sim.mixture.num_samples(),
        a.out.display()
    );
    Ok(())
}

fn write_covariances(path: &Path, r: &SpatialCovarianceSet) -> Result<()> {
    let mut b = TensorBundle::new().with_meta("kind", r.kind.as_str());
    b.push(r.to_tensor("r")?);
    b.write(path)?;
    Ok(())
}

fn read_covariances(path: &Path) -> Result<SpatialCovarianceSet> {
    let b = TensorBundle::read(path)?;
    let kind: ModelKind = b.meta("kind")?.parse()?;
    Ok(SpatialCovarianceSet::from_tensor(b.get("r")?, kind)?)
}

fn write_images(dir: &Path, images: &[MultichannelAudio]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (j, img) in images.iter().enumerate() {
        write_wav(dir.join(format!("estimate_{j}.wav")), img)?;
    }
    Ok(())
}

fn separate(a: SeparateArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => config::parse_pipeline_config(&config::read_text(p)?)?,
        None => PipelineConfig::default(),
    };
    a.pipeline.apply(&mut cfg)?;
    let mixture = read_wav(&a.mixture)?;
    if let Some(path) = &a.covariances {
        let r = read_covariances(path)?;
        if r.num_sources() != cfg.init.num_sources && a.pipeline.sources.is_some() {
            bail!("{} sources requested but the covariances hold {}", cfg.init.num_sources, r.num_sources());
        }
        let out = pipeline::run_semiblind(&mixture, &r, &cfg)?;
        write_images(&a.out, &out.separation.images)?;
        let mut b = covsep::spatial::parameters_to_bundle(&out.variances, &r)?.with_meta("model", r.kind.as_str());
        b.push(covsep::tensorfile::Tensor::real("loglik", vec![out.loglik.len()], out.loglik.clone())?);
        b.write(a.out.join("params.tensor"))?;
        eprintln!("semi-blind separation with {} covariances in {:.1} s", r.kind, out.runtime_s);
        return Ok(());
    }
    let out = pipeline::run_blind(&mixture, &cfg)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    write_images(&a.out, &out.separation.images)?;
    out.checkpoint()?.write(a.out.join("params.tensor"))?;
    eprintln!(
        "{} separation of {} sources in {:.1} s",
        cfg.model,
        out.separation.images.len(),
        out.runtime_s
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let read_all = |paths: &[PathBuf]| -> Result<Vec<MultichannelAudio>> {
        paths.iter().map(|p| Ok(read_wav(p)?)).collect()
    };
    let est = read_all(&a.estimates)?;
    let refs = read_all(&a.references)?;
    let scores = eval::bss_eval_images_with(&est, &refs, a.filter_len)?;
    let csv = scores.to_csv();
    print!("{csv}");
    println!(
        "mean,,{:.4},{:.4},{:.4},{:.4}",
        scores.mean_sdr(),
        scores.mean_isr(),
        scores.mean_sir(),
        scores.mean_sar()
    );
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("scores.csv"), csv)?;
        std::fs::write(dir.join("scores.json"), scores.to_json()?)?;
    }
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut cfg = match (&a.config, a.protocol) {
        (Some(p), _) => {
            let mut c = config::from_toml::<ExperimentConfig>(&config::read_text(p)?)?;
            if let Some(proto) = a.protocol {
                c.protocol = proto;
            }
            c
        }
        (None, Some(proto)) => ExperimentConfig::new(proto),
        (None, None) => bail!("give --protocol or --config"),
    };
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    if let Some(d) = a.duration {
        cfg.duration_s = d;
    }
    if a.no_baselines {
        cfg.baselines = false;
    }
    a.pipeline.apply(&mut cfg.pipeline)?;
    let report = covsep::experiment::run(&cfg)?;
    report.write(&a.out)?;
    print!("{}", report.to_csv());
    Ok(())
}
