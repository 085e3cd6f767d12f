//! The `vidref` command line.

pub mod visualize;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::LevelFilter;
use vidref_core::dbst::{generate_sequence, AlphaSchedule, DbstPreset, FrameCache};
use vidref_core::episode::EpisodeFile;
use vidref_core::eval::synth::{generate_suite, SynthConfig};
use vidref_core::eval::{
    build_backend, run_evaluation, sample_episodes, segment_episode, DatasetManifest, EvalOptions, Method, RunConfig,
};
use vidref_core::image::{resize_pair, resize_image};
use vidref_core::sequence::PseudoVideoSequence;
use vidref_core::ttga::{finetune, ConvExtractor, Strategy};
use vidref_core::{Error, Image, Mask};

use crate::visualize::{render_strip, StripStyle};

#[derive(Debug, Parser)]
#[command(name = "vidref", version, about = "Reference segmentation by tracking through generated pseudo videos")]
pub struct Cli {
    /// Run configuration (JSON). Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// off, error, warn, info, debug or trace; debug and trace log JSON lines.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the transition sequence between a reference and a target image.
    GenerateSequence(GenerateArgs),
    /// Test-time adapt the feature extractor on an episode and log each step.
    Adapt(AdaptArgs),
    /// Segment the target of one episode.
    Segment(SegmentArgs),
    /// Evaluate a run configuration on a dataset manifest.
    Evaluate(EvaluateArgs),
    /// Draw the strip image of a segment run.
    Visualize(VisualizeArgs),
    /// Render the procedural shape-on-texture dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub ref_mask: Option<PathBuf>,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub n_frames: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[arg(long)]
    pub episode: PathBuf,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub resolution: Option<usize>,
    /// JSON-lines step log; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub episode: PathBuf,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Journal for resuming interrupted runs.
    #[arg(long)]
    pub journal: Option<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    #[arg(long)]
    pub episode: PathBuf,
    /// Directory written by `segment`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    #[arg(long, default_value_t = 10)]
    pub per_class: usize,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub semantic_gap: f64,
    #[arg(long, default_value_t = 1.0)]
    pub geometric_gap: f64,
    #[arg(long, default_value_t = 0)]
    pub distractors: usize,
}

/// A failure and the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration: exit 2.
    Usage(anyhow::Error),
    /// Anything that went wrong while running: exit 1.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Config(_)) => CliError::Usage(e),
            _ => CliError::Runtime(e),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    init_logging(cli.log_level);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Usage(inner) | CliError::Runtime(inner)) = &e;
            eprintln!("error: {inner:#}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn init_logging(level: LevelFilter) {
    let mut b = env_logger::Builder::new();
    b.filter_level(level).target(env_logger::Target::Stderr);
    if level >= LevelFilter::Debug {
        b.format(|buf, record| {
            let line = serde_json::json!({
                "ts": buf.timestamp_millis().to_string(),
                "level": record.level().as_str(),
                "target": record.target(),
                "msg": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    } else {
        b.format_timestamp(None).format_target(false);
    }
    let _ = b.try_init();
}

/// Defaults, then the config file, then flags.
fn base_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn validated(cfg: RunConfig) -> Result<RunConfig, CliError> {
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = base_config(cli)?;
    match &cli.command {
        Command::GenerateSequence(a) => {
            set(&mut cfg.preset, a.preset.clone());
            set(&mut cfg.n_frames, a.n_frames);
            set(&mut cfg.resolution, a.resolution);
            generate(&validated(cfg)?, a)
        }
        Command::Adapt(a) => {
            set(&mut cfg.ttga.strategy, a.strategy);
            set(&mut cfg.ttga.steps, a.steps);
            set(&mut cfg.ttga.learning_rate, a.lr);
            set(&mut cfg.resolution, a.resolution);
            cfg.ttga.enabled = true;
            adapt(&validated(cfg)?, a)
        }
        Command::Segment(a) => {
            set(&mut cfg.method, a.method);
            set(&mut cfg.ttga.strategy, a.strategy);
            set(&mut cfg.resolution, a.resolution);
            segment(&validated(cfg)?, a)
        }
        Command::Evaluate(a) => {
            set(&mut cfg.episodes, a.episodes);
            set(&mut cfg.method, a.method);
            set(&mut cfg.resolution, a.resolution);
            evaluate(&validated(cfg)?, a)
        }
        Command::Visualize(a) => visualize(a),
        Command::Synth(a) => synth(&cfg, a),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn square(cfg: &RunConfig) -> (usize, usize) {
    (cfg.resolution, cfg.resolution)
}

fn generate(cfg: &RunConfig, a: &GenerateArgs) -> Result<(), CliError> {
    let size = square(cfg);
    let reference = Image::load(&a.reference).context("loading reference")?;
    let target = resize_image(&Image::load(&a.target).context("loading target")?, size)?;
    let (reference, mask) = match &a.ref_mask {
        Some(p) => {
            let (i, m) = resize_pair(&reference, &Mask::load(p).context("loading reference mask")?, size)?;
            (i, Some(m))
        }
        None => (resize_image(&reference, size)?, None),
    };
    let preset = DbstPreset::by_name(&cfg.preset)?;
    let schedule: AlphaSchedule = cfg.schedule()?;
    let mut backend = build_backend(cfg, "object", cfg.seed)?;
    let mut seq = match &cfg.cache_dir {
        Some(dir) => FrameCache::new(dir)?.get_or_generate(&reference, &target, &schedule, backend.as_mut(), &preset)?,
        None => generate_sequence(&reference, &target, &schedule, backend.as_mut(), &preset)?,
    };
    if let Some(m) = mask {
        seq.set_prompt(0, Some(m))?;
    }
    let extra = serde_json::json!({ "preset": preset, "seed": cfg.seed, "backend": backend.fingerprint() });
    seq.write_dir(&a.out, extra)?;
    log::info!("wrote {} frames to {}", seq.len(), a.out.display());
    Ok(())
}

fn load_episode(path: &Path, cfg: &RunConfig) -> Result<vidref_core::Episode, CliError> {
    let ep = EpisodeFile::load(path).with_context(|| format!("loading episode {}", path.display()))?;
    Ok(ep.at_resolution(square(cfg))?)
}

fn adapt(cfg: &RunConfig, a: &AdaptArgs) -> Result<(), CliError> {
    let ep = load_episode(&a.episode, cfg)?;
    let extractor = ConvExtractor::new(cfg.ttga.extractor_stride, cfg.ttga.extractor_seed);
    let adapted = finetune(&ep, extractor, &cfg.ttga.finetune_config(cfg.seed))?;
    let mut text = String::new();
    for r in &adapted.log {
        text.push_str(&serde_json::to_string(r).map_err(anyhow::Error::from)?);
        text.push('\n');
    }
    write_output(a.out.as_deref(), &text)?;
    log::info!("loss {:.6} -> {:.6} over {} steps", adapted.initial_loss, adapted.final_loss, adapted.log.len());
    Ok(())
}

fn segment(cfg: &RunConfig, a: &SegmentArgs) -> Result<(), CliError> {
    let ep = load_episode(&a.episode, cfg)?;
    let out = segment_episode(cfg, &ep, cfg.seed)?;
    let dir = &a.out;
    std::fs::create_dir_all(dir.join("masks")).context("creating output directory")?;
    out.sequence.write_dir(&dir.join("sequence"), serde_json::json!({ "method": cfg.method }))?;
    for (i, m) in out.result.masks.iter().enumerate() {
        m.save(dir.join("masks").join(format!("mask_{i:03}.png")))?;
    }
    out.result.target_mask().save(dir.join("target_mask.png"))?;
    let reference_gt = &ep.references[out.reference].mask;
    let strip = render_strip(&out.sequence, &out.result.masks, Some(reference_gt), ep.target_gt.as_ref(), &StripStyle::default());
    strip.save(dir.join("strip.png")).map_err(Error::from)?;
    let mut log_text = String::new();
    for r in &out.adaptation_log {
        log_text.push_str(&serde_json::to_string(r).map_err(anyhow::Error::from)?);
        log_text.push('\n');
    }
    std::fs::write(dir.join("adaptation.jsonl"), log_text).context("writing adaptation log")?;
    let summary = out.summary(&ep, cfg.method);
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary).map_err(anyhow::Error::from)? + "\n")
        .context("writing summary")?;
    match summary.iou {
        Some(v) => log::info!("target IoU {v:.4}, prompted frames {:?}", summary.prompted),
        None => log::info!("prompted frames {:?}", summary.prompted),
    }
    Ok(())
}

fn evaluate(cfg: &RunConfig, a: &EvaluateArgs) -> Result<(), CliError> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let opts = EvalOptions { workers: a.workers, journal: a.journal.clone() };
    let outcome = run_evaluation(cfg, &manifest, &opts)?;
    for (id, err) in &outcome.failures {
        log::warn!("episode {id} failed: {err}");
    }
    if let Some(report) = &outcome.report {
        let text = serde_json::to_string_pretty(report).map_err(anyhow::Error::from)? + "\n";
        write_output(a.out.as_deref(), &text)?;
        log::info!(
            "mIoU {:.2} over {} episodes, {} failed",
            report.miou_percent(),
            outcome.attempted,
            outcome.failures.len()
        );
    }
    if !outcome.within(cfg.max_failure_rate) {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "failure rate {:.1}% exceeds {:.1}%",
            outcome.failure_rate() * 100.0,
            cfg.max_failure_rate * 100.0
        )));
    }
    Ok(())
}

fn visualize(a: &VisualizeArgs) -> Result<(), CliError> {
    let (seq, _) = PseudoVideoSequence::read_dir(&a.run.join("sequence"))?;
    let masks = (0..seq.len())
        .map(|i| Mask::load(a.run.join("masks").join(format!("mask_{i:03}.png"))))
        .collect::<Result<Vec<_>, _>>()?;
    let ep = EpisodeFile::load(&a.episode)?;
    let ep = ep.at_resolution(seq.dims())?;
    let reference_gt = seq.prompt(0).cloned().unwrap_or_else(|| ep.references[0].mask.clone());
    let strip = render_strip(&seq, &masks, Some(&reference_gt), ep.target_gt.as_ref(), &StripStyle::default());
    strip.save(&a.out).map_err(Error::from)?;
    Ok(())
}

fn synth(cfg: &RunConfig, a: &SynthArgs) -> Result<(), CliError> {
    let scfg = SynthConfig {
        classes: a.classes,
        per_class: a.per_class,
        size: a.size,
        semantic_gap: a.semantic_gap,
        geometric_gap: a.geometric_gap,
        distractors: a.distractors,
        seed: cfg.seed,
        ..SynthConfig::default()
    };
    let manifest = generate_suite(&a.out, &scfg)?;
    // a ready-made episode for `segment`
    let spec = sample_episodes(&manifest, 1, 1, cfg.seed)?.remove(0);
    let entry = |i: usize| &manifest.entries[i];
    let episode = serde_json::json!({
        "id": spec.id,
        "references": [{ "image": entry(spec.references[0]).image, "mask": entry(spec.references[0]).mask }],
        "target": entry(spec.target).image,
        "target_gt": entry(spec.target).mask,
        "class_id": spec.class_id,
        "dataset_id": manifest.dataset_id,
    });
    std::fs::write(a.out.join("episode.json"), serde_json::to_string_pretty(&episode).map_err(anyhow::Error::from)? + "\n")
        .context("writing episode.json")?;
    log::info!("wrote {} images to {}", manifest.entries.len(), a.out.display());
    Ok(())
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes()).context("writing stdout")?,
    }
    Ok(())
}

