//! Command-line front end. [`run`] parses arguments and returns the process
//! exit code: 0 on success, 1 on usage errors, 2 on runtime errors.

pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::backbone::BackboneConfig;
use crate::datagen::{desk_corpora, make_corpus, Manifest, TrialList};
use crate::error::{Error, Result};
use crate::evalkit::evaluate;
use crate::petl::{count_params, PetlConfig, PetlMode};
use crate::spkback::MhfaConfig;
use crate::trainer::{lm_finetune, train, two_stage, LmFtConfig};

pub use config::{RunConfig, RunPaths};

#[derive(Debug, Parser)]
#[command(name = "petl-sv", version, about = "Parameter-efficient transfer learning for speaker verification")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Pin the worker pool to one thread and record the flag in the run config.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Worker threads for per-example and per-utterance parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the desk corpora (WAV files, manifests, trial lists).
    SynthData(SynthArgs),
    /// Print the trainable-parameter table for a backbone and PETL setup.
    CountParams(CountArgs),
    /// Train one stage.
    Train(TrainArgs),
    /// Large-margin continuation of a trained checkpoint.
    LmFt(LmFtArgs),
    /// Full fine-tuning on the intermediate corpus, then adaptation on the target corpus.
    TwoStage(TwoStageArgs),
    /// Score a trial list and print metrics as JSON.
    Evaluate(EvalArgs),
    /// Print the built-in backbone presets as JSON.
    DumpPresets,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Skip WAV files; manifests then carry synthesis seeds only.
    #[arg(long)]
    pub inline: bool,
    /// Override every utterance duration (seconds).
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Args, Clone)]
pub struct PetlArgs {
    /// full, fixed, bottleneck, prefix or mam.
    #[arg(long)]
    pub petl: Option<String>,
    /// Bottleneck width.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Prefix length.
    #[arg(long)]
    pub l: Option<usize>,
}

impl PetlArgs {
    fn resolve(&self, base: Option<&PetlConfig>) -> Result<Option<PetlConfig>> {
        let Some(mode) = &self.petl else {
            return Ok(match base {
                Some(b) if self.dim.is_some() || self.l.is_some() => Some(PetlConfig {
                    d_bottleneck: self.dim.unwrap_or(b.d_bottleneck),
                    prefix_len: self.l.unwrap_or(b.prefix_len),
                    ..b.clone()
                }),
                other => other.cloned(),
            });
        };
        let mode = PetlMode::parse(mode)?;
        let dim = self.dim.or(base.map(|b| b.d_bottleneck)).unwrap_or(64);
        let l = self.l.or(base.map(|b| b.prefix_len)).unwrap_or(0);
        Ok(Some(match mode {
            PetlMode::Full => PetlConfig::full(),
            PetlMode::Fixed => PetlConfig::fixed(),
            PetlMode::Bottleneck => PetlConfig::bottleneck(dim),
            PetlMode::Prefix => PetlConfig::prefix(l),
            PetlMode::Mam => PetlConfig::mam(dim, l),
        }))
    }
}

#[derive(Debug, Args)]
pub struct CountArgs {
    /// base, large or desk.
    #[arg(long, default_value = "base")]
    pub backbone: String,
    #[command(flatten)]
    pub petl: PetlArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (JSON); flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Backbone preset, used when no config file is given.
    #[arg(long)]
    pub backbone: Option<String>,
    #[command(flatten)]
    pub petl: PetlArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub crop: Option<f64>,
    /// Start from this checkpoint.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LmFtArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Large-margin settings (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub crop: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TwoStageArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub intermediate: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Stage-2 PETL setup.
    #[command(flatten)]
    pub petl: PetlArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub trials: PathBuf,
    /// Manifest covering every trial utterance; defaults to
    /// `manifest.jsonl` next to the trial list.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let threads = cli.threads.or(cli.deterministic.then_some(1));
    if let Some(n) = threads {
        // A second call in the same process keeps the existing pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match &cli.command {
        Command::SynthData(a) => synth_data(cli, a),
        Command::CountParams(a) => count(a),
        Command::Train(a) => train_cmd(cli, a),
        Command::LmFt(a) => lm_ft_cmd(cli, a),
        Command::TwoStage(a) => two_stage_cmd(cli, a),
        Command::Evaluate(a) => eval_cmd(cli, a),
        Command::DumpPresets => dump_presets(),
    }
}

fn require_out(cli: &Cli, cfg_out: Option<&PathBuf>) -> Result<PathBuf> {
    cli.out
        .clone()
        .or_else(|| cfg_out.cloned())
        .ok_or_else(|| Error::Config("--out is required for this command".into()))
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v).map_err(|e| Error::json("output", e))?);
    Ok(())
}

fn synth_data(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let out = require_out(cli, None)?;
    let seed = cli.seed.unwrap_or(0);
    let mut summary = serde_json::Map::new();
    for mut spec in desk_corpora(seed) {
        if let Some(d) = a.duration {
            spec.duration_s = (d, d);
        }
        spec.validate()?;
        let dir = out.join(&spec.name);
        let (manifest, trials) = if a.inline {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let (m, t) = make_corpus(&spec, None)?;
            m.save(&dir.join("manifest.jsonl"))?;
            if let Some(t) = &t {
                t.save(&dir.join("trials.txt"))?;
            }
            (m, t)
        } else {
            make_corpus(&spec, Some(&dir))?
        };
        info!("{}: {} utterances in {}", spec.name, manifest.len(), dir.display());
        summary.insert(
            spec.name.clone(),
            serde_json::json!({
                "utterances": manifest.len(),
                "speakers": manifest.speakers().len(),
                "trials": trials.as_ref().map(TrialList::len),
            }),
        );
    }
    print_json(&serde_json::Value::Object(summary))
}

fn count(a: &CountArgs) -> Result<()> {
    let backbone = BackboneConfig::preset(&a.backbone)?;
    let petl = a.petl.resolve(None)?.unwrap_or_else(PetlConfig::fixed);
    petl.validate(&backbone)?;
    let report = count_params(&backbone, &petl);
    println!("{}", report.table());
    println!("{}", report.to_json());
    Ok(())
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn apply_common(cli: &Cli, cfg: &mut RunConfig) {
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.deterministic |= cli.deterministic;
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut cfg = load_run_config(a.config.as_deref())?;
    apply_common(cli, &mut cfg);
    if let Some(b) = &a.backbone {
        cfg.backbone = BackboneConfig::preset(b)?;
        cfg.mhfa = None;
    }
    let base_petl = cfg.train_config().petl;
    cfg.petl = a.petl.resolve(Some(&base_petl))?.or(cfg.petl);
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.lr {
        t.base_lr = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.crop {
        t.crop_s = v;
    }
    if let Some(v) = &a.init_from {
        t.init_from = Some(v.clone());
    }
    if let Some(m) = &a.manifest {
        cfg.paths.manifest = Some(m.clone());
    }
    cfg.validate()?;
    let out = require_out(cli, cfg.paths.out.as_ref())?;
    let manifest_path = cfg
        .paths
        .manifest
        .clone()
        .ok_or_else(|| Error::Config("no training manifest (--manifest or paths.manifest)".into()))?;
    let manifest = Manifest::load(&manifest_path)?;
    cfg.echo(&out)?;
    let outcome = train(&cfg.model(), &cfg.train_config(), &manifest, Some(&out))?;
    print_json(&serde_json::json!({
        "checkpoint": outcome.checkpoint,
        "epoch_losses": outcome.epoch_losses,
        "final_lr": outcome.final_lr,
    }))
}

fn lm_ft_cmd(cli: &Cli, a: &LmFtArgs) -> Result<()> {
    let out = require_out(cli, None)?;
    let mut lm = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<LmFtConfig>(&text).map_err(|e| Error::json("LM-FT config", e))?
        }
        None => LmFtConfig::default(),
    };
    if let Some(v) = a.epochs {
        lm.extra_epochs = v;
    }
    if let Some(v) = a.margin {
        lm.margin = v;
    }
    if let Some(v) = a.crop {
        lm.crop_s = v;
    }
    let manifest = Manifest::load(&a.manifest)?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let echo = serde_json::json!({ "lm_ft": lm, "ckpt": a.ckpt, "manifest": a.manifest });
    std::fs::write(out.join("run.json"), echo.to_string()).map_err(|e| Error::io(out.join("run.json"), e))?;
    let outcome = lm_finetune(&a.ckpt, &lm, &manifest, Some(&out))?;
    print_json(&serde_json::json!({
        "checkpoint": outcome.checkpoint,
        "epoch_losses": outcome.epoch_losses,
    }))
}

fn two_stage_cmd(cli: &Cli, a: &TwoStageArgs) -> Result<()> {
    let mut cfg = load_run_config(a.config.as_deref())?;
    apply_common(cli, &mut cfg);
    let base_petl = cfg.stage2_config().petl;
    cfg.petl = a.petl.resolve(Some(&base_petl))?.or(cfg.petl);
    for t in [&mut cfg.train].into_iter().chain(cfg.stage2.as_mut()) {
        if let Some(v) = a.epochs {
            t.epochs = v;
        }
        if let Some(v) = a.lr {
            t.base_lr = v;
        }
    }
    if let Some(p) = &a.intermediate {
        cfg.paths.intermediate = Some(p.clone());
    }
    if let Some(p) = &a.target {
        cfg.paths.target = Some(p.clone());
    }
    cfg.validate()?;
    let out = require_out(cli, cfg.paths.out.as_ref())?;
    let load = |p: &Option<PathBuf>, what: &str| -> Result<Manifest> {
        let p = p
            .as_ref()
            .ok_or_else(|| Error::Config(format!("no {what} manifest")))?;
        Manifest::load(p)
    };
    let inter = load(&cfg.paths.intermediate, "intermediate")?;
    let target = load(&cfg.paths.target, "target")?;
    cfg.echo(&out)?;
    let mut stage1 = cfg.train_config();
    stage1.petl = PetlConfig::full();
    let outcome = two_stage(&cfg.model(), &stage1, &cfg.stage2_config(), &inter, &target, &out)?;
    print_json(&serde_json::json!({
        "stage1": outcome.stage1.checkpoint,
        "stage2": outcome.stage2.checkpoint,
        "stage1_losses": outcome.stage1.epoch_losses,
        "stage2_losses": outcome.stage2.epoch_losses,
    }))
}

fn eval_cmd(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let trials = TrialList::load(&a.trials)?;
    let manifest_path = a
        .manifest
        .clone()
        .unwrap_or_else(|| a.trials.with_file_name("manifest.jsonl"));
    let manifest = Manifest::load(&manifest_path)?;
    let report = evaluate(&a.ckpt, &manifest, &trials, cli.out.as_deref())?;
    print_json(&serde_json::to_value(&report).map_err(|e| Error::json("metrics", e))?)
}

fn dump_presets() -> Result<()> {
    let mut map = serde_json::Map::new();
    for name in BackboneConfig::preset_names() {
        let b = BackboneConfig::preset(name)?;
        let mhfa = MhfaConfig::for_backbone(&b);
        map.insert(name.to_string(), serde_json::json!({ "backbone": b, "mhfa": mhfa }));
    }
    print_json(&serde_json::Value::Object(map))
}
