//! `splatlift`: associate per-view masks on a Gaussian scene, lift them into
//! identity encodings, render, evaluate and edit.
//!
//! Failures print one JSON line `{"error": {"kind": ..., "messages": [...]}}`
//! on stderr and exit with status 2 for configuration problems, 1 otherwise.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splatlift::pipeline::{self, EvalOptions, RunConfig, RunRecord};
use splatlift::rasterizer::RenderOptions;
use splatlift::synthetic::SyntheticSpec;
use splatlift::Error;

#[derive(Parser)]
#[command(name = "splatlift", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run config (TOML). Defaults apply to everything not given.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output root.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene, ground truth and corrupted masks.
    Synth {
        /// Synthetic spec (TOML); the defaults give 8 instances and 24 views.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Associate masks across views through the memory bank.
    Associate {
        #[command(flatten)]
        common: Common,
        /// Named ablation preset replacing the association section.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Train identity encodings on the associated masks.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Render color and label images of the trained field.
    Render {
        #[command(flatten)]
        common: Common,
        /// Comma-separated camera ids; all cameras when omitted.
        #[arg(long, value_delimiter = ',')]
        views: Option<Vec<u32>>,
    },
    /// Score predicted label maps against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also report mean boundary IoU.
        #[arg(long)]
        boundary: bool,
        #[arg(long, default_value_t = EvalOptions::default().band_frac)]
        band_frac: f64,
        /// Full-data `report.json`; adds the relative IoU drop of this run.
        #[arg(long)]
        sparse_baseline: Option<PathBuf>,
    },
    /// Apply an edit script to the trained scene.
    Edit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        script: PathBuf,
    },
    /// List the shipped association ablation presets.
    Presets,
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.paths.out = out.clone();
    }
    Ok(cfg)
}

fn load_spec(path: Option<&Path>) -> Result<SyntheticSpec, Error> {
    let Some(path) = path else {
        return Ok(SyntheticSpec::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
    toml::from_str(&text).map_err(|e| Error::Config(vec![format!("{}: {}", path.display(), e.message())]))
}

fn report(record: &RunRecord) {
    eprintln!("{} done in {:.2}s", record.command, record.total_s);
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth { spec, seed, out } => {
            let mut spec = load_spec(spec.as_deref())?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            report(&pipeline::cmd_synth(&spec, &out, &RenderOptions::default())?);
        }
        Command::Associate { common, preset } => {
            let mut cfg = load_config(&common)?;
            if let Some(name) = preset {
                cfg.association = pipeline::preset(&name)
                    .ok_or_else(|| Error::Config(vec![format!("unknown preset {name}")]))?;
            }
            report(&pipeline::cmd_associate(&cfg)?);
        }
        Command::Train { common } => report(&pipeline::cmd_train(&load_config(&common)?)?),
        Command::Render { common, views } => {
            report(&pipeline::cmd_render(&load_config(&common)?, views.as_deref())?)
        }
        Command::Eval {
            pred,
            gt,
            out,
            boundary,
            band_frac,
            sparse_baseline,
        } => {
            let opts = EvalOptions { boundary, band_frac };
            let (summary, record) = pipeline::cmd_eval(&pred, &gt, &opts, sparse_baseline.as_deref(), &out)?;
            print!("{}", summary.report.table());
            if let Some(d) = summary.iou_drop {
                println!("IoU drop vs baseline {:.2}%", 100.0 * d);
            }
            report(&record);
        }
        Command::Edit { common, script } => report(&pipeline::cmd_edit(&load_config(&common)?, &script)?),
        Command::Presets => {
            for (name, cfg) in pipeline::ablation_presets() {
                println!("{name}: {}", serde_json::to_string(&cfg).expect("config serializes"));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = std::env::var("GAGA_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("GAGA_THREADS ignored: {e}");
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let messages = match &err {
                Error::Config(list) => list.clone(),
                other => vec![other.to_string()],
            };
            let line = serde_json::json!({ "error": { "kind": err.kind(), "messages": messages } });
            eprintln!("{line}");
            ExitCode::from(if matches!(err, Error::Config(_)) { 2 } else { 1 })
        }
    }
}
