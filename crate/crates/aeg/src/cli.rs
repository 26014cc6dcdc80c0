//! Command-line surface.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::backend::make_backend;
use crate::config::{BackendKind, CalibrationKind, KeyframeKind, OverlapKind, PolicyKind, RunConfig, MAX_K};
use crate::error::{exit, AegError};
use crate::pipeline::{self, Summary};

#[derive(Debug, Parser)]
#[command(name = "aeg", version, about = "Affordance-enhanced scene graphs for household rearrangement")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand; they override the config file.
#[derive(Debug, Args, Default)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    /// Mock rules JSON file.
    #[arg(long, global = true)]
    pub rules: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    /// Chat-completions URL for the HTTP backend.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    #[arg(long, global = true)]
    pub cache_dir: Option<String>,
    /// Maximum concurrent LLM calls.
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub task: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub calibration: Option<CalibrationKind>,
    #[arg(long, global = true, value_enum)]
    pub keyframe: Option<KeyframeKind>,
    #[arg(long, global = true, value_enum)]
    pub failure_policy: Option<PolicyKind>,
    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scene file → scene graph with spatial relations and keyframes.
    Build {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Near distance in metres.
        #[arg(long)]
        near: Option<f64>,
        /// Footprint overlap ratio for the stacked rule.
        #[arg(long)]
        iou: Option<f64>,
        /// Vertical gap in metres for the stacked rule.
        #[arg(long)]
        gap: Option<f64>,
        #[arg(long, value_enum)]
        overlap: Option<OverlapKind>,
    },
    /// Adds the room → area hierarchy.
    Cluster {
        #[arg(long)]
        sg: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Adds affordance records and semantic edges.
    Enhance {
        #[arg(long)]
        sg: PathBuf,
        /// Directory holding the frame images.
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scores every carriable on its current receptacle.
    Detect {
        #[arg(long)]
        aeg: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<u8>,
    },
    /// Picks a new receptacle for every misplaced carriable.
    Plan {
        #[arg(long)]
        aeg: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..=MAX_K as u64))]
        k: Option<u64>,
    },
    /// Scores every node's relevance to an activity.
    Heatmap {
        #[arg(long)]
        aeg: PathBuf,
        #[arg(long)]
        activity: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generates messy scenes and their truth table.
    Messy {
        #[arg(long)]
        scene: PathBuf,
        /// Annotation file listing the carriable categories to place.
        #[arg(long)]
        pool: PathBuf,
        /// Items placed per scene.
        #[arg(long)]
        n: Option<usize>,
        /// Number of scenes.
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs the benchmark over a messy-scene directory.
    Eval {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write one CSV row per evaluated carriable.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// Config file first, then global flags, then subcommand flags.
pub fn effective_config(cli: &Cli) -> Result<RunConfig, AegError> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = g.backend {
        cfg.backend = v;
    }
    if let Some(v) = &g.rules {
        cfg.mock_rules = Some(v.clone());
        cfg.rules_base = None;
    }
    if let Some(v) = &g.model {
        cfg.model_id.clone_from(v);
    }
    if let Some(v) = g.temperature {
        cfg.temperature = v;
    }
    if let Some(v) = &g.endpoint {
        cfg.endpoint.clone_from(v);
    }
    if let Some(v) = &g.cache_dir {
        cfg.cache_dir = Some(v.clone());
        cfg.cache_base = None;
    }
    if let Some(v) = g.concurrency {
        cfg.concurrency = v;
    }
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = &g.task {
        cfg.task.clone_from(v);
    }
    if let Some(v) = g.calibration {
        cfg.calibration = v;
    }
    if let Some(v) = g.keyframe {
        cfg.keyframe.strategy = v;
    }
    if let Some(v) = g.failure_policy {
        cfg.failure_policy = v;
    }
    match &cli.command {
        Command::Build { near, iou, gap, overlap, .. } => {
            if let Some(v) = near {
                cfg.relation.near_threshold = *v;
            }
            if let Some(v) = iou {
                cfg.relation.xy_iou_threshold = *v;
            }
            if let Some(v) = gap {
                cfg.relation.support_gap = *v;
            }
            if let Some(v) = overlap {
                cfg.relation.overlap = *v;
            }
        }
        Command::Cluster { tau: Some(v), .. } => cfg.tau = *v,
        Command::Detect { threshold: Some(v), .. } => cfg.threshold = *v,
        Command::Plan { k: Some(v), .. } => cfg.k = *v as usize,
        Command::Messy { n, scenes, .. } => {
            if let Some(v) = n {
                cfg.messy.n_place = *v;
            }
            if let Some(v) = scenes {
                cfg.messy.scenes = *v;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<Summary, AegError> {
    let cfg = effective_config(cli)?;
    match &cli.command {
        Command::Build { scene, out, .. } => pipeline::build(scene, out, &cfg),
        Command::Cluster { sg, out, .. } => pipeline::cluster(sg, out, &cfg),
        Command::Enhance { sg, frames, out } => {
            if !frames.is_dir() {
                return Err(AegError::Usage(format!("frames directory `{}` does not exist", frames.display())));
            }
            let backend = make_backend(&cfg, Some(frames))?;
            pipeline::enhance_graph(sg, out, &cfg, &backend)
        }
        Command::Detect { aeg, out, .. } => pipeline::detect(aeg, out, &cfg, &make_backend(&cfg, None)?),
        Command::Plan { aeg, out, .. } => pipeline::plan(aeg, out, &cfg, &make_backend(&cfg, None)?),
        Command::Heatmap { aeg, activity, out } => {
            pipeline::heatmap(aeg, activity, out, &cfg, &make_backend(&cfg, None)?)
        }
        Command::Messy { scene, pool, out, .. } => pipeline::messy(scene, pool, cfg.messy.n_place, out, &cfg),
        Command::Eval { scenes, gt, out, csv } => {
            pipeline::eval(scenes, gt, out, csv.as_deref(), &cfg, &make_backend(&cfg, None)?)
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
}

/// Parses `args`, runs the command and prints one JSON line: the summary on
/// stdout, or the error on stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = AegError::Usage(e.render().to_string().lines().next().unwrap_or_default().to_string());
            eprintln!("{}", err.to_json_line());
            return ExitCode::from(exit::GENERIC);
        }
    };
    init_logging(cli.global.verbose);
    match run(&cli) {
        Ok(summary) => {
            let outputs: Vec<String> = summary.outputs.iter().map(|p| p.display().to_string()).collect();
            println!("{}", serde_json::json!({"status": "ok", "outputs": outputs, "warnings": summary.warnings}));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code())
        }
    }
}
