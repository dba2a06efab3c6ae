use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use volmocap::eval::{AP_THRESHOLDS_MM, PCK_THRESHOLD_MM};
use volmocap_cli::commands;
use volmocap_cli::config::PipelineConfig;
use volmocap_cli::{CliError, Result};

/// Multi-person 3D pose estimation from multi-view 2D heatmaps.
#[derive(Parser)]
#[command(name = "volmocap", version)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.augment.seed = seed;
            cfg.train.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset of heatmaps with ground truth.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        people: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train the network on a synthetic dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Estimate skeletons for every heatmap frame of a directory.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Dataset directory or directory of `.heatmaps.bin` files.
        #[arg(long)]
        input: PathBuf,
        /// Output JSONL sequence.
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write intermediate volumes into this directory.
        #[arg(long)]
        dump_volumes: Option<PathBuf>,
        #[arg(long, overrides_with = "tracking")]
        no_tracking: bool,
        #[arg(long)]
        tracking: bool,
        #[arg(long)]
        temporal_filter: bool,
    },
    /// Compare estimates with ground truth.
    Eval {
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        #[arg(long, default_value = "eval")]
        output: PathBuf,
        #[arg(long, default_value_t = PCK_THRESHOLD_MM)]
        pck_threshold: f64,
        /// AP distance thresholds in mm.
        #[arg(long, value_delimiter = ',', default_values_t = AP_THRESHOLDS_MM.to_vec())]
        ap_thresholds: Vec<f64>,
    },
    /// Redraw the plots of a report.
    ExportPlots {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("summaries serialize"));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, count, people, output } => {
            let mut cfg = common.load()?;
            cfg.synth.count = count.unwrap_or(cfg.synth.count);
            cfg.synth.people = people.unwrap_or(cfg.synth.people);
            if cfg.synth.people == 0 {
                return Err(CliError::Schema { file: common.config, message: "synth.people: at least one person per scene".into() });
            }
            cfg.dataset = output.unwrap_or(cfg.dataset);
            print_json(&commands::synth(&cfg)?);
        }
        Command::Train { common, epochs, dataset, checkpoint } => {
            let mut cfg = common.load()?;
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            cfg.dataset = dataset.unwrap_or(cfg.dataset);
            cfg.checkpoint = checkpoint.unwrap_or(cfg.checkpoint);
            let s = commands::train(&cfg)?;
            println!("checkpoint {} ({} samples, {} held out, {} epochs)", s.checkpoint.display(), s.samples, s.holdout, s.epochs.len());
        }
        Command::Infer { common, input, output, checkpoint, dump_volumes, no_tracking, tracking, temporal_filter } => {
            let mut cfg = common.load()?;
            cfg.checkpoint = checkpoint.unwrap_or(cfg.checkpoint);
            if no_tracking {
                cfg.inference.tracking = false;
            } else if tracking {
                cfg.inference.tracking = true;
            }
            cfg.inference.temporal_filter |= temporal_filter;
            print_json(&commands::infer(&cfg, &input, &output, dump_volumes.as_deref())?);
        }
        Command::Eval { estimates, ground_truth, output, pck_threshold, ap_thresholds } => {
            let out = commands::eval(&estimates, &ground_truth, pck_threshold, &ap_thresholds, &output)?;
            let m = &out.metrics;
            let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.1}"));
            println!("frames {} gt {} estimates {} matched {}", m.frames, m.gt_poses, m.estimated_poses, m.matched_poses);
            println!("MPJPE {} mm, PCK@{} {:.1}%", fmt(m.mpjpe_mm), m.pck_threshold_mm, m.pck);
            for (t, ap) in &m.average_precision {
                println!("AP@{t} {ap:.1}%");
            }
            println!("center error {} mm", fmt(out.center_error_mm));
        }
        Command::ExportPlots { report, output } => {
            for p in commands::export_plots(&report, &output)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
