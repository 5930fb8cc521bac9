mod commands;
mod config;
mod failure;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dualhand::pseudolabel::Provenance;

/// Dual-view hand pose adaptation experiments on synthetic data.
///
/// Exit codes: 0 success, 2 usage, 3 configuration error, 4 data error,
/// 5 numerical failure.
#[derive(Parser)]
#[command(name = "dualhand", version)]
struct Cli {
    /// Root that relative output directories are placed under.
    #[arg(long, env = "DUALHAND_OUT_ROOT", global = true)]
    out_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablate {
    AbmOnly,
    RgrOnly,
    None,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset from the [scene] section of a config file.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Initialize the rotation and adapt on a dataset.
    Adapt {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "none")]
        ablate: Ablate,
        /// Continue from a checkpoint written with the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Score a checkpoint, optionally sweeping the adaptation-set size.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        sweep_n: Option<Vec<usize>>,
        #[arg(long)]
        force: bool,
    },
    /// Compare completed runs on the same dataset.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

fn under(root: &Option<PathBuf>, path: &Path) -> PathBuf {
    match root {
        Some(root) if path.is_relative() => root.join(path),
        _ => path.to_path_buf(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let root = &cli.out_root;
    let result = match &cli.command {
        Command::Synth { config, out, force } => commands::synth(config, &under(root, out), *force),
        Command::Adapt {
            data,
            config,
            out,
            ablate,
            resume,
            force,
        } => {
            let mode = match ablate {
                Ablate::AbmOnly => Some(Provenance::AbmOnly),
                Ablate::RgrOnly => Some(Provenance::RgrOnly),
                Ablate::None => None,
            };
            commands::adapt(
                data,
                config,
                &under(root, out),
                mode,
                resume.as_deref(),
                *force,
            )
        }
        Command::Eval {
            data,
            ckpt,
            out,
            sweep_n,
            force,
        } => commands::eval(data, ckpt, &under(root, out), sweep_n.as_deref(), *force),
        Command::Report { runs, out, force } => {
            let runs: Vec<PathBuf> = runs.iter().map(|r| under(root, r)).collect();
            commands::report(
                &runs,
                out.as_ref().map(|o| under(root, o)).as_deref(),
                *force,
            )
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error ({}): {f}", f.kind());
            f.exit_code()
        }
    }
}
