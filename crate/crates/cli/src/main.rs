use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use classleak::harness::{self, ExperimentConfig, Manifest, MANIFEST_FILE};
use classleak::world::io::export_instances;
use classleak::{par, Error};

/// Membership and attribute inference experiments against simulated student APIs.
#[derive(Parser, Debug)]
#[command(name = "classleak", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the configured world and export it as an instance CSV.
    GenWorld {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every configured attack and defense over every seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Replaces the configured seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to all cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Re-render CSVs (and plots) from a run manifest.
    Report {
        /// Manifest file, or the run directory holding it.
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to the manifest's directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Write SVG ROC plots even if the run did not ask for them.
        #[arg(long)]
        plots: bool,
    },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_STAGE: u8 = 2;

fn config_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("config error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn stage_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("stage failure: {e}");
    ExitCode::from(EXIT_STAGE)
}

fn classify(e: Error) -> ExitCode {
    match e {
        Error::Config { .. } | Error::Json(_) => config_error(e),
        other => stage_error(other),
    }
}

fn gen_world(config: &Path, out_dir: &Path, seed: Option<u64>) -> ExitCode {
    let cfg = match ExperimentConfig::from_path(config) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    let seed = seed.unwrap_or(cfg.evaluation.seeds[0]);
    let world = match harness::build_world(&cfg.world, seed) {
        Ok(w) => w,
        Err(e) => return classify(e),
    };
    if let Err(e) = std::fs::create_dir_all(out_dir) {
        return stage_error(e);
    }
    let path = out_dir.join("world.csv");
    match export_instances(&world, &path) {
        Ok(()) => {
            println!("wrote {}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => stage_error(e),
    }
}

fn report_status(m: &Manifest, out_dir: &Path) -> ExitCode {
    for s in m.errors() {
        eprintln!("stage `{}` failed: {}", s.name, s.error.as_deref().unwrap_or(""));
    }
    println!("{} result cell(s) written to {}", m.results.len(), out_dir.display());
    if m.succeeded() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_STAGE)
    }
}

fn run(config: &Path, out_dir: Option<PathBuf>, seed: Option<u64>, jobs: Option<usize>) -> ExitCode {
    let mut cfg = match ExperimentConfig::from_path(config) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    if let Some(s) = seed {
        cfg.evaluation.seeds = vec![s];
    }
    if jobs == Some(0) {
        return config_error("--jobs must be at least 1");
    }
    let Some(out_dir) = out_dir.or_else(|| cfg.output_dir.clone()) else {
        return config_error("no output directory: pass --out-dir or set output_dir");
    };
    match par::with_jobs(jobs, || harness::run_experiment(&cfg, &out_dir)) {
        Ok(m) => report_status(&m, &out_dir),
        Err(e) => classify(e),
    }
}

fn report(manifest: &Path, out_dir: Option<PathBuf>, plots: bool) -> ExitCode {
    let file = if manifest.is_dir() { manifest.join(MANIFEST_FILE) } else { manifest.to_path_buf() };
    let mut m = match harness::load_manifest(&file) {
        Ok(m) => m,
        Err(e) => return config_error(format!("{}: {e}", file.display())),
    };
    m.config.plots |= plots;
    let out_dir = out_dir.unwrap_or_else(|| file.parent().map(Path::to_path_buf).unwrap_or_default());
    match harness::render(&m, &out_dir) {
        Ok(()) => report_status(&m, &out_dir),
        Err(e) => stage_error(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::GenWorld { config, out_dir, seed } => gen_world(&config, &out_dir, seed),
        Command::Run {
            config,
            out_dir,
            seed,
            jobs,
        } => run(&config, out_dir, seed, jobs),
        Command::Report { manifest, out_dir, plots } => report(&manifest, out_dir, plots),
    }
}
