use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use satl::runner::{self, ExperimentConfig, PlotKind, RunOptions};
use satl::Error;

/// Smoothness-adaptive transfer learning experiments.
#[derive(Parser)]
#[command(name = "satl", version, about)]
struct Cli {
    /// Worker threads (defaults to $SATL_WORKERS, then the core count).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a suite and write its results bundle.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// 100 trials and n from 1000 to 3000 in steps of 100.
        #[arg(long)]
        paper_scale: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Select the schedule constants by K-fold CV and print them as JSON.
    SelectC {
        config: PathBuf,
        #[arg(long)]
        paper_scale: bool,
    },
    /// Write figure data (x, mean, se, series) as TSV.
    PlotData {
        bundle: PathBuf,
        /// error_decay or tl_curves.
        #[arg(long)]
        kind: String,
        /// Comma-separated methods to keep; an empty value keeps none.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute one raw row in isolation and compare it with the bundle.
    RerunCell { bundle: PathBuf, row_id: usize },
}

fn load(path: &PathBuf, paper_scale: bool) -> satl::Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(path)?;
    Ok(if paper_scale { cfg.paper_scale() } else { cfg })
}

fn exit_code(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            paper_scale,
            quiet,
        } => {
            let cfg = match load(&config, paper_scale) {
                Ok(c) => c,
                Err(e) => return exit_code(&e),
            };
            let opts = RunOptions {
                workers: cli.workers,
                output_dir: out,
                quiet,
            };
            match runner::run_suite(&cfg, &opts) {
                Ok(report) => {
                    println!(
                        "wrote {} rows to {} ({} failed)",
                        report.rows,
                        report.dir.display(),
                        report.failed_rows
                    );
                    if report.failed_rows > 0 {
                        ExitCode::from(1)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => exit_code(&e),
            }
        }
        Command::SelectC {
            config,
            paper_scale,
        } => {
            let result = load(&config, paper_scale)
                .and_then(|cfg| runner::select_constants(&cfg, cli.workers))
                .and_then(|t| Ok(serde_json::to_string_pretty(&t)?));
            match result {
                Ok(text) => {
                    println!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => exit_code(&e),
            }
        }
        Command::PlotData {
            bundle,
            kind,
            methods,
            out,
        } => {
            let filter: Option<Vec<String>> = methods.map(|m| {
                m.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            });
            let result = kind
                .parse::<PlotKind>()
                .and_then(|k| runner::emit_plot_data(&bundle, k, filter.as_deref(), out.as_deref()));
            match result {
                Ok(path) => {
                    println!("{}", path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => exit_code(&e),
            }
        }
        Command::RerunCell { bundle, row_id } => match runner::rerun_cell(&bundle, row_id) {
            Ok(r) => {
                let show = |v: Option<f64>| v.map_or("-".to_string(), |x| x.to_string());
                println!(
                    "row {row_id}: {} n={} trial={} stored {} recomputed {} ({})",
                    r.recomputed.method,
                    r.recomputed.n,
                    r.recomputed.trial,
                    show(r.stored.squared_error),
                    show(r.recomputed.squared_error),
                    if r.identical { "identical" } else { "DIFFERENT" }
                );
                if r.identical {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(1)
                }
            }
            Err(e) => exit_code(&e),
        },
    }
}
