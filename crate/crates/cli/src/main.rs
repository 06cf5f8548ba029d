use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use edge_rrm::harness::metrics::{parse_trace, parse_trace_stem, summarize, write_summary};
use edge_rrm::harness::{run_experiment, ExperimentConfig, Mode};
use edge_rrm::Error;

/// Importance-aware data acquisition experiments over fading channels.
#[derive(Parser)]
#[command(name = "edge-rrm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write traces and summaries.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated replicate seeds, overriding the config.
        #[arg(long, value_delimiter = ',')]
        seed_list: Option<Vec<u64>>,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Experiment mode, overriding the config.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Check a config file and its data paths without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Recompute a summary from trace files named `{policy}_seed{n}.csv`.
    Summarize {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Budget grid spacing for ARQ traces.
        #[arg(long, default_value_t = 100)]
        grid_step: usize,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load_config(
    path: &Path,
    seeds: Option<Vec<u64>>,
    out: Option<PathBuf>,
    mode: Option<String>,
) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path).map_err(|e| match e {
        Error::Io { .. } => Failure::Config(e.to_string()),
        other => other.into(),
    })?;
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    if let Some(o) = out {
        cfg.out_dir = Some(o);
    }
    if let Some(m) = mode {
        cfg.mode = Mode::parse(&m)?;
    }
    cfg.validate()?;
    cfg.check_files()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            seed_list,
            out,
            mode,
        } => {
            let cfg = load_config(&config, seed_list, out, mode)?;
            let out_dir = cfg
                .out_dir
                .clone()
                .ok_or_else(|| Failure::Config("out_dir: not set (use --out)".into()))?;
            let output = run_experiment(&cfg)?;
            output.write(&out_dir)?;
            for row in &output.summary {
                let last = output
                    .summary
                    .iter()
                    .filter(|r| r.policy == row.policy)
                    .last()
                    .expect("row exists");
                if std::ptr::eq(row, last) {
                    println!(
                        "{}: final accuracy {:.4} +/- {:.4} over {} replicates",
                        row.policy, row.mean_accuracy, row.std_accuracy, row.replicates
                    );
                }
            }
            println!("wrote {}", out_dir.display());
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load_config(&config, None, None, None)?;
            println!(
                "ok: mode {}, {} seeds, policies {}",
                cfg.mode.name(),
                cfg.seeds.len(),
                cfg.policy_names().join(",")
            );
            Ok(())
        }
        Command::Summarize {
            traces,
            grid_step,
            out,
        } => {
            let mut parsed = Vec::new();
            for path in &traces {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                let (policy, _) = parse_trace_stem(stem).ok_or_else(|| {
                    Failure::Config(format!(
                        "{}: file name must look like <policy>_seed<n>.csv",
                        path.display()
                    ))
                })?;
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Config(Error::io(path, e).to_string()))?;
                let trace = parse_trace(&text).map_err(|e| {
                    Failure::Runtime(format!("{}: {e}", path.display()))
                })?;
                parsed.push((policy.to_string(), trace));
            }
            let rows = summarize(&parsed, grid_step)?;
            let mut buf = Vec::new();
            write_summary(&rows, &mut buf).expect("writing to a Vec cannot fail");
            match out {
                Some(p) => std::fs::write(&p, buf)
                    .map_err(|e| Failure::Runtime(Error::io(&p, e).to_string()))?,
                None => print!("{}", String::from_utf8_lossy(&buf)),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
