use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use escrow_scenarios::ads::{self, ModelKind};
use escrow_scenarios::bench::{self, IntermediatesOptions, ShortCircuitOptions};
use escrow_scenarios::patterns::{self, Pattern};
use escrow_scenarios::{Result, fraud, health};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "escrow-scenario", about = "Run the example sharing scenarios and benchmarks against an embedded escrow")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Replay a scenario from an empty escrow and print its report as JSON.
    Run {
        scenario: Scenario,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Keep the escrow's files here instead of a temporary directory.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Time a benchmark; writes JSON to --out and CSV next to it.
    Bench {
        benchmark: Benchmark,
        /// Rows per source (intermediates) or total training bytes (shortcircuit).
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<u64>,
        #[arg(long, default_value_t = 5)]
        runs: u32,
        #[arg(long, value_enum, default_value_t = Model::Lr)]
        model: Model,
        #[arg(long)]
        seed: Option<u64>,
        /// Gradient steps per shortcircuit training run.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Fraud,
    Health,
    Ads,
    Patterns,
}

#[derive(Clone, Copy, ValueEnum)]
enum Benchmark {
    Intermediates,
    Shortcircuit,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Lr,
    Mlp,
}

fn print(v: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run { scenario, seed, dir } => {
            let tmp = tempfile::tempdir()?;
            let dir = dir.unwrap_or_else(|| tmp.path().to_path_buf());
            std::fs::create_dir_all(&dir)?;
            match scenario {
                Scenario::Fraud => print(&fraud::script(&dir, seed)?),
                Scenario::Health => print(&health::script(&dir, seed)?),
                Scenario::Ads => print(&ads::script(&dir, seed)?),
                Scenario::Patterns => {
                    let mut reports = Vec::new();
                    for p in Pattern::ALL {
                        let sub = dir.join(serde_json::to_value(p)?.as_str().unwrap_or("pattern"));
                        std::fs::create_dir_all(&sub)?;
                        reports.push(patterns::run(p, &sub, seed)?);
                    }
                    print(&reports)
                }
            }
        }
        Cmd::Bench { benchmark, sizes, runs, model, seed, epochs, out } => {
            let report = match benchmark {
                Benchmark::Intermediates => {
                    let mut o = IntermediatesOptions::default();
                    o.seed = seed.unwrap_or(o.seed);
                    let model = match model {
                        Model::Lr => ModelKind::Lr,
                        Model::Mlp => ModelKind::Mlp,
                    };
                    bench::bench_intermediates(&sizes, runs, model, &o)?
                }
                Benchmark::Shortcircuit => {
                    let mut o = ShortCircuitOptions::default();
                    o.seed = seed.unwrap_or(o.seed);
                    o.epochs = epochs.unwrap_or(o.epochs);
                    bench::bench_shortcircuit(&sizes, runs, &o)?
                }
            };
            report.write(&out)?;
            print(&report.summary)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("escrow-scenario: {e}");
            ExitCode::FAILURE
        }
    }
}
