//! Command line of `zerocast-bench`, including the hidden worker roles the
//! coordinator re-executes itself as.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::{
    bridge_overheads, format_summary, load, run_bridge_suite, run_latency_suite, run_load_suite, save, summarize,
    worker, BenchError, Dataset, ExperimentConfig, TransportKind, LOAD_SUITE_SIZE,
};

#[derive(Debug, Parser)]
#[command(name = "zerocast-bench", about = "Latency, load-stability and bridge-overhead measurements")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Latency against message size for zero-copy and baseline.
    Latency(SuiteArgs),
    /// Latency and CV under synthetic CPU load (100 KiB messages by default).
    Load(SuiteArgs),
    /// Bridged routes against plain baseline.
    Bridge(SuiteArgs),
    /// Runs the load generator and reports the CPU utilization the OS saw.
    Calibrate {
        #[arg(long, default_value_t = 50)]
        load: u32,
        #[arg(long, default_value_t = 3.0)]
        seconds: f64,
    },
    #[command(subcommand, hide = true)]
    Worker(WorkerCommand),
}

#[derive(Debug, Clone, Args)]
pub struct SuiteArgs {
    /// Message sizes, e.g. `1K,10K,100K,1M`.
    #[arg(long, value_delimiter = ',', value_parser = parse_size)]
    pub sizes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 100)]
    pub period_ms: u64,
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    /// CPU loads in percent (load suite only).
    #[arg(long, value_delimiter = ',')]
    pub loads: Option<Vec<u32>>,
    /// Transports to measure (latency and load suites).
    #[arg(long, value_delimiter = ',')]
    pub transports: Option<Vec<TransportKind>>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Existing broker socket; a private broker is started when omitted.
    #[arg(long)]
    pub broker: Option<PathBuf>,
    /// FIFO scheduling for measurement processes (default: on for `load`).
    #[arg(long, value_enum)]
    pub priority: Option<PriorityArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriorityArg {
    Fifo,
    Default,
}

impl clap::ValueEnum for TransportKind {
    fn value_variants<'a>() -> &'a [Self] {
        &[
            TransportKind::ZeroCopy,
            TransportKind::Baseline,
            TransportKind::BridgeZcToBaseline,
            TransportKind::BridgeBaselineToZc,
        ]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Side {
    Zerocopy,
    Baseline,
}

#[derive(Debug, Subcommand)]
pub enum WorkerCommand {
    Sub {
        #[arg(long, value_enum)]
        transport: Side,
        #[arg(long)]
        topic: String,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        timeout_ms: u64,
        #[arg(long)]
        broker: PathBuf,
        #[arg(long)]
        realtime: bool,
    },
    Pub {
        #[arg(long, value_enum)]
        transport: Side,
        #[arg(long)]
        topic: String,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        period_us: u64,
        #[arg(long)]
        broker: PathBuf,
        #[arg(long)]
        realtime: bool,
    },
    Bridge {
        #[arg(long)]
        topic: String,
        #[arg(long)]
        direction: crate::bridge::Direction,
        #[arg(long)]
        broker: PathBuf,
        #[arg(long)]
        realtime: bool,
    },
}

/// Accepts plain byte counts and `K`/`KiB`/`M`/`MiB` suffixes (powers of 1024).
pub fn parse_size(s: &str) -> Result<usize, String> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (digits, unit) = s.split_at(split);
    let n: usize = digits.parse().map_err(|_| format!("bad size {s:?}"))?;
    let mult = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kib" | "kb" => 1 << 10,
        "m" | "mib" | "mb" => 1 << 20,
        other => return Err(format!("unknown size unit {other:?}")),
    };
    n.checked_mul(mult).ok_or_else(|| format!("size {s:?} overflows"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Suite {
    Latency,
    Load,
    Bridge,
}

impl SuiteArgs {
    fn config(&self, suite: Suite) -> ExperimentConfig {
        let defaults = ExperimentConfig::default();
        ExperimentConfig {
            sizes: self.sizes.clone().unwrap_or_else(|| match suite {
                Suite::Load => vec![LOAD_SUITE_SIZE],
                _ => defaults.sizes.clone(),
            }),
            count: self.count,
            period: Duration::from_millis(self.period_ms),
            warmup_excluded: self.warmup,
            loads: match suite {
                Suite::Load => self.loads.clone().unwrap_or(defaults.loads.clone()),
                _ => vec![0],
            },
            transports: self.transports.clone().unwrap_or(defaults.transports.clone()),
            broker: self.broker.clone(),
            realtime: match self.priority {
                Some(p) => p == PriorityArg::Fifo,
                None => suite == Suite::Load,
            },
            ..defaults
        }
    }
}

fn run_suite(suite: Suite, args: &SuiteArgs) -> Result<Dataset, BenchError> {
    let config = args.config(suite);
    let dataset = match suite {
        Suite::Latency => run_latency_suite(&config)?,
        Suite::Load => run_load_suite(&config)?,
        Suite::Bridge => run_bridge_suite(&config)?,
    };
    save(&dataset, args.out.as_deref())?;
    let summary = summarize(&dataset)?;
    // The table goes to stderr when the CSV occupies stdout.
    let mut report = format!("prio={}\n{}", dataset.priority.as_str(), format_summary(&summary));
    if suite == Suite::Bridge {
        report.push_str("\nbridge overhead (median, bridged - baseline):\n");
        for (k, v) in bridge_overheads(&summary) {
            report.push_str(&format!("{:<22} {:>9} {:>10.1} us\n", k.transport.as_str(), k.size_bytes, v / 1000.0));
        }
    }
    if args.out.is_some() {
        print!("{report}");
    } else {
        eprint!("{report}");
    }
    Ok(dataset)
}

/// Entry point of the `zerocast-bench` binary. Exit code 2 means at least one
/// cell was aborted by the callback timeout.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    super::tune_allocator();
    let suite = match &cli.command {
        Command::Latency(a) => Some((Suite::Latency, a)),
        Command::Load(a) => Some((Suite::Load, a)),
        Command::Bridge(a) => Some((Suite::Bridge, a)),
        Command::Calibrate { load: pct, seconds } => {
            return match load::calibrate(*pct, Duration::from_secs_f64(*seconds)) {
                Ok(measured) => {
                    println!("target={pct}% measured={measured:.1}%");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("zerocast-bench: calibration failed: {e}");
                    ExitCode::FAILURE
                }
            };
        }
        Command::Worker(w) => {
            return match worker::run(w) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("zerocast-bench worker: {e}");
                    ExitCode::FAILURE
                }
            };
        }
    };
    let (suite, args) = suite.expect("suite command");
    match run_suite(suite, args) {
        Ok(d) if d.incomplete.is_empty() => ExitCode::SUCCESS,
        Ok(d) => {
            for k in &d.incomplete {
                eprintln!("zerocast-bench: cell {k} incomplete");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("zerocast-bench: {e}");
            ExitCode::FAILURE
        }
    }
}
