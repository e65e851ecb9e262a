//! Measurement harness: latency against message size, latency stability
//! under synthetic CPU load, and bridge overhead.
//!
//! The coordinator (this module) owns the broker, the load generator and the
//! schedule; publishers and subscribers run as separate processes spawned from
//! the bench executable's hidden `worker` subcommands. Latency is measured
//! from a monotonic timestamp the publisher writes into the message just
//! before the publish call to the first instruction of the subscriber
//! callback. All processes share one host clock, so samples are never
//! negative.

pub mod cli;
pub mod load;
pub mod stats;
pub mod worker;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::broker::{Broker, BrokerConfig, BrokerHandle};
pub use stats::{Summary, Summary32, Summary64};

/// FIFO priority of the publisher, broker and bridge threads.
pub const FIFO_PRIORITY: i32 = 50;

/// FIFO priority of subscriber processes, whose callback threads must become
/// ready ahead of everything else on the path.
pub const CALLBACK_PRIORITY: i32 = 60;

/// Pins glibc's trim and mmap thresholds so freed message buffers stay
/// mapped. With the dynamic defaults, sizes near 128 KiB are returned to the
/// OS after every message and the next one pays page faults, which shows up
/// as a size-specific latency step unrelated to the transport. Applied to
/// the coordinator and every worker alike.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator parameters.
    unsafe {
        libc::mallopt(libc::M_TRIM_THRESHOLD, 256 << 20);
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
    }
}

/// Size used by the load suite unless sizes are given explicitly.
pub const LOAD_SUITE_SIZE: usize = 100 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransportKind {
    ZeroCopy,
    Baseline,
    BridgeZcToBaseline,
    BridgeBaselineToZc,
}

impl TransportKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TransportKind::ZeroCopy => "zerocopy",
            TransportKind::Baseline => "baseline",
            TransportKind::BridgeZcToBaseline => "bridge_zc_to_baseline",
            TransportKind::BridgeBaselineToZc => "bridge_baseline_to_zc",
        }
    }

    /// Whether the publishing end is zero-copy.
    fn publishes_zero_copy(self) -> bool {
        matches!(self, TransportKind::ZeroCopy | TransportKind::BridgeZcToBaseline)
    }

    fn subscribes_zero_copy(self) -> bool {
        matches!(self, TransportKind::ZeroCopy | TransportKind::BridgeBaselineToZc)
    }

    fn bridge_direction(self) -> Option<&'static str> {
        match self {
            TransportKind::BridgeZcToBaseline => Some("zc-to-baseline"),
            TransportKind::BridgeBaselineToZc => Some("baseline-to-zc"),
            _ => None,
        }
    }
}

impl fmt::Display for TransportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransportKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zerocopy" => Ok(TransportKind::ZeroCopy),
            "baseline" => Ok(TransportKind::Baseline),
            "bridge_zc_to_baseline" => Ok(TransportKind::BridgeZcToBaseline),
            "bridge_baseline_to_zc" => Ok(TransportKind::BridgeBaselineToZc),
            other => Err(format!("unknown transport {other:?}")),
        }
    }
}

/// One measurement; `seq` counts from 0 including the excluded warmup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub transport: TransportKind,
    pub size_bytes: usize,
    pub load_pct: u32,
    pub seq: u64,
    pub latency_ns: u64,
}

impl Sample {
    pub fn cell(&self) -> CellKey {
        CellKey {
            transport: self.transport,
            size_bytes: self.size_bytes,
            load_pct: self.load_pct,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub transport: TransportKind,
    pub size_bytes: usize,
    pub load_pct: u32,
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}B/{}%", self.transport, self.size_bytes, self.load_pct)
    }
}

/// Scheduling class the measurement processes actually obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Priority {
    Fifo,
    Default,
}

impl Priority {
    pub fn as_str(self) -> &'static str {
        match self {
            Priority::Fifo => "fifo",
            Priority::Default => "default",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub priority: Priority,
    pub samples: Vec<Sample>,
    /// Cells aborted because a message did not arrive in time.
    pub incomplete: Vec<CellKey>,
}

impl Dataset {
    pub fn cell(&self, key: CellKey) -> Vec<u64> {
        self.samples.iter().filter(|s| s.cell() == key).map(|s| s.latency_ns).collect()
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error("worker failed: {0}")]
    Worker(String),
    #[error("no samples in cell {0}")]
    EmptyCell(CellKey),
    #[error("embedded broker: {0}")]
    Broker(String),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub sizes: Vec<usize>,
    pub count: usize,
    pub period: Duration,
    pub warmup_excluded: usize,
    pub loads: Vec<u32>,
    pub transports: Vec<TransportKind>,
    /// Broker socket; `None` runs a private broker inside the coordinator.
    pub broker: Option<PathBuf>,
    /// Executable providing the `worker` subcommands.
    pub worker_exe: PathBuf,
    /// Request FIFO scheduling for workers, the embedded broker and bridges.
    pub realtime: bool,
    /// Load threads; `None` means one per logical processor.
    pub load_workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sizes: vec![1024, 10 * 1024, 100 * 1024, 1024 * 1024],
            count: 1000,
            period: Duration::from_millis(100),
            warmup_excluded: 10,
            loads: vec![0, 30, 60, 90],
            transports: vec![TransportKind::ZeroCopy, TransportKind::Baseline],
            broker: None,
            worker_exe: std::env::current_exe().unwrap_or_else(|_| PathBuf::from("zerocast-bench")),
            realtime: false,
            load_workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.count <= self.warmup_excluded {
            return Err(BenchError::Config(format!(
                "count ({}) must exceed the excluded warmup ({})",
                self.count, self.warmup_excluded
            )));
        }
        if self.sizes.is_empty() || self.transports.is_empty() || self.loads.is_empty() {
            return Err(BenchError::Config("sizes, transports and loads must be nonempty".into()));
        }
        if self.period.is_zero() {
            return Err(BenchError::Config("period must be positive".into()));
        }
        if let Some(l) = self.loads.iter().find(|&&l| l > 100) {
            return Err(BenchError::Config(format!("load {l}% exceeds 100%")));
        }
        Ok(())
    }

    /// No callback within this long after the previous one aborts the cell.
    pub fn callback_timeout(&self) -> Duration {
        self.period * 10
    }
}

pub const CSV_HEADER: [&str; 5] = ["transport", "size_bytes", "load_pct", "seq", "latency_ns"];

/// Writes `# prio=...` and `# incomplete=...` comment lines, then the CSV.
pub fn write_csv<W: Write>(dataset: &Dataset, mut out: W) -> Result<(), BenchError> {
    writeln!(out, "# prio={}", dataset.priority.as_str())?;
    for cell in &dataset.incomplete {
        writeln!(out, "# incomplete={},{},{}", cell.transport, cell.size_bytes, cell.load_pct)?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for s in &dataset.samples {
        w.write_record([
            s.transport.as_str(),
            &s.size_bytes.to_string(),
            &s.load_pct.to_string(),
            &s.seq.to_string(),
            &s.latency_ns.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Dataset, BenchError> {
    let mut text = String::new();
    BufReader::new(input).read_to_string(&mut text)?;
    let mut priority = Priority::Default;
    let mut incomplete = Vec::new();
    for line in text.lines().filter_map(|l| l.strip_prefix("# ")) {
        if let Some(p) = line.strip_prefix("prio=") {
            priority = match p.trim() {
                "fifo" => Priority::Fifo,
                "default" => Priority::Default,
                other => return Err(BenchError::Format(format!("unknown priority {other:?}"))),
            };
        } else if let Some(c) = line.strip_prefix("incomplete=") {
            let f: Vec<&str> = c.trim().split(',').collect();
            let [t, size, load] = f[..] else {
                return Err(BenchError::Format(format!("bad incomplete marker {c:?}")));
            };
            incomplete.push(CellKey {
                transport: t.parse().map_err(BenchError::Format)?,
                size_bytes: parse_field(size)?,
                load_pct: parse_field(load)?,
            });
        }
    }
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    if r.headers()?.iter().ne(CSV_HEADER) {
        return Err(BenchError::Format(format!("unexpected header {:?}", r.headers()?)));
    }
    let mut samples = Vec::new();
    for record in r.records() {
        let record = record?;
        if record.len() != CSV_HEADER.len() {
            return Err(BenchError::Format(format!("row has {} fields", record.len())));
        }
        samples.push(Sample {
            transport: record[0].parse().map_err(BenchError::Format)?,
            size_bytes: parse_field(&record[1])?,
            load_pct: parse_field(&record[2])?,
            seq: parse_field(&record[3])?,
            latency_ns: parse_field(&record[4])?,
        });
    }
    Ok(Dataset {
        priority,
        samples,
        incomplete,
    })
}

fn parse_field<T: FromStr>(s: &str) -> Result<T, BenchError> {
    s.trim().parse().map_err(|_| BenchError::Format(format!("bad number {s:?}")))
}

/// Per-cell statistics in nanoseconds. Cells marked incomplete but holding
/// samples are summarized like any other.
pub fn summarize(dataset: &Dataset) -> Result<BTreeMap<CellKey, Summary64>, BenchError> {
    let mut cells: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
    for s in &dataset.samples {
        cells.entry(s.cell()).or_default().push(s.latency_ns as f64);
    }
    for &key in &dataset.incomplete {
        cells.entry(key).or_default();
    }
    if cells.is_empty() {
        return Err(BenchError::Format("empty dataset".into()));
    }
    cells
        .into_iter()
        .map(|(k, v)| Summary::of(&v).map(|s| (k, s)).ok_or(BenchError::EmptyCell(k)))
        .collect()
}

/// Bridged median minus plain baseline median, per (route, size, load).
pub fn bridge_overheads(summary: &BTreeMap<CellKey, Summary64>) -> BTreeMap<CellKey, f64> {
    summary
        .iter()
        .filter(|(k, _)| k.transport.bridge_direction().is_some())
        .filter_map(|(k, s)| {
            let plain = summary.get(&CellKey {
                transport: TransportKind::Baseline,
                ..*k
            })?;
            Some((*k, s.p50 - plain.p50))
        })
        .collect()
}

/// Human-readable table of `summary`, latencies in microseconds.
pub fn format_summary(summary: &BTreeMap<CellKey, Summary64>) -> String {
    let mut out = format!(
        "{:<22} {:>9} {:>5} {:>6} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>7}\n",
        "transport", "size", "load", "n", "min_us", "p50_us", "p95_us", "p99_us", "max_us", "mean_us", "std_us", "cv"
    );
    for (k, s) in summary {
        let us = |v: f64| v / 1000.0;
        out.push_str(&format!(
            "{:<22} {:>9} {:>5} {:>6} {:>10.1} {:>10.1} {:>10.1} {:>10.1} {:>10.1} {:>10.1} {:>10.1} {:>7.4}\n",
            k.transport.as_str(),
            k.size_bytes,
            k.load_pct,
            s.count,
            us(s.min),
            us(s.p50),
            us(s.p95),
            us(s.p99),
            us(s.max),
            us(s.mean),
            us(s.stddev),
            s.cv
        ));
    }
    out
}

/// Latency against message size, at zero load.
pub fn run_latency_suite(config: &ExperimentConfig) -> Result<Dataset, BenchError> {
    config.validate()?;
    let mut plan = Vec::new();
    for &transport in &config.transports {
        for &size in &config.sizes {
            plan.push((transport, size, 0));
        }
    }
    run_plan(config, &plan)
}

/// Latency under each configured CPU load. Load threads run in the
/// coordinator; workers request FIFO scheduling when `config.realtime`.
pub fn run_load_suite(config: &ExperimentConfig) -> Result<Dataset, BenchError> {
    config.validate()?;
    let mut plan = Vec::new();
    for &load in &config.loads {
        for &size in &config.sizes {
            for &transport in &config.transports {
                plan.push((transport, size, load));
            }
        }
    }
    run_plan(config, &plan)
}

/// Both bridged routes plus the plain baseline they are compared against.
pub fn run_bridge_suite(config: &ExperimentConfig) -> Result<Dataset, BenchError> {
    let config = ExperimentConfig {
        transports: vec![
            TransportKind::Baseline,
            TransportKind::BridgeZcToBaseline,
            TransportKind::BridgeBaselineToZc,
        ],
        ..config.clone()
    };
    run_latency_suite(&config)
}

fn run_plan(config: &ExperimentConfig, plan: &[(TransportKind, usize, u32)]) -> Result<Dataset, BenchError> {
    let env = Environment::start(config)?;
    let mut dataset = Dataset {
        priority: if config.realtime { Priority::Fifo } else { Priority::Default },
        samples: Vec::new(),
        incomplete: Vec::new(),
    };
    let mut current_load: Option<(u32, load::LoadGenerator)> = None;
    for &(transport, size, load_pct) in plan {
        if current_load.as_ref().map(|(l, _)| *l) != Some(load_pct) {
            drop(current_load.take());
            current_load = Some((load_pct, load::LoadGenerator::start(load_pct, config.load_workers)));
            // Let the duty cycle settle before measuring.
            std::thread::sleep(load::DUTY_CYCLE * 20);
        }
        let key = CellKey {
            transport,
            size_bytes: size,
            load_pct,
        };
        log::info!("cell {key}: {} messages every {:?}", config.count, config.period);
        let cell = run_cell(config, &env, key)?;
        if !cell.fifo {
            dataset.priority = Priority::Default;
        }
        if !cell.complete {
            log::warn!("cell {key} incomplete after {} samples", cell.samples.len());
            dataset.incomplete.push(key);
        }
        dataset.samples.extend(cell.samples);
    }
    Ok(dataset)
}

/// The broker the workers talk to, private unless one was given.
struct Environment {
    socket: PathBuf,
    embedded: Option<(BrokerHandle, PathBuf)>,
}

impl Environment {
    fn start(config: &ExperimentConfig) -> Result<Environment, BenchError> {
        if let Some(path) = &config.broker {
            return Ok(Environment {
                socket: path.clone(),
                embedded: None,
            });
        }
        static INSTANCE: AtomicUsize = AtomicUsize::new(0);
        let tag = format!("{}.{}", std::process::id(), INSTANCE.fetch_add(1, Ordering::Relaxed));
        let dir = std::env::temp_dir().join(format!("zerocast-bench.{tag}"));
        std::fs::create_dir_all(&dir)?;
        let socket = dir.join("broker.sock");
        let broker_config = BrokerConfig {
            shm_prefix: format!("zerocast-bench.{tag}"),
            realtime_priority: config.realtime.then_some(FIFO_PRIORITY),
            ..BrokerConfig::default()
        };
        let handle = Broker::bind(broker_config, &socket)
            .map_err(|e| BenchError::Broker(e.to_string()))?
            .spawn();
        Ok(Environment {
            socket,
            embedded: Some((handle, dir)),
        })
    }
}

impl Drop for Environment {
    fn drop(&mut self) {
        if let Some((handle, dir)) = self.embedded.take() {
            handle.shutdown();
            let _ = std::fs::remove_dir_all(dir);
        }
    }
}

struct CellRun {
    samples: Vec<Sample>,
    complete: bool,
    fifo: bool,
}

static TOPIC_SEQ: AtomicUsize = AtomicUsize::new(0);

fn run_cell(config: &ExperimentConfig, env: &Environment, key: CellKey) -> Result<CellRun, BenchError> {
    let topic = format!(
        "bench.{}.{}.{}.{}.{}",
        key.transport,
        key.size_bytes,
        key.load_pct,
        std::process::id(),
        TOPIC_SEQ.fetch_add(1, Ordering::Relaxed)
    );
    let socket = env.socket.to_string_lossy().into_owned();
    let realtime = config.realtime.then_some("--realtime");
    let mut fifo = true;

    // The bridge must be registered before the subscriber so the subscriber
    // learns its arena, and both before the first publish.
    let _bridge = match key.transport.bridge_direction() {
        Some(direction) => {
            let mut w = Worker::spawn(
                config,
                ["bridge", "--topic", &topic, "--direction", direction, "--broker", &socket],
                realtime,
            )?;
            fifo &= w.ready()?;
            Some(w)
        }
        None => None,
    };
    let timeout_ms = config.callback_timeout().as_millis().max(1).to_string();
    let count = config.count.to_string();
    let mut sub = Worker::spawn(
        config,
        [
            "sub",
            "--transport",
            if key.transport.subscribes_zero_copy() { "zerocopy" } else { "baseline" },
            "--topic",
            &topic,
            "--count",
            &count,
            "--timeout-ms",
            &timeout_ms,
            "--broker",
            &socket,
        ],
        realtime,
    )?;
    fifo &= sub.ready()?;
    let size = key.size_bytes.to_string();
    let period_us = config.period.as_micros().to_string();
    let mut publisher = Worker::spawn(
        config,
        [
            "pub",
            "--transport",
            if key.transport.publishes_zero_copy() { "zerocopy" } else { "baseline" },
            "--topic",
            &topic,
            "--size",
            &size,
            "--count",
            &count,
            "--period-us",
            &period_us,
            "--broker",
            &socket,
        ],
        realtime,
    )?;
    fifo &= publisher.ready()?;

    // Hard stop in case a worker hangs rather than timing out by itself.
    let guard = config.period * config.count as u32 + config.callback_timeout() * 2 + Duration::from_secs(30);
    let deadline = Instant::now() + guard;
    let mut samples = Vec::with_capacity(config.count);
    let mut complete = false;
    loop {
        let Some(line) = sub.line_until(deadline) else { break };
        let mut f = line.split_whitespace();
        match f.next() {
            Some("S") => {
                let (Some(seq), Some(lat)) = (f.next(), f.next()) else {
                    return Err(BenchError::Worker(format!("malformed sample line {line:?}")));
                };
                let seq: u64 = parse_field(seq)?;
                if seq >= config.warmup_excluded as u64 {
                    samples.push(Sample {
                        transport: key.transport,
                        size_bytes: key.size_bytes,
                        load_pct: key.load_pct,
                        seq,
                        latency_ns: parse_field(lat)?,
                    });
                }
            }
            Some("DONE") => {
                complete = true;
                break;
            }
            Some("TIMEOUT") => break,
            _ => return Err(BenchError::Worker(format!("unexpected subscriber output {line:?}"))),
        }
    }
    sub.finish(Duration::from_secs(5));
    publisher.finish(Duration::from_secs(10));
    Ok(CellRun {
        samples,
        complete,
        fifo,
    })
}

/// A worker child speaking the line protocol on stdout. Closing its stdin
/// asks it to stop.
struct Worker {
    role: String,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: mpsc::Receiver<String>,
}

impl Worker {
    fn spawn<'a>(
        config: &ExperimentConfig,
        args: impl IntoIterator<Item = &'a str>,
        realtime: Option<&'a str>,
    ) -> Result<Worker, BenchError> {
        let args: Vec<&str> = args.into_iter().chain(realtime).collect();
        let mut child = Command::new(&config.worker_exe)
            .arg("worker")
            .args(&args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BenchError::Worker(format!("spawning {}: {e}", config.worker_exe.display())))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Worker {
            role: args[0].to_owned(),
            stdin: child.stdin.take(),
            child,
            lines,
        })
    }

    fn line_until(&mut self, deadline: Instant) -> Option<String> {
        let wait = deadline.saturating_duration_since(Instant::now());
        match self.lines.recv_timeout(wait) {
            Ok(l) => Some(l),
            Err(RecvTimeoutError::Timeout | RecvTimeoutError::Disconnected) => None,
        }
    }

    /// Waits for `READY <prio>`; returns whether FIFO was obtained.
    fn ready(&mut self) -> Result<bool, BenchError> {
        match self.line_until(Instant::now() + Duration::from_secs(30)) {
            Some(l) if l.starts_with("READY") => Ok(l.ends_with("fifo")),
            Some(l) => Err(BenchError::Worker(format!("{} worker: expected READY, got {l:?}", self.role))),
            None => {
                let status = self.child.try_wait().ok().flatten();
                Err(BenchError::Worker(format!("{} worker never became ready ({status:?})", self.role)))
            }
        }
    }

    fn finish(&mut self, patience: Duration) {
        self.stdin.take();
        let deadline = Instant::now() + patience;
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        log::warn!("{} worker did not exit in {patience:?}; killing it", self.role);
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        self.finish(Duration::from_secs(5));
    }
}

/// Writes `dataset` to `path`, or to stdout when `path` is `None`.
pub fn save(dataset: &Dataset, path: Option<&Path>) -> Result<(), BenchError> {
    match path {
        Some(p) => write_csv(dataset, std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => write_csv(dataset, std::io::stdout().lock()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: TransportKind, size: usize, seq: u64, lat: u64) -> Sample {
        Sample {
            transport: t,
            size_bytes: size,
            load_pct: 0,
            seq,
            latency_ns: lat,
        }
    }

    #[test]
    fn csv_round_trips_with_markers() {
        let ds = Dataset {
            priority: Priority::Fifo,
            samples: vec![
                sample(TransportKind::ZeroCopy, 1024, 10, 5000),
                sample(TransportKind::BridgeBaselineToZc, 1 << 20, 11, 7000),
            ],
            incomplete: vec![CellKey {
                transport: TransportKind::Baseline,
                size_bytes: 1024,
                load_pct: 90,
            }],
        };
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# prio=fifo\n"));
        assert!(text.contains("transport,size_bytes,load_pct,seq,latency_ns\n"));
        assert_eq!(read_csv(&buf[..]).unwrap(), ds);
    }

    #[test]
    fn rejects_wrong_header() {
        assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn summarize_groups_cells_and_flags_empty_ones() {
        let mut ds = Dataset {
            priority: Priority::Default,
            samples: vec![
                sample(TransportKind::Baseline, 1024, 0, 100),
                sample(TransportKind::Baseline, 1024, 1, 110),
                sample(TransportKind::Baseline, 1024, 2, 90),
                sample(TransportKind::BridgeZcToBaseline, 1024, 0, 150),
            ],
            incomplete: vec![],
        };
        let s = summarize(&ds).unwrap();
        assert_eq!(s.len(), 2);
        let bl = s.values().next().unwrap();
        assert_eq!((bl.count, bl.p50), (3, 100.0));
        let over = bridge_overheads(&s);
        assert_eq!(over.values().copied().collect::<Vec<_>>(), [50.0]);

        let empty = CellKey {
            transport: TransportKind::ZeroCopy,
            size_bytes: 1,
            load_pct: 0,
        };
        ds.incomplete.push(empty);
        assert!(matches!(summarize(&ds), Err(BenchError::EmptyCell(k)) if k == empty));
    }

    #[test]
    fn config_requires_count_above_warmup() {
        let c = ExperimentConfig {
            count: 10,
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            count: 12,
            ..ExperimentConfig::default()
        };
        c.validate().unwrap();
    }
}
