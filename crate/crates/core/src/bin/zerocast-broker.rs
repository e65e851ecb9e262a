use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use zerocast::bench::cli::parse_size;
use zerocast::broker::{Broker, BrokerConfig};
use zerocast::protocol::broker_path;

/// Host-local broker: tracks topics, endpoints and message lifetimes.
#[derive(Debug, Parser)]
#[command(name = "zerocast-broker")]
struct Args {
    /// Listening socket (default: $ZEROCAST_BROKER or /tmp/zerocast.sock).
    #[arg(long)]
    socket: Option<PathBuf>,
    /// Arena size handed to each publishing process, e.g. `64M`.
    #[arg(long, value_parser = parse_size)]
    arena_capacity: Option<usize>,
    /// Outstanding entries allowed per publisher.
    #[arg(long)]
    queue_capacity: Option<usize>,
    /// Prefix of shared-memory object names.
    #[arg(long)]
    shm_prefix: Option<String>,
    /// Base of the arena address pool, hex.
    #[arg(long, value_parser = parse_hex)]
    pool_start: Option<usize>,
    /// Run broker threads under SCHED_FIFO at this priority.
    #[arg(long)]
    realtime_priority: Option<i32>,
}

fn parse_hex(s: &str) -> Result<usize, String> {
    usize::from_str_radix(s.trim_start_matches("0x"), 16).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let mut config = BrokerConfig::default();
    if let Some(c) = args.arena_capacity {
        config.arena_capacity = c;
        config.slot_stride = 2 * c;
    }
    if let Some(q) = args.queue_capacity {
        config.queue_capacity = q;
    }
    if let Some(p) = args.shm_prefix {
        config.shm_prefix = p;
    }
    if let Some(p) = args.pool_start {
        config.pool_start = p;
    }
    config.realtime_priority = args.realtime_priority;
    let path = args.socket.unwrap_or_else(broker_path);

    // Block the termination signals before any thread exists so every thread
    // inherits the mask and only sigwait below sees them.
    // SAFETY: plain signal-set manipulation on locals.
    let set = unsafe {
        let mut set: libc::sigset_t = std::mem::zeroed();
        libc::sigemptyset(&mut set);
        libc::sigaddset(&mut set, libc::SIGINT);
        libc::sigaddset(&mut set, libc::SIGTERM);
        libc::pthread_sigmask(libc::SIG_BLOCK, &set, std::ptr::null_mut());
        set
    };

    let broker = match Broker::bind(config, &path) {
        Ok(b) => b,
        Err(e) => {
            log::error!("{e}");
            return ExitCode::FAILURE;
        }
    };
    let handle = broker.spawn();
    let mut sig = 0;
    // SAFETY: `set` is initialized; sig is a valid out pointer.
    unsafe { libc::sigwait(&set, &mut sig) };
    log::info!("signal {sig}; shutting down");
    handle.shutdown();
    ExitCode::SUCCESS
}
