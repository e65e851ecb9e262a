use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use zerocast::bridge::{run_bridge, BridgeConfig, Direction};
use zerocast::protocol::broker_path;
use zerocast::{Fixed128, PointCloud};

/// Relays one topic between the zero-copy and copy-based transports.
#[derive(Debug, Parser)]
#[command(name = "zerocast-bridge")]
struct Args {
    #[arg(long)]
    topic: String,
    #[arg(long, default_value = "both")]
    direction: Direction,
    /// Broker socket (default: $ZEROCAST_BROKER or /tmp/zerocast.sock).
    #[arg(long)]
    broker: Option<PathBuf>,
    /// Message type carried on the topic.
    #[arg(long, value_enum, default_value_t = Schema::PointCloud)]
    schema: Schema,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Schema {
    PointCloud,
    Fixed128,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let config = BridgeConfig {
        topic: args.topic,
        direction: args.direction,
        broker: args.broker.unwrap_or_else(broker_path),
    };
    let result = match args.schema {
        Schema::PointCloud => run_bridge::<PointCloud>(&config),
        Schema::Fixed128 => run_bridge::<Fixed128>(&config),
    };
    // The relay only returns when the broker is gone.
    if let Err(e) = result {
        log::error!("topic={:?} bridge stopped: {e}", config.topic);
    }
    ExitCode::FAILURE
}
