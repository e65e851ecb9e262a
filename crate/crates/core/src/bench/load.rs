//! Synthetic CPU load: one duty-cycled busy thread per logical processor.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

/// Length of one busy/idle cycle. Deliberately not a divisor of round
/// publish periods: a commensurate cycle would phase-lock every sample to
/// the same point of the busy window.
pub const DUTY_CYCLE: Duration = Duration::from_micros(7_300);

pub struct LoadGenerator {
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl LoadGenerator {
    /// Starts `workers` threads (default: one per logical processor), each
    /// busy for `pct`% of every cycle. 0% starts nothing.
    pub fn start(pct: u32, workers: Option<usize>) -> LoadGenerator {
        let stop = Arc::new(AtomicBool::new(false));
        let n = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let pct = pct.min(100);
        let workers = if pct == 0 {
            Vec::new()
        } else {
            (0..n)
                .map(|i| {
                    let stop = stop.clone();
                    std::thread::Builder::new()
                        .name(format!("zerocast-load-{i}"))
                        .spawn(move || burn(pct, &stop))
                        .expect("spawn load thread")
                })
                .collect()
        };
        LoadGenerator { stop, workers }
    }

    pub fn workers(&self) -> usize {
        self.workers.len()
    }
}

impl Drop for LoadGenerator {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn burn(pct: u32, stop: &AtomicBool) {
    let busy = DUTY_CYCLE * pct / 100;
    let mut cycle_start = Instant::now();
    while !stop.load(Ordering::Relaxed) {
        while cycle_start.elapsed() < busy {
            std::hint::spin_loop();
        }
        let next = cycle_start + DUTY_CYCLE;
        if let Some(rest) = next.checked_duration_since(Instant::now()) {
            std::thread::sleep(rest);
        }
        // Skip cycles lost to preemption rather than bursting to catch up.
        let now = Instant::now();
        cycle_start = if now > next + DUTY_CYCLE { now } else { next };
    }
}

/// Aggregate `(busy, total)` jiffies from the first line of `/proc/stat`.
pub fn cpu_times() -> std::io::Result<(u64, u64)> {
    let stat = std::fs::read_to_string("/proc/stat")?;
    parse_cpu_line(stat.lines().next().unwrap_or_default())
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, "unexpected /proc/stat format"))
}

fn parse_cpu_line(line: &str) -> Option<(u64, u64)> {
    let mut fields = line.split_whitespace();
    if fields.next()? != "cpu" {
        return None;
    }
    let v: Vec<u64> = fields.map(|f| f.parse().ok()).collect::<Option<_>>()?;
    if v.len() < 4 {
        return None;
    }
    // user nice system idle iowait irq softirq steal [guest guest_nice]
    let total: u64 = v.iter().take(8).sum();
    let idle = v[3] + v.get(4).copied().unwrap_or(0);
    Some((total - idle, total))
}

/// Runs the generator at `pct` for `duration` and returns the aggregate CPU
/// utilization the OS accounted over that window, in percent.
pub fn calibrate(pct: u32, duration: Duration) -> std::io::Result<f64> {
    let load = LoadGenerator::start(pct, None);
    std::thread::sleep(DUTY_CYCLE * 5);
    let (b0, t0) = cpu_times()?;
    std::thread::sleep(duration);
    let (b1, t1) = cpu_times()?;
    drop(load);
    if t1 == t0 {
        return Ok(0.0);
    }
    Ok(100.0 * (b1 - b0) as f64 / (t1 - t0) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_proc_stat_line() {
        let line = "cpu  100 5 50 800 20 1 2 3 0 0";
        assert_eq!(parse_cpu_line(line), Some((161, 981)));
        assert_eq!(parse_cpu_line("cpu0 1 2 3 4"), None);
        assert!(cpu_times().is_ok());
    }
}
