//! Host-wide monotonic clock. All processes on the host share this clock
//! domain, so a timestamp taken in a publisher can be subtracted from one taken
//! in a subscriber.

/// `CLOCK_MONOTONIC` in nanoseconds.
pub fn monotonic_ns() -> u64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: ts is a valid out-pointer; CLOCK_MONOTONIC is always supported.
    unsafe { libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts) };
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

/// Tries to move the calling thread to `SCHED_FIFO` at `priority`.
/// Returns false when the platform or privileges refuse.
pub fn set_realtime_priority(priority: i32) -> bool {
    let param = libc::sched_param { sched_priority: priority };
    // SAFETY: pid 0 targets the calling thread; param is valid.
    unsafe { libc::sched_setscheduler(0, libc::SCHED_FIFO, &param) == 0 }
}
