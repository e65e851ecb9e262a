//! Named shared-memory arenas mapped at a fixed virtual base.
//!
//! The owner maps an arena read-write and allocates inside it; other processes
//! attach the same object read-only at the identical base, so addresses stored
//! inside messages stay valid everywhere.
//!
//! Arena layout: a 64-byte metadata area whose first 22 bytes are the packed
//! little-endian header `"ZCAR" | version: u16 | base: u64 | capacity: u64`,
//! followed by the allocator heap.

use std::ffi::CString;
use std::fs::File;
use std::io;
use std::os::fd::{FromRawFd, OwnedFd};
use std::os::unix::fs::FileExt;
use std::sync::{Mutex, MutexGuard};

use thiserror::Error;

use crate::alloc::{AllocError, AllocStats, FreeListAllocator};

pub const ARENA_MAGIC: [u8; 4] = *b"ZCAR";
pub const ARENA_VERSION: u16 = 1;
/// Packed header length in bytes.
pub const ARENA_HEADER_LEN: usize = 22;
/// Bytes reserved before the heap (header plus padding).
pub const ARENA_METADATA: usize = 64;
pub const MIN_ARENA_CAPACITY: usize = 1 << 20;
pub const DEFAULT_ARENA_CAPACITY: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum ArenaError {
    #[error("shared-memory object {0:?} already exists")]
    NameCollision(String),
    #[error("address range {base:#x}+{capacity:#x} is already occupied in this process")]
    RangeOccupied { base: usize, capacity: usize },
    #[error("permission denied for shared-memory object {0:?}")]
    PermissionDenied(String),
    #[error("shared-memory object {0:?} does not exist")]
    Missing(String),
    #[error("arena {name:?} lives at {actual:#x}+{actual_capacity:#x}, not {expected:#x}+{expected_capacity:#x}")]
    BaseMismatch {
        name: String,
        expected: usize,
        actual: usize,
        expected_capacity: usize,
        actual_capacity: usize,
    },
    #[error("shared-memory object {0:?} has no valid arena header")]
    BadHeader(String),
    #[error("invalid arena parameters: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error("{op} failed: {source}")]
    Os {
        op: &'static str,
        #[source]
        source: io::Error,
    },
}

fn os_err(op: &'static str) -> ArenaError {
    ArenaError::Os {
        op,
        source: io::Error::last_os_error(),
    }
}

pub fn page_size() -> usize {
    // SAFETY: sysconf has no preconditions.
    unsafe { libc::sysconf(libc::_SC_PAGESIZE) as usize }
}

/// Identity and placement of one process's arena.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArenaDescriptor {
    pub name: String,
    pub base: usize,
    pub capacity: usize,
    pub owner_process: u32,
}

impl ArenaDescriptor {
    pub fn contains(&self, address: usize) -> bool {
        address >= self.base && address - self.base < self.capacity
    }

    /// Address of the first byte the allocator hands out.
    pub fn heap_start(&self) -> usize {
        self.base + ARENA_METADATA
    }
}

/// Anything that covers a half-open address range.
pub trait AddressRange {
    fn base(&self) -> usize;
    fn capacity(&self) -> usize;

    fn contains(&self, address: usize) -> bool {
        address >= self.base() && address - self.base() < self.capacity()
    }

    /// True when the whole `[address, address + len)` lies inside the range.
    fn contains_span(&self, address: usize, len: usize) -> bool {
        self.contains(address) && len <= self.base() + self.capacity() - address
    }
}

/// Encodes the packed arena header.
pub fn encode_header(base: usize, capacity: usize) -> [u8; ARENA_HEADER_LEN] {
    let mut out = [0u8; ARENA_HEADER_LEN];
    out[0..4].copy_from_slice(&ARENA_MAGIC);
    out[4..6].copy_from_slice(&ARENA_VERSION.to_le_bytes());
    out[6..14].copy_from_slice(&(base as u64).to_le_bytes());
    out[14..22].copy_from_slice(&(capacity as u64).to_le_bytes());
    out
}

/// Decodes the packed arena header into `(base, capacity)`.
pub fn decode_header(bytes: &[u8]) -> Option<(usize, usize)> {
    if bytes.len() < ARENA_HEADER_LEN || bytes[0..4] != ARENA_MAGIC {
        return None;
    }
    if u16::from_le_bytes([bytes[4], bytes[5]]) != ARENA_VERSION {
        return None;
    }
    let base = u64::from_le_bytes(bytes[6..14].try_into().ok()?);
    let capacity = u64::from_le_bytes(bytes[14..22].try_into().ok()?);
    Some((base as usize, capacity as usize))
}

fn shm_path(name: &str) -> Result<CString, ArenaError> {
    if name.is_empty() || name.contains('/') {
        return Err(ArenaError::InvalidArgument(format!("bad shared-memory name {name:?}")));
    }
    CString::new(format!("/{name}")).map_err(|_| ArenaError::InvalidArgument(format!("bad shared-memory name {name:?}")))
}

/// Removes the named shared-memory object. Existing mappings stay valid.
pub fn unlink(name: &str) -> Result<(), ArenaError> {
    let path = shm_path(name)?;
    // SAFETY: path is a valid NUL-terminated string.
    if unsafe { libc::shm_unlink(path.as_ptr()) } != 0 {
        let err = io::Error::last_os_error();
        return Err(match err.raw_os_error() {
            Some(libc::ENOENT) => ArenaError::Missing(name.to_owned()),
            Some(libc::EACCES) => ArenaError::PermissionDenied(name.to_owned()),
            _ => ArenaError::Os { op: "shm_unlink", source: err },
        });
    }
    Ok(())
}

/// A fixed-address mapping, unmapped on drop.
#[derive(Debug)]
struct Mapping {
    base: usize,
    len: usize,
}

impl Mapping {
    fn map(fd: &OwnedFd, base: usize, len: usize, writable: bool) -> Result<Mapping, ArenaError> {
        use std::os::fd::AsRawFd;
        let prot = if writable {
            libc::PROT_READ | libc::PROT_WRITE
        } else {
            libc::PROT_READ
        };
        // SAFETY: MAP_FIXED_NOREPLACE never clobbers existing mappings.
        let addr = unsafe {
            libc::mmap(
                base as *mut libc::c_void,
                len,
                prot,
                libc::MAP_SHARED | libc::MAP_FIXED_NOREPLACE,
                fd.as_raw_fd(),
                0,
            )
        };
        if addr == libc::MAP_FAILED {
            let err = io::Error::last_os_error();
            return Err(match err.raw_os_error() {
                Some(libc::EEXIST) => ArenaError::RangeOccupied { base, capacity: len },
                Some(libc::EACCES) | Some(libc::EPERM) => ArenaError::PermissionDenied(format!("mmap at {base:#x}")),
                _ => ArenaError::Os { op: "mmap", source: err },
            });
        }
        if addr as usize != base {
            // Kernels without MAP_FIXED_NOREPLACE treat the address as a hint.
            unsafe { libc::munmap(addr, len) };
            return Err(ArenaError::RangeOccupied { base, capacity: len });
        }
        Ok(Mapping { base, len })
    }
}

impl Drop for Mapping {
    fn drop(&mut self) {
        // SAFETY: the range was mapped by `Mapping::map` and is owned by self.
        unsafe { libc::munmap(self.base as *mut libc::c_void, self.len) };
    }
}

fn open_shm(name: &str, flags: libc::c_int) -> Result<OwnedFd, ArenaError> {
    let path = shm_path(name)?;
    // SAFETY: valid path; the returned descriptor is owned below.
    let fd = unsafe { libc::shm_open(path.as_ptr(), flags | libc::O_CLOEXEC, 0o600) };
    if fd < 0 {
        let err = io::Error::last_os_error();
        return Err(match err.raw_os_error() {
            Some(libc::EEXIST) => ArenaError::NameCollision(name.to_owned()),
            Some(libc::ENOENT) => ArenaError::Missing(name.to_owned()),
            Some(libc::EACCES) => ArenaError::PermissionDenied(name.to_owned()),
            _ => ArenaError::Os { op: "shm_open", source: err },
        });
    }
    // SAFETY: fd is a fresh descriptor we own.
    Ok(unsafe { OwnedFd::from_raw_fd(fd) })
}

/// The owner's read-write arena with its allocator.
#[derive(Debug)]
pub struct OwnedArena {
    descriptor: ArenaDescriptor,
    allocator: Mutex<FreeListAllocator>,
    unlink_on_drop: bool,
    _mapping: Mapping,
}

/// Creates the named shared-memory object, maps it read-write at exactly
/// `base`, and initializes the header and allocator.
pub fn create_arena(name: &str, base: usize, capacity: usize) -> Result<OwnedArena, ArenaError> {
    let page = page_size();
    if base == 0 || base % page != 0 {
        return Err(ArenaError::InvalidArgument(format!("base {base:#x} is not page-aligned")));
    }
    if capacity < MIN_ARENA_CAPACITY || capacity % page != 0 {
        return Err(ArenaError::InvalidArgument(format!(
            "capacity {capacity:#x} must be a page multiple of at least 1 MiB"
        )));
    }
    if base.checked_add(capacity).is_none() {
        return Err(ArenaError::InvalidArgument("range overflows the address space".into()));
    }
    let fd = open_shm(name, libc::O_CREAT | libc::O_EXCL | libc::O_RDWR)?;
    let cleanup = |err: ArenaError| {
        let _ = unlink(name);
        err
    };
    use std::os::fd::AsRawFd;
    // SAFETY: fd is valid.
    if unsafe { libc::ftruncate(fd.as_raw_fd(), capacity as libc::off_t) } != 0 {
        return Err(cleanup(os_err("ftruncate")));
    }
    let mapping = Mapping::map(&fd, base, capacity, true).map_err(cleanup)?;
    let header = encode_header(base, capacity);
    // SAFETY: the mapping is writable and at least ARENA_METADATA bytes long.
    let allocator = unsafe {
        std::ptr::copy_nonoverlapping(header.as_ptr(), base as *mut u8, ARENA_HEADER_LEN);
        FreeListAllocator::new(base + ARENA_METADATA, base + capacity)
    };
    log::debug!("created arena {name} at {base:#x}+{capacity:#x}");
    Ok(OwnedArena {
        descriptor: ArenaDescriptor {
            name: name.to_owned(),
            base,
            capacity,
            owner_process: std::process::id(),
        },
        allocator: Mutex::new(allocator),
        unlink_on_drop: false,
        _mapping: mapping,
    })
}

impl OwnedArena {
    pub fn descriptor(&self) -> &ArenaDescriptor {
        &self.descriptor
    }

    /// Removes the shared-memory name when this arena is dropped. Off by
    /// default: under a broker, the broker decides when the name goes away.
    pub fn set_unlink_on_drop(&mut self, unlink: bool) {
        self.unlink_on_drop = unlink;
    }

    fn allocator(&self) -> MutexGuard<'_, FreeListAllocator> {
        self.allocator.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn alloc(&self, size: usize, align: usize) -> Result<usize, AllocError> {
        self.allocator().alloc(size, align)
    }

    pub fn dealloc(&self, address: usize) -> Result<(), AllocError> {
        self.allocator().dealloc(address)
    }

    pub fn realloc(&self, address: usize, new_size: usize) -> Result<usize, AllocError> {
        self.allocator().realloc(address, new_size)
    }

    pub fn usable_size(&self, address: usize) -> Result<usize, AllocError> {
        self.allocator().usable_size(address)
    }

    /// Allocator accounting. The arena metadata bytes are not included;
    /// `stats().total() + ARENA_METADATA == capacity`.
    pub fn stats(&self) -> AllocStats {
        self.allocator().stats()
    }

    pub fn free_bytes(&self) -> usize {
        self.stats().free_bytes
    }

    pub fn blocks(&self) -> Vec<crate::alloc::AllocationBlock> {
        self.allocator().blocks()
    }

    pub fn verify(&self) -> Result<AllocStats, String> {
        self.allocator().verify()
    }
}

impl AddressRange for OwnedArena {
    fn base(&self) -> usize {
        self.descriptor.base
    }
    fn capacity(&self) -> usize {
        self.descriptor.capacity
    }
}

impl Drop for OwnedArena {
    fn drop(&mut self) {
        if self.unlink_on_drop {
            let _ = unlink(&self.descriptor.name);
        }
    }
}

/// A read-only attachment of another process's arena. Writes through it fault.
#[derive(Debug)]
pub struct ArenaView {
    descriptor: ArenaDescriptor,
    _mapping: Mapping,
}

/// Maps an existing arena read-only at `base`, which must match the base
/// recorded in the arena header.
pub fn attach_read_only(name: &str, base: usize, capacity: usize) -> Result<ArenaView, ArenaError> {
    let fd = open_shm(name, libc::O_RDONLY)?;
    let file = File::from(fd);
    let mut header = [0u8; ARENA_HEADER_LEN];
    file.read_exact_at(&mut header, 0)
        .map_err(|_| ArenaError::BadHeader(name.to_owned()))?;
    let (actual, actual_capacity) = decode_header(&header).ok_or_else(|| ArenaError::BadHeader(name.to_owned()))?;
    if actual != base || actual_capacity != capacity {
        return Err(ArenaError::BaseMismatch {
            name: name.to_owned(),
            expected: base,
            actual,
            expected_capacity: capacity,
            actual_capacity,
        });
    }
    let fd = OwnedFd::from(file);
    let mapping = Mapping::map(&fd, base, capacity, false)?;
    Ok(ArenaView {
        descriptor: ArenaDescriptor {
            name: name.to_owned(),
            base,
            capacity,
            owner_process: 0,
        },
        _mapping: mapping,
    })
}

impl ArenaView {
    pub fn descriptor(&self) -> &ArenaDescriptor {
        &self.descriptor
    }
}

impl AddressRange for ArenaView {
    fn base(&self) -> usize {
        self.descriptor.base
    }
    fn capacity(&self) -> usize {
        self.descriptor.capacity
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use std::sync::atomic::{AtomicUsize, Ordering};

    static NEXT: AtomicUsize = AtomicUsize::new(0);

    /// A base and name no other test in this process uses.
    pub fn unique_slot() -> (String, usize) {
        let n = NEXT.fetch_add(1, Ordering::Relaxed);
        let name = format!("zerocast-unit.{}.{n}", std::process::id());
        (name, 0x3800_0000_0000 + n * (1 << 30))
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::unique_slot;
    use super::*;

    fn owned(capacity: usize) -> OwnedArena {
        let (name, base) = unique_slot();
        let mut arena = create_arena(&name, base, capacity).unwrap();
        arena.set_unlink_on_drop(true);
        arena
    }

    #[test]
    fn create_echoes_arguments() {
        let (name, base) = unique_slot();
        let mut arena = create_arena(&name, base, 16 << 20).unwrap();
        arena.set_unlink_on_drop(true);
        let d = arena.descriptor();
        assert_eq!((d.base, d.capacity, d.name.as_str()), (base, 16 << 20, name.as_str()));
        assert_eq!(d.owner_process, std::process::id());
    }

    #[test]
    fn header_is_packed_little_endian() {
        let arena = owned(MIN_ARENA_CAPACITY);
        let base = arena.base();
        let bytes = unsafe { std::slice::from_raw_parts(base as *const u8, ARENA_HEADER_LEN) };
        assert_eq!(&bytes[0..4], b"ZCAR");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..14], &(base as u64).to_le_bytes());
        assert_eq!(&bytes[14..22], &(MIN_ARENA_CAPACITY as u64).to_le_bytes());
        assert_eq!(decode_header(bytes), Some((base, MIN_ARENA_CAPACITY)));
    }

    #[test]
    fn duplicate_name_collides() {
        let arena = owned(MIN_ARENA_CAPACITY);
        let (_, other_base) = unique_slot();
        let err = create_arena(&arena.descriptor().name, other_base, MIN_ARENA_CAPACITY).unwrap_err();
        assert!(matches!(err, ArenaError::NameCollision(_)), "{err}");
    }

    #[test]
    fn occupied_range_is_reported_distinctly() {
        let (name, base) = unique_slot();
        // Probe mapping at the requested base.
        let probe = unsafe {
            libc::mmap(
                base as *mut libc::c_void,
                page_size(),
                libc::PROT_READ,
                libc::MAP_PRIVATE | libc::MAP_ANONYMOUS | libc::MAP_FIXED_NOREPLACE,
                -1,
                0,
            )
        };
        assert_eq!(probe as usize, base);
        let err = create_arena(&name, base, MIN_ARENA_CAPACITY).unwrap_err();
        assert!(matches!(err, ArenaError::RangeOccupied { .. }), "{err}");
        // The failed attempt must not leave the name behind.
        assert!(matches!(unlink(&name), Err(ArenaError::Missing(_))));
        unsafe { libc::munmap(probe, page_size()) };
    }

    #[test]
    fn rejects_bad_geometry() {
        let (name, base) = unique_slot();
        assert!(matches!(create_arena(&name, base + 1, MIN_ARENA_CAPACITY), Err(ArenaError::InvalidArgument(_))));
        assert!(matches!(create_arena(&name, base, 4096), Err(ArenaError::InvalidArgument(_))));
    }

    #[test]
    fn attach_checks_base_before_mapping() {
        let arena = owned(MIN_ARENA_CAPACITY);
        let d = arena.descriptor().clone();
        let err = attach_read_only(&d.name, d.base + page_size(), d.capacity).unwrap_err();
        assert!(matches!(err, ArenaError::BaseMismatch { .. }), "{err}");
        // Same process already has the range mapped read-write.
        let err = attach_read_only(&d.name, d.base, d.capacity).unwrap_err();
        assert!(matches!(err, ArenaError::RangeOccupied { .. }), "{err}");
        assert!(matches!(attach_read_only("zerocast-no-such-arena", d.base, d.capacity), Err(ArenaError::Missing(_))));
    }

    #[test]
    fn contains_is_half_open() {
        let arena = owned(MIN_ARENA_CAPACITY);
        let base = arena.base();
        assert!(arena.contains(base));
        assert!(arena.contains(base + MIN_ARENA_CAPACITY - 1));
        assert!(!arena.contains(base + MIN_ARENA_CAPACITY));
        assert!(!arena.contains(base - 1));
        let p = arena.alloc(100, 8).unwrap();
        assert!(arena.contains(p));
        assert!(arena.contains_span(p, 100));
        assert!(!arena.contains_span(p, MIN_ARENA_CAPACITY));
    }

    #[test]
    fn first_allocation_follows_metadata() {
        let arena = owned(MIN_ARENA_CAPACITY);
        let p = arena.alloc(64, 8).unwrap();
        assert_eq!(p, arena.base() + ARENA_METADATA + crate::alloc::HEADER);
        let stats = arena.stats();
        assert_eq!(stats.total() + ARENA_METADATA, MIN_ARENA_CAPACITY);
    }
}
