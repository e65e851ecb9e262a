//! First-fit allocator with immediate coalescing over an intrusive,
//! address-ordered free list.
//!
//! The allocator manages a raw address range. Every block starts with a
//! 16-byte header `[size: u64][tag: u64]`, where `size` counts the header and
//! `tag` is a state marker xor'd with the block address. Free blocks store the
//! address of the next free block in the first payload word.

use std::fmt;

use thiserror::Error;

/// Size of a block header in bytes.
pub const HEADER: usize = 16;
/// Minimum payload alignment; all block boundaries are multiples of this.
pub const MIN_ALIGN: usize = 16;
/// Smallest block that may exist on its own (header plus one aligned word pair).
pub const MIN_BLOCK: usize = HEADER + MIN_ALIGN;

const ALLOC_TAG: u64 = 0x5a43_414c_4c4f_4321;
const FREE_TAG: u64 = 0x5a43_4652_4545_2121;

/// Byte pattern written over freed payloads in debug builds.
pub const POISON: u8 = 0xdd;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AllocError {
    #[error("invalid allocation request: size {size}, align {align}")]
    InvalidRequest { size: usize, align: usize },
    #[error("out of arena memory: no free block for {size} bytes (align {align})")]
    OutOfMemory { size: usize, align: usize },
    #[error("address {0:#x} was not returned by this allocator")]
    UnknownAddress(usize),
    #[error("address {0:#x} freed twice")]
    DoubleFree(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockState {
    Free,
    Allocated,
}

/// One block as seen by a heap walk. `address` is the payload address and
/// `size` the payload size (header excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AllocationBlock {
    pub address: usize,
    pub size: usize,
    pub state: BlockState,
}

/// Byte accounting of the managed range. `free + allocated + headers` always
/// equals the size of the range.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AllocStats {
    pub free_bytes: usize,
    pub allocated_bytes: usize,
    pub header_bytes: usize,
    pub free_blocks: usize,
    pub allocated_blocks: usize,
}

impl AllocStats {
    pub fn total(&self) -> usize {
        self.free_bytes + self.allocated_bytes + self.header_bytes
    }
}

#[inline]
const fn align_up(value: usize, align: usize) -> usize {
    (value + align - 1) & !(align - 1)
}

#[inline]
fn payload_size(size: usize) -> usize {
    align_up(size.max(1), MIN_ALIGN)
}

#[inline]
unsafe fn read_word(addr: usize) -> u64 {
    (addr as *const u64).read()
}

#[inline]
unsafe fn write_word(addr: usize, value: u64) {
    (addr as *mut u64).write(value)
}

/// Where a request of `need` payload bytes at `align` would land inside the
/// free block `[block, block + block_size)`. Returns `(block_start, block_end)`
/// of the carved allocation.
pub(crate) fn fit(block: usize, block_size: usize, need: usize, align: usize) -> Option<(usize, usize)> {
    let mut payload = align_up(block + HEADER, align);
    if payload - HEADER != block && payload - HEADER - block < MIN_BLOCK {
        payload = align_up(block + HEADER + MIN_BLOCK, align);
    }
    let end = payload.checked_add(need)?;
    (end <= block + block_size).then_some((payload - HEADER, end))
}

/// Allocator state. Only the owning process touches the managed range for
/// writing; callers serialize access (the arena wraps this in a mutex).
pub struct FreeListAllocator {
    start: usize,
    end: usize,
    head: usize,
    stats: AllocStats,
}

impl fmt::Debug for FreeListAllocator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FreeListAllocator")
            .field("start", &format_args!("{:#x}", self.start))
            .field("end", &format_args!("{:#x}", self.end))
            .field("stats", &self.stats)
            .finish()
    }
}

impl FreeListAllocator {
    /// Initializes a single free block covering `[start, end)`.
    ///
    /// # Safety
    /// The range must be writable, exclusively owned by the returned value for
    /// its whole lifetime, and large enough for one minimal block. `start` and
    /// `end` must be 16-byte aligned.
    pub unsafe fn new(start: usize, end: usize) -> Self {
        assert!(start % MIN_ALIGN == 0 && end % MIN_ALIGN == 0, "unaligned allocator range");
        assert!(end >= start + MIN_BLOCK, "allocator range too small");
        let size = end - start;
        write_word(start, size as u64);
        write_word(start + 8, FREE_TAG ^ start as u64);
        write_word(start + HEADER, 0);
        FreeListAllocator {
            start,
            end,
            head: start,
            stats: AllocStats {
                free_bytes: size - HEADER,
                allocated_bytes: 0,
                header_bytes: HEADER,
                free_blocks: 1,
                allocated_blocks: 0,
            },
        }
    }

    pub fn range(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    pub fn stats(&self) -> AllocStats {
        self.stats
    }

    fn size_of(&self, block: usize) -> usize {
        unsafe { read_word(block) as usize }
    }

    fn next_free(&self, block: usize) -> usize {
        unsafe { read_word(block + HEADER) as usize }
    }

    fn set_next_free(&mut self, block: usize, next: usize) {
        unsafe { write_word(block + HEADER, next as u64) }
    }

    fn write_header(&mut self, block: usize, size: usize, state: BlockState) {
        let tag = match state {
            BlockState::Free => FREE_TAG,
            BlockState::Allocated => ALLOC_TAG,
        };
        unsafe {
            write_word(block, size as u64);
            write_word(block + 8, tag ^ block as u64);
        }
    }

    fn state_at(&self, block: usize) -> Option<BlockState> {
        if block < self.start || block + HEADER > self.end || block % MIN_ALIGN != 0 {
            return None;
        }
        let tag = unsafe { read_word(block + 8) } ^ block as u64;
        match tag {
            ALLOC_TAG => Some(BlockState::Allocated),
            FREE_TAG => Some(BlockState::Free),
            _ => None,
        }
    }

    /// Checks that `payload` addresses a live allocation.
    fn validate_live(&self, payload: usize) -> Result<usize, AllocError> {
        let block = payload.wrapping_sub(HEADER);
        if payload < self.start + HEADER || payload >= self.end {
            return Err(AllocError::UnknownAddress(payload));
        }
        let state = self.state_at(block);
        // A stale allocated tag inside another block's payload is not a block.
        if cfg!(debug_assertions) && state == Some(BlockState::Allocated) && !self.is_block_boundary(block) {
            return Err(AllocError::UnknownAddress(payload));
        }
        match state {
            Some(BlockState::Allocated) => Ok(block),
            Some(BlockState::Free) => Err(AllocError::DoubleFree(payload)),
            None => Err(AllocError::UnknownAddress(payload)),
        }
    }

    fn is_block_boundary(&self, target: usize) -> bool {
        let mut block = self.start;
        while block < target {
            block += self.size_of(block);
        }
        block == target
    }

    pub fn alloc(&mut self, size: usize, align: usize) -> Result<usize, AllocError> {
        if size == 0 || !align.is_power_of_two() {
            return Err(AllocError::InvalidRequest { size, align });
        }
        let align = align.max(MIN_ALIGN);
        let need = payload_size(size);
        let mut prev = 0usize;
        let mut cur = self.head;
        while cur != 0 {
            let cur_size = self.size_of(cur);
            if let Some((start, end)) = fit(cur, cur_size, need, align) {
                self.carve(prev, cur, cur_size, start, end);
                return Ok(start + HEADER);
            }
            prev = cur;
            cur = self.next_free(cur);
        }
        Err(AllocError::OutOfMemory { size, align })
    }

    /// Splits free block `cur` (list predecessor `prev`) so that
    /// `[start, end)` becomes allocated. Front and tail remainders stay on the
    /// list in place of `cur`.
    fn carve(&mut self, prev: usize, cur: usize, cur_size: usize, start: usize, end: usize) {
        let next = self.next_free(cur);
        let block_end = cur + cur_size;
        let mut end = end;
        let tail = block_end - end;
        let mut link = next;
        self.stats.free_blocks -= 1;
        self.stats.free_bytes -= cur_size - HEADER;
        self.stats.header_bytes -= HEADER;
        if tail >= MIN_BLOCK {
            self.write_header(end, tail, BlockState::Free);
            self.set_next_free(end, next);
            link = end;
            self.add_free(tail);
        } else {
            end = block_end;
        }
        if start > cur {
            let front = start - cur;
            self.write_header(cur, front, BlockState::Free);
            self.set_next_free(cur, link);
            link = cur;
            self.add_free(front);
        }
        self.relink(prev, link);
        let size = end - start;
        self.write_header(start, size, BlockState::Allocated);
        self.stats.allocated_blocks += 1;
        self.stats.allocated_bytes += size - HEADER;
        self.stats.header_bytes += HEADER;
    }

    fn add_free(&mut self, size: usize) {
        self.stats.free_blocks += 1;
        self.stats.free_bytes += size - HEADER;
        self.stats.header_bytes += HEADER;
    }

    fn relink(&mut self, prev: usize, to: usize) {
        if prev == 0 {
            self.head = to;
        } else {
            self.set_next_free(prev, to);
        }
    }

    pub fn dealloc(&mut self, payload: usize) -> Result<(), AllocError> {
        let block = self.validate_live(payload)?;
        let size = self.size_of(block);
        self.stats.allocated_blocks -= 1;
        self.stats.allocated_bytes -= size - HEADER;
        self.stats.header_bytes -= HEADER;
        self.release(block, size);
        Ok(())
    }

    /// Puts `[block, block + size)` on the free list, merging with adjacent
    /// free neighbours. Stats must not yet count the block.
    fn release(&mut self, block: usize, size: usize) {
        if cfg!(debug_assertions) {
            unsafe { std::ptr::write_bytes((block + HEADER) as *mut u8, POISON, size - HEADER) };
        }
        self.write_header(block, size, BlockState::Free);
        self.add_free(size);

        let mut prev = 0usize;
        let mut next = self.head;
        while next != 0 && next < block {
            prev = next;
            next = self.next_free(next);
        }

        let mut block = block;
        let mut size = size;
        if next != 0 && block + size == next {
            let next_size = self.size_of(next);
            let after = self.next_free(next);
            size += next_size;
            self.merged();
            next = after;
        }
        if prev != 0 && prev + self.size_of(prev) == block {
            size += self.size_of(prev);
            block = prev;
            self.merged();
            self.write_header(block, size, BlockState::Free);
            self.set_next_free(block, next);
        } else {
            self.write_header(block, size, BlockState::Free);
            self.set_next_free(block, next);
            self.relink(prev, block);
        }
    }

    fn merged(&mut self) {
        // Two free blocks became one: one header turns into free payload.
        self.stats.free_blocks -= 1;
        self.stats.header_bytes -= HEADER;
        self.stats.free_bytes += HEADER;
    }

    /// Resizes the allocation at `payload`. Grows in place when the following
    /// block is free and large enough; otherwise moves to a fresh block with
    /// 16-byte alignment. On failure the original block is untouched.
    pub fn realloc(&mut self, payload: usize, new_size: usize) -> Result<usize, AllocError> {
        let block = self.validate_live(payload)?;
        let size = self.size_of(block);
        let have = size - HEADER;
        let need = payload_size(new_size);

        if need <= have {
            let tail = have - need;
            if tail >= MIN_BLOCK {
                let new_block_size = HEADER + need;
                self.write_header(block, new_block_size, BlockState::Allocated);
                self.stats.allocated_bytes -= tail;
                // The tail's header is carved out of the old payload.
                self.release(block + new_block_size, tail);
            }
            return Ok(payload);
        }

        let next = block + size;
        if next < self.end && self.state_at(next) == Some(BlockState::Free) {
            let next_size = self.size_of(next);
            if size + next_size >= HEADER + need {
                self.absorb_next(block, size, next, next_size, need);
                return Ok(payload);
            }
        }

        let moved = self.alloc(new_size, MIN_ALIGN)?;
        unsafe {
            std::ptr::copy_nonoverlapping(payload as *const u8, moved as *mut u8, have.min(need));
        }
        self.dealloc(payload)?;
        Ok(moved)
    }

    fn absorb_next(&mut self, block: usize, size: usize, next: usize, next_size: usize, need: usize) {
        // Unlink `next` from the free list.
        let mut prev = 0usize;
        let mut cur = self.head;
        while cur != next {
            prev = cur;
            cur = self.next_free(cur);
        }
        let after = self.next_free(next);
        self.stats.free_blocks -= 1;
        self.stats.free_bytes -= next_size - HEADER;
        self.stats.header_bytes -= HEADER;

        let total = size + next_size;
        let wanted = HEADER + need;
        let tail = total - wanted;
        let link;
        let new_size;
        if tail >= MIN_BLOCK {
            let tail_block = block + wanted;
            self.write_header(tail_block, tail, BlockState::Free);
            self.set_next_free(tail_block, after);
            self.add_free(tail);
            link = tail_block;
            new_size = wanted;
        } else {
            link = after;
            new_size = total;
        }
        self.relink(prev, link);
        self.write_header(block, new_size, BlockState::Allocated);
        self.stats.allocated_bytes += new_size - size;
    }

    /// Payload size of the live allocation at `payload`.
    pub fn usable_size(&self, payload: usize) -> Result<usize, AllocError> {
        let block = self.validate_live(payload)?;
        Ok(self.size_of(block) - HEADER)
    }

    /// Walks the heap in address order.
    pub fn blocks(&self) -> Vec<AllocationBlock> {
        let mut out = Vec::new();
        let mut block = self.start;
        while block < self.end {
            let size = self.size_of(block);
            let state = self.state_at(block).expect("corrupt block header");
            out.push(AllocationBlock {
                address: block + HEADER,
                size: size - HEADER,
                state,
            });
            block += size;
        }
        out
    }

    /// Recomputes accounting from a heap walk and cross-checks it against the
    /// free list and the running counters.
    pub fn verify(&self) -> Result<AllocStats, String> {
        let mut walked = AllocStats::default();
        let mut free_in_walk = Vec::new();
        let mut block = self.start;
        let mut prev_free = false;
        while block < self.end {
            let size = self.size_of(block);
            if size < MIN_BLOCK || size % MIN_ALIGN != 0 || block + size > self.end {
                return Err(format!("bad block size {size} at {block:#x}"));
            }
            walked.header_bytes += HEADER;
            match self.state_at(block) {
                Some(BlockState::Free) => {
                    if prev_free {
                        return Err(format!("uncoalesced free block at {block:#x}"));
                    }
                    walked.free_blocks += 1;
                    walked.free_bytes += size - HEADER;
                    free_in_walk.push(block);
                    prev_free = true;
                }
                Some(BlockState::Allocated) => {
                    walked.allocated_blocks += 1;
                    walked.allocated_bytes += size - HEADER;
                    prev_free = false;
                }
                None => return Err(format!("bad tag at {block:#x}")),
            }
            block += size;
        }
        if block != self.end {
            return Err("heap walk overran range".into());
        }
        let mut listed = Vec::new();
        let mut cur = self.head;
        while cur != 0 {
            listed.push(cur);
            if listed.len() > free_in_walk.len() {
                return Err("free list longer than free block count".into());
            }
            cur = self.next_free(cur);
        }
        if listed != free_in_walk {
            return Err("free list does not match heap walk".into());
        }
        if walked != self.stats {
            return Err(format!("counters {:?} disagree with walk {:?}", self.stats, walked));
        }
        if walked.total() != self.end - self.start {
            return Err("accounting does not cover range".into());
        }
        Ok(walked)
    }
}
