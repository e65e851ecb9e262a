//! Reference free-list allocator: an explicit, address-sorted vector of blocks
//! with no intrusive pointers. Slow and obviously correct.

const H: usize = 16;
const MIN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub start: usize,
    pub size: usize,
    pub free: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleError {
    Invalid,
    OutOfMemory,
    Unknown,
}

#[derive(Debug, Clone)]
pub struct Oracle {
    pub blocks: Vec<Block>,
}

fn up(v: usize, a: usize) -> usize {
    v.div_ceil(a) * a
}

fn rounded(size: usize) -> usize {
    up(size.max(1), 16)
}

impl Oracle {
    pub fn new(start: usize, end: usize) -> Self {
        Oracle {
            blocks: vec![Block {
                start,
                size: end - start,
                free: true,
            }],
        }
    }

    /// Allocated blocks as (payload address, payload size).
    pub fn live(&self) -> Vec<(usize, usize)> {
        self.blocks.iter().filter(|b| !b.free).map(|b| (b.start + H, b.size - H)).collect()
    }

    pub fn free_bytes(&self) -> usize {
        self.blocks.iter().filter(|b| b.free).map(|b| b.size - H).sum()
    }

    fn placement(b: &Block, need: usize, align: usize) -> Option<usize> {
        let mut payload = up(b.start + H, align);
        let gap = payload - H - b.start;
        if gap != 0 && gap < MIN {
            payload = up(b.start + H + MIN, align);
        }
        (payload + need <= b.start + b.size).then_some(payload)
    }

    pub fn alloc(&mut self, size: usize, align: usize) -> Result<usize, OracleError> {
        if size == 0 || !align.is_power_of_two() {
            return Err(OracleError::Invalid);
        }
        let align = align.max(16);
        let need = rounded(size);
        for i in 0..self.blocks.len() {
            let b = self.blocks[i];
            if !b.free {
                continue;
            }
            let Some(payload) = Self::placement(&b, need, align) else {
                continue;
            };
            let start = payload - H;
            let mut pieces = Vec::new();
            if start > b.start {
                pieces.push(Block {
                    start: b.start,
                    size: start - b.start,
                    free: true,
                });
            }
            let block_end = b.start + b.size;
            let mut end = payload + need;
            if block_end - end < MIN {
                end = block_end;
            }
            pieces.push(Block {
                start,
                size: end - start,
                free: false,
            });
            if end < block_end {
                pieces.push(Block {
                    start: end,
                    size: block_end - end,
                    free: true,
                });
            }
            self.blocks.splice(i..=i, pieces);
            return Ok(payload);
        }
        Err(OracleError::OutOfMemory)
    }

    fn index_of(&self, payload: usize) -> Result<usize, OracleError> {
        self.blocks
            .iter()
            .position(|b| !b.free && b.start + H == payload)
            .ok_or(OracleError::Unknown)
    }

    fn coalesce(&mut self) {
        let mut out: Vec<Block> = Vec::with_capacity(self.blocks.len());
        for b in self.blocks.drain(..) {
            match out.last_mut() {
                Some(last) if last.free && b.free => last.size += b.size,
                _ => out.push(b),
            }
        }
        self.blocks = out;
    }

    pub fn dealloc(&mut self, payload: usize) -> Result<(), OracleError> {
        let i = self.index_of(payload)?;
        self.blocks[i].free = true;
        self.coalesce();
        Ok(())
    }

    pub fn realloc(&mut self, payload: usize, new_size: usize) -> Result<usize, OracleError> {
        let i = self.index_of(payload)?;
        let need = rounded(new_size);
        let b = self.blocks[i];
        let have = b.size - H;
        if need <= have {
            if have - need >= MIN {
                self.blocks[i].size = H + need;
                self.blocks.insert(
                    i + 1,
                    Block {
                        start: b.start + H + need,
                        size: have - need,
                        free: true,
                    },
                );
                self.coalesce();
            }
            return Ok(payload);
        }
        if let Some(next) = self.blocks.get(i + 1).copied() {
            if next.free && b.size + next.size >= H + need {
                let total = b.size + next.size;
                let tail = total - (H + need);
                self.blocks.remove(i + 1);
                if tail >= MIN {
                    self.blocks[i].size = H + need;
                    self.blocks.insert(
                        i + 1,
                        Block {
                            start: b.start + H + need,
                            size: tail,
                            free: true,
                        },
                    );
                } else {
                    self.blocks[i].size = total;
                }
                return Ok(payload);
            }
        }
        let moved = self.alloc(new_size, 16)?;
        self.dealloc(payload)?;
        Ok(moved)
    }
}
