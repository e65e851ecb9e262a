//! Random allocator traces replayed against the arena and the oracle in
//! lockstep, with content and conservation checks after every operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zerocast::alloc::{AllocError, BlockState};
use zerocast::arena::{AddressRange, ARENA_METADATA, MIN_ARENA_CAPACITY};
use zerocast::OwnedArena;

use super::alloc_oracle::{Oracle, OracleError};
use super::scratch_arena;

pub fn oracle_for(arena: &OwnedArena) -> Oracle {
    Oracle::new(arena.base() + ARENA_METADATA, arena.base() + arena.capacity())
}

pub fn assert_matches(arena: &OwnedArena, oracle: &Oracle) {
    let live: Vec<_> = arena
        .blocks()
        .into_iter()
        .filter(|b| b.state == BlockState::Allocated)
        .map(|b| (b.address, b.size))
        .collect();
    assert_eq!(live, oracle.live());
    assert_eq!(arena.free_bytes(), oracle.free_bytes());
    let stats = arena.verify().expect("heap walk");
    assert_eq!(stats.total() + ARENA_METADATA, arena.capacity(), "conservation");
}

#[derive(Debug, Clone)]
pub enum Op {
    Alloc(usize, u32),
    Dealloc(usize),
    Realloc(usize, usize),
}

pub fn run_trace(ops: &[Op]) {
    let arena = scratch_arena(MIN_ARENA_CAPACITY);
    let mut oracle = oracle_for(&arena);
    let mut live: Vec<(usize, usize, u8)> = Vec::new();
    for (n, op) in ops.iter().enumerate() {
        let fill = n as u8;
        match *op {
            Op::Alloc(size, align_pow) => {
                let align = 1usize << align_pow;
                let got = arena.alloc(size, align);
                let want = oracle.alloc(size, align);
                match (got, want) {
                    (Ok(p), Ok(q)) => {
                        assert_eq!(p, q);
                        assert_eq!(p % align, 0);
                        unsafe { std::ptr::write_bytes(p as *mut u8, fill, size) };
                        live.push((p, size, fill));
                    }
                    (Err(AllocError::OutOfMemory { .. }), Err(OracleError::OutOfMemory)) => {}
                    other => panic!("op {n} {op:?}: {other:?}"),
                }
            }
            Op::Dealloc(pick) if !live.is_empty() => {
                let (p, size, f) = live.swap_remove(pick % live.len());
                let bytes = unsafe { std::slice::from_raw_parts(p as *const u8, size) };
                assert!(bytes.iter().all(|b| *b == f), "op {n}: content of {p:#x} changed");
                arena.dealloc(p).unwrap();
                oracle.dealloc(p).unwrap();
            }
            Op::Realloc(pick, new_size) if !live.is_empty() => {
                let i = pick % live.len();
                let (p, size, f) = live[i];
                let got = arena.realloc(p, new_size);
                let want = oracle.realloc(p, new_size);
                match (got, want) {
                    (Ok(q), Ok(r)) => {
                        assert_eq!(q, r, "op {n}");
                        let kept = size.min(new_size);
                        let bytes = unsafe { std::slice::from_raw_parts(q as *const u8, kept) };
                        assert!(bytes.iter().all(|b| *b == f), "op {n}: realloc lost content");
                        unsafe { std::ptr::write_bytes(q as *mut u8, f, new_size) };
                        live[i] = (q, new_size, f);
                    }
                    (Err(AllocError::OutOfMemory { .. }), Err(OracleError::OutOfMemory)) => {}
                    other => panic!("op {n} {op:?}: {other:?}"),
                }
            }
            _ => {}
        }
        assert_matches(&arena, &oracle);
    }
}

pub fn random_ops(seed: u64, count: usize) -> Vec<Op> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| match rng.gen_range(0..10) {
            0..=3 => Op::Alloc(rng.gen_range(1..24_000), rng.gen_range(0..8)),
            4..=6 => Op::Dealloc(rng.gen()),
            _ => Op::Realloc(rng.gen(), rng.gen_range(1..40_000)),
        })
        .collect()
}

