//! Process-wide table of mapped arenas.
//!
//! A mapping, once made, is kept until the process exits: a buffer may be
//! read through a handle long after the endpoint that produced it is gone,
//! and the broker alone decides when the shared-memory object is unlinked.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::arena::{self, AddressRange, ArenaError, ArenaView, OwnedArena};
use crate::protocol::ArenaInfo;

/// Read access to an arena, whether this process owns it or not.
#[derive(Clone)]
pub enum ArenaRef {
    Owned(Arc<OwnedArena>),
    View(Arc<ArenaView>),
}

impl AddressRange for ArenaRef {
    fn base(&self) -> usize {
        match self {
            ArenaRef::Owned(a) => a.base(),
            ArenaRef::View(v) => v.base(),
        }
    }
    fn capacity(&self) -> usize {
        match self {
            ArenaRef::Owned(a) => a.capacity(),
            ArenaRef::View(v) => v.capacity(),
        }
    }
}

type Key = (String, usize);

#[derive(Default)]
struct Registry {
    owned: HashMap<Key, Arc<OwnedArena>>,
    views: HashMap<Key, Arc<ArenaView>>,
}

fn registry() -> std::sync::MutexGuard<'static, Registry> {
    static REGISTRY: OnceLock<Mutex<Registry>> = OnceLock::new();
    REGISTRY
        .get_or_init(Default::default)
        .lock()
        .unwrap_or_else(|e| e.into_inner())
}

fn key(info: &ArenaInfo) -> Key {
    (info.name.clone(), info.base as usize)
}

/// This process's arena at the placement the broker assigned, creating it on
/// first use.
pub fn owned(info: &ArenaInfo) -> Result<Arc<OwnedArena>, ArenaError> {
    let mut reg = registry();
    if let Some(a) = reg.owned.get(&key(info)) {
        return Ok(a.clone());
    }
    let (base, capacity) = (info.base as usize, info.capacity as usize);
    let arena = match arena::create_arena(&info.name, base, capacity) {
        // Left behind by an earlier process with our pid: nobody can be using it.
        Err(ArenaError::NameCollision(_)) => {
            log::warn!("replacing stale shared-memory object {}", info.name);
            arena::unlink(&info.name)?;
            arena::create_arena(&info.name, base, capacity)?
        }
        other => other?,
    };
    let arena = Arc::new(arena);
    reg.owned.insert(key(info), arena.clone());
    Ok(arena)
}

/// Read access to another endpoint's arena. Arenas owned by this process are
/// shared rather than mapped a second time.
pub fn attach(info: &ArenaInfo) -> Result<ArenaRef, ArenaError> {
    let mut reg = registry();
    let k = key(info);
    if let Some(a) = reg.owned.get(&k) {
        return Ok(ArenaRef::Owned(a.clone()));
    }
    if let Some(v) = reg.views.get(&k) {
        return Ok(ArenaRef::View(v.clone()));
    }
    let view = Arc::new(arena::attach_read_only(&info.name, info.base as usize, info.capacity as usize)?);
    reg.views.insert(k, view.clone());
    Ok(ArenaRef::View(view))
}
