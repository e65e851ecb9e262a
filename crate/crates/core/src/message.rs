//! Message schemas that live directly in an arena.
//!
//! A message is a `#[repr(C)]` struct of plain fixed-size fields and
//! [`DynSeq`] sequences. A sequence stores the raw address of its backing
//! buffer; since every process maps an arena at the same base, that address is
//! valid wherever the message is read.
//!
//! The same field list drives the copy-based wire encoding: fixed fields in
//! declaration order, little-endian; each sequence as `[u32 LE length][raw
//! elements]`.

use std::collections::HashMap;
use std::marker::PhantomData;
use std::sync::Mutex;

use thiserror::Error;

use crate::alloc::AllocError;
use crate::arena::OwnedArena;

#[cfg(not(target_endian = "little"))]
compile_error!("sequence payloads are encoded as raw little-endian memory");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MessageError {
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error("buffer {0:#x} does not belong to the message's store")]
    ForeignBuffer(usize),
    #[error("sequence length overflows")]
    Overflow,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("buffer truncated")]
    Truncated,
    #[error("{0} bytes left over after decoding")]
    Overlong(usize),
    #[error(transparent)]
    Message(#[from] MessageError),
}

/// Where sequence buffers come from: an arena for zero-copy messages, the
/// process heap for detached copies.
pub trait SeqStore {
    fn alloc(&self, size: usize, align: usize) -> Result<usize, AllocError>;
    fn realloc(&self, address: usize, new_size: usize) -> Result<usize, AllocError>;
    fn dealloc(&self, address: usize) -> Result<(), AllocError>;
    /// Whether `address` can be one of this store's buffers.
    fn owns(&self, address: usize) -> bool;
}

impl SeqStore for OwnedArena {
    fn alloc(&self, size: usize, align: usize) -> Result<usize, AllocError> {
        OwnedArena::alloc(self, size, align)
    }
    fn realloc(&self, address: usize, new_size: usize) -> Result<usize, AllocError> {
        OwnedArena::realloc(self, address, new_size)
    }
    fn dealloc(&self, address: usize) -> Result<(), AllocError> {
        OwnedArena::dealloc(self, address)
    }
    fn owns(&self, address: usize) -> bool {
        crate::arena::AddressRange::contains(self, address)
    }
}

/// Fixed-size value with a little-endian encoding and no pointers.
///
/// # Safety
/// Implementors must be valid for any bit pattern of their size, contain no
/// references or pointers, and have alignment of at most 16.
pub unsafe trait Plain: Copy + Send + Sync + 'static {
    const SIZE: usize;
    fn zeroed() -> Self;
    fn write_le(&self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

macro_rules! plain_number {
    ($($t:ty),*) => {$(
        unsafe impl Plain for $t {
            const SIZE: usize = std::mem::size_of::<$t>();
            fn zeroed() -> Self {
                0 as $t
            }
            fn write_le(&self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes[..Self::SIZE].try_into().unwrap())
            }
        }
    )*};
}

plain_number!(u8, i8, u16, i16, u32, i32, u64, i64, f32, f64);

unsafe impl<T: Plain, const N: usize> Plain for [T; N] {
    const SIZE: usize = T::SIZE * N;
    fn zeroed() -> Self {
        [T::zeroed(); N]
    }
    fn write_le(&self, out: &mut Vec<u8>) {
        for v in self {
            v.write_le(out);
        }
    }
    fn read_le(bytes: &[u8]) -> Self {
        std::array::from_fn(|i| T::read_le(&bytes[i * T::SIZE..]))
    }
}

fn take<'a>(input: &mut &'a [u8], n: usize) -> Result<&'a [u8], CodecError> {
    if input.len() < n {
        return Err(CodecError::Truncated);
    }
    let (head, tail) = input.split_at(n);
    *input = tail;
    Ok(head)
}

/// One field of a message schema.
///
/// # Safety
/// `for_each_buffer` must report every buffer the field owns, and a value
/// built by `empty` must own none.
pub unsafe trait Field: Send + Sync + 'static {
    fn empty() -> Self;
    fn encoded_len(&self) -> usize;
    fn encode(&self, out: &mut Vec<u8>);
    fn decode(&mut self, input: &mut &[u8], store: &dyn SeqStore) -> Result<(), CodecError>;
    fn for_each_buffer(&self, _f: &mut dyn FnMut(usize)) {}
}

unsafe impl<T: Plain> Field for T {
    fn empty() -> Self {
        T::zeroed()
    }
    fn encoded_len(&self) -> usize {
        T::SIZE
    }
    fn encode(&self, out: &mut Vec<u8>) {
        self.write_le(out);
    }
    fn decode(&mut self, input: &mut &[u8], _store: &dyn SeqStore) -> Result<(), CodecError> {
        *self = T::read_le(take(input, T::SIZE)?);
        Ok(())
    }
}

/// Resizable sequence whose buffer lives in the message's store.
///
/// An empty sequence has no buffer (data address 0). Growth starts at
/// capacity 4 and doubles, moving the buffer whenever the allocator cannot
/// extend it in place.
#[repr(C)]
pub struct DynSeq<T: Plain> {
    data: u64,
    len: u64,
    cap: u64,
    _elem: PhantomData<T>,
}

pub const SEQ_INITIAL_CAPACITY: usize = 4;

impl<T: Plain> Default for DynSeq<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Plain> std::fmt::Debug for DynSeq<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DynSeq")
            .field("data", &format_args!("{:#x}", self.data))
            .field("len", &self.len)
            .field("cap", &self.cap)
            .finish()
    }
}

impl<T: Plain> DynSeq<T> {
    const ELEM_CHECK: () = assert!(std::mem::align_of::<T>() <= 16 && std::mem::size_of::<T>() > 0);

    pub const fn new() -> Self {
        DynSeq {
            data: 0,
            len: 0,
            cap: 0,
            _elem: PhantomData,
        }
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.cap as usize
    }

    /// Address of the backing buffer, 0 when none.
    pub fn data_address(&self) -> usize {
        self.data as usize
    }

    pub fn as_slice(&self) -> &[T] {
        if self.data == 0 {
            return &[];
        }
        // SAFETY: data points at `cap >= len` initialized elements owned by
        // this sequence (maintained by every mutating method).
        unsafe { std::slice::from_raw_parts(self.data as *const T, self.len as usize) }
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        if self.data == 0 {
            return &mut [];
        }
        // SAFETY: as above, and `&mut self` gives exclusive access.
        unsafe { std::slice::from_raw_parts_mut(self.data as *mut T, self.len as usize) }
    }

    fn check_store(&self, store: &dyn SeqStore) -> Result<(), MessageError> {
        if self.data != 0 && !store.owns(self.data as usize) {
            return Err(MessageError::ForeignBuffer(self.data as usize));
        }
        Ok(())
    }

    /// Ensures room for `additional` more elements using the growth rule.
    pub fn reserve(&mut self, store: &dyn SeqStore, additional: usize) -> Result<(), MessageError> {
        let () = Self::ELEM_CHECK;
        self.check_store(store)?;
        let needed = self.len().checked_add(additional).ok_or(MessageError::Overflow)?;
        if needed <= self.capacity() {
            return Ok(());
        }
        let mut cap = self.capacity().max(SEQ_INITIAL_CAPACITY);
        while cap < needed {
            cap = cap.checked_mul(2).ok_or(MessageError::Overflow)?;
        }
        self.set_capacity(store, cap)
    }

    fn set_capacity(&mut self, store: &dyn SeqStore, cap: usize) -> Result<(), MessageError> {
        let bytes = cap.checked_mul(T::SIZE).ok_or(MessageError::Overflow)?;
        let data = if self.data == 0 {
            store.alloc(bytes, std::mem::align_of::<T>())?
        } else {
            store.realloc(self.data as usize, bytes)?
        };
        self.data = data as u64;
        self.cap = cap as u64;
        Ok(())
    }

    pub fn push(&mut self, store: &dyn SeqStore, value: T) -> Result<(), MessageError> {
        self.reserve(store, 1)?;
        // SAFETY: reserve guaranteed capacity for one more element.
        unsafe { (self.data as *mut T).add(self.len as usize).write(value) };
        self.len += 1;
        Ok(())
    }

    pub fn extend_from_slice(&mut self, store: &dyn SeqStore, values: &[T]) -> Result<(), MessageError> {
        self.reserve(store, values.len())?;
        if values.is_empty() {
            return Ok(());
        }
        // SAFETY: capacity covers len + values.len(); source is a distinct slice.
        unsafe {
            std::ptr::copy_nonoverlapping(values.as_ptr(), (self.data as *mut T).add(self.len as usize), values.len());
        }
        self.len += values.len() as u64;
        Ok(())
    }

    /// Sets the length to `new_len`, filling new elements with `value`.
    pub fn resize(&mut self, store: &dyn SeqStore, new_len: usize, value: T) -> Result<(), MessageError> {
        if new_len > self.len() {
            self.reserve(store, new_len - self.len())?;
            for i in self.len()..new_len {
                // SAFETY: i < capacity after reserve.
                unsafe { (self.data as *mut T).add(i).write(value) };
            }
        }
        self.len = new_len as u64;
        Ok(())
    }

    pub fn clear(&mut self) {
        self.len = 0;
    }

    /// Frees the buffer and resets to the empty state.
    pub fn release(&mut self, store: &dyn SeqStore) -> Result<(), MessageError> {
        self.check_store(store)?;
        if self.data != 0 {
            store.dealloc(self.data as usize)?;
        }
        *self = Self::new();
        Ok(())
    }

    fn raw_bytes(&self) -> &[u8] {
        let s = self.as_slice();
        // SAFETY: Plain values have no padding-dependent invariants and any
        // initialized element is readable as bytes.
        unsafe { std::slice::from_raw_parts(s.as_ptr() as *const u8, std::mem::size_of_val(s)) }
    }
}

unsafe impl<T: Plain> Field for DynSeq<T> {
    fn empty() -> Self {
        DynSeq::new()
    }

    fn encoded_len(&self) -> usize {
        4 + self.len() * T::SIZE
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.len as u32).to_le_bytes());
        out.extend_from_slice(self.raw_bytes());
    }

    fn decode(&mut self, input: &mut &[u8], store: &dyn SeqStore) -> Result<(), CodecError> {
        let len = u32::from_le_bytes(take(input, 4)?.try_into().unwrap()) as usize;
        let bytes = len.checked_mul(T::SIZE).ok_or(MessageError::Overflow)?;
        let raw = take(input, bytes)?;
        self.release(store)?;
        if len == 0 {
            return Ok(());
        }
        self.set_capacity(store, len)?;
        // SAFETY: the new buffer holds `len` elements; `raw` is exactly that many bytes.
        unsafe { std::ptr::copy_nonoverlapping(raw.as_ptr(), self.data as *mut u8, bytes) };
        self.len = len as u64;
        Ok(())
    }

    fn for_each_buffer(&self, f: &mut dyn FnMut(usize)) {
        if self.data != 0 {
            f(self.data as usize);
        }
    }
}

/// A complete message schema.
///
/// # Safety
/// The type must be `#[repr(C)]`, built only from [`Field`]s, have no `Drop`
/// glue, and report every owned buffer through `for_each_buffer`. Use
/// [`impl_message!`](crate::impl_message) rather than implementing by hand.
pub unsafe trait Message: Sized + Send + Sync + 'static {
    fn empty() -> Self;
    fn encoded_len(&self) -> usize;
    fn encode(&self, out: &mut Vec<u8>);
    fn decode_fields(&mut self, input: &mut &[u8], store: &dyn SeqStore) -> Result<(), CodecError>;
    fn for_each_buffer(&self, f: &mut dyn FnMut(usize));

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode(&mut out);
        out
    }

    /// Decodes `bytes` into `self`, which must be freshly built by `empty`.
    /// Trailing bytes are an error.
    fn decode_from(&mut self, mut bytes: &[u8], store: &dyn SeqStore) -> Result<(), CodecError> {
        self.decode_fields(&mut bytes, store)?;
        if !bytes.is_empty() {
            return Err(CodecError::Overlong(bytes.len()));
        }
        Ok(())
    }
}

/// Implements [`Message`] for a `#[repr(C)]` struct from its field list, in
/// declaration order.
///
/// ```
/// use zerocast::{impl_message, DynSeq};
///
/// #[repr(C)]
/// pub struct Scan {
///     pub stamp_ns: u64,
///     pub ranges: DynSeq<f32>,
/// }
/// impl_message!(Scan { stamp_ns, ranges });
/// ```
#[macro_export]
macro_rules! impl_message {
    ($ty:ident { $($field:ident),+ $(,)? }) => {
        unsafe impl $crate::message::Message for $ty {
            fn empty() -> Self {
                $ty { $($field: $crate::message::Field::empty()),+ }
            }
            fn encoded_len(&self) -> usize {
                0 $(+ $crate::message::Field::encoded_len(&self.$field))+
            }
            fn encode(&self, out: &mut Vec<u8>) {
                $($crate::message::Field::encode(&self.$field, out);)+
            }
            fn decode_fields(
                &mut self,
                input: &mut &[u8],
                store: &dyn $crate::message::SeqStore,
            ) -> Result<(), $crate::message::CodecError> {
                $($crate::message::Field::decode(&mut self.$field, input, store)?;)+
                Ok(())
            }
            fn for_each_buffer(&self, f: &mut dyn FnMut(usize)) {
                $($crate::message::Field::for_each_buffer(&self.$field, f);)+
            }
        }
    };
}

/// Heap-backed [`SeqStore`] for messages that are not in shared memory.
#[derive(Debug, Default)]
pub struct HeapStore {
    blocks: Mutex<HashMap<usize, std::alloc::Layout>>,
}

impl HeapStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn blocks(&self) -> std::sync::MutexGuard<'_, HashMap<usize, std::alloc::Layout>> {
        self.blocks.lock().unwrap_or_else(|e| e.into_inner())
    }
}

const HEAP_ALIGN: usize = 16;

impl SeqStore for HeapStore {
    fn alloc(&self, size: usize, align: usize) -> Result<usize, AllocError> {
        if size == 0 || !align.is_power_of_two() || align > HEAP_ALIGN {
            return Err(AllocError::InvalidRequest { size, align });
        }
        let layout = std::alloc::Layout::from_size_align(size, HEAP_ALIGN)
            .map_err(|_| AllocError::InvalidRequest { size, align })?;
        // SAFETY: layout has nonzero size.
        let ptr = unsafe { std::alloc::alloc(layout) } as usize;
        if ptr == 0 {
            return Err(AllocError::OutOfMemory { size, align });
        }
        self.blocks().insert(ptr, layout);
        Ok(ptr)
    }

    fn realloc(&self, address: usize, new_size: usize) -> Result<usize, AllocError> {
        let mut blocks = self.blocks();
        let layout = *blocks.get(&address).ok_or(AllocError::UnknownAddress(address))?;
        if new_size == 0 {
            return Err(AllocError::InvalidRequest {
                size: 0,
                align: HEAP_ALIGN,
            });
        }
        // SAFETY: address was allocated with `layout`; new_size is nonzero.
        let ptr = unsafe { std::alloc::realloc(address as *mut u8, layout, new_size) } as usize;
        if ptr == 0 {
            return Err(AllocError::OutOfMemory {
                size: new_size,
                align: HEAP_ALIGN,
            });
        }
        blocks.remove(&address);
        blocks.insert(ptr, std::alloc::Layout::from_size_align(new_size, HEAP_ALIGN).unwrap());
        Ok(ptr)
    }

    fn dealloc(&self, address: usize) -> Result<(), AllocError> {
        let layout = self.blocks().remove(&address).ok_or(AllocError::UnknownAddress(address))?;
        // SAFETY: allocated by us with this layout and now forgotten.
        unsafe { std::alloc::dealloc(address as *mut u8, layout) };
        Ok(())
    }

    fn owns(&self, address: usize) -> bool {
        self.blocks().contains_key(&address)
    }
}

impl Drop for HeapStore {
    fn drop(&mut self) {
        for (addr, layout) in self.blocks.get_mut().unwrap_or_else(|e| e.into_inner()).drain() {
            // SAFETY: every entry is a live allocation made by this store.
            unsafe { std::alloc::dealloc(addr as *mut u8, layout) };
        }
    }
}

/// A message owned by this process's heap, e.g. the result of decoding a
/// copy-based delivery.
pub struct Detached<M: Message> {
    store: HeapStore,
    root: Box<M>,
}

impl<M: Message> Detached<M> {
    pub fn new() -> Self {
        Detached {
            store: HeapStore::new(),
            root: Box::new(M::empty()),
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut msg = Self::new();
        msg.root.decode_from(bytes, &msg.store)?;
        Ok(msg)
    }

    /// Mutable access to the fields together with the store that sequence
    /// operations must use.
    pub fn parts_mut(&mut self) -> (&mut M, &dyn SeqStore) {
        (&mut self.root, &self.store)
    }
}

impl<M: Message> Default for Detached<M> {
    fn default() -> Self {
        Self::new()
    }
}

impl<M: Message> std::ops::Deref for Detached<M> {
    type Target = M;
    fn deref(&self) -> &M {
        &self.root
    }
}

impl<M: Message + std::fmt::Debug> std::fmt::Debug for Detached<M> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.root.fmt(f)
    }
}

/// 128-byte fixed record.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fixed128 {
    pub seq: u64,
    pub stamp_ns: u64,
    pub body: [u8; 112],
}
impl_message!(Fixed128 { seq, stamp_ns, body });

/// Point-cloud-like record: a fixed header and one byte sequence.
#[repr(C)]
#[derive(Debug)]
pub struct PointCloud {
    pub stamp_ns: u64,
    pub seq: u64,
    pub height: u32,
    pub width: u32,
    pub point_step: u32,
    pub row_step: u32,
    pub is_dense: u8,
    pub data: DynSeq<u8>,
}
impl_message!(PointCloud {
    stamp_ns,
    seq,
    height,
    width,
    point_step,
    row_step,
    is_dense,
    data
});

/// Encoded size of the fixed part of a [`PointCloud`].
pub const POINT_CLOUD_HEADER_LEN: usize = 8 + 8 + 4 * 4 + 1;
