//! Registered memory regions.
//!
//! Region bytes are owned by the table and addressed through raw pointers so
//! that, during a superstep, a destination thread of the shared-memory
//! backend can read a source region published by another thread. Entries are
//! append-only; deregistration leaves a tombstone so lookups stay O(1) and
//! ids are never reused.

use std::ptr;

use crate::error::{Error, Mitigable, Result};
use crate::types::Slot;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Region {
    pub(crate) ptr: *mut u8,
    pub(crate) len: usize,
    pub(crate) live: bool,
}

impl Region {
    fn allocate(len: usize) -> Result<Region> {
        let mut buf: Vec<u8> = Vec::new();
        buf.try_reserve_exact(len)
            .map_err(|_| Error::Mitigable(Mitigable::OutOfMemory))?;
        buf.resize(len, 0);
        let boxed = buf.into_boxed_slice();
        let ptr = Box::into_raw(boxed) as *mut u8;
        Ok(Region {
            ptr,
            len,
            live: true,
        })
    }

    /// # Safety
    /// `self` must come from `allocate` and not have been freed.
    unsafe fn free(self) {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(self.ptr, self.len)));
    }

    /// Checks `offset..offset + size` against the region.
    pub(crate) fn contains(&self, offset: u64, size: u64) -> bool {
        offset
            .checked_add(size)
            .is_some_and(|end| end <= self.len as u64)
    }
}

/// Read-only snapshot of a slot table, published to peers during a sync.
#[derive(Clone, Copy)]
pub(crate) struct TableView {
    local: *const Region,
    local_len: usize,
    global: *const Region,
    global_len: usize,
}

// Views are only dereferenced between the barriers of a superstep, while the
// owning thread is blocked inside the same sync and cannot mutate its table.
unsafe impl Send for TableView {}
unsafe impl Sync for TableView {}

impl TableView {
    pub(crate) const EMPTY: TableView = TableView {
        local: ptr::null(),
        local_len: 0,
        global: ptr::null(),
        global_len: 0,
    };

    /// # Safety
    /// The table this view was taken from must still be alive and unmodified.
    pub(crate) unsafe fn region(&self, slot: Slot) -> Option<Region> {
        let (base, len) = if slot.is_global() {
            (self.global, self.global_len)
        } else {
            (self.local, self.local_len)
        };
        let idx = slot.index() as usize;
        if idx >= len {
            return None;
        }
        let r = *base.add(idx);
        r.live.then_some(r)
    }
}

#[derive(Default)]
pub(crate) struct SlotTable {
    local: Vec<Region>,
    global: Vec<Region>,
    live: usize,
}

impl SlotTable {
    pub(crate) fn live(&self) -> usize {
        self.live
    }

    pub(crate) fn global_registrations(&self) -> u64 {
        self.global.len() as u64
    }

    pub(crate) fn reserve(&mut self, n: usize) -> Result<()> {
        let extra = n.saturating_sub(self.live);
        self.local
            .try_reserve(extra)
            .and_then(|_| self.global.try_reserve(extra))
            .map_err(|_| Error::Mitigable(Mitigable::OutOfMemory))
    }

    pub(crate) fn register(&mut self, global: bool, len: usize) -> Result<Slot> {
        let table = if global { &self.global } else { &self.local };
        let idx = table.len();
        if idx > Slot::MAX_INDEX as usize {
            return Err(Error::illegal("slot id space exhausted"));
        }
        let table = if global {
            &mut self.global
        } else {
            &mut self.local
        };
        table
            .try_reserve(1)
            .map_err(|_| Error::Mitigable(Mitigable::OutOfMemory))?;
        let region = Region::allocate(len)?;
        table.push(region);
        self.live += 1;
        Ok(if global {
            Slot::global(idx as u32)
        } else {
            Slot::local(idx as u32)
        })
    }

    pub(crate) fn get(&self, slot: Slot) -> Option<Region> {
        let table = if slot.is_global() {
            &self.global
        } else {
            &self.local
        };
        table
            .get(slot.index() as usize)
            .copied()
            .filter(|r| r.live)
    }

    /// Returns false when the slot was unknown or already deregistered.
    pub(crate) fn deregister(&mut self, slot: Slot) -> bool {
        let table = if slot.is_global() {
            &mut self.global
        } else {
            &mut self.local
        };
        match table.get_mut(slot.index() as usize) {
            Some(r) if r.live => {
                r.live = false;
                let freed = Region { live: true, ..*r };
                // SAFETY: the region was live, hence allocated and not freed.
                unsafe { freed.free() };
                r.ptr = ptr::null_mut();
                r.len = 0;
                self.live -= 1;
                true
            }
            _ => false,
        }
    }

    pub(crate) fn bytes(&self, slot: Slot) -> Option<&[u8]> {
        self.get(slot)
            // SAFETY: live regions are valid for `len` bytes; the shared borrow
            // of the table prevents concurrent mutation through this table.
            .map(|r| unsafe { std::slice::from_raw_parts(r.ptr, r.len) })
    }

    pub(crate) fn bytes_mut(&mut self, slot: Slot) -> Option<&mut [u8]> {
        self.get(slot)
            // SAFETY: as above, with exclusive access through `&mut self`.
            .map(|r| unsafe { std::slice::from_raw_parts_mut(r.ptr, r.len) })
    }

    pub(crate) fn view(&self) -> TableView {
        TableView {
            local: self.local.as_ptr(),
            local_len: self.local.len(),
            global: self.global.as_ptr(),
            global_len: self.global.len(),
        }
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = (Slot, &[u8])> + '_ {
        let locals = (0..self.local.len() as u32).map(Slot::local);
        let globals = (0..self.global.len() as u32).map(Slot::global);
        locals
            .chain(globals)
            .filter_map(move |s| self.bytes(s).map(|b| (s, b)))
    }

    pub(crate) fn shrink_to(&mut self, n: usize) {
        self.local.shrink_to(n);
        self.global.shrink_to(n);
    }
}

impl Drop for SlotTable {
    fn drop(&mut self) {
        for r in self.local.iter().chain(self.global.iter()) {
            if r.live {
                // SAFETY: live regions are owned by this table.
                unsafe { r.free() };
            }
        }
    }
}
