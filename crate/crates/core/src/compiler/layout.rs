//! Storage layout allocation for compiled policy state.
//!
//! Contract storage is a map from 32-byte keys to 32-byte values, and every
//! written slot costs gas, so small fields (flags, ticks, counters) are
//! packed side by side into shared slots. The allocator hands out
//! byte-addressed field references in a fixed slot region; whole-slot arrays
//! (ring buffers) are placed after whatever slot is currently open.

use serde::{Deserialize, Serialize};

/// A field inside the fixed storage region: `len` bytes starting at byte
/// `offset` of slot `slot`. Numeric fields are big-endian within the field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldRef {
    pub slot: u32,
    pub offset: u8,
    pub len: u8,
}

#[derive(Debug, Default)]
pub struct LayoutAllocator {
    next_slot: u32,
    used_in_open_slot: u8,
}

impl LayoutAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocate a field of `len` bytes (at most 32), packing it into the
    /// open slot when it fits.
    pub fn alloc(&mut self, len: u8) -> FieldRef {
        assert!(len > 0 && len <= 32, "field length out of range: {len}");
        if self.used_in_open_slot == 0 || self.used_in_open_slot + len > 32 {
            self.next_slot += u32::from(self.used_in_open_slot > 0);
            self.used_in_open_slot = 0;
        }
        let field = FieldRef {
            slot: self.next_slot,
            offset: self.used_in_open_slot,
            len,
        };
        self.used_in_open_slot += len;
        if self.used_in_open_slot == 32 {
            self.next_slot += 1;
            self.used_in_open_slot = 0;
        }
        field
    }

    /// Claim `count` whole slots, returning the first index. The open slot,
    /// if partially used, is closed first.
    pub fn alloc_slots(&mut self, count: u32) -> u32 {
        if self.used_in_open_slot > 0 {
            self.next_slot += 1;
            self.used_in_open_slot = 0;
        }
        let start = self.next_slot;
        self.next_slot += count;
        start
    }

    /// Number of slots at least partially allocated so far.
    pub fn slots_used(&self) -> u32 {
        self.next_slot + u32::from(self.used_in_open_slot > 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packs_small_fields_into_one_slot() {
        let mut alloc = LayoutAllocator::new();
        let a = alloc.alloc(1);
        let b = alloc.alloc(8);
        let c = alloc.alloc(4);
        let d = alloc.alloc(1);
        let e = alloc.alloc(8);
        assert_eq!(
            [a.slot, b.slot, c.slot, d.slot, e.slot],
            [0, 0, 0, 0, 0],
            "1+8+4+1+8 = 22 bytes fit in one slot"
        );
        assert_eq!(b.offset, 1);
        assert_eq!(e.offset, 14);
        assert_eq!(alloc.slots_used(), 1);
    }

    #[test]
    fn overflows_into_the_next_slot() {
        let mut alloc = LayoutAllocator::new();
        alloc.alloc(30);
        let b = alloc.alloc(8);
        assert_eq!(b.slot, 1);
        assert_eq!(b.offset, 0);
        assert_eq!(alloc.slots_used(), 2);
    }

    #[test]
    fn exact_fill_closes_the_slot() {
        let mut alloc = LayoutAllocator::new();
        alloc.alloc(32);
        let b = alloc.alloc(1);
        assert_eq!(b.slot, 1);
        assert_eq!(alloc.slots_used(), 2);
    }

    #[test]
    fn whole_slot_arrays_close_the_open_slot() {
        let mut alloc = LayoutAllocator::new();
        alloc.alloc(4);
        let start = alloc.alloc_slots(4);
        assert_eq!(start, 1);
        let next = alloc.alloc(1);
        assert_eq!(next.slot, 5);
        assert_eq!(alloc.slots_used(), 6);
    }

    #[test]
    fn fields_never_overlap() {
        let mut alloc = LayoutAllocator::new();
        let mut taken: Vec<(u32, u8, u8)> = Vec::new();
        for len in [1u8, 8, 2, 4, 32, 9, 1, 16, 8, 8, 8, 1] {
            let f = alloc.alloc(len);
            assert!(f.offset as u16 + f.len as u16 <= 32);
            for (slot, offset, flen) in &taken {
                if *slot == f.slot {
                    let disjoint =
                        f.offset >= offset + flen || f.offset + f.len <= *offset;
                    assert!(disjoint, "{f:?} overlaps ({slot},{offset},{flen})");
                }
            }
            taken.push((f.slot, f.offset, f.len));
        }
    }
}
