//! Page-aligned I/O buffers.

use std::alloc::{alloc_zeroed, dealloc, Layout};

/// A buffer for disk-bound data with the shape the aligned write path
/// needs: the usable region starts at a page boundary, one spare page
/// precedes it, and the allocation extends to a whole trailing page, so the
/// backend can prepend read-back file bytes and pad writes without touching
/// foreign memory.
pub struct AlignedBuf {
    ptr: *mut u8,
    layout: Layout,
    page: usize,
    cap: usize,
}

unsafe impl Send for AlignedBuf {}

impl AlignedBuf {
    pub fn new(cap: usize, page: usize) -> Self {
        assert!(page.is_power_of_two());
        let padded = cap.div_ceil(page).max(1) * page;
        let layout = Layout::from_size_align(page + padded, page).expect("buffer layout");
        let ptr = unsafe { alloc_zeroed(layout) };
        assert!(!ptr.is_null(), "aligned allocation failed");
        AlignedBuf {
            ptr,
            layout,
            page,
            cap,
        }
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    pub fn page_size(&self) -> usize {
        self.page
    }

    /// The usable data region.
    pub fn data(&self) -> &[u8] {
        unsafe { std::slice::from_raw_parts(self.ptr.add(self.page), self.cap) }
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        unsafe { std::slice::from_raw_parts_mut(self.ptr.add(self.page), self.cap) }
    }

    /// The whole allocation: spare leading page, data region, tail padding.
    /// The data region starts at `page_size()`.
    pub(crate) fn whole_mut(&mut self) -> &mut [u8] {
        unsafe { std::slice::from_raw_parts_mut(self.ptr, self.layout.size()) }
    }

    pub(crate) fn whole(&self) -> &[u8] {
        unsafe { std::slice::from_raw_parts(self.ptr, self.layout.size()) }
    }
}

impl Drop for AlignedBuf {
    fn drop(&mut self) {
        unsafe { dealloc(self.ptr, self.layout) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_is_page_aligned_with_spare_page() {
        let mut buf = AlignedBuf::new(100, 4096);
        assert_eq!(buf.data().as_ptr() as usize % 4096, 0);
        assert_eq!(buf.whole().len(), 2 * 4096);
        assert_eq!(buf.capacity(), 100);
        buf.data_mut()[99] = 7;
        assert_eq!(buf.whole()[4096 + 99], 7);
    }

    #[test]
    fn exact_page_capacity_still_has_spare_page() {
        let buf = AlignedBuf::new(8192, 4096);
        assert_eq!(buf.whole().len(), 3 * 4096);
    }
}
