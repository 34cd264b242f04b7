//! Kernel side of the two-layer memory hierarchy: pluggable page allocators
//! behind the memory operations registry, the mapping table, and the
//! sys_mmap / sys_munmap wrappers.

use crate::abi::{errno, PAGE_SIZE};
use crate::mem::GuestMemory;
use crate::trace::{TraceEvent, TraceLog};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AllocError {
    /// No free run large enough.
    NoMemory,
    /// dealloc arguments do not describe a live allocation.
    Invalid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AllocStats {
    pub free_pages: u64,
    pub largest_free_run: u64,
    pub mapped_regions: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AllocatorKind {
    FreeList,
    Bump,
}

impl AllocatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AllocatorKind::FreeList => "freelist",
            AllocatorKind::Bump => "bump",
        }
    }
}

/// Pluggable page allocator bound into memory_ops at bootstrap. Bases are
/// page aligned and inside [heap_start, heap_end); live allocations are
/// pairwise disjoint.
pub trait KernelAllocator {
    fn alloc(&mut self, pages: u64) -> Result<u64, AllocError>;
    fn dealloc(&mut self, base: u64, pages: u64) -> Result<(), AllocError>;
    fn stats(&self) -> AllocStats;
    fn kind(&self) -> AllocatorKind;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Extent {
    base: u64,
    pages: u64,
}

impl Extent {
    fn end(&self) -> u64 {
        self.base + self.pages * PAGE_SIZE
    }
}

/// Coalescing free list with first-fit placement at the lowest address.
/// Adjacent free extents are merged eagerly, so the list never holds two
/// extents with touching bounds.
pub struct FreeListAllocator {
    heap_start: u64,
    heap_end: u64,
    free: Vec<Extent>,
    live: u64,
}

impl FreeListAllocator {
    pub fn new(heap_start: u64, heap_end: u64) -> FreeListAllocator {
        assert!(heap_start < heap_end);
        assert_eq!(heap_start % PAGE_SIZE, 0);
        assert_eq!(heap_end % PAGE_SIZE, 0);
        FreeListAllocator {
            heap_start,
            heap_end,
            free: vec![Extent {
                base: heap_start,
                pages: (heap_end - heap_start) / PAGE_SIZE,
            }],
            live: 0,
        }
    }

    /// Number of free extents; a fully coalesced idle heap has exactly one.
    pub fn extent_count(&self) -> usize {
        self.free.len()
    }

    /// The free extents as (base, pages) pairs, sorted by base.
    pub fn extents(&self) -> Vec<(u64, u64)> {
        self.free.iter().map(|e| (e.base, e.pages)).collect()
    }

    fn check_invariants(&self) {
        for w in self.free.windows(2) {
            debug_assert!(
                w[0].end() < w[1].base,
                "free extents must stay coalesced and sorted"
            );
        }
    }
}

impl KernelAllocator for FreeListAllocator {
    fn alloc(&mut self, pages: u64) -> Result<u64, AllocError> {
        if pages == 0 {
            return Err(AllocError::Invalid);
        }
        // list is sorted by base, so the first fit is the lowest address
        let idx = self
            .free
            .iter()
            .position(|e| e.pages >= pages)
            .ok_or(AllocError::NoMemory)?;
        let base = self.free[idx].base;
        if self.free[idx].pages == pages {
            self.free.remove(idx);
        } else {
            self.free[idx].base += pages * PAGE_SIZE;
            self.free[idx].pages -= pages;
        }
        self.live += 1;
        self.check_invariants();
        Ok(base)
    }

    fn dealloc(&mut self, base: u64, pages: u64) -> Result<(), AllocError> {
        if pages == 0
            || !base.is_multiple_of(PAGE_SIZE)
            || base < self.heap_start
            || base + pages * PAGE_SIZE > self.heap_end
        {
            return Err(AllocError::Invalid);
        }
        let incoming = Extent { base, pages };
        let idx = self.free.partition_point(|e| e.base < base);
        // reject frees overlapping free space (double free)
        if idx > 0 && self.free[idx - 1].end() > base {
            return Err(AllocError::Invalid);
        }
        if idx < self.free.len() && incoming.end() > self.free[idx].base {
            return Err(AllocError::Invalid);
        }
        self.free.insert(idx, incoming);
        // coalesce with the successor first so indices stay valid
        if idx + 1 < self.free.len() && self.free[idx].end() == self.free[idx + 1].base {
            self.free[idx].pages += self.free[idx + 1].pages;
            self.free.remove(idx + 1);
        }
        if idx > 0 && self.free[idx - 1].end() == self.free[idx].base {
            self.free[idx - 1].pages += self.free[idx].pages;
            self.free.remove(idx);
        }
        self.live = self.live.saturating_sub(1);
        self.check_invariants();
        Ok(())
    }

    fn stats(&self) -> AllocStats {
        AllocStats {
            free_pages: self.free.iter().map(|e| e.pages).sum(),
            largest_free_run: self.free.iter().map(|e| e.pages).max().unwrap_or(0),
            mapped_regions: self.live,
        }
    }

    fn kind(&self) -> AllocatorKind {
        AllocatorKind::FreeList
    }
}

/// Monotone watermark allocator. Deallocation is accepted but reclaims
/// nothing, so a previously returned base is never handed out again.
pub struct BumpAllocator {
    heap_end: u64,
    watermark: u64,
    live: u64,
}

impl BumpAllocator {
    pub fn new(heap_start: u64, heap_end: u64) -> BumpAllocator {
        assert!(heap_start < heap_end);
        assert_eq!(heap_start % PAGE_SIZE, 0);
        assert_eq!(heap_end % PAGE_SIZE, 0);
        BumpAllocator {
            heap_end,
            watermark: heap_start,
            live: 0,
        }
    }

    pub fn watermark(&self) -> u64 {
        self.watermark
    }
}

impl KernelAllocator for BumpAllocator {
    fn alloc(&mut self, pages: u64) -> Result<u64, AllocError> {
        if pages == 0 {
            return Err(AllocError::Invalid);
        }
        let bytes = pages.checked_mul(PAGE_SIZE).ok_or(AllocError::NoMemory)?;
        let end = self
            .watermark
            .checked_add(bytes)
            .ok_or(AllocError::NoMemory)?;
        if end > self.heap_end {
            return Err(AllocError::NoMemory);
        }
        let base = self.watermark;
        self.watermark = end;
        self.live += 1;
        Ok(base)
    }

    fn dealloc(&mut self, _base: u64, _pages: u64) -> Result<(), AllocError> {
        self.live = self.live.saturating_sub(1);
        Ok(())
    }

    fn stats(&self) -> AllocStats {
        let free = (self.heap_end - self.watermark) / PAGE_SIZE;
        AllocStats {
            free_pages: free,
            largest_free_run: free,
            mapped_regions: self.live,
        }
    }

    fn kind(&self) -> AllocatorKind {
        AllocatorKind::Bump
    }
}

/// Live mmap regions recorded by the wrapper layer; munmap arguments are
/// validated against it, whole regions only.
#[derive(Debug, Default)]
pub struct MappingTable {
    regions: Vec<(u64, u64)>, // (base, pages), sorted by base
}

impl MappingTable {
    pub fn new() -> MappingTable {
        MappingTable {
            regions: Vec::new(),
        }
    }

    pub fn insert(&mut self, base: u64, pages: u64) {
        let idx = self.regions.partition_point(|&(b, _)| b < base);
        self.regions.insert(idx, (base, pages));
    }

    /// Remove the mapping exactly matching (base, pages), if present.
    pub fn remove_exact(&mut self, base: u64, pages: u64) -> bool {
        if let Ok(idx) = self.regions.binary_search_by_key(&base, |&(b, _)| b) {
            if self.regions[idx].1 == pages {
                self.regions.remove(idx);
                return true;
            }
        }
        false
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn total_pages(&self) -> u64 {
        self.regions.iter().map(|&(_, p)| p).sum()
    }

    pub fn regions(&self) -> &[(u64, u64)] {
        &self.regions
    }
}

/// The memory operations registry entry: the bound allocator plus the
/// wrapper-layer mapping table.
pub struct MemSubsys {
    pub allocator: Box<dyn KernelAllocator>,
    pub mappings: MappingTable,
}

impl MemSubsys {
    pub fn new(allocator: Box<dyn KernelAllocator>) -> MemSubsys {
        MemSubsys {
            allocator,
            mappings: MappingTable::new(),
        }
    }

    fn trace_stats(&self, trace: &mut TraceLog) {
        let s = self.allocator.stats();
        trace.push(TraceEvent::MemStats {
            free_pages: s.free_pages,
            largest_run: s.largest_free_run,
            mapped: s.mapped_regions,
        });
    }
}

/// sys_mmap: anonymous page allocation. The address hint, protection and
/// mapping flags are accepted and ignored; fd must be -1.
#[allow(clippy::too_many_arguments)]
pub fn sys_mmap(
    msub: &mut MemSubsys,
    trace: &mut TraceLog,
    _addr_hint: u64,
    length: u64,
    _prot: u64,
    _flags: u64,
    fd: u64,
    _offset: u64,
) -> i64 {
    if length == 0 {
        return -errno::EINVAL;
    }
    if fd as i64 != -1 {
        return -errno::EINVAL;
    }
    let pages = length.div_ceil(PAGE_SIZE);
    match msub.allocator.alloc(pages) {
        Ok(base) => {
            trace.push(TraceEvent::Alloc {
                pages,
                base: Some(base),
            });
            msub.mappings.insert(base, pages);
            msub.trace_stats(trace);
            base as i64
        }
        Err(_) => {
            trace.push(TraceEvent::Alloc { pages, base: None });
            msub.trace_stats(trace);
            -errno::ENOMEM
        }
    }
}

/// sys_munmap: frees exactly one live mapping. Freed pages are scrubbed to
/// zero before going back on the free list so fresh mappings always read 0.
pub fn sys_munmap(
    mem: &mut GuestMemory,
    msub: &mut MemSubsys,
    trace: &mut TraceLog,
    base: u64,
    length: u64,
) -> i64 {
    if !base.is_multiple_of(PAGE_SIZE) || length == 0 {
        return -errno::EINVAL;
    }
    let pages = length.div_ceil(PAGE_SIZE);
    if !msub.mappings.remove_exact(base, pages) {
        return -errno::EINVAL;
    }
    mem.fill(base, pages * PAGE_SIZE, 0)
        .expect("mapping table only holds in-heap regions");
    match msub.allocator.dealloc(base, pages) {
        Ok(()) => {
            trace.push(TraceEvent::Dealloc { base, pages });
            msub.trace_stats(trace);
            0
        }
        Err(_) => {
            // mapping table and allocator disagree; surface as EINVAL
            -errno::EINVAL
        }
    }
}
