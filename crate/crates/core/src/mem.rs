//! Flat single-address-space guest memory with memory-mapped console
//! regions. Everything else in the kernel reads and writes through this
//! module, so all bounds and alignment checks live here.

use crate::abi::PAGE_SIZE;
use std::fmt;

/// Guest address of the read-only program-name block written during boot.
pub const PROGRAM_NAME_ADDR: u64 = 0x100;
/// Guest base of the stdout console region.
pub const STDOUT_MMIO_BASE: u64 = 0x1000;
/// Guest base of the stderr console region.
pub const STDERR_MMIO_BASE: u64 = 0x2000;
/// Length of each console region.
pub const MMIO_REGION_LEN: u64 = 0x1000;

/// Console device ids. fd 1 maps to device 0, fd 2 to device 1.
pub const DEVICE_STDOUT: u8 = 0;
pub const DEVICE_STDERR: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemoryError {
    OutOfBounds { addr: u64, len: u64 },
    Misaligned { addr: u64, width: u64 },
}

impl fmt::Display for MemoryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MemoryError::OutOfBounds { addr, len } => {
                write!(f, "out of bounds: addr=0x{addr:x} len=0x{len:x}")
            }
            MemoryError::Misaligned { addr, width } => {
                write!(f, "misaligned: addr=0x{addr:x} width={width}")
            }
        }
    }
}

/// A reserved console region. Bytes written anywhere inside the region are
/// mirrored to a host-side capture stream; `write_cursor` tracks the ring
/// position at which the kernel console driver streams its next byte.
#[derive(Debug)]
pub struct MmioRegion {
    pub base: u64,
    pub len: u64,
    pub device_id: u8,
    pub write_cursor: u64,
    capture: Vec<u8>,
}

impl MmioRegion {
    fn new(base: u64, len: u64, device_id: u8) -> MmioRegion {
        MmioRegion {
            base,
            len,
            device_id,
            write_cursor: 0,
            capture: Vec::new(),
        }
    }

    fn overlaps(&self, addr: u64, len: u64) -> bool {
        len > 0 && addr < self.base + self.len && addr + len > self.base
    }
}

/// Geometry of the guest machine. All fields have scenario-level overrides
/// except the console bases, which are fixed platform constants.
#[derive(Clone, Debug)]
pub struct MachineConfig {
    pub memory_size: u64,
    pub heap_start: u64,
    pub heap_size: u64,
    pub stack_top: u64,
    pub step_budget: u64,
}

impl Default for MachineConfig {
    fn default() -> MachineConfig {
        let memory_size: u64 = 16 * 1024 * 1024;
        let heap_start = memory_size / 2;
        MachineConfig {
            memory_size,
            heap_start,
            heap_size: memory_size - heap_start,
            stack_top: heap_start - 16,
            step_budget: 1_000_000,
        }
    }
}

/// Flat physical guest memory plus heap bounds and the console regions.
#[derive(Debug)]
pub struct GuestMemory {
    bytes: Vec<u8>,
    pub heap_start: u64,
    pub heap_end: u64,
    pub stack_top: u64,
    mmio: Vec<MmioRegion>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemoryConfigError {
    SizeNotPowerOfTwo(u64),
    SizeTooSmall(u64),
    HeapBoundsInvalid,
    HeapUnaligned,
    StackTopUnaligned(u64),
    StackTopInsideHeap(u64),
    MmioOverlapsHeap,
}

impl fmt::Display for MemoryConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MemoryConfigError::SizeNotPowerOfTwo(s) => {
                write!(f, "memory_size 0x{s:x} is not a power of two")
            }
            MemoryConfigError::SizeTooSmall(s) => {
                write!(f, "memory_size 0x{s:x} is below the 1 MiB minimum")
            }
            MemoryConfigError::HeapBoundsInvalid => {
                write!(
                    f,
                    "heap bounds must satisfy heap_start < heap_end <= memory_size"
                )
            }
            MemoryConfigError::HeapUnaligned => {
                write!(f, "heap_start and heap_end must be page aligned")
            }
            MemoryConfigError::StackTopUnaligned(s) => {
                write!(f, "stack_top 0x{s:x} is not 16-byte aligned")
            }
            MemoryConfigError::StackTopInsideHeap(s) => {
                write!(f, "stack_top 0x{s:x} lies inside the heap")
            }
            MemoryConfigError::MmioOverlapsHeap => {
                write!(f, "console regions overlap the heap")
            }
        }
    }
}

impl GuestMemory {
    pub fn new(cfg: &MachineConfig) -> Result<GuestMemory, MemoryConfigError> {
        if cfg.memory_size < 1024 * 1024 {
            return Err(MemoryConfigError::SizeTooSmall(cfg.memory_size));
        }
        if !cfg.memory_size.is_power_of_two() {
            return Err(MemoryConfigError::SizeNotPowerOfTwo(cfg.memory_size));
        }
        let heap_end = cfg.heap_start.saturating_add(cfg.heap_size);
        if !(cfg.heap_start < heap_end && heap_end <= cfg.memory_size) {
            return Err(MemoryConfigError::HeapBoundsInvalid);
        }
        if !cfg.heap_start.is_multiple_of(PAGE_SIZE) || !heap_end.is_multiple_of(PAGE_SIZE) {
            return Err(MemoryConfigError::HeapUnaligned);
        }
        if !cfg.stack_top.is_multiple_of(16) {
            return Err(MemoryConfigError::StackTopUnaligned(cfg.stack_top));
        }
        if cfg.stack_top >= cfg.heap_start && cfg.stack_top < heap_end {
            return Err(MemoryConfigError::StackTopInsideHeap(cfg.stack_top));
        }
        let mmio = vec![
            MmioRegion::new(STDOUT_MMIO_BASE, MMIO_REGION_LEN, DEVICE_STDOUT),
            MmioRegion::new(STDERR_MMIO_BASE, MMIO_REGION_LEN, DEVICE_STDERR),
        ];
        for r in &mmio {
            if r.overlaps(cfg.heap_start, heap_end - cfg.heap_start) {
                return Err(MemoryConfigError::MmioOverlapsHeap);
            }
        }
        Ok(GuestMemory {
            bytes: vec![0; cfg.memory_size as usize],
            heap_start: cfg.heap_start,
            heap_end,
            stack_top: cfg.stack_top,
            mmio,
        })
    }

    pub fn size(&self) -> u64 {
        self.bytes.len() as u64
    }

    pub fn heap_pages(&self) -> u64 {
        (self.heap_end - self.heap_start) / PAGE_SIZE
    }

    fn check_range(&self, addr: u64, len: u64) -> Result<(), MemoryError> {
        let end = addr
            .checked_add(len)
            .ok_or(MemoryError::OutOfBounds { addr, len })?;
        if end > self.size() {
            return Err(MemoryError::OutOfBounds { addr, len });
        }
        Ok(())
    }

    pub fn read_bytes(&self, addr: u64, len: u64) -> Result<Vec<u8>, MemoryError> {
        self.check_range(addr, len)?;
        Ok(self.bytes[addr as usize..(addr + len) as usize].to_vec())
    }

    /// Store `data` at `addr`. Any bytes that land inside a console region
    /// are additionally appended to that device's capture stream and advance
    /// its write cursor (wrapping at the region length).
    pub fn write_bytes(&mut self, addr: u64, data: &[u8]) -> Result<(), MemoryError> {
        let len = data.len() as u64;
        self.check_range(addr, len)?;
        self.bytes[addr as usize..(addr + len) as usize].copy_from_slice(data);
        for region in &mut self.mmio {
            if region.overlaps(addr, len) {
                let lo = addr.max(region.base);
                let hi = (addr + len).min(region.base + region.len);
                let slice = &data[(lo - addr) as usize..(hi - addr) as usize];
                region.capture.extend_from_slice(slice);
                region.write_cursor = (region.write_cursor + (hi - lo)) % region.len;
            }
        }
        Ok(())
    }

    pub fn fill(&mut self, addr: u64, len: u64, byte: u8) -> Result<(), MemoryError> {
        self.check_range(addr, len)?;
        self.bytes[addr as usize..(addr + len) as usize].fill(byte);
        Ok(())
    }

    pub fn load_word(&self, addr: u64, width: u64) -> Result<u64, MemoryError> {
        debug_assert!(width == 4 || width == 8);
        if !addr.is_multiple_of(width) {
            return Err(MemoryError::Misaligned { addr, width });
        }
        self.check_range(addr, width)?;
        let s = &self.bytes[addr as usize..(addr + width) as usize];
        let mut v: u64 = 0;
        for (i, b) in s.iter().enumerate() {
            v |= (*b as u64) << (8 * i);
        }
        Ok(v)
    }

    pub fn store_word(&mut self, addr: u64, width: u64, value: u64) -> Result<(), MemoryError> {
        debug_assert!(width == 4 || width == 8);
        if !addr.is_multiple_of(width) {
            return Err(MemoryError::Misaligned { addr, width });
        }
        self.check_range(addr, width)?;
        let le = value.to_le_bytes();
        self.write_bytes(addr, &le[..width as usize])
    }

    /// Stream `data` into a console ring at its current cursor, wrapping at
    /// the region boundary. This is the path sys_write takes; the capture is
    /// fed by the underlying write_bytes calls.
    pub fn console_write(&mut self, device: u8, data: &[u8]) -> Result<(), MemoryError> {
        let idx = self
            .mmio
            .iter()
            .position(|r| r.device_id == device)
            .unwrap_or_else(|| panic!("unknown console device {device}"));
        let (base, len) = (self.mmio[idx].base, self.mmio[idx].len);
        let mut off = 0usize;
        while off < data.len() {
            // write_bytes advances the cursor as part of the capture
            let cursor = self.mmio[idx].write_cursor;
            let room = (len - cursor) as usize;
            let chunk = room.min(data.len() - off);
            self.write_bytes(base + cursor, &data[off..off + chunk])?;
            off += chunk;
        }
        Ok(())
    }

    pub fn capture(&self, device: u8) -> &[u8] {
        &self
            .mmio
            .iter()
            .find(|r| r.device_id == device)
            .map(|r| &r.capture)
            .unwrap_or_else(|| panic!("unknown console device {device}"))[..]
    }

    pub fn mmio_regions(&self) -> &[MmioRegion] {
        &self.mmio
    }

    /// True when `[addr, addr+len)` touches a console region.
    pub fn overlaps_mmio(&self, addr: u64, len: u64) -> bool {
        self.mmio.iter().any(|r| r.overlaps(addr, len))
    }
}
