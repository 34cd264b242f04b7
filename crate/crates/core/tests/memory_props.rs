//! Memory-subsystem properties driven through the real trap path:
//! zero-fill of fresh mappings and page conservation under a randomized
//! mmap / write / munmap workload.

use detos::abi::{nr, PAGE_SIZE};
use detos::boot::BootConfig;
use detos::mem::MachineConfig;
use detos::mem_sys::AllocatorKind;
use detos::{Dispatch, GuestMemory, KernelState, TrapFrame};

struct Rng(u64);

impl Rng {
    fn next(&mut self) -> u64 {
        self.0 ^= self.0 >> 12;
        self.0 ^= self.0 << 25;
        self.0 ^= self.0 >> 27;
        self.0.wrapping_mul(0x2545_f491_4f6c_dd1d)
    }
}

fn booted() -> KernelState {
    let mem = GuestMemory::new(&MachineConfig::default()).unwrap();
    let mut k = KernelState::new(mem);
    k.platform_bootstrap(AllocatorKind::FreeList).unwrap();
    k.runtime_bootstrap(&BootConfig::default()).unwrap();
    k.libc_handoff(0x1000_0000).unwrap();
    k
}

fn syscall(k: &mut KernelState, n: u64, args: [u64; 6]) -> i64 {
    let mut f = TrapFrame::new();
    f.pc = 0x1000_0000;
    f.set(17, n);
    for (i, v) in args.iter().enumerate() {
        f.set(10 + i, *v);
    }
    match k.handle_sys(f).unwrap() {
        Dispatch::Resume(out) => out.a0() as i64,
        Dispatch::Halt(_) => panic!("memory syscalls never halt"),
    }
}

fn mmap(k: &mut KernelState, len: u64) -> i64 {
    syscall(k, nr::MMAP, [0, len, 3, 0x22, u64::MAX, 0])
}

fn munmap(k: &mut KernelState, base: u64, len: u64) -> i64 {
    syscall(k, nr::MUNMAP, [base, len, 0, 0, 0, 0])
}

/// Every byte of a freshly mmapped region reads zero, even when the pages
/// were written through an earlier mapping and freed since.
#[test]
fn fresh_mappings_always_read_zero() {
    let mut k = booted();
    let mut rng = Rng(0x00ff_1234_5678_9abc);
    let mut live: Vec<(u64, u64)> = Vec::new();
    for step in 0..400 {
        if live.is_empty() || rng.next().is_multiple_of(2) {
            let pages = 1 + rng.next() % 16;
            let ret = mmap(&mut k, pages * PAGE_SIZE);
            if ret < 0 {
                continue;
            }
            let base = ret as u64;
            let len = pages * PAGE_SIZE;
            for off in (0..len).step_by(PAGE_SIZE as usize) {
                let word = k.mem.load_word(base + off, 8).unwrap();
                assert_eq!(
                    word,
                    0,
                    "step {step}: fresh page at 0x{:x} not zero",
                    base + off
                );
            }
            // dirty the whole mapping so a later reuse would be visible
            let fill = (rng.next() & 0xff) as u8 | 1;
            k.mem.fill(base, len, fill).unwrap();
            live.push((base, pages));
        } else {
            let idx = (rng.next() % live.len() as u64) as usize;
            let (base, pages) = live.swap_remove(idx);
            assert_eq!(munmap(&mut k, base, pages * PAGE_SIZE), 0, "step {step}");
        }
    }
}

/// free_pages plus live mapping pages equals the heap size after every
/// operation, as reported by the trace-visible stats.
#[test]
fn page_conservation_through_the_wrapper_layer() {
    let mut k = booted();
    let heap_pages = k.mem.heap_pages();
    let mut rng = Rng(0xc0_ffee);
    let mut live: Vec<(u64, u64)> = Vec::new();
    for _ in 0..600 {
        if live.is_empty() || !rng.next().is_multiple_of(3) {
            let pages = 1 + rng.next() % 64;
            let ret = mmap(&mut k, pages * PAGE_SIZE);
            if ret >= 0 {
                live.push((ret as u64, pages));
            }
        } else {
            let idx = (rng.next() % live.len() as u64) as usize;
            let (base, pages) = live.swap_remove(idx);
            assert_eq!(munmap(&mut k, base, pages * PAGE_SIZE), 0);
        }
        let stats = k.allocator_stats().unwrap();
        let live_pages: u64 = live.iter().map(|&(_, p)| p).sum();
        assert_eq!(stats.free_pages + live_pages, heap_pages);
        assert_eq!(stats.mapped_regions as usize, live.len());
    }
}

/// Overlapping-range rejection: munmap of anything that is not exactly one
/// live mapping is -EINVAL and leaves the allocator untouched.
#[test]
fn partial_unmaps_are_rejected() {
    let mut k = booted();
    let base = mmap(&mut k, 4 * PAGE_SIZE) as u64;
    let before = k.allocator_stats().unwrap();
    assert_eq!(munmap(&mut k, base, PAGE_SIZE), -22, "prefix of a mapping");
    assert_eq!(
        munmap(&mut k, base + PAGE_SIZE, PAGE_SIZE),
        -22,
        "interior page"
    );
    assert_eq!(
        munmap(&mut k, base, 8 * PAGE_SIZE),
        -22,
        "superset of a mapping"
    );
    assert_eq!(
        k.allocator_stats().unwrap(),
        before,
        "failed unmaps must not free anything"
    );
    assert_eq!(
        munmap(&mut k, base, 4 * PAGE_SIZE),
        0,
        "the whole region still frees"
    );
}
