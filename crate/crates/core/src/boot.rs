//! Boot sequence, modeled as a state machine: platform bootstrap (devices
//! plus operation registries), runtime bootstrap (musl stack built in a
//! scratch buffer and copied to the real stack), and the libc handoff to
//! the guest entry. The stack builder produces a bit-exact image checked
//! against a committed golden dump.

use crate::abi::auxv::*;
use crate::io_sys::FdTable;
use crate::kernel::{BootPlacement, BootStage, KernelState, OpsRegistries};
use crate::mem::{MachineConfig, PROGRAM_NAME_ADDR, STDOUT_MMIO_BASE};
use crate::mem_sys::{AllocatorKind, BumpAllocator, FreeListAllocator, KernelAllocator, MemSubsys};
use crate::thread_sys::Scheduler;
use crate::trace::TraceEvent;
use crate::trap::TrapFrame;
use std::fmt;

/// Second entropy word mixed into the AT_RANDOM bytes.
pub const ENTROPY_CONSTANT: u64 = 0xdeadbeef_cafebabe;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BootFault {
    DoubleBootstrap,
    BootstrapOutOfOrder { expected: &'static str },
    UnalignedInitialSp(u64),
    BufferOverflow { needed: u64, capacity: u64 },
    StackTooSmall { stack_top: u64, needed: u64 },
    ProgramNameInvalid,
    ProgramNameTooLong,
}

impl fmt::Display for BootFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BootFault::DoubleBootstrap => write!(f, "platform bootstrap called twice"),
            BootFault::BootstrapOutOfOrder { expected } => {
                write!(f, "boot step out of order: expected {expected}")
            }
            BootFault::UnalignedInitialSp(sp) => {
                write!(f, "initial_sp 0x{sp:x} is not word aligned")
            }
            BootFault::BufferOverflow { needed, capacity } => {
                write!(
                    f,
                    "stack image needs {needed} bytes, build buffer holds {capacity}"
                )
            }
            BootFault::StackTooSmall { stack_top, needed } => {
                write!(
                    f,
                    "stack_top 0x{stack_top:x} cannot hold a {needed}-byte image"
                )
            }
            BootFault::ProgramNameInvalid => {
                write!(
                    f,
                    "program name must be non-empty with a single trailing NUL"
                )
            }
            BootFault::ProgramNameTooLong => write!(f, "program name exceeds the reserved region"),
        }
    }
}

/// Boot-time configuration: the program name, the scratch-buffer geometry,
/// and the entropy source.
#[derive(Clone, Debug)]
pub struct BootConfig {
    /// NUL-terminated program name bytes.
    pub program_name: Vec<u8>,
    /// Capacity of the scratch build buffer.
    pub buffer_capacity: u64,
    /// Address the image is built against inside the scratch buffer.
    pub initial_sp: u64,
    /// Entropy override; defaults to [initial_sp, ENTROPY_CONSTANT].
    pub entropy_override: Option<[u64; 2]>,
    /// Keep the AT_RANDOM value pointing into the build buffer instead of
    /// relocating it into the copied image.
    pub at_random_compat: bool,
}

impl Default for BootConfig {
    fn default() -> BootConfig {
        BootConfig {
            program_name: b"guest\0".to_vec(),
            buffer_capacity: 4096,
            initial_sp: 0x8001_0000,
            entropy_override: None,
            at_random_compat: false,
        }
    }
}

impl BootConfig {
    /// Build a config from a plain name; the trailing NUL is appended.
    pub fn with_program_name(name: &str) -> BootConfig {
        let mut bytes = name.as_bytes().to_vec();
        bytes.push(0);
        BootConfig {
            program_name: bytes,
            ..BootConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), BootFault> {
        let n = &self.program_name;
        if n.len() < 2 || n[n.len() - 1] != 0 || n[..n.len() - 1].contains(&0) {
            return Err(BootFault::ProgramNameInvalid);
        }
        Ok(())
    }

    pub fn entropy(&self) -> [u64; 2] {
        self.entropy_override
            .unwrap_or([self.initial_sp, ENTROPY_CONSTANT])
    }
}

/// splitmix64 finalizer: three xor-shifts and two multiplies.
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    z
}

/// Deterministic 128-bit value for the AT_RANDOM block. Pure function of
/// the two entropy words; the second output is chained through the first.
pub fn generate_random_bytes(entropy: [u64; 2]) -> (u64, u64) {
    let low = mix64(entropy[0] ^ GOLDEN_GAMMA);
    let high = mix64(entropy[1] ^ low);
    (low, high)
}

/// The byte-exact argc/argv/envp/auxv/AT_RANDOM block. `bytes` starts at
/// the final stack pointer, so argc sits at offset 0 (`sp_offset`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MuslStackImage {
    pub bytes: Vec<u8>,
    pub sp_offset: u64,
    /// Offset of the 16 AT_RANDOM bytes within `bytes`.
    pub at_random_offset: u64,
    /// Offset of the auxv value word holding the AT_RANDOM pointer.
    pub at_random_value_offset: u64,
    pub total_len: u64,
    /// Final stack pointer inside the build buffer (initial_sp - total_len).
    pub buffer_sp: u64,
}

impl MuslStackImage {
    /// Image bytes as they land at `target_sp`. Unless `compat` is set the
    /// AT_RANDOM value is fixed up to point inside the relocated image;
    /// everything else copies verbatim.
    pub fn relocated_bytes(&self, target_sp: u64, compat: bool) -> Vec<u8> {
        let mut out = self.bytes.clone();
        if !compat {
            let off = self.at_random_value_offset as usize;
            let ptr = target_sp + self.at_random_offset;
            out[off..off + 8].copy_from_slice(&ptr.to_le_bytes());
        }
        out
    }

    #[cfg(test)]
    fn word(&self, byte_offset: u64) -> u64 {
        let o = byte_offset as usize;
        u64::from_le_bytes(self.bytes[o..o + 8].try_into().unwrap())
    }
}

struct DownwardStack {
    sp: u64,
    pushed: Vec<u64>,
}

impl DownwardStack {
    fn new(initial_sp: u64) -> DownwardStack {
        DownwardStack {
            sp: initial_sp,
            pushed: Vec::new(),
        }
    }

    fn push(&mut self, value: u64) {
        self.sp -= 8;
        self.pushed.push(value);
    }

    fn sp(&self) -> u64 {
        self.sp
    }
}

/// Build the musl startup stack top-down, exactly the push sequence the
/// boot runtime performs: 16 AT_RANDOM bytes, then the auxv pairs in
/// reverse, envp, argv and argc. `ehdr_start` is accepted for signature
/// compatibility and ignored; program headers are not available, so the
/// zero-auxv entries tell musl to skip them.
pub fn build_musl_stack(
    initial_sp: u64,
    _ehdr_start: u64,
    program_name_addr: u64,
    entropy: [u64; 2],
    buffer_capacity: u64,
) -> Result<MuslStackImage, BootFault> {
    if !initial_sp.is_multiple_of(8) {
        return Err(BootFault::UnalignedInitialSp(initial_sp));
    }
    let mut ds = DownwardStack::new(initial_sp);

    let (random_low, random_high) = generate_random_bytes(entropy);
    ds.push(random_high);
    ds.push(random_low);
    let at_random_ptr = ds.sp();

    let auxv_entries: [(u64, u64); 13] = [
        (AT_PHDR, 0),
        (AT_PHENT, 0),
        (AT_PHNUM, 0),
        (AT_PAGESZ, 4096),
        (AT_CLKTCK, 100),
        (AT_HWCAP, 0),
        (AT_UID, 0),
        (AT_EUID, 0),
        (AT_GID, 0),
        (AT_EGID, 0),
        (AT_SECURE, 0),
        (AT_RANDOM, 0), // replaced with the pointer below
        (AT_NULL, 0),
    ];
    // pushed in reverse so the pairs read in order going up the stack
    for &(key, val) in auxv_entries.iter().rev() {
        let eff = if key == AT_RANDOM { at_random_ptr } else { val };
        ds.push(eff);
        ds.push(key);
    }

    ds.push(0); // envp terminator
    ds.push(0); // argv[1]
    ds.push(program_name_addr); // argv[0]
    ds.push(1); // argc

    let sp = ds.sp();
    let total_len = initial_sp - sp;
    if total_len > buffer_capacity {
        return Err(BootFault::BufferOverflow {
            needed: total_len,
            capacity: buffer_capacity,
        });
    }

    let mut bytes = Vec::with_capacity(total_len as usize);
    for w in ds.pushed.iter().rev() {
        bytes.extend_from_slice(&w.to_le_bytes());
    }

    // locate the AT_RANDOM value word by walking the auxv pairs
    let words: Vec<u64> = bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut at_random_value_offset = 0;
    let mut i = 4; // argc, argv[0], argv[1], envp precede the pairs
    while i + 1 < words.len() {
        if words[i] == AT_RANDOM {
            at_random_value_offset = ((i + 1) * 8) as u64;
            break;
        }
        if words[i] == AT_NULL {
            break;
        }
        i += 2;
    }
    debug_assert_ne!(at_random_value_offset, 0);

    Ok(MuslStackImage {
        bytes,
        sp_offset: 0,
        at_random_offset: at_random_ptr - sp,
        at_random_value_offset,
        total_len,
        buffer_sp: sp,
    })
}

/// Render image bytes in the canonical dump format: one 64-bit word per
/// line, lowercase hex, offset-prefixed.
pub fn render_stack_words(bytes: &[u8]) -> String {
    let mut out = String::new();
    for (i, chunk) in bytes.chunks_exact(8).enumerate() {
        let w = u64::from_le_bytes(chunk.try_into().unwrap());
        out.push_str(&format!("0x{:04x}: 0x{:016x}\n", i * 8, w));
    }
    out
}

/// The stack-dump operation: build the image for `boot` and render it as it
/// would land on the stack of `machine`.
pub fn stack_dump_text(boot: &BootConfig, machine: &MachineConfig) -> Result<String, BootFault> {
    boot.validate()?;
    let image = build_musl_stack(
        boot.initial_sp,
        0,
        PROGRAM_NAME_ADDR,
        boot.entropy(),
        boot.buffer_capacity,
    )?;
    let target_sp =
        machine
            .stack_top
            .checked_sub(image.total_len)
            .ok_or(BootFault::StackTooSmall {
                stack_top: machine.stack_top,
                needed: image.total_len,
            })?;
    Ok(render_stack_words(
        &image.relocated_bytes(target_sp, boot.at_random_compat),
    ))
}

impl KernelState {
    /// Platform bootstrap: map the console devices and populate the
    /// operation registries. Must run exactly once on a fresh machine.
    pub fn platform_bootstrap(&mut self, allocator: AllocatorKind) -> Result<(), BootFault> {
        match self.boot_stage {
            BootStage::Fresh => {}
            _ => return Err(BootFault::DoubleBootstrap),
        }
        let alloc: Box<dyn KernelAllocator> = match allocator {
            AllocatorKind::FreeList => Box::new(FreeListAllocator::new(
                self.mem.heap_start,
                self.mem.heap_end,
            )),
            AllocatorKind::Bump => {
                Box::new(BumpAllocator::new(self.mem.heap_start, self.mem.heap_end))
            }
        };
        self.regs = Some(OpsRegistries {
            memory_ops: MemSubsys::new(alloc),
            scheduler_ops: Scheduler::new(),
            io_ops: FdTable::new(),
        });
        let regions = self.mem.mmio_regions();
        self.trace.push(TraceEvent::BootPlatform {
            allocator: allocator.as_str(),
            stdout_base: regions[0].base,
            stdout_len: regions[0].len,
            stderr_base: regions[1].base,
            stderr_len: regions[1].len,
        });
        self.boot_stage = BootStage::PlatformReady;
        Ok(())
    }

    /// Runtime bootstrap: build the musl stack in the scratch buffer, then
    /// copy it word by word to the real stack below `stack_top`, fixing up
    /// the AT_RANDOM pointer unless compat mode keeps it aimed at the
    /// buffer.
    pub fn runtime_bootstrap(&mut self, cfg: &BootConfig) -> Result<(), BootFault> {
        match self.boot_stage {
            BootStage::PlatformReady => {}
            BootStage::Fresh => {
                return Err(BootFault::BootstrapOutOfOrder {
                    expected: "platform_bootstrap",
                })
            }
            _ => return Err(BootFault::DoubleBootstrap),
        }
        cfg.validate()?;
        if PROGRAM_NAME_ADDR + cfg.program_name.len() as u64 > STDOUT_MMIO_BASE {
            return Err(BootFault::ProgramNameTooLong);
        }
        self.mem
            .write_bytes(PROGRAM_NAME_ADDR, &cfg.program_name)
            .expect("program name region is always mapped");

        let image = build_musl_stack(
            cfg.initial_sp,
            0,
            PROGRAM_NAME_ADDR,
            cfg.entropy(),
            cfg.buffer_capacity,
        )?;
        let stack_top = self.mem.stack_top;
        let target_sp = stack_top
            .checked_sub(image.total_len)
            .filter(|sp| *sp >= 0x3000)
            .ok_or(BootFault::StackTooSmall {
                stack_top,
                needed: image.total_len,
            })?;
        let relocated = image.relocated_bytes(target_sp, cfg.at_random_compat);
        // word-granular copy, as the 8-byte copy loop performs it
        for (i, chunk) in relocated.chunks_exact(8).enumerate() {
            self.mem
                .write_bytes(target_sp + (i as u64) * 8, chunk)
                .map_err(|_| BootFault::StackTooSmall {
                    stack_top,
                    needed: image.total_len,
                })?;
        }
        self.trace.push(TraceEvent::BootRuntime {
            buffer_sp: image.buffer_sp,
            target_sp,
            copied: image.total_len,
        });
        self.placement = Some(BootPlacement {
            target_sp,
            at_random_value_addr: target_sp + image.at_random_value_offset,
        });
        self.boot_stage = BootStage::RuntimeReady;
        Ok(())
    }

    /// Hand control to the guest: create the main thread with argc in a1
    /// and argv in a2, the register state the startup shim leaves behind.
    /// The musl internal stages appear as trace events only.
    pub fn libc_handoff(&mut self, entry_pc: u64) -> Result<TrapFrame, BootFault> {
        match self.boot_stage {
            BootStage::RuntimeReady => {}
            _ => {
                return Err(BootFault::BootstrapOutOfOrder {
                    expected: "runtime_bootstrap",
                })
            }
        }
        let placement = self
            .placement
            .expect("runtime bootstrap recorded the placement");
        let sp = placement.target_sp;
        let argc = self
            .mem
            .load_word(sp, 8)
            .expect("argc slot was just written");
        let argv = sp + 8;
        let at_random = self
            .mem
            .load_word(placement.at_random_value_addr, 8)
            .expect("auxv was just written");
        self.trace
            .push(TraceEvent::BootLibcStartMain { argc, argv });
        self.trace.push(TraceEvent::BootStage("init_libc"));
        self.trace.push(TraceEvent::BootStage("init_tls"));
        self.trace.push(TraceEvent::BootInitSsp { at_random });
        self.trace.push(TraceEvent::BootStage("libc_start_init"));

        let mut frame = TrapFrame::new();
        frame.pc = entry_pc;
        frame.set_sp(sp);
        frame.set(11, argc); // a1 = argc
        frame.set(12, argv); // a2 = argv
        let regs = self
            .regs
            .as_mut()
            .expect("platform bootstrap populated the registries");
        let tid = regs.scheduler_ops.spawn_main(frame);
        self.trace.push(TraceEvent::BootMainEntry {
            tid,
            pc: entry_pc,
            sp,
            a1: argc,
            a2: argv,
        });
        self.boot_stage = BootStage::Running;
        Ok(frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mem::GuestMemory;

    #[test]
    fn entropy_mixing_matches_frozen_fixture() {
        // frozen from an independent implementation of the finalizer
        let (low, high) = generate_random_bytes([0x8001_0000, ENTROPY_CONSTANT]);
        assert_eq!(low, 0x996f_c392_18e6_9a0b);
        assert_eq!(high, 0xa74e_2385_5c61_b9a1);
    }

    #[test]
    fn entropy_mixing_is_pure() {
        let a = generate_random_bytes([1, 2]);
        let b = generate_random_bytes([1, 2]);
        assert_eq!(a, b);
        assert_ne!(generate_random_bytes([1, 3]), a);
    }

    #[test]
    fn entropy_mixing_avalanches() {
        // flip one input bit, count flipped output bits; informational
        // sanity check that the finalizer actually diffuses
        let mut total = 0u32;
        let mut samples = 0u32;
        for i in 0..500u64 {
            let base = generate_random_bytes([i, ENTROPY_CONSTANT]);
            for bit in [0u64, 7, 31, 63] {
                let flipped = generate_random_bytes([i ^ (1 << bit), ENTROPY_CONSTANT]);
                total += (base.0 ^ flipped.0).count_ones();
                samples += 1;
            }
        }
        let avg = total as f64 / samples as f64;
        assert!(avg >= 20.0, "average flipped bits {avg} below 20");
    }

    #[test]
    fn image_layout_invariants() {
        let cfg = BootConfig::default();
        let img =
            build_musl_stack(cfg.initial_sp, 0, PROGRAM_NAME_ADDR, cfg.entropy(), 4096).unwrap();
        assert_eq!(img.total_len % 8, 0);
        assert_eq!(img.total_len, 256);
        assert_eq!(img.sp_offset, 0);
        assert_eq!(img.buffer_sp, cfg.initial_sp - 256);
        // argc at the lowest address
        assert_eq!(img.word(0), 1);
        // argv[0] -> program name, argv[1] and envp[0] are NULL
        assert_eq!(img.word(8), PROGRAM_NAME_ADDR);
        assert_eq!(img.word(16), 0);
        assert_eq!(img.word(24), 0);
        // auxv pairs in the fixed order, zero-auxv entries zeroed
        let expected_keys = [
            AT_PHDR, AT_PHENT, AT_PHNUM, AT_PAGESZ, AT_CLKTCK, AT_HWCAP, AT_UID, AT_EUID, AT_GID,
            AT_EGID, AT_SECURE, AT_RANDOM, AT_NULL,
        ];
        for (k, key) in expected_keys.iter().enumerate() {
            assert_eq!(img.word(32 + (k as u64) * 16), *key, "auxv key {k}");
        }
        assert_eq!(img.word(32 + 8), 0, "AT_PHDR value");
        assert_eq!(img.word(32 + 16 + 8), 0, "AT_PHENT value");
        assert_eq!(img.word(32 + 32 + 8), 0, "AT_PHNUM value");
        assert_eq!(img.word(32 + 48 + 8), 4096, "AT_PAGESZ value");
        assert_eq!(img.word(32 + 64 + 8), 100, "AT_CLKTCK value");
        // terminator pair is (0, 0)
        assert_eq!(img.word(224), 0);
        assert_eq!(img.word(232), 0);
        // AT_RANDOM points at the 16 random bytes above the pairs
        assert_eq!(img.at_random_offset, 240);
        assert_eq!(img.at_random_value_offset, 216);
        assert_eq!(img.word(216), img.buffer_sp + 240);
        let (lo, hi) = generate_random_bytes(cfg.entropy());
        assert_eq!(img.word(240), lo);
        assert_eq!(img.word(248), hi);
    }

    #[test]
    fn builder_rejects_bad_inputs() {
        assert_eq!(
            build_musl_stack(0x8001_0001, 0, PROGRAM_NAME_ADDR, [0, 0], 4096),
            Err(BootFault::UnalignedInitialSp(0x8001_0001))
        );
        assert_eq!(
            build_musl_stack(0x8001_0000, 0, PROGRAM_NAME_ADDR, [0, 0], 128),
            Err(BootFault::BufferOverflow {
                needed: 256,
                capacity: 128
            })
        );
    }

    #[test]
    fn relocation_flips_exactly_the_at_random_word() {
        let cfg = BootConfig::default();
        let img =
            build_musl_stack(cfg.initial_sp, 0, PROGRAM_NAME_ADDR, cfg.entropy(), 4096).unwrap();
        let plain = img.relocated_bytes(0x7ffef0, true);
        let fixed = img.relocated_bytes(0x7ffef0, false);
        assert_eq!(plain, img.bytes, "compat mode copies verbatim");
        let diffs: Vec<usize> = (0..plain.len())
            .filter(|&i| plain[i] != fixed[i])
            .map(|i| i / 8)
            .collect();
        let mut words: Vec<usize> = diffs;
        words.dedup();
        assert_eq!(words, vec![216 / 8], "exactly one word differs");
        let v = u64::from_le_bytes(fixed[216..224].try_into().unwrap());
        assert_eq!(v, 0x7ffef0 + 240);
    }

    #[test]
    fn program_name_validation() {
        assert!(BootConfig::with_program_name("guest").validate().is_ok());
        let bad = BootConfig {
            program_name: b"\0".to_vec(),
            ..BootConfig::default()
        };
        assert_eq!(bad.validate(), Err(BootFault::ProgramNameInvalid));
        let bad = BootConfig {
            program_name: b"gu\0est\0".to_vec(),
            ..BootConfig::default()
        };
        assert_eq!(bad.validate(), Err(BootFault::ProgramNameInvalid));
        let bad = BootConfig {
            program_name: b"guest".to_vec(),
            ..BootConfig::default()
        };
        assert_eq!(bad.validate(), Err(BootFault::ProgramNameInvalid));
    }

    fn fresh_kernel() -> KernelState {
        KernelState::new(GuestMemory::new(&MachineConfig::default()).unwrap())
    }

    #[test]
    fn boot_steps_must_run_in_order_once() {
        let mut k = fresh_kernel();
        assert_eq!(
            k.runtime_bootstrap(&BootConfig::default()),
            Err(BootFault::BootstrapOutOfOrder {
                expected: "platform_bootstrap"
            })
        );
        assert!(matches!(
            k.libc_handoff(0x1000_0000),
            Err(BootFault::BootstrapOutOfOrder { .. })
        ));
        k.platform_bootstrap(AllocatorKind::FreeList).unwrap();
        assert_eq!(
            k.platform_bootstrap(AllocatorKind::FreeList),
            Err(BootFault::DoubleBootstrap)
        );
        assert!(matches!(
            k.libc_handoff(0x1000_0000),
            Err(BootFault::BootstrapOutOfOrder { .. })
        ));
        k.runtime_bootstrap(&BootConfig::default()).unwrap();
        assert_eq!(
            k.runtime_bootstrap(&BootConfig::default()),
            Err(BootFault::DoubleBootstrap)
        );
        k.libc_handoff(0x1000_0000).unwrap();
        assert_eq!(k.boot_stage(), BootStage::Running);
    }

    #[test]
    fn bootstrap_selects_the_configured_allocator() {
        let mut k = fresh_kernel();
        k.platform_bootstrap(AllocatorKind::Bump).unwrap();
        assert_eq!(k.allocator_kind(), Some(AllocatorKind::Bump));
        let mut k = fresh_kernel();
        k.platform_bootstrap(AllocatorKind::FreeList).unwrap();
        assert_eq!(k.allocator_kind(), Some(AllocatorKind::FreeList));
    }

    #[test]
    fn booted_stack_reads_back_correctly() {
        let mut k = fresh_kernel();
        k.platform_bootstrap(AllocatorKind::FreeList).unwrap();
        k.runtime_bootstrap(&BootConfig::default()).unwrap();
        let frame = k.libc_handoff(0x1000_0000).unwrap();
        let sp = frame.sp();
        assert_eq!(sp, k.mem.stack_top - 256);
        assert_eq!(
            k.mem.load_word(sp, 8).unwrap(),
            1,
            "argc on the guest stack"
        );
        assert_eq!(frame.get(11), 1, "a1 = argc");
        assert_eq!(frame.get(12), sp + 8, "a2 = argv");
        // argv[0] dereferences to the program name
        let argv0 = k.mem.load_word(sp + 8, 8).unwrap();
        assert_eq!(k.mem.read_bytes(argv0, 6).unwrap(), b"guest\0".to_vec());
        // relocated AT_RANDOM points at in-image random bytes
        let at_random = k.mem.load_word(sp + 216, 8).unwrap();
        assert_eq!(at_random, sp + 240);
        let (lo, _) = generate_random_bytes(BootConfig::default().entropy());
        assert_eq!(k.mem.load_word(at_random, 8).unwrap(), lo);
        // boot event order
        let kinds: Vec<String> = k.trace.events().iter().map(|e| e.to_string()).collect();
        assert!(kinds[0].starts_with("boot platform "));
        assert!(kinds[1].starts_with("boot runtime "));
        assert!(kinds[2].starts_with("boot libc_start_main "));
        assert!(kinds.last().unwrap().starts_with("boot main_entry "));
    }

    #[test]
    fn copied_region_matches_image_except_relocation() {
        let mut k = fresh_kernel();
        k.platform_bootstrap(AllocatorKind::FreeList).unwrap();
        let cfg = BootConfig::default();
        k.runtime_bootstrap(&cfg).unwrap();
        let img =
            build_musl_stack(cfg.initial_sp, 0, PROGRAM_NAME_ADDR, cfg.entropy(), 4096).unwrap();
        let sp = k.mem.stack_top - img.total_len;
        let copied = k.mem.read_bytes(sp, img.total_len).unwrap();
        let mut diffs: Vec<usize> = copied
            .iter()
            .zip(&img.bytes)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i / 8)
            .collect();
        diffs.dedup();
        assert_eq!(diffs, vec![27], "only the AT_RANDOM pointer word moved");
    }

    #[test]
    fn stack_too_small_faults() {
        let machine = MachineConfig {
            stack_top: 0x30a0,
            ..MachineConfig::default()
        };
        let mut k = KernelState::new(GuestMemory::new(&machine).unwrap());
        k.platform_bootstrap(AllocatorKind::FreeList).unwrap();
        assert!(matches!(
            k.runtime_bootstrap(&BootConfig::default()),
            Err(BootFault::StackTooSmall { .. })
        ));
    }

    #[test]
    fn paper_compat_dump_differs_in_one_word() {
        let machine = MachineConfig::default();
        let normal = stack_dump_text(&BootConfig::default(), &machine).unwrap();
        let compat = stack_dump_text(
            &BootConfig {
                at_random_compat: true,
                ..BootConfig::default()
            },
            &machine,
        )
        .unwrap();
        let differing: Vec<(usize, &str, &str)> = normal
            .lines()
            .zip(compat.lines())
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, (a, b))| (i, a, b))
            .collect();
        assert_eq!(differing.len(), 1);
        assert_eq!(differing[0].0, 27, "word 27 holds the AT_RANDOM pointer");
        assert!(differing[0].1.ends_with("0x00000000007fffe0"));
        assert!(differing[0].2.ends_with("0x000000008000fff0"));
    }
}
