//! Kernel state and the `handle_sys` trap dispatcher. A trap frame goes in,
//! a frame to resume comes out; for scheduling syscalls the returned frame
//! may belong to a different thread.

use crate::abi::{errno, Syscall};
use crate::io_sys::{self, FdTable};
use crate::mem::GuestMemory;
use crate::mem_sys::{self, AllocStats, AllocatorKind, MemSubsys};
use crate::thread_sys::{self, SchedResult, Scheduler};
use crate::trace::{Tid, TraceEvent, TraceLog};
use crate::trap::TrapFrame;
use std::fmt;

/// The pluggable low-level primitives, populated exactly once by the
/// bootloader before the first trap.
pub struct OpsRegistries {
    pub memory_ops: MemSubsys,
    pub scheduler_ops: Scheduler,
    pub io_ops: FdTable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BootStage {
    Fresh,
    PlatformReady,
    RuntimeReady,
    Running,
}

/// Stack placement computed by the runtime bootstrap, consumed by the
/// libc handoff.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BootPlacement {
    pub target_sp: u64,
    pub at_random_value_addr: u64,
}

pub struct KernelState {
    pub mem: GuestMemory,
    pub(crate) regs: Option<OpsRegistries>,
    pub(crate) boot_stage: BootStage,
    pub(crate) placement: Option<BootPlacement>,
    pub trace: TraceLog,
}

/// What the dispatcher tells the execution loop to do next.
#[derive(Debug, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)]
pub enum Dispatch {
    /// Resume this frame (the caller's, or another thread's after a switch).
    Resume(TrapFrame),
    /// The system halted with this exit code.
    Halt(i64),
}

/// Hard faults: conditions that terminate the run rather than surfacing as
/// an errno in a0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum KernelFault {
    /// handle_sys was reached before the registries were populated.
    RegistriesUnpopulated,
    /// A thread blocked or exited leaving no runnable thread behind.
    Deadlock { tid: Tid },
}

impl fmt::Display for KernelFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelFault::RegistriesUnpopulated => {
                write!(f, "trap dispatched before platform bootstrap")
            }
            KernelFault::Deadlock { tid } => {
                write!(f, "deadlock: tid {tid} left no runnable thread")
            }
        }
    }
}

fn resume_with(
    trace: &mut TraceLog,
    tid: Tid,
    name: &'static str,
    mut frame: TrapFrame,
    ret: i64,
) -> Dispatch {
    let pc_before = frame.pc;
    frame.set_ret(ret);
    frame.advance_pc();
    trace.push(TraceEvent::Sysret {
        tid,
        name,
        ret,
        pc_before,
        pc_after: frame.pc,
    });
    Dispatch::Resume(frame)
}

/// Finish a scheduling syscall: emit the caller's sysret (its pc already
/// advanced past the trap), then hand over to whichever frame runs next.
fn sched_dispatch(
    trace: &mut TraceLog,
    tid: Tid,
    name: &'static str,
    pc_before: u64,
    mut caller: TrapFrame,
    result: SchedResult,
) -> Result<Dispatch, KernelFault> {
    match result {
        SchedResult::Return(ret) => {
            caller.set_ret(ret);
            trace.push(TraceEvent::Sysret {
                tid,
                name,
                ret,
                pc_before,
                pc_after: caller.pc,
            });
            Ok(Dispatch::Resume(caller))
        }
        SchedResult::Switched {
            ret,
            from,
            to,
            next,
        } => {
            trace.push(TraceEvent::Sysret {
                tid,
                name,
                ret,
                pc_before,
                pc_after: pc_before + 4,
            });
            trace.push(TraceEvent::SchedSwitch { from, to });
            Ok(Dispatch::Resume(next))
        }
        SchedResult::Halt(code) => Ok(Dispatch::Halt(code)),
        SchedResult::Deadlock => Err(KernelFault::Deadlock { tid }),
    }
}

impl KernelState {
    pub fn new(mem: GuestMemory) -> KernelState {
        KernelState {
            mem,
            regs: None,
            boot_stage: BootStage::Fresh,
            placement: None,
            trace: TraceLog::new(),
        }
    }

    pub fn boot_stage(&self) -> BootStage {
        self.boot_stage
    }

    pub fn current_tid(&self) -> Tid {
        self.regs
            .as_ref()
            .map(|r| r.scheduler_ops.current())
            .unwrap_or(0)
    }

    pub fn scheduler(&self) -> Option<&Scheduler> {
        self.regs.as_ref().map(|r| &r.scheduler_ops)
    }

    pub fn allocator_stats(&self) -> Option<AllocStats> {
        self.regs.as_ref().map(|r| r.memory_ops.allocator.stats())
    }

    pub fn allocator_kind(&self) -> Option<AllocatorKind> {
        self.regs.as_ref().map(|r| r.memory_ops.allocator.kind())
    }

    /// Dispatch one trap. The syscall number is read from a7, arguments
    /// from a0..a5; the result lands in a0 and pc advances by 4 on the
    /// frame the caller eventually resumes with. Unknown numbers return
    /// -ENOSYS, never a fault.
    pub fn handle_sys(&mut self, frame: TrapFrame) -> Result<Dispatch, KernelFault> {
        let KernelState {
            mem, regs, trace, ..
        } = self;
        let regs = regs.as_mut().ok_or(KernelFault::RegistriesUnpopulated)?;
        let sched = &mut regs.scheduler_ops;
        let msub = &mut regs.memory_ops;
        let io = &regs.io_ops;

        let tid = sched.current();
        let nr = frame.a7();
        let a = frame.syscall_args();
        let sys = Syscall::from_nr(nr);
        trace.push(TraceEvent::Trap {
            tid,
            nr,
            name: sys.map(Syscall::name).unwrap_or("unknown"),
            args: a,
        });
        let Some(sys) = sys else {
            return Ok(resume_with(trace, tid, "unknown", frame, -errno::ENOSYS));
        };
        trace.push(TraceEvent::Wrapper { name: sys.name() });
        let name = sys.name();

        match sys {
            // memory
            Syscall::Mmap => {
                let ret = mem_sys::sys_mmap(msub, trace, a[0], a[1], a[2], a[3], a[4], a[5]);
                Ok(resume_with(trace, tid, name, frame, ret))
            }
            Syscall::Munmap => {
                let ret = mem_sys::sys_munmap(mem, msub, trace, a[0], a[1]);
                Ok(resume_with(trace, tid, name, frame, ret))
            }
            Syscall::Brk => Ok(resume_with(trace, tid, name, frame, -errno::ENOMEM)),
            Syscall::Mremap => Ok(resume_with(trace, tid, name, frame, -errno::ENOSYS)),
            Syscall::Mprotect => Ok(resume_with(trace, tid, name, frame, 0)),

            // threads
            Syscall::Clone => {
                let ret = thread_sys::sys_clone(sched, mem, trace, a[0], a[1], a[2], a[3]);
                Ok(resume_with(trace, tid, name, frame, ret))
            }
            Syscall::Futex => {
                let mut caller = frame;
                let pc_before = caller.pc;
                caller.advance_pc();
                let result =
                    thread_sys::sys_futex(sched, mem, trace, &mut caller, a[0], a[1], a[2]);
                sched_dispatch(trace, tid, name, pc_before, caller, result)
            }
            Syscall::SchedYield => {
                let mut caller = frame;
                let pc_before = caller.pc;
                caller.advance_pc();
                let result = thread_sys::sys_sched_yield(sched, &mut caller);
                sched_dispatch(trace, tid, name, pc_before, caller, result)
            }
            Syscall::Exit => match thread_sys::sys_exit(sched, trace, a[0] as i64) {
                SchedResult::Switched { from, to, next, .. } => {
                    trace.push(TraceEvent::SchedSwitch { from, to });
                    Ok(Dispatch::Resume(next))
                }
                SchedResult::Halt(code) => {
                    trace.push(TraceEvent::Exit { code });
                    Ok(Dispatch::Halt(code))
                }
                SchedResult::Deadlock => Err(KernelFault::Deadlock { tid }),
                SchedResult::Return(_) => unreachable!("exit never returns to the caller"),
            },
            Syscall::ExitGroup => match thread_sys::sys_exit_group(sched, trace, a[0] as i64) {
                SchedResult::Halt(code) => {
                    trace.push(TraceEvent::Exit { code });
                    Ok(Dispatch::Halt(code))
                }
                _ => unreachable!("exit_group always halts"),
            },
            Syscall::SetTidAddress => Ok(resume_with(trace, tid, name, frame, 0)),
            Syscall::RtSigaction => Ok(resume_with(trace, tid, name, frame, 0)),
            Syscall::RtSigprocmask => Ok(resume_with(trace, tid, name, frame, 0)),

            // io
            Syscall::Write => {
                let ret = io_sys::sys_write(mem, io, a[0], a[1], a[2]);
                Ok(resume_with(trace, tid, name, frame, ret))
            }
            Syscall::Writev => {
                let ret = io_sys::sys_writev(mem, io, a[0], a[1], a[2]);
                Ok(resume_with(trace, tid, name, frame, ret))
            }
            Syscall::Fstat => {
                let ret = io_sys::sys_fstat(mem, io, a[0], a[1]);
                Ok(resume_with(trace, tid, name, frame, ret))
            }
            Syscall::Prlimit64 => Ok(resume_with(trace, tid, name, frame, 0)),
            Syscall::Getrandom => {
                let ret = io_sys::sys_getrandom(mem, a[0], a[1], a[2]);
                Ok(resume_with(trace, tid, name, frame, ret))
            }
            Syscall::ClockGettime => {
                let ret = io_sys::sys_clock_gettime(mem, a[0], a[1]);
                Ok(resume_with(trace, tid, name, frame, ret))
            }
            Syscall::Ioctl => Ok(resume_with(trace, tid, name, frame, -errno::ENOTTY)),
        }
    }

    /// A guest script ran off its end (or hit an explicit halt): the thread
    /// leaves the system as if it had called exit(0), without a trap.
    pub fn handle_thread_halt(&mut self) -> Result<Dispatch, KernelFault> {
        let KernelState { regs, trace, .. } = self;
        let regs = regs.as_mut().ok_or(KernelFault::RegistriesUnpopulated)?;
        let sched = &mut regs.scheduler_ops;
        let tid = sched.current();
        trace.push(TraceEvent::Halt { tid });
        match thread_sys::sys_exit(sched, trace, 0) {
            SchedResult::Switched { from, to, next, .. } => {
                trace.push(TraceEvent::SchedSwitch { from, to });
                Ok(Dispatch::Resume(next))
            }
            SchedResult::Halt(code) => {
                trace.push(TraceEvent::Exit { code });
                Ok(Dispatch::Halt(code))
            }
            SchedResult::Deadlock => Err(KernelFault::Deadlock { tid }),
            SchedResult::Return(_) => unreachable!(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abi::nr;
    use crate::boot::BootConfig;
    use crate::mem::MachineConfig;

    fn booted_kernel() -> KernelState {
        let mem = GuestMemory::new(&MachineConfig::default()).unwrap();
        let mut k = KernelState::new(mem);
        k.platform_bootstrap(AllocatorKind::FreeList).unwrap();
        k.runtime_bootstrap(&BootConfig::default()).unwrap();
        k.libc_handoff(0x1000_0000).unwrap();
        k
    }

    fn trap(nr: u64, args: [u64; 6]) -> TrapFrame {
        let mut f = TrapFrame::new();
        f.pc = 0x1000_0000;
        f.set(17, nr);
        for (i, v) in args.iter().enumerate() {
            f.set(10 + i, *v);
        }
        f
    }

    #[test]
    fn unpopulated_registry_is_a_hard_fault() {
        let mem = GuestMemory::new(&MachineConfig::default()).unwrap();
        let mut k = KernelState::new(mem);
        let err = k
            .handle_sys(trap(nr::WRITE, [1, 0, 0, 0, 0, 0]))
            .unwrap_err();
        assert_eq!(err, KernelFault::RegistriesUnpopulated);
    }

    #[test]
    fn unknown_syscall_returns_enosys_and_advances_pc() {
        let mut k = booted_kernel();
        let f = trap(9999, [0; 6]);
        match k.handle_sys(f).unwrap() {
            Dispatch::Resume(out) => {
                assert_eq!(out.a0() as i64, -errno::ENOSYS);
                assert_eq!(out.pc, 0x1000_0004);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn dispatch_is_total_over_arbitrary_numbers() {
        let mut k = booted_kernel();
        for n in [0u64, 1, 63, 65, 97, 99, 1 << 32, u64::MAX] {
            let out = k.handle_sys(trap(n, [0; 6])).unwrap();
            match out {
                Dispatch::Resume(f) => assert_eq!(f.a0() as i64, -errno::ENOSYS),
                Dispatch::Halt(_) => panic!("unknown numbers never halt"),
            }
        }
    }

    #[test]
    fn write_trap_returns_count_and_advances() {
        let mut k = booted_kernel();
        k.mem.write_bytes(0x4000, b"hi").unwrap();
        match k
            .handle_sys(trap(nr::WRITE, [1, 0x4000, 2, 0, 0, 0]))
            .unwrap()
        {
            Dispatch::Resume(f) => {
                assert_eq!(f.a0(), 2);
                assert_eq!(f.pc, 0x1000_0004);
            }
            _ => panic!(),
        }
        assert_eq!(k.mem.capture(crate::mem::DEVICE_STDOUT), b"hi");
    }

    #[test]
    fn only_a0_and_pc_change_on_plain_dispatch() {
        let mut k = booted_kernel();
        let mut f = trap(nr::MPROTECT, [0x800000, 4096, 0, 0, 0, 0]);
        for x in 1..32 {
            if !(10..=15).contains(&x) && x != 17 {
                f.set(x, 0x5500 + x as u64);
            }
        }
        let before = f;
        match k.handle_sys(f).unwrap() {
            Dispatch::Resume(out) => {
                assert_eq!(out.pc, before.pc + 4);
                assert_eq!(out.a0(), 0);
                for x in 1..32 {
                    if x != 10 {
                        assert_eq!(out.get(x), before.get(x), "x{x} must be preserved");
                    }
                }
            }
            _ => panic!(),
        }
    }

    #[test]
    fn stub_contract_table() {
        let mut k = booted_kernel();
        let cases: [(u64, [u64; 6], i64); 8] = [
            (nr::BRK, [0; 6], -errno::ENOMEM),
            (nr::MREMAP, [0; 6], -errno::ENOSYS),
            (nr::MPROTECT, [0; 6], 0),
            (nr::SET_TID_ADDRESS, [0x4000, 0, 0, 0, 0, 0], 0),
            (nr::RT_SIGACTION, [0; 6], 0),
            (nr::RT_SIGPROCMASK, [0; 6], 0),
            (nr::PRLIMIT64, [0; 6], 0),
            (nr::IOCTL, [1, 0x5401, 0, 0, 0, 0], -errno::ENOTTY),
        ];
        for (n, args, want) in cases {
            match k.handle_sys(trap(n, args)).unwrap() {
                Dispatch::Resume(f) => assert_eq!(f.a0() as i64, want, "nr {n}"),
                _ => panic!("stub must resume"),
            }
        }
    }

    #[test]
    fn stubs_are_idempotent() {
        let mut k = booted_kernel();
        let frames: Vec<(u64, [u64; 6])> = vec![
            (nr::BRK, [0x1234, 0, 0, 0, 0, 0]),
            (nr::MREMAP, [0; 6]),
            (nr::MPROTECT, [0; 6]),
            (nr::SET_TID_ADDRESS, [0x4000, 0, 0, 0, 0, 0]),
            (nr::RT_SIGACTION, [0; 6]),
            (nr::RT_SIGPROCMASK, [0; 6]),
            (nr::PRLIMIT64, [0; 6]),
            (nr::IOCTL, [1, 0, 0, 0, 0, 0]),
            (nr::GETRANDOM, [0x4000, 8, 0, 0, 0, 0]),
            (nr::CLOCK_GETTIME, [0, 0x4100, 0, 0, 0, 0]),
        ];
        for (n, args) in frames {
            let first = match k.handle_sys(trap(n, args)).unwrap() {
                Dispatch::Resume(f) => f,
                _ => panic!(),
            };
            let stats_after_first = k.allocator_stats().unwrap();
            let second = match k.handle_sys(trap(n, args)).unwrap() {
                Dispatch::Resume(f) => f,
                _ => panic!(),
            };
            assert_eq!(first, second, "nr {n}: identical frames in, identical out");
            assert_eq!(k.allocator_stats().unwrap(), stats_after_first);
            assert_eq!(k.current_tid(), 1);
        }
    }

    #[test]
    fn mmap_trap_allocates_at_heap_start() {
        let mut k = booted_kernel();
        let f = trap(nr::MMAP, [0, 4096, 3, 0x22, u64::MAX, 0]);
        match k.handle_sys(f).unwrap() {
            Dispatch::Resume(out) => {
                assert_eq!(out.a0(), k.mem.heap_start);
            }
            _ => panic!(),
        }
        // and the exhaustion path
        let f = trap(nr::MMAP, [0, 64 * 1024 * 1024, 3, 0x22, u64::MAX, 0]);
        match k.handle_sys(f).unwrap() {
            Dispatch::Resume(out) => assert_eq!(out.a0() as i64, -errno::ENOMEM),
            _ => panic!(),
        }
    }

    #[test]
    fn exit_group_halts_with_code() {
        let mut k = booted_kernel();
        match k
            .handle_sys(trap(nr::EXIT_GROUP, [42, 0, 0, 0, 0, 0]))
            .unwrap()
        {
            Dispatch::Halt(42) => {}
            other => panic!("expected halt(42), got {other:?}"),
        }
    }

    #[test]
    fn getrandom_fills_pattern_and_returns_len() {
        let mut k = booted_kernel();
        match k
            .handle_sys(trap(nr::GETRANDOM, [0x4000, 16, 0, 0, 0, 0]))
            .unwrap()
        {
            Dispatch::Resume(f) => assert_eq!(f.a0(), 16),
            _ => panic!(),
        }
        assert_eq!(k.mem.read_bytes(0x4000, 16).unwrap(), vec![0x5a; 16]);
    }
}
