//! Linux riscv64 ABI surface: syscall numbers, errno values, futex and auxv
//! constants, and the machine-readable syscall coverage matrix.
//!
//! Numbers follow the Linux riscv64 ABI (the generic syscall table). They are
//! cross-checked in tests against a committed oracle file generated from the
//! kernel headers.

/// Page size used by the kernel allocator and guest memory layout.
pub const PAGE_SIZE: u64 = 4096;

/// Syscall numbers (Linux riscv64 / asm-generic).
pub mod nr {
    pub const IOCTL: u64 = 29;
    pub const WRITE: u64 = 64;
    pub const WRITEV: u64 = 66;
    pub const FSTAT: u64 = 80;
    pub const EXIT: u64 = 93;
    pub const EXIT_GROUP: u64 = 94;
    pub const SET_TID_ADDRESS: u64 = 96;
    pub const FUTEX: u64 = 98;
    pub const CLOCK_GETTIME: u64 = 113;
    pub const SCHED_YIELD: u64 = 124;
    pub const RT_SIGACTION: u64 = 134;
    pub const RT_SIGPROCMASK: u64 = 135;
    pub const BRK: u64 = 214;
    pub const MUNMAP: u64 = 215;
    pub const MREMAP: u64 = 216;
    pub const CLONE: u64 = 220;
    pub const MMAP: u64 = 222;
    pub const MPROTECT: u64 = 226;
    pub const PRLIMIT64: u64 = 261;
    pub const GETRANDOM: u64 = 278;
}

/// Errno values (asm-generic). Wrappers return these negated in a0.
pub mod errno {
    pub const EBADF: i64 = 9;
    pub const EAGAIN: i64 = 11;
    pub const ENOMEM: i64 = 12;
    pub const EFAULT: i64 = 14;
    pub const EINVAL: i64 = 22;
    pub const ENOTTY: i64 = 25;
    pub const ENOSYS: i64 = 38;
}

/// Futex operation encoding (linux/futex.h subset).
pub mod futex {
    pub const FUTEX_WAIT: u64 = 0;
    pub const FUTEX_WAKE: u64 = 1;
    pub const FUTEX_PRIVATE_FLAG: u64 = 128;
}

/// Auxiliary-vector keys consumed by musl during startup.
pub mod auxv {
    pub const AT_NULL: u64 = 0;
    pub const AT_PHDR: u64 = 3;
    pub const AT_PHENT: u64 = 4;
    pub const AT_PHNUM: u64 = 5;
    pub const AT_PAGESZ: u64 = 6;
    pub const AT_UID: u64 = 11;
    pub const AT_EUID: u64 = 12;
    pub const AT_GID: u64 = 13;
    pub const AT_EGID: u64 = 14;
    pub const AT_HWCAP: u64 = 16;
    pub const AT_CLKTCK: u64 = 17;
    pub const AT_SECURE: u64 = 23;
    pub const AT_RANDOM: u64 = 25;
}

/// The byte used to fill getrandom buffers. A constant visible pattern makes
/// any accidental consumer of the dummy entropy obvious in captures.
pub const GETRANDOM_FILL: u8 = 0x5a;

/// S_IFCHR: the file-type bits marking a character device in st_mode.
pub const S_IFCHR: u32 = 0o020000;

/// Byte offset of st_mode within the riscv64 `struct stat`.
pub const STAT_MODE_OFFSET: usize = 16;

/// Total size of the riscv64 `struct stat`.
pub const STAT_SIZE: usize = 128;

/// Every syscall the kernel dispatches, one variant per distinct number.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Syscall {
    Mmap,
    Munmap,
    Brk,
    Mremap,
    Mprotect,
    Clone,
    Futex,
    SchedYield,
    Exit,
    ExitGroup,
    SetTidAddress,
    RtSigaction,
    RtSigprocmask,
    Write,
    Fstat,
    Writev,
    Prlimit64,
    Getrandom,
    ClockGettime,
    Ioctl,
}

impl Syscall {
    pub fn from_nr(n: u64) -> Option<Syscall> {
        use Syscall::*;
        Some(match n {
            nr::MMAP => Mmap,
            nr::MUNMAP => Munmap,
            nr::BRK => Brk,
            nr::MREMAP => Mremap,
            nr::MPROTECT => Mprotect,
            nr::CLONE => Clone,
            nr::FUTEX => Futex,
            nr::SCHED_YIELD => SchedYield,
            nr::EXIT => Exit,
            nr::EXIT_GROUP => ExitGroup,
            nr::SET_TID_ADDRESS => SetTidAddress,
            nr::RT_SIGACTION => RtSigaction,
            nr::RT_SIGPROCMASK => RtSigprocmask,
            nr::WRITE => Write,
            nr::FSTAT => Fstat,
            nr::WRITEV => Writev,
            nr::PRLIMIT64 => Prlimit64,
            nr::GETRANDOM => Getrandom,
            nr::CLOCK_GETTIME => ClockGettime,
            nr::IOCTL => Ioctl,
            _ => return None,
        })
    }

    pub fn nr(self) -> u64 {
        use Syscall::*;
        match self {
            Mmap => nr::MMAP,
            Munmap => nr::MUNMAP,
            Brk => nr::BRK,
            Mremap => nr::MREMAP,
            Mprotect => nr::MPROTECT,
            Clone => nr::CLONE,
            Futex => nr::FUTEX,
            SchedYield => nr::SCHED_YIELD,
            Exit => nr::EXIT,
            ExitGroup => nr::EXIT_GROUP,
            SetTidAddress => nr::SET_TID_ADDRESS,
            RtSigaction => nr::RT_SIGACTION,
            RtSigprocmask => nr::RT_SIGPROCMASK,
            Write => nr::WRITE,
            Fstat => nr::FSTAT,
            Writev => nr::WRITEV,
            Prlimit64 => nr::PRLIMIT64,
            Getrandom => nr::GETRANDOM,
            ClockGettime => nr::CLOCK_GETTIME,
            Ioctl => nr::IOCTL,
        }
    }

    pub fn name(self) -> &'static str {
        use Syscall::*;
        match self {
            Mmap => "mmap",
            Munmap => "munmap",
            Brk => "brk",
            Mremap => "mremap",
            Mprotect => "mprotect",
            Clone => "clone",
            Futex => "futex",
            SchedYield => "sched_yield",
            Exit => "exit",
            ExitGroup => "exit_group",
            SetTidAddress => "set_tid_address",
            RtSigaction => "rt_sigaction",
            RtSigprocmask => "rt_sigprocmask",
            Write => "write",
            Fstat => "fstat",
            Writev => "writev",
            Prlimit64 => "prlimit64",
            Getrandom => "getrandom",
            ClockGettime => "clock_gettime",
            Ioctl => "ioctl",
        }
    }
}

/// Resolve a symbolic syscall name to its Linux riscv64 number.
pub fn syscall_number(name: &str) -> Option<u64> {
    let sys = match name {
        "mmap" => Syscall::Mmap,
        "munmap" => Syscall::Munmap,
        "brk" => Syscall::Brk,
        "mremap" => Syscall::Mremap,
        "mprotect" => Syscall::Mprotect,
        "clone" => Syscall::Clone,
        "futex" => Syscall::Futex,
        "sched_yield" => Syscall::SchedYield,
        "exit" => Syscall::Exit,
        "exit_group" => Syscall::ExitGroup,
        "set_tid_address" => Syscall::SetTidAddress,
        "rt_sigaction" => Syscall::RtSigaction,
        "rt_sigprocmask" => Syscall::RtSigprocmask,
        "write" => Syscall::Write,
        "fstat" => Syscall::Fstat,
        "writev" => Syscall::Writev,
        "prlimit64" => Syscall::Prlimit64,
        "getrandom" => Syscall::Getrandom,
        "clock_gettime" => Syscall::ClockGettime,
        "ioctl" => Syscall::Ioctl,
        _ => return None,
    };
    Some(sys.nr())
}

/// Implementation status of a syscall in the coverage matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyscallStatus {
    Implemented,
    Stub,
    Absent,
}

impl SyscallStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SyscallStatus::Implemented => "implemented",
            SyscallStatus::Stub => "stub",
            SyscallStatus::Absent => "absent",
        }
    }
}

/// One row of the syscall coverage matrix.
pub struct MatrixRow {
    pub syscall: &'static str,
    pub number: u64,
    pub status: SyscallStatus,
    pub contract: &'static str,
    pub note: &'static str,
}

/// The full coverage matrix, one row per supported syscall interface entry.
/// futex appears twice because FUTEX_WAIT and FUTEX_WAKE carry distinct
/// contracts behind the same number.
pub fn abi_matrix() -> Vec<MatrixRow> {
    use SyscallStatus::*;
    vec![
        MatrixRow {
            syscall: "mmap",
            number: nr::MMAP,
            status: Implemented,
            contract: "page-aligned base of a zero-filled anonymous region, or -EINVAL / -ENOMEM",
            note: "addr hint and prot ignored; fd must be -1",
        },
        MatrixRow {
            syscall: "munmap",
            number: nr::MUNMAP,
            status: Implemented,
            contract: "frees exactly one live mapping and returns 0, else -EINVAL",
            note: "partial unmaps rejected",
        },
        MatrixRow {
            syscall: "brk",
            number: nr::BRK,
            status: Stub,
            contract: "always -ENOMEM",
            note: "superseded by mmap",
        },
        MatrixRow {
            syscall: "mremap",
            number: nr::MREMAP,
            status: Stub,
            contract: "always -ENOSYS",
            note: "",
        },
        MatrixRow {
            syscall: "mprotect",
            number: nr::MPROTECT,
            status: Stub,
            contract: "no-op, returns 0",
            note: "single protection domain",
        },
        MatrixRow {
            syscall: "clone",
            number: nr::CLONE,
            status: Implemented,
            contract: "allocates a TCB, returns the child tid, -EINVAL on bad child stack",
            note: "child starts at an explicit entry pc with a0 = arg instead of resuming past the trap",
        },
        MatrixRow {
            syscall: "futex(FUTEX_WAIT)",
            number: nr::FUTEX,
            status: Implemented,
            contract: "0 after wakeup, -EAGAIN on word mismatch, -EINVAL unaligned, -EFAULT unmapped",
            note: "private flag masked off; other futex ops return -ENOSYS",
        },
        MatrixRow {
            syscall: "futex(FUTEX_WAKE)",
            number: nr::FUTEX,
            status: Implemented,
            contract: "moves up to max waiters to the ready queue, returns the count woken",
            note: "honours the max-wake argument",
        },
        MatrixRow {
            syscall: "sched_yield",
            number: nr::SCHED_YIELD,
            status: Implemented,
            contract: "requeues the caller at the ready-queue tail, returns 0",
            note: "FIFO order",
        },
        MatrixRow {
            syscall: "exit",
            number: nr::EXIT,
            status: Implemented,
            contract: "terminates the calling thread; system halt when the last live thread exits",
            note: "",
        },
        MatrixRow {
            syscall: "exit_group",
            number: nr::EXIT_GROUP,
            status: Implemented,
            contract: "terminates the whole system with the given code",
            note: "",
        },
        MatrixRow {
            syscall: "set_tid_address",
            number: nr::SET_TID_ADDRESS,
            status: Stub,
            contract: "no-op, returns 0",
            note: "linux returns the caller tid",
        },
        MatrixRow {
            syscall: "rt_sigaction",
            number: nr::RT_SIGACTION,
            status: Stub,
            contract: "no-op, returns 0",
            note: "signals unsupported",
        },
        MatrixRow {
            syscall: "rt_sigprocmask",
            number: nr::RT_SIGPROCMASK,
            status: Stub,
            contract: "no-op, returns 0",
            note: "signals unsupported",
        },
        MatrixRow {
            syscall: "write",
            number: nr::WRITE,
            status: Implemented,
            contract: "streams to the console device, returns the byte count, -EBADF / -EFAULT",
            note: "fds 1 and 2 only",
        },
        MatrixRow {
            syscall: "fstat",
            number: nr::FSTAT,
            status: Implemented,
            contract: "writes the fixed character-device stat image, returns 0, -EBADF / -EFAULT",
            note: "",
        },
        MatrixRow {
            syscall: "writev",
            number: nr::WRITEV,
            status: Implemented,
            contract: "gathered write, returns the total byte count, -EINVAL / -EBADF / -EFAULT",
            note: "iovecs applied in order until the first fault",
        },
        MatrixRow {
            syscall: "prlimit64",
            number: nr::PRLIMIT64,
            status: Stub,
            contract: "no-op, returns 0",
            note: "resource limits superfluous",
        },
        MatrixRow {
            syscall: "getrandom",
            number: nr::GETRANDOM,
            status: Stub,
            contract: "fills the buffer with the 0x5a pattern, returns the requested length",
            note: "deterministic dummy entropy",
        },
        MatrixRow {
            syscall: "clock_gettime",
            number: nr::CLOCK_GETTIME,
            status: Stub,
            contract: "writes the zero timespec, returns 0",
            note: "zero time",
        },
        MatrixRow {
            syscall: "ioctl",
            number: nr::IOCTL,
            status: Stub,
            contract: "always -ENOTTY",
            note: "no specialized devices",
        },
    ]
}

/// Render the matrix as the committed tab-separated table.
pub fn abi_matrix_text() -> String {
    let mut out = String::from("syscall\tnumber\tstatus\tcontract\tnote\n");
    for row in abi_matrix() {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            row.syscall,
            row.number,
            row.status.as_str(),
            row.contract,
            row.note
        ));
    }
    out
}
