//! A modular library-OS kernel implementing a small deterministic subset of
//! the Linux riscv64 syscall ABI (memory, threading, console I/O, and the
//! musl startup stack), together with a scripted micro-VM harness that
//! drives guests through the real trap-dispatch path.
//!
//! The crate is organized around the kernel's own decomposition:
//!
//! - [`mem`]: flat guest memory with memory-mapped console regions
//! - [`abi`]: Linux riscv64 syscall numbers, errnos, and the coverage matrix
//! - [`trap`]: the trap-frame register file
//! - [`kernel`]: kernel state, operation registries, and `handle_sys`
//! - [`mem_sys`]: page allocators and the mmap/munmap wrappers
//! - [`thread_sys`]: cooperative scheduler, futexes, and thread syscalls
//! - [`io_sys`]: fd table, console writes, fstat and the I/O stubs
//! - [`boot`]: platform/runtime bootstrap and the musl stack builder
//! - [`script`], [`scenario`], [`harness`]: the deterministic micro-VM
//! - [`trace`]: execution trace events and the golden line format
//!
//! Everything is single-threaded and fully deterministic: a scenario file
//! maps to exactly one byte sequence of trace output.

pub mod abi;
pub mod boot;
pub mod harness;
pub mod io_sys;
pub mod kernel;
pub mod mem;
pub mod mem_sys;
pub mod scenario;
pub mod script;
pub mod thread_sys;
pub mod trace;
pub mod trap;

pub use boot::{build_musl_stack, generate_random_bytes, stack_dump_text, BootConfig, BootFault};
pub use harness::{check_expectations, run_scenario, RunReport};
pub use kernel::{Dispatch, KernelFault, KernelState};
pub use mem::{GuestMemory, MachineConfig};
pub use mem_sys::AllocatorKind;
pub use scenario::{parse_scenario, ParseError, Scenario};
pub use trace::{ExecutionTrace, RunOutcome, TraceEvent};
pub use trap::TrapFrame;
