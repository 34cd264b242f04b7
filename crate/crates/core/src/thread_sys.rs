//! Non-preemptive cooperative threading: TCBs, the FIFO ready queue, futex
//! wait queues, and the thread syscall wrappers. One trap mutates scheduler
//! state at a time; there is no preemption and no wall clock anywhere.

use crate::abi::{errno, futex};
use crate::mem::GuestMemory;
use crate::trace::{Tid, TraceEvent, TraceLog};
use crate::trap::TrapFrame;
use std::collections::{BTreeMap, VecDeque};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThreadState {
    Ready,
    Blocked,
    Exited,
}

/// Per-thread state: saved registers, state, tid. Nothing else.
#[derive(Clone, Debug)]
pub struct Tcb {
    pub tid: Tid,
    pub state: ThreadState,
    pub saved_regs: TrapFrame,
}

/// What the scheduler decided after the current thread gave up the cpu.
#[derive(Debug, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)]
pub enum ExitDisposition {
    /// Another thread was switched in; resume this frame.
    Switch {
        from: Tid,
        to: Tid,
        frame: TrapFrame,
    },
    /// The last live thread exited; halt the system with this code.
    SystemHalt(i64),
    /// No runnable thread remains but blocked threads exist.
    Deadlock,
}

#[derive(Debug)]
pub struct Scheduler {
    tcbs: BTreeMap<Tid, Tcb>,
    ready: VecDeque<Tid>,
    current: Tid,
    futex_waiters: BTreeMap<u64, VecDeque<Tid>>,
    next_tid: Tid,
    threads_created: u64,
}

impl Scheduler {
    pub fn new() -> Scheduler {
        Scheduler {
            tcbs: BTreeMap::new(),
            ready: VecDeque::new(),
            current: 0,
            futex_waiters: BTreeMap::new(),
            next_tid: 1,
            threads_created: 0,
        }
    }

    /// Install the main thread (tid 1). Called exactly once by the boot
    /// runtime during libc handoff.
    pub fn spawn_main(&mut self, frame: TrapFrame) -> Tid {
        assert!(self.tcbs.is_empty(), "main thread already spawned");
        let tid = self.alloc_tid();
        self.tcbs.insert(
            tid,
            Tcb {
                tid,
                state: ThreadState::Ready,
                saved_regs: frame,
            },
        );
        self.current = tid;
        tid
    }

    fn alloc_tid(&mut self) -> Tid {
        let tid = self.next_tid;
        self.next_tid += 1;
        self.threads_created += 1;
        tid
    }

    pub fn current(&self) -> Tid {
        self.current
    }

    pub fn tcb(&self, tid: Tid) -> Option<&Tcb> {
        self.tcbs.get(&tid)
    }

    pub fn ready_queue(&self) -> &VecDeque<Tid> {
        &self.ready
    }

    pub fn live_threads(&self) -> usize {
        self.tcbs
            .values()
            .filter(|t| t.state != ThreadState::Exited)
            .count()
    }

    /// Create a new thread in Ready state at the tail of the ready queue.
    pub fn spawn(&mut self, frame: TrapFrame) -> Tid {
        let tid = self.alloc_tid();
        self.tcbs.insert(
            tid,
            Tcb {
                tid,
                state: ThreadState::Ready,
                saved_regs: frame,
            },
        );
        self.ready.push_back(tid);
        tid
    }

    /// Save the running frame and resume `to`. The primitive behind every
    /// scheduling decision; `to` must be Ready.
    pub fn context_switch(&mut self, to: Tid, current_frame: TrapFrame) -> TrapFrame {
        if to == self.current {
            return current_frame;
        }
        let target = self.tcbs.get(&to).expect("switch target must exist");
        assert_eq!(
            target.state,
            ThreadState::Ready,
            "cannot switch to a non-Ready thread"
        );
        if let Some(cur) = self.tcbs.get_mut(&self.current) {
            cur.saved_regs = current_frame;
        }
        self.current = to;
        self.tcbs.get(&to).unwrap().saved_regs
    }

    /// sched_yield semantics: requeue the caller and run the ready head.
    /// Returns None when the queue is empty and the caller just continues.
    pub fn yield_current(&mut self, current_frame: TrapFrame) -> Option<(Tid, Tid, TrapFrame)> {
        let next = self.ready.pop_front()?;
        let from = self.current;
        self.ready.push_back(from);
        let frame = self.context_switch(next, current_frame);
        Some((from, next, frame))
    }

    /// Block the caller on a futex word and run the ready head. Returns
    /// None (deadlock) when no thread is runnable.
    pub fn block_current_on_futex(
        &mut self,
        addr: u64,
        current_frame: TrapFrame,
    ) -> Option<(Tid, Tid, TrapFrame)> {
        let next = self.ready.pop_front()?;
        let from = self.current;
        self.tcbs.get_mut(&from).unwrap().state = ThreadState::Blocked;
        self.tcbs.get_mut(&from).unwrap().saved_regs = current_frame;
        self.futex_waiters.entry(addr).or_default().push_back(from);
        // switch without going through context_switch: the caller is now
        // Blocked, not Ready, and its frame is already saved
        let target = self.tcbs.get(&next).expect("ready queue holds live tids");
        assert_eq!(target.state, ThreadState::Ready);
        self.current = next;
        Some((from, next, target.saved_regs))
    }

    /// Move up to `max` waiters on `addr` to the ready-queue tail, FIFO.
    pub fn wake_futex(&mut self, addr: u64, max: u64) -> Vec<Tid> {
        let mut woken = Vec::new();
        if let Some(queue) = self.futex_waiters.get_mut(&addr) {
            while woken.len() as u64 != max {
                let Some(tid) = queue.pop_front() else { break };
                self.tcbs.get_mut(&tid).unwrap().state = ThreadState::Ready;
                self.ready.push_back(tid);
                woken.push(tid);
            }
            if queue.is_empty() {
                self.futex_waiters.remove(&addr);
            }
        }
        woken
    }

    /// Terminate the current thread and pick what runs next.
    pub fn exit_current(&mut self, code: i64) -> ExitDisposition {
        let from = self.current;
        self.tcbs.get_mut(&from).unwrap().state = ThreadState::Exited;
        if let Some(next) = self.ready.pop_front() {
            let target = self.tcbs.get(&next).unwrap();
            debug_assert_eq!(target.state, ThreadState::Ready);
            self.current = next;
            return ExitDisposition::Switch {
                from,
                to: next,
                frame: target.saved_regs,
            };
        }
        if self.live_threads() == 0 {
            ExitDisposition::SystemHalt(code)
        } else {
            ExitDisposition::Deadlock
        }
    }

    /// exit_group: every thread exits at once, whatever its state.
    pub fn exit_group(&mut self) {
        for tcb in self.tcbs.values_mut() {
            tcb.state = ThreadState::Exited;
        }
        self.ready.clear();
        self.futex_waiters.clear();
    }

    /// Queue conservation: running + ready + futex-blocked + exited must
    /// account for every thread ever created, each exactly once.
    pub fn check_conservation(&self) {
        let running = usize::from(
            self.tcbs
                .get(&self.current)
                .map(|t| t.state != ThreadState::Exited)
                .unwrap_or(false),
        );
        let exited = self
            .tcbs
            .values()
            .filter(|t| t.state == ThreadState::Exited)
            .count();
        let blocked: usize = self.futex_waiters.values().map(|q| q.len()).sum();
        assert_eq!(
            running + self.ready.len() + blocked + exited,
            self.threads_created as usize,
            "thread accounting broken"
        );
        for tid in &self.ready {
            assert_ne!(*tid, self.current, "ready queue must not contain current");
            assert_eq!(self.tcbs[tid].state, ThreadState::Ready);
        }
        for q in self.futex_waiters.values() {
            for tid in q {
                assert_eq!(self.tcbs[tid].state, ThreadState::Blocked);
            }
        }
    }
}

impl Default for Scheduler {
    fn default() -> Scheduler {
        Scheduler::new()
    }
}

/// Result of a scheduling syscall, consumed by the dispatcher.
#[allow(clippy::large_enum_variant)]
pub enum SchedResult {
    /// Caller keeps running with this return value.
    Return(i64),
    /// Caller's frame was finalized (ret + pc) and another thread runs.
    Switched {
        ret: i64,
        from: Tid,
        to: Tid,
        next: TrapFrame,
    },
    /// System halted with this exit code.
    Halt(i64),
    /// No runnable thread remains.
    Deadlock,
}

/// sys_clone: allocate a TCB and set the child up for execution. The child
/// begins at the explicit `entry` pc with sp = child_stack and a0 = arg.
pub fn sys_clone(
    sched: &mut Scheduler,
    mem: &GuestMemory,
    trace: &mut TraceLog,
    _flags: u64,
    child_stack: u64,
    entry: u64,
    arg: u64,
) -> i64 {
    if child_stack == 0 || !child_stack.is_multiple_of(16) || child_stack > mem.size() {
        return -errno::EINVAL;
    }
    let mut frame = TrapFrame::new();
    frame.pc = entry;
    frame.set_sp(child_stack);
    frame.set_ret(arg as i64);
    let tid = sched.spawn(frame);
    trace.push(TraceEvent::SchedCreate {
        tid,
        pc: entry,
        sp: child_stack,
    });
    tid as i64
}

/// sys_futex dispatch over FUTEX_WAIT / FUTEX_WAKE. The private flag is
/// masked off; every other op is -ENOSYS. `caller_frame` must already hold
/// the post-trap pc so a blocked thread resumes past the syscall.
pub fn sys_futex(
    sched: &mut Scheduler,
    mem: &GuestMemory,
    trace: &mut TraceLog,
    caller_frame: &mut TrapFrame,
    uaddr: u64,
    op: u64,
    val: u64,
) -> SchedResult {
    match op & !futex::FUTEX_PRIVATE_FLAG {
        futex::FUTEX_WAIT => {
            if !uaddr.is_multiple_of(4) {
                return SchedResult::Return(-errno::EINVAL);
            }
            let word = match mem.load_word(uaddr, 4) {
                Ok(w) => w as u32,
                Err(_) => return SchedResult::Return(-errno::EFAULT),
            };
            if word != val as u32 {
                return SchedResult::Return(-errno::EAGAIN);
            }
            // the wait returns 0 in this thread once woken
            caller_frame.set_ret(0);
            match sched.block_current_on_futex(uaddr, *caller_frame) {
                Some((from, to, next)) => {
                    trace.push(TraceEvent::SchedBlock {
                        tid: from,
                        addr: uaddr,
                    });
                    SchedResult::Switched {
                        ret: 0,
                        from,
                        to,
                        next,
                    }
                }
                None => SchedResult::Deadlock,
            }
        }
        futex::FUTEX_WAKE => {
            if !uaddr.is_multiple_of(4) {
                return SchedResult::Return(-errno::EINVAL);
            }
            let max = if (val as i64) < 0 { 0 } else { val };
            let woken = sched.wake_futex(uaddr, max);
            let count = woken.len() as i64;
            trace.push(TraceEvent::SchedWake { addr: uaddr, woken });
            SchedResult::Return(count)
        }
        _ => SchedResult::Return(-errno::ENOSYS),
    }
}

/// sys_sched_yield: push the caller onto the ready-queue tail and run the
/// head; with an empty queue the caller continues immediately.
pub fn sys_sched_yield(sched: &mut Scheduler, caller_frame: &mut TrapFrame) -> SchedResult {
    caller_frame.set_ret(0);
    match sched.yield_current(*caller_frame) {
        Some((from, to, next)) => SchedResult::Switched {
            ret: 0,
            from,
            to,
            next,
        },
        None => SchedResult::Return(0),
    }
}

/// sys_exit: terminate the calling thread; the system halts with the given
/// code when the last live thread exits.
pub fn sys_exit(sched: &mut Scheduler, trace: &mut TraceLog, code: i64) -> SchedResult {
    let tid = sched.current();
    trace.push(TraceEvent::SchedExit { tid, code });
    match sched.exit_current(code) {
        ExitDisposition::Switch { from, to, frame } => SchedResult::Switched {
            ret: 0,
            from,
            to,
            next: frame,
        },
        ExitDisposition::SystemHalt(code) => SchedResult::Halt(code),
        ExitDisposition::Deadlock => SchedResult::Deadlock,
    }
}

/// sys_exit_group: terminate the whole system regardless of other runnable
/// threads.
pub fn sys_exit_group(sched: &mut Scheduler, trace: &mut TraceLog, code: i64) -> SchedResult {
    let tid = sched.current();
    trace.push(TraceEvent::SchedExitGroup { tid, code });
    sched.exit_group();
    SchedResult::Halt(code)
}
