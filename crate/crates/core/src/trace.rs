//! Execution trace events and their line serialization.
//!
//! The serialized form is a contract surface: one event per line, stable
//! field order, lowercase hex, LF endings, and nothing nondeterministic
//! (no timestamps, hostnames, or paths). Golden-trace tests compare runs
//! byte for byte, so changes here are format changes.

use std::fmt;

pub type Tid = u64;

/// Why a run ended.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RunOutcome {
    /// Guest exited (via exit_group or the last thread exiting).
    Exited(i64),
    /// No runnable thread remained while blocked threads existed.
    Deadlock { tid: Tid },
    /// A script assertion failed.
    AssertionFailed { tid: Tid, op: usize },
    /// The micro-op step budget ran out.
    BudgetExceeded { steps: u64 },
    /// The harness itself faulted (bad jump target, bad pc).
    HarnessFault { tid: Tid, reason: String },
}

impl RunOutcome {
    /// Process exit status for the CLI. Guest codes pass through modulo the
    /// platform status width; the reserved codes identify non-guest ends.
    pub fn process_status(&self) -> i32 {
        match self {
            RunOutcome::Exited(code) => (*code as i32) & 0xff,
            RunOutcome::AssertionFailed { .. } => 102,
            RunOutcome::Deadlock { .. } => 103,
            RunOutcome::BudgetExceeded { .. } => 104,
            RunOutcome::HarnessFault { .. } => 105,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceEvent {
    BootPlatform {
        allocator: &'static str,
        stdout_base: u64,
        stdout_len: u64,
        stderr_base: u64,
        stderr_len: u64,
    },
    BootRuntime {
        buffer_sp: u64,
        target_sp: u64,
        copied: u64,
    },
    BootLibcStartMain {
        argc: u64,
        argv: u64,
    },
    BootStage(&'static str),
    BootInitSsp {
        at_random: u64,
    },
    BootMainEntry {
        tid: Tid,
        pc: u64,
        sp: u64,
        a1: u64,
        a2: u64,
    },
    Trap {
        tid: Tid,
        nr: u64,
        name: &'static str,
        args: [u64; 6],
    },
    Wrapper {
        name: &'static str,
    },
    Sysret {
        tid: Tid,
        name: &'static str,
        ret: i64,
        pc_before: u64,
        pc_after: u64,
    },
    Alloc {
        pages: u64,
        base: Option<u64>,
    },
    Dealloc {
        base: u64,
        pages: u64,
    },
    MemStats {
        free_pages: u64,
        largest_run: u64,
        mapped: u64,
    },
    SchedCreate {
        tid: Tid,
        pc: u64,
        sp: u64,
    },
    SchedSwitch {
        from: Tid,
        to: Tid,
    },
    SchedBlock {
        tid: Tid,
        addr: u64,
    },
    SchedWake {
        addr: u64,
        woken: Vec<Tid>,
    },
    SchedExit {
        tid: Tid,
        code: i64,
    },
    SchedExitGroup {
        tid: Tid,
        code: i64,
    },
    AssertOk {
        tid: Tid,
        op: usize,
    },
    AssertRegFail {
        tid: Tid,
        op: usize,
        reg: &'static str,
        expected: u64,
        actual: u64,
    },
    AssertMemFail {
        tid: Tid,
        op: usize,
        addr: u64,
        expected: Vec<u8>,
        actual: Vec<u8>,
    },
    Halt {
        tid: Tid,
    },
    FaultDeadlock {
        tid: Tid,
    },
    FaultBudget {
        steps: u64,
    },
    FaultHarness {
        tid: Tid,
        reason: String,
    },
    Exit {
        code: i64,
    },
}

fn fmt_ret(ret: i64) -> String {
    if ret < 0 {
        format!("{ret}")
    } else {
        format!("0x{ret:x}")
    }
}

fn fmt_tids(tids: &[Tid]) -> String {
    let inner: Vec<String> = tids.iter().map(|t| t.to_string()).collect();
    format!("[{}]", inner.join(","))
}

fn fmt_hex_bytes(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use TraceEvent::*;
        match self {
            BootPlatform { allocator, stdout_base, stdout_len, stderr_base, stderr_len } => {
                write!(
                    f,
                    "boot platform allocator={allocator} stdout=0x{stdout_base:x}+{stdout_len} stderr=0x{stderr_base:x}+{stderr_len}"
                )
            }
            BootRuntime { buffer_sp, target_sp, copied } => write!(
                f,
                "boot runtime buffer_sp=0x{buffer_sp:x} target_sp=0x{target_sp:x} copied={copied}"
            ),
            BootLibcStartMain { argc, argv } => {
                write!(f, "boot libc_start_main argc={argc} argv=0x{argv:x}")
            }
            BootStage(stage) => write!(f, "boot {stage}"),
            BootInitSsp { at_random } => write!(f, "boot init_ssp at_random=0x{at_random:x}"),
            BootMainEntry { tid, pc, sp, a1, a2 } => write!(
                f,
                "boot main_entry tid={tid} pc=0x{pc:x} sp=0x{sp:x} a1={a1} a2=0x{a2:x}"
            ),
            Trap { tid, nr, name, args } => {
                let args: Vec<String> = args.iter().map(|a| format!("0x{a:x}")).collect();
                write!(f, "trap tid={tid} nr={nr} sys={name} args=[{}]", args.join(","))
            }
            Wrapper { name } => write!(f, "wrapper sys_{name}"),
            Sysret { tid, name, ret, pc_before, pc_after } => write!(
                f,
                "sysret tid={tid} sys={name} ret={} pc=0x{pc_before:x}->0x{pc_after:x}",
                fmt_ret(*ret)
            ),
            Alloc { pages, base: Some(base) } => {
                write!(f, "alloc pages={pages} base=0x{base:x}")
            }
            Alloc { pages, base: None } => write!(f, "alloc pages={pages} enomem"),
            Dealloc { base, pages } => write!(f, "dealloc base=0x{base:x} pages={pages}"),
            MemStats { free_pages, largest_run, mapped } => write!(
                f,
                "mem free_pages={free_pages} largest_run={largest_run} mapped={mapped}"
            ),
            SchedCreate { tid, pc, sp } => {
                write!(f, "sched create tid={tid} pc=0x{pc:x} sp=0x{sp:x}")
            }
            SchedSwitch { from, to } => write!(f, "sched switch from={from} to={to}"),
            SchedBlock { tid, addr } => write!(f, "sched block tid={tid} addr=0x{addr:x}"),
            SchedWake { addr, woken } => {
                write!(f, "sched wake addr=0x{addr:x} woken={}", fmt_tids(woken))
            }
            SchedExit { tid, code } => write!(f, "sched exit tid={tid} code={code}"),
            SchedExitGroup { tid, code } => {
                write!(f, "sched exit_group tid={tid} code={code}")
            }
            AssertOk { tid, op } => write!(f, "assert tid={tid} op={op} ok"),
            AssertRegFail { tid, op, reg, expected, actual } => write!(
                f,
                "assert tid={tid} op={op} fail reg={reg} expected=0x{expected:x} actual=0x{actual:x}"
            ),
            AssertMemFail { tid, op, addr, expected, actual } => write!(
                f,
                "assert tid={tid} op={op} fail addr=0x{addr:x} expected={} actual={}",
                fmt_hex_bytes(expected),
                fmt_hex_bytes(actual)
            ),
            Halt { tid } => write!(f, "halt tid={tid}"),
            FaultDeadlock { tid } => write!(f, "fault deadlock tid={tid}"),
            FaultBudget { steps } => write!(f, "fault budget steps={steps}"),
            FaultHarness { tid, reason } => write!(f, "fault harness tid={tid} reason={reason}"),
            Exit { code } => write!(f, "exit code={code}"),
        }
    }
}

/// Ordered event log; the kernel and the harness both append to it.
#[derive(Debug, Default)]
pub struct TraceLog {
    events: Vec<TraceEvent>,
}

impl TraceLog {
    pub fn new() -> TraceLog {
        TraceLog { events: Vec::new() }
    }

    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<TraceEvent> {
        self.events
    }
}

/// The completed trace of one scenario run.
#[derive(Debug)]
pub struct ExecutionTrace {
    pub events: Vec<TraceEvent>,
    pub outcome: RunOutcome,
}

impl ExecutionTrace {
    /// The golden-trace file format: one event per line, LF endings.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }
}
