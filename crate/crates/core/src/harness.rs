//! The scripted micro-VM: boots the kernel, runs per-thread micro-op
//! scripts through the real trap-dispatch path, and records the execution
//! trace. The only channel between scripts and the kernel is the trap
//! frame plus guest memory.

use crate::kernel::{Dispatch, KernelFault, KernelState};
use crate::mem::{GuestMemory, DEVICE_STDERR, DEVICE_STDOUT};
use crate::scenario::{Expectations, Scenario};
use crate::script::{decode_pc, script_entry, step_thread, StepOutcome};
use crate::trace::{ExecutionTrace, RunOutcome, TraceEvent};

/// Everything a run produces: the trace plus the console captures.
#[derive(Debug)]
pub struct RunReport {
    pub trace: ExecutionTrace,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
}

impl RunReport {
    pub fn outcome(&self) -> &RunOutcome {
        &self.trace.outcome
    }
}

fn fault_report(reason: String) -> RunReport {
    let event = TraceEvent::FaultHarness {
        tid: 0,
        reason: reason.clone(),
    };
    RunReport {
        trace: ExecutionTrace {
            events: vec![event],
            outcome: RunOutcome::HarnessFault { tid: 0, reason },
        },
        stdout: Vec::new(),
        stderr: Vec::new(),
    }
}

/// Run a scenario to completion: boot, hand off to script 0 as tid 1, then
/// alternate between executing micro-ops and dispatching traps until the
/// system exits, faults, fails an assertion, or runs out of budget.
pub fn run_scenario(scenario: &Scenario) -> RunReport {
    let mem = match GuestMemory::new(&scenario.machine) {
        Ok(m) => m,
        Err(e) => return fault_report(format!("machine-config: {e}")),
    };
    let mut kernel = KernelState::new(mem);
    if let Err(e) = kernel.platform_bootstrap(scenario.allocator) {
        return fault_report(format!("boot: {e}"));
    }
    if let Err(e) = kernel.runtime_bootstrap(&scenario.boot) {
        return fault_report(format!("boot: {e}"));
    }
    let mut frame = match kernel.libc_handoff(script_entry(0)) {
        Ok(f) => f,
        Err(e) => return fault_report(format!("boot: {e}")),
    };

    let mut budget = scenario.machine.step_budget;
    let outcome = loop {
        let tid = kernel.current_tid();
        let (sid, _idx) = match decode_pc(frame.pc, scenario.scripts.len()) {
            Ok(pair) => pair,
            Err(reason) => {
                kernel.trace.push(TraceEvent::FaultHarness {
                    tid,
                    reason: reason.clone(),
                });
                break RunOutcome::HarnessFault { tid, reason };
            }
        };
        let step = step_thread(
            &scenario.scripts[sid],
            script_entry(sid),
            &mut frame,
            &mut kernel.mem,
            &mut kernel.trace,
            tid,
            &mut budget,
        );
        let dispatch = match step {
            StepOutcome::Trapped => kernel.handle_sys(frame),
            StepOutcome::Halted => kernel.handle_thread_halt(),
            StepOutcome::AssertFailed { op } => {
                break RunOutcome::AssertionFailed { tid, op };
            }
            StepOutcome::BudgetExhausted => {
                let steps = scenario.machine.step_budget;
                kernel.trace.push(TraceEvent::FaultBudget { steps });
                break RunOutcome::BudgetExceeded { steps };
            }
            StepOutcome::Fault { reason } => {
                kernel.trace.push(TraceEvent::FaultHarness {
                    tid,
                    reason: reason.clone(),
                });
                break RunOutcome::HarnessFault { tid, reason };
            }
        };
        match dispatch {
            Ok(Dispatch::Resume(next)) => frame = next,
            Ok(Dispatch::Halt(code)) => break RunOutcome::Exited(code),
            Err(KernelFault::Deadlock { tid }) => {
                kernel.trace.push(TraceEvent::FaultDeadlock { tid });
                break RunOutcome::Deadlock { tid };
            }
            Err(KernelFault::RegistriesUnpopulated) => {
                let reason = "registries-unpopulated".to_string();
                kernel.trace.push(TraceEvent::FaultHarness {
                    tid,
                    reason: reason.clone(),
                });
                break RunOutcome::HarnessFault { tid, reason };
            }
        }
        if let Some(sched) = kernel.scheduler() {
            sched.check_conservation();
        }
    };

    let stdout = kernel.mem.capture(DEVICE_STDOUT).to_vec();
    let stderr = kernel.mem.capture(DEVICE_STDERR).to_vec();
    RunReport {
        trace: ExecutionTrace {
            events: kernel.trace.into_events(),
            outcome,
        },
        stdout,
        stderr,
    }
}

/// Compare a finished run against the scenario's expectations.
pub fn check_expectations(report: &RunReport, expect: &Expectations) -> Result<(), String> {
    if let Some(want) = expect.exit_code {
        match report.outcome() {
            RunOutcome::Exited(code) if *code == want => {}
            RunOutcome::Exited(code) => {
                return Err(format!("expected exit code {want}, got {code}"));
            }
            other => {
                return Err(format!(
                    "expected exit code {want}, run ended with {other:?}"
                ))
            }
        }
    }
    if let Some(want) = &expect.stdout {
        if &report.stdout != want {
            return Err(format!(
                "stdout mismatch: expected {:?}, got {:?}",
                String::from_utf8_lossy(want),
                String::from_utf8_lossy(&report.stdout)
            ));
        }
    }
    if let Some(want) = &expect.stderr {
        if &report.stderr != want {
            return Err(format!(
                "stderr mismatch: expected {:?}, got {:?}",
                String::from_utf8_lossy(want),
                String::from_utf8_lossy(&report.stderr)
            ));
        }
    }
    Ok(())
}
