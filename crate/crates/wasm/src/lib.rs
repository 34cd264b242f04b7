//! Browser bindings for the kernel and micro-VM: run scenarios, explore
//! boot-stack images, and inspect the syscall coverage matrix from a
//! static page. Everything is deterministic, so the page needs no state
//! beyond its input fields.

use detos::{
    check_expectations, parse_scenario, run_scenario, stack_dump_text, BootConfig, MachineConfig,
};
use wasm_bindgen::prelude::*;

/// Outcome of one scenario run, exposed to JS via getters.
#[wasm_bindgen]
pub struct RunResult {
    outcome: String,
    status: i32,
    trace: String,
    stdout: String,
    stderr: String,
}

#[wasm_bindgen]
impl RunResult {
    #[wasm_bindgen(getter)]
    pub fn outcome(&self) -> String {
        self.outcome.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn status(&self) -> i32 {
        self.status
    }

    #[wasm_bindgen(getter)]
    pub fn trace(&self) -> String {
        self.trace.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn stdout(&self) -> String {
        self.stdout.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn stderr(&self) -> String {
        self.stderr.clone()
    }
}

/// Parse and run a scenario, returning the trace, the captures, and the
/// status the CLI would exit with (101 for parse errors).
#[wasm_bindgen]
pub fn run_scenario_text(text: &str) -> RunResult {
    let scenario = match parse_scenario(text) {
        Ok(s) => s,
        Err(e) => {
            return RunResult {
                outcome: format!("parse error: {e}"),
                status: 101,
                trace: String::new(),
                stdout: String::new(),
                stderr: String::new(),
            }
        }
    };
    let report = run_scenario(&scenario);
    let mut status = report.outcome().process_status();
    let mut outcome = match report.outcome() {
        detos::RunOutcome::Exited(code) => format!("exited with code {code}"),
        detos::RunOutcome::Deadlock { tid } => {
            format!("deadlock: tid {tid} left no runnable thread")
        }
        detos::RunOutcome::AssertionFailed { tid, op } => {
            format!("assertion failed: tid {tid}, op {op}")
        }
        detos::RunOutcome::BudgetExceeded { steps } => {
            format!("step budget exceeded ({steps} micro-ops)")
        }
        detos::RunOutcome::HarnessFault { tid, reason } => {
            format!("harness fault: tid {tid}: {reason}")
        }
    };
    if matches!(report.outcome(), detos::RunOutcome::Exited(_)) {
        if let Err(msg) = check_expectations(&report, &scenario.expect) {
            outcome = format!("expectation failed: {msg}");
            status = 102;
        }
    }
    RunResult {
        outcome,
        status,
        trace: report.trace.serialize(),
        stdout: String::from_utf8_lossy(&report.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&report.stderr).into_owned(),
    }
}

fn stack_dump_impl(
    program_name: &str,
    initial_sp: &str,
    paper_compat: bool,
) -> Result<String, String> {
    let t = initial_sp.trim();
    let parsed = if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16)
    } else {
        t.parse()
    };
    let sp = parsed.map_err(|_| format!("bad address: {initial_sp}"))?;
    let mut boot = BootConfig::with_program_name(program_name);
    boot.initial_sp = sp;
    boot.at_random_compat = paper_compat;
    stack_dump_text(&boot, &MachineConfig::default()).map_err(|e| e.to_string())
}

/// Render the musl boot-stack image for the given parameters.
/// `initial_sp` is a hex or decimal string so 64-bit addresses survive the
/// JS boundary.
#[wasm_bindgen]
pub fn stack_dump(
    program_name: &str,
    initial_sp: &str,
    paper_compat: bool,
) -> Result<String, JsValue> {
    stack_dump_impl(program_name, initial_sp, paper_compat).map_err(|e| JsValue::from_str(&e))
}

/// The syscall coverage matrix as a tab-separated table.
#[wasm_bindgen]
pub fn abi_matrix() -> String {
    detos::abi::abi_matrix_text()
}
