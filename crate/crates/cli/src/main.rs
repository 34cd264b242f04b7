//! Operator entry point: run scenario files, dump musl stack images, and
//! print the syscall coverage matrix.
//!
//! Exit statuses: the guest exit code passes through for completed runs;
//! 101 scenario load/parse error, 102 assertion or expectation failure,
//! 103 deadlock, 104 step-budget exhaustion, 105 internal harness fault,
//! 2 command-line usage error.

use detos::{check_expectations, parse_scenario, run_scenario, stack_dump_text};
use detos::{AllocatorKind, BootConfig, MachineConfig, RunOutcome};
use std::fs;
use std::process::ExitCode;

const USAGE: &str = "\
usage: detos <command> [options]

commands:
  run <scenario.scn> [--trace <file>] [--stdout-file <file>]
                     [--stderr-file <file>] [--allocator <freelist|bump>]
                     [--step-budget <n>]
      Run a scenario and exit with the guest's exit code (or a reserved
      status: 101 parse error, 102 assertion failure, 103 deadlock,
      104 budget exceeded, 105 harness fault).

  stack-dump [--program-name <name>] [--initial-sp <addr>] [--paper-compat]
      Print the musl boot-stack image, one 64-bit word per line.

  abi-matrix
      Print the syscall coverage matrix (tab-separated).
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match args.first().map(String::as_str) {
        Some("run") => cmd_run(&args[1..]),
        Some("stack-dump") => cmd_stack_dump(&args[1..]),
        Some("abi-matrix") => cmd_abi_matrix(&args[1..]),
        Some("--help") | Some("-h") | Some("help") => {
            print!("{USAGE}");
            ExitCode::SUCCESS
        }
        Some(other) => {
            eprintln!("unknown command: {other}");
            eprint!("{USAGE}");
            ExitCode::from(2)
        }
        None => {
            eprint!("{USAGE}");
            ExitCode::from(2)
        }
    }
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    eprint!("{USAGE}");
    ExitCode::from(2)
}

/// Take the value following a flag, consuming both.
fn take_value(args: &mut Vec<String>, flag: &str) -> Result<Option<String>, String> {
    if let Some(pos) = args.iter().position(|a| a == flag) {
        if pos + 1 >= args.len() {
            return Err(format!("{flag} needs a value"));
        }
        let value = args.remove(pos + 1);
        args.remove(pos);
        Ok(Some(value))
    } else {
        Ok(None)
    }
}

fn take_flag(args: &mut Vec<String>, flag: &str) -> bool {
    if let Some(pos) = args.iter().position(|a| a == flag) {
        args.remove(pos);
        true
    } else {
        false
    }
}

fn parse_u64(s: &str) -> Result<u64, String> {
    let t = s.trim();
    if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).map_err(|_| format!("bad integer: {s}"))
    } else {
        t.parse().map_err(|_| format!("bad integer: {s}"))
    }
}

fn cmd_run(rest: &[String]) -> ExitCode {
    let mut args = rest.to_vec();
    let trace_out = match take_value(&mut args, "--trace") {
        Ok(v) => v,
        Err(e) => return usage_error(&e),
    };
    let stdout_file = match take_value(&mut args, "--stdout-file") {
        Ok(v) => v,
        Err(e) => return usage_error(&e),
    };
    let stderr_file = match take_value(&mut args, "--stderr-file") {
        Ok(v) => v,
        Err(e) => return usage_error(&e),
    };
    let allocator = match take_value(&mut args, "--allocator") {
        Ok(v) => v,
        Err(e) => return usage_error(&e),
    };
    let step_budget = match take_value(&mut args, "--step-budget") {
        Ok(v) => v,
        Err(e) => return usage_error(&e),
    };
    if args.len() != 1 || args[0].starts_with("--") {
        return usage_error("run takes exactly one scenario path");
    }
    let path = &args[0];

    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("scenario load error: {e}");
            return ExitCode::from(101);
        }
    };
    let mut scenario = match parse_scenario(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("scenario parse error: {e}");
            return ExitCode::from(101);
        }
    };
    if let Some(a) = allocator {
        scenario.allocator = match a.as_str() {
            "freelist" => AllocatorKind::FreeList,
            "bump" => AllocatorKind::Bump,
            other => return usage_error(&format!("unknown allocator: {other}")),
        };
    }
    if let Some(b) = step_budget {
        scenario.machine.step_budget = match parse_u64(&b) {
            Ok(v) => v,
            Err(e) => return usage_error(&e),
        };
    }

    let report = run_scenario(&scenario);

    if let Some(path) = trace_out {
        if let Err(e) = fs::write(&path, report.trace.serialize()) {
            eprintln!("cannot write trace file: {e}");
            return ExitCode::from(2);
        }
    }
    if let Some(path) = &stdout_file {
        if let Err(e) = fs::write(path, &report.stdout) {
            eprintln!("cannot write stdout capture: {e}");
            return ExitCode::from(2);
        }
    } else {
        print_capture("stdout", &report.stdout);
    }
    if let Some(path) = &stderr_file {
        if let Err(e) = fs::write(path, &report.stderr) {
            eprintln!("cannot write stderr capture: {e}");
            return ExitCode::from(2);
        }
    } else {
        print_capture("stderr", &report.stderr);
    }

    match report.outcome() {
        RunOutcome::Exited(code) => {
            if let Err(msg) = check_expectations(&report, &scenario.expect) {
                eprintln!("expectation failed: {msg}");
                return ExitCode::from(102);
            }
            ExitCode::from((*code as u32 & 0xff) as u8)
        }
        RunOutcome::AssertionFailed { tid, op } => {
            eprintln!("assertion failed: tid {tid}, op {op}");
            ExitCode::from(102)
        }
        RunOutcome::Deadlock { tid } => {
            eprintln!("deadlock: tid {tid} left no runnable thread");
            ExitCode::from(103)
        }
        RunOutcome::BudgetExceeded { steps } => {
            eprintln!("step budget exceeded: {steps} micro-ops");
            ExitCode::from(104)
        }
        RunOutcome::HarnessFault { tid, reason } => {
            eprintln!("harness fault: tid {tid}: {reason}");
            ExitCode::from(105)
        }
    }
}

/// Print a capture to the host console, one prefixed line per guest line.
fn print_capture(stream: &str, bytes: &[u8]) {
    if bytes.is_empty() {
        return;
    }
    let text = String::from_utf8_lossy(bytes);
    for line in text.split_inclusive('\n') {
        print!("[{stream}] {line}");
        if !line.ends_with('\n') {
            println!();
        }
    }
}

fn cmd_stack_dump(rest: &[String]) -> ExitCode {
    let mut args = rest.to_vec();
    let program_name = match take_value(&mut args, "--program-name") {
        Ok(v) => v,
        Err(e) => return usage_error(&e),
    };
    let initial_sp = match take_value(&mut args, "--initial-sp") {
        Ok(v) => v,
        Err(e) => return usage_error(&e),
    };
    let paper_compat = take_flag(&mut args, "--paper-compat");
    if !args.is_empty() {
        return usage_error(&format!("unexpected argument: {}", args[0]));
    }

    let mut boot = match program_name {
        Some(name) => BootConfig::with_program_name(&name),
        None => BootConfig::default(),
    };
    if let Some(sp) = initial_sp {
        boot.initial_sp = match parse_u64(&sp) {
            Ok(v) => v,
            Err(e) => return usage_error(&e),
        };
    }
    boot.at_random_compat = paper_compat;
    match stack_dump_text(&boot, &MachineConfig::default()) {
        Ok(dump) => {
            print!("{dump}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("stack dump failed: {e}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_abi_matrix(rest: &[String]) -> ExitCode {
    if !rest.is_empty() {
        return usage_error("abi-matrix takes no arguments");
    }
    print!("{}", detos::abi::abi_matrix_text());
    ExitCode::SUCCESS
}
