//! Scripted guest execution: micro-op programs stand in for machine code.
//! A thread's pc is an address in a synthetic text segment, one micro-op
//! per 4 bytes, so the kernel's "advance pc by 4" contract maps to
//! "advance one micro-op" and clone's entry argument is an ordinary pc.

use crate::mem::GuestMemory;
use crate::trace::{Tid, TraceEvent, TraceLog};
use crate::trap::{reg_name, TrapFrame};

/// Base of the synthetic text segment holding all scripts.
pub const TEXT_BASE: u64 = 0x1000_0000;
/// Address stride between consecutive scripts (16384 micro-ops each).
pub const SCRIPT_STRIDE: u64 = 0x1_0000;

/// Entry pc of script `index`, as passed to clone.
pub fn script_entry(index: usize) -> u64 {
    TEXT_BASE + (index as u64) * SCRIPT_STRIDE
}

/// Memory access width for load/store micro-ops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Width {
    Four,
    Eight,
}

impl Width {
    pub fn bytes(self) -> u64 {
        match self {
            Width::Four => 4,
            Width::Eight => 8,
        }
    }

    pub fn from_bytes(n: u64) -> Option<Width> {
        match n {
            4 => Some(Width::Four),
            8 => Some(Width::Eight),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MicroOp {
    /// reg := value
    SetReg {
        reg: usize,
        value: u64,
    },
    /// reg := reg + imm (wrapping)
    AddImm {
        reg: usize,
        imm: i64,
    },
    /// reg := mem at addr (4-byte loads zero-extend)
    LoadWord {
        reg: usize,
        addr: u64,
        width: Width,
    },
    /// mem at addr := reg (4-byte stores truncate)
    StoreWord {
        reg: usize,
        addr: u64,
        width: Width,
    },
    /// Trap with the current registers; a7 selects the syscall.
    Syscall,
    AssertReg {
        reg: usize,
        expected: u64,
    },
    AssertMem {
        addr: u64,
        expected: Vec<u8>,
    },
    /// Unconditional jump to a micro-op index (a resolved label).
    Jump {
        target: usize,
    },
    /// Jump when reg == 0.
    JumpIfZero {
        reg: usize,
        target: usize,
    },
    /// End the thread as if it called exit(0).
    Halt,
}

/// One thread's program: a finite list of micro-ops. Loops may still run
/// unbounded, which is what the step budget guards against.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GuestScript {
    pub name: String,
    pub ops: Vec<MicroOp>,
}

/// Why step_thread stopped executing micro-ops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    /// Hit a Syscall op; the frame is ready for handle_sys with pc at the
    /// trapping op.
    Trapped,
    /// Ran off the end of the script or hit Halt.
    Halted,
    /// An assertion failed (the failure event is already in the trace).
    AssertFailed { op: usize },
    /// The shared step budget ran out.
    BudgetExhausted,
    /// Unrecoverable script error.
    Fault { reason: String },
}

/// Split a pc into (script index, micro-op index).
pub fn decode_pc(pc: u64, script_count: usize) -> Result<(usize, usize), String> {
    if pc < TEXT_BASE {
        return Err(format!("pc-below-text-base-0x{pc:x}"));
    }
    let off = pc - TEXT_BASE;
    let script = (off / SCRIPT_STRIDE) as usize;
    let rem = off % SCRIPT_STRIDE;
    if !rem.is_multiple_of(4) {
        return Err(format!("pc-misaligned-0x{pc:x}"));
    }
    if script >= script_count {
        return Err(format!("pc-outside-scripts-0x{pc:x}"));
    }
    Ok((script, (rem / 4) as usize))
}

/// Execute micro-ops for the current thread until it traps, halts, fails an
/// assertion, faults, or exhausts the budget. `frame.pc` is kept in sync
/// with the micro-op index throughout; a Syscall leaves pc at the trapping
/// op so the dispatcher's pc += 4 lands on the next one.
pub fn step_thread(
    script: &GuestScript,
    script_base: u64,
    frame: &mut TrapFrame,
    mem: &mut GuestMemory,
    trace: &mut TraceLog,
    tid: Tid,
    budget: &mut u64,
) -> StepOutcome {
    let mut idx = ((frame.pc - script_base) / 4) as usize;
    loop {
        if idx > script.ops.len() {
            return StepOutcome::Fault {
                reason: format!("pc-past-script-end-op-{idx}"),
            };
        }
        if idx == script.ops.len() {
            frame.pc = script_base + (idx as u64) * 4;
            return StepOutcome::Halted;
        }
        if *budget == 0 {
            return StepOutcome::BudgetExhausted;
        }
        *budget -= 1;
        frame.pc = script_base + (idx as u64) * 4;
        match &script.ops[idx] {
            MicroOp::SetReg { reg, value } => {
                frame.set(*reg, *value);
                idx += 1;
            }
            MicroOp::AddImm { reg, imm } => {
                frame.set(*reg, frame.get(*reg).wrapping_add(*imm as u64));
                idx += 1;
            }
            MicroOp::LoadWord { reg, addr, width } => {
                match mem.load_word(*addr, width.bytes()) {
                    Ok(v) => frame.set(*reg, v),
                    Err(e) => {
                        return StepOutcome::Fault {
                            reason: format!("load-fault-{e:?}-op-{idx}"),
                        }
                    }
                }
                idx += 1;
            }
            MicroOp::StoreWord { reg, addr, width } => {
                if let Err(e) = mem.store_word(*addr, width.bytes(), frame.get(*reg)) {
                    return StepOutcome::Fault {
                        reason: format!("store-fault-{e:?}-op-{idx}"),
                    };
                }
                idx += 1;
            }
            MicroOp::Syscall => {
                return StepOutcome::Trapped;
            }
            MicroOp::AssertReg { reg, expected } => {
                let actual = frame.get(*reg);
                if actual == *expected {
                    trace.push(TraceEvent::AssertOk { tid, op: idx });
                    idx += 1;
                } else {
                    trace.push(TraceEvent::AssertRegFail {
                        tid,
                        op: idx,
                        reg: reg_name(*reg),
                        expected: *expected,
                        actual,
                    });
                    return StepOutcome::AssertFailed { op: idx };
                }
            }
            MicroOp::AssertMem { addr, expected } => {
                let actual = match mem.read_bytes(*addr, expected.len() as u64) {
                    Ok(b) => b,
                    Err(e) => {
                        return StepOutcome::Fault {
                            reason: format!("assert-mem-fault-{e:?}-op-{idx}"),
                        }
                    }
                };
                if &actual == expected {
                    trace.push(TraceEvent::AssertOk { tid, op: idx });
                    idx += 1;
                } else {
                    trace.push(TraceEvent::AssertMemFail {
                        tid,
                        op: idx,
                        addr: *addr,
                        expected: expected.clone(),
                        actual,
                    });
                    return StepOutcome::AssertFailed { op: idx };
                }
            }
            MicroOp::Jump { target } => {
                if *target > script.ops.len() {
                    return StepOutcome::Fault {
                        reason: format!("bad-jump-target-op-{idx}"),
                    };
                }
                idx = *target;
            }
            MicroOp::JumpIfZero { reg, target } => {
                if *target > script.ops.len() {
                    return StepOutcome::Fault {
                        reason: format!("bad-jump-target-op-{idx}"),
                    };
                }
                if frame.get(*reg) == 0 {
                    idx = *target;
                } else {
                    idx += 1;
                }
            }
            MicroOp::Halt => {
                return StepOutcome::Halted;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abi::nr;
    use crate::mem::MachineConfig;
    use crate::trap::parse_reg_name;

    fn mem() -> GuestMemory {
        GuestMemory::new(&MachineConfig::default()).unwrap()
    }

    fn run(ops: Vec<MicroOp>, budget: u64) -> (TrapFrame, StepOutcome, u64, TraceLog) {
        let script = GuestScript {
            name: "t".into(),
            ops,
        };
        let mut frame = TrapFrame::new();
        frame.pc = TEXT_BASE;
        let mut m = mem();
        let mut trace = TraceLog::new();
        let mut left = budget;
        let out = step_thread(
            &script, TEXT_BASE, &mut frame, &mut m, &mut trace, 1, &mut left,
        );
        (frame, out, left, trace)
    }

    fn a7() -> usize {
        parse_reg_name("a7").unwrap()
    }

    #[test]
    fn syscall_traps_with_registers_intact() {
        let ops = vec![
            MicroOp::SetReg {
                reg: a7(),
                value: nr::WRITE,
            },
            MicroOp::SetReg { reg: 10, value: 1 },
            MicroOp::Syscall,
        ];
        let (frame, out, _, _) = run(ops, 100);
        assert_eq!(out, StepOutcome::Trapped);
        assert_eq!(frame.a7(), nr::WRITE);
        assert_eq!(frame.get(10), 1);
        assert_eq!(frame.pc, TEXT_BASE + 2 * 4, "pc rests on the syscall op");
    }

    #[test]
    fn counted_loop_runs_exactly_n_iterations() {
        // t0 = 5; loop: add t0, -1; jump_if_zero t0, done; jump loop; done:
        let ops = vec![
            MicroOp::SetReg { reg: 5, value: 5 },
            MicroOp::AddImm { reg: 5, imm: -1 },
            MicroOp::JumpIfZero { reg: 5, target: 4 },
            MicroOp::Jump { target: 1 },
        ];
        let (frame, out, left, _) = run(ops, 1000);
        assert_eq!(out, StepOutcome::Halted);
        assert_eq!(frame.get(5), 0);
        // 1 set + 5*(add) + 5*(jz) + 4*(jump) = 15 steps
        assert_eq!(1000 - left, 15);
    }

    #[test]
    fn running_off_the_end_halts() {
        let (_, out, _, _) = run(vec![MicroOp::SetReg { reg: 5, value: 1 }], 10);
        assert_eq!(out, StepOutcome::Halted);
        let (_, out, _, _) = run(vec![MicroOp::Halt], 10);
        assert_eq!(out, StepOutcome::Halted);
    }

    #[test]
    fn assert_reg_failure_names_tid_and_op() {
        let ops = vec![
            MicroOp::SetReg { reg: 5, value: 3 },
            MicroOp::AssertReg {
                reg: 5,
                expected: 4,
            },
        ];
        let (_, out, _, trace) = run(ops, 10);
        assert_eq!(out, StepOutcome::AssertFailed { op: 1 });
        assert_eq!(
            trace.events().last().unwrap().to_string(),
            "assert tid=1 op=1 fail reg=t0 expected=0x4 actual=0x3"
        );
    }

    #[test]
    fn assert_mem_compares_bytes() {
        let ops = vec![
            MicroOp::SetReg {
                reg: 5,
                value: u64::from_le_bytes(*b"hello\0\0\0"),
            },
            MicroOp::StoreWord {
                reg: 5,
                addr: 0x4000,
                width: Width::Eight,
            },
            MicroOp::AssertMem {
                addr: 0x4000,
                expected: b"hello".to_vec(),
            },
        ];
        let (_, out, _, trace) = run(ops, 10);
        assert_eq!(out, StepOutcome::Halted);
        assert_eq!(
            trace.events().last().unwrap().to_string(),
            "assert tid=1 op=2 ok"
        );
    }

    #[test]
    fn bad_jump_target_is_a_harness_fault() {
        let (_, out, _, _) = run(vec![MicroOp::Jump { target: 99 }], 10);
        assert!(matches!(out, StepOutcome::Fault { .. }));
    }

    #[test]
    fn budget_exhaustion_stops_infinite_loops() {
        let ops = vec![MicroOp::Jump { target: 0 }];
        let (_, out, left, _) = run(ops, 50);
        assert_eq!(out, StepOutcome::BudgetExhausted);
        assert_eq!(left, 0);
    }

    #[test]
    fn pc_codec_round_trips() {
        assert_eq!(decode_pc(script_entry(0), 3).unwrap(), (0, 0));
        assert_eq!(decode_pc(script_entry(2) + 8, 3).unwrap(), (2, 2));
        assert!(decode_pc(script_entry(3), 3).is_err());
        assert!(decode_pc(script_entry(0) + 2, 3).is_err());
        assert!(decode_pc(0x1000, 3).is_err());
    }

    #[test]
    fn four_byte_loads_zero_extend() {
        let ops = vec![
            MicroOp::SetReg {
                reg: 5,
                value: 0xffff_ffff_ffff_ffff,
            },
            MicroOp::StoreWord {
                reg: 5,
                addr: 0x4000,
                width: Width::Four,
            },
            MicroOp::SetReg { reg: 6, value: 0 },
            MicroOp::LoadWord {
                reg: 6,
                addr: 0x4000,
                width: Width::Four,
            },
            MicroOp::LoadWord {
                reg: 7,
                addr: 0x4000,
                width: Width::Eight,
            },
        ];
        let (frame, out, _, _) = run(ops, 10);
        assert_eq!(out, StepOutcome::Halted);
        assert_eq!(frame.get(6), 0xffff_ffff);
        assert_eq!(
            frame.get(7),
            0xffff_ffff,
            "upper half of the word untouched"
        );
    }
}
