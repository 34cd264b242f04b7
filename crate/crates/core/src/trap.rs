//! Guest register file snapshot taken at a syscall trap. The dispatcher and
//! the scheduler move whole frames around; nothing else crosses the
//! guest/kernel boundary.

/// Snapshot of the guest's pc and the 31 general-purpose registers
/// (x1..x31; x0 is hardwired to zero and not stored). Syscall convention:
/// number in a7, arguments in a0..a5, return value written back to a0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrapFrame {
    pub pc: u64,
    pub regs: [u64; 31],
}

// Register indices into `regs` (x1 is regs[0]).
pub const REG_RA: usize = 0;
pub const REG_SP: usize = 1;
pub const REG_GP: usize = 2;
pub const REG_TP: usize = 3;
pub const REG_A0: usize = 9;
pub const REG_A1: usize = 10;
pub const REG_A2: usize = 11;
pub const REG_A3: usize = 12;
pub const REG_A4: usize = 13;
pub const REG_A5: usize = 14;
pub const REG_A7: usize = 16;

impl TrapFrame {
    pub fn new() -> TrapFrame {
        TrapFrame {
            pc: 0,
            regs: [0; 31],
        }
    }

    /// Read xN; x0 always reads as zero.
    pub fn get(&self, x: usize) -> u64 {
        debug_assert!(x < 32);
        if x == 0 {
            0
        } else {
            self.regs[x - 1]
        }
    }

    /// Write xN; writes to x0 are discarded.
    pub fn set(&mut self, x: usize, value: u64) {
        debug_assert!(x < 32);
        if x != 0 {
            self.regs[x - 1] = value;
        }
    }

    pub fn a0(&self) -> u64 {
        self.regs[REG_A0]
    }

    pub fn a7(&self) -> u64 {
        self.regs[REG_A7]
    }

    pub fn sp(&self) -> u64 {
        self.regs[REG_SP]
    }

    pub fn set_sp(&mut self, v: u64) {
        self.regs[REG_SP] = v;
    }

    /// Syscall arguments a0..a5 in order.
    pub fn syscall_args(&self) -> [u64; 6] {
        [
            self.regs[REG_A0],
            self.regs[REG_A1],
            self.regs[REG_A2],
            self.regs[REG_A3],
            self.regs[REG_A4],
            self.regs[REG_A5],
        ]
    }

    /// Write a wrapper result (or -errno) into a0.
    pub fn set_ret(&mut self, value: i64) {
        self.regs[REG_A0] = value as u64;
    }

    /// Step one instruction past the trap.
    pub fn advance_pc(&mut self) {
        self.pc += 4;
    }
}

impl Default for TrapFrame {
    fn default() -> TrapFrame {
        TrapFrame::new()
    }
}

/// Parse an ABI register name ("a0", "sp", "t3", ...) or "xN" to its index.
pub fn parse_reg_name(name: &str) -> Option<usize> {
    let idx = match name {
        "zero" | "x0" => 0,
        "ra" => 1,
        "sp" => 2,
        "gp" => 3,
        "tp" => 4,
        "t0" => 5,
        "t1" => 6,
        "t2" => 7,
        "s0" | "fp" => 8,
        "s1" => 9,
        "a0" => 10,
        "a1" => 11,
        "a2" => 12,
        "a3" => 13,
        "a4" => 14,
        "a5" => 15,
        "a6" => 16,
        "a7" => 17,
        "s2" => 18,
        "s3" => 19,
        "s4" => 20,
        "s5" => 21,
        "s6" => 22,
        "s7" => 23,
        "s8" => 24,
        "s9" => 25,
        "s10" => 26,
        "s11" => 27,
        "t3" => 28,
        "t4" => 29,
        "t5" => 30,
        "t6" => 31,
        _ => {
            let n: usize = name.strip_prefix('x')?.parse().ok()?;
            if n < 32 {
                n
            } else {
                return None;
            }
        }
    };
    Some(idx)
}

/// ABI name for a register index, used in diagnostics and trace lines.
pub fn reg_name(x: usize) -> &'static str {
    const NAMES: [&str; 32] = [
        "zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1", "a0", "a1", "a2", "a3", "a4",
        "a5", "a6", "a7", "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9", "s10", "s11", "t3", "t4",
        "t5", "t6",
    ];
    NAMES[x]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn x0_is_hardwired_zero() {
        let mut f = TrapFrame::new();
        f.set(0, 0xdead);
        assert_eq!(f.get(0), 0);
    }

    #[test]
    fn abi_aliases_map_to_expected_indices() {
        assert_eq!(parse_reg_name("a0"), Some(10));
        assert_eq!(parse_reg_name("a7"), Some(17));
        assert_eq!(parse_reg_name("sp"), Some(2));
        assert_eq!(parse_reg_name("t6"), Some(31));
        assert_eq!(parse_reg_name("x17"), Some(17));
        assert_eq!(parse_reg_name("x32"), None);
        assert_eq!(parse_reg_name("q1"), None);
        for x in 0..32 {
            assert_eq!(parse_reg_name(reg_name(x)), Some(x));
        }
    }

    #[test]
    fn set_ret_writes_a0_two_complement() {
        let mut f = TrapFrame::new();
        f.set_ret(-38);
        assert_eq!(f.a0(), (-38i64) as u64);
        f.set_ret(7);
        assert_eq!(f.a0(), 7);
    }
}
