//! Scenario files: the human-writable text format describing a machine
//! configuration, boot parameters, guest scripts, and expected results.
//! The grammar reference lives in docs/scenario-format.md next to a corpus
//! of valid and invalid fixtures.

use crate::abi::{futex, syscall_number};
use crate::boot::BootConfig;
use crate::mem::MachineConfig;
use crate::mem_sys::AllocatorKind;
use crate::script::{script_entry, GuestScript, MicroOp, Width};
use crate::trap::parse_reg_name;
use std::collections::HashMap;
use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.msg)
    }
}

fn err<T>(line: usize, msg: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        line,
        msg: msg.into(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Expectations {
    pub exit_code: Option<i64>,
    pub stdout: Option<Vec<u8>>,
    pub stderr: Option<Vec<u8>>,
}

/// A parsed scenario. Script 0 is the main thread's program.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub machine: MachineConfig,
    pub allocator: AllocatorKind,
    pub boot: BootConfig,
    pub scripts: Vec<GuestScript>,
    pub expect: Expectations,
}

/// Strip a trailing comment that is not inside a quoted string.
fn strip_comment(line: &str) -> &str {
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match quote {
            Some(q) => {
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == q {
                    quote = None;
                }
            }
            None => match c {
                '\'' | '"' => quote = Some(c),
                '#' => return &line[..i],
                _ => {}
            },
        }
    }
    line
}

/// Split an argument list on commas, honouring quoted strings.
fn split_args(s: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for c in s.chars() {
        match quote {
            Some(q) => {
                cur.push(c);
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == q {
                    quote = None;
                }
            }
            None => match c {
                '\'' | '"' => {
                    quote = Some(c);
                    cur.push(c);
                }
                ',' => {
                    parts.push(cur.trim().to_string());
                    cur = String::new();
                }
                _ => cur.push(c),
            },
        }
    }
    if !cur.trim().is_empty() {
        parts.push(cur.trim().to_string());
    }
    parts
}

/// Decode the escapes in a quoted string body.
fn unescape(body: &str, line: usize) -> Result<Vec<u8>, ParseError> {
    let mut out = Vec::new();
    let mut chars = body.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            let mut buf = [0u8; 4];
            out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            continue;
        }
        match chars.next() {
            Some('n') => out.push(b'\n'),
            Some('t') => out.push(b'\t'),
            Some('r') => out.push(b'\r'),
            Some('0') => out.push(0),
            Some('\\') => out.push(b'\\'),
            Some('\'') => out.push(b'\''),
            Some('"') => out.push(b'"'),
            Some('x') => {
                let hi = chars.next();
                let lo = chars.next();
                match (hi, lo) {
                    (Some(h), Some(l)) => {
                        let hex: String = [h, l].iter().collect();
                        match u8::from_str_radix(&hex, 16) {
                            Ok(b) => out.push(b),
                            Err(_) => return err(line, format!("bad \\x escape: \\x{hex}")),
                        }
                    }
                    _ => return err(line, "truncated \\x escape"),
                }
            }
            Some(other) => return err(line, format!("unknown escape: \\{other}")),
            None => return err(line, "dangling backslash"),
        }
    }
    Ok(out)
}

/// Parse a quoted string literal to bytes.
fn parse_string(tok: &str, line: usize) -> Result<Vec<u8>, ParseError> {
    let bytes = tok.as_bytes();
    if bytes.len() >= 2
        && (bytes[0] == b'"' || bytes[0] == b'\'')
        && bytes[bytes.len() - 1] == bytes[0]
    {
        unescape(&tok[1..tok.len() - 1], line)
    } else {
        err(line, format!("expected a quoted string, got {tok}"))
    }
}

/// Parse bytes: either a quoted string or hex:AABBCC.
fn parse_bytes(tok: &str, line: usize) -> Result<Vec<u8>, ParseError> {
    if let Some(hex) = tok.strip_prefix("hex:") {
        if hex.is_empty() || hex.len() % 2 != 0 {
            return err(line, "hex literal needs an even number of digits");
        }
        let mut out = Vec::with_capacity(hex.len() / 2);
        for i in (0..hex.len()).step_by(2) {
            match u8::from_str_radix(&hex[i..i + 2], 16) {
                Ok(b) => out.push(b),
                Err(_) => return err(line, format!("bad hex literal: {tok}")),
            }
        }
        Ok(out)
    } else {
        parse_string(tok, line)
    }
}

/// Parse an integer: decimal (optionally negative), 0x hex, or a K/M
/// suffixed size.
fn parse_int(tok: &str, line: usize) -> Result<u64, ParseError> {
    let t = tok.trim();
    if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        return u64::from_str_radix(&hex.replace('_', ""), 16).map_err(|_| ParseError {
            line,
            msg: format!("bad hex integer: {tok}"),
        });
    }
    if let Some(neg) = t.strip_prefix('-') {
        let v: i64 = neg.parse().map_err(|_| ParseError {
            line,
            msg: format!("bad integer: {tok}"),
        })?;
        return Ok((-v) as u64);
    }
    let (digits, mult) = match t.as_bytes().last() {
        Some(b'K') | Some(b'k') => (&t[..t.len() - 1], 1024u64),
        Some(b'M') => (&t[..t.len() - 1], 1024 * 1024),
        _ => (t, 1),
    };
    digits
        .replace('_', "")
        .parse::<u64>()
        .map_err(|_| ParseError {
            line,
            msg: format!("bad integer: {tok}"),
        })
        .and_then(|v| {
            v.checked_mul(mult).ok_or_else(|| ParseError {
                line,
                msg: format!("integer overflow: {tok}"),
            })
        })
}

/// Parse a value token: integer, short string (little-endian packed),
/// sys:<name>, futex:<op>, or script:<name>.
fn parse_value(
    tok: &str,
    line: usize,
    script_names: &HashMap<String, usize>,
) -> Result<u64, ParseError> {
    if let Some(name) = tok.strip_prefix("sys:") {
        return syscall_number(name).ok_or_else(|| ParseError {
            line,
            msg: format!("unknown syscall name: {name}"),
        });
    }
    if let Some(op) = tok.strip_prefix("futex:") {
        return match op {
            "wait" => Ok(futex::FUTEX_WAIT),
            "wake" => Ok(futex::FUTEX_WAKE),
            "private" => Ok(futex::FUTEX_PRIVATE_FLAG),
            _ => err(line, format!("unknown futex op: {op}")),
        };
    }
    if let Some(name) = tok.strip_prefix("script:") {
        return script_names
            .get(name)
            .map(|i| script_entry(*i))
            .ok_or_else(|| ParseError {
                line,
                msg: format!("unknown script name: {name}"),
            });
    }
    if tok.starts_with('"') || tok.starts_with('\'') {
        let bytes = parse_string(tok, line)?;
        if bytes.len() > 8 {
            return err(
                line,
                "string value longer than 8 bytes cannot pack into a register",
            );
        }
        let mut v = 0u64;
        for (i, b) in bytes.iter().enumerate() {
            v |= (*b as u64) << (8 * i);
        }
        return Ok(v);
    }
    parse_int(tok, line)
}

fn parse_reg(tok: &str, line: usize) -> Result<usize, ParseError> {
    parse_reg_name(tok).ok_or_else(|| ParseError {
        line,
        msg: format!("unknown register: {tok}"),
    })
}

struct PendingOp {
    line: usize,
    mnemonic: String,
    args: Vec<String>,
}

struct PendingScript {
    name: String,
    ops: Vec<PendingOp>,
    labels: HashMap<String, usize>,
}

enum Section {
    None,
    Machine,
    Boot,
    Script(usize),
    Expect,
}

/// Parse and validate a scenario file.
pub fn parse_scenario(text: &str) -> Result<Scenario, ParseError> {
    let mut machine = MachineConfig::default();
    let mut allocator = AllocatorKind::FreeList;
    let mut boot = BootConfig::default();
    let mut expect = Expectations::default();
    let mut pending: Vec<PendingScript> = Vec::new();
    let mut script_names: HashMap<String, usize> = HashMap::new();

    // first pass: collect script names so clone targets can be forward refs
    for (lineno, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        let lineno = lineno + 1;
        if let Some(rest) = line.strip_prefix("[script ") {
            let name = rest.trim_end_matches(']').trim();
            if name.is_empty() {
                return err(lineno, "script section needs a name: [script <name>]");
            }
            if script_names.contains_key(name) {
                return err(lineno, format!("duplicate script name: {name}"));
            }
            script_names.insert(name.to_string(), pending.len());
            pending.push(PendingScript {
                name: name.to_string(),
                ops: Vec::new(),
                labels: HashMap::new(),
            });
        }
    }

    // second pass: everything else
    let mut section = Section::None;
    let mut script_cursor = 0usize;
    for (lineno, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        let lineno = lineno + 1;
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return err(lineno, format!("unterminated section header: {line}"));
            }
            let inner = &line[1..line.len() - 1];
            section = if inner == "machine" {
                Section::Machine
            } else if inner == "boot" {
                Section::Boot
            } else if inner == "expect" {
                Section::Expect
            } else if inner.starts_with("script ") {
                let s = Section::Script(script_cursor);
                script_cursor += 1;
                s
            } else {
                return err(lineno, format!("unknown section: [{inner}]"));
            };
            continue;
        }
        match section {
            Section::None => return err(lineno, "content before the first section header"),
            Section::Machine => {
                let (key, value) = split_key_value(line, lineno)?;
                match key {
                    "memory_size" => machine.memory_size = parse_int(value, lineno)?,
                    "heap_start" => machine.heap_start = parse_int(value, lineno)?,
                    "heap_size" => machine.heap_size = parse_int(value, lineno)?,
                    "stack_top" => machine.stack_top = parse_int(value, lineno)?,
                    "step_budget" => machine.step_budget = parse_int(value, lineno)?,
                    "allocator" => {
                        allocator = match value {
                            "freelist" => AllocatorKind::FreeList,
                            "bump" => AllocatorKind::Bump,
                            other => return err(lineno, format!("unknown allocator: {other}")),
                        }
                    }
                    other => return err(lineno, format!("unknown machine key: {other}")),
                }
            }
            Section::Boot => {
                let (key, value) = split_key_value(line, lineno)?;
                match key {
                    "program_name" => {
                        let mut bytes = parse_string(value, lineno)?;
                        bytes.push(0);
                        boot.program_name = bytes;
                    }
                    "initial_sp" => boot.initial_sp = parse_int(value, lineno)?,
                    "buffer_capacity" => boot.buffer_capacity = parse_int(value, lineno)?,
                    "entropy" => {
                        let parts = split_args(value);
                        if parts.len() != 2 {
                            return err(lineno, "entropy takes two words: entropy = a, b");
                        }
                        boot.entropy_override =
                            Some([parse_int(&parts[0], lineno)?, parse_int(&parts[1], lineno)?]);
                    }
                    other => return err(lineno, format!("unknown boot key: {other}")),
                }
            }
            Section::Expect => {
                let (key, value) = split_key_value(line, lineno)?;
                match key {
                    "exit_code" => expect.exit_code = Some(parse_int(value, lineno)? as i64),
                    "stdout" => expect.stdout = Some(parse_bytes(value, lineno)?),
                    "stderr" => expect.stderr = Some(parse_bytes(value, lineno)?),
                    other => return err(lineno, format!("unknown expect key: {other}")),
                }
            }
            Section::Script(idx) => {
                let script = &mut pending[idx];
                if let Some(label) = line.strip_suffix(':') {
                    let label = label.trim();
                    if label.is_empty() || label.contains(char::is_whitespace) {
                        return err(lineno, format!("bad label: {line}"));
                    }
                    if script
                        .labels
                        .insert(label.to_string(), script.ops.len())
                        .is_some()
                    {
                        return err(lineno, format!("duplicate label: {label}"));
                    }
                    continue;
                }
                let (mnemonic, rest) = match line.split_once(char::is_whitespace) {
                    Some((m, r)) => (m, r.trim()),
                    None => (line, ""),
                };
                script.ops.push(PendingOp {
                    line: lineno,
                    mnemonic: mnemonic.to_string(),
                    args: split_args(rest),
                });
            }
        }
    }

    if pending.is_empty() {
        return err(text.lines().count().max(1), "scenario defines no scripts");
    }

    // resolve ops now that every label and script name is known
    let mut scripts = Vec::with_capacity(pending.len());
    for p in &pending {
        let mut ops = Vec::with_capacity(p.ops.len());
        for op in &p.ops {
            ops.push(resolve_op(op, &p.labels, &script_names)?);
        }
        scripts.push(GuestScript {
            name: p.name.clone(),
            ops,
        });
    }

    let scenario = Scenario {
        machine,
        allocator,
        boot,
        scripts,
        expect,
    };
    validate(&scenario, &pending)?;
    Ok(scenario)
}

fn split_key_value(line: &str, lineno: usize) -> Result<(&str, &str), ParseError> {
    match line.split_once('=') {
        Some((k, v)) => Ok((k.trim(), v.trim())),
        None => err(lineno, format!("expected key = value, got: {line}")),
    }
}

fn resolve_op(
    op: &PendingOp,
    labels: &HashMap<String, usize>,
    script_names: &HashMap<String, usize>,
) -> Result<MicroOp, ParseError> {
    let line = op.line;
    let args = &op.args;
    let argc = args.len();
    let want = |n: usize| -> Result<(), ParseError> {
        if argc == n {
            Ok(())
        } else {
            err(
                line,
                format!("{} takes {n} argument(s), got {argc}", op.mnemonic),
            )
        }
    };
    let label = |tok: &str| -> Result<usize, ParseError> {
        labels.get(tok).copied().ok_or_else(|| ParseError {
            line,
            msg: format!("unknown label: {tok}"),
        })
    };
    let width = |tok: &str| -> Result<Width, ParseError> {
        let n = parse_int(tok, line)?;
        Width::from_bytes(n).ok_or_else(|| ParseError {
            line,
            msg: format!("width must be 4 or 8, got {tok}"),
        })
    };
    match op.mnemonic.as_str() {
        "set_reg" => {
            want(2)?;
            Ok(MicroOp::SetReg {
                reg: parse_reg(&args[0], line)?,
                value: parse_value(&args[1], line, script_names)?,
            })
        }
        "add_imm" => {
            want(2)?;
            Ok(MicroOp::AddImm {
                reg: parse_reg(&args[0], line)?,
                imm: parse_int(&args[1], line)? as i64,
            })
        }
        "load_word" | "store_word" => {
            if argc != 2 && argc != 3 {
                return err(line, format!("{} takes 2 or 3 arguments", op.mnemonic));
            }
            let reg = parse_reg(&args[0], line)?;
            let addr = parse_value(&args[1], line, script_names)?;
            let w = if argc == 3 {
                width(&args[2])?
            } else {
                Width::Eight
            };
            if op.mnemonic == "load_word" {
                Ok(MicroOp::LoadWord {
                    reg,
                    addr,
                    width: w,
                })
            } else {
                Ok(MicroOp::StoreWord {
                    reg,
                    addr,
                    width: w,
                })
            }
        }
        "syscall" => {
            want(0)?;
            Ok(MicroOp::Syscall)
        }
        "assert_reg" => {
            want(2)?;
            Ok(MicroOp::AssertReg {
                reg: parse_reg(&args[0], line)?,
                expected: parse_value(&args[1], line, script_names)?,
            })
        }
        "assert_mem" => {
            want(2)?;
            Ok(MicroOp::AssertMem {
                addr: parse_value(&args[0], line, script_names)?,
                expected: parse_bytes(&args[1], line)?,
            })
        }
        "jump" => {
            want(1)?;
            Ok(MicroOp::Jump {
                target: label(&args[0])?,
            })
        }
        "jump_if_zero" => {
            want(2)?;
            Ok(MicroOp::JumpIfZero {
                reg: parse_reg(&args[0], line)?,
                target: label(&args[1])?,
            })
        }
        "halt" => {
            want(0)?;
            Ok(MicroOp::Halt)
        }
        other => err(line, format!("unknown instruction: {other}")),
    }
}

/// Post-parse validation: the machine layout must construct, script 0 must
/// exist (guaranteed by the parser), and every static address must fall
/// inside guest memory.
fn validate(s: &Scenario, pending: &[PendingScript]) -> Result<(), ParseError> {
    if let Err(e) = crate::mem::GuestMemory::new(&s.machine) {
        return err(0, format!("invalid machine config: {e}"));
    }
    if let Err(e) = s.boot.validate() {
        return err(0, format!("invalid boot config: {e}"));
    }
    let size = s.machine.memory_size;
    for (script, p) in s.scripts.iter().zip(pending) {
        for (op, pop) in script.ops.iter().zip(&p.ops) {
            let bad = |addr: u64, len: u64| addr.checked_add(len).map(|e| e > size).unwrap_or(true);
            let oob = match op {
                MicroOp::LoadWord { addr, width, .. } | MicroOp::StoreWord { addr, width, .. } => {
                    bad(*addr, width.bytes())
                }
                MicroOp::AssertMem { addr, expected } => bad(*addr, expected.len() as u64),
                _ => false,
            };
            if oob {
                return err(pop.line, "address outside guest memory".to_string());
            }
        }
    }
    Ok(())
}
