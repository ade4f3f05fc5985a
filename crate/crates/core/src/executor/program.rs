//! Line-oriented playback program text format.
//!
//! ```text
//! # comment
//! @0      WRITE 0x100 42
//! @10.5   SPIKE 5 3        # address select
//! @12     READ 0x0
//! @15     CADC_SAMPLE 0
//! @20     WAIT_UNTIL
//! @20     HALT
//! ```
//!
//! Times are microseconds with at most three fractional digits and are held
//! as integer nanoseconds.

use std::fmt;

use thiserror::Error;

use crate::stpdriver::EventIfWord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    WaitUntil,
    Spike(EventIfWord),
    Write { address: u32, value: u32 },
    Read { address: u32 },
    CadcSample { row: u32 },
    Halt,
}

impl Instruction {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            Instruction::WaitUntil => "WAIT_UNTIL",
            Instruction::Spike(_) => "SPIKE",
            Instruction::Write { .. } => "WRITE",
            Instruction::Read { .. } => "READ",
            Instruction::CadcSample { .. } => "CADC_SAMPLE",
            Instruction::Halt => "HALT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimedInstruction {
    pub time_ns: u64,
    pub instruction: Instruction,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    MissingTime,
    MalformedTime(String),
    UnknownMnemonic(String),
    MissingMnemonic,
    BadArgument {
        what: &'static str,
        token: String,
    },
    ArgumentCount {
        mnemonic: &'static str,
        expected: usize,
        got: usize,
    },
    NonMonotone,
    AfterHalt,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MissingTime => write!(f, "expected `@<time_us>`"),
            Self::MalformedTime(t) => write!(f, "malformed time `{t}`"),
            Self::UnknownMnemonic(m) => write!(f, "unknown mnemonic `{m}`"),
            Self::MissingMnemonic => write!(f, "missing mnemonic"),
            Self::BadArgument { what, token } => write!(f, "invalid {what} `{token}`"),
            Self::ArgumentCount {
                mnemonic,
                expected,
                got,
            } => write!(f, "{mnemonic} takes {expected} argument(s), got {got}"),
            Self::NonMonotone => write!(f, "non-monotone timestamp"),
            Self::AfterHalt => write!(f, "instruction after HALT"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at line {line}, column {column}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

/// A validated instruction stream: times non-decreasing, nothing after HALT.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlaybackProgram {
    instructions: Vec<TimedInstruction>,
}

impl PlaybackProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn instructions(&self) -> &[TimedInstruction] {
        &self.instructions
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn halt_time(&self) -> Option<u64> {
        self.instructions
            .last()
            .filter(|i| i.instruction == Instruction::Halt)
            .map(|i| i.time_ns)
    }

    /// Appends an instruction, enforcing program order.
    pub fn push(&mut self, time_ns: u64, instruction: Instruction) -> Result<(), ParseErrorKind> {
        if let Some(last) = self.instructions.last() {
            if last.instruction == Instruction::Halt {
                return Err(ParseErrorKind::AfterHalt);
            }
            if time_ns < last.time_ns {
                return Err(ParseErrorKind::NonMonotone);
            }
        }
        self.instructions.push(TimedInstruction {
            time_ns,
            instruction,
        });
        Ok(())
    }
}

/// `ns` as microseconds with trailing fractional zeros dropped.
pub fn format_us(ns: u64) -> String {
    let (whole, frac) = (ns / 1000, ns % 1000);
    if frac == 0 {
        whole.to_string()
    } else {
        let f = format!("{frac:03}");
        format!("{whole}.{}", f.trim_end_matches('0'))
    }
}

impl fmt::Display for TimedInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "@{} {}",
            format_us(self.time_ns),
            self.instruction.mnemonic()
        )?;
        match self.instruction {
            Instruction::Spike(w) => write!(f, " {} {}", w.address, w.select),
            Instruction::Write { address, value } => write!(f, " {address:#x} {value}"),
            Instruction::Read { address } => write!(f, " {address:#x}"),
            Instruction::CadcSample { row } => write!(f, " {row}"),
            Instruction::WaitUntil | Instruction::Halt => Ok(()),
        }
    }
}

impl fmt::Display for PlaybackProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.instructions {
            writeln!(f, "{i}")?;
        }
        Ok(())
    }
}

fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push((s, &line[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, &line[s..]));
    }
    out
}

fn parse_time(tok: &str) -> Option<u64> {
    let (whole, frac) = match tok.split_once('.') {
        Some((w, f)) => (w, f),
        None => (tok, ""),
    };
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(whole) || (tok.contains('.') && !digits(frac)) || frac.len() > 3 {
        return None;
    }
    let w: u64 = whole.parse().ok()?;
    let f: u64 = if frac.is_empty() {
        0
    } else {
        format!("{frac:0<3}").parse().ok()?
    };
    w.checked_mul(1000)?.checked_add(f)
}

fn parse_u32(tok: &str) -> Option<u32> {
    match tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
        Some(hex) => u32::from_str_radix(hex, 16).ok(),
        None => tok.parse().ok(),
    }
}

pub fn parse_program(text: &str) -> Result<PlaybackProgram, ParseError> {
    let mut program = PlaybackProgram::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("");
        let toks = tokens(line);
        let Some(&(time_col, time_tok)) = toks.first() else {
            continue;
        };
        let err = |column: usize, kind| ParseError {
            line: line_no,
            column: column + 1,
            kind,
        };
        let Some(t) = time_tok.strip_prefix('@') else {
            return Err(err(time_col, ParseErrorKind::MissingTime));
        };
        let time_ns = parse_time(t)
            .ok_or_else(|| err(time_col, ParseErrorKind::MalformedTime(time_tok.into())))?;
        let Some(&(m_col, mnemonic)) = toks.get(1) else {
            return Err(err(line.len(), ParseErrorKind::MissingMnemonic));
        };
        let args = &toks[2..];
        let arity = |name: &'static str, n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(err(
                    args.get(n).map_or(line.trim_end().len(), |a| a.0),
                    ParseErrorKind::ArgumentCount {
                        mnemonic: name,
                        expected: n,
                        got: args.len(),
                    },
                ))
            }
        };
        let num = |k: usize, what: &'static str| {
            let (c, tok) = args[k];
            parse_u32(tok).ok_or_else(|| {
                err(
                    c,
                    ParseErrorKind::BadArgument {
                        what,
                        token: tok.into(),
                    },
                )
            })
        };
        let instruction = match mnemonic {
            "WAIT_UNTIL" => {
                arity("WAIT_UNTIL", 0)?;
                Instruction::WaitUntil
            }
            "HALT" => {
                arity("HALT", 0)?;
                Instruction::Halt
            }
            "SPIKE" => {
                arity("SPIKE", 2)?;
                let address = num(0, "event address")?;
                let select = num(1, "row select")?;
                let bad = |k: usize, what| {
                    err(
                        args[k].0,
                        ParseErrorKind::BadArgument {
                            what,
                            token: args[k].1.into(),
                        },
                    )
                };
                if address >= 64 {
                    return Err(bad(0, "event address"));
                }
                if select >= 32 {
                    return Err(bad(1, "row select"));
                }
                Instruction::Spike(
                    EventIfWord::new(address as u8, select as u8).expect("range checked"),
                )
            }
            "WRITE" => {
                arity("WRITE", 2)?;
                Instruction::Write {
                    address: num(0, "register address")?,
                    value: num(1, "register value")?,
                }
            }
            "READ" => {
                arity("READ", 1)?;
                Instruction::Read {
                    address: num(0, "register address")?,
                }
            }
            "CADC_SAMPLE" => {
                arity("CADC_SAMPLE", 1)?;
                Instruction::CadcSample {
                    row: num(0, "row")?,
                }
            }
            other => return Err(err(m_col, ParseErrorKind::UnknownMnemonic(other.into()))),
        };
        program
            .push(time_ns, instruction)
            .map_err(|kind| err(time_col, kind))?;
    }
    Ok(program)
}
