//! Line-oriented assembly reader.

use std::collections::BTreeMap;

use thiserror::Error;

use super::instr::{Instruction, MemRef, Op, Operand, Prefix, Target};
use super::program::{Program, ProgramError};
use super::reg::{RegView, Width};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}: unknown mnemonic {mnemonic}")]
    UnknownMnemonic { line: usize, mnemonic: String },
    #[error("line {line}: unresolved label {label}")]
    UnresolvedLabel { line: usize, label: String },
    #[error("line {line}: {mnemonic} expects {expected} operand(s), found {found}")]
    OperandArity {
        line: usize,
        mnemonic: String,
        expected: String,
        found: usize,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: branch to {label} does not go forward")]
    BackwardBranch { line: usize, label: String },
    #[error("line {line}: duplicate label {label}")]
    DuplicateLabel { line: usize, label: String },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::UnknownMnemonic { line, .. }
            | ParseError::UnresolvedLabel { line, .. }
            | ParseError::OperandArity { line, .. }
            | ParseError::Syntax { line, .. }
            | ParseError::BackwardBranch { line, .. }
            | ParseError::DuplicateLabel { line, .. } => *line,
        }
    }
}

/// Parses assembly text. Line numbers in errors are 1-based.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut instrs = Vec::new();
    let mut lines = Vec::new();
    let mut labels = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let (code, comment) = match raw.find('#') {
            Some(p) => (&raw[..p], Some(raw[p + 1..].trim())),
            None => (raw, None),
        };
        let mut code = code.trim();
        while let Some(colon) = label_end(code) {
            let name = code[..colon].trim();
            if labels.insert(name.to_string(), instrs.len()).is_some() {
                return Err(ParseError::DuplicateLabel {
                    line,
                    label: name.to_string(),
                });
            }
            code = code[colon + 1..].trim();
        }
        if code.is_empty() {
            continue;
        }
        let mut instr = parse_instruction(code, line)?;
        instr.instrumentation = comment.is_some_and(|c| c.eq_ignore_ascii_case("instrumentation"));
        instrs.push(instr);
        lines.push(line);
    }
    Program::new(instrs, labels).map_err(|e| match e {
        ProgramError::UnresolvedLabel { index, label } => ParseError::UnresolvedLabel {
            line: lines[index],
            label,
        },
        ProgramError::BackwardBranch { index, label } => ParseError::BackwardBranch {
            line: lines[index],
            label,
        },
        ProgramError::LabelOutOfRange { label } => ParseError::Syntax {
            line: 0,
            message: format!("label {} out of range", label),
        },
    })
}

/// Position of the colon ending a leading label, if the line starts with one.
fn label_end(code: &str) -> Option<usize> {
    let colon = code.find(':')?;
    let name = code[..colon].trim();
    let valid = !name.is_empty()
        && !name.contains(char::is_whitespace)
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.');
    valid.then_some(colon)
}

/// Parses one instruction without label or comment.
pub fn parse_instruction(code: &str, line: usize) -> Result<Instruction, ParseError> {
    let syntax = |message: String| ParseError::Syntax { line, message };
    let mut rest = code.trim();
    let mut prefix = Prefix::None;
    let mut mnemonic;
    loop {
        let split = rest.find(char::is_whitespace).unwrap_or(rest.len());
        mnemonic = &rest[..split];
        rest = rest[split..].trim_start();
        match Prefix::parse(mnemonic) {
            Some(p) if prefix == Prefix::None && !rest.is_empty() => prefix = p,
            _ => break,
        }
    }
    let op = Op::parse(mnemonic).ok_or_else(|| ParseError::UnknownMnemonic {
        line,
        mnemonic: mnemonic.to_string(),
    })?;
    let mut raw = Vec::new();
    if !rest.is_empty() {
        for part in rest.split(',') {
            raw.push(parse_operand(part.trim()).map_err(syntax)?);
        }
    }
    let operands = resolve_widths(op, raw).map_err(syntax)?;
    let instr = Instruction {
        op,
        prefix,
        operands,
        instrumentation: false,
    };
    check_shape(&instr).map_err(|e| match e {
        ShapeError::Arity(expected) => ParseError::OperandArity {
            line,
            mnemonic: mnemonic.to_ascii_uppercase(),
            expected: expected.to_string(),
            found: instr.operands.len(),
        },
        ShapeError::Invalid(message) => ParseError::Syntax { line, message },
    })?;
    Ok(instr)
}

enum RawOperand {
    Reg(RegView),
    Imm(i64),
    Mem {
        base: Option<super::reg::Reg>,
        index: Option<super::reg::Reg>,
        disp: i64,
        width: Option<Width>,
    },
    Label(String),
}

fn parse_imm(text: &str) -> Option<i64> {
    let (neg, body) = match text.strip_prefix('-') {
        Some(b) => (true, b.trim()),
        None => (false, text.strip_prefix('+').unwrap_or(text).trim()),
    };
    let lower = body.to_ascii_lowercase();
    let magnitude = if let Some(h) = lower.strip_prefix("0x") {
        u64::from_str_radix(&h.replace('_', ""), 16).ok()?
    } else if let Some(b) = lower.strip_prefix("0b") {
        u64::from_str_radix(&b.replace('_', ""), 2).ok()?
    } else {
        lower.replace('_', "").parse::<u64>().ok()?
    };
    let v = magnitude as i64;
    Some(if neg { v.wrapping_neg() } else { v })
}

fn parse_operand(text: &str) -> Result<RawOperand, String> {
    if text.is_empty() {
        return Err("empty operand".into());
    }
    let upper = text.to_ascii_uppercase();
    let mut width = None;
    let mut body = upper.as_str();
    for w in Width::ALL {
        if let Some(rest) = body.strip_prefix(w.ptr_name()) {
            if rest.starts_with(char::is_whitespace) {
                let rest = rest.trim_start();
                body = rest.strip_prefix("PTR").map(str::trim_start).unwrap_or(rest);
                width = Some(w);
                break;
            }
        }
    }
    if body.starts_with('[') {
        let inner = body
            .strip_prefix('[')
            .and_then(|b| b.strip_suffix(']'))
            .ok_or_else(|| format!("malformed memory operand {}", text))?;
        return parse_address(inner, width);
    }
    if width.is_some() {
        return Err(format!("size prefix without memory operand: {}", text));
    }
    if let Some(v) = RegView::parse(body) {
        return Ok(RawOperand::Reg(v));
    }
    if let Some(v) = parse_imm(body) {
        return Ok(RawOperand::Imm(v));
    }
    let is_ident = text
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.');
    if is_ident && !text.starts_with(|c: char| c.is_ascii_digit()) {
        return Ok(RawOperand::Label(text.to_string()));
    }
    Err(format!("cannot parse operand {}", text))
}

fn parse_address(inner: &str, width: Option<Width>) -> Result<RawOperand, String> {
    let mut regs = Vec::new();
    let mut disp: i64 = 0;
    let mut sign = 1i64;
    let mut term = String::new();
    let mut flush = |term: &mut String, sign: i64| -> Result<(), String> {
        let t = term.trim();
        if t.is_empty() {
            return Err(format!("empty term in [{}]", inner));
        }
        if let Some(v) = RegView::parse(t) {
            if v.width != Width::W64 || sign < 0 {
                return Err(format!("invalid address register {}", t));
            }
            regs.push(v.reg);
        } else if let Some(v) = parse_imm(t) {
            disp = disp.wrapping_add(v.wrapping_mul(sign));
        } else {
            return Err(format!("invalid address term {}", t));
        }
        term.clear();
        Ok(())
    };
    for c in inner.chars() {
        match c {
            '+' | '-' if !term.trim().is_empty() => {
                flush(&mut term, sign)?;
                sign = if c == '-' { -1 } else { 1 };
            }
            '-' => sign = -sign,
            '+' => {}
            _ => term.push(c),
        }
    }
    flush(&mut term, sign)?;
    if regs.len() > 2 {
        return Err(format!("too many address registers in [{}]", inner));
    }
    Ok(RawOperand::Mem {
        base: regs.first().copied(),
        index: regs.get(1).copied(),
        disp,
        width,
    })
}

/// Fixes memory operand widths from explicit sizes or sibling registers.
fn resolve_widths(op: Op, raw: Vec<RawOperand>) -> Result<Vec<Operand>, String> {
    let reg_width = raw.iter().find_map(|o| match o {
        RawOperand::Reg(v) => Some(v.width),
        _ => None,
    });
    let implied = match op {
        Op::Setcc(_) => Some(Width::W8),
        Op::Div | Op::Mul if raw.len() == 1 => Some(Width::W64),
        Op::Imul if raw.len() == 1 => Some(Width::W64),
        Op::Movzx | Op::Movsx => None,
        _ => reg_width,
    };
    raw.into_iter()
        .map(|o| match o {
            RawOperand::Reg(v) => Ok(Operand::Reg(v)),
            RawOperand::Imm(v) => Ok(Operand::Imm(v)),
            RawOperand::Label(l) => Ok(Operand::Label(Target { label: l, index: 0 })),
            RawOperand::Mem {
                base,
                index,
                disp,
                width,
            } => {
                let width = width
                    .or(implied)
                    .ok_or_else(|| "memory operand size cannot be inferred".to_string())?;
                Ok(Operand::Mem(MemRef {
                    base,
                    index,
                    disp,
                    width,
                }))
            }
        })
        .collect()
}

pub(crate) enum ShapeError {
    Arity(&'static str),
    Invalid(String),
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    R,
    M,
    I,
    L,
}

fn kind(o: &Operand) -> Kind {
    match o {
        Operand::Reg(_) => Kind::R,
        Operand::Mem(_) => Kind::M,
        Operand::Imm(_) => Kind::I,
        Operand::Label(_) => Kind::L,
    }
}

/// Checks operand count, kinds, widths and prefix legality.
pub(crate) fn check_shape(instr: &Instruction) -> Result<(), ShapeError> {
    use Kind::*;
    let ops = &instr.operands;
    let kinds: Vec<Kind> = ops.iter().map(kind).collect();
    let invalid = |m: &str| Err(ShapeError::Invalid(format!("{}: {}", instr.op.mnemonic(), m)));
    let one_of = |allowed: &[&[Kind]], arity: &'static str| -> Result<(), ShapeError> {
        if !allowed.iter().any(|a| a.len() == kinds.len()) {
            return Err(ShapeError::Arity(arity));
        }
        if allowed.iter().any(|a| *a == kinds.as_slice()) {
            Ok(())
        } else {
            Err(ShapeError::Invalid(format!(
                "{}: invalid operand kinds",
                instr.op.mnemonic()
            )))
        }
    };
    let widths: Vec<Width> = ops.iter().filter_map(Operand::width).collect();
    let same_width = widths.windows(2).all(|w| w[0] == w[1]);
    let at_least_16 = widths.iter().all(|w| *w != Width::W8);

    match instr.op {
        Op::Add | Op::Adc | Op::Sub | Op::Sbb | Op::Cmp | Op::And | Op::Or | Op::Xor | Op::Test
        | Op::Mov => {
            one_of(&[&[R, R], &[R, I], &[R, M], &[M, R], &[M, I]], "2")?;
        }
        Op::Inc | Op::Dec | Op::Neg | Op::Not => one_of(&[&[R], &[M]], "1")?,
        Op::Movzx | Op::Movsx => {
            one_of(&[&[R, R], &[R, M]], "2")?;
            let (d, s) = (widths[0], widths[1]);
            if d == Width::W8 || s.bytes() >= d.bytes() || s == Width::W32 || s == Width::W64 {
                return invalid("source must be narrower 8/16-bit");
            }
        }
        Op::Xchg => one_of(&[&[R, R], &[R, M], &[M, R]], "2")?,
        Op::Bswap => {
            one_of(&[&[R]], "1")?;
            if widths[0].bytes() < 4 {
                return invalid("operand must be 32 or 64-bit");
            }
        }
        Op::Xadd | Op::Cmpxchg => one_of(&[&[R, R], &[M, R]], "2")?,
        Op::Jcc(_) | Op::Jmp => one_of(&[&[L]], "1")?,
        Op::Setcc(_) => {
            one_of(&[&[R], &[M]], "1")?;
            if widths[0] != Width::W8 {
                return invalid("operand must be 8-bit");
            }
        }
        Op::Cmovcc(_) | Op::Bsf | Op::Bsr => {
            one_of(&[&[R, R], &[R, M]], "2")?;
            if !at_least_16 {
                return invalid("8-bit operands not allowed");
            }
        }
        Op::Bt | Op::Bts | Op::Btr | Op::Btc => {
            one_of(&[&[R, R], &[R, I], &[M, R], &[M, I]], "2")?;
            if !at_least_16 {
                return invalid("8-bit operands not allowed");
            }
        }
        Op::Div | Op::Mul => {
            one_of(&[&[R], &[M]], "1")?;
            if widths[0] != Width::W64 {
                return invalid("only the 64-bit form is supported");
            }
        }
        Op::Imul => {
            one_of(&[&[R], &[M], &[R, R], &[R, M]], "1 or 2")?;
            if ops.len() == 1 && widths[0] != Width::W64 {
                return invalid("only the 64-bit one-operand form is supported");
            }
            if !at_least_16 {
                return invalid("8-bit operands not allowed");
            }
        }
        Op::Cmps(_)
        | Op::Scas(_)
        | Op::Clc
        | Op::Stc
        | Op::Cmc
        | Op::Cld
        | Op::Cbw
        | Op::Cwde
        | Op::Cdqe
        | Op::Cwd
        | Op::Cdq
        | Op::Cqo
        | Op::Nop
        | Op::Fence => one_of(&[&[]], "0")?,
    }
    if !matches!(instr.op, Op::Movzx | Op::Movsx) && !same_width {
        return invalid("operand widths differ");
    }
    match instr.prefix {
        Prefix::None => {}
        Prefix::Lock => {
            let lockable = matches!(
                instr.op,
                Op::Add
                    | Op::Adc
                    | Op::Sub
                    | Op::Sbb
                    | Op::Inc
                    | Op::Dec
                    | Op::Neg
                    | Op::Not
                    | Op::And
                    | Op::Or
                    | Op::Xor
                    | Op::Bts
                    | Op::Btr
                    | Op::Btc
                    | Op::Xadd
                    | Op::Cmpxchg
            );
            if !lockable || kinds.first() != Some(&M) {
                return invalid("LOCK requires a memory destination");
            }
        }
        Prefix::Repe | Prefix::Repne => {
            if !instr.op.is_string() {
                return invalid("REP prefixes apply to string instructions only");
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::reg::Reg;

    #[test]
    fn immediates() {
        assert_eq!(parse_imm("0x10"), Some(16));
        assert_eq!(parse_imm("-0x10"), Some(-16));
        assert_eq!(parse_imm("0b1111111111111"), Some(0x1FFF));
        assert_eq!(parse_imm("-122"), Some(-122));
        assert_eq!(parse_imm("0xFFFFFFFFFFFFFFFF"), Some(-1));
        assert_eq!(parse_imm("RA"), None);
    }

    #[test]
    fn memory_operands() {
        let i = parse_instruction("MOV RA, [RB + RC - 8]", 1).unwrap();
        assert_eq!(
            i.operands[1],
            Operand::Mem(MemRef {
                base: Some(Reg::Rb),
                index: Some(Reg::Rc),
                disp: -8,
                width: Width::W64
            })
        );
        let i = parse_instruction("SBB byte ptr [RB], 111", 1).unwrap();
        assert_eq!(i.mem_operand().unwrap().width, Width::W8);
        assert!(parse_instruction("INC [RB]", 1).is_err());
        let i = parse_instruction("MOVZX EAX, WORD PTR [RB]", 1).unwrap();
        assert_eq!(i.mem_operand().unwrap().width, Width::W16);
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(
            parse_instruction("ADD RA", 3),
            Err(ParseError::OperandArity { line: 3, .. })
        ));
        assert!(matches!(
            parse_instruction("ADD RA, EBX", 1),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            parse_instruction("LOCK ADD RA, 1", 1),
            Err(ParseError::Syntax { .. })
        ));
        assert!(parse_instruction("LOCK ADD QWORD PTR [RB], 1", 1).is_ok());
        assert!(parse_instruction("REPNE SCASD", 1).is_ok());
        assert!(parse_instruction("REPNE ADD RA, 1", 1).is_err());
    }

    #[test]
    fn label_on_same_line() {
        let p = parse_program("JMP .a\n.a: NOP\n.b:").unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.labels()[".a"], 1);
        assert_eq!(p.labels()[".b"], 2);
    }

    #[test]
    fn errors_carry_lines() {
        assert_eq!(
            parse_program("NOP\nJMP .x").unwrap_err(),
            ParseError::UnresolvedLabel {
                line: 2,
                label: ".x".into()
            }
        );
        assert!(matches!(
            parse_program(".a:\nNOP\nJE .a"),
            Err(ParseError::BackwardBranch { line: 3, .. })
        ));
        assert!(matches!(
            parse_program(".a:\n.a:"),
            Err(ParseError::DuplicateLabel { line: 2, .. })
        ));
    }
}
