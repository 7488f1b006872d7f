use std::fmt;

use serde::{Deserialize, Serialize};

use super::reg::{Flag, Flags, Reg, RegView, Width};

/// Condition codes shared by `Jcc`, `SETcc` and `CMOVcc`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cond {
    O,
    No,
    B,
    Ae,
    E,
    Ne,
    Be,
    A,
    S,
    Ns,
    L,
    Ge,
    Le,
    G,
}

impl Cond {
    pub const ALL: [Cond; 14] = [
        Cond::O,
        Cond::No,
        Cond::B,
        Cond::Ae,
        Cond::E,
        Cond::Ne,
        Cond::Be,
        Cond::A,
        Cond::S,
        Cond::Ns,
        Cond::L,
        Cond::Ge,
        Cond::Le,
        Cond::G,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Cond::O => "O",
            Cond::No => "NO",
            Cond::B => "B",
            Cond::Ae => "AE",
            Cond::E => "E",
            Cond::Ne => "NE",
            Cond::Be => "BE",
            Cond::A => "A",
            Cond::S => "S",
            Cond::Ns => "NS",
            Cond::L => "L",
            Cond::Ge => "GE",
            Cond::Le => "LE",
            Cond::G => "G",
        }
    }

    pub fn parse(suffix: &str) -> Option<Cond> {
        let canonical = match suffix {
            "Z" => "E",
            "NZ" => "NE",
            "C" | "NAE" => "B",
            "NC" | "NB" => "AE",
            "NA" => "BE",
            "NBE" => "A",
            "NGE" => "L",
            "NL" => "GE",
            "NG" => "LE",
            "NLE" => "G",
            other => other,
        };
        Cond::ALL.into_iter().find(|c| c.name() == canonical)
    }

    pub fn eval(self, f: &Flags) -> bool {
        match self {
            Cond::O => f.of,
            Cond::No => !f.of,
            Cond::B => f.cf,
            Cond::Ae => !f.cf,
            Cond::E => f.zf,
            Cond::Ne => !f.zf,
            Cond::Be => f.cf || f.zf,
            Cond::A => !f.cf && !f.zf,
            Cond::S => f.sf,
            Cond::Ns => !f.sf,
            Cond::L => f.sf != f.of,
            Cond::Ge => f.sf == f.of,
            Cond::Le => f.zf || f.sf != f.of,
            Cond::G => !f.zf && f.sf == f.of,
        }
    }

    /// Flags the condition depends on.
    pub fn flags(self) -> &'static [Flag] {
        match self {
            Cond::O | Cond::No => &[Flag::Of],
            Cond::B | Cond::Ae => &[Flag::Cf],
            Cond::E | Cond::Ne => &[Flag::Zf],
            Cond::Be | Cond::A => &[Flag::Cf, Flag::Zf],
            Cond::S | Cond::Ns => &[Flag::Sf],
            Cond::L | Cond::Ge => &[Flag::Sf, Flag::Of],
            Cond::Le | Cond::G => &[Flag::Zf, Flag::Sf, Flag::Of],
        }
    }
}

/// Instruction opcodes. Operand shapes are checked by the parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Add,
    Adc,
    Sub,
    Sbb,
    Cmp,
    Inc,
    Dec,
    Neg,
    And,
    Or,
    Xor,
    Not,
    Test,
    Mov,
    Movzx,
    Movsx,
    Xchg,
    Bswap,
    Xadd,
    Cmpxchg,
    Jcc(Cond),
    Jmp,
    Setcc(Cond),
    Cmovcc(Cond),
    Cmps(Width),
    Scas(Width),
    Clc,
    Stc,
    Cmc,
    Cld,
    Div,
    Mul,
    Imul,
    Cbw,
    Cwde,
    Cdqe,
    Cwd,
    Cdq,
    Cqo,
    Bt,
    Bts,
    Btr,
    Btc,
    Bsf,
    Bsr,
    Nop,
    Fence,
}

const SIMPLE_NAMES: &[(Op, &str)] = &[
    (Op::Add, "ADD"),
    (Op::Adc, "ADC"),
    (Op::Sub, "SUB"),
    (Op::Sbb, "SBB"),
    (Op::Cmp, "CMP"),
    (Op::Inc, "INC"),
    (Op::Dec, "DEC"),
    (Op::Neg, "NEG"),
    (Op::And, "AND"),
    (Op::Or, "OR"),
    (Op::Xor, "XOR"),
    (Op::Not, "NOT"),
    (Op::Test, "TEST"),
    (Op::Mov, "MOV"),
    (Op::Movzx, "MOVZX"),
    (Op::Movsx, "MOVSX"),
    (Op::Xchg, "XCHG"),
    (Op::Bswap, "BSWAP"),
    (Op::Xadd, "XADD"),
    (Op::Cmpxchg, "CMPXCHG"),
    (Op::Jmp, "JMP"),
    (Op::Clc, "CLC"),
    (Op::Stc, "STC"),
    (Op::Cmc, "CMC"),
    (Op::Cld, "CLD"),
    (Op::Div, "DIV"),
    (Op::Mul, "MUL"),
    (Op::Imul, "IMUL"),
    (Op::Cbw, "CBW"),
    (Op::Cwde, "CWDE"),
    (Op::Cdqe, "CDQE"),
    (Op::Cwd, "CWD"),
    (Op::Cdq, "CDQ"),
    (Op::Cqo, "CQO"),
    (Op::Bt, "BT"),
    (Op::Bts, "BTS"),
    (Op::Btr, "BTR"),
    (Op::Btc, "BTC"),
    (Op::Bsf, "BSF"),
    (Op::Bsr, "BSR"),
    (Op::Nop, "NOP"),
    (Op::Fence, "FENCE"),
];

impl Op {
    pub fn parse(mnemonic: &str) -> Option<Op> {
        let m = mnemonic.to_ascii_uppercase();
        if let Some((op, _)) = SIMPLE_NAMES.iter().find(|(_, n)| *n == m) {
            return Some(*op);
        }
        // LFENCE is accepted as a synonym.
        if m == "LFENCE" {
            return Some(Op::Fence);
        }
        for (prefix, make) in [
            ("CMOV", Op::Cmovcc as fn(Cond) -> Op),
            ("SET", Op::Setcc),
            ("J", Op::Jcc),
        ] {
            if let Some(rest) = m.strip_prefix(prefix) {
                if let Some(c) = Cond::parse(rest) {
                    return Some(make(c));
                }
            }
        }
        for (prefix, make) in [("CMPS", Op::Cmps as fn(Width) -> Op), ("SCAS", Op::Scas)] {
            if let Some(rest) = m.strip_prefix(prefix) {
                let w = match rest {
                    "B" => Width::W8,
                    "W" => Width::W16,
                    "D" => Width::W32,
                    "Q" => Width::W64,
                    _ => continue,
                };
                return Some(make(w));
            }
        }
        None
    }

    pub fn mnemonic(self) -> String {
        match self {
            Op::Jcc(c) => format!("J{}", c.name()),
            Op::Setcc(c) => format!("SET{}", c.name()),
            Op::Cmovcc(c) => format!("CMOV{}", c.name()),
            Op::Cmps(w) => format!("CMPS{}", w.suffix()),
            Op::Scas(w) => format!("SCAS{}", w.suffix()),
            op => SIMPLE_NAMES
                .iter()
                .find(|(o, _)| *o == op)
                .map(|(_, n)| n.to_string())
                .expect("every simple op has a name"),
        }
    }

    pub fn is_branch(self) -> bool {
        matches!(self, Op::Jcc(_) | Op::Jmp)
    }

    pub fn is_string(self) -> bool {
        matches!(self, Op::Cmps(_) | Op::Scas(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Prefix {
    #[default]
    None,
    Lock,
    Repe,
    Repne,
}

impl Prefix {
    pub fn parse(word: &str) -> Option<Prefix> {
        match word.to_ascii_uppercase().as_str() {
            "LOCK" => Some(Prefix::Lock),
            "REPE" | "REPZ" | "REP" => Some(Prefix::Repe),
            "REPNE" | "REPNZ" => Some(Prefix::Repne),
            _ => None,
        }
    }

    pub fn name(self) -> Option<&'static str> {
        match self {
            Prefix::None => None,
            Prefix::Lock => Some("LOCK"),
            Prefix::Repe => Some("REPE"),
            Prefix::Repne => Some("REPNE"),
        }
    }

    pub fn is_rep(self) -> bool {
        matches!(self, Prefix::Repe | Prefix::Repne)
    }
}

/// `[base + index + disp]` with an access width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemRef {
    pub base: Option<Reg>,
    pub index: Option<Reg>,
    pub disp: i64,
    pub width: Width,
}

impl MemRef {
    pub fn base(reg: Reg, width: Width) -> MemRef {
        MemRef {
            base: Some(reg),
            index: None,
            disp: 0,
            width,
        }
    }

    pub fn regs(&self) -> impl Iterator<Item = Reg> {
        self.base.into_iter().chain(self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Target {
    pub label: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Reg(RegView),
    Imm(i64),
    Mem(MemRef),
    Label(Target),
}

impl Operand {
    pub fn width(&self) -> Option<Width> {
        match self {
            Operand::Reg(v) => Some(v.width),
            Operand::Mem(m) => Some(m.width),
            _ => None,
        }
    }

    pub fn as_mem(&self) -> Option<&MemRef> {
        match self {
            Operand::Mem(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_reg(&self) -> Option<RegView> {
        match self {
            Operand::Reg(v) => Some(*v),
            _ => None,
        }
    }
}

/// Instruction subsets used to configure generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Base,
    Cond,
    Strn,
    Dmul,
    Flag,
    Lock,
    Atom,
    Dxfr,
    Setc,
    Nop,
    Logi,
    Conv,
    Cmov,
    Bit,
}

impl Category {
    pub const ALL: [Category; 14] = [
        Category::Base,
        Category::Cond,
        Category::Strn,
        Category::Dmul,
        Category::Flag,
        Category::Lock,
        Category::Atom,
        Category::Dxfr,
        Category::Setc,
        Category::Nop,
        Category::Logi,
        Category::Conv,
        Category::Cmov,
        Category::Bit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Base => "base",
            Category::Cond => "cond",
            Category::Strn => "strn",
            Category::Dmul => "dmul",
            Category::Flag => "flag",
            Category::Lock => "lock",
            Category::Atom => "atom",
            Category::Dxfr => "dxfr",
            Category::Setc => "setc",
            Category::Nop => "nop",
            Category::Logi => "logi",
            Category::Conv => "conv",
            Category::Cmov => "cmov",
            Category::Bit => "bit",
        }
    }

    /// Accepts the short names and the long `BASE-*` spellings.
    pub fn parse(name: &str) -> Option<Category> {
        let lower = name.trim().to_ascii_lowercase();
        let mapped = match lower.as_str() {
            "base-binary" => "base",
            "base-stringop" => "strn",
            "base-cond_br" | "base-condbr" => "cond",
            "base-nop" => "nop",
            "base-logical" => "logi",
            "base-flagop" => "flag",
            "base-setcc" => "setc",
            "base-cmov" => "cmov",
            "base-bit" | "base-bitbyte" => "bit",
            "base-conver" | "base-convert" => "conv",
            "base-dataxfer" => "dxfr",
            "base-arith-mul-div" | "base-muldiv" => "dmul",
            "base-lock" => "lock",
            "base-atomic" => "atom",
            other => other,
        };
        Category::ALL.into_iter().find(|c| c.name() == mapped)
    }

    /// Whether an instruction belongs to this subset.
    pub fn contains(self, instr: &Instruction) -> bool {
        let op = instr.op;
        let locked = instr.prefix == Prefix::Lock;
        match self {
            Category::Base => {
                !locked
                    && matches!(
                        op,
                        Op::Add | Op::Adc | Op::Sub | Op::Sbb | Op::Cmp | Op::Inc | Op::Dec | Op::Neg
                    )
            }
            Category::Cond => op.is_branch(),
            Category::Strn => {
                op.is_string() || matches!(op, Op::Clc | Op::Stc | Op::Cmc | Op::Cld)
            }
            Category::Dmul => matches!(op, Op::Div | Op::Mul | Op::Imul),
            Category::Flag => matches!(op, Op::Clc | Op::Stc | Op::Cmc | Op::Cld),
            Category::Lock => locked && !matches!(op, Op::Xadd | Op::Cmpxchg),
            Category::Atom => matches!(op, Op::Xadd | Op::Cmpxchg),
            Category::Dxfr => matches!(op, Op::Mov | Op::Movzx | Op::Movsx | Op::Xchg | Op::Bswap),
            Category::Setc => matches!(op, Op::Setcc(_)),
            Category::Nop => op == Op::Nop,
            Category::Logi => {
                !locked && matches!(op, Op::And | Op::Or | Op::Xor | Op::Not | Op::Test)
            }
            Category::Conv => {
                matches!(op, Op::Cbw | Op::Cwde | Op::Cdqe | Op::Cwd | Op::Cdq | Op::Cqo)
            }
            Category::Cmov => matches!(op, Op::Cmovcc(_)),
            Category::Bit => {
                !locked && matches!(op, Op::Bt | Op::Bts | Op::Btr | Op::Btc | Op::Bsf | Op::Bsr)
            }
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub op: Op,
    pub prefix: Prefix,
    pub operands: Vec<Operand>,
    pub instrumentation: bool,
}

impl Instruction {
    pub fn new(op: Op, operands: Vec<Operand>) -> Instruction {
        Instruction {
            op,
            prefix: Prefix::None,
            operands,
            instrumentation: false,
        }
    }

    pub fn with_prefix(mut self, prefix: Prefix) -> Instruction {
        self.prefix = prefix;
        self
    }

    pub fn instrumented(mut self) -> Instruction {
        self.instrumentation = true;
        self
    }

    pub fn fence() -> Instruction {
        Instruction::new(Op::Fence, vec![])
    }

    /// Primary subset tag. `None` for `FENCE`.
    pub fn category(&self) -> Option<Category> {
        if self.op == Op::Fence {
            return None;
        }
        // Flag ops are listed under both strn and flag; report the narrower one.
        [
            Category::Base,
            Category::Atom,
            Category::Lock,
            Category::Cond,
            Category::Flag,
            Category::Strn,
            Category::Dmul,
            Category::Dxfr,
            Category::Setc,
            Category::Nop,
            Category::Logi,
            Category::Conv,
            Category::Cmov,
            Category::Bit,
        ]
        .into_iter()
        .find(|c| c.contains(self))
    }

    pub fn mem_operand(&self) -> Option<&MemRef> {
        self.operands.iter().find_map(Operand::as_mem)
    }

    /// Whether the instruction touches memory (explicit operand or string op).
    pub fn accesses_memory(&self) -> bool {
        self.op.is_string() || self.mem_operand().is_some()
    }

    pub fn target(&self) -> Option<&Target> {
        self.operands.iter().find_map(|o| match o {
            Operand::Label(t) => Some(t),
            _ => None,
        })
    }

    pub fn target_mut(&mut self) -> Option<&mut Target> {
        self.operands.iter_mut().find_map(|o| match o {
            Operand::Label(t) => Some(t),
            _ => None,
        })
    }

    fn needs_size(&self) -> bool {
        matches!(self.op, Op::Movzx | Op::Movsx)
            || !self.operands.iter().any(|o| matches!(o, Operand::Reg(_)))
    }
}

fn fmt_imm(v: i64) -> String {
    if (-4096..=4096).contains(&v) {
        v.to_string()
    } else if v < 0 {
        format!("-0x{:x}", v.unsigned_abs())
    } else {
        format!("0x{:x}", v)
    }
}

fn fmt_mem(m: &MemRef, with_size: bool) -> String {
    let mut s = String::new();
    if with_size {
        s.push_str(m.width.ptr_name());
        s.push_str(" PTR ");
    }
    s.push('[');
    let mut first = true;
    for r in m.regs() {
        if !first {
            s.push_str(" + ");
        }
        s.push_str(r.name());
        first = false;
    }
    if m.disp != 0 || first {
        if first {
            s.push_str(&fmt_imm(m.disp));
        } else if m.disp < 0 {
            s.push_str(" - ");
            s.push_str(&fmt_imm(-m.disp));
        } else {
            s.push_str(" + ");
            s.push_str(&fmt_imm(m.disp));
        }
    }
    s.push(']');
    s
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = self.prefix.name() {
            write!(f, "{} ", p)?;
        }
        f.write_str(&self.op.mnemonic())?;
        let sized = self.needs_size();
        for (i, o) in self.operands.iter().enumerate() {
            f.write_str(if i == 0 { " " } else { ", " })?;
            match o {
                Operand::Reg(v) => f.write_str(v.name())?,
                Operand::Imm(v) => f.write_str(&fmt_imm(*v))?,
                Operand::Mem(m) => f.write_str(&fmt_mem(m, sized))?,
                Operand::Label(t) => f.write_str(&t.label)?,
            }
        }
        if self.instrumentation {
            f.write_str(" # instrumentation")?;
        }
        Ok(())
    }
}
