//! Architectural semantics shared by the contract model and the simulator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::instr::{Instruction, MemRef, Op, Operand, Prefix};
use super::program::Program;
use super::reg::{Flags, Reg, RegView, Width};
use super::state::{ArchState, PAGE_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchEvent {
    MemRead { offset: u16, size: u8 },
    MemWrite { offset: u16, size: u8 },
    Branch { taken: bool, target: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("divide fault at instruction {pc}")]
    DivideFault { pc: usize },
    #[error("memory access to 0x{address:x} outside the sandbox at instruction {pc}")]
    MemoryFault { pc: usize, address: u64 },
}

/// Knobs used by the simulator to perturb a single step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepOptions {
    /// Caps REP iterations; the loop stops early with `truncated` set.
    pub max_iterations: Option<u64>,
    /// Replaces the value returned by the first explicit memory load.
    pub load_override: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepInfo {
    /// String iterations executed (0 for other instructions).
    pub iterations: u64,
    pub truncated: bool,
    /// A REP loop stopped because the count ran out while its condition
    /// still asked for more (or it ran zero times).
    pub exhausted: bool,
}

/// Executes `instr` on `state`, appending events. On error the state is
/// left partially updated and must be discarded.
pub fn step(
    state: &mut ArchState,
    instr: &Instruction,
    opts: StepOptions,
    events: &mut Vec<ArchEvent>,
) -> Result<StepInfo, ExecError> {
    let mut m = Machine {
        s: state,
        events,
        load_override: opts.load_override,
    };
    let pc = m.s.pc;
    let mut info = StepInfo::default();
    let mut next = pc + 1;
    let ops = &instr.operands;
    match instr.op {
        Op::Add | Op::Adc | Op::Sub | Op::Sbb | Op::Cmp => {
            let w = width(&ops[0]);
            let a = m.read(&ops[0], w)?;
            let b = m.read(&ops[1], w)?;
            let cin = m.s.flags.cf as u64;
            let (r, f) = match instr.op {
                Op::Add => add(a, b, 0, w),
                Op::Adc => add(a, b, cin, w),
                Op::Sbb => sub(a, b, cin, w),
                _ => sub(a, b, 0, w),
            };
            m.s.flags = f;
            if instr.op != Op::Cmp {
                m.write(&ops[0], r)?;
            }
        }
        Op::Inc | Op::Dec => {
            let w = width(&ops[0]);
            let a = m.read(&ops[0], w)?;
            let (r, mut f) = if instr.op == Op::Inc {
                add(a, 1, 0, w)
            } else {
                sub(a, 1, 0, w)
            };
            f.cf = m.s.flags.cf;
            m.s.flags = f;
            m.write(&ops[0], r)?;
        }
        Op::Neg => {
            let w = width(&ops[0]);
            let a = m.read(&ops[0], w)?;
            let (r, f) = sub(0, a, 0, w);
            m.s.flags = f;
            m.write(&ops[0], r)?;
        }
        Op::And | Op::Or | Op::Xor | Op::Test => {
            let w = width(&ops[0]);
            let a = m.read(&ops[0], w)?;
            let b = m.read(&ops[1], w)?;
            let r = match instr.op {
                Op::Or => a | b,
                Op::Xor => a ^ b,
                _ => a & b,
            };
            m.s.flags = logic(r, w);
            if instr.op != Op::Test {
                m.write(&ops[0], r)?;
            }
        }
        Op::Not => {
            let w = width(&ops[0]);
            let a = m.read(&ops[0], w)?;
            m.write(&ops[0], !a & w.mask())?;
        }
        Op::Mov => {
            let w = width(&ops[0]);
            let v = m.read(&ops[1], w)?;
            m.write(&ops[0], v)?;
        }
        Op::Movzx | Op::Movsx => {
            let sw = width(&ops[1]);
            let dw = width(&ops[0]);
            let v = m.read(&ops[1], sw)?;
            let v = if instr.op == Op::Movsx {
                sw.sign_extend(v) & dw.mask()
            } else {
                v
            };
            m.write(&ops[0], v)?;
        }
        Op::Xchg => {
            let w = width(&ops[0]);
            let a = m.read(&ops[0], w)?;
            let b = m.read(&ops[1], w)?;
            m.write_both((&ops[1], a), (&ops[0], b))?;
        }
        Op::Bswap => {
            let w = width(&ops[0]);
            let a = m.read(&ops[0], w)?;
            let r = if w == Width::W32 {
                (a as u32).swap_bytes() as u64
            } else {
                a.swap_bytes()
            };
            m.write(&ops[0], r)?;
        }
        Op::Xadd => {
            let w = width(&ops[0]);
            let d = m.read(&ops[0], w)?;
            let s = m.read(&ops[1], w)?;
            let (r, f) = add(d, s, 0, w);
            m.s.flags = f;
            m.write_both((&ops[1], d), (&ops[0], r))?;
        }
        Op::Cmpxchg => {
            let w = width(&ops[0]);
            let acc = Operand::Reg(Reg::Ra.view(w));
            let d = m.read(&ops[0], w)?;
            let s = m.read(&ops[1], w)?;
            let a = m.read(&acc, w)?;
            let (_, f) = sub(a, d, 0, w);
            m.s.flags = f;
            if a == d {
                m.write(&ops[0], s)?;
            } else {
                if matches!(ops[0], Operand::Mem(_)) {
                    m.write(&ops[0], d)?;
                }
                m.write(&acc, d)?;
            }
        }
        Op::Jcc(_) | Op::Jmp => {
            let target = instr.target().expect("branch has a target").index;
            let taken = match instr.op {
                Op::Jcc(c) => c.eval(&m.s.flags),
                _ => true,
            };
            m.events.push(ArchEvent::Branch { taken, target });
            if taken {
                next = target;
            }
        }
        Op::Setcc(c) => {
            let v = c.eval(&m.s.flags) as u64;
            m.write(&ops[0], v)?;
        }
        Op::Cmovcc(c) => {
            let w = width(&ops[0]);
            let v = m.read(&ops[1], w)?;
            if c.eval(&m.s.flags) {
                m.write(&ops[0], v)?;
            } else if w == Width::W32 {
                let old = m.read(&ops[0], w)?;
                m.write(&ops[0], old)?;
            }
        }
        Op::Cmps(w) | Op::Scas(w) => {
            info = m.string_op(instr, w, opts.max_iterations)?;
        }
        Op::Clc => m.s.flags.cf = false,
        Op::Stc => m.s.flags.cf = true,
        Op::Cmc => m.s.flags.cf = !m.s.flags.cf,
        Op::Cld | Op::Nop | Op::Fence => {}
        Op::Div => {
            let d = m.read(&ops[0], Width::W64)?;
            let dividend = ((m.s.reg(Reg::Rd) as u128) << 64) | m.s.reg(Reg::Ra) as u128;
            if d == 0 {
                return Err(ExecError::DivideFault { pc });
            }
            let q = dividend / d as u128;
            if q > u64::MAX as u128 {
                return Err(ExecError::DivideFault { pc });
            }
            m.s.set_reg(Reg::Ra, q as u64);
            m.s.set_reg(Reg::Rd, (dividend % d as u128) as u64);
        }
        Op::Mul => {
            let s = m.read(&ops[0], Width::W64)?;
            let p = m.s.reg(Reg::Ra) as u128 * s as u128;
            let (lo, hi) = (p as u64, (p >> 64) as u64);
            m.s.set_reg(Reg::Ra, lo);
            m.s.set_reg(Reg::Rd, hi);
            let over = hi != 0;
            m.s.flags = Flags {
                zf: lo == 0,
                sf: lo >> 63 == 1,
                cf: over,
                of: over,
            };
        }
        Op::Imul if ops.len() == 1 => {
            let s = m.read(&ops[0], Width::W64)?;
            let p = m.s.reg(Reg::Ra) as i64 as i128 * s as i64 as i128;
            let lo = p as u64;
            m.s.set_reg(Reg::Ra, lo);
            m.s.set_reg(Reg::Rd, (p >> 64) as u64);
            let over = p != lo as i64 as i128;
            m.s.flags = Flags {
                zf: lo == 0,
                sf: lo >> 63 == 1,
                cf: over,
                of: over,
            };
        }
        Op::Imul => {
            let w = width(&ops[0]);
            let a = w.sign_extend(m.read(&ops[0], w)?) as i64 as i128;
            let b = w.sign_extend(m.read(&ops[1], w)?) as i64 as i128;
            let p = a * b;
            let r = p as u64 & w.mask();
            let over = w.sign_extend(r) as i64 as i128 != p;
            m.s.flags = Flags {
                zf: r == 0,
                sf: r & w.sign_bit() != 0,
                cf: over,
                of: over,
            };
            m.write(&ops[0], r)?;
        }
        Op::Cbw => {
            let v = Width::W8.sign_extend(m.s.read_view(Reg::Ra.view(Width::W8)));
            m.s.write_view(Reg::Ra.view(Width::W16), v);
        }
        Op::Cwde => {
            let v = Width::W16.sign_extend(m.s.read_view(Reg::Ra.view(Width::W16)));
            m.s.write_view(Reg::Ra.view(Width::W32), v);
        }
        Op::Cdqe => {
            let v = Width::W32.sign_extend(m.s.read_view(Reg::Ra.view(Width::W32)));
            m.s.write_view(Reg::Ra.full(), v);
        }
        Op::Cwd | Op::Cdq | Op::Cqo => {
            let w = match instr.op {
                Op::Cwd => Width::W16,
                Op::Cdq => Width::W32,
                _ => Width::W64,
            };
            let negative = m.s.read_view(Reg::Ra.view(w)) & w.sign_bit() != 0;
            m.s.write_view(Reg::Rd.view(w), if negative { w.mask() } else { 0 });
        }
        Op::Bt | Op::Bts | Op::Btr | Op::Btc => {
            let w = width(&ops[0]);
            let d = m.read(&ops[0], w)?;
            let off = m.read(&ops[1], w)? % w.bits() as u64;
            let bit = 1u64 << off;
            m.s.flags.cf = d & bit != 0;
            let r = match instr.op {
                Op::Bts => Some(d | bit),
                Op::Btr => Some(d & !bit),
                Op::Btc => Some(d ^ bit),
                _ => None,
            };
            if let Some(r) = r {
                m.write(&ops[0], r)?;
            }
        }
        Op::Bsf | Op::Bsr => {
            let w = width(&ops[0]);
            let s = m.read(&ops[1], w)?;
            m.s.flags = Flags {
                zf: s == 0,
                ..Flags::default()
            };
            if s != 0 {
                let idx = if instr.op == Op::Bsf {
                    s.trailing_zeros()
                } else {
                    63 - s.leading_zeros()
                };
                m.write(&ops[0], idx as u64)?;
            }
        }
    }
    m.s.pc = next;
    Ok(info)
}

/// Pure single step: returns the successor state and the events.
pub fn arch_step(
    state: &ArchState,
    instr: &Instruction,
) -> Result<(ArchState, Vec<ArchEvent>), ExecError> {
    let mut next = state.clone();
    let mut events = Vec::new();
    step(&mut next, instr, StepOptions::default(), &mut events)?;
    Ok((next, events))
}

/// Runs `program` from `state.pc` to the end without speculation.
pub fn run_program(
    program: &Program,
    mut state: ArchState,
) -> Result<(ArchState, Vec<ArchEvent>), ExecError> {
    let mut events = Vec::new();
    while let Some(instr) = program.get(state.pc) {
        step(&mut state, instr, StepOptions::default(), &mut events)?;
    }
    Ok((state, events))
}

/// Effective address of a memory operand, or a fault if it starts outside the page.
pub fn effective_address(state: &ArchState, m: &MemRef) -> Result<u16, ExecError> {
    let mut a = m.disp as u64;
    for r in m.regs() {
        a = a.wrapping_add(state.reg(r));
    }
    if a >= PAGE_SIZE as u64 {
        return Err(ExecError::MemoryFault {
            pc: state.pc,
            address: a,
        });
    }
    Ok(a as u16)
}

fn width(o: &Operand) -> Width {
    o.width().unwrap_or(Width::W64)
}

fn zs(r: u64, w: Width) -> (bool, bool) {
    (r & w.mask() == 0, r & w.sign_bit() != 0)
}

pub(crate) fn add(a: u64, b: u64, cin: u64, w: Width) -> (u64, Flags) {
    let (a, b) = (a & w.mask(), b & w.mask());
    let full = a as u128 + b as u128 + cin as u128;
    let r = full as u64 & w.mask();
    let (zf, sf) = zs(r, w);
    let flags = Flags {
        zf,
        sf,
        cf: full > w.mask() as u128,
        of: (a ^ r) & (b ^ r) & w.sign_bit() != 0,
    };
    (r, flags)
}

pub(crate) fn sub(a: u64, b: u64, bin: u64, w: Width) -> (u64, Flags) {
    let (a, b) = (a & w.mask(), b & w.mask());
    let r = a.wrapping_sub(b).wrapping_sub(bin) & w.mask();
    let (zf, sf) = zs(r, w);
    let flags = Flags {
        zf,
        sf,
        cf: (a as u128) < b as u128 + bin as u128,
        of: (a ^ b) & (a ^ r) & w.sign_bit() != 0,
    };
    (r, flags)
}

fn logic(r: u64, w: Width) -> Flags {
    let (zf, sf) = zs(r, w);
    Flags {
        zf,
        sf,
        cf: false,
        of: false,
    }
}

struct Machine<'a> {
    s: &'a mut ArchState,
    events: &'a mut Vec<ArchEvent>,
    load_override: Option<u64>,
}

impl Machine<'_> {
    fn read(&mut self, o: &Operand, w: Width) -> Result<u64, ExecError> {
        Ok(match o {
            Operand::Reg(v) => self.s.read_view(*v),
            Operand::Imm(i) => *i as u64 & w.mask(),
            Operand::Mem(m) => {
                let at = effective_address(self.s, m)?;
                self.events.push(ArchEvent::MemRead {
                    offset: at,
                    size: m.width.bytes() as u8,
                });
                match self.load_override.take() {
                    Some(v) => v & m.width.mask(),
                    None => self.s.load(at, m.width.bytes()),
                }
            }
            Operand::Label(_) => unreachable!("label operands are never read"),
        })
    }

    fn write(&mut self, o: &Operand, v: u64) -> Result<(), ExecError> {
        match o {
            Operand::Reg(view) => self.s.write_view(*view, v),
            Operand::Mem(m) => {
                let at = effective_address(self.s, m)?;
                self.events.push(ArchEvent::MemWrite {
                    offset: at,
                    size: m.width.bytes() as u8,
                });
                self.s.store(at, m.width.bytes(), v);
            }
            _ => unreachable!("only registers and memory are written"),
        }
        Ok(())
    }

    /// Writes `first` then `last`, except that a memory operand goes first
    /// so its address is taken before any register changes.
    fn write_both(&mut self, first: (&Operand, u64), last: (&Operand, u64)) -> Result<(), ExecError> {
        if matches!(first.0, Operand::Mem(_)) || !matches!(last.0, Operand::Mem(_)) {
            self.write(first.0, first.1)?;
            self.write(last.0, last.1)
        } else {
            self.write(last.0, last.1)?;
            self.write(first.0, first.1)
        }
    }

    fn load_at(&mut self, reg: Reg, w: Width) -> Result<u64, ExecError> {
        let m = MemRef::base(reg, w);
        self.read(&Operand::Mem(m), w)
    }

    fn string_op(
        &mut self,
        instr: &Instruction,
        w: Width,
        cap: Option<u64>,
    ) -> Result<StepInfo, ExecError> {
        let rep = instr.prefix.is_rep();
        let mut info = StepInfo::default();
        let mut stopped_by_cond = false;
        loop {
            if rep && self.s.reg(Reg::Rc) == 0 {
                break;
            }
            if cap.is_some_and(|c| info.iterations >= c) {
                info.truncated = true;
                break;
            }
            let (a, b) = match instr.op {
                Op::Cmps(_) => {
                    let a = self.load_at(Reg::Rsi, w)?;
                    let b = self.load_at(Reg::Rdi, w)?;
                    (a, b)
                }
                _ => {
                    let a = self.s.read_view(RegView {
                        reg: Reg::Ra,
                        width: w,
                    });
                    (a, self.load_at(Reg::Rdi, w)?)
                }
            };
            let (_, f) = sub(a, b, 0, w);
            self.s.flags = f;
            if matches!(instr.op, Op::Cmps(_)) {
                let v = self.s.reg(Reg::Rsi).wrapping_add(w.bytes());
                self.s.set_reg(Reg::Rsi, v);
            }
            let v = self.s.reg(Reg::Rdi).wrapping_add(w.bytes());
            self.s.set_reg(Reg::Rdi, v);
            info.iterations += 1;
            if !rep {
                break;
            }
            let count = self.s.reg(Reg::Rc).wrapping_sub(1);
            self.s.set_reg(Reg::Rc, count);
            let stop = match instr.prefix {
                Prefix::Repe => !f.zf,
                _ => f.zf,
            };
            if stop {
                stopped_by_cond = true;
                break;
            }
        }
        info.exhausted = rep && !info.truncated && !stopped_by_cond;
        Ok(info)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::parse::parse_instruction;

    fn exec(text: &str, s: &ArchState) -> (ArchState, Vec<ArchEvent>) {
        arch_step(s, &parse_instruction(text, 1).unwrap()).unwrap()
    }

    #[test]
    fn add_and_cmp() {
        let mut s = ArchState::default();
        s.set_reg(Reg::Ra, 1);
        let (s1, _) = exec("ADD RA, 1", &s);
        assert_eq!(s1.reg(Reg::Ra), 2);
        assert!(!s1.flags.zf);
        s.set_reg(Reg::Ra, 10);
        let (s2, _) = exec("CMP RA, 10", &s);
        assert!(s2.flags.zf);
        assert_eq!(s2.pc, 1);
    }

    #[test]
    fn flag_edge_cases() {
        let mut s = ArchState::default();
        s.set_reg(Reg::Ra, 0x7F);
        let (r, _) = exec("ADD AL, 1", &s);
        assert!(r.flags.of && r.flags.sf && !r.flags.cf);
        s.flags.cf = true;
        s.set_reg(Reg::Ra, u64::MAX);
        let (r, _) = exec("INC RA", &s);
        assert!(r.flags.zf && r.flags.cf);
        s.set_reg(Reg::Ra, 0);
        let (r, _) = exec("SBB RA, 0", &s);
        assert_eq!(r.reg(Reg::Ra), u64::MAX);
        assert!(r.flags.cf);
        s.set_reg(Reg::Ra, 1u64 << 63);
        let (r, _) = exec("NEG RA", &s);
        assert!(r.flags.of && r.flags.cf);
    }

    #[test]
    fn division() {
        let mut s = ArchState::default();
        s.set_reg(Reg::Rd, 1);
        s.set_reg(Reg::Ra, 0);
        s.set_reg(Reg::Rc, 4);
        let (r, _) = exec("DIV RC", &s);
        assert_eq!(r.reg(Reg::Ra), 1u64 << 62);
        assert_eq!(r.reg(Reg::Rd), 0);
        s.set_reg(Reg::Rc, 0);
        assert_eq!(
            arch_step(&s, &parse_instruction("DIV RC", 1).unwrap()),
            Err(ExecError::DivideFault { pc: 0 })
        );
        s.set_reg(Reg::Rc, 1);
        assert!(arch_step(&s, &parse_instruction("DIV RC", 1).unwrap()).is_err());
    }

    #[test]
    fn multiplication() {
        let mut s = ArchState::default();
        s.set_reg(Reg::Ra, u64::MAX);
        s.set_reg(Reg::Rb, 2);
        let (r, _) = exec("MUL RB", &s);
        assert_eq!((r.reg(Reg::Ra), r.reg(Reg::Rd)), (u64::MAX - 1, 1));
        assert!(r.flags.cf);
        let (r, _) = exec("IMUL RB", &s);
        assert_eq!((r.reg(Reg::Ra), r.reg(Reg::Rd)), (u64::MAX - 1, u64::MAX));
        assert!(!r.flags.cf);
        let (r, _) = exec("IMUL EAX, EBX", &s);
        assert_eq!(r.reg(Reg::Ra), 0xFFFF_FFFE);
        assert!(!r.flags.of);
    }

    #[test]
    fn conversions_and_bits() {
        let mut s = ArchState::default();
        s.set_reg(Reg::Ra, 0x80);
        assert_eq!(exec("CBW", &s).0.reg(Reg::Ra), 0xFF80);
        s.set_reg(Reg::Ra, 0x8000_0000);
        assert_eq!(exec("CDQE", &s).0.reg(Reg::Ra), 0xFFFF_FFFF_8000_0000);
        assert_eq!(exec("CDQ", &s).0.reg(Reg::Rd), 0xFFFF_FFFF);
        s.set_reg(Reg::Rb, 0b1000);
        let (r, _) = exec("BSF RC, RB", &s);
        assert_eq!(r.reg(Reg::Rc), 3);
        let (r, _) = exec("BTS RB, 65", &s);
        assert_eq!(r.reg(Reg::Rb), 0b1010);
        assert!(!r.flags.cf);
        s.set_reg(Reg::Rc, 0xDEAD);
        s.set_reg(Reg::Rb, 0);
        let (r, _) = exec("BSR RC, RB", &s);
        assert!(r.flags.zf);
        assert_eq!(r.reg(Reg::Rc), 0xDEAD);
    }

    #[test]
    fn cmov_32_zero_extends_when_false() {
        let mut s = ArchState::default();
        s.set_reg(Reg::Ra, u64::MAX);
        s.flags.zf = false;
        let (r, _) = exec("CMOVE EAX, EBX", &s);
        assert_eq!(r.reg(Reg::Ra), 0xFFFF_FFFF);
    }

    #[test]
    fn memory_events() {
        let mut s = ArchState::default();
        s.set_reg(Reg::Rb, 8);
        s.store(8, 8, 0x1234);
        let (r, ev) = exec("MOV RA, [RB]", &s);
        assert_eq!(r.reg(Reg::Ra), 0x1234);
        assert_eq!(ev, vec![ArchEvent::MemRead { offset: 8, size: 8 }]);
        let (r, ev) = exec("ADD QWORD PTR [RB], 1", &s);
        assert_eq!(r.load(8, 8), 0x1235);
        assert_eq!(ev.len(), 2);
        s.set_reg(Reg::Rb, 4096);
        assert!(matches!(
            arch_step(&s, &parse_instruction("MOV RA, [RB]", 1).unwrap()),
            Err(ExecError::MemoryFault { .. })
        ));
    }

    #[test]
    fn repne_cmpsw_runs_to_zero() {
        let mut s = ArchState::default();
        s.set_reg(Reg::Rc, 3);
        s.set_reg(Reg::Rsi, 0x100);
        s.set_reg(Reg::Rdi, 0x200);
        for i in 0..3u16 {
            s.store(0x100 + 2 * i, 2, 1);
            s.store(0x200 + 2 * i, 2, 2);
        }
        let mut st = s.clone();
        let mut ev = Vec::new();
        let instr = parse_instruction("REPNE CMPSW", 1).unwrap();
        let info = step(&mut st, &instr, StepOptions::default(), &mut ev).unwrap();
        assert_eq!(st.reg(Reg::Rc), 0);
        assert!(info.exhausted);
        let expect: Vec<ArchEvent> = (0..3u16)
            .flat_map(|i| {
                [
                    ArchEvent::MemRead {
                        offset: 0x100 + 2 * i,
                        size: 2,
                    },
                    ArchEvent::MemRead {
                        offset: 0x200 + 2 * i,
                        size: 2,
                    },
                ]
            })
            .collect();
        assert_eq!(ev, expect);
    }

    #[test]
    fn repne_scas_stops_at_match() {
        let mut s = ArchState::default();
        s.set_reg(Reg::Rc, 5);
        s.set_reg(Reg::Rdi, 0x40);
        s.set_reg(Reg::Ra, 7);
        s.store(0x44, 4, 7);
        let mut ev = Vec::new();
        let instr = parse_instruction("REPNE SCASD", 1).unwrap();
        let info = step(&mut s, &instr, StepOptions::default(), &mut ev).unwrap();
        assert_eq!(info.iterations, 2);
        assert!(!info.exhausted);
        assert_eq!(s.reg(Reg::Rc), 3);
        assert_eq!(s.reg(Reg::Rdi), 0x48);
    }

    #[test]
    fn load_override_applies_once() {
        let mut s = ArchState::default();
        s.set_reg(Reg::Rb, 0);
        let mut ev = Vec::new();
        let instr = parse_instruction("MOV RA, [RB]", 1).unwrap();
        let opts = StepOptions {
            load_override: Some(0xABCD),
            ..Default::default()
        };
        step(&mut s, &instr, opts, &mut ev).unwrap();
        assert_eq!(s.reg(Reg::Ra), 0xABCD);
    }

    #[test]
    fn exchange_with_own_base_register() {
        let mut s = ArchState::default();
        s.set_reg(Reg::Rdi, 0x10);
        s.store(0x10, 8, 5);
        let (r, ev) = exec("XADD [RDI], RDI", &s);
        assert_eq!(r.load(0x10, 8), 0x15);
        assert_eq!(r.reg(Reg::Rdi), 5);
        assert!(ev.iter().all(|e| matches!(e, ArchEvent::MemRead { offset: 0x10, .. } | ArchEvent::MemWrite { offset: 0x10, .. })));
        let (r, _) = exec("XCHG RDI, [RDI]", &s);
        assert_eq!((r.reg(Reg::Rdi), r.load(0x10, 8)), (5, 0x10));
        s.set_reg(Reg::Ra, 3);
        let (r, _) = exec("XADD RA, RA", &s);
        assert_eq!(r.reg(Reg::Ra), 6);
    }
}
