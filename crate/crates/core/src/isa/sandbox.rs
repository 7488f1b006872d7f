//! Static check that every memory access and division is confined by
//! preceding instrumentation.
//!
//! A forward interval analysis over the (acyclic) control-flow graph.
//! Masks and small adjustments narrow a register's range; any other write
//! resets it to the full 64-bit range.

use std::fmt;

use super::instr::{Instruction, MemRef, Op, Operand};
use super::program::Program;
use super::reg::{Reg, Width};
use super::rw::{static_sets, Location};
use super::state::PAGE_SIZE;

const LIMIT: u64 = PAGE_SIZE as u64 - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Range {
    lo: u64,
    hi: u64,
}

impl Range {
    const TOP: Range = Range { lo: 0, hi: u64::MAX };

    fn point(v: u64) -> Range {
        Range { lo: v, hi: v }
    }

    fn hull(self, o: Range) -> Range {
        Range {
            lo: self.lo.min(o.lo),
            hi: self.hi.max(o.hi),
        }
    }

    fn shift(self, delta: i64) -> Range {
        let moved = if delta >= 0 {
            self.lo
                .checked_add(delta as u64)
                .zip(self.hi.checked_add(delta as u64))
        } else {
            let d = delta.unsigned_abs();
            self.lo.checked_sub(d).zip(self.hi.checked_sub(d))
        };
        moved.map_or(Range::TOP, |(lo, hi)| Range { lo, hi })
    }
}

/// All bits up to and including the highest set bit of `x`.
fn smear(x: u64) -> u64 {
    if x == 0 {
        0
    } else {
        u64::MAX >> x.leading_zeros()
    }
}

type RegRanges = [Range; 6];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub index: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn transfer(instr: &Instruction, r: &mut RegRanges) {
    let ops = &instr.operands;
    let dst = ops.first().and_then(Operand::as_reg);
    let imm = match ops.get(1) {
        Some(Operand::Imm(v)) => Some(*v),
        _ => None,
    };
    if let Some(d) = dst {
        let wide = matches!(d.width, Width::W64 | Width::W32);
        let cur = r[d.reg.index()];
        let narrowed = match (instr.op, imm) {
            (Op::And, Some(m)) if wide => {
                let m = m as u64 & d.width.mask();
                let hi = if cur.hi <= d.width.mask() { cur.hi.min(m) } else { m };
                Some(Range { lo: 0, hi })
            }
            (Op::Or, Some(m)) if d.width == Width::W64 => {
                let m = m as u64;
                Some(Range {
                    lo: cur.lo.max(m),
                    hi: smear(cur.hi) | m,
                })
            }
            (Op::Add, Some(v)) if d.width == Width::W64 => Some(cur.shift(v)),
            (Op::Sub, Some(v)) if d.width == Width::W64 => {
                Some(if v == i64::MIN { Range::TOP } else { cur.shift(-v) })
            }
            (Op::Mov, Some(v)) if wide => Some(Range::point(v as u64 & d.width.mask())),
            (Op::Mov, None) if d.width == Width::W64 => {
                ops[1].as_reg().filter(|s| s.width == Width::W64).map(|s| r[s.reg.index()])
            }
            _ => None,
        };
        if let Some(n) = narrowed {
            r[d.reg.index()] = n;
            // The instruction writes nothing else we track.
            return;
        }
    }
    let (_, writes) = static_sets(instr);
    for w in writes {
        if let Location::Reg(reg) = w {
            r[reg.index()] = Range::TOP;
        }
    }
}

fn address_range(m: &MemRef, r: &RegRanges) -> Option<Range> {
    let mut lo: u64 = 0;
    let mut hi: u64 = 0;
    for reg in m.regs() {
        let x = r[reg.index()];
        lo = lo.checked_add(x.lo)?;
        hi = hi.checked_add(x.hi)?;
    }
    let d = m.disp.unsigned_abs();
    if m.disp >= 0 {
        Some(Range {
            lo: lo.checked_add(d)?,
            hi: hi.checked_add(d)?,
        })
    } else {
        Some(Range {
            lo: lo.checked_sub(d)?,
            hi: hi.checked_sub(d)?,
        })
    }
}

fn check(instr: &Instruction, index: usize, r: &RegRanges, out: &mut Vec<Diagnostic>) {
    let mut diag = |message: String| out.push(Diagnostic { index, message });
    if let Some(m) = instr.mem_operand() {
        let ok = address_range(m, r).is_some_and(|a| a.hi <= LIMIT);
        if !ok {
            let regs: Vec<Reg> = m.regs().collect();
            match regs.as_slice() {
                [one] if m.disp == 0 => {
                    diag(format!("unmasked base {} at index {}", one, index))
                }
                _ => diag(format!("address may leave the sandbox at index {}", index)),
            }
        }
    }
    match instr.op {
        Op::Cmps(w) | Op::Scas(w) => {
            let count = r[Reg::Rc.index()];
            let iterations = if instr.prefix.is_rep() { count.hi } else { 1 };
            let span = iterations.saturating_sub(1).saturating_mul(w.bytes());
            let ptrs: &[Reg] = if matches!(instr.op, Op::Cmps(_)) {
                &[Reg::Rsi, Reg::Rdi]
            } else {
                &[Reg::Rdi]
            };
            if instr.prefix.is_rep() && count.hi > LIMIT {
                diag(format!("unbounded count RC at index {}", index));
            } else {
                for p in ptrs {
                    let last = r[p.index()].hi.saturating_add(span);
                    if last > LIMIT {
                        diag(format!("unmasked string pointer {} at index {}", p, index));
                    }
                }
            }
        }
        Op::Div => match instr.operands[0].as_reg() {
            Some(d) => {
                let dr = r[d.reg.index()];
                let high = r[Reg::Rd.index()];
                if dr.lo == 0 {
                    diag(format!("divisor {} may be zero at index {}", d, index));
                } else if high.hi >= dr.lo {
                    diag(format!("quotient may overflow at index {}", index));
                }
            }
            None => diag(format!("memory divisor cannot be bounded at index {}", index)),
        },
        _ => {}
    }
}

/// Returns every diagnostic; an empty list means the program is confined.
pub fn sandbox_diagnostics(program: &Program) -> Vec<Diagnostic> {
    let n = program.len();
    let mut incoming: Vec<Option<RegRanges>> = vec![None; n + 1];
    incoming[0] = Some([Range::TOP; 6]);
    let mut out = Vec::new();
    for (i, instr) in program.instructions().iter().enumerate() {
        let Some(mut state) = incoming[i] else {
            continue;
        };
        check(instr, i, &state, &mut out);
        transfer(instr, &mut state);
        let mut join = |at: usize, s: RegRanges| {
            incoming[at] = Some(match incoming[at] {
                Some(prev) => std::array::from_fn(|k| prev[k].hull(s[k])),
                None => s,
            });
        };
        if let Some(t) = instr.target() {
            join(t.index, state);
        }
        if instr.op != Op::Jmp {
            join(i + 1, state);
        }
    }
    out
}

/// `Ok` when every access and division is confined, else the diagnostics.
pub fn validate_sandbox(program: &Program) -> Result<(), Vec<Diagnostic>> {
    let d = sandbox_diagnostics(program);
    if d.is_empty() {
        Ok(())
    } else {
        Err(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::parse::parse_program;

    fn diags(text: &str) -> Vec<String> {
        sandbox_diagnostics(&parse_program(text).unwrap())
            .into_iter()
            .map(|d| d.message)
            .collect()
    }

    #[test]
    fn masked_base_is_ok() {
        assert!(diags("AND RB, 0xFFF\nMOV RA, [RB]").is_empty());
    }

    #[test]
    fn unmasked_base() {
        assert_eq!(diags("MOV RA, [RB]"), vec!["unmasked base RB at index 0"]);
    }

    #[test]
    fn mask_invalidated_by_add() {
        assert_eq!(
            diags("AND RB, 0xFFF\nADD RB, 5000\nMOV RA, [RB]"),
            vec!["unmasked base RB at index 2"]
        );
        assert_eq!(
            diags("AND RB, 0xFFF\nMOV RB, [RB]\nMOV RA, [RB]"),
            vec!["unmasked base RB at index 2"]
        );
    }

    #[test]
    fn join_over_paths() {
        let ok = "AND RB, 0xFF8\nJE .a\nMOV RB, 8\n.a:\nMOV RA, [RB]";
        assert!(diags(ok).is_empty());
        let bad = "JE .a\nAND RB, 0xFF8\n.a:\nMOV RA, [RB]";
        assert_eq!(diags(bad).len(), 1);
    }

    #[test]
    fn division_guard() {
        let ok = "AND RD, 0xFF\nOR RC, 0x101\nDIV RC";
        assert!(diags(ok).is_empty());
        assert_eq!(diags("DIV RC").len(), 1);
        assert_eq!(diags("OR RC, 0x101\nDIV RC").len(), 1);
    }

    #[test]
    fn string_bounds() {
        let ok = "AND RDI, 0x7FC\nAND RC, 0x7F\nADD RC, 1\nREPNE SCASD";
        assert!(diags(ok).is_empty());
        assert_eq!(diags("AND RDI, 0x7FC\nREPNE SCASD").len(), 1);
        assert_eq!(diags("AND RC, 0x7F\nREPNE SCASD").len(), 1);
    }
}
