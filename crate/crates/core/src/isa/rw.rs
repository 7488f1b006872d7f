use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::exec::{arch_step, ArchEvent};
use super::instr::{Instruction, Op, Operand};
use super::reg::{Flag, Reg};
use super::state::{ArchState, PAGE_SIZE};

/// A piece of architectural state: the program counter, a full register,
/// a flag or one byte of the sandbox page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Location {
    Pc,
    Reg(Reg),
    Flag(Flag),
    Mem(u16),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Pc => f.write_str("PC"),
            Location::Reg(r) => f.write_str(r.name()),
            Location::Flag(fl) => f.write_str(fl.name()),
            Location::Mem(o) => write!(f, "mem[{}]", o),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReadWriteSets {
    pub read: BTreeSet<Location>,
    pub write: BTreeSet<Location>,
}

const ALL_FLAGS: [Location; 4] = [
    Location::Flag(Flag::Zf),
    Location::Flag(Flag::Cf),
    Location::Flag(Flag::Sf),
    Location::Flag(Flag::Of),
];

const NO_CF: [Location; 3] = [
    Location::Flag(Flag::Zf),
    Location::Flag(Flag::Sf),
    Location::Flag(Flag::Of),
];

fn reg(r: Reg) -> Location {
    Location::Reg(r)
}

/// Register, flag and PC parts of the read and write sets. Memory bytes
/// depend on the state and come from execution events.
pub fn static_sets(instr: &Instruction) -> (Vec<Location>, Vec<Location>) {
    let mut read = vec![Location::Pc];
    let mut write = Vec::new();
    let ops = &instr.operands;
    for o in ops {
        match o {
            Operand::Mem(m) => read.extend(m.regs().map(reg)),
            Operand::Reg(v) => read.push(reg(v.reg)),
            _ => {}
        }
    }
    let dst_reg = ops.first().and_then(Operand::as_reg);
    // Destination register, plus its old value when the write merges.
    let write_dst = |read: &mut Vec<Location>, write: &mut Vec<Location>| {
        if let Some(v) = dst_reg {
            write.push(reg(v.reg));
            if v.write_merges() {
                read.push(reg(v.reg));
            }
        }
    };
    match instr.op {
        Op::Add | Op::Sub | Op::Neg | Op::And | Op::Or | Op::Xor => {
            write_dst(&mut read, &mut write);
            write.extend(ALL_FLAGS);
        }
        Op::Adc | Op::Sbb => {
            read.push(Location::Flag(Flag::Cf));
            write_dst(&mut read, &mut write);
            write.extend(ALL_FLAGS);
        }
        Op::Cmp | Op::Test => write.extend(ALL_FLAGS),
        Op::Inc | Op::Dec => {
            write_dst(&mut read, &mut write);
            write.extend(NO_CF);
        }
        Op::Not | Op::Bswap => write_dst(&mut read, &mut write),
        Op::Imul if ops.len() == 2 => {
            write_dst(&mut read, &mut write);
            write.extend(ALL_FLAGS);
        }
        Op::Mov | Op::Movzx | Op::Movsx => {
            // A plain move reads its destination only when the write merges.
            read.clear();
            read.push(Location::Pc);
            for o in ops {
                if let Operand::Mem(m) = o {
                    read.extend(m.regs().map(reg));
                }
            }
            if let Some(Operand::Reg(s)) = ops.get(1) {
                read.push(reg(s.reg));
            }
            write_dst(&mut read, &mut write);
        }
        Op::Xchg | Op::Xadd => {
            write.extend(ops.iter().filter_map(Operand::as_reg).map(|v| reg(v.reg)));
            if instr.op == Op::Xadd {
                write.extend(ALL_FLAGS);
            }
        }
        Op::Cmpxchg => {
            read.push(reg(Reg::Ra));
            write.push(reg(Reg::Ra));
            if let Some(v) = dst_reg {
                write.push(reg(v.reg));
            }
            write.extend(ALL_FLAGS);
        }
        Op::Jcc(c) => {
            read.extend(c.flags().iter().map(|f| Location::Flag(*f)));
            write.push(Location::Pc);
        }
        Op::Jmp => write.push(Location::Pc),
        Op::Setcc(c) => {
            read.extend(c.flags().iter().map(|f| Location::Flag(*f)));
            write_dst(&mut read, &mut write);
        }
        Op::Cmovcc(c) => {
            read.extend(c.flags().iter().map(|f| Location::Flag(*f)));
            write_dst(&mut read, &mut write);
        }
        Op::Cmps(_) | Op::Scas(_) => {
            let ptrs: &[Reg] = if matches!(instr.op, Op::Cmps(_)) {
                &[Reg::Rsi, Reg::Rdi]
            } else {
                &[Reg::Rdi]
            };
            read.extend(ptrs.iter().copied().map(reg));
            write.extend(ptrs.iter().copied().map(reg));
            if matches!(instr.op, Op::Scas(_)) {
                read.push(reg(Reg::Ra));
            }
            if instr.prefix.is_rep() {
                read.push(reg(Reg::Rc));
                write.push(reg(Reg::Rc));
                // Zero iterations leave the flags untouched.
                read.extend(ALL_FLAGS);
            }
            write.extend(ALL_FLAGS);
        }
        Op::Clc | Op::Stc => write.push(Location::Flag(Flag::Cf)),
        Op::Cmc => {
            read.push(Location::Flag(Flag::Cf));
            write.push(Location::Flag(Flag::Cf));
        }
        Op::Div => {
            read.extend([reg(Reg::Ra), reg(Reg::Rd)]);
            write.extend([reg(Reg::Ra), reg(Reg::Rd)]);
        }
        Op::Mul | Op::Imul => {
            read.push(reg(Reg::Ra));
            write.extend([reg(Reg::Ra), reg(Reg::Rd)]);
            write.extend(ALL_FLAGS);
        }
        Op::Cbw | Op::Cwde | Op::Cdqe => {
            read.push(reg(Reg::Ra));
            write.push(reg(Reg::Ra));
        }
        Op::Cwd | Op::Cdq | Op::Cqo => {
            read.push(reg(Reg::Ra));
            if instr.op == Op::Cwd {
                read.push(reg(Reg::Rd));
            }
            write.push(reg(Reg::Rd));
        }
        Op::Bt => write.push(Location::Flag(Flag::Cf)),
        Op::Bts | Op::Btr | Op::Btc => {
            if let Some(v) = dst_reg {
                write.push(reg(v.reg));
            }
            write.push(Location::Flag(Flag::Cf));
        }
        Op::Bsf | Op::Bsr => {
            if let Some(v) = dst_reg {
                write.push(reg(v.reg));
            }
            write.extend(ALL_FLAGS);
        }
        Op::Cld | Op::Nop | Op::Fence => {}
    }
    read.sort();
    read.dedup();
    write.sort();
    write.dedup();
    (read, write)
}

fn bytes(offset: u16, size: u8) -> impl Iterator<Item = Location> {
    (0..size as usize).map(move |i| Location::Mem(((offset as usize + i) % PAGE_SIZE) as u16))
}

/// Read and write sets given the events the instruction produced.
pub fn rw_from_events(instr: &Instruction, events: &[ArchEvent]) -> ReadWriteSets {
    let (r, w) = static_sets(instr);
    let mut sets = ReadWriteSets {
        read: r.into_iter().collect(),
        write: w.into_iter().collect(),
    };
    for e in events {
        match *e {
            ArchEvent::MemRead { offset, size } => sets.read.extend(bytes(offset, size)),
            ArchEvent::MemWrite { offset, size } => sets.write.extend(bytes(offset, size)),
            ArchEvent::Branch { .. } => {}
        }
    }
    sets
}

/// Read and write sets of `instr` executed in `state`.
pub fn read_write_sets(instr: &Instruction, state: &ArchState) -> ReadWriteSets {
    let events = arch_step(state, instr).map(|(_, e)| e).unwrap_or_default();
    rw_from_events(instr, &events)
}
