//! Seeded random programs and inputs.
//!
//! Programs are a forward chain of basic blocks. Every block but the last
//! ends in a conditional branch to a later block (never the next one) or to
//! the exit. Memory accesses and divisions are preceded by instrumentation
//! that confines them to the sandbox page.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{
    Category, Cond, InputData, Instruction, MemRef, Op, Operand, Prefix, Program, Reg, RegView,
    Target, Width, PAGE_SIZE,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenConfig {
    pub categories: BTreeSet<Category>,
    pub program_size: usize,
    pub mem_accesses: usize,
    pub basic_blocks: usize,
    pub input_entropy_bits: u32,
    pub seed: u64,
}

impl GenConfig {
    /// Defaults: 32 instructions, 8 memory accesses, 16 bits of entropy,
    /// two basic blocks when branches are enabled and one otherwise.
    pub fn new(categories: impl IntoIterator<Item = Category>, seed: u64) -> GenConfig {
        let categories: BTreeSet<Category> = categories.into_iter().collect();
        let basic_blocks = if categories.contains(&Category::Cond) { 2 } else { 1 };
        GenConfig {
            categories,
            program_size: 32,
            mem_accesses: 8,
            basic_blocks,
            input_entropy_bits: 16,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.program_size < self.mem_accesses {
            return Err(GenError::InvalidConfig(format!(
                "program_size {} is smaller than mem_accesses {}",
                self.program_size, self.mem_accesses
            )));
        }
        if self.basic_blocks == 0 {
            return Err(GenError::InvalidConfig("basic_blocks must be at least 1".into()));
        }
        if !(1..=64).contains(&self.input_entropy_bits) {
            return Err(GenError::InvalidConfig(format!(
                "input_entropy_bits {} is outside 1..=64",
                self.input_entropy_bits
            )));
        }
        Ok(())
    }

    /// Whether `instr` may appear in programs generated from this config.
    pub fn allows(&self, instr: &Instruction) -> bool {
        instr.instrumentation
            || Category::Base.contains(instr)
            || self.categories.iter().any(|c| c.contains(instr))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Mixes a stream tag into a seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const PROGRAM_STREAM: u64 = 1;
const INPUT_STREAM: u64 = 2;

/// Mask applied to a base register before an explicit access of `w`.
pub fn access_mask(w: Width) -> i64 {
    0xFFF & !(w.bytes() as i64 - 1)
}

/// Mask applied to string pointers; leaves room for a full REP run.
pub fn string_mask(w: Width) -> i64 {
    0x7FF & !(w.bytes() as i64 - 1)
}

pub fn generate_program(cfg: &GenConfig) -> Result<Program, GenError> {
    cfg.validate()?;
    let branches = cfg.basic_blocks - 1;
    if branches > 0 && !cfg.categories.contains(&Category::Cond) {
        return Err(GenError::InfeasibleConfig(
            "several basic blocks need the cond category".into(),
        ));
    }
    if cfg.program_size < branches + cfg.mem_accesses {
        return Err(GenError::InfeasibleConfig(format!(
            "{} instructions cannot hold {} branches and {} memory accesses",
            cfg.program_size, branches, cfg.mem_accesses
        )));
    }
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, PROGRAM_STREAM)),
        pool: cfg
            .categories
            .iter()
            .copied()
            .chain([Category::Base])
            .filter(|c| *c != Category::Cond)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let fillers = cfg.program_size - branches;
    let mut is_mem = vec![false; fillers];
    for i in rand::seq::index::sample(&mut g.rng, fillers, cfg.mem_accesses) {
        is_mem[i] = true;
    }
    // Split fillers into blocks at random cut points.
    let mut cuts: Vec<usize> = (0..branches).map(|_| g.rng.random_range(0..=fillers)).collect();
    cuts.sort_unstable();
    cuts.push(fillers);

    let mut instrs = Vec::new();
    let mut labels = std::collections::BTreeMap::new();
    let mut pending_targets = Vec::new();
    let mut slot = 0;
    for (block, &end) in cuts.iter().enumerate() {
        if block > 0 {
            labels.insert(block_label(block, cfg.basic_blocks), instrs.len());
        }
        while slot < end {
            instrs.extend(g.filler(is_mem[slot]));
            slot += 1;
        }
        if block < branches {
            let to = g.rng.random_range(block + 2..=cfg.basic_blocks);
            let cond = *Cond::ALL.choose(&mut g.rng).expect("non-empty");
            pending_targets.push(instrs.len());
            instrs.push(Instruction::new(
                Op::Jcc(cond),
                vec![Operand::Label(Target {
                    label: block_label(to, cfg.basic_blocks),
                    index: 0,
                })],
            ));
        }
    }
    if branches > 0 {
        labels.insert(block_label(cfg.basic_blocks, cfg.basic_blocks), instrs.len());
    }
    Program::new(instrs, labels)
        .map_err(|e| GenError::InfeasibleConfig(format!("internal label error: {}", e)))
}

fn block_label(block: usize, blocks: usize) -> String {
    if block == blocks {
        ".exit".to_string()
    } else {
        format!(".bb{}", block)
    }
}

pub fn generate_inputs(n: usize, cfg: &GenConfig) -> Vec<InputData> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, INPUT_STREAM));
    (0..n)
        .map(|_| random_input(&mut rng, cfg.input_entropy_bits))
        .collect()
}

/// A value with `bits` bits of entropy in the low bits.
pub fn entropy_value(rng: &mut impl Rng, bits: u32) -> u64 {
    let v: u64 = rng.random();
    if bits >= 64 {
        v
    } else {
        v & ((1u64 << bits) - 1)
    }
}

pub fn random_input(rng: &mut impl Rng, bits: u32) -> InputData {
    let mut input = InputData::default();
    for r in input.regs.iter_mut() {
        *r = entropy_value(rng, bits);
    }
    input.flags.zf = rng.random();
    input.flags.cf = rng.random();
    input.flags.sf = rng.random();
    input.flags.of = rng.random();
    for q in 0..PAGE_SIZE / 8 {
        let v = entropy_value(rng, bits);
        input.write_u64(q * 8, v);
    }
    input
}

struct Gen {
    rng: ChaCha8Rng,
    pool: Vec<Category>,
}

const BASE_BINARY: [Op; 5] = [Op::Add, Op::Adc, Op::Sub, Op::Sbb, Op::Cmp];
const BASE_UNARY: [Op; 3] = [Op::Inc, Op::Dec, Op::Neg];
const FLAG_OPS: [Op; 4] = [Op::Clc, Op::Stc, Op::Cmc, Op::Cld];
const DIVISORS: [Reg; 4] = [Reg::Rb, Reg::Rc, Reg::Rsi, Reg::Rdi];

impl Gen {
    fn pick<T: Copy>(&mut self, items: &[T]) -> T {
        *items.choose(&mut self.rng).expect("non-empty choice")
    }

    fn reg(&mut self) -> Reg {
        self.pick(&Reg::ALL)
    }

    fn width(&mut self, allowed: &[Width]) -> Width {
        self.pick(allowed)
    }

    fn imm(&mut self) -> i64 {
        if self.rng.random_bool(0.5) {
            self.rng.random_range(-128..128)
        } else {
            self.rng.random::<i32>() as i64
        }
    }

    fn view(&mut self, w: Width) -> Operand {
        let r = self.reg();
        Operand::Reg(r.view(w))
    }

    /// A masked memory operand and its instrumentation.
    fn mem(&mut self, w: Width, pre: &mut Vec<Instruction>) -> Operand {
        let base = self.reg();
        pre.push(mask(base, access_mask(w)));
        Operand::Mem(MemRef::base(base, w))
    }

    /// Two-operand form; `mem` puts a memory operand on one side.
    fn binary(&mut self, op: Op, w: Width, mem: bool, pre: &mut Vec<Instruction>) -> Instruction {
        let src_imm = self.rng.random_bool(0.4);
        let ops = if mem {
            let m = self.mem(w, pre);
            if self.rng.random_bool(0.5) {
                let src = if src_imm { Operand::Imm(self.imm()) } else { self.view(w) };
                vec![m, src]
            } else {
                vec![self.view(w), m]
            }
        } else {
            let src = if src_imm { Operand::Imm(self.imm()) } else { self.view(w) };
            vec![self.view(w), src]
        };
        Instruction::new(op, ops)
    }

    fn unary(&mut self, op: Op, w: Width, mem: bool, pre: &mut Vec<Instruction>) -> Instruction {
        let o = if mem { self.mem(w, pre) } else { self.view(w) };
        Instruction::new(op, vec![o])
    }

    fn base(&mut self, mem: bool, pre: &mut Vec<Instruction>) -> Instruction {
        let w = self.width(&Width::ALL);
        if self.rng.random_bool(0.625) {
            let op = self.pick(&BASE_BINARY);
            self.binary(op, w, mem, pre)
        } else {
            let op = self.pick(&BASE_UNARY);
            self.unary(op, w, mem, pre)
        }
    }

    fn filler(&mut self, mem: bool) -> Vec<Instruction> {
        let cat = self.pick(&self.pool.clone());
        let mut pre = Vec::new();
        let instr = self.from_category(cat, mem, &mut pre);
        pre.push(instr);
        pre
    }

    fn from_category(&mut self, cat: Category, mem: bool, pre: &mut Vec<Instruction>) -> Instruction {
        const WIDE: [Width; 3] = [Width::W16, Width::W32, Width::W64];
        match cat {
            Category::Base | Category::Cond => self.base(mem, pre),
            Category::Nop if !mem => Instruction::new(Op::Nop, vec![]),
            Category::Flag if !mem => Instruction::new(self.pick(&FLAG_OPS), vec![]),
            Category::Conv if !mem => {
                let op = self.pick(&[Op::Cbw, Op::Cwde, Op::Cdqe, Op::Cwd, Op::Cdq, Op::Cqo]);
                Instruction::new(op, vec![])
            }
            Category::Nop | Category::Flag | Category::Conv => self.base(mem, pre),
            Category::Logi => {
                let w = self.width(&Width::ALL);
                if self.rng.random_bool(0.2) {
                    self.unary(Op::Not, w, mem, pre)
                } else {
                    let op = self.pick(&[Op::And, Op::Or, Op::Xor, Op::Test]);
                    self.binary(op, w, mem, pre)
                }
            }
            Category::Dxfr => match self.rng.random_range(0..4) {
                0 => {
                    let w = self.width(&Width::ALL);
                    self.binary(Op::Mov, w, mem, pre)
                }
                1 => {
                    let op = self.pick(&[Op::Movzx, Op::Movsx]);
                    let sw = self.width(&[Width::W8, Width::W16]);
                    let dw = if sw == Width::W8 {
                        self.width(&WIDE)
                    } else {
                        self.width(&[Width::W32, Width::W64])
                    };
                    let src = if mem { self.mem(sw, pre) } else { self.view(sw) };
                    Instruction::new(op, vec![self.view(dw), src])
                }
                2 => {
                    let w = self.width(&Width::ALL);
                    let ops = if mem {
                        vec![self.view(w), self.mem(w, pre)]
                    } else {
                        vec![self.view(w), self.view(w)]
                    };
                    Instruction::new(Op::Xchg, ops)
                }
                _ if mem => {
                    let w = self.width(&Width::ALL);
                    self.binary(Op::Mov, w, mem, pre)
                }
                _ => {
                    let w = self.width(&[Width::W32, Width::W64]);
                    self.unary(Op::Bswap, w, false, pre)
                }
            },
            Category::Atom => {
                let op = self.pick(&[Op::Xadd, Op::Cmpxchg]);
                let w = self.width(&Width::ALL);
                let dst = if mem { self.mem(w, pre) } else { self.view(w) };
                let i = Instruction::new(op, vec![dst, self.view(w)]);
                if mem && self.rng.random_bool(0.5) {
                    i.with_prefix(Prefix::Lock)
                } else {
                    i
                }
            }
            Category::Lock if mem => {
                let w = self.width(&WIDE);
                let i = match self.rng.random_range(0..3) {
                    0 => {
                        let op = self.pick(&[Op::Inc, Op::Dec, Op::Neg, Op::Not]);
                        self.unary(op, w, true, pre)
                    }
                    1 => {
                        let op = self.pick(&[Op::Bts, Op::Btr, Op::Btc]);
                        let m = self.mem(w, pre);
                        let src = Operand::Imm(self.rng.random_range(0..w.bits() as i64));
                        Instruction::new(op, vec![m, src])
                    }
                    _ => {
                        let op = self.pick(&[Op::Add, Op::Adc, Op::Sub, Op::Sbb, Op::And, Op::Or, Op::Xor]);
                        let m = self.mem(w, pre);
                        let src = if self.rng.random_bool(0.5) {
                            Operand::Imm(self.imm())
                        } else {
                            self.view(w)
                        };
                        Instruction::new(op, vec![m, src])
                    }
                };
                i.with_prefix(Prefix::Lock)
            }
            Category::Lock => self.base(false, pre),
            Category::Setc => {
                let c = self.pick(&Cond::ALL);
                self.unary(Op::Setcc(c), Width::W8, mem, pre)
            }
            Category::Cmov => {
                let c = self.pick(&Cond::ALL);
                let w = self.width(&WIDE);
                let src = if mem { self.mem(w, pre) } else { self.view(w) };
                Instruction::new(Op::Cmovcc(c), vec![self.view(w), src])
            }
            Category::Bit => {
                let w = self.width(&WIDE);
                if self.rng.random_bool(0.33) {
                    let op = self.pick(&[Op::Bsf, Op::Bsr]);
                    let src = if mem { self.mem(w, pre) } else { self.view(w) };
                    Instruction::new(op, vec![self.view(w), src])
                } else {
                    let op = self.pick(&[Op::Bt, Op::Bts, Op::Btr, Op::Btc]);
                    let dst = if mem { self.mem(w, pre) } else { self.view(w) };
                    let src = if self.rng.random_bool(0.5) {
                        Operand::Imm(self.rng.random_range(0..w.bits() as i64))
                    } else {
                        self.view(w)
                    };
                    Instruction::new(op, vec![dst, src])
                }
            }
            Category::Dmul => match self.rng.random_range(0..4) {
                0 if !mem => {
                    let d = self.pick(&DIVISORS);
                    pre.push(mask(Reg::Rd, 0xFF));
                    pre.push(
                        Instruction::new(Op::Or, vec![Operand::Reg(d.full()), Operand::Imm(0x101)])
                            .instrumented(),
                    );
                    Instruction::new(Op::Div, vec![Operand::Reg(d.full())])
                }
                1 => {
                    let w = self.width(&WIDE);
                    let src = if mem { self.mem(w, pre) } else { self.view(w) };
                    Instruction::new(Op::Imul, vec![self.view(w), src])
                }
                _ => {
                    let op = self.pick(&[Op::Mul, Op::Imul]);
                    self.unary(op, Width::W64, mem, pre)
                }
            },
            Category::Strn if mem => {
                let w = self.width(&Width::ALL);
                let op = if self.rng.random_bool(0.5) { Op::Cmps(w) } else { Op::Scas(w) };
                let prefix = self.pick(&[Prefix::None, Prefix::Repe, Prefix::Repne]);
                if matches!(op, Op::Cmps(_)) {
                    pre.push(mask(Reg::Rsi, string_mask(w)));
                }
                pre.push(mask(Reg::Rdi, string_mask(w)));
                if prefix.is_rep() {
                    pre.push(mask(Reg::Rc, 0x7F));
                    pre.push(
                        Instruction::new(Op::Add, vec![Operand::Reg(Reg::Rc.full()), Operand::Imm(1)])
                            .instrumented(),
                    );
                }
                Instruction::new(op, vec![]).with_prefix(prefix)
            }
            Category::Strn => Instruction::new(self.pick(&FLAG_OPS), vec![]),
        }
    }
}

fn mask(r: Reg, m: i64) -> Instruction {
    Instruction::new(
        Op::And,
        vec![Operand::Reg(RegView { reg: r, width: Width::W64 }), Operand::Imm(m)],
    )
    .instrumented()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::validate_sandbox;

    #[test]
    fn nop_subset_without_memory() {
        let mut cfg = GenConfig::new([Category::Nop], 1);
        cfg.program_size = 8;
        cfg.mem_accesses = 0;
        let p = generate_program(&cfg).unwrap();
        assert_eq!(p.len(), 8);
        for i in p.instructions() {
            assert!(matches!(
                i.op,
                Op::Nop | Op::Add | Op::Adc | Op::Sub | Op::Sbb | Op::Cmp | Op::Inc | Op::Dec | Op::Neg
            ));
        }
        assert!(validate_sandbox(&p).is_ok());
    }

    #[test]
    fn cond_dxfr_defaults() {
        let cfg = GenConfig::new([Category::Cond, Category::Dxfr], 7);
        let p = generate_program(&cfg).unwrap();
        assert_eq!(p.payload_len(), 32);
        assert!(p.instructions().iter().any(|i| matches!(i.op, Op::Jcc(_))));
        let mem = p
            .instructions()
            .iter()
            .filter(|i| !i.instrumentation && i.accesses_memory())
            .count();
        assert_eq!(mem, 8);
        assert_eq!(generate_program(&cfg).unwrap(), p);
    }

    #[test]
    fn infeasible() {
        let mut cfg = GenConfig::new([Category::Nop], 1);
        cfg.program_size = 4;
        cfg.mem_accesses = 5;
        assert!(generate_program(&cfg).is_err());
        let mut cfg = GenConfig::new([Category::Nop], 1);
        cfg.basic_blocks = 3;
        assert!(matches!(generate_program(&cfg), Err(GenError::InfeasibleConfig(_))));
    }

    #[test]
    fn inputs_respect_entropy() {
        let mut cfg = GenConfig::new([Category::Nop], 3);
        let inputs = generate_inputs(100, &cfg);
        assert_eq!(inputs.len(), 100);
        assert!(inputs.iter().all(|i| i.regs.iter().all(|r| *r < 1 << 16)));
        cfg.input_entropy_bits = 1;
        let one = generate_inputs(1, &cfg);
        assert!(one[0].regs.iter().all(|r| *r <= 1));
        assert!(one[0].mem.iter().all(|b| *b <= 1));
        assert_eq!(generate_inputs(5, &cfg), generate_inputs(5, &cfg));
        let other = GenConfig { seed: 4, ..cfg.clone() };
        assert_ne!(generate_inputs(5, &cfg), generate_inputs(5, &other));
    }
}
