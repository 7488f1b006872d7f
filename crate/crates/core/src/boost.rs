//! Contract-driven input generation.
//!
//! Siblings of an input keep every location its contract trace depends on
//! and redraw everything else, so they fall into the same equivalence class.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::contract::{CTrace, ContractError, ContractModel};
use crate::deps::{track, DepSet};
use crate::gen::random_input;
use crate::isa::{InputData, Location, PAGE_SIZE};

/// Result of boosting one input.
#[derive(Debug, Clone)]
pub struct Boosted {
    /// The `k - 1` new inputs.
    pub siblings: Vec<InputData>,
    pub dep: DepSet,
    /// The original's contract trace, computed during tracking.
    pub trace: CTrace,
    /// Dep covers every input location; siblings are exact copies.
    pub degenerate: bool,
    /// Contract steps spent on tracking.
    pub steps: u64,
}

fn copy_location(dst: &mut InputData, src: &InputData, l: Location) {
    match l {
        Location::Reg(r) => dst.set_reg(r, src.reg(r)),
        Location::Flag(f) => dst.flags.set(f, src.flags.get(f)),
        Location::Mem(o) => dst.mem[o as usize] = src.mem[o as usize],
        Location::Pc => {}
    }
}

fn differs(a: &InputData, b: &InputData, l: Location) -> bool {
    match l {
        Location::Reg(r) => a.reg(r) != b.reg(r),
        Location::Flag(f) => a.flags.get(f) != b.flags.get(f),
        Location::Mem(o) => a.mem[o as usize] != b.mem[o as usize],
        Location::Pc => false,
    }
}

/// Flips the lowest bit of `l`; stays inside the entropy range when the
/// location holds low-order bits.
fn perturb(input: &mut InputData, l: Location) {
    match l {
        Location::Reg(r) => input.set_reg(r, input.reg(r) ^ 1),
        Location::Flag(f) => input.flags.set(f, !input.flags.get(f)),
        Location::Mem(o) => input.mem[o as usize] ^= 1,
        Location::Pc => {}
    }
}

fn in_range(l: Location, bits: u32) -> bool {
    match l {
        Location::Mem(o) => (o as u32 % 8) * 8 < bits,
        _ => true,
    }
}

/// Builds `k - 1` contract-equivalent siblings of `input`.
pub fn boost(
    model: &ContractModel,
    input: &InputData,
    k: usize,
    seed: u64,
    entropy_bits: u32,
) -> Result<Boosted, ContractError> {
    let (run, dep) = track(model, input)?;
    let free: Vec<Location> = DepSet::input_locations()
        .filter(|l| !dep.contains(*l))
        .collect();
    let degenerate = free.is_empty();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut siblings = Vec::with_capacity(k.saturating_sub(1));
    for _ in 1..k {
        if degenerate {
            siblings.push(input.clone());
            continue;
        }
        let fresh = random_input(&mut rng, entropy_bits);
        let mut s = if dep.is_empty() {
            fresh
        } else {
            let mut s = input.clone();
            for &l in &free {
                copy_location(&mut s, &fresh, l);
            }
            s
        };
        if !free.iter().any(|&l| differs(&s, input, l)) {
            let l = free
                .iter()
                .copied()
                .find(|&l| in_range(l, entropy_bits))
                .unwrap_or(free[0]);
            perturb(&mut s, l);
        }
        siblings.push(s);
    }
    debug_assert_eq!(dep.len() + free.len(), 6 + 4 + PAGE_SIZE);
    Ok(Boosted {
        siblings,
        dep,
        trace: run.trace,
        degenerate,
        steps: run.steps,
    })
}

/// Share of traces that have at least one equal partner.
pub fn effectiveness(ctraces: &[CTrace]) -> f64 {
    if ctraces.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&CTrace, usize> = HashMap::new();
    for t in ctraces {
        *counts.entry(t).or_default() += 1;
    }
    let effective = ctraces.iter().filter(|t| counts[t] > 1).count();
    effective as f64 / ctraces.len() as f64
}
