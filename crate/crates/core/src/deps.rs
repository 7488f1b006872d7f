//! Dynamic dependency tracking over contract execution.
//!
//! Every location maps to the set of initial-state locations its current
//! value may depend on. A write makes the destination depend on the program
//! counter and everything the instruction read. An observation adds the
//! dependencies of the program counter and of the locations that determine
//! the observed address or target.

use std::collections::BTreeSet;

use fnv::FnvHashMap;

use crate::contract::{ContractError, ContractModel, ContractRun, ContractSpec, Tracker};
use crate::isa::{
    rw_from_events, ArchEvent, Flag, InputData, Instruction, Location, Op, Program, Reg, PAGE_SIZE,
};

const SLOTS: usize = 1 + 6 + 4 + PAGE_SIZE;
const WORDS: usize = SLOTS.div_ceil(64);

fn slot(l: Location) -> usize {
    match l {
        Location::Pc => 0,
        Location::Reg(r) => 1 + r.index(),
        Location::Flag(f) => 7 + f as usize,
        Location::Mem(o) => 11 + o as usize,
    }
}

fn location(slot: usize) -> Location {
    match slot {
        0 => Location::Pc,
        1..=6 => Location::Reg(Reg::ALL[slot - 1]),
        7..=10 => Location::Flag(Flag::ALL[slot - 7]),
        _ => Location::Mem((slot - 11) as u16),
    }
}

/// Fixed-size bit set over every location.
#[derive(Clone, PartialEq, Eq)]
pub struct LocSet(Box<[u64; WORDS]>);

impl LocSet {
    fn empty() -> LocSet {
        LocSet(Box::new([0; WORDS]))
    }

    fn single(l: Location) -> LocSet {
        let mut s = LocSet::empty();
        let i = slot(l);
        s.0[i / 64] |= 1 << (i % 64);
        s
    }

    fn union_with(&mut self, o: &LocSet) {
        for (a, b) in self.0.iter_mut().zip(o.0.iter()) {
            *a |= *b;
        }
    }

    fn iter(&self) -> impl Iterator<Item = Location> + '_ {
        self.0.iter().enumerate().flat_map(|(w, &bits)| {
            (0..64)
                .filter(move |b| bits & (1u64 << b) != 0)
                .map(move |b| location(w * 64 + b))
        })
    }
}

/// The per-location dependency map plus the accumulated dependency set.
pub struct DepTracker {
    map: FnvHashMap<Location, LocSet>,
    dep: LocSet,
}

impl Default for DepTracker {
    fn default() -> Self {
        DepTracker::new()
    }
}

impl DepTracker {
    /// Every location initially depends on itself only.
    pub fn new() -> DepTracker {
        DepTracker {
            map: FnvHashMap::default(),
            dep: LocSet::empty(),
        }
    }

    fn union_into(&self, acc: &mut LocSet, l: Location) {
        match self.map.get(&l) {
            Some(s) => acc.union_with(s),
            None => {
                let i = slot(l);
                acc.0[i / 64] |= 1 << (i % 64);
            }
        }
    }

    /// Current dependencies of `l`.
    pub fn deps_of(&self, l: Location) -> BTreeSet<Location> {
        match self.map.get(&l) {
            Some(s) => s.iter().collect(),
            None => LocSet::single(l).iter().collect(),
        }
    }

    /// Accumulated dependencies of all observations so far, without PC.
    pub fn dep_set(&self) -> DepSet {
        DepSet(self.dep.iter().filter(|l| *l != Location::Pc).collect())
    }
}

/// Locations determining the value exposed by an observation.
fn observed_locations(instr: &Instruction, read: &BTreeSet<Location>) -> Vec<Location> {
    if instr.op.is_string() {
        return read.iter().copied().collect();
    }
    match instr.op {
        Op::Jcc(c) => c.flags().iter().map(|f| Location::Flag(*f)).collect(),
        Op::Jmp => Vec::new(),
        _ => instr
            .mem_operand()
            .map(|m| m.regs().map(Location::Reg).collect())
            .unwrap_or_default(),
    }
}

impl Tracker for DepTracker {
    type Checkpoint = FnvHashMap<Location, LocSet>;

    fn checkpoint(&mut self) -> Self::Checkpoint {
        self.map.clone()
    }

    fn rollback(&mut self, cp: Self::Checkpoint) {
        self.map = cp;
    }

    fn on_step(&mut self, instr: &Instruction, events: &[ArchEvent]) {
        let sets = rw_from_events(instr, events);
        if !events.is_empty() {
            let mut obs = LocSet::empty();
            self.union_into(&mut obs, Location::Pc);
            for l in observed_locations(instr, &sets.read) {
                self.union_into(&mut obs, l);
            }
            self.dep.union_with(&obs);
        }
        if sets.write.is_empty() {
            return;
        }
        let mut src = LocSet::empty();
        for l in &sets.read {
            self.union_into(&mut src, *l);
        }
        for w in sets.write {
            self.map.insert(w, src.clone());
        }
    }
}

/// Input locations a contract trace depends on.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DepSet(pub BTreeSet<Location>);

impl DepSet {
    pub fn contains(&self, l: Location) -> bool {
        self.0.contains(&l)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Every input location: registers, flags and page bytes.
    pub fn input_locations() -> impl Iterator<Item = Location> {
        Reg::ALL
            .into_iter()
            .map(Location::Reg)
            .chain(Flag::ALL.into_iter().map(Location::Flag))
            .chain((0..PAGE_SIZE as u16).map(Location::Mem))
    }

    /// Whether the set covers every input location.
    pub fn is_total(&self) -> bool {
        self.0.len() == 6 + 4 + PAGE_SIZE
    }

    /// Sorted names, memory bytes as `mem[offset]`.
    pub fn names(&self) -> Vec<String> {
        self.0.iter().map(|l| l.to_string()).collect()
    }
}

/// Runs the contract with tracking; returns the run and its dependency set.
pub fn track(model: &ContractModel, input: &InputData) -> Result<(ContractRun, DepSet), ContractError> {
    let mut t = DepTracker::new();
    let run = model.run(input, &mut t)?;
    Ok((run, t.dep_set()))
}

pub fn trace_dependencies(
    spec: &ContractSpec,
    program: &Program,
    input: &InputData,
) -> Result<DepSet, ContractError> {
    let model = ContractModel::new(*spec, program)?;
    Ok(track(&model, input)?.1)
}
