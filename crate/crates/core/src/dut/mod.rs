//! Deterministic out-of-order core model used as the device under test.
//!
//! Instructions retire in program order. Before a step, each enabled leak
//! clause may open a transient transaction on a copy of the state; its
//! memory accesses reach the cache and everything else is discarded. A
//! transaction never opens another one. Clauses stay silent while the
//! pipeline is drained, which is the case at the start of every input and
//! right after a `FENCE`.

mod cache;
mod predictor;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::isa::{
    effective_address, step, validate_sandbox, ArchEvent, ArchState, Diagnostic, ExecError,
    InputData, Instruction, Op, Operand, Program, Reg, StepInfo, StepOptions, PAGE_SIZE,
};

pub use cache::CacheState;
pub use predictor::PredictorState;

/// Leak mechanisms that can be toggled independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clause {
    CondPredictor,
    StoreBypass,
    LviNull,
    Zdi,
    Sco,
}

impl Clause {
    pub const ALL: [Clause; 5] = [
        Clause::CondPredictor,
        Clause::StoreBypass,
        Clause::LviNull,
        Clause::Zdi,
        Clause::Sco,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Clause::CondPredictor => "cond_predictor",
            Clause::StoreBypass => "store_bypass",
            Clause::LviNull => "lvi_null",
            Clause::Zdi => "zdi",
            Clause::Sco => "sco",
        }
    }

    pub fn parse(s: &str) -> Option<Clause> {
        Clause::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UarchConfig {
    pub cond_predictor: bool,
    pub store_bypass: bool,
    pub lvi_null: bool,
    pub zdi: bool,
    pub sco: bool,
    /// Transient µops per transaction.
    pub speculation_window: usize,
    /// Instructions after a store during which a load may bypass it.
    pub store_bypass_delay: usize,
    /// Transient string iterations past the end of a REP loop.
    pub sco_overrun_limit: usize,
    pub cache_sets: usize,
    pub cache_ways: usize,
    pub line_size: usize,
    /// Probability of one flipped bitmap bit per measurement.
    pub noise_rate: f64,
}

impl Default for UarchConfig {
    fn default() -> Self {
        UarchConfig {
            cond_predictor: true,
            store_bypass: false,
            lvi_null: false,
            zdi: true,
            sco: true,
            speculation_window: 250,
            store_bypass_delay: 8,
            sco_overrun_limit: 8,
            cache_sets: 64,
            cache_ways: 8,
            line_size: 64,
            noise_rate: 0.0,
        }
    }
}

impl UarchConfig {
    pub fn all_off() -> UarchConfig {
        UarchConfig {
            cond_predictor: false,
            zdi: false,
            sco: false,
            ..UarchConfig::default()
        }
    }

    /// Every clause off except `c`.
    pub fn only(c: Clause) -> UarchConfig {
        let mut cfg = UarchConfig::all_off();
        cfg.set(c, true);
        cfg
    }

    pub fn enabled(&self, c: Clause) -> bool {
        match c {
            Clause::CondPredictor => self.cond_predictor,
            Clause::StoreBypass => self.store_bypass,
            Clause::LviNull => self.lvi_null,
            Clause::Zdi => self.zdi,
            Clause::Sco => self.sco,
        }
    }

    pub fn set(&mut self, c: Clause, on: bool) {
        match c {
            Clause::CondPredictor => self.cond_predictor = on,
            Clause::StoreBypass => self.store_bypass = on,
            Clause::LviNull => self.lvi_null = on,
            Clause::Zdi => self.zdi = on,
            Clause::Sco => self.sco = on,
        }
    }

    pub fn enabled_clauses(&self) -> Vec<Clause> {
        Clause::ALL.into_iter().filter(|c| self.enabled(*c)).collect()
    }

    pub fn validate(&self) -> Result<(), DutError> {
        let bad = |m: &str| Err(DutError::InvalidConfig(m.to_string()));
        if !self.cache_sets.is_power_of_two() || self.cache_sets > 64 {
            return bad("cache_sets must be a power of two no larger than 64");
        }
        if !self.cache_ways.is_power_of_two() {
            return bad("cache_ways must be a power of two");
        }
        if !self.line_size.is_power_of_two() || self.line_size > PAGE_SIZE {
            return bad("line_size must be a power of two no larger than the page");
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad("noise_rate must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DutError {
    #[error("program fails sandbox validation: {}", .0.iter().map(|d| d.message.as_str()).collect::<Vec<_>>().join("; "))]
    ProgramInvalid(Vec<Diagnostic>),
    #[error("invalid microarchitecture config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Cache-set residency after a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HTrace(pub u64);

impl HTrace {
    pub fn sets(self) -> Vec<usize> {
        (0..64).filter(|s| self.0 & (1 << s) != 0).collect()
    }
}

impl fmt::Display for HTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl Serialize for HTrace {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for HTrace {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<HTrace, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16)
            .map(HTrace)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerfCounters {
    pub uops_issued: u64,
    pub uops_retired: u64,
    pub recovery_events: u64,
}

impl PerfCounters {
    pub fn transient_uops(&self) -> u64 {
        self.uops_issued - self.uops_retired
    }

    pub fn speculated(&self) -> bool {
        self.recovery_events > 0 || self.transient_uops() > 0
    }

    pub fn add(&mut self, o: &PerfCounters) {
        self.uops_issued += o.uops_issued;
        self.uops_retired += o.uops_retired;
        self.recovery_events += o.recovery_events;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Measurement {
    pub htrace: HTrace,
    pub counters: PerfCounters,
}

/// µops charged for one executed instruction.
pub fn uop_cost(instr: &Instruction, info: &StepInfo) -> u64 {
    match instr.op {
        Op::Fence => 0,
        op if op.is_string() => info.iterations.max(1),
        Op::Mov | Op::Movzx | Op::Movsx => 1,
        _ if instr.mem_operand().is_some() => 2,
        _ => 1,
    }
}

/// Whether the explicit memory operand is read (not just written).
fn reads_memory(instr: &Instruction) -> bool {
    match instr.op {
        Op::Mov | Op::Setcc(_) => !matches!(instr.operands.first(), Some(Operand::Mem(_))),
        _ => instr.mem_operand().is_some(),
    }
}

struct StoreEntry {
    at: u64,
    offset: u16,
    old: Vec<u8>,
}

/// One simulated core running one program. Predictor state persists across
/// the inputs of a `measure` call and is reset at its start.
pub struct Simulator<'p> {
    program: &'p Program,
    cfg: UarchConfig,
    cache: CacheState,
    predictor: PredictorState,
    rng: ChaCha8Rng,
    events: Vec<ArchEvent>,
}

impl<'p> Simulator<'p> {
    pub fn new(program: &'p Program, cfg: &UarchConfig) -> Result<Simulator<'p>, DutError> {
        cfg.validate()?;
        validate_sandbox(program).map_err(DutError::ProgramInvalid)?;
        Ok(Simulator {
            program,
            cfg: cfg.clone(),
            cache: CacheState::new(cfg.cache_sets, cfg.cache_ways, cfg.line_size),
            predictor: PredictorState::new(program.len()),
            rng: ChaCha8Rng::seed_from_u64(0),
            events: Vec::new(),
        })
    }

    /// Seeds the noise source; irrelevant when `noise_rate` is 0.
    pub fn with_noise_seed(mut self, seed: u64) -> Self {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn config(&self) -> &UarchConfig {
        &self.cfg
    }

    pub fn predictor(&self) -> &PredictorState {
        &self.predictor
    }

    /// Runs `inputs` in order starting from a fresh predictor.
    pub fn measure(&mut self, inputs: &[InputData]) -> Result<Vec<Measurement>, DutError> {
        self.predictor.reset();
        inputs
            .iter()
            .map(|i| self.run_input(i).map(|(m, _)| m))
            .collect()
    }

    /// Runs one input on the current predictor state, returning the
    /// measurement and the final architectural state.
    pub fn run_input(&mut self, input: &InputData) -> Result<(Measurement, ArchState), DutError> {
        let program = self.program;
        let cfg = self.cfg.clone();
        self.cache.flush();
        let mut c = PerfCounters::default();
        let mut st = ArchState::from_input(input);
        let mut drained = true;
        let mut dirty = false;
        let mut buffer: Vec<StoreEntry> = Vec::new();
        let mut count: u64 = 0;

        while let Some(instr) = program.get(st.pc) {
            let pc = st.pc;
            if instr.op == Op::Fence {
                drained = true;
                buffer.clear();
                st.pc += 1;
                continue;
            }
            let live = !drained;
            let mem = instr.mem_operand();
            let address = match mem {
                Some(m) => Some(effective_address(&st, m)?),
                None => None,
            };

            if live {
                if let (true, Op::Jcc(cond)) = (cfg.cond_predictor, instr.op) {
                    let taken = cond.eval(&st.flags);
                    let predicted = self.predictor.predict_taken(pc);
                    if predicted != taken {
                        let mut wrong = st.clone();
                        wrong.pc = if predicted {
                            instr.target().expect("branch has a target").index
                        } else {
                            pc + 1
                        };
                        self.transient(wrong, None, true, &mut c);
                    }
                }
                if let (Some(m), Some(a)) = (mem, address) {
                    if reads_memory(instr) {
                        let w = m.width.bytes();
                        if cfg.store_bypass {
                            if let Some(v) = stale_value(&st, &buffer, count, cfg.store_bypass_delay, a, w) {
                                let opts = StepOptions {
                                    load_override: Some(v),
                                    ..Default::default()
                                };
                                self.transient(st.clone(), Some((instr, opts)), true, &mut c);
                            }
                        }
                        if cfg.lvi_null && !dirty {
                            let opts = StepOptions {
                                load_override: Some(0),
                                ..Default::default()
                            };
                            self.transient(st.clone(), Some((instr, opts)), true, &mut c);
                        }
                    }
                }
                if cfg.zdi && instr.op == Op::Div {
                    let mut z = st.clone();
                    z.set_reg(Reg::Rd, 0);
                    self.transient(z, Some((instr, StepOptions::default())), true, &mut c);
                }
            }

            let old = match (mem, address) {
                (Some(m), Some(a)) => Some((a, read_bytes(&st, a, m.width.bytes()))),
                _ => None,
            };
            self.events.clear();
            let mut events = std::mem::take(&mut self.events);
            let info = step(&mut st, instr, StepOptions::default(), &mut events)?;
            let cost = uop_cost(instr, &info);
            c.uops_issued += cost;
            c.uops_retired += cost;
            for e in &events {
                match *e {
                    ArchEvent::MemRead { offset, size } => self.cache.access(offset, size),
                    ArchEvent::MemWrite { offset, size } => {
                        self.cache.access(offset, size);
                        dirty = true;
                        if let Some((a, bytes)) = &old {
                            buffer.push(StoreEntry {
                                at: count,
                                offset: *a,
                                old: bytes.clone(),
                            });
                        }
                    }
                    ArchEvent::Branch { taken, .. } => {
                        if matches!(instr.op, Op::Jcc(_)) {
                            self.predictor.update(pc, taken);
                        }
                    }
                }
            }
            self.events = events;

            if live && cfg.sco && instr.op.is_string() && instr.prefix.is_rep() && info.exhausted {
                let mut s = st.clone();
                s.set_reg(Reg::Rc, cfg.sco_overrun_limit as u64);
                s.pc = pc;
                let opts = StepOptions {
                    max_iterations: Some(cfg.sco_overrun_limit.min(cfg.speculation_window) as u64),
                    ..Default::default()
                };
                self.transient(s, Some((instr, opts)), false, &mut c);
            }
            drained = false;
            count += 1;
        }

        let mut bitmap = self.cache.residency();
        if cfg.noise_rate > 0.0 && self.rng.random_bool(cfg.noise_rate) {
            bitmap ^= 1 << self.rng.random_range(0..cfg.cache_sets);
        }
        Ok((
            Measurement {
                htrace: HTrace(bitmap),
                counters: c,
            },
            st,
        ))
    }

    /// Executes a squashed transaction on `st`. `first` re-executes the
    /// triggering instruction with perturbed options; `run_ahead` continues
    /// past it until a fence, a fault, the end or the window.
    fn transient(
        &mut self,
        mut st: ArchState,
        first: Option<(&Instruction, StepOptions)>,
        run_ahead: bool,
        c: &mut PerfCounters,
    ) {
        let program = self.program;
        let mut budget = self.cfg.speculation_window as u64;
        let mut uops = 0u64;
        let mut events = std::mem::take(&mut self.events);
        let mut go = true;
        if let Some((instr, opts)) = first {
            if budget == 0 {
                go = false;
            } else {
                events.clear();
                match step(&mut st, instr, opts, &mut events) {
                    Ok(info) => {
                        let k = uop_cost(instr, &info);
                        uops += k;
                        budget = budget.saturating_sub(k);
                        self.touch(&events);
                    }
                    Err(_) => go = false,
                }
            }
        }
        while go && run_ahead && budget > 0 {
            let Some(instr) = program.get(st.pc).filter(|i| i.op != Op::Fence) else {
                break;
            };
            events.clear();
            let opts = StepOptions {
                max_iterations: Some(budget),
                ..Default::default()
            };
            match step(&mut st, instr, opts, &mut events) {
                Ok(info) => {
                    let k = uop_cost(instr, &info);
                    uops += k;
                    budget = budget.saturating_sub(k);
                    self.touch(&events);
                }
                Err(_) => break,
            }
        }
        self.events = events;
        if uops > 0 {
            c.uops_issued += uops;
            c.recovery_events += 1;
        }
    }

    fn touch(&mut self, events: &[ArchEvent]) {
        for e in events {
            match *e {
                ArchEvent::MemRead { offset, size } | ArchEvent::MemWrite { offset, size } => {
                    self.cache.access(offset, size)
                }
                ArchEvent::Branch { .. } => {}
            }
        }
    }
}

fn read_bytes(st: &ArchState, a: u16, n: u64) -> Vec<u8> {
    (0..n as usize).map(|i| st.mem[(a as usize + i) % PAGE_SIZE]).collect()
}

/// Value the load at `a` would see if recent overlapping stores had not
/// happened yet; `None` when no such store exists.
fn stale_value(
    st: &ArchState,
    buffer: &[StoreEntry],
    now: u64,
    delay: usize,
    a: u16,
    width: u64,
) -> Option<u64> {
    let mut bytes = read_bytes(st, a, width);
    let mut hit = false;
    for e in buffer.iter().rev() {
        if now - e.at > delay as u64 {
            break;
        }
        for (k, b) in e.old.iter().enumerate() {
            let off = (e.offset as usize + k) % PAGE_SIZE;
            let rel = (off + PAGE_SIZE - a as usize) % PAGE_SIZE;
            if rel < width as usize {
                bytes[rel] = *b;
                hit = true;
            }
        }
    }
    hit.then(|| bytes.iter().rev().fold(0u64, |acc, b| (acc << 8) | *b as u64))
}

/// Measures `inputs` on a fresh simulator.
pub fn measure(
    program: &Program,
    inputs: &[InputData],
    cfg: &UarchConfig,
) -> Result<Vec<Measurement>, DutError> {
    Simulator::new(program, cfg)?.measure(inputs)
}
