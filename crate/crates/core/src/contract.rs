//! Executable leakage contracts.
//!
//! The observation clause exposes the address of every load and store and
//! the resolved target of every control-flow instruction. Under the `Cond`
//! execution clause each conditional branch is also followed down its wrong
//! target for a bounded number of instructions before execution resumes on
//! the correct one.

use std::fmt;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{
    step, validate_sandbox, ArchEvent, ArchState, Diagnostic, ExecError, InputData, Instruction,
    Op, Program, StepOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecClause {
    Seq,
    Cond,
}

impl ExecClause {
    pub fn name(self) -> &'static str {
        match self {
            ExecClause::Seq => "seq",
            ExecClause::Cond => "cond",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContractSpec {
    pub execution: ExecClause,
    /// Instructions (string iterations counted singly) per transaction.
    pub speculation_window: usize,
    pub max_nesting: usize,
}

impl ContractSpec {
    pub fn seq() -> ContractSpec {
        ContractSpec {
            execution: ExecClause::Seq,
            speculation_window: 250,
            max_nesting: 1,
        }
    }

    pub fn cond() -> ContractSpec {
        ContractSpec {
            execution: ExecClause::Cond,
            ..ContractSpec::seq()
        }
    }

    pub fn name(&self) -> String {
        format!("ct-{}", self.execution.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Observation {
    Load(u16),
    Store(u16),
    PcTarget(usize),
}

impl fmt::Display for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observation::Load(o) => write!(f, "load *{}", o),
            Observation::Store(o) => write!(f, "store *{}", o),
            Observation::PcTarget(t) => write!(f, "jump {}", t),
        }
    }
}

impl Observation {
    /// The observation an architectural event exposes, given the pc of the
    /// instruction that produced it.
    pub fn from_event(e: &ArchEvent, pc: usize) -> Observation {
        match *e {
            ArchEvent::MemRead { offset, .. } => Observation::Load(offset),
            ArchEvent::MemWrite { offset, .. } => Observation::Store(offset),
            ArchEvent::Branch { taken, target } => {
                Observation::PcTarget(if taken { target } else { pc + 1 })
            }
        }
    }
}

/// Ordered contract observations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CTrace(pub Vec<Observation>);

impl CTrace {
    /// One observation per line, each terminated by a newline.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        for o in &self.0 {
            s.push_str(&o.to_string());
            s.push('\n');
        }
        s
    }

    /// 64-bit FNV-1a of the canonical text.
    pub fn hash64(&self) -> u64 {
        let mut h = FnvHasher::default();
        h.write(self.canonical_text().as_bytes());
        h.finish()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContractError {
    #[error("program fails sandbox validation: {}", .0.iter().map(|d| d.message.as_str()).collect::<Vec<_>>().join("; "))]
    ProgramInvalid(Vec<Diagnostic>),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Hooks observing execution, used by dependency tracking.
pub trait Tracker {
    type Checkpoint;

    fn checkpoint(&mut self) -> Self::Checkpoint;
    fn rollback(&mut self, cp: Self::Checkpoint);
    /// Called after each executed instruction with the events it produced.
    fn on_step(&mut self, instr: &Instruction, events: &[ArchEvent]);
}

/// A tracker that does nothing.
pub struct NoTracker;

impl Tracker for NoTracker {
    type Checkpoint = ();
    fn checkpoint(&mut self) {}
    fn rollback(&mut self, _: ()) {}
    fn on_step(&mut self, _: &Instruction, _: &[ArchEvent]) {}
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractRun {
    pub trace: CTrace,
    /// `speculative[i]` is set when `trace.0[i]` came from a wrong path.
    pub speculative: Vec<bool>,
    pub final_state: ArchState,
    /// Instructions executed, wrong paths included.
    pub steps: u64,
}

#[derive(Debug, Clone)]
pub struct ContractModel<'p> {
    spec: ContractSpec,
    program: &'p Program,
}

impl<'p> ContractModel<'p> {
    /// Validates the program once.
    pub fn new(spec: ContractSpec, program: &'p Program) -> Result<Self, ContractError> {
        validate_sandbox(program).map_err(ContractError::ProgramInvalid)?;
        Ok(ContractModel { spec, program })
    }

    pub fn spec(&self) -> &ContractSpec {
        &self.spec
    }

    pub fn program(&self) -> &'p Program {
        self.program
    }

    pub fn collect_ctrace(&self, input: &InputData) -> Result<CTrace, ContractError> {
        Ok(self.run(input, &mut NoTracker)?.trace)
    }

    pub fn run<T: Tracker>(&self, input: &InputData, tracker: &mut T) -> Result<ContractRun, ContractError> {
        let mut ctx = Ctx {
            model: self,
            trace: Vec::new(),
            speculative: Vec::new(),
            steps: 0,
            events: Vec::new(),
        };
        let mut state = ArchState::from_input(input);
        ctx.execute(&mut state, tracker, 0, None)?;
        let (trace, speculative) = (ctx.trace, ctx.speculative);
        Ok(ContractRun {
            trace: CTrace(trace),
            speculative,
            final_state: state,
            steps: ctx.steps,
        })
    }
}

struct Ctx<'a, 'p> {
    model: &'a ContractModel<'p>,
    trace: Vec<Observation>,
    speculative: Vec<bool>,
    steps: u64,
    events: Vec<ArchEvent>,
}

impl Ctx<'_, '_> {
    /// Runs from `state.pc`. With a budget the run is a transaction: it ends
    /// at a fence, at a fault or when the budget is spent.
    fn execute<T: Tracker>(
        &mut self,
        state: &mut ArchState,
        tracker: &mut T,
        depth: usize,
        mut budget: Option<&mut usize>,
    ) -> Result<(), ExecError> {
        let program = self.model.program;
        let spec = self.model.spec;
        let transient = budget.is_some();
        while let Some(instr) = program.get(state.pc) {
            if let Some(b) = budget.as_deref() {
                if *b == 0 || instr.op == Op::Fence {
                    return Ok(());
                }
            }
            let pc = state.pc;
            let opts = StepOptions {
                max_iterations: budget.as_deref().map(|b| *b as u64),
                ..Default::default()
            };
            self.events.clear();
            let mut events = std::mem::take(&mut self.events);
            let result = step(state, instr, opts, &mut events);
            let info = match result {
                Ok(info) => info,
                Err(_) if transient => {
                    self.events = events;
                    return Ok(());
                }
                Err(e) => return Err(e),
            };
            self.steps += info.iterations.max(1);
            if let Some(b) = budget.as_deref_mut() {
                *b = b.saturating_sub(info.iterations.max(1) as usize);
            }
            for e in &events {
                self.trace.push(Observation::from_event(e, pc));
                self.speculative.push(transient);
            }
            tracker.on_step(instr, &events);
            self.events = events;

            let explore = spec.execution == ExecClause::Cond
                && matches!(instr.op, Op::Jcc(_))
                && depth < spec.max_nesting;
            if explore {
                let target = instr.target().expect("branch has a target").index;
                let mut wrong = state.clone();
                wrong.pc = if state.pc == target { pc + 1 } else { target };
                let cp = tracker.checkpoint();
                match budget.as_deref_mut() {
                    Some(b) => self.execute(&mut wrong, tracker, depth + 1, Some(b))?,
                    None => {
                        let mut window = spec.speculation_window;
                        self.execute(&mut wrong, tracker, depth + 1, Some(&mut window))?
                    }
                }
                tracker.rollback(cp);
            }
        }
        Ok(())
    }
}

/// Convenience wrapper validating the program on every call.
pub fn collect_ctrace(
    spec: &ContractSpec,
    program: &Program,
    input: &InputData,
) -> Result<CTrace, ContractError> {
    ContractModel::new(*spec, program)?.collect_ctrace(input)
}
