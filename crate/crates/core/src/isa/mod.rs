//! The reduced x86-like instruction set and its architectural semantics.

pub mod exec;
pub mod instr;
pub mod parse;
pub mod program;
pub mod reg;
pub mod rw;
pub mod sandbox;
pub mod state;

pub use exec::{arch_step, effective_address, run_program, step, ArchEvent, ExecError, StepInfo, StepOptions};
pub use instr::{Category, Cond, Instruction, MemRef, Op, Operand, Prefix, Target};
pub use parse::{parse_instruction, parse_program, ParseError};
pub use program::{Program, ProgramError};
pub use reg::{Flag, Flags, Reg, RegView, Width};
pub use rw::{read_write_sets, rw_from_events, static_sets, Location, ReadWriteSets};
pub use sandbox::{sandbox_diagnostics, validate_sandbox, Diagnostic};
pub use state::{ArchState, InputData, PAGE_SIZE};
