//! Hand-written reproducers, one per leak clause.
//!
//! Each fixture is a program in the canonical text format. Lines starting
//! with `#!` carry the inputs and the expected outcome:
//!
//! ```text
//! #! clause: store_bypass
//! #! expect: 0 1
//! #! input: RB=8 RC=0x40 q[0x8]=0x800
//! ```
//!
//! Memory is written with `b[..]`, `w[..]`, `d[..]` or `q[..]` (1, 2, 4 or
//! 8 bytes, little-endian). Unset state is zero.

use thiserror::Error;

use crate::campaign::{analyze, RoundError};
use crate::contract::{ContractModel, ContractSpec};
use crate::dut::{Clause, Simulator, UarchConfig};
use crate::filters::{observation_verdict, speculation_verdict};
use crate::isa::{parse_program, InputData, Program, RegView, PAGE_SIZE};

pub const IDS: [&str; 6] = ["v1", "v4", "lvi_null", "zdi", "sco_repne", "sco_scas"];

const SOURCES: [(&str, &str); 6] = [
    ("v1", include_str!("../fixtures/v1.asm")),
    ("v4", include_str!("../fixtures/v4.asm")),
    ("lvi_null", include_str!("../fixtures/lvi_null.asm")),
    ("zdi", include_str!("../fixtures/zdi.asm")),
    ("sco_repne", include_str!("../fixtures/sco_repne.asm")),
    ("sco_scas", include_str!("../fixtures/sco_scas.asm")),
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FixtureError {
    #[error("line {line}: {message}")]
    Directive { line: usize, message: String },
    #[error("missing `#! {0}` directive")]
    Missing(&'static str),
    #[error(transparent)]
    Program(#[from] crate::isa::ParseError),
}

/// What the pipeline reports on a fixture with its clause enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Expected {
    pub violation: (usize, usize),
    pub speculation_filter: bool,
    pub observation_filter: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reproducer {
    pub id: String,
    pub clause: Clause,
    pub program: Program,
    pub inputs: Vec<InputData>,
    /// Only `clause` enabled.
    pub uarch: UarchConfig,
    pub expected: Expected,
}

fn directive_err(line: usize, message: impl Into<String>) -> FixtureError {
    FixtureError::Directive {
        line,
        message: message.into(),
    }
}

fn parse_num(s: &str) -> Option<u64> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(h) => u64::from_str_radix(h, 16).ok(),
        None => s.parse().ok(),
    }
}

fn parse_input(line: usize, spec: &str) -> Result<InputData, FixtureError> {
    let mut input = InputData::default();
    for item in spec.split_whitespace() {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| directive_err(line, format!("expected key=value, got `{}`", item)))?;
        let v = parse_num(value).ok_or_else(|| directive_err(line, format!("bad number `{}`", value)))?;
        if let Some(addr) = key.strip_suffix(']') {
            let (w, addr) = addr
                .split_once('[')
                .ok_or_else(|| directive_err(line, format!("bad memory key `{}`", key)))?;
            let size = match w {
                "b" => 1,
                "w" => 2,
                "d" => 4,
                "q" => 8,
                _ => return Err(directive_err(line, format!("bad width `{}`", w))),
            };
            let a = parse_num(addr)
                .map(|a| a as usize)
                .filter(|a| a + size <= PAGE_SIZE)
                .ok_or_else(|| directive_err(line, format!("bad address `{}`", addr)))?;
            input.mem[a..a + size].copy_from_slice(&v.to_le_bytes()[..size]);
        } else {
            let view = RegView::parse(key)
                .filter(|r| r.width == crate::isa::Width::W64)
                .ok_or_else(|| directive_err(line, format!("unknown register `{}`", key)))?;
            input.set_reg(view.reg, v);
        }
    }
    Ok(input)
}

/// Parses a fixture file.
pub fn parse_fixture(id: &str, text: &str) -> Result<Reproducer, FixtureError> {
    let mut clause = None;
    let mut pair = None;
    let mut inputs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let Some(d) = raw.trim().strip_prefix("#!") else {
            continue;
        };
        let (key, rest) = d
            .split_once(':')
            .ok_or_else(|| directive_err(line, "expected `key: value`"))?;
        let rest = rest.trim();
        match key.trim() {
            "clause" => {
                clause = Some(
                    Clause::parse(rest).ok_or_else(|| directive_err(line, format!("unknown clause `{}`", rest)))?,
                )
            }
            "expect" => {
                let v: Vec<usize> = rest.split_whitespace().filter_map(|x| x.parse().ok()).collect();
                match v[..] {
                    [i, j] if i < j => pair = Some((i, j)),
                    _ => return Err(directive_err(line, "expected two increasing input indices")),
                }
            }
            "input" => inputs.push(parse_input(line, rest)?),
            other => return Err(directive_err(line, format!("unknown directive `{}`", other))),
        }
    }
    let clause = clause.ok_or(FixtureError::Missing("clause"))?;
    let violation = pair.ok_or(FixtureError::Missing("expect"))?;
    if violation.1 >= inputs.len() {
        return Err(FixtureError::Missing("input"));
    }
    Ok(Reproducer {
        id: id.to_string(),
        clause,
        program: parse_program(text)?,
        inputs,
        uarch: UarchConfig::only(clause),
        expected: Expected {
            violation,
            speculation_filter: true,
            observation_filter: true,
        },
    })
}

/// The bundled fixture `id`, if there is one.
pub fn reproducer(id: &str) -> Option<Reproducer> {
    let (id, text) = SOURCES.iter().find(|(n, _)| *n == id)?;
    Some(parse_fixture(id, text).expect("bundled fixtures parse"))
}

pub fn all() -> Vec<Reproducer> {
    IDS.iter().map(|id| reproducer(id).expect("listed fixture")).collect()
}

/// Result of running the filters and the analyzer on fixed inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub speculation_filter: bool,
    pub observation_filter: bool,
    /// Confirmed pairs.
    pub violations: Vec<(usize, usize)>,
}

/// Runs the filters and the relational analysis on `inputs` as given,
/// against CT-SEQ.
pub fn evaluate(program: &Program, inputs: &[InputData], uarch: &UarchConfig) -> Result<Outcome, RoundError> {
    evaluate_with(ContractSpec::seq(), program, inputs, uarch)
}

pub fn evaluate_with(
    contract: ContractSpec,
    program: &Program,
    inputs: &[InputData],
    uarch: &UarchConfig,
) -> Result<Outcome, RoundError> {
    let mut sim = Simulator::new(program, uarch)?;
    let raw = sim.measure(inputs)?;
    let speculation_filter = speculation_verdict(&raw).keep;
    let observation_filter = observation_verdict(program, &raw, inputs, uarch)?;
    let model = ContractModel::new(contract, program)?;
    let a = analyze(&model, &mut sim, inputs)?;
    Ok(Outcome {
        speculation_filter,
        observation_filter,
        violations: a.confirmed.iter().map(|c| c.pair).collect(),
    })
}

impl Reproducer {
    pub fn run(&self, uarch: &UarchConfig) -> Result<Outcome, RoundError> {
        evaluate(&self.program, &self.inputs, uarch)
    }
}
