use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::instr::Instruction;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("instruction {index}: unresolved label {label}")]
    UnresolvedLabel { index: usize, label: String },
    #[error("instruction {index}: branch to {label} does not go forward")]
    BackwardBranch { index: usize, label: String },
    #[error("label {label} points past the end of the program")]
    LabelOutOfRange { label: String },
}

/// A straight sequence of instructions with forward-only branch targets.
///
/// Labels may point at any index in `0..=len`; a label at `len` names the
/// single exit.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Program {
    instrs: Vec<Instruction>,
    labels: BTreeMap<String, usize>,
}

impl Program {
    /// Builds a program and resolves every branch target against `labels`.
    pub fn new(
        mut instrs: Vec<Instruction>,
        labels: BTreeMap<String, usize>,
    ) -> Result<Program, ProgramError> {
        for (label, &at) in &labels {
            if at > instrs.len() {
                return Err(ProgramError::LabelOutOfRange {
                    label: label.clone(),
                });
            }
        }
        for (index, instr) in instrs.iter_mut().enumerate() {
            if let Some(t) = instr.target_mut() {
                let Some(&at) = labels.get(&t.label) else {
                    return Err(ProgramError::UnresolvedLabel {
                        index,
                        label: t.label.clone(),
                    });
                };
                if at <= index {
                    return Err(ProgramError::BackwardBranch {
                        index,
                        label: t.label.clone(),
                    });
                }
                t.index = at;
            }
        }
        Ok(Program { instrs, labels })
    }

    pub fn empty() -> Program {
        Program::default()
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instrs
    }

    pub fn labels(&self) -> &BTreeMap<String, usize> {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Instruction> {
        self.instrs.get(index)
    }

    /// Number of instructions not flagged as instrumentation.
    pub fn payload_len(&self) -> usize {
        self.instrs.iter().filter(|i| !i.instrumentation).count()
    }

    /// Removes the instructions in `range`, shifting labels down.
    ///
    /// Fails if a remaining branch would become backward or self-targeting.
    pub fn without(&self, range: std::ops::Range<usize>) -> Result<Program, ProgramError> {
        let removed = range.len();
        let mut instrs = Vec::with_capacity(self.instrs.len() - removed);
        instrs.extend_from_slice(&self.instrs[..range.start]);
        instrs.extend_from_slice(&self.instrs[range.end..]);
        let labels = self
            .labels
            .iter()
            .map(|(name, &at)| {
                let at = if at >= range.end {
                    at - removed
                } else if at > range.start {
                    range.start
                } else {
                    at
                };
                (name.clone(), at)
            })
            .collect();
        Program::new(instrs, labels)
    }

    /// Labels attached to each index `0..=len`, in name order.
    pub fn labels_by_index(&self) -> Vec<Vec<&str>> {
        let mut out = vec![Vec::new(); self.instrs.len() + 1];
        for (name, &at) in &self.labels {
            out[at].push(name.as_str());
        }
        out
    }

    /// Renders the canonical text form accepted by `parse_program`.
    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let by_index = self.labels_by_index();
        for (i, names) in by_index.iter().enumerate() {
            for name in names {
                writeln!(f, "{}:", name)?;
            }
            if let Some(instr) = self.instrs.get(i) {
                writeln!(f, "{}", instr)?;
            }
        }
        Ok(())
    }
}
