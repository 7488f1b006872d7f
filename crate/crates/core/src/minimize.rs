//! One-instruction-at-a-time test case reduction.

use thiserror::Error;

use crate::isa::{validate_sandbox, InputData, Program};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MinimizeError {
    #[error("the predicate does not hold on the initial test case")]
    PredicateUnstable,
}

/// Deletion groups: each non-instrumentation instruction together with the
/// instrumentation immediately in front of it.
pub fn deletion_groups(program: &Program) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, instr) in program.instructions().iter().enumerate() {
        if !instr.instrumentation {
            out.push(start..i + 1);
            start = i + 1;
        }
    }
    out
}

/// `program` without group `g`, if the result is still a valid program.
pub fn remove_group(program: &Program, g: std::ops::Range<usize>) -> Option<Program> {
    let p = program.without(g).ok()?;
    validate_sandbox(&p).ok()?;
    Some(p)
}

/// Removes deletion groups front to back, restarting after each success,
/// until no single removal keeps `predicate` true. Inputs stay fixed.
pub fn minimize(
    program: &Program,
    inputs: &[InputData],
    mut predicate: impl FnMut(&Program, &[InputData]) -> bool,
) -> Result<Program, MinimizeError> {
    if !predicate(program, inputs) {
        return Err(MinimizeError::PredicateUnstable);
    }
    let mut current = program.clone();
    'outer: loop {
        for g in deletion_groups(&current) {
            if let Some(p) = remove_group(&current, g) {
                if predicate(&p, inputs) {
                    current = p;
                    continue 'outer;
                }
            }
        }
        return Ok(current);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{parse_program, Op};

    #[test]
    fn groups_attach_instrumentation() {
        let p = parse_program("NOP\nAND RB, 0xFF8 # instrumentation\nMOV RA, [RB]\nNOP").unwrap();
        assert_eq!(deletion_groups(&p), vec![0..1, 1..3, 3..4]);
    }

    #[test]
    fn keeps_only_needed() {
        let p = parse_program("NOP\nADD RA, 1\nAND RB, 0xFF8 # instrumentation\nMOV RC, [RB]\nNOP").unwrap();
        let m = minimize(&p, &[], |p, _| p.instructions().iter().any(|i| i.op == Op::Mov)).unwrap();
        assert_eq!(m.render(), "AND RB, 4088 # instrumentation\nMOV RC, [RB]\n");
    }

    #[test]
    fn fixed_point_unchanged() {
        let p = parse_program("CMP RA, 10\nJNE .end\n.end:").unwrap();
        let m = minimize(&p, &[], |p, _| p.len() == 2).unwrap();
        assert_eq!(m, p);
    }

    #[test]
    fn unstable_predicate() {
        let p = parse_program("NOP").unwrap();
        assert_eq!(minimize(&p, &[], |_, _| false), Err(MinimizeError::PredicateUnstable));
    }
}
