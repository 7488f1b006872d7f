//! Early pruning of test cases that cannot expose a speculative leak.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dut::{DutError, Measurement, PerfCounters, Simulator, UarchConfig};
use crate::isa::{InputData, Instruction, Program};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeculationVerdict {
    pub keep: bool,
    /// Counters summed over all inputs.
    pub evidence: PerfCounters,
}

/// Verdict from measurements already taken on the unmodified program.
pub fn speculation_verdict(measurements: &[Measurement]) -> SpeculationVerdict {
    let mut evidence = PerfCounters::default();
    let mut keep = false;
    for m in measurements {
        evidence.add(&m.counters);
        keep |= m.counters.speculated();
    }
    SpeculationVerdict { keep, evidence }
}

/// Keeps the test case iff some input shows transient execution.
pub fn speculation_filter(
    program: &Program,
    inputs: &[InputData],
    cfg: &UarchConfig,
) -> Result<SpeculationVerdict, DutError> {
    let m = Simulator::new(program, cfg)?.measure(inputs)?;
    Ok(speculation_verdict(&m))
}

/// Inserts a fence after every instruction. A label at index `k > 0` moves
/// to the fence in front of instruction `k`, so a branch lands on a fence.
pub fn serialize(program: &Program) -> Program {
    let mut instrs = Vec::with_capacity(program.len() * 2);
    for i in program.instructions() {
        instrs.push(i.clone());
        instrs.push(Instruction::fence());
    }
    let labels: BTreeMap<String, usize> = program
        .labels()
        .iter()
        .map(|(n, &k)| (n.clone(), if k == 0 { 0 } else { 2 * k - 1 }))
        .collect();
    Program::new(instrs, labels).expect("serialization keeps branches forward")
}

/// Keeps the test case iff some input's bitmap differs between the program
/// and its serialized form. `original` are the program's measurements.
pub fn observation_verdict(
    program: &Program,
    original: &[Measurement],
    inputs: &[InputData],
    cfg: &UarchConfig,
) -> Result<bool, DutError> {
    let ser = serialize(program);
    let fenced = Simulator::new(&ser, cfg)?.measure(inputs)?;
    Ok(original.iter().zip(&fenced).any(|(a, b)| a.htrace != b.htrace))
}

pub fn observation_filter(
    program: &Program,
    inputs: &[InputData],
    cfg: &UarchConfig,
) -> Result<bool, DutError> {
    let m = Simulator::new(program, cfg)?.measure(inputs)?;
    observation_verdict(program, &m, inputs, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dut::Clause;
    use crate::isa::{parse_program, Op, Reg};

    fn regs(ra: u64, rb: u64) -> InputData {
        let mut i = InputData::default();
        i.set_reg(Reg::Ra, ra);
        i.set_reg(Reg::Rb, rb);
        i
    }

    fn inputs() -> Vec<InputData> {
        vec![regs(10, 5), regs(10, 20), regs(40, 10), regs(20, 70)]
    }

    #[test]
    fn serialize_shape() {
        let p = parse_program("CMP RA, 1\nJNE .a\nNOP\n.a:").unwrap();
        let s = serialize(&p);
        assert_eq!(s.len(), 6);
        assert!(s.instructions().iter().skip(1).step_by(2).all(|i| i.op == Op::Fence));
        assert_eq!(s.labels()[".a"], 5);
        assert_eq!(s.instructions()[2].target().unwrap().index, 5);
        assert!(serialize(&Program::empty()).is_empty());
    }

    #[test]
    fn example2_rejected() {
        let p = parse_program("CMP RA, 10\nJNE .end\nADD RA, RB\n.end:").unwrap();
        let cfg = UarchConfig::only(Clause::CondPredictor);
        assert!(speculation_filter(&p, &inputs(), &cfg).unwrap().keep);
        assert!(!observation_filter(&p, &inputs(), &cfg).unwrap());
    }

    #[test]
    fn example3_rejected() {
        let p = parse_program(
            "AND RB, 0xFFF # instrumentation\nCMP RA, 10\nJNE .l1\nMOV RA, [RB]\n.l1:\nMOV RA, [RB]",
        )
        .unwrap();
        let cfg = UarchConfig::only(Clause::CondPredictor);
        assert!(!observation_filter(&p, &inputs(), &cfg).unwrap());
    }

    #[test]
    fn v1_kept() {
        let p = parse_program("AND RB, 0xFFF # instrumentation\nCMP RA, 10\nJNE .end\nMOV RA, [RB]\n.end:")
            .unwrap();
        let cfg = UarchConfig::only(Clause::CondPredictor);
        assert!(speculation_filter(&p, &inputs(), &cfg).unwrap().keep);
        assert!(observation_filter(&p, &inputs(), &cfg).unwrap());
        assert!(!speculation_filter(&p, &inputs(), &UarchConfig::all_off()).unwrap().keep);
    }

    #[test]
    fn logi_straight_line_not_kept() {
        let p = parse_program("AND RA, RB\nOR RC, 7\nXOR RD, RA").unwrap();
        let v = speculation_filter(&p, &inputs(), &UarchConfig::default()).unwrap();
        assert!(!v.keep);
        assert_eq!(v.evidence.recovery_events, 0);
    }
}
