//! Relational analysis over contract and hardware traces.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::contract::CTrace;
use crate::dut::{DutError, HTrace, Measurement, Simulator};
use crate::isa::InputData;

/// Inputs sharing one contract trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceClass {
    pub hash: u64,
    pub trace: CTrace,
    /// Input indices in increasing order.
    pub members: Vec<usize>,
}

impl EquivalenceClass {
    pub fn effective(&self) -> bool {
        self.members.len() > 1
    }
}

pub fn build_classes(ctraces: &[CTrace]) -> Vec<EquivalenceClass> {
    build_classes_with(ctraces, CTrace::hash64)
}

/// Groups by `hash`, then splits each bucket by exact trace equality.
/// Classes are ordered by their first member.
pub fn build_classes_with(
    ctraces: &[CTrace],
    hash: impl Fn(&CTrace) -> u64,
) -> Vec<EquivalenceClass> {
    let mut buckets: HashMap<u64, Vec<usize>> = HashMap::new();
    let mut classes: Vec<EquivalenceClass> = Vec::new();
    for (i, t) in ctraces.iter().enumerate() {
        let h = hash(t);
        let bucket = buckets.entry(h).or_default();
        match bucket.iter().find(|&&c| classes[c].trace == *t) {
            Some(&c) => classes[c].members.push(i),
            None => {
                bucket.push(classes.len());
                classes.push(EquivalenceClass {
                    hash: h,
                    trace: t.clone(),
                    members: vec![i],
                });
            }
        }
    }
    classes
}

/// A pair of inputs from one class whose hardware traces differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub class: usize,
    pub first: usize,
    pub second: usize,
    pub htraces: (HTrace, HTrace),
}

/// One candidate per class with non-uniform hardware traces, naming the
/// lexicographically first differing pair.
pub fn detect_violations(classes: &[EquivalenceClass], htraces: &[HTrace]) -> Vec<Candidate> {
    classes
        .iter()
        .enumerate()
        .filter_map(|(c, class)| {
            let (&head, rest) = class.members.split_first()?;
            let other = rest.iter().copied().find(|&j| htraces[j] != htraces[head])?;
            Some(Candidate {
                class: c,
                first: head,
                second: other,
                htraces: (htraces[head], htraces[other]),
            })
        })
        .collect()
}

/// All differing pairs of a class in lexicographic order.
pub fn differing_pairs(class: &EquivalenceClass, htraces: &[HTrace]) -> Vec<(usize, usize)> {
    let m = &class.members;
    let mut out = Vec::new();
    for (a, &i) in m.iter().enumerate() {
        for &j in &m[a + 1..] {
            if htraces[i] != htraces[j] {
                out.push((i, j));
            }
        }
    }
    out
}

/// Outcome of re-measuring one differing pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Confirmation {
    pub confirmed: bool,
    /// µops issued by the re-measurement.
    pub uops: u64,
}

/// Re-measures the sequence with inputs `i < j` swapped, up to position
/// `j`. The pair is confirmed when, in both positions, the two inputs still
/// produce different bitmaps under the same predictor history.
pub fn confirm(
    sim: &mut Simulator,
    inputs: &[InputData],
    original: &[Measurement],
    i: usize,
    j: usize,
) -> Result<Confirmation, DutError> {
    let (i, j) = (i.min(j), i.max(j));
    let mut swapped = inputs[..=j].to_vec();
    swapped.swap(i, j);
    let again = sim.measure(&swapped)?;
    Ok(Confirmation {
        confirmed: again[j].htrace != original[j].htrace && again[i].htrace != original[i].htrace,
        uops: again.iter().map(|m| m.counters.uops_issued).sum(),
    })
}
