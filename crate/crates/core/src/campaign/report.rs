//! Report records, aggregate metrics and the JSONL log format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::config::CampaignConfig;
use crate::dut::HTrace;
use crate::filters::SpeculationVerdict;
use crate::isa::InputData;

/// A confirmed counterexample with everything needed to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// `<round>.<n>`.
    pub id: String,
    pub round: usize,
    pub campaign_seed: u64,
    pub round_seed: u64,
    pub config_fingerprint: String,
    pub program: String,
    pub pair: [usize; 2],
    pub inputs: [InputData; 2],
    pub ctrace_hash: String,
    pub ctrace: String,
    pub htraces: [HTrace; 2],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub seed: u64,
    /// Present when the filter ran.
    pub speculation_filter: Option<SpeculationVerdict>,
    pub observation_filter: Option<bool>,
    pub analyzed: bool,
    /// Size of the analyzed batch.
    pub inputs: usize,
    pub classes: usize,
    pub effective_inputs: usize,
    pub degenerate_classes: usize,
    /// Boosted siblings whose trace differs from their original's.
    pub cig_mismatches: usize,
    pub candidates: usize,
    /// Candidates that did not survive re-measurement.
    pub suppressed: usize,
    pub violations: Vec<Violation>,
    pub work_units: u64,
    pub error: Option<String>,
}

/// Aggregate metrics; always recomputed from the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rounds: usize,
    pub cases_discarded: usize,
    pub cases_analyzed: usize,
    pub failed_rounds: usize,
    pub speculation_filter_pass: Option<f64>,
    pub observation_filter_pass: Option<f64>,
    pub violations: usize,
    pub suppressed: usize,
    pub analyzed_inputs: usize,
    pub effective_inputs: usize,
    pub input_effectiveness: Option<f64>,
    pub degenerate_classes: usize,
    pub cig_mismatches: usize,
    pub work_units: u64,
    /// Test cases per million work units.
    pub testing_speed: f64,
    /// Violations per thousand test cases.
    pub detection_rate: f64,
    /// Work units per violation.
    pub detection_time: Option<f64>,
    /// Work units spent up to and including the first violating round.
    pub time_to_first_violation: Option<u64>,
    pub first_violation_round: Option<usize>,
    pub interrupted: bool,
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

impl Summary {
    pub fn from_records(records: &[RoundRecord], interrupted: bool) -> Summary {
        let rounds = records.len();
        let analyzed = records.iter().filter(|r| r.analyzed).count();
        let failed = records.iter().filter(|r| r.error.is_some()).count();
        let spec_ran: Vec<bool> = records
            .iter()
            .filter_map(|r| r.speculation_filter.map(|v| v.keep))
            .collect();
        let obs_ran: Vec<bool> = records.iter().filter_map(|r| r.observation_filter).collect();
        let violations: usize = records.iter().map(|r| r.violations.len()).sum();
        let work_units: u64 = records.iter().map(|r| r.work_units).sum();
        let analyzed_inputs: usize = records.iter().map(|r| r.inputs).sum();
        let effective_inputs: usize = records.iter().map(|r| r.effective_inputs).sum();
        let mut acc = 0u64;
        let mut first = None;
        for r in records {
            acc += r.work_units;
            if !r.violations.is_empty() {
                first = Some((r.round, acc));
                break;
            }
        }
        Summary {
            rounds,
            cases_discarded: rounds - analyzed,
            cases_analyzed: analyzed,
            failed_rounds: failed,
            speculation_filter_pass: ratio(
                spec_ran.iter().filter(|k| **k).count(),
                spec_ran.len(),
            ),
            observation_filter_pass: ratio(obs_ran.iter().filter(|k| **k).count(), obs_ran.len()),
            violations,
            suppressed: records.iter().map(|r| r.suppressed).sum(),
            analyzed_inputs,
            effective_inputs,
            input_effectiveness: ratio(effective_inputs, analyzed_inputs),
            degenerate_classes: records.iter().map(|r| r.degenerate_classes).sum(),
            cig_mismatches: records.iter().map(|r| r.cig_mismatches).sum(),
            work_units,
            testing_speed: if work_units == 0 {
                0.0
            } else {
                rounds as f64 * 1e6 / work_units as f64
            },
            detection_rate: if rounds == 0 {
                0.0
            } else {
                violations as f64 * 1e3 / rounds as f64
            },
            detection_time: (violations > 0).then(|| work_units as f64 / violations as f64),
            time_to_first_violation: first.map(|f| f.1),
            first_violation_round: first.map(|f| f.0),
            interrupted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub semantics_version: u32,
    pub fingerprint: String,
    pub config: CampaignConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignReport {
    pub header: ReportHeader,
    pub records: Vec<RoundRecord>,
    pub summary: Summary,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Header(ReportHeader),
    Round(Box<RoundRecord>),
}

impl CampaignReport {
    pub fn violations(&self) -> impl Iterator<Item = &Violation> {
        self.records.iter().flat_map(|r| r.violations.iter())
    }

    pub fn find(&self, id: &str) -> Option<&Violation> {
        self.violations().find(|v| v.id == id)
    }

    pub fn write_jsonl(&self, w: &mut impl Write) -> std::io::Result<()> {
        write_header(w, &self.header)?;
        for r in &self.records {
            write_record(w, r)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes") + "\n"
    }

    /// Reads a log; the summary is recomputed from the records.
    pub fn read_jsonl(r: impl BufRead) -> Result<CampaignReport, String> {
        let mut header = None;
        let mut records = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Line>(&line)
                .map_err(|e| format!("line {}: {}", n + 1, e))?
            {
                Line::Header(h) => header = Some(h),
                Line::Round(rec) => records.push(*rec),
            }
        }
        let header = header.ok_or("report has no header line")?;
        let summary = Summary::from_records(&records, records.len() < header.config.num_programs);
        Ok(CampaignReport {
            header,
            records,
            summary,
        })
    }
}

pub fn write_header(w: &mut impl Write, h: &ReportHeader) -> std::io::Result<()> {
    let s = serde_json::to_string(&Line::Header(h.clone())).expect("header serializes");
    writeln!(w, "{}", s)
}

pub fn write_record(w: &mut impl Write, r: &RoundRecord) -> std::io::Result<()> {
    let s = serde_json::to_string(&Line::Round(Box::new(r.clone()))).expect("record serializes");
    writeln!(w, "{}", s)
}
