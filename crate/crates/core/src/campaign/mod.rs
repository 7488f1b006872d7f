//! Fuzzing campaigns: configuration, the round pipeline, reports and the
//! replay and reduction entry points built on them.

mod config;
mod report;
mod run;

pub use config::{parse_config, CampaignConfig, ConfigError, SEMANTICS_VERSION};
pub use report::{write_header, write_record, CampaignReport, ReportHeader, RoundRecord, Summary, Violation};
pub use run::{
    analyze, header, parse_violation_id, reproduce, round_seed, run_campaign, run_campaign_with,
    run_round, Analysis, Confirmed, ReproduceError, RoundError, RoundRun, RunOptions, Verdict,
    MAX_CONFIRMATIONS, TRACKING_COST,
};

use thiserror::Error;

use crate::contract::ContractModel;
use crate::dut::Simulator;
use crate::filters::speculation_verdict;
use crate::isa::{InputData, Program};
use crate::minimize::{minimize, MinimizeError};

/// What a reduced program must still do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keep {
    /// The analyzer still confirms a violation on the fixed batch.
    Violation,
    /// The speculation filter still keeps the raw inputs.
    Speculation,
}

#[derive(Debug, Error)]
pub enum MinimizeCaseError {
    #[error("malformed violation id `{0}`")]
    BadId(String),
    #[error("round {0} produced no violation with that id")]
    NotFound(usize),
    #[error(transparent)]
    Minimize(#[from] MinimizeError),
}

/// True when analysis of `program` over `batch` confirms a violation.
pub fn still_violates(cfg: &CampaignConfig, program: &Program, batch: &[InputData]) -> bool {
    let Ok(model) = ContractModel::new(cfg.contract(), program) else {
        return false;
    };
    let Ok(mut sim) = Simulator::new(program, &cfg.uarch) else {
        return false;
    };
    analyze(&model, &mut sim, batch).is_ok_and(|a| !a.confirmed.is_empty())
}

/// True when some input shows transient execution.
pub fn still_speculates(cfg: &CampaignConfig, program: &Program, inputs: &[InputData]) -> bool {
    Simulator::new(program, &cfg.uarch)
        .and_then(|mut s| s.measure(inputs))
        .is_ok_and(|m| speculation_verdict(&m).keep)
}

/// Regenerates the round of violation `id` and reduces its program.
pub fn minimize_violation(
    cfg: &CampaignConfig,
    id: &str,
    keep: Keep,
) -> Result<Program, MinimizeCaseError> {
    let (round, n) = parse_violation_id(id).ok_or_else(|| MinimizeCaseError::BadId(id.into()))?;
    let run = run_round(cfg, round);
    if run.record.violations.len() <= n {
        return Err(MinimizeCaseError::NotFound(round));
    }
    let program = run.program.expect("violating round has a program");
    let reduced = match keep {
        Keep::Violation => minimize(&program, &run.batch, |p, b| still_violates(cfg, p, b))?,
        Keep::Speculation => minimize(&program, &run.inputs, |p, i| still_speculates(cfg, p, i))?,
    };
    Ok(reduced)
}
