//! The per-round pipeline and the campaign driver.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use super::config::{CampaignConfig, SEMANTICS_VERSION};
use super::report::{CampaignReport, ReportHeader, RoundRecord, Summary, Violation};
use crate::analyzer::{build_classes, confirm, detect_violations, differing_pairs, EquivalenceClass};
use crate::boost::boost;
use crate::contract::{CTrace, ContractError, ContractModel, NoTracker};
use crate::dut::{DutError, HTrace, Measurement, Simulator, UarchConfig};
use crate::filters::{serialize, speculation_verdict};
use crate::gen::{derive_seed, generate_inputs, generate_program, GenError};
use crate::isa::{InputData, Program};

/// Dependency tracking is charged at this multiple of a plain contract step.
pub const TRACKING_COST: u64 = 2;
/// Differing pairs re-measured per class before giving up.
pub const MAX_CONFIRMATIONS: usize = 4;

const NOISE_TAG: u64 = 0x6e6f_6973_65;
const BOOST_TAG: u64 = 0x626f_6f73_74 << 16;

#[derive(Debug, Error)]
pub enum RoundError {
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Dut(#[from] DutError),
    #[error(transparent)]
    Contract(#[from] ContractError),
}

pub fn round_seed(cfg: &CampaignConfig, round: usize) -> u64 {
    derive_seed(cfg.seed, round as u64 + 1)
}

fn issued(ms: &[Measurement]) -> u64 {
    ms.iter().map(|m| m.counters.uops_issued).sum()
}

/// A class whose differing pair survived re-measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Confirmed {
    pub class: usize,
    pub pair: (usize, usize),
    pub htraces: (HTrace, HTrace),
}

/// Relational analysis of one program over a fixed batch.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub ctraces: Vec<CTrace>,
    pub measurements: Vec<Measurement>,
    pub classes: Vec<EquivalenceClass>,
    pub candidates: usize,
    pub confirmed: Vec<Confirmed>,
    pub suppressed: usize,
    pub work_units: u64,
}

pub fn analyze(
    model: &ContractModel,
    sim: &mut Simulator,
    batch: &[InputData],
) -> Result<Analysis, RoundError> {
    let mut units = 0;
    let mut ctraces = Vec::with_capacity(batch.len());
    for input in batch {
        let run = model.run(input, &mut NoTracker)?;
        units += run.steps;
        ctraces.push(run.trace);
    }
    let measurements = sim.measure(batch)?;
    units += issued(&measurements);
    let htraces: Vec<HTrace> = measurements.iter().map(|m| m.htrace).collect();
    let classes = build_classes(&ctraces);
    let candidates = detect_violations(&classes, &htraces);
    let mut confirmed = Vec::new();
    let mut suppressed = 0;
    for c in &candidates {
        let mut found = None;
        for (i, j) in differing_pairs(&classes[c.class], &htraces)
            .into_iter()
            .take(MAX_CONFIRMATIONS)
        {
            let check = confirm(sim, batch, &measurements, i, j)?;
            units += check.uops;
            if check.confirmed {
                found = Some(Confirmed {
                    class: c.class,
                    pair: (i, j),
                    htraces: (htraces[i], htraces[j]),
                });
                break;
            }
        }
        match found {
            Some(f) => confirmed.push(f),
            None => suppressed += 1,
        }
    }
    Ok(Analysis {
        ctraces,
        measurements,
        classes,
        candidates: candidates.len(),
        confirmed,
        suppressed,
        work_units: units,
    })
}

/// Everything a round produced, for callers that replay or minimize it.
#[derive(Debug, Clone)]
pub struct RoundRun {
    pub record: RoundRecord,
    pub program: Option<Program>,
    /// Raw generated inputs.
    pub inputs: Vec<InputData>,
    /// Inputs given to relational analysis (empty when discarded).
    pub batch: Vec<InputData>,
}

/// Runs round `round` of the campaign described by `cfg`.
pub fn run_round(cfg: &CampaignConfig, round: usize) -> RoundRun {
    let seed = round_seed(cfg, round);
    let mut run = RoundRun {
        record: RoundRecord {
            round,
            seed,
            ..Default::default()
        },
        program: None,
        inputs: Vec::new(),
        batch: Vec::new(),
    };
    if let Err(e) = round_inner(cfg, seed, &mut run) {
        run.record.analyzed = false;
        run.record.error = Some(e.to_string());
    }
    run
}

fn round_inner(cfg: &CampaignConfig, seed: u64, run: &mut RoundRun) -> Result<(), RoundError> {
    let g = cfg.gen_config(seed);
    let program = generate_program(&g)?;
    let inputs = generate_inputs(cfg.inputs_per_program, &g);
    run.program = Some(program.clone());
    run.inputs = inputs.clone();
    let rec = &mut run.record;
    let mut sim = Simulator::new(&program, &cfg.uarch)?.with_noise_seed(derive_seed(seed, NOISE_TAG));

    if cfg.enable_speculation_filter || cfg.enable_observation_filter {
        let raw = sim.measure(&inputs)?;
        rec.work_units += issued(&raw);
        if cfg.enable_speculation_filter {
            let v = speculation_verdict(&raw);
            rec.speculation_filter = Some(v);
            if !v.keep {
                return Ok(());
            }
        }
        if cfg.enable_observation_filter {
            let ser = serialize(&program);
            let fenced = Simulator::new(&ser, &cfg.uarch)?
                .with_noise_seed(derive_seed(seed, NOISE_TAG + 1))
                .measure(&inputs)?;
            rec.work_units += issued(&fenced);
            let keep = raw.iter().zip(&fenced).any(|(a, b)| a.htrace != b.htrace);
            rec.observation_filter = Some(keep);
            if !keep {
                return Ok(());
            }
        }
    }

    let model = ContractModel::new(cfg.contract(), &program)?;
    let mut batch = Vec::new();
    let mut groups = Vec::new();
    if cfg.cig_enabled() {
        for (i, input) in inputs.iter().enumerate() {
            let b = boost(
                &model,
                input,
                cfg.inputs_per_class,
                derive_seed(seed, BOOST_TAG + i as u64),
                cfg.input_gen_entropy_bits,
            )?;
            rec.work_units += TRACKING_COST * b.steps;
            rec.degenerate_classes += b.degenerate as usize;
            groups.push(batch.len()..batch.len() + 1 + b.siblings.len());
            batch.push(input.clone());
            batch.extend(b.siblings);
        }
    } else {
        batch = inputs;
    }

    let a = analyze(&model, &mut sim, &batch)?;
    rec.work_units += a.work_units;
    rec.analyzed = true;
    rec.inputs = batch.len();
    rec.classes = a.classes.len();
    rec.effective_inputs = a
        .classes
        .iter()
        .filter(|c| c.effective())
        .map(|c| c.members.len())
        .sum();
    rec.cig_mismatches = groups
        .iter()
        .map(|g| {
            let head = &a.ctraces[g.start];
            a.ctraces[g.start + 1..g.end].iter().filter(|t| *t != head).count()
        })
        .sum();
    rec.candidates = a.candidates;
    rec.suppressed = a.suppressed;
    let fingerprint = cfg.fingerprint();
    let text = program.render();
    for (n, c) in a.confirmed.iter().enumerate() {
        let class = &a.classes[c.class];
        rec.violations.push(Violation {
            id: format!("{}.{}", rec.round, n),
            round: rec.round,
            campaign_seed: cfg.seed,
            round_seed: seed,
            config_fingerprint: fingerprint.clone(),
            program: text.clone(),
            pair: [c.pair.0, c.pair.1],
            inputs: [batch[c.pair.0].clone(), batch[c.pair.1].clone()],
            ctrace_hash: format!("{:016x}", class.hash),
            ctrace: class.trace.canonical_text(),
            htraces: [c.htraces.0, c.htraces.1],
        });
    }
    run.batch = batch;
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Checked between chunks of rounds; set it to stop early.
    pub stop: Option<Arc<AtomicBool>>,
    /// Run rounds on the rayon pool.
    pub sequential: bool,
}

pub fn header(cfg: &CampaignConfig) -> ReportHeader {
    ReportHeader {
        semantics_version: SEMANTICS_VERSION,
        fingerprint: cfg.fingerprint(),
        config: cfg.clone(),
    }
}

/// Runs every round, handing each record to `sink` in round order.
pub fn run_campaign_with(
    cfg: &CampaignConfig,
    opts: &RunOptions,
    mut sink: impl FnMut(&RoundRecord),
) -> CampaignReport {
    let chunk = if opts.sequential {
        1
    } else {
        4 * rayon::current_num_threads().max(1)
    };
    let mut records = Vec::with_capacity(cfg.num_programs);
    let mut interrupted = false;
    let mut start = 0;
    while start < cfg.num_programs {
        if opts.stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst)) {
            interrupted = true;
            break;
        }
        let end = (start + chunk).min(cfg.num_programs);
        let batch: Vec<RoundRecord> = if opts.sequential {
            (start..end).map(|r| run_round(cfg, r).record).collect()
        } else {
            (start..end)
                .into_par_iter()
                .map(|r| run_round(cfg, r).record)
                .collect()
        };
        for r in batch {
            sink(&r);
            records.push(r);
        }
        start = end;
    }
    let summary = Summary::from_records(&records, interrupted);
    CampaignReport {
        header: header(cfg),
        records,
        summary,
    }
}

pub fn run_campaign(cfg: &CampaignConfig) -> CampaignReport {
    run_campaign_with(cfg, &RunOptions::default(), |_| {})
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReproduceError {
    #[error("no violation `{0}` in the report")]
    UnknownViolation(String),
    #[error("seed or fingerprint mismatch: {0}")]
    SeedMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Confirmed,
    Refuted,
}

/// Regenerates the violating round and checks that the same pair still
/// violates. `uarch` overrides the recorded simulator settings.
pub fn reproduce(
    report: &CampaignReport,
    id: &str,
    uarch: Option<&UarchConfig>,
) -> Result<Verdict, ReproduceError> {
    let v = report
        .find(id)
        .ok_or_else(|| ReproduceError::UnknownViolation(id.to_string()))?;
    let h = &report.header;
    if h.semantics_version != SEMANTICS_VERSION {
        return Err(ReproduceError::SeedMismatch(format!(
            "report semantics version {} differs from {}",
            h.semantics_version, SEMANTICS_VERSION
        )));
    }
    let fp = h.config.fingerprint();
    if h.fingerprint != fp || v.config_fingerprint != fp {
        return Err(ReproduceError::SeedMismatch(
            "config fingerprint differs from the recorded one".into(),
        ));
    }
    if v.campaign_seed != h.config.seed || v.round_seed != round_seed(&h.config, v.round) {
        return Err(ReproduceError::SeedMismatch(format!(
            "seeds of {} do not derive from the campaign seed",
            id
        )));
    }
    let mut cfg = h.config.clone();
    if let Some(u) = uarch {
        cfg.uarch = u.clone();
    }
    let run = run_round(&cfg, v.round);
    let hit = run
        .record
        .violations
        .iter()
        .any(|w| w.pair == v.pair && w.htraces == v.htraces);
    Ok(if hit { Verdict::Confirmed } else { Verdict::Refuted })
}

/// Parses a `<round>.<n>` violation id.
pub fn parse_violation_id(id: &str) -> Option<(usize, usize)> {
    let (r, n) = id.split_once('.')?;
    Some((r.parse().ok()?, n.parse().ok()?))
}
