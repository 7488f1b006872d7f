//! End-to-end acceptance checks, one line per criterion.
//!
//! Run with `cargo test -p specleak --test acceptance -- --nocapture` to see
//! the report.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use specleak::analyzer::{build_classes, build_classes_with, detect_violations};
use specleak::campaign::{parse_config, run_campaign, run_campaign_with, CampaignConfig, CampaignReport, RunOptions};
use specleak::contract::{CTrace, ContractModel, ContractSpec, ExecClause, Observation};
use specleak::deps::{trace_dependencies, track, DepSet};
use specleak::dut::{Clause, HTrace, UarchConfig};
use specleak::filters::{observation_filter, speculation_filter};
use specleak::fixtures::{all, evaluate, reproducer};
use specleak::gen::{derive_seed, generate_inputs, generate_program, random_input, GenConfig};
use specleak::isa::{parse_program, Category, InputData, Location, Op, Reg};
use specleak::minimize::{deletion_groups, minimize, remove_group};

/// Wall-clock budget per leak-discovery campaign.
const CAMPAIGN_BUDGET: Duration = Duration::from_secs(300);
/// Speculation-filter pass rate on the cond subset: above 50%, minus 20 points of tolerance.
const COND_PASS_FLOOR: f64 = 0.50 - 0.20;
/// Required share of effective inputs under contract-driven generation.
const CIG_EFFECTIVE_FLOOR: f64 = 0.99;
/// Ceiling on the share of effective purely random inputs.
const RANDOM_EFFECTIVE_CEILING: f64 = 0.20;
/// Minimum total-time reduction from the filters on a subset that never speculates.
const FILTER_SPEEDUP_FLOOR: f64 = 2.0;
const PROGRAMS_CIG: usize = 10_000;
const PAIRS_DEP: usize = 10_000;
const MUTATIONS_DEP: usize = 10;
const BATCHES_ANALYZER: usize = 10_000;

struct Report {
    lines: Vec<(String, bool, String)>,
}

impl Report {
    fn record(&mut self, id: &str, pass: bool, detail: String) {
        println!("criterion {:<4} {}  {}", id, if pass { "PASS" } else { "FAIL" }, detail);
        self.lines.push((id.to_string(), pass, detail));
    }
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn shipped(name: &str) -> CampaignConfig {
    let text = std::fs::read_to_string(configs_dir().join(format!("{}.yaml", name))).unwrap();
    parse_config(&text).unwrap()
}

fn timed(cfg: &CampaignConfig) -> (CampaignReport, Duration) {
    let t = Instant::now();
    let r = run_campaign(cfg);
    (r, t.elapsed())
}

fn leak_discovery(rep: &mut Report) {
    for (name, clause) in [
        ("v1", Clause::CondPredictor),
        ("v4", Clause::StoreBypass),
        ("lvi", Clause::LviNull),
        ("zdi", Clause::Zdi),
        ("sco", Clause::Sco),
    ] {
        let cfg = shipped(name);
        assert_eq!(cfg.uarch.enabled_clauses(), vec![clause]);
        assert_eq!(cfg.contract().execution, ExecClause::Seq);
        assert_eq!((cfg.num_programs, cfg.inputs_per_program), (500, 50));
        let (r, t) = timed(&cfg);
        let n = r.summary.violations;
        rep.record(
            "1",
            n >= 1 && t < CAMPAIGN_BUDGET,
            format!("{} only, ct-seq, 500x50: {} violations in {:.2?}", clause.name(), n, t),
        );
    }
    let cfg = shipped("all_off");
    assert!(cfg.uarch.enabled_clauses().is_empty());
    let (r, t) = timed(&cfg);
    rep.record(
        "1",
        r.summary.violations == 0 && t < CAMPAIGN_BUDGET,
        format!("all clauses off, 500x50: {} violations in {:.2?}", r.summary.violations, t),
    );
    let cfg = shipped("v1_var");
    assert_eq!(cfg.contract().execution, ExecClause::Cond);
    let (r, t) = timed(&cfg);
    rep.record(
        "1",
        r.summary.violations == 0 && t < CAMPAIGN_BUDGET,
        format!(
            "cond_predictor only, ct-cond, 500x50: {} violations in {:.2?} (the contract permits the only enabled leak)",
            r.summary.violations, t
        ),
    );
}

fn filter_soundness(rep: &mut Report) {
    let mut off = shipped("all_off");
    off.instruction_categories = Category::ALL.into_iter().collect();
    off.basic_blocks = 2;
    off.num_programs = 1000;
    let r = run_campaign(&off);
    let pass = r.summary.speculation_filter_pass.unwrap();
    rep.record(
        "2",
        pass == 0.0 && r.summary.rounds == 1000 && r.summary.failed_rounds == 0,
        format!("all clauses off, every category, 1000 cases: pass rate {:.4}", pass),
    );
    let mut cond = shipped("v1");
    cond.num_programs = 1000;
    let r = run_campaign(&cond);
    let pass = r.summary.speculation_filter_pass.unwrap();
    rep.record(
        "2",
        pass > COND_PASS_FLOOR,
        format!("cond_predictor on, cond subset, 1000 cases: pass rate {:.4} (floor {:.2})", pass, COND_PASS_FLOOR),
    );
}

fn filter_completeness(rep: &mut Report) {
    let mut missed = Vec::new();
    for r in all() {
        let o = r.run(&r.uarch).unwrap();
        if !(o.speculation_filter && o.observation_filter) {
            missed.push(r.id.clone());
        }
    }
    rep.record(
        "3",
        missed.is_empty(),
        format!("{} fixtures, false negatives: {:?}", all().len(), missed),
    );
}

fn example_inputs() -> Vec<InputData> {
    [(10, 5), (10, 20), (40, 10), (20, 70)]
        .into_iter()
        .map(|(a, b)| {
            let mut i = InputData::default();
            i.set_reg(Reg::Ra, a);
            i.set_reg(Reg::Rb, b);
            i
        })
        .collect()
}

fn observation_cases(rep: &mut Report) {
    let cfg = UarchConfig::only(Clause::CondPredictor);
    let inputs = example_inputs();
    let no_access = parse_program("CMP RA, 10\nJNE .end\nADD RA, RB\n.end:").unwrap();
    let hidden = parse_program(
        "AND RB, 0xFFF # instrumentation\nCMP RA, 10\nJNE .l1\nMOV RA, [RB]\n.l1:\nMOV RA, [RB]",
    )
    .unwrap();
    let v1 = parse_program("AND RB, 0xFFF # instrumentation\nCMP RA, 10\nJNE .end\nMOV RA, [RB]\n.end:").unwrap();
    let a = observation_filter(&no_access, &inputs, &cfg).unwrap();
    let b = observation_filter(&hidden, &inputs, &cfg).unwrap();
    let c = observation_filter(&v1, &inputs, &cfg).unwrap();
    let spec_a = speculation_filter(&no_access, &inputs, &cfg).unwrap().keep;
    rep.record(
        "4",
        !a && !b && c && spec_a,
        format!(
            "branch without access: kept={} (speculates={}), access hidden by a later load: kept={}, bounds-check bypass: kept={}",
            a, spec_a, b, c
        ),
    );
}

fn cig_guarantee(rep: &mut Report) {
    let mut cfg = CampaignConfig {
        instruction_categories: [Category::Base, Category::Cond, Category::Strn, Category::Dmul, Category::Dxfr]
            .into_iter()
            .collect(),
        enable_speculation_filter: false,
        enable_observation_filter: false,
        inputs_per_class: 2,
        num_programs: PROGRAMS_CIG,
        inputs_per_program: 10,
        seed: 5,
        ..CampaignConfig::default()
    };
    cfg.basic_blocks = 2;
    let r = run_campaign(&cfg);
    let s = &r.summary;
    let eff = s.input_effectiveness.unwrap();
    rep.record(
        "5",
        eff >= CIG_EFFECTIVE_FLOOR && s.cig_mismatches == 0 && s.failed_rounds == 0 && s.rounds == PROGRAMS_CIG,
        format!(
            "{} programs, {} inputs: effective {:.4}, sibling trace mismatches {}, degenerate classes {}",
            s.rounds, s.analyzed_inputs, eff, s.cig_mismatches, s.degenerate_classes
        ),
    );
}

fn random_baseline(rep: &mut Report) {
    let random = CampaignConfig {
        instruction_categories: [Category::Base].into_iter().collect(),
        mem_accesses: 4,
        basic_blocks: 1,
        input_gen_entropy_bits: 16,
        enable_speculation_filter: false,
        enable_observation_filter: false,
        inputs_per_class: 1,
        num_programs: 500,
        inputs_per_program: 100,
        ..CampaignConfig::default()
    };
    let cig = CampaignConfig {
        inputs_per_class: 2,
        ..random.clone()
    };
    let a = run_campaign(&random).summary.input_effectiveness.unwrap();
    let b = run_campaign(&cig).summary.input_effectiveness.unwrap();
    rep.record(
        "6",
        a < RANDOM_EFFECTIVE_CEILING && a < b,
        format!("BB=1 Mem=4 entropy 16, 500x100: random {:.4}, contract-driven {:.4}", a, b),
    );
}

fn dependency_soundness(rep: &mut Report) {
    let changed: usize = (0..PAIRS_DEP)
        .into_par_iter()
        .map(|k| {
            let cats = [
                vec![Category::Base, Category::Cond],
                vec![Category::Base, Category::Strn, Category::Dxfr],
                vec![Category::Base, Category::Dmul, Category::Cmov, Category::Setc],
                vec![Category::Base, Category::Cond, Category::Flag, Category::Lock, Category::Atom, Category::Bit],
            ];
            let g = GenConfig::new(cats[k % 4].clone(), derive_seed(7, k as u64));
            let p = generate_program(&g).unwrap();
            let input = generate_inputs(1, &g).pop().unwrap();
            let spec = if k % 2 == 0 { ContractSpec::seq() } else { ContractSpec::cond() };
            let model = ContractModel::new(spec, &p).unwrap();
            let (run, dep) = track(&model, &input).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(8, k as u64));
            (0..MUTATIONS_DEP)
                .filter(|_| {
                    let fresh = random_input(&mut rng, g.input_entropy_bits);
                    let mut m = input.clone();
                    for l in DepSet::input_locations().filter(|l| !dep.contains(*l)) {
                        match l {
                            Location::Reg(r) => m.set_reg(r, fresh.reg(r)),
                            Location::Flag(f) => m.flags.set(f, fresh.flags.get(f)),
                            Location::Mem(o) => m.mem[o as usize] = fresh.mem[o as usize],
                            Location::Pc => {}
                        }
                    }
                    model.collect_ctrace(&m).unwrap() != run.trace
                })
                .count()
        })
        .sum();
    rep.record(
        "7",
        changed == 0,
        format!("{} pairs x {} mutations: {} trace changes", PAIRS_DEP, MUTATIONS_DEP, changed),
    );
}

fn example_four(rep: &mut Report) {
    let p = parse_program(
        "CMP RA, 10\nJNE .l1\nAND RB, 0xFF8 # instrumentation\nMOV RA, [RB]\n.l1:\nAND RA, 0xFF8 # instrumentation\nMOV RB, [RA]",
    )
    .unwrap();
    let mut i = InputData::default();
    i.set_reg(Reg::Ra, 20);
    i.set_reg(Reg::Rb, 5);
    let d = trace_dependencies(&ContractSpec::seq(), &p, &i).unwrap();
    let expect: BTreeSet<Location> = [Location::Reg(Reg::Ra)].into_iter().collect();
    rep.record("8", d.0 == expect, format!("dependencies {:?}", d.names()));
}

/// Pairs flagged by the direct definition: equal contract traces, different
/// hardware traces. Classes are formed by pairwise comparison.
fn naive(ctraces: &[CTrace], htraces: &[HTrace]) -> Vec<(usize, usize)> {
    let n = ctraces.len();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for a in 0..n {
        if seen[a] {
            continue;
        }
        let members: Vec<usize> = (a..n).filter(|&b| ctraces[b] == ctraces[a]).collect();
        for &b in &members {
            seen[b] = true;
        }
        if let Some(&b) = members.iter().find(|&&b| htraces[b] != htraces[a]) {
            out.push((a, b));
        }
    }
    out
}

fn analyzer_oracle(rep: &mut Report) {
    let disagreements: usize = (0..BATCHES_ANALYZER)
        .into_par_iter()
        .filter(|&k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(9, k as u64));
            let n = rng.random_range(1..40);
            let alphabet = rng.random_range(1..6u16);
            let ctraces: Vec<CTrace> = (0..n)
                .map(|_| {
                    let len = rng.random_range(0..3);
                    CTrace((0..len).map(|_| Observation::Load(rng.random_range(0..alphabet))).collect())
                })
                .collect();
            let htraces: Vec<HTrace> = (0..n).map(|_| HTrace(1 << rng.random_range(0..3))).collect();
            let classes = if k % 2 == 0 {
                build_classes(&ctraces)
            } else {
                build_classes_with(&ctraces, |t| t.len() as u64)
            };
            let got: Vec<(usize, usize)> = detect_violations(&classes, &htraces)
                .iter()
                .map(|c| (c.first, c.second))
                .collect();
            got != naive(&ctraces, &htraces)
        })
        .count();
    rep.record(
        "9",
        disagreements == 0,
        format!("{} batches: {} disagreements with the all-pairs check", BATCHES_ANALYZER, disagreements),
    );
}

fn minimizer_fidelity(rep: &mut Report) {
    let r = reproducer("sco_scas").unwrap();
    let holds = |p: &specleak::isa::Program, i: &[InputData]| {
        evaluate(p, i, &r.uarch).is_ok_and(|o| !o.violations.is_empty())
    };
    let m = minimize(&r.program, &r.inputs, holds).unwrap();
    let sources: Vec<String> = m
        .instructions()
        .iter()
        .filter(|i| {
            !i.instrumentation
                && (matches!(i.op, Op::Jcc(_) | Op::Div) || i.mem_operand().is_some() || i.op.is_string())
        })
        .map(|i| i.to_string())
        .collect();
    let only_scan = sources.len() == 1
        && m.instructions()
            .iter()
            .any(|i| matches!(i.op, Op::Scas(_)) && i.prefix.is_rep() && !i.instrumentation);
    let minimal = holds(&m, &r.inputs)
        && deletion_groups(&m)
            .into_iter()
            .all(|g| remove_group(&m, g).is_none_or(|q| !holds(&q, &r.inputs)));
    rep.record(
        "10",
        only_scan && minimal,
        format!(
            "{} -> {} instructions, speculation sources {:?}, 1-minimal {}",
            r.program.len(),
            m.len(),
            sources,
            minimal
        ),
    );
}

fn determinism(rep: &mut Report) {
    let mut same = true;
    let mut names = Vec::new();
    for name in ["v1", "sco", "appendix"] {
        let mut cfg = shipped(name);
        cfg.num_programs = cfg.num_programs.min(300);
        let a = run_campaign(&cfg);
        let b = run_campaign(&cfg);
        let c = run_campaign_with(
            &cfg,
            &RunOptions {
                sequential: true,
                ..Default::default()
            },
            |_| {},
        );
        let ok = a.to_jsonl() == b.to_jsonl()
            && a.to_jsonl() == c.to_jsonl()
            && a.summary_json() == b.summary_json()
            && a.summary_json() == c.summary_json();
        same &= ok;
        names.push(format!("{}={}", name, ok));
    }
    rep.record("11", same, format!("byte-identical reports across runs: {}", names.join(", ")));
}

fn speedup(rep: &mut Report) {
    let full = shipped("v1");
    let random = CampaignConfig {
        enable_speculation_filter: false,
        enable_observation_filter: false,
        inputs_per_class: 1,
        ..full.clone()
    };
    let (a, ta) = timed(&full);
    let (b, tb) = timed(&random);
    let fa = a.summary.time_to_first_violation;
    let fb = b.summary.time_to_first_violation;
    let lower = match (fa, fb) {
        (Some(x), Some(y)) => x < y,
        (Some(_), None) => true,
        _ => false,
    };
    rep.record(
        "12",
        lower,
        format!(
            "cond_predictor, seed {}: first violation after {:?} units (round {:?}) with filters and contract-driven inputs, {:?} units (round {:?}) random; wall {:.2?} vs {:.2?}",
            full.seed,
            fa,
            a.summary.first_violation_round,
            fb,
            b.summary.first_violation_round,
            ta,
            tb
        ),
    );

    let mut quiet = shipped("v1");
    quiet.instruction_categories = [Category::Base].into_iter().collect();
    quiet.basic_blocks = 1;
    let unfiltered = CampaignConfig {
        enable_speculation_filter: false,
        enable_observation_filter: false,
        ..quiet.clone()
    };
    let (a, ta) = timed(&quiet);
    let (b, tb) = timed(&unfiltered);
    let units = b.summary.work_units as f64 / a.summary.work_units as f64;
    let wall = tb.as_secs_f64() / ta.as_secs_f64();
    rep.record(
        "12",
        units >= FILTER_SPEEDUP_FLOOR && wall >= FILTER_SPEEDUP_FLOOR && a.summary.cases_analyzed == 0,
        format!(
            "no-speculation subset: filters cut work {:.1}x ({} -> {} units), wall {:.1}x ({:.2?} -> {:.2?})",
            units, b.summary.work_units, a.summary.work_units, wall, tb, ta
        ),
    );
}

#[test]
fn acceptance() {
    let mut rep = Report { lines: Vec::new() };
    leak_discovery(&mut rep);
    filter_soundness(&mut rep);
    filter_completeness(&mut rep);
    observation_cases(&mut rep);
    cig_guarantee(&mut rep);
    random_baseline(&mut rep);
    dependency_soundness(&mut rep);
    example_four(&mut rep);
    analyzer_oracle(&mut rep);
    minimizer_fidelity(&mut rep);
    determinism(&mut rep);
    speedup(&mut rep);
    let failed: Vec<String> = rep
        .lines
        .iter()
        .filter(|(_, pass, _)| !pass)
        .map(|(id, _, detail)| format!("{}: {}", id, detail))
        .collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
