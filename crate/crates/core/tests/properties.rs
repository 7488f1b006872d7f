use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use specleak::analyzer::{build_classes, detect_violations};
use specleak::boost::boost;
use specleak::campaign::{still_speculates, CampaignConfig};
use specleak::contract::{CTrace, ContractModel, ContractSpec, NoTracker, Observation};
use specleak::deps::{track, DepSet};
use specleak::dut::{measure, Clause, HTrace, Simulator, UarchConfig};
use specleak::filters::serialize;
use specleak::gen::{generate_inputs, generate_program, random_input, GenConfig};
use specleak::isa::{parse_program, run_program, ArchState, Category, InputData, Location, Program};
use specleak::minimize::{deletion_groups, minimize, remove_group};

fn categories() -> impl Strategy<Value = Vec<Category>> {
    any::<u16>().prop_map(|mask| {
        let mut v = vec![Category::Base];
        for (k, c) in Category::ALL.into_iter().enumerate() {
            if mask & (1 << k) != 0 {
                v.push(c);
            }
        }
        v
    })
}

fn gen_config() -> impl Strategy<Value = GenConfig> {
    (categories(), any::<u64>(), 4usize..40, 0usize..4, 1u32..=16).prop_map(
        |(cats, seed, size, extra_blocks, bits)| {
            let mut g = GenConfig::new(cats, seed);
            g.program_size = size;
            g.mem_accesses = size / 4;
            if g.categories.contains(&Category::Cond) {
                g.basic_blocks = (1 + extra_blocks).min(size - g.mem_accesses + 1);
            }
            g.input_entropy_bits = bits;
            g
        },
    )
}

fn uarch() -> impl Strategy<Value = UarchConfig> {
    any::<u8>().prop_map(|mask| {
        let mut u = UarchConfig::all_off();
        for (k, c) in Clause::ALL.into_iter().enumerate() {
            u.set(c, mask & (1 << k) != 0);
        }
        u
    })
}

fn case() -> impl Strategy<Value = (Program, Vec<InputData>, GenConfig)> {
    gen_config().prop_map(|g| {
        let p = generate_program(&g).expect("generator config is feasible");
        let inputs = generate_inputs(4, &g);
        (p, inputs, g)
    })
}

/// `input` with every location outside `dep` taken from `fresh`.
fn mutate_free(input: &InputData, fresh: &InputData, dep: &DepSet) -> InputData {
    let mut out = input.clone();
    for l in DepSet::input_locations().filter(|l| !dep.contains(*l)) {
        match l {
            Location::Reg(r) => out.set_reg(r, fresh.reg(r)),
            Location::Flag(f) => out.flags.set(f, fresh.flags.get(f)),
            Location::Mem(o) => out.mem[o as usize] = fresh.mem[o as usize],
            Location::Pc => {}
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn render_parse_round_trip((p, _, _) in case()) {
        let text = p.render();
        let q = parse_program(&text).unwrap();
        prop_assert_eq!(&q, &p);
        prop_assert_eq!(q.render(), text);
    }

    #[test]
    fn generation_is_deterministic(g in gen_config()) {
        prop_assert_eq!(generate_program(&g).unwrap(), generate_program(&g).unwrap());
        prop_assert_eq!(generate_inputs(3, &g), generate_inputs(3, &g));
    }

    #[test]
    fn generated_programs_use_allowed_categories((p, _, g) in case()) {
        prop_assert!(p.instructions().iter().all(|i| g.allows(i)));
        prop_assert!(ContractModel::new(ContractSpec::seq(), &p).is_ok());
    }

    #[test]
    fn dependency_soundness((p, inputs, g) in case(), cond in any::<bool>(), seed in any::<u64>()) {
        let spec = if cond { ContractSpec::cond() } else { ContractSpec::seq() };
        let model = ContractModel::new(spec, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for input in &inputs {
            let (run, dep) = track(&model, input).unwrap();
            for _ in 0..3 {
                let fresh = random_input(&mut rng, g.input_entropy_bits);
                let m = mutate_free(input, &fresh, &dep);
                prop_assert_eq!(&model.collect_ctrace(&m).unwrap(), &run.trace);
            }
        }
    }

    #[test]
    fn boosted_siblings_are_equivalent((p, inputs, g) in case(), seed in any::<u64>()) {
        let model = ContractModel::new(ContractSpec::seq(), &p).unwrap();
        for input in &inputs {
            let b = boost(&model, input, 3, seed, g.input_entropy_bits).unwrap();
            prop_assert_eq!(b.siblings.len(), 2);
            for s in &b.siblings {
                prop_assert_eq!(&model.collect_ctrace(s).unwrap(), &b.trace);
                if !b.degenerate {
                    prop_assert_ne!(s, input);
                }
            }
        }
    }

    #[test]
    fn seq_is_the_committed_part_of_cond((p, inputs, _) in case()) {
        let seq = ContractModel::new(ContractSpec::seq(), &p).unwrap();
        let cond = ContractModel::new(ContractSpec::cond(), &p).unwrap();
        for input in &inputs {
            let s = seq.run(input, &mut NoTracker).unwrap();
            let c = cond.run(input, &mut NoTracker).unwrap();
            let committed: Vec<Observation> = c
                .trace
                .0
                .iter()
                .zip(&c.speculative)
                .filter(|(_, spec)| !**spec)
                .map(|(o, _)| *o)
                .collect();
            prop_assert_eq!(&committed, &s.trace.0);
            prop_assert_eq!(&c.final_state, &s.final_state);
            prop_assert!(s.speculative.iter().all(|x| !x));
        }
    }

    #[test]
    fn dut_preserves_architectural_state((p, inputs, _) in case(), u in uarch()) {
        let mut sim = Simulator::new(&p, &u).unwrap();
        for input in &inputs {
            let (m, st) = sim.run_input(input).unwrap();
            let (expect, _) = run_program(&p, ArchState::from_input(input)).unwrap();
            prop_assert_eq!(st, expect);
            prop_assert!(m.counters.uops_issued >= m.counters.uops_retired);
            prop_assert_eq!(m.counters.transient_uops() > 0, m.counters.recovery_events > 0);
        }
    }

    #[test]
    fn all_off_matches_serialized((p, inputs, _) in case(), u in uarch()) {
        let off = measure(&p, &inputs, &UarchConfig::all_off()).unwrap();
        let fenced = measure(&serialize(&p), &inputs, &u).unwrap();
        for (a, b) in off.iter().zip(&fenced) {
            prop_assert_eq!(a.htrace, b.htrace);
            prop_assert_eq!(a.counters.recovery_events, 0);
            prop_assert_eq!(b.counters.recovery_events, 0);
        }
    }

    #[test]
    fn analyzer_matches_all_pairs(
        traces in prop::collection::vec(0u16..4, 1..24),
        sets in prop::collection::vec(0u64..3, 24),
    ) {
        let ctraces: Vec<CTrace> = traces.iter().map(|&t| CTrace(vec![Observation::Load(t)])).collect();
        let htraces: Vec<HTrace> = sets[..ctraces.len()].iter().map(|&s| HTrace(1 << s)).collect();
        let classes = build_classes(&ctraces);
        let found = detect_violations(&classes, &htraces);
        let n = ctraces.len();
        let naive = (0..n).any(|i| (i + 1..n).any(|j| ctraces[i] == ctraces[j] && htraces[i] != htraces[j]));
        prop_assert_eq!(!found.is_empty(), naive);
        for c in &found {
            prop_assert_eq!(&ctraces[c.first], &ctraces[c.second]);
            prop_assert_ne!(htraces[c.first], htraces[c.second]);
        }
        let members: usize = classes.iter().map(|c| c.members.len()).sum();
        prop_assert_eq!(members, n);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn minimized_programs_are_one_minimal((p, inputs, _) in case()) {
        let cfg = CampaignConfig::default();
        prop_assume!(still_speculates(&cfg, &p, &inputs));
        let m = minimize(&p, &inputs, |q, i| still_speculates(&cfg, q, i)).unwrap();
        prop_assert!(still_speculates(&cfg, &m, &inputs));
        prop_assert!(m.len() <= p.len());
        for g in deletion_groups(&m) {
            if let Some(q) = remove_group(&m, g) {
                prop_assert!(!still_speculates(&cfg, &q, &inputs));
            }
        }
    }
}
