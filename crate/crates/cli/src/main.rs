use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use specleak::campaign::{
    minimize_violation, parse_config, reproduce, run_campaign_with, write_header, write_record,
    CampaignConfig, CampaignReport, Keep, RunOptions, Summary, Verdict,
};
use specleak::dut::Clause;

#[derive(Parser)]
#[command(name = "specleak", version, about = "Relational fuzzer for speculative leaks on a simulated core")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a campaign.
    Fuzz {
        #[arg(short, long)]
        config: PathBuf,
        /// Number of programs (overrides the config).
        #[arg(short = 'n', long)]
        num_programs: Option<usize>,
        /// Inputs per program (overrides the config).
        #[arg(short = 'i', long)]
        inputs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// JSONL report; the summary goes next to it.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run rounds one at a time.
        #[arg(long)]
        sequential: bool,
    },
    /// Shrink the program of a violation.
    Minimize {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        violation: String,
        #[arg(long, value_enum, default_value = "violation")]
        keep: KeepArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a reported violation.
    Reproduce {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        violation: String,
        /// Replay with this leak clause turned off.
        #[arg(long)]
        disable: Vec<String>,
    },
    /// Print metrics of a report.
    Stats {
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KeepArg {
    Violation,
    Speculation,
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<CampaignConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = parse_config(&text).with_context(|| format!("in {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_report(path: &Path) -> Result<CampaignReport> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    CampaignReport::read_jsonl(BufReader::new(f)).map_err(|e| anyhow::anyhow!("{}: {}", path.display(), e))
}

fn summary_path(out: &Path) -> PathBuf {
    let s = out.to_string_lossy();
    match s.strip_suffix(".jsonl") {
        Some(stem) => PathBuf::from(format!("{}.summary.json", stem)),
        None => PathBuf::from(format!("{}.summary.json", s)),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{:.4}", x))
}

fn print_stats(s: &Summary) {
    println!("test cases:            {}", s.rounds);
    println!("  analyzed:            {}", s.cases_analyzed);
    println!("  discarded:           {}", s.cases_discarded);
    println!("  failed:              {}", s.failed_rounds);
    println!("violations:            {}", s.violations);
    println!("  suppressed as noise: {}", s.suppressed);
    println!("testing speed:         {:.2} cases / 1M units", s.testing_speed);
    println!("detection rate:        {:.3} / 1000 cases", s.detection_rate);
    println!(
        "detection time:        {}",
        s.detection_time.map_or("n/a".into(), |t| format!("{:.0} units", t))
    );
    println!(
        "first violation:       {}",
        match (s.first_violation_round, s.time_to_first_violation) {
            (Some(r), Some(t)) => format!("round {} after {} units", r, t),
            _ => "n/a".into(),
        }
    );
    println!("speculation filter:    {}", fmt_opt(s.speculation_filter_pass));
    println!("observation filter:    {}", fmt_opt(s.observation_filter_pass));
    println!("input effectiveness:   {}", fmt_opt(s.input_effectiveness));
    if s.interrupted {
        println!("(interrupted)");
    }
}

fn fuzz(
    config: &Path,
    num_programs: Option<usize>,
    inputs: Option<usize>,
    seed: Option<u64>,
    out: Option<&Path>,
    sequential: bool,
) -> Result<ExitCode> {
    let mut cfg = load_config(config, seed)?;
    if let Some(n) = num_programs {
        cfg.num_programs = n;
    }
    if let Some(i) = inputs {
        cfg.inputs_per_program = i;
    }
    cfg.validate()?;

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst))
            .context("installing the interrupt handler")?;
    }
    let mut writer = match out {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            let mut w = BufWriter::new(f);
            write_header(&mut w, &specleak::campaign::header(&cfg))?;
            Some(w)
        }
        None => None,
    };
    let opts = RunOptions {
        stop: Some(stop),
        sequential,
    };
    let started = Instant::now();
    let mut io_err = None;
    let report = run_campaign_with(&cfg, &opts, |r| {
        if let Some(w) = writer.as_mut() {
            if let Err(e) = write_record(w, r).and_then(|_| w.flush()) {
                io_err.get_or_insert(e);
            }
        }
        if !r.violations.is_empty() {
            eprintln!("round {}: {} violation(s)", r.round, r.violations.len());
        }
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }
    if let Some(p) = out {
        fs::write(summary_path(p), report.summary_json())?;
    }
    print_stats(&report.summary);
    eprintln!("wall time: {:.2?}", started.elapsed());
    Ok(if report.summary.violations > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Fuzz {
            config,
            num_programs,
            inputs,
            seed,
            out,
            sequential,
        } => fuzz(&config, num_programs, inputs, seed, out.as_deref(), sequential),
        Command::Minimize {
            config,
            violation,
            keep,
            seed,
            out,
        } => {
            let cfg = load_config(&config, seed)?;
            let keep = match keep {
                KeepArg::Violation => Keep::Violation,
                KeepArg::Speculation => Keep::Speculation,
            };
            let p = minimize_violation(&cfg, &violation, keep)?;
            match out {
                Some(path) => fs::write(path, p.render())?,
                None => print!("{}", p),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Reproduce {
            report,
            violation,
            disable,
        } => {
            let rep = load_report(&report)?;
            let mut uarch = rep.header.config.uarch.clone();
            for name in &disable {
                let Some(c) = Clause::parse(name) else {
                    bail!("unknown clause `{}`", name);
                };
                uarch.set(c, false);
            }
            let overridden = !disable.is_empty();
            let verdict = reproduce(&rep, &violation, overridden.then_some(&uarch))?;
            match (verdict, overridden) {
                (Verdict::Confirmed, _) => {
                    println!("confirmed");
                    Ok(ExitCode::SUCCESS)
                }
                (Verdict::Refuted, true) => {
                    println!("refuted: clause-dependent ({})", disable.join(", "));
                    Ok(ExitCode::from(1))
                }
                (Verdict::Refuted, false) => {
                    println!("refuted");
                    Ok(ExitCode::from(1))
                }
            }
        }
        Command::Stats { report } => {
            let rep = load_report(&report)?;
            print_stats(&rep.summary);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(2)
        }
    }
}
