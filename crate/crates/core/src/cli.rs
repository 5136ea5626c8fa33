//! `kia` command line: `gen`, `run`, `sweep`, `verify`, `replay`.
//!
//! Exit codes: 0 when the checked properties hold, 1 on a property violation,
//! 2 on usage, config or I/O errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversary::{
    check_primary_uniform, gen_backbone, gen_computation, insert_noncomm_states, scenarios, worst_case_schedule,
};
use crate::engine::{diagnostics_jsonl, longest_output_time, run, verify, RunConfig, Trace, Verdict};
use crate::experiment::{run_sweep, summarize, sweep_csv, ExperimentConfig, Settings};
use crate::graph::{MinKnotSize, StateIndex};
use crate::schedule::Schedule;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VIOLATION: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "kia", version, about = "Knot identification in dynamic networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a schedule file.
    Gen(GenArgs),
    /// Run one schedule and write its trace.
    Run(RunArgs),
    /// Sweep cycle sizes and links per round over seeded computations.
    Sweep(SweepArgs),
    /// Check whether all processes share the same primary knot.
    Verify(VerifyArgs),
    /// Re-run a saved schedule, optionally comparing against a saved trace.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleKind {
    /// Random links sampled from a cycle-of-trees backbone.
    Backbone,
    /// The slowest possible single-chain schedule.
    WorstCase,
    /// Five processes where a knot forms, dies and a larger one forms.
    KnotFormation,
    /// Two 2-cycles that never communicate.
    DisjointCycles,
}

#[derive(Debug, Clone, Args)]
pub struct GeneratorArgs {
    #[arg(long, value_enum, default_value_t = ScheduleKind::Backbone)]
    pub kind: ScheduleKind,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub cycle_size: usize,
    #[arg(long, default_value_t = 5)]
    pub edges_per_round: usize,
    #[arg(long, default_value_t = 6000)]
    pub horizon: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Insert this many non-communicating states at random positions.
    #[arg(long, default_value_t = 0)]
    pub pad: usize,
    #[arg(long, default_value_t = 0)]
    pub pad_seed: u64,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub generator: GeneratorArgs,
    /// Output file; stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Schedule file. Without it a schedule is generated from the flags.
    pub schedule: Option<PathBuf>,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[arg(long, default_value_t = 2)]
    pub min_knot_size: usize,
    /// Directory for trace.csv, rounds.csv and diagnostics.jsonl.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// key=value config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    /// `4,12,24`, `2..100` or `2..100:step`.
    #[arg(long)]
    pub cycle_size: Option<String>,
    /// Comma-separated list.
    #[arg(long)]
    pub edges_per_round: Option<String>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub num_seeds: Option<usize>,
    #[arg(long)]
    pub base_seed: Option<u64>,
    #[arg(long)]
    pub min_knot_size: Option<usize>,
    /// CSV output file; stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long, env = "KIA_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub schedule: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub min_knot_size: usize,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub schedule: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub min_knot_size: usize,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// A previously written trace.csv that the replay must reproduce exactly.
    #[arg(long)]
    pub expect: Option<PathBuf>,
}

/// Parses arguments and runs the command, mapping errors to exit code 2.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command, &mut std::io::stdout().lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<u8> {
    match command {
        Command::Gen(args) => cmd_gen(&args, out),
        Command::Run(args) => cmd_run(&args, out),
        Command::Sweep(args) => cmd_sweep(&args, out),
        Command::Verify(args) => cmd_verify(&args, out),
        Command::Replay(args) => cmd_replay(&args, out),
    }
}

fn min_knot_size(size: usize) -> Result<MinKnotSize> {
    Ok(MinKnotSize::new(size)?)
}

pub fn generate(args: &GeneratorArgs) -> Result<Schedule> {
    let schedule = match args.kind {
        ScheduleKind::Backbone => {
            let backbone = gen_backbone(args.n, args.cycle_size, args.seed)?;
            gen_computation(&backbone, args.edges_per_round, args.horizon, args.seed)?
        }
        ScheduleKind::WorstCase => worst_case_schedule(args.n)?,
        ScheduleKind::KnotFormation => scenarios::knot_formation(),
        ScheduleKind::DisjointCycles => scenarios::disjoint_two_cycles(),
    };
    if args.pad == 0 {
        return Ok(schedule);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.pad_seed);
    let positions: Vec<StateIndex> = (0..args.pad)
        .map(|_| rng.gen_range(0..=schedule.horizon()))
        .collect();
    Ok(insert_noncomm_states(&schedule, &positions)?)
}

fn load_schedule(path: &Path) -> Result<Schedule> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Schedule::from_text(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_output(path: Option<&Path>, text: &str, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(out.write_all(text.as_bytes())?),
    }
}

pub fn cmd_gen(args: &GenArgs, out: &mut dyn Write) -> Result<u8> {
    let schedule = generate(&args.generator)?;
    write_output(args.output.as_deref(), &schedule.to_text(), out)?;
    Ok(EXIT_OK)
}

fn write_trace_files(dir: &Path, trace: &Trace, verdict: &Verdict) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("trace.csv"), trace.outputs_csv())?;
    fs::write(dir.join("rounds.csv"), trace.rounds_csv())?;
    fs::write(dir.join("diagnostics.jsonl"), diagnostics_jsonl(&verdict.diagnostics))?;
    Ok(())
}

fn report_verdict(trace: &Trace, verdict: &Verdict, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "processes: {}  states: {}", trace.n, trace.horizon)?;
    writeln!(out, "agreement: {}", verdict.agreement)?;
    writeln!(out, "termination: {}", verdict.termination)?;
    match &verdict.knot {
        Some(k) => writeln!(out, "knot: {k}")?,
        None => writeln!(out, "knot: none")?,
    }
    match longest_output_time(trace) {
        Some(t) => writeln!(out, "longest output time: {t}")?,
        None => writeln!(out, "longest output time: none")?,
    }
    for d in &verdict.diagnostics {
        writeln!(out, "diagnostic: {d}")?;
    }
    Ok(())
}

fn run_and_report(schedule: &Schedule, min: usize, out_dir: Option<&Path>, out: &mut dyn Write) -> Result<(Trace, u8)> {
    let trace = run(
        schedule,
        RunConfig {
            min_knot_size: min_knot_size(min)?,
            stop_when_decided: false,
        },
    )?;
    let verdict = verify(&trace);
    if let Some(dir) = out_dir {
        write_trace_files(dir, &trace, &verdict)?;
    }
    report_verdict(&trace, &verdict, out)?;
    let code = if verdict.holds() { EXIT_OK } else { EXIT_VIOLATION };
    Ok((trace, code))
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<u8> {
    let schedule = match &args.schedule {
        Some(path) => load_schedule(path)?,
        None => generate(&args.generator)?,
    };
    let (_, code) = run_and_report(&schedule, args.min_knot_size, args.out_dir.as_deref(), out)?;
    Ok(code)
}

pub fn cmd_replay(args: &ReplayArgs, out: &mut dyn Write) -> Result<u8> {
    let schedule = load_schedule(&args.schedule)?;
    let (trace, code) = run_and_report(&schedule, args.min_knot_size, args.out_dir.as_deref(), out)?;
    if let Some(expected) = &args.expect {
        let want = fs::read_to_string(expected).with_context(|| format!("reading {}", expected.display()))?;
        if want != trace.outputs_csv() {
            writeln!(out, "replay: trace differs from {}", expected.display())?;
            return Ok(EXIT_VIOLATION);
        }
        writeln!(out, "replay: trace matches {}", expected.display())?;
    }
    Ok(code)
}

pub fn sweep_config(args: &SweepArgs) -> Result<ExperimentConfig> {
    let mut settings = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Settings::parse(&text)?
        }
        None => Settings::default(),
    };
    let mut flags = Settings::default();
    let mut put = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            flags.set(key, v);
        }
    };
    put("n", args.n.map(|v| v.to_string()));
    put("cycle_size", args.cycle_size.clone());
    put("edges_per_round", args.edges_per_round.clone());
    put("horizon", args.horizon.map(|v| v.to_string()));
    put("num_seeds", args.num_seeds.map(|v| v.to_string()));
    put("base_seed", args.base_seed.map(|v| v.to_string()));
    put("min_knot_size", args.min_knot_size.map(|v| v.to_string()));
    put("output", args.output.as_ref().map(|p| p.display().to_string()));
    settings.overlay(&flags);
    Ok(ExperimentConfig::from_settings(&settings)?)
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<u8> {
    let config = sweep_config(args)?;
    if args.workers == Some(0) {
        bail!("workers must be positive");
    }
    let results = run_sweep(&config, args.workers)?;
    write_output(config.output.as_deref(), &sweep_csv(&config, &results), out)?;
    let ok = summarize(&results).iter().all(|s| s.agreement && s.termination);
    Ok(if ok { EXIT_OK } else { EXIT_VIOLATION })
}

pub fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write) -> Result<u8> {
    let schedule = load_schedule(&args.schedule)?;
    let report = check_primary_uniform(&schedule, min_knot_size(args.min_knot_size)?)?;
    if args.json {
        writeln!(out, "{}", serde_json::to_string(&report)?)?;
    } else {
        writeln!(out, "uniform: {}", report.uniform)?;
        for k in &report.knots {
            let scope = if k.globally_observable { "globally observable" } else { "not globally observable" };
            writeln!(out, "knot {}: observed by {}/{} ({scope})", k.knot, k.observers, schedule.n())?;
        }
        for (p, primary) in &report.per_process {
            match primary {
                Some(o) => writeln!(out, "process {p}: primary {} at state {}", o.knot, o.round)?,
                None => writeln!(out, "process {p}: no primary knot")?,
            }
        }
    }
    Ok(if report.uniform { EXIT_OK } else { EXIT_VIOLATION })
}
