//! The `anm` command line.
//!
//! Every subcommand writes only below its `--out` directory, reads and
//! validates all inputs before writing anything, and is deterministic given
//! its inputs and `--seed`. The one exception is `timing.json`, which holds
//! wall-clock solver times and is kept out of every other file.
//!
//! Exit codes: 0 on success, 2 for invalid arguments or input files, 3 when
//! a run failed at runtime.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anm_core::bench::{generate_instance, FlexLevel, InstanceSpec};
use anm_core::mdp::{Environment, Instance};
use anm_core::planner::{perfect_info_tree, scenario_tree, Planner, PlannerSolution};
use anm_core::stochastic::{fit_series, make_synthetic_corpus, EmOptions, ProcessKind};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::clock::WallClock;
use crate::error::{Error, Result};
use crate::harness::{self, ExperimentConfig, PolicyKind, RunTrace, Timing};
use crate::io::{self, GmmFile, RunFile, SolutionFile, TreeFile};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "anm", version, about = "Active network management benchmark: fit models, generate feeders, simulate and compare policies")]
pub struct Cli {
    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit load, wind and irradiance models from CSV corpora or synthetic data.
    Fit(FitArgs),
    /// Generate a random radial test feeder.
    GenInstance(GenArgs),
    /// Simulate one run of a policy and write its trace.
    Simulate(SimulateArgs),
    /// Run the planner once on a saved state.
    Plan(PlanArgs),
    /// Compare policies over paired-seed runs.
    Benchmark(BenchmarkArgs),
    /// Render tables and plots from benchmark reports.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 15-bus feeder, 20 runs of 96 steps, horizon 8, 30 s per step.
    Desk,
    /// 75-bus feeder, 50 runs of 288 steps, horizon 15, 600 s per step.
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Flex {
    None,
    Low,
    Medium,
    High,
}

impl From<Flex> for FlexLevel {
    fn from(f: Flex) -> Self {
        match f {
            Flex::None => FlexLevel::None,
            Flex::Low => FlexLevel::Low,
            Flex::Medium => FlexLevel::Medium,
            Flex::High => FlexLevel::High,
        }
    }
}

fn parse_order(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected N,n")?;
    let n_lags: usize = a.trim().parse().map_err(|_| format!("bad history length `{a}`"))?;
    let n: usize = b.trim().parse().map_err(|_| format!("bad component count `{b}`"))?;
    if n_lags == 0 || n == 0 {
        return Err("history length and component count must be positive".into());
    }
    Ok((n_lags, n))
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Output directory for load.json, wind.json, irradiance.json and fit_log.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// CSV with a `value` column (and optionally `quarter`) of normalized consumption.
    #[arg(long)]
    pub load_corpus: Option<PathBuf>,
    /// CSV of wind speeds, m/s.
    #[arg(long)]
    pub wind_corpus: Option<PathBuf>,
    /// CSV of irradiance, W/m².
    #[arg(long)]
    pub irradiance_corpus: Option<PathBuf>,
    /// Days of synthetic data for processes without a corpus.
    #[arg(long, default_value_t = 30)]
    pub synthetic_days: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// History length and component count for load, as `N,n` [default: 2,10].
    #[arg(long, value_parser = parse_order)]
    pub load_order: Option<(usize, usize)>,
    /// As `N,n` [default: 1,1].
    #[arg(long, value_parser = parse_order)]
    pub wind_order: Option<(usize, usize)>,
    /// As `N,n` [default: 1,10].
    #[arg(long, value_parser = parse_order)]
    pub irradiance_order: Option<(usize, usize)>,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory for instance.json and spec.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// JSON instance spec; fields left out take the preset's values.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub flex: Option<Flex>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Planner and protocol settings shared by the simulating subcommands.
#[derive(Debug, Args, Clone)]
pub struct ProtocolArgs {
    /// Starting point for every setting below.
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// JSON experiment config; applied over the preset, under the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Discount factor [reference: 0.99].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Lookahead horizon T [desk: 8, reference: 15].
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Sampled trajectories per step [default: 100].
    #[arg(long)]
    pub trajectories: Option<usize>,
    /// Solver time limit per step, seconds [desk: 30, reference: 600].
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// Branch-and-bound node limit per step [desk: 16, reference: 64].
    #[arg(long)]
    pub node_limit: Option<usize>,
    #[arg(long)]
    pub rel_gap: Option<f64>,
    /// Quarter of the day (1..=96) at which runs start [default: 1].
    #[arg(long)]
    pub start_quarter: Option<u8>,
}

impl ProtocolArgs {
    fn resolve(&self, runs: Option<usize>, steps: Option<usize>) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => io::read_json(p)?,
            None => match self.preset {
                Preset::Desk => ExperimentConfig::desk(),
                Preset::Reference => ExperimentConfig::reference_scale(),
            },
        };
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(c.seed, self.seed);
        set!(c.planner.gamma, self.gamma);
        set!(c.planner.horizon, self.horizon);
        set!(c.planner.n_trajectories, self.trajectories);
        set!(c.planner.time_limit_s, self.time_limit);
        set!(c.planner.node_limit, self.node_limit);
        set!(c.planner.rel_gap, self.rel_gap);
        set!(c.start_quarter, self.start_quarter);
        set!(c.runs, runs);
        set!(c.steps, steps);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Directory holding load.json, wind.json and irradiance.json.
    #[arg(long)]
    pub models: PathBuf,
    /// noop, perfect_info or scenarios(W).
    #[arg(long, default_value = "scenarios(3)")]
    pub mode: PolicyKind,
    /// Periods to simulate [desk: 96, reference: 288].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Run index within the seed's stream family.
    #[arg(long, default_value_t = 0)]
    pub run: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub models: PathBuf,
    /// JSON system state.
    #[arg(long)]
    pub state: PathBuf,
    #[arg(long, default_value = "scenarios(3)")]
    pub mode: PolicyKind,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Instance files, one table block each, labelled by file stem. Without
    /// any, instances are generated from the preset for each `--flex` level.
    #[arg(long)]
    pub instance: Vec<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = vec![Flex::Low])]
    pub flex: Vec<Flex>,
    #[arg(long)]
    pub models: PathBuf,
    /// Comma-separated policies.
    #[arg(long, value_delimiter = ',', default_values_t = vec![PolicyKind::PerfectInfo, PolicyKind::Scenarios(3), PolicyKind::Scenarios(1)])]
    pub modes: Vec<PolicyKind>,
    /// Runs per policy [desk: 20, reference: 50].
    #[arg(long)]
    pub runs: Option<usize>,
    /// Steps per run [desk: 96, reference: 288].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Also write every run's CSV trace.
    #[arg(long)]
    pub traces: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// report.json files, or directories searched recursively for them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Ignore timing.json files and plot function evaluations instead.
    #[arg(long)]
    pub no_timing: bool,
    /// Also summarize a scenario tree dump.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            Ok(())
        }
        Err(e) => Err(Error::Argument(e.render().to_string())),
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let log = |m: &str| {
        if cli.verbose {
            eprintln!("{m}");
        }
    };
    match &cli.command {
        Command::Fit(a) => fit(a, &log),
        Command::GenInstance(a) => gen_instance(a),
        Command::Simulate(a) => simulate(a, &log),
        Command::Plan(a) => plan(a),
        Command::Benchmark(a) => benchmark(a, &log),
        Command::Report(a) => render_report(a),
    }
}

fn fit(a: &FitArgs, log: &dyn Fn(&str)) -> Result<()> {
    let opts = EmOptions { max_iter: a.max_iter, ..EmOptions::default() };
    if a.max_iter == 0 {
        return Err(Error::Argument("max-iter must be positive".into()));
    }
    let sources = [
        (ProcessKind::Load, &a.load_corpus, a.load_order),
        (ProcessKind::Wind, &a.wind_corpus, a.wind_order),
        (ProcessKind::Irradiance, &a.irradiance_corpus, a.irradiance_order),
    ];
    let mut corpora = Vec::new();
    for (kind, path, _) in &sources {
        corpora.push(match path {
            Some(p) => io::read_corpus(p)?,
            None => {
                if a.synthetic_days == 0 {
                    return Err(Error::Argument("synthetic-days must be positive".into()));
                }
                io::Corpus { first_quarter: 1, values: make_synthetic_corpus(*kind, a.synthetic_days, a.seed) }
            }
        });
    }
    let mut files = Vec::new();
    for ((kind, path, order), corpus) in sources.iter().zip(&corpora) {
        let (lags, n) = order.unwrap_or(kind.default_order());
        log(&format!("fitting {} (N={lags}, n={n}) on {} values", kind.name(), corpus.values.len()));
        let (model, fit) = fit_series(&corpus.values, corpus.first_quarter, lags, n, a.seed, &opts).map_err(|e| match path {
            Some(p) => Error::input(p, e.to_string()),
            None => Error::Core(e),
        })?;
        files.push(GmmFile { format: io::GMM_FORMAT.into(), kind: *kind, order: (lags, n), seed: a.seed, model: model.params().clone(), fit: Some(fit) });
    }
    let mut log_csv = csv::Writer::from_writer(Vec::new());
    log_csv.write_record(["kind", "iteration", "log_likelihood"]).expect("in memory");
    for f in &files {
        for (i, ll) in f.fit.as_ref().map(|r| r.log_likelihood.as_slice()).unwrap_or(&[]).iter().enumerate() {
            log_csv.write_record([f.kind.name().to_string(), i.to_string(), ll.to_string()]).expect("in memory");
        }
    }
    for f in &files {
        io::write_json(&io::model_path(&a.out, f.kind), f)?;
    }
    io::write_atomic(&a.out.join("fit_log.csv"), &log_csv.into_inner().expect("in memory"))
}

fn gen_instance(a: &GenArgs) -> Result<()> {
    let mut spec: InstanceSpec = match &a.spec {
        Some(p) => io::read_json(p)?,
        None => match a.preset {
            Preset::Desk => InstanceSpec::desk(),
            Preset::Reference => InstanceSpec::reference_scale(),
        },
    };
    if let Some(f) = a.flex {
        spec.flex_level = f.into();
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate().map_err(|e| Error::Argument(e.to_string()))?;
    let inst = generate_instance(&spec)?;
    io::write_json(&a.out.join("spec.json"), &spec)?;
    io::write_instance(&a.out.join("instance.json"), &inst)
}

fn load_env(instance: &Path, models: &Path) -> Result<Environment> {
    Ok(Environment::new(io::read_instance(instance)?, io::read_models(models)?))
}

fn v_limits(inst: &Instance) -> (f64, f64) {
    let b = &inst.network().buses;
    (b.iter().map(|b| b.v_min).fold(f64::INFINITY, f64::min), b.iter().map(|b| b.v_max).fold(0.0, f64::max))
}

#[derive(Serialize)]
struct TimingFile<'a> {
    note: &'a str,
    timings: Vec<Timing>,
}

const TIMING_NOTE: &str = "wall-clock planner seconds per step; not reproducible";

fn simulate(a: &SimulateArgs, log: &dyn Fn(&str)) -> Result<()> {
    let config = a.protocol.resolve(Some(1), a.steps)?;
    let env = load_env(&a.instance, &a.models)?;
    log(&format!("simulating {} for {} steps", a.mode, config.steps));
    let trace = harness::simulate_run(&env, a.mode, &config, a.run, &WallClock::new());
    let RunTrace { summary, records, solve_times, .. } = trace;
    io::write_atomic(&a.out.join("trace.csv"), &io::trace_csv(&records))?;
    let title = format!("{} run {} (seed {})", a.mode, a.run, config.seed);
    io::write_atomic(&a.out.join("trace.svg"), report::trace_svg(&title, &records, v_limits(&env.instance)).as_bytes())?;
    let timing = Timing { policy: a.mode, label: stem(&a.instance), solve_times: vec![solve_times] };
    io::write_json(&a.out.join("timing.json"), &TimingFile { note: TIMING_NOTE, timings: vec![timing] })?;
    let failure = summary.failure.clone();
    io::write_json(&a.out.join("summary.json"), &RunFile { format: io::RUN_FORMAT.into(), policy: a.mode, config, summary })?;
    match failure {
        Some(f) => Err(Error::Runtime(f)),
        None => Ok(()),
    }
}

fn plan(a: &PlanArgs) -> Result<()> {
    let config = a.protocol.resolve(Some(1), Some(1))?;
    let env = load_env(&a.instance, &a.models)?;
    let state = io::read_state(&a.state, &env.instance)?;
    let Some(mode) = a.mode.planner_mode() else {
        return Err(Error::Argument("plan needs perfect_info or scenarios(W)".into()));
    };
    let seed = config.seed;
    let future = harness::exogenous_draws(&env, seed, 0, config.planner.horizon);
    let tree = match a.mode {
        PolicyKind::PerfectInfo => perfect_info_tree(&env, &state, &future)?,
        PolicyKind::Scenarios(w) => scenario_tree(&env, &state, w, &config.planner, seed)?,
        PolicyKind::Noop => unreachable!(),
    };
    let mut planner = Planner::new(mode, config.planner);
    let sol: PlannerSolution = planner.act(&env, &state, seed, Some(&future), &WallClock::new())?;
    let timing = Timing { policy: a.mode, label: stem(&a.instance), solve_times: vec![vec![sol.wall_time_s]] };
    let solution = PlannerSolution { wall_time_s: 0.0, ..sol };
    io::write_json(&a.out.join("tree.json"), &TreeFile { format: io::TREE_FORMAT.into(), quarter: state.quarter, tree })?;
    io::write_json(&a.out.join("timing.json"), &TimingFile { note: TIMING_NOTE, timings: vec![timing] })?;
    io::write_json(&a.out.join("solution.json"), &SolutionFile { format: io::SOLUTION_FORMAT.into(), policy: a.mode, solution })
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "instance".into(), |s| s.to_string_lossy().into_owned())
}

/// Directory name of a policy: `scenarios(3)` becomes `scenarios-3`.
pub fn policy_dir(p: PolicyKind) -> String {
    match p {
        PolicyKind::Scenarios(w) => format!("scenarios-{w}"),
        other => other.to_string(),
    }
}

fn benchmark(a: &BenchmarkArgs, log: &dyn Fn(&str)) -> Result<()> {
    let config = a.protocol.resolve(a.runs, a.steps)?;
    if a.modes.is_empty() {
        return Err(Error::Argument("no modes given".into()));
    }
    let models = io::read_models(&a.models)?;
    let mut instances: Vec<(String, Instance)> = Vec::new();
    if a.instance.is_empty() {
        for &f in &a.flex {
            let base = match a.protocol.preset {
                Preset::Desk => InstanceSpec::desk(),
                Preset::Reference => InstanceSpec::reference_scale(),
            };
            let spec = InstanceSpec { flex_level: f.into(), ..base };
            instances.push((FlexLevel::from(f).name().into(), generate_instance(&spec)?));
        }
    } else {
        for p in &a.instance {
            instances.push((stem(p), io::read_instance(p)?));
        }
    }
    let mut labels = std::collections::BTreeSet::new();
    if let Some((l, _)) = instances.iter().find(|(l, _)| !labels.insert(l.clone())) {
        return Err(Error::Argument(format!("two instances are labelled `{l}`")));
    }
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for (label, inst) in instances {
        let env = Environment::new(inst, models.clone());
        log(&format!("{label}: {} policies x {} runs x {} steps", a.modes.len(), config.runs, config.steps));
        for (report, timing, traces) in harness::compare_modes(&env, &a.modes, &label, &config)? {
            let dir = a.out.join(&label).join(policy_dir(report.policy));
            if a.traces {
                for t in &traces {
                    io::write_atomic(&dir.join(format!("run-{:03}.csv", t.summary.run)), &io::trace_csv(&t.records))?;
                }
            }
            io::write_json(&dir.join("report.json"), &report)?;
            io::write_json(&dir.join("timing.json"), &TimingFile { note: TIMING_NOTE, timings: vec![timing] })?;
            failed.extend(report.failed_runs.iter().map(|r| format!("{label}/{} run {r}", report.policy)));
            reports.push(report);
        }
    }
    let rows = report::rows(&reports, &[]);
    io::write_atomic(&a.out.join("table.md"), report::markdown_table(&rows).as_bytes())?;
    io::write_atomic(&a.out.join("table.csv"), &report::csv_table(&rows))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Runtime(format!("failed runs: {}", failed.join(", "))))
    }
}

/// `report.json` files below `dir`, in path order.
fn find_reports(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> =
        std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>().map_err(|e| Error::io(dir, e))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_reports(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "report.json") {
            out.push(p);
        }
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct TimingIn {
    timings: Vec<Timing>,
}

fn render_report(a: &ReportArgs) -> Result<()> {
    let mut paths = Vec::new();
    for p in &a.inputs {
        if p.is_dir() {
            find_reports(p, &mut paths)?;
        } else {
            paths.push(p.clone());
        }
    }
    if paths.is_empty() {
        return Err(Error::Argument("no report.json found in the inputs".into()));
    }
    let reports: Vec<_> = paths.iter().map(|p| io::read_report(p)).collect::<Result<_>>()?;
    report::check_compatible(&reports)?;
    let mut timings = Vec::new();
    for (p, r) in paths.iter().zip(&reports) {
        let tp = p.with_file_name("timing.json");
        let t = if a.no_timing || !tp.exists() {
            None
        } else {
            let t: TimingIn = io::read_json(&tp)?;
            t.timings.into_iter().find(|t| t.policy == r.policy && t.label == r.label)
        };
        timings.push(t);
    }
    let tree = a.tree.as_ref().map(|p| io::read_json::<TreeFile>(p)).transpose()?;
    if let Some(t) = &tree {
        if t.format != io::TREE_FORMAT {
            return Err(Error::input(a.tree.as_ref().expect("given"), format!("format `{}`, expected `{}`", t.format, io::TREE_FORMAT)));
        }
    }

    let rows = report::rows(&reports, &timings);
    io::write_atomic(&a.out.join("table.md"), report::markdown_table(&rows).as_bytes())?;
    io::write_atomic(&a.out.join("table.csv"), &report::csv_table(&rows))?;
    io::write_atomic(&a.out.join("return_vs_time.svg"), report::return_vs_time_svg(&rows).as_bytes())?;
    let timed = timings.iter().all(Option::is_some);
    let series: Vec<(String, Vec<f64>)> = reports
        .iter()
        .zip(&timings)
        .map(|(r, t)| {
            let name = format!("{} / {}", r.policy, r.label);
            match t {
                Some(t) if timed => (name, t.all()),
                _ => (name, r.runs.iter().filter(|x| x.failure.is_none() && x.steps > 0).map(|x| x.evaluations as f64 / x.steps as f64).collect()),
            }
        })
        .collect();
    let unit = if timed { "seconds per step" } else { "evaluations per step (run means)" };
    io::write_atomic(&a.out.join("solve_times.svg"), report::solve_time_svg(&series, unit).as_bytes())?;
    if let Some(t) = tree {
        io::write_atomic(&a.out.join("tree.md"), tree_summary(&t).as_bytes())?;
    }
    Ok(())
}

fn tree_summary(t: &TreeFile) -> String {
    use std::fmt::Write as _;
    let tree = &t.tree;
    let mut s = format!("Scenario tree at quarter {}: {} scenarios, horizon {}\n\n", t.quarter, tree.n_scenarios(), tree.horizon());
    s.push_str("| scenario | probability | total potential at stage 1 (MW) |\n|---:|---:|---:|\n");
    for (k, sc) in tree.scenarios.iter().enumerate() {
        let p: f64 = sc.trajectory.steps.first().map_or(0.0, |st| st.potentials.iter().sum());
        let _ = writeln!(s, "| {k} | {:.6} | {p:.4} |", sc.probability);
    }
    s.push_str("\nDecision groups per stage:\n\n");
    for stage in 0..tree.horizon() {
        let _ = writeln!(s, "- stage {stage}: {:?}", tree.decision_groups(stage));
    }
    s
}
