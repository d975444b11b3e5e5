//! Command line driver: analyze, simulate, check.
//!
//! Exit codes are a stable contract: 0 success / property holds, 1 system
//! parse error, 2 configuration or input error, 3 property violated.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use iotlysa::cfa::{self, Estimate};
use iotlysa::config::{parse_config, AnalysisConfig, Policy};
use iotlysa::report::{CrossCheckSummary, EstimateSummary, Report, RunOutcome};
use iotlysa::security::{
    check_actuators, check_confined, check_levels, check_no_leaks, check_policy, Classification,
    Verdict, Witness,
};
use iotlysa::semantics::{run_system, Trace};
use iotlysa::{parse_system, System};

#[derive(Parser)]
#[command(name = "iotlysa", version, about = "Static analysis and simulation for IoT node networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute the least estimate of stores, messages, values and actions.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Write the estimate JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Include wall-clock timing in the report (breaks byte-identity).
        #[arg(long)]
        timing: bool,
    },
    /// Run the system once under the seeded scheduler and emit the trace.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Write the NDJSON trace to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a property of the system and exit 0 (holds) or 3 (violated).
    Check {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        property: Property,
        /// Load a previously computed estimate instead of re-solving.
        #[arg(long)]
        estimate: Option<PathBuf>,
        /// Replay this trace instead of simulating fresh ones.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Number of seeded simulations for trace-based properties.
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Write the report JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Include wall-clock timing in the report (breaks byte-identity).
        #[arg(long)]
        timing: bool,
    },
}

#[derive(Args)]
struct Common {
    /// System description (.iot).
    spec: PathBuf,
    /// Analysis configuration (.cfg.json); defaults apply when omitted.
    config: Option<PathBuf>,
    /// Cut depth for abstract values.
    #[arg(long)]
    depth: Option<usize>,
    /// Scheduler seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum reduction steps per simulation.
    #[arg(long)]
    steps: Option<usize>,
    /// Only bind inputs from message tuples whose length matches the pattern.
    #[arg(long)]
    precise_match: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Property {
    Confinement,
    Levels,
    Policy,
    Actuators,
    Crosscheck,
    Noleaks,
}

enum Failure {
    Parse(String),
    Config(String),
}

impl Failure {
    fn report(self) -> ExitCode {
        let (code, msg) = match self {
            Failure::Parse(m) => (1, m),
            Failure::Config(m) => (2, m),
        };
        eprintln!("error: {msg}");
        ExitCode::from(code)
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(f) => f.report(),
    }
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.cmd {
        Cmd::Analyze {
            common,
            format,
            out,
            timing,
        } => cmd_analyze(common, format, out, timing),
        Cmd::Simulate { common, out } => cmd_simulate(common, out),
        Cmd::Check {
            common,
            property,
            estimate,
            trace,
            runs,
            format,
            out,
            timing,
        } => cmd_check(common, property, estimate, trace, runs, format, out, timing),
    }
}

fn load(common: &Common, report: &mut Report) -> Result<(System, AnalysisConfig), Failure> {
    let spec_src = std::fs::read_to_string(&common.spec)
        .map_err(|e| Failure::Parse(format!("{}: {e}", common.spec.display())))?;
    report.record_input("spec", spec_src.as_bytes());
    let system = parse_system(&spec_src)
        .map_err(|e| Failure::Parse(format!("{}: {e}", common.spec.display())))?;
    system
        .validate()
        .map_err(|e| Failure::Parse(format!("{}: {e}", common.spec.display())))?;

    let mut cfg = match &common.config {
        Some(path) => {
            let src = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            report.record_input("config", src.as_bytes());
            parse_config(&src).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        None => AnalysisConfig::default(),
    };
    if let Some(d) = common.depth {
        cfg.depth = d;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(n) = common.steps {
        cfg.max_steps = n;
    }
    if common.precise_match {
        cfg.precise_match = true;
    }
    cfg.resolve_for(&system)
        .map_err(|e| Failure::Config(e.to_string()))?;
    Ok((system, cfg))
}

fn write_out(path: &PathBuf, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn emit(report: &Report, format: Format, estimate_json: Option<&str>) -> Result<(), Failure> {
    match format {
        Format::Text => print!("{}", report.render_text()),
        Format::Json => {
            let mut value = serde_json::to_value(report)
                .map_err(|e| Failure::Config(format!("report serialization: {e}")))?;
            if let Some(est) = estimate_json {
                let est: serde_json::Value = serde_json::from_str(est)
                    .map_err(|e| Failure::Config(format!("estimate serialization: {e}")))?;
                value
                    .as_object_mut()
                    .expect("report is an object")
                    .insert("estimate_full".to_string(), est);
            }
            println!("{}", serde_json::to_string_pretty(&value).unwrap());
        }
    }
    Ok(())
}

fn estimate_json(e: &Estimate) -> String {
    let mut s = serde_json::to_string_pretty(e).expect("estimate serializes");
    s.push('\n');
    s
}

fn cmd_analyze(
    common: Common,
    format: Format,
    out: Option<PathBuf>,
    timing: bool,
) -> Result<ExitCode, Failure> {
    let mut report = Report::new();
    let (system, cfg) = load(&common, &mut report)?;
    let started = Instant::now();
    let estimate = cfa::analyze(&system, &cfg);
    if timing {
        report.elapsed_ms = Some(started.elapsed().as_millis());
    }
    report.estimate = Some(EstimateSummary::of(&estimate));
    let json = estimate_json(&estimate);
    if let Some(path) = &out {
        write_out(path, &json)?;
    }
    emit(&report, format, Some(&json))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(common: Common, out: Option<PathBuf>) -> Result<ExitCode, Failure> {
    let mut report = Report::new();
    let (system, cfg) = load(&common, &mut report)?;
    let trace = run_system(&system, &cfg);
    let ndjson = trace.to_ndjson();
    match &out {
        Some(path) => write_out(path, &ndjson)?,
        None => print!("{ndjson}"),
    }
    Ok(ExitCode::SUCCESS)
}

/// Runs `runs` seeded simulations (seeds `cfg.seed`, `cfg.seed+1`, ...),
/// fanned across threads, merged back in seed order.
fn simulate_batch(system: &System, cfg: &AnalysisConfig, runs: usize) -> Vec<Trace> {
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(runs.max(1));
    let mut indexed: Vec<(usize, Trace)> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            let handle = scope.spawn(move || {
                let mut done = Vec::new();
                let mut i = w;
                while i < runs {
                    let mut c = cfg.clone();
                    c.seed = cfg.seed.wrapping_add(i as u64);
                    done.push((i, run_system(system, &c)));
                    i += workers;
                }
                done
            });
            handles.push(handle);
        }
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("simulation worker panicked"))
            .collect()
    });
    indexed.sort_by_key(|(i, _)| *i);
    indexed.into_iter().map(|(_, t)| t).collect()
}

fn load_traces(
    system: &System,
    cfg: &AnalysisConfig,
    trace_path: Option<&PathBuf>,
    runs: usize,
    report: &mut Report,
) -> Result<Vec<Trace>, Failure> {
    match trace_path {
        Some(path) => {
            let src = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            report.record_input("trace", src.as_bytes());
            let trace = Trace::from_ndjson(&src)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            Ok(vec![trace])
        }
        None => Ok(simulate_batch(system, cfg, runs)),
    }
}

/// Labels with configured secrets, in order. Empty means the secrecy
/// properties have nothing to check, which is a configuration error.
fn secret_labels(cfg: &AnalysisConfig) -> Result<Vec<iotlysa::Label>, Failure> {
    let labels: Vec<_> = cfg
        .secret
        .iter()
        .filter(|(_, atoms)| !atoms.is_empty())
        .map(|(l, _)| l.clone())
        .collect();
    if labels.is_empty() {
        return Err(Failure::Config(
            "property needs secret atoms in the configuration (\"secret\" section)".to_string(),
        ));
    }
    Ok(labels)
}

#[allow(clippy::too_many_arguments)]
fn cmd_check(
    common: Common,
    property: Property,
    estimate_path: Option<PathBuf>,
    trace_path: Option<PathBuf>,
    runs: usize,
    format: Format,
    out: Option<PathBuf>,
    timing: bool,
) -> Result<ExitCode, Failure> {
    let mut report = Report::new();
    let (system, cfg) = load(&common, &mut report)?;
    let started = Instant::now();

    let estimate = match &estimate_path {
        Some(path) => {
            let src = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            report.record_input("estimate", src.as_bytes());
            serde_json::from_str::<Estimate>(&src)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        None => cfa::analyze(&system, &cfg),
    };
    report.estimate = Some(EstimateSummary::of(&estimate));
    let cls = Classification::from_config(&cfg);

    match property {
        Property::Confinement => {
            for l in secret_labels(&cfg)? {
                report.verdicts.push(check_confined(&estimate, &cls, &l));
            }
        }
        Property::Levels => {
            let verdict = check_levels(&estimate, &cfg.levels)
                .map_err(|e| Failure::Config(e.to_string()))?;
            report.verdicts.push(verdict);
        }
        Property::Policy => match &cfg.policy {
            Policy::None => {
                return Err(Failure::Config(
                    "policy check requested but the configuration declares none".to_string(),
                ))
            }
            Policy::Levels => {
                let verdict = check_levels(&estimate, &cfg.levels)
                    .map_err(|e| Failure::Config(e.to_string()))?;
                report.verdicts.push(verdict);
            }
            Policy::Pairs(allowed) => {
                report.verdicts.push(check_policy(&estimate, allowed));
            }
        },
        Property::Actuators => {
            let usage = check_actuators(&estimate, &system);
            report.verdicts.push(usage.verdict());
        }
        Property::Crosscheck => {
            let traces = load_traces(&system, &cfg, trace_path.as_ref(), runs, &mut report)?;
            let outcomes = traces
                .iter()
                .map(|t| RunOutcome {
                    seed: t.seed,
                    steps: t.steps,
                    events: t.events.len(),
                    violations: cfa::cross_check(t, &estimate),
                })
                .collect();
            report.cross_check = Some(CrossCheckSummary::of(outcomes));
        }
        Property::Noleaks => {
            let labels = secret_labels(&cfg)?;
            let traces = load_traces(&system, &cfg, trace_path.as_ref(), runs, &mut report)?;
            for l in labels {
                let mut witnesses: Vec<Witness> = Vec::new();
                for t in &traces {
                    let v = check_no_leaks(t, &cls, &l);
                    witnesses.extend(v.witnesses.into_iter().map(|w| w.with_seed(t.seed)));
                }
                report
                    .verdicts
                    .push(Verdict::new(format!("no-leaks({l})"), witnesses));
            }
        }
    }

    if timing {
        report.elapsed_ms = Some(started.elapsed().as_millis());
    }
    if let Some(path) = &out {
        let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
        json.push('\n');
        write_out(path, &json)?;
    }
    emit(&report, format, None)?;
    Ok(if report.holds() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}
