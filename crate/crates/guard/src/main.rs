use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use guard::config::{load_config, load_or_default, to_toml};
use guard::harness::{ablation_base, run_ablation};
use guard::report;
use guard::state::OperatorState;
use guard::trace::{read_trace, write_trace};
use guard::wire::read_metrics;
use guard::{parse_seeds, GuardError, Result};
use guard_core::detector::detect_stream;
use guard_core::eval::{eval_detection, eval_reliability, HumanCosts};
use guard_core::event::Event;
use guard_core::model::NodeId;
use guard_core::rng::{stream, Stream};
use guard_core::sim::runner::build_timelines;
use guard_core::sim::{run_scenario, NodeProfile, ScenarioConfig};
use guard_core::sweep::{run_sweep, SweepError, SweepMode};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "guard",
    version,
    about = "Grey-node detection, sweeps and triage over a simulated training cluster"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Signal {
    Errors,
    Clean,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    BurnIn,
    Basic,
    Enhanced,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace directory.
    Run {
        #[arg(long, env = "GUARD_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "trace")]
        out: PathBuf,
    },
    /// Replay a metrics JSONL file through windowing and detection only.
    Detect {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, env = "GUARD_CONFIG")]
        config: Option<PathBuf>,
        /// Reject records with unknown fields.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one node of the configured cluster.
    Sweep {
        #[arg(long)]
        node: String,
        #[arg(long)]
        reference: Option<String>,
        #[arg(long, value_parser = ["2", "4", "8"])]
        width: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Simulated time at which to take node profiles; every configured
        /// fault is active when omitted.
        #[arg(long)]
        at: Option<f64>,
        #[arg(long, env = "GUARD_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, env = "GUARD_STATE", default_value = "guard-state")]
        state: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Take one remediation step for a node given its error signal.
    Triage {
        #[arg(long)]
        node: String,
        #[arg(long, value_enum)]
        signal: Signal,
        /// Simulated time of the step; defaults to the latest logged event.
        #[arg(long)]
        t: Option<f64>,
        #[arg(long, env = "GUARD_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, env = "GUARD_STATE", default_value = "guard-state")]
        state: PathBuf,
    },
    /// Terminate a node by hand.
    Terminate {
        #[arg(long)]
        node: String,
        #[arg(long)]
        reason: String,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long, env = "GUARD_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, env = "GUARD_STATE", default_value = "guard-state")]
        state: PathBuf,
    },
    /// Score a trace: detection rates against labels, and reliability.
    Eval {
        #[arg(long)]
        trace: PathBuf,
        /// Fail (exit 2) when the false positive rate exceeds this.
        #[arg(long)]
        max_fpr: Option<f64>,
        /// Fail (exit 2) when the false negative rate exceeds this.
        #[arg(long)]
        max_fnr: Option<f64>,
    },
    /// Run the four ablation arms over a set of seeds.
    Ablate {
        #[arg(long, env = "GUARD_CONFIG")]
        config: Option<PathBuf>,
        /// `a..b` (inclusive), or a comma list.
        #[arg(long, default_value = "1..10")]
        seeds: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-seed results and gnuplot data here.
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Write CSV and gnuplot data files for one or more traces.
    Report {
        #[arg(long = "trace", required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Print the default scenario config, with every field.
    Config,
}

fn node_id(s: &str) -> Result<NodeId> {
    Ok(NodeId::new(s)?)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| GuardError::io(p, e)),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| GuardError::io("<stdout>", e)),
    }
}

fn cmd_run(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = load_or_default(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let trace = run_scenario(&cfg)?;
    write_trace(out, &trace, &cfg)?;
    let s = &trace.summary;
    eprintln!(
        "wrote {}: {} steps, {} events, {:.1} h simulated",
        out.display(),
        trace.steps.len(),
        trace.events.len(),
        s.duration_s / 3600.0
    );
    Ok(())
}

fn cmd_detect(metrics: &Path, config: Option<&Path>, strict: bool, out: Option<&Path>) -> Result<()> {
    let cfg = load_or_default(config)?;
    let f = File::open(metrics).map_err(|e| GuardError::io(metrics, e))?;
    let samples = read_metrics(BufReader::new(f), strict).map_err(|e| match e {
        guard::wire::ReadError::Io(io) => GuardError::io(metrics, io),
        guard::wire::ReadError::Wire(w) => w.into(),
    })?;
    let flags = detect_stream(samples, cfg.ingest, cfg.detector)?;
    let mut text = String::new();
    for f in flags {
        let t = cfg.ingest.window_start(f.window + 1);
        let e = Event::Flag {
            node: f.node,
            window: f.window,
            severity: f.severity,
            kinds: f.kinds,
            first_window: f.first_window,
            t,
        };
        text.push_str(&serde_json::to_string(&e).expect("events serialize"));
        text.push('\n');
    }
    write_out(out, &text)
}

fn profiles_at(cfg: &ScenarioConfig, at: Option<f64>) -> Vec<NodeProfile> {
    let (timelines, _) = build_timelines(cfg);
    let t = at.unwrap_or(f64::INFINITY);
    cfg.job_nodes()
        .into_iter()
        .chain(cfg.spare_nodes())
        .map(|n| timelines[&n].profile_at(t))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    node: &str,
    reference: Option<&str>,
    width: Option<&str>,
    seed: u64,
    mode: Option<Mode>,
    at: Option<f64>,
    config: Option<&Path>,
    state_dir: &Path,
    out: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_or_default(config)?;
    if let Some(w) = width {
        cfg.sweep.width = w.parse().expect("validated by clap");
    }
    if let Some(m) = mode {
        cfg.sweep.mode = match m {
            Mode::BurnIn => SweepMode::BurnIn,
            Mode::Basic => SweepMode::Basic,
            Mode::Enhanced => SweepMode::Enhanced,
        };
    }
    cfg.sweep.validate()?;
    let node = node_id(node)?;
    let profiles = profiles_at(&cfg, at);
    let suspect = profiles
        .iter()
        .find(|p| p.node == node)
        .ok_or_else(|| GuardError::Usage(format!("unknown node {node}")))?;
    let mut refs: Vec<&NodeProfile> = Vec::new();
    if let Some(r) = reference {
        let r = node_id(r)?;
        if r == node {
            return Err(GuardError::Usage("a node cannot be its own reference".into()));
        }
        let p = profiles
            .iter()
            .find(|p| p.node == r)
            .ok_or_else(|| GuardError::Usage(format!("unknown reference {r}")))?;
        refs.push(p);
    }
    for p in &profiles {
        if refs.len() + 1 >= cfg.sweep.width {
            break;
        }
        if p.node != node && p.is_nominal() && !refs.iter().any(|r| r.node == p.node) {
            refs.push(p);
        }
    }
    let mut rng = stream(seed, Stream::Sweep);
    let outcome = run_sweep(suspect, &refs, &cfg.step, &cfg.sweep, &mut rng)
        .map_err(|e: SweepError| GuardError::Usage(e.to_string()))?;
    let mut state = OperatorState::open(state_dir, &cfg)?;
    let t = state.at(None)?;
    state.record_sweep(&node, &outcome, t)?;
    state.save()?;
    let text = serde_json::to_string_pretty(&outcome).expect("outcome serializes") + "\n";
    write_out(out, &text)
}

fn print_events(events: &[Event]) -> Result<()> {
    let mut text = String::new();
    for e in events {
        text.push_str(&serde_json::to_string(e).expect("events serialize"));
        text.push('\n');
    }
    write_out(None, &text)
}

fn cmd_triage(node: &str, signal: Signal, t: Option<f64>, config: Option<&Path>, state_dir: &Path) -> Result<()> {
    let cfg = load_or_default(config)?;
    let node = node_id(node)?;
    let mut state = OperatorState::open(state_dir, &cfg)?;
    let t = state.at(t)?;
    state.triage(&node, matches!(signal, Signal::Errors), t, &cfg.triage)?;
    print_events(state.new_events())?;
    state.save()
}

fn cmd_terminate(node: &str, reason: &str, t: Option<f64>, config: Option<&Path>, state_dir: &Path) -> Result<()> {
    let cfg = load_or_default(config)?;
    let node = node_id(node)?;
    let mut state = OperatorState::open(state_dir, &cfg)?;
    let t = state.at(t)?;
    state.terminate(&node, reason, t)?;
    print_events(state.new_events())?;
    state.save()
}

fn cmd_eval(trace_dir: &Path, max_fpr: Option<f64>, max_fnr: Option<f64>) -> Result<()> {
    let trace = read_trace(trace_dir, false)?;
    let detection = eval_detection(&trace);
    let reliability = eval_reliability(&trace, &HumanCosts::default());
    let doc = json!({ "detection": detection, "reliability": reliability });
    write_out(None, &(serde_json::to_string_pretty(&doc).expect("serializes") + "\n"))?;
    if let (Some(max), Some(fpr)) = (max_fpr, detection.fpr) {
        if fpr > max {
            return Err(GuardError::Eval(format!("fpr {fpr} above {max}")));
        }
    }
    if let (Some(max), Some(fnr)) = (max_fnr, detection.fnr) {
        if fnr > max {
            return Err(GuardError::Eval(format!("fnr {fnr} above {max}")));
        }
    }
    Ok(())
}

fn cmd_ablate(config: Option<&Path>, seeds: &str, out: Option<&Path>, report_dir: Option<&Path>) -> Result<()> {
    let base = match config {
        Some(p) => load_config(p)?,
        None => ablation_base(),
    };
    let seeds = parse_seeds(seeds).map_err(GuardError::Usage)?;
    if seeds.len() < 5 {
        eprintln!(
            "warning: {} seed(s); averages over fewer than 5 seeds are noisy",
            seeds.len()
        );
    }
    let result = run_ablation(&base, &seeds, &HumanCosts::default())?;
    write_out(out, &report::ablation_csv(&result.rows))?;
    if let Some(dir) = report_dir {
        fs::create_dir_all(dir).map_err(|e| GuardError::io(dir, e))?;
        let files = [
            ("ablation.csv", report::ablation_csv(&result.rows)),
            ("ablation_runs.csv", report::ablation_runs_csv(&result.runs)),
            ("ablation.dat", report::ablation_dat(&result.rows)),
        ];
        for (name, text) in files {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| GuardError::io(&p, e))?;
        }
    }
    Ok(())
}

fn cmd_report(traces: &[PathBuf], out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| GuardError::io(out, e))?;
    let mut detection = Vec::new();
    let mut reliability = Vec::new();
    let mut means = Vec::new();
    for (i, dir) in traces.iter().enumerate() {
        let trace = read_trace(dir, false)?;
        let name = dir.display().to_string();
        detection.push((name.clone(), eval_detection(&trace)));
        reliability.push((name, eval_reliability(&trace, &HumanCosts::default())));
        means.push(trace.summary.mean_step_s);
        let p = out.join(format!("step_times_{i}.dat"));
        fs::write(&p, report::step_times_dat(&trace)).map_err(|e| GuardError::io(&p, e))?;
    }
    let variance = format!(
        "runs,variance_pct\n{},{}\n",
        means.len(),
        guard_core::eval::variance_pct(&means)
    );
    let files = [
        ("detection.csv", report::detection_csv(&detection)),
        ("reliability.csv", report::reliability_csv(&reliability)),
        ("variance.csv", variance),
    ];
    for (name, text) in files {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| GuardError::io(&p, e))?;
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config, seed, out } => cmd_run(config.as_deref(), seed, &out),
        Command::Detect {
            metrics,
            config,
            strict,
            out,
        } => cmd_detect(&metrics, config.as_deref(), strict, out.as_deref()),
        Command::Sweep {
            node,
            reference,
            width,
            seed,
            mode,
            at,
            config,
            state,
            out,
        } => cmd_sweep(
            &node,
            reference.as_deref(),
            width.as_deref(),
            seed,
            mode,
            at,
            config.as_deref(),
            &state,
            out.as_deref(),
        ),
        Command::Triage {
            node,
            signal,
            t,
            config,
            state,
        } => cmd_triage(&node, signal, t, config.as_deref(), &state),
        Command::Terminate {
            node,
            reason,
            t,
            config,
            state,
        } => cmd_terminate(&node, &reason, t, config.as_deref(), &state),
        Command::Eval {
            trace,
            max_fpr,
            max_fnr,
        } => cmd_eval(&trace, max_fpr, max_fnr),
        Command::Ablate {
            config,
            seeds,
            out,
            report_dir,
        } => cmd_ablate(config.as_deref(), &seeds, out.as_deref(), report_dir.as_deref()),
        Command::Report { traces, out } => cmd_report(&traces, &out),
        Command::Config => write_out(None, &to_toml(&ScenarioConfig::default())),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, GuardError::Config { .. } | GuardError::Scenario(_)) {
                eprintln!("hint: `guard config` prints every config field with its default");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
