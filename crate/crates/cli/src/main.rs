use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use guardmem::analysis::{gap_curves, GAP_HEADER};
use guardmem::evidence::calibration_table;
use guardmem::http::HttpConfig;
use guardmem::induction::refresh;
use guardmem::memory::{load_snapshot, save_snapshot, MemoryError};
use guardmem::simulator::{
    run_experiment_with, write_aggregate, write_artifacts, DeploymentConfig, Method, Providers, SyntheticWorld,
};
use guardmem::verify::{checks_csv, run_all, VerifyOptions};
use guardmem::{confidence, Error, GatingConfig, MemorySnapshot, PolicyMemory, Report};

#[derive(Parser)]
#[command(name = "guardmem", version, about = "Adaptive guardrail memory experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the deployment simulation and write metrics and snapshots.
    Simulate(SimulateArgs),
    /// Record reports into a memory state and rebuild its snapshot.
    Refresh(RefreshArgs),
    /// Print a snapshot's policies and rules.
    Inspect(InspectArgs),
    /// Run the numerical checks and write their results as CSV.
    Verify(VerifyArgs),
    /// Write Beta and Hoeffding lower bounds over an n by accuracy grid.
    GapCurves(GapArgs),
    /// Print the minimal support needed at each contradiction count.
    Calibrate(CalibrateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    Stub,
    Http,
}

#[derive(Args)]
struct GatingArgs {
    #[arg(long)]
    tau_refuse: Option<f64>,
    #[arg(long)]
    tau_allow: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
}

impl GatingArgs {
    fn apply(&self, gating: &mut GatingConfig) {
        if let Some(v) = self.tau_refuse {
            gating.tau_refuse = v;
        }
        if let Some(v) = self.tau_allow {
            gating.tau_allow = v;
        }
        if let Some(v) = self.delta {
            gating.delta = v;
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON deployment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds to run, starting at the base seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    method: Option<Method>,
    /// Probability that a report's corrected label is flipped.
    #[arg(long)]
    rho: Option<f64>,
    #[command(flatten)]
    gating: GatingArgs,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "stub")]
    provider: ProviderKind,
}

#[derive(Args)]
struct RefreshArgs {
    /// Saved memory state; a fresh memory is used when omitted.
    #[arg(long)]
    state: Option<PathBuf>,
    /// JSON array of reports to record before refreshing.
    #[arg(long)]
    reports: Option<PathBuf>,
    /// Decides which memory channels are rebuilt.
    #[arg(long, default_value = "lisa")]
    method: Method,
    #[command(flatten)]
    gating: GatingArgs,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "stub")]
    provider: ProviderKind,
}

#[derive(Args)]
struct InspectArgs {
    /// Snapshot file, or a saved memory state.
    snapshot: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 1_000_000)]
    draws: usize,
    #[arg(long, default_value_t = 0.55)]
    tau: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GapArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [4u64, 10, 20, 50, 100, 200, 500, 1000, 10_000])]
    ns: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0])]
    accuracies: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, default_value_t = 0.55)]
    tau: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 7)]
    max_contradictions: u64,
}

/// Exit status 2 for bad invocations and inputs, 1 for failures while running.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Evidence(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<MemoryError> for Failure {
    fn from(e: MemoryError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn providers(kind: ProviderKind, config: &DeploymentConfig) -> Result<Providers, Failure> {
    match kind {
        ProviderKind::Stub => Ok(Providers::stub(
            Arc::new(SyntheticWorld::new(config.world)),
            config.local_overlap,
        )),
        ProviderKind::Http => HttpConfig::from_env()
            .map(Providers::http)
            .map_err(|e| Failure::Usage(e.to_string())),
    }
}

fn simulate(args: SimulateArgs) -> Outcome {
    let mut config = match &args.config {
        Some(path) => DeploymentConfig::load(path).map_err(|e| Failure::Usage(e.to_string()))?,
        None => DeploymentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(method) = args.method {
        config.method = method;
    }
    if let Some(rho) = args.rho {
        config.noise_rho = rho;
    }
    args.gating.apply(&mut config.gating);
    config.validate()?;
    if args.seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    let providers = providers(args.provider, &config)?;

    let mut results = Vec::new();
    let mut aborted = Vec::new();
    for i in 0..args.seeds {
        let cfg = DeploymentConfig {
            seed: config.seed + i,
            ..config.clone()
        };
        let result = run_experiment_with(&cfg, providers.clone())?;
        let paths = write_artifacts(&result, &args.out_dir)?;
        let last = result.final_row();
        println!(
            "{} seed {}: day {} macro-F1 {:.4} accuracy {:.4} ({} broad, {} local) -> {}",
            cfg.method,
            cfg.seed,
            last.day,
            last.macro_f1,
            last.accuracy,
            last.broad_count,
            last.local_count,
            paths.metrics.display()
        );
        if let Some(reason) = &result.aborted {
            aborted.push(format!("seed {}: {reason}", cfg.seed));
        }
        results.push(result);
    }
    if results.len() > 1 {
        let path = write_aggregate(&results, &args.out_dir)?;
        println!("aggregate -> {}", path.display());
    }
    if aborted.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("run aborted: {}", aborted.join("; "))))
    }
}

fn read_reports(path: &Path) -> Result<Vec<Report>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let reports: Vec<Report> = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("{} at line {} column {}: {e}", path.display(), e.line(), e.column())))?;
    reports
        .into_iter()
        .map(|r| {
            let flipped = r.flipped;
            Report::new(r.case, r.predicted_label, r.corrected_label, r.day)
                .map(|r| Report { flipped, ..r })
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn refresh_cmd(args: RefreshArgs) -> Outcome {
    let mut memory = match &args.state {
        Some(path) => PolicyMemory::load(path)?,
        None => PolicyMemory::new(GatingConfig::default()),
    };
    args.gating.apply(&mut memory.snapshot.gating);
    memory.snapshot.gating.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let config = DeploymentConfig {
        method: args.method,
        gating: memory.snapshot.gating,
        ..Default::default()
    };
    let opts = config.refresh_options()?;
    let added = match &args.reports {
        Some(path) => read_reports(path)?,
        None => Vec::new(),
    };
    let count = added.len();
    for r in added {
        memory.record_report(r)?;
    }
    let p = providers(args.provider, &config)?;
    let outcome = refresh(&mut memory, p.embedder.as_ref(), p.inducer.as_ref(), &opts)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| Failure::Runtime(format!("{}: {e}", args.out_dir.display())))?;
    let state = args.out_dir.join("state.json");
    let snapshot = args.out_dir.join("snapshot.json");
    memory.save(&state)?;
    save_snapshot(&memory.snapshot, &snapshot)?;
    println!(
        "recorded {count} reports; snapshot v{}: {} broad, {} local ({} inducer calls)",
        outcome.version,
        memory.snapshot.broad.len(),
        memory.snapshot.local.len(),
        outcome.inducer_calls
    );
    println!("state -> {}\nsnapshot -> {}", state.display(), snapshot.display());
    Ok(())
}

/// A snapshot document, or the snapshot inside a saved state.
fn load_any_snapshot(path: &Path) -> Result<MemorySnapshot, Failure> {
    match load_snapshot(path) {
        Ok(s) => Ok(s),
        Err(MemoryError::Io { path, source }) => Err(Failure::Runtime(format!("cannot read {path}: {source}"))),
        Err(e) => match PolicyMemory::load(path) {
            Ok(memory) => Ok(memory.snapshot),
            Err(_) => Err(Failure::Runtime(format!("{}: {e}", path.display()))),
        },
    }
}

fn inspect(args: InspectArgs) -> Outcome {
    let snapshot = load_any_snapshot(&args.snapshot)?;
    let delta = snapshot.gating.delta;
    let conf = |ev| confidence(ev, delta).map_err(|e| Failure::Runtime(e.to_string()));
    println!(
        "snapshot v{}: {} broad, {} local",
        snapshot.version,
        snapshot.broad.len(),
        snapshot.local.len()
    );
    let mut broad = snapshot
        .broad
        .iter()
        .map(|b| Ok((conf(&b.evidence)?, b)))
        .collect::<Result<Vec<_>, Failure>>()?;
    broad.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (c, b) in broad {
        let flag = if b.near_conflict { " near-conflict" } else { "" };
        println!(
            "broad {} [{}] confidence {c:.4} ({}, {}){flag}: {}",
            b.policy_id, b.recommended_label, b.evidence.support, b.evidence.contradiction, b.statement
        );
    }
    let mut local = snapshot
        .local
        .iter()
        .map(|l| Ok((conf(&l.evidence)?, l)))
        .collect::<Result<Vec<_>, Failure>>()?;
    local.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (c, l) in local {
        println!(
            "local {} [{}] confidence {c:.4} ({}, {}): {}",
            l.rule_id, l.recommended_label, l.evidence.support, l.evidence.contradiction, l.region_summary
        );
        for p in &l.pivots {
            println!("  pivot: {p}");
        }
    }
    Ok(())
}

fn verify(args: VerifyArgs) -> Outcome {
    let opts = VerifyOptions {
        seed: args.seed,
        trials: args.trials,
        draws: args.draws,
        tau: args.tau,
        delta: args.delta,
    };
    GatingConfig {
        delta: opts.delta,
        tau_refuse: opts.tau,
        tau_allow: opts.tau,
    }
    .validate()
    .map_err(|e| Failure::Usage(e.to_string()))?;
    let results = run_all(&opts);
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let path = args.out_dir.join("verify.csv");
    write(&path, &checks_csv(&results))?;
    println!("results -> {}", path.display());
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("{failed} checks failed")))
    }
}

fn gap(args: GapArgs) -> Outcome {
    let rows = gap_curves(&args.ns, &args.accuracies, args.delta).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut text = format!("{GAP_HEADER}\n");
    for r in &rows {
        text.push_str(&r.csv_line());
        text.push('\n');
    }
    let path = args.out_dir.join("gap_curves.csv");
    write(&path, &text)?;
    println!("{} rows -> {}", rows.len(), path.display());
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Outcome {
    let table = calibration_table(args.tau, args.delta, args.max_contradictions)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    println!("contradictions,min_support");
    for (c, s) in table {
        println!("{c},{s}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Refresh(a) => refresh_cmd(a),
        Command::Inspect(a) => inspect(a),
        Command::Verify(a) => verify(a),
        Command::GapCurves(a) => gap(a),
        Command::Calibrate(a) => calibrate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
