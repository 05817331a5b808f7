use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use chordsynth::admm::{self, AdmmOptions};
use chordsynth::bench::{self, BenchConfig, BenchMethod, Disturbance};
use chordsynth::graph::{decomposition_report, ChordalStructure};
use chordsynth::netsim;
use chordsynth::stabilizability::{self, DEFAULT_ACTUATION_MARGIN};
use chordsynth::synth;
use chordsynth::system::{closed_loop, load_controller, load_system};
use chordsynth::{linalg, Error, InterconnectedSystem, Result};

#[derive(Parser)]
#[command(name = "chordsynth", version, about = "Decentralized H2 synthesis over chordal clique decompositions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stabilizability report; exits 2 when no block-diagonal certificate is found.
    Classify { system: PathBuf },
    /// Computes decentralized gains with the chosen method.
    Synthesize(SynthArgs),
    /// Verifies a gain file against a system.
    Check { system: PathBuf, gains: PathBuf },
    /// Randomized chain benchmark.
    Bench(BenchArgs),
    /// Chordal extension and maximal cliques of the plant graph.
    Decompose { system: PathBuf },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Centralized,
    Admm,
    Distributed,
    LocalizedLqr,
    TruncatedLqr,
    FullyActuated,
}

#[derive(clap::Args)]
struct SynthArgs {
    system: PathBuf,
    #[arg(long, value_enum, default_value = "centralized")]
    method: Method,
    #[arg(long, default_value_t = 5.0)]
    rho: f64,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Run clique updates on worker threads.
    #[arg(long)]
    parallel: bool,
    /// Residual trace CSV (admm and distributed).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Message transcript as JSON lines (distributed).
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Include matrix values in the transcript.
    #[arg(long)]
    transcript_values: bool,
    /// Diagonal margin for the fully actuated construction.
    #[arg(long, default_value_t = DEFAULT_ACTUATION_MARGIN)]
    margin: f64,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0.5)]
    bound: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated: centralized, admm, localized-lqr, truncated-lqr.
    #[arg(long, value_delimiter = ',', default_values_t = ["admm".to_string(), "localized-lqr".to_string(), "truncated-lqr".to_string()])]
    methods: Vec<String>,
    /// identity (M_i = I) or input (M_i = B_i).
    #[arg(long, default_value = "identity")]
    disturbance: String,
    #[arg(long, default_value_t = 5.0)]
    rho: f64,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Per-instance rows.
    #[arg(long)]
    csv: Option<PathBuf>,
}

enum Outcome {
    Ok,
    Failed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Classify { system } => classify(&system),
        Command::Synthesize(args) => synthesize(&args),
        Command::Check { system, gains } => check(&system, &gains),
        Command::Bench(args) => run_bench(&args),
        Command::Decompose { system } => decompose(&system),
    }
}

fn emit(v: &Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn classify(path: &Path) -> Result<Outcome> {
    let sys = load_system(path)?;
    let report = stabilizability::classify(&sys)?;
    emit(&report.to_json())?;
    Ok(if report.sigma2() { Outcome::Ok } else { Outcome::Failed })
}

fn structure(sys: &InterconnectedSystem) -> ChordalStructure {
    ChordalStructure::from_graph(&sys.undirected_graph())
}

fn synthesize(a: &SynthArgs) -> Result<Outcome> {
    let sys = load_system(&a.system)?;
    let iterative = matches!(a.method, Method::Admm | Method::Distributed);
    if a.trace.is_some() && !iterative {
        return Err(Error::validation("trace", "only the admm and distributed methods produce a trace"));
    }
    if (a.transcript.is_some() || a.transcript_values) && a.method != Method::Distributed {
        return Err(Error::validation("transcript", "only the distributed method produces a transcript"));
    }
    let opts = AdmmOptions {
        rho: a.rho,
        tol: a.tol,
        max_iter: a.max_iter,
        parallel: a.parallel,
    };
    let mut extra = serde_json::Map::new();
    let (result, iterations) = match a.method {
        Method::Centralized => (synth::solve_restriction(&sys)?, None),
        Method::LocalizedLqr => (synth::localized_lqr(&sys)?, None),
        Method::TruncatedLqr => (synth::truncated_lqr(&sys)?, None),
        Method::FullyActuated => (stabilizability::fully_actuated_synthesis(&sys, a.margin)?, None),
        Method::Admm => {
            let run = admm::run(&sys, &structure(&sys), &opts)?;
            if let Some(p) = &a.trace {
                admm::write_trace_csv(&run.state.history, create(p)?)?;
            }
            extra.insert("converged".into(), json!(run.converged));
            (run.synthesis, Some(run.state.iteration))
        }
        Method::Distributed => {
            let st = structure(&sys);
            let layout = admm::build_layout(&sys, &st)?;
            let (res, run) = netsim::synthesize_distributed(&sys, &st, &opts)?;
            if let Some(p) = &a.trace {
                admm::write_trace_csv(&run.history, create(p)?)?;
            }
            if let Some(p) = &a.transcript {
                run.transcript.write_jsonl(create(p)?, a.transcript_values)?;
            }
            let audit = netsim::audit_privacy(&run.transcript.entries(false), &layout);
            extra.insert("converged".into(), json!(run.converged));
            extra.insert("messages".into(), json!(run.transcript.len()));
            extra.insert(
                "audit".into(),
                json!({"pass": audit.pass, "violations": audit.violations}),
            );
            (res, Some(run.iterations))
        }
    };
    let mut v = result.to_json();
    if let Value::Object(m) = &mut v {
        m.insert("iterations".into(), json!(iterations));
        m.extend(extra);
    }
    emit(&v)?;
    Ok(if result.is_success() { Outcome::Ok } else { Outcome::Failed })
}

fn check(system: &Path, gains: &Path) -> Result<Outcome> {
    let sys = load_system(system)?;
    let k = load_controller(gains)?;
    k.check_dims(sys.partition())?;
    let acl = closed_loop(&sys, &k)?;
    let hurwitz = linalg::is_hurwitz(&acl);
    let h2 = if hurwitz { synth::h2_norm(&sys, &k).ok() } else { None };
    let (verdict, _) = stabilizability::block_diagonal_lyapunov(&acl, &sys.partition().n)?;
    emit(&json!({
        "hurwitz": hurwitz,
        "h2": h2,
        "block_diagonal_certificate": verdict == stabilizability::Verdict::Yes,
    }))?;
    Ok(Outcome::Ok)
}

fn run_bench(a: &BenchArgs) -> Result<Outcome> {
    let methods = a
        .methods
        .iter()
        .map(|m| m.parse::<BenchMethod>())
        .collect::<Result<Vec<_>>>()?;
    let cfg = BenchConfig {
        chain_length: a.n,
        instances: a.instances,
        coupling_bound: a.bound,
        seed: a.seed,
        disturbance: a.disturbance.parse::<Disturbance>()?,
        methods,
        admm: AdmmOptions {
            rho: a.rho,
            tol: a.tol,
            max_iter: a.max_iter,
            parallel: false,
        },
        threads: a.threads,
    };
    let report = bench::run_bench(&cfg)?;
    if let Some(p) = &a.csv {
        bench::write_rows_csv(&report.rows, create(p)?)?;
    }
    emit(&serde_json::to_value(&report)?)?;
    Ok(Outcome::Ok)
}

fn decompose(path: &Path) -> Result<Outcome> {
    let sys = load_system(path)?;
    let (_, report) = decomposition_report(&sys.undirected_graph());
    emit(&serde_json::to_value(&report)?)?;
    Ok(Outcome::Ok)
}
