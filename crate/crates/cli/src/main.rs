use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use roa_core::config::RunConfig;
use roa_core::contour::{boundary_loops, format_loops};
use roa_core::report::{analyze, certify_document, FailureKind, ResultDocument};
use roa_core::system::{fixture, SystemSpec, FIXTURES};

const EXIT_INPUT: u8 = 2;
const EXIT_REPLAY: u8 = 6;

#[derive(Parser)]
#[command(name = "roa", version, about = "Region-of-attraction certificates for piecewise-affine systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grow an invariant set, synthesize a Lyapunov-like function and check both.
    Analyze {
        /// System description (JSON).
        spec: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Where to write the result document; stdout if omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the boundary of one certified set as closed polylines.
    Boundary {
        result: PathBuf,
        iteration: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-check a stored result without any synthesis.
    Certify {
        result: PathBuf,
        /// Monte-Carlo samples; defaults to the value stored in the result.
        #[arg(long)]
        samples: Option<usize>,
        /// Monte-Carlo seed; defaults to the value stored in the result.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write one of the built-in system descriptions.
    Fixture {
        /// stable-linear, unstable-linear or pendulum.
        name: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    eps1: Option<f64>,
    #[arg(long)]
    eps2: Option<f64>,
    #[arg(long)]
    eps3: Option<f64>,
    #[arg(long = "eps-nugis")]
    eps_nugis: Option<f64>,
    /// Weight on the blocking slacks.
    #[arg(long)]
    penalty: Option<f64>,
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cell budget per LP stage.
    #[arg(long = "max-cells")]
    max_cells: Option<usize>,
}

impl ConfigArgs {
    fn apply(&self, mut cfg: RunConfig) -> RunConfig {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { cfg.$f = v; })*};
        }
        set!(alpha0, gamma, eps1, eps2, eps3, eps_nugis, penalty, max_iter, dt, horizon, samples, seed, max_cells);
        cfg
    }
}

/// Error carrying the process exit code.
struct Failure(u8, String);

fn input(msg: impl std::fmt::Display) -> Failure {
    Failure(EXIT_INPUT, msg.to_string())
}

fn exit_code(kind: FailureKind) -> u8 {
    match kind {
        FailureKind::Input => 2,
        FailureKind::NoCertificate => 3,
        FailureKind::RefinementStalled => 4,
        FailureKind::Solver => 5,
        FailureKind::Replay => 6,
    }
}

/// Write via a temporary file in the same directory, then rename.
fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(contents).and_then(|_| f.sync_all()))
        .and_then(|_| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn emit(output: Option<&Path>, contents: &[u8]) -> Result<(), Failure> {
    match output {
        Some(p) => write_atomic(p, contents).map_err(|e| input(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(contents)
            .map_err(|e| input(format!("cannot write to stdout: {e}"))),
    }
}

fn to_json(value: &impl serde::Serialize) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(value).expect("documents serialize");
    s.push(b'\n');
    s
}

fn read_result(path: &Path) -> Result<ResultDocument, Failure> {
    let text = fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input(format!("{}: not a result document: {e}", path.display())))
}

fn cmd_analyze(spec: &Path, config: &ConfigArgs, output: Option<&Path>) -> Result<(), Failure> {
    let text = fs::read_to_string(spec).map_err(|e| input(format!("cannot read {}: {e}", spec.display())))?;
    let spec: SystemSpec =
        serde_json::from_str(&text).map_err(|e| input(format!("cannot parse system description: {e}")))?;
    let cfg = config.apply(RunConfig::default());
    match analyze(&spec, &cfg) {
        Ok(doc) => {
            emit(output, &to_json(&doc))?;
            let t = &doc.timings;
            eprintln!(
                "certified: {} iterations, cells {} -> {}, iise {:.2}s, lyapunov {:.2}s, total {:.2}s",
                doc.iterations.len(),
                doc.cells_initial,
                doc.cells_final,
                t.iise_seconds,
                t.lyapunov_seconds,
                t.total_seconds
            );
            Ok(())
        }
        Err(f) => {
            if let Some(doc) = f.document.as_deref() {
                emit(output, &to_json(doc))?;
            }
            Err(Failure(exit_code(f.kind), f.message))
        }
    }
}

fn cmd_boundary(result: &Path, iteration: usize, output: Option<&Path>) -> Result<(), Failure> {
    let doc = read_result(result)?;
    let cert = doc.certificate(iteration).ok_or_else(|| {
        input(format!(
            "iteration {iteration} out of range (result holds {})",
            doc.iterations.len()
        ))
    })?;
    let loops = boundary_loops(cert)
        .ok_or_else(|| input(format!("boundary output needs a 2-D system, got dimension {}", doc.system.dim())))?;
    emit(output, format_loops(&loops).as_bytes())
}

fn cmd_certify(result: &Path, samples: Option<usize>, seed: Option<u64>, output: Option<&Path>) -> Result<(), Failure> {
    let doc = read_result(result)?;
    let cfg = &doc.provenance.config;
    let report = certify_document(&doc, samples.unwrap_or(cfg.samples), seed.unwrap_or(cfg.seed)).map_err(input)?;
    emit(output, &to_json(&report))?;
    match &report.first_failure {
        None => {
            eprintln!("certificate replay clean");
            Ok(())
        }
        Some(msg) => Err(Failure(EXIT_REPLAY, format!("replay failed: {msg}"))),
    }
}

fn cmd_fixture(name: &str, output: Option<&Path>) -> Result<(), Failure> {
    let spec = fixture(name).map_err(|e| input(format!("{e}; available: {}", FIXTURES.join(", "))))?;
    emit(output, &to_json(&spec))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze { spec, config, output } => cmd_analyze(spec, config, output.as_deref()),
        Command::Boundary { result, iteration, output } => cmd_boundary(result, *iteration, output.as_deref()),
        Command::Certify {
            result,
            samples,
            seed,
            output,
        } => cmd_certify(result, *samples, *seed, output.as_deref()),
        Command::Fixture { name, output } => cmd_fixture(name, output.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            log::debug!("exiting with status {code}");
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
