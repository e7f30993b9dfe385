use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use fhn_meso::config::{documented_defaults, RunConfig};
use fhn_meso::harness::{emit_report, execute, recompute_fits, Evaluation, Mode};
use log::info;

/// Simulation and verification suite for the mesoscopic FitzHugh–Nagumo kinetic equation.
#[derive(Parser, Debug)]
#[command(name = "fhn-meso", version)]
struct Cli {
    /// Output root; overrides output.dir. Results land in <out>/<run_id>/.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "FHN_MESO_THREADS")]
    threads: Option<usize>,
    /// Overrides experiment.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Treat clamping and stiffness warnings as assertion failures.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the first eps of the list and write its curves.
    Simulate { config: PathBuf },
    /// Run every eps, fit the rates and check the sweep bounds.
    Sweep { config: PathBuf },
    /// Sweep plus structural identities, quadrature oracles, random pairs and the direct cross-check.
    Validate { config: PathBuf },
    /// Recompute the fits of an output directory from its CSV and compare with its summary.
    Report { dir: PathBuf },
}

const OK: u8 = 0;
const ASSERTION_FAILED: u8 = 1;
const CONFIG_ERROR: u8 = 2;

fn load(path: &Path, cli: &Cli) -> Result<RunConfig, String> {
    let mut c = RunConfig::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(s) = cli.seed {
        c.experiment.seed = s;
    }
    if let Some(o) = &cli.out {
        c.output.dir = o.display().to_string();
    }
    Ok(c)
}

fn print_evaluation(ev: &Evaluation, dir: &Path) {
    for a in &ev.assessment.assertions {
        println!(
            "{} [{}] {:<40} {:>12.5e}  {}",
            if a.passed { "PASS" } else { "FAIL" },
            a.group,
            a.name,
            a.measured,
            a.detail
        );
    }
    for r in &ev.runs {
        println!("eps {:<8} {:?}, {} steps, {:.1} s", r.eps, r.status, r.telemetry.steps, r.telemetry.wall_seconds);
    }
    println!("output: {}", dir.display());
}

fn run_mode(cli: &Cli, path: &Path, mode: Mode) -> u8 {
    let config = match load(path, cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return CONFIG_ERROR;
        }
    };
    let root = PathBuf::from(&config.output.dir);
    let ev = match execute(config, mode, cli.strict) {
        Ok(ev) => ev,
        Err(e) => {
            eprintln!("error: {e}");
            return CONFIG_ERROR;
        }
    };
    let dir = match emit_report(&root, &ev) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error writing reports: {e}");
            return CONFIG_ERROR;
        }
    };
    print_evaluation(&ev, &dir);
    if ev.all_passed() {
        OK
    } else {
        ASSERTION_FAILED
    }
}

fn report(dir: &Path) -> u8 {
    match recompute_fits(dir) {
        Ok(r) => {
            for m in &r.mismatches {
                println!("MISMATCH {m}");
            }
            println!("{} fits recomputed from sweep.csv, {} mismatches", r.checked, r.mismatches.len());
            if r.mismatches.is_empty() {
                OK
            } else {
                ASSERTION_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {}: {e}", dir.display());
            CONFIG_ERROR
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let help = format!("Config keys and defaults:\n{}", documented_defaults());
    let matches = Cli::command().after_long_help(help).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
    }
    info!("{:?}", cli.command);
    let code = match &cli.command {
        Command::Simulate { config } => run_mode(&cli, config, Mode::Simulate),
        Command::Sweep { config } => run_mode(&cli, config, Mode::Sweep),
        Command::Validate { config } => run_mode(&cli, config, Mode::Validate),
        Command::Report { dir } => report(dir),
    };
    ExitCode::from(code)
}
