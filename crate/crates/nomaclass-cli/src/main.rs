//! Experiment runner for the blind-classification simulator.
//!
//! Subcommands: `sweep` runs the Monte Carlo error and capacity curves,
//! `optimize-theta` grid-searches the single-user rotation, `analyze` writes
//! the closed-form SINR and capacity tables, and `validate` runs the
//! invariant self checks. Exit codes: 0 ok, 1 config error, 2 runtime
//! failure.

mod config;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use nomaclass::analysis::{
    mc_error_prob, optimize_theta, sinr_condition, sinr_report, LinkState, SicPolicy,
};
use nomaclass::modes::{case1, case2, case3, ModeTable};
use nomaclass::sim::{run_sweep, Scheme, SimConfig, TruthModel};

use config::{ConfigError, FileConfig, Overrides};

/// Workers for the trial loops; unset means one per core.
const WORKERS_VAR: &str = "NOMACLASS_WORKERS";

#[derive(Parser)]
#[command(
    name = "nomaclass",
    version,
    about = "Blind classification experiments for two-user superposed downlinks",
    after_help = "Set NOMACLASS_WORKERS to pin the simulation worker count."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo sweep over an SNR grid; writes the error and capacity curves.
    Sweep(SweepArgs),
    /// Grid search of the single-user rotation against measured capacity.
    OptimizeTheta(ThetaArgs),
    /// Closed-form SINR and capacity tables; no simulation.
    Analyze(AnalyzeArgs),
    /// Run the invariant self checks.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mode table preset: case1, case2 or case3.
    #[arg(long)]
    preset: Option<String>,
    /// Lowest SNR in dB.
    #[arg(long)]
    snr_min: Option<f64>,
    /// Highest SNR in dB (inclusive).
    #[arg(long)]
    snr_max: Option<f64>,
    /// Grid step in dB.
    #[arg(long)]
    snr_step: Option<f64>,
    /// Trials per SNR point.
    #[arg(long)]
    trials: Option<u64>,
    /// Data symbols per frame.
    #[arg(long)]
    frame_symbols: Option<usize>,
    /// Master seed; reruns with the same seed are byte-identical.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated schemes: mlc, mlc-prm (alias prm), prc, genie.
    #[arg(long)]
    classifiers: Option<String>,
    /// Truth model: near-user, mixed-roles or noma-near.
    #[arg(long)]
    truth: Option<String>,
    /// Single-user data rotation of the mlc-prm scheme, in radians.
    #[arg(long)]
    prm_rotation: Option<f64>,
    /// Pilot phase plan: uniform or nonuniform.
    #[arg(long)]
    phase_rule: Option<String>,
    /// Likelihood classifier: three-step or joint.
    #[arg(long)]
    classifier_kind: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ThetaArgs {
    /// JSON config file providing the mode table.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mode table preset: case1, case2 or case3.
    #[arg(long)]
    preset: Option<String>,
    /// Operating SNR in dB.
    #[arg(long, default_value_t = 13.0)]
    snr: f64,
    /// Rotation grid resolution in radians.
    #[arg(long, default_value_t = 0.01)]
    grid_step: f64,
    /// Trials per grid point.
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    /// Master seed, shared by every grid point.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// JSON config file providing the mode table.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mode table preset: case1, case2 or case3.
    #[arg(long)]
    preset: Option<String>,
    /// Lowest SNR in dB.
    #[arg(long)]
    snr_min: Option<f64>,
    /// Highest SNR in dB (inclusive).
    #[arg(long)]
    snr_max: Option<f64>,
    /// Grid step in dB.
    #[arg(long)]
    snr_step: Option<f64>,
    /// Channel draws behind the capacity averages.
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Seed of the channel draws.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Trials per point in the simulation checks.
    #[arg(long, default_value_t = 500)]
    trials: u64,
    /// Master seed of the simulation checks.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// What went wrong, split by exit code.
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Failure {
        Failure::Config(e.to_string())
    }
}

fn runtime(e: anyhow::Error) -> Failure {
    Failure::Runtime(format!("{e:#}"))
}

fn main() -> ExitCode {
    // The search also answers to its flag spelling.
    let args: Vec<OsString> = std::env::args_os()
        .map(|a| if a == "--optimize-theta" { OsString::from("optimize-theta") } else { a })
        .collect();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };

    if let Err(f) = apply_worker_env().and_then(|()| match cli.command {
        Command::Sweep(a) => cmd_sweep(a),
        Command::OptimizeTheta(a) => cmd_theta(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Validate(a) => cmd_validate(a),
    }) {
        match f {
            Failure::Config(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(1)
            }
            Failure::Runtime(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
        }
    } else {
        ExitCode::SUCCESS
    }
}

fn apply_worker_env() -> Result<(), Failure> {
    let Some(value) = std::env::var_os(WORKERS_VAR) else { return Ok(()) };
    let text = value.to_string_lossy();
    let workers: usize = text
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Failure::Config(format!("{WORKERS_VAR} must be a positive integer (got '{text}')")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| Failure::Runtime(format!("worker pool: {e}")))
}

fn load_file(path: &Option<PathBuf>) -> Result<FileConfig, Failure> {
    match path {
        Some(p) => Ok(FileConfig::load(p)?),
        None => Ok(FileConfig::default()),
    }
}

fn ensure_out_dir(dir: &PathBuf) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::Config(format!("output directory {}: {e}", dir.display())))
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    let file = load_file(&a.config)?;
    let flags = Overrides {
        preset: a.preset,
        snrs_db: None,
        snr_min: a.snr_min,
        snr_max: a.snr_max,
        snr_step: a.snr_step,
        trials: a.trials,
        frame_symbols: a.frame_symbols,
        seed: a.seed,
        classifiers: a.classifiers,
        truth: a.truth,
        prm_rotation: a.prm_rotation,
        phase_rule: a.phase_rule,
        classifier_kind: a.classifier_kind,
    };
    let (spec, sim) = config::resolve(&file, &flags)?;
    ensure_out_dir(&a.out)?;
    println!(
        "sweep: preset {}, {} SNR points, {} trials/point, schemes {}, seed {}",
        spec.preset,
        spec.snrs_db.len(),
        spec.trials,
        spec.classifiers.join(","),
        spec.seed
    );
    let sweep = run_sweep(&sim).map_err(|e| Failure::Config(e.to_string()))?;
    output::write_curves(&a.out, &sweep).map_err(runtime)?;
    output::write_confusion(&a.out, &sweep).map_err(runtime)?;
    output::write_capacity(&a.out, &sweep, &sim.table, spec.mc_samples, spec.seed).map_err(runtime)?;
    output::write_manifest(&a.out, &spec).map_err(runtime)?;
    println!(
        "wrote curves.csv, {} confusion tables, capacity.csv and manifest.json to {}",
        spec.snrs_db.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_theta(a: ThetaArgs) -> Result<(), Failure> {
    if !a.snr.is_finite() {
        return Err(Failure::Config(format!("SNR must be finite (got {})", a.snr)));
    }
    if !(a.grid_step > 0.0 && a.grid_step < std::f64::consts::FRAC_PI_2) {
        return Err(Failure::Config(format!(
            "grid step must lie in (0, pi/2) (got {})",
            a.grid_step
        )));
    }
    let file = load_file(&a.config)?;
    let flags = Overrides {
        preset: a.preset,
        snrs_db: Some(vec![a.snr]),
        trials: Some(a.trials),
        seed: Some(a.seed),
        ..Overrides::default()
    };
    let (mut spec, sim) = config::resolve(&file, &flags)?;
    spec.theta_grid_step = Some(a.grid_step);
    ensure_out_dir(&a.out)?;
    let search = optimize_theta(&sim.table, a.snr, a.grid_step, a.trials, a.seed);
    output::write_theta_search(&a.out, &search).map_err(runtime)?;
    output::write_manifest(&a.out, &spec).map_err(runtime)?;
    println!(
        "theta = {:.4} rad, capacity = {:.6} bit/s/Hz ({} grid points at {} dB, {} trials each)",
        search.best_theta(),
        search.best_capacity(),
        search.grid.len(),
        a.snr,
        a.trials
    );
    println!("wrote theta_search.csv and manifest.json to {}", a.out.display());
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<(), Failure> {
    let mut file = load_file(&a.config)?;
    if let Some(samples) = a.mc_samples {
        file.mc_samples = Some(samples);
    }
    let flags = Overrides {
        preset: a.preset,
        snr_min: a.snr_min,
        snr_max: a.snr_max,
        snr_step: a.snr_step,
        seed: a.seed,
        ..Overrides::default()
    };
    let (spec, sim) = config::resolve(&file, &flags)?;
    ensure_out_dir(&a.out)?;
    output::write_analysis(&a.out, &sim.table, &sim.snrs_db).map_err(runtime)?;
    output::write_capacity_bound(&a.out, &sim.table, &sim.snrs_db, spec.mc_samples, spec.seed)
        .map_err(runtime)?;
    output::write_manifest(&a.out, &spec).map_err(runtime)?;
    println!(
        "wrote analysis.csv, capacity_bound.csv and manifest.json to {} ({} modes, {} SNR points)",
        a.out.display(),
        sim.table.len(),
        sim.snrs_db.len()
    );
    Ok(())
}

type Check = (&'static str, Box<dyn Fn() -> Result<(), String>>);

fn cmd_validate(a: ValidateArgs) -> Result<(), Failure> {
    let trials = a.trials.max(1);
    let seed = a.seed;
    let checks: Vec<Check> = vec![
        ("preset tables", Box::new(check_preset_tables)),
        ("noiseless exactness", Box::new(move || check_noiseless(seed))),
        ("sinr ordering predicate", Box::new(check_sinr_predicate)),
        ("pairwise bound dominates", Box::new(check_confusion_bound)),
        ("deterministic reruns", Box::new(move || check_determinism(trials, seed))),
    ];
    let mut failures = 0;
    for (name, check) in &checks {
        match check() {
            Ok(()) => println!("ok {name}"),
            Err(msg) => {
                failures += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    if failures > 0 {
        Err(Failure::Runtime(format!("{failures} of {} checks failed", checks.len())))
    } else {
        println!("all {} checks passed", checks.len());
        Ok(())
    }
}

fn check_preset_tables() -> Result<(), String> {
    let expect = |table: &ModeTable, powers: &[f64]| -> Result<(), String> {
        let got: Vec<f64> = (0..table.len()).map(|l| table.mode(l).power_far).collect();
        if got == powers {
            Ok(())
        } else {
            Err(format!("far power ratios {got:?}, expected {powers:?}"))
        }
    };
    expect(&case1(), &[1.0, 0.8, 0.8621, 0.9163])?;
    expect(&case2(), &[1.0, 0.8653, 0.95])?;
    expect(&case3(), &[1.0, 0.7619, 0.8653, 0.9275, 0.95, 0.97])
}

fn check_noiseless(seed: u64) -> Result<(), String> {
    for (name, table) in [("case1", case1()), ("case2", case2()), ("case3", case3())] {
        let mut cfg = SimConfig::new(table);
        cfg.snrs_db = vec![90.0];
        cfg.trials = 200;
        cfg.seed = seed;
        let sweep = run_sweep(&cfg).map_err(|e| e.to_string())?;
        for point in &sweep.points {
            let c = &point.counters;
            let errors = c.oma_noma_errors + c.role_errors + c.mode_errors + c.frame_losses;
            if errors > 0 {
                return Err(format!(
                    "{name} {} at 90 dB: {errors} error(s) in {} trials",
                    point.scheme.name(),
                    c.trials
                ));
            }
        }
    }
    Ok(())
}

fn check_sinr_predicate() -> Result<(), String> {
    for (name, table) in [("case1", case1()), ("case2", case2()), ("case3", case3())] {
        for noise_var in [1.0, 0.1, 0.01, 0.001] {
            let link = LinkState::from_mag_sq(1.0, noise_var);
            let report = sinr_report(&table, link, SicPolicy::default());
            for l in 1..table.len() {
                for m in 1..table.len() {
                    let predicate = sinr_condition(&table, l, m, link, SicPolicy::default());
                    let direct = report.eta_correct[l] >= report.eta_mis[l][m];
                    if predicate != direct {
                        return Err(format!(
                            "{name} pair ({l}, {m}) at noise {noise_var}: predicate {predicate}, SINRs say {direct}"
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}

fn check_confusion_bound() -> Result<(), String> {
    let table = case1();
    for snr_db in [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0] {
        let link = LinkState::from_mag_sq(1.0, 10f64.powf(-snr_db / 10.0));
        for l in 1..table.len() {
            for m in 1..table.len() {
                if l == m {
                    continue;
                }
                let exact = mc_error_prob(&table, l, m, link, true);
                let approx = mc_error_prob(&table, l, m, link, false);
                if exact < approx - 1e-12 {
                    return Err(format!(
                        "pair ({l}, {m}) at {snr_db} dB: exact {exact:.3e} below approximation {approx:.3e}"
                    ));
                }
            }
        }
    }
    Ok(())
}

fn check_determinism(trials: u64, seed: u64) -> Result<(), String> {
    let mut cfg = SimConfig::new(case1());
    cfg.snrs_db = vec![10.0];
    cfg.trials = trials;
    cfg.seed = seed;
    cfg.truth = TruthModel::MixedRoles;
    cfg.schemes = Scheme::ALL.to_vec();
    let first = run_sweep(&cfg).map_err(|e| e.to_string())?;
    let second = run_sweep(&cfg).map_err(|e| e.to_string())?;
    if first == second {
        Ok(())
    } else {
        Err("two identical runs disagreed".to_string())
    }
}
