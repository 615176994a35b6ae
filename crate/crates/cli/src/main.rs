use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fdia_core::attack::SignalKind;
use fdia_core::oracle_check::oracle_check;
use fdia_core::report::{describe, write_case};
use fdia_core::scenario::{load_spec, preset, ScenarioSpec, PRESETS};
use fdia_core::scheduler::SelectionMode;
use fdia_core::sim::{run_case, RunOptions};
use fdia_core::sweep::{sweep, trend_violations, write_sweep};

#[derive(Parser)]
#[command(name = "fdia", version, about = "Attack-detection scheduling for distributed state estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or preset and write CSV outputs.
    Run {
        /// Preset name or path to a scenario JSON file.
        scenario: String,
        #[command(flatten)]
        common: Common,
    },
    /// Dynamic attack on sensor 5 over 100 steps.
    Case1(CaseArgs),
    /// Static attack on seven links from step 101 to 500.
    Case2(CaseArgs),
    /// FN/FP rates over a (beta, 1/upsilon) grid.
    Sweep {
        #[arg(long, default_value = "cstr-case1")]
        scenario: String,
        #[arg(long, value_delimiter = ',', required = true)]
        beta_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        upsilon_grid: Vec<f64>,
        #[arg(long, value_enum)]
        family: Option<Family>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV file.
        #[arg(long, default_value = "out/sweep.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare the scheduler against brute force on random instances.
    OracleCheck {
        #[arg(long, value_delimiter = ',', default_value = "4,5,6,7,8,9,10")]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        q: Option<Vec<usize>>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print a preset scenario as JSON.
    Preset { name: String },
}

#[derive(Args)]
struct Common {
    /// Number of Monte Carlo seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Master seed; run r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct CaseArgs {
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, value_enum)]
    family: Option<Family>,
    #[arg(long)]
    upsilon_inv: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sampled,
    Sorted,
}

impl From<Mode> for SelectionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Sampled => SelectionMode::Sampled,
            Mode::Sorted => SelectionMode::Sorted,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Unstealthy,
    Stealthy,
}

impl From<Family> for SignalKind {
    fn from(f: Family) -> Self {
        match f {
            Family::Unstealthy => SignalKind::Unstealthy,
            Family::Stealthy => SignalKind::Stealthy,
        }
    }
}

fn apply_common(spec: &mut ScenarioSpec, common: &Common) {
    if let Some(n) = common.seeds {
        spec.run.monte_carlo = n;
    }
    if let Some(s) = common.seed {
        spec.run.seed = s;
    }
}

fn run_spec(spec: ScenarioSpec, common: &Common) -> Result<()> {
    let scenario = spec.validate()?;
    let options = RunOptions {
        jobs: common.jobs,
        ..RunOptions::default()
    };
    let result = run_case(&scenario, &options)?;
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(&spec.name));
    let files = write_case(&result, &spec, &out)?;
    print!("{}", describe(&result));
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}

fn run_case_command(name: &str, args: &CaseArgs) -> Result<()> {
    let mut spec = preset(name).context("missing preset")?;
    if let Some(f) = args.family {
        spec = spec.with_family(f.into());
    }
    if let Some(b) = args.beta {
        spec.scheduler.beta = b;
    }
    if let Some(m) = args.mode {
        spec.scheduler.mode = m.into();
    }
    if let Some(u) = args.upsilon_inv {
        spec.detector.upsilon_inv = u;
    }
    apply_common(&mut spec, &args.common);
    run_spec(spec, &args.common)
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { scenario, common } => {
            let mut spec = load_spec(&scenario)?;
            apply_common(&mut spec, &common);
            run_spec(spec, &common)?;
        }
        Command::Case1(args) => run_case_command("cstr-case1", &args)?,
        Command::Case2(args) => run_case_command("cstr-case2", &args)?,
        Command::Sweep {
            scenario,
            beta_grid,
            upsilon_grid,
            family,
            mode,
            seeds,
            seed,
            out,
            jobs,
        } => {
            let mut spec = load_spec(&scenario)?;
            if let Some(f) = family {
                spec = spec.with_family(f.into());
            }
            if let Some(m) = mode {
                spec.scheduler.mode = m.into();
            }
            if let Some(n) = seeds {
                spec.run.monte_carlo = n;
            }
            if let Some(s) = seed {
                spec.run.seed = s;
            }
            let rows = sweep(&spec, &beta_grid, &upsilon_grid, jobs)?;
            write_sweep(&rows, &out)?;
            for r in &rows {
                println!(
                    "beta {:<5} 1/upsilon {:<5} FN {:.4} FP {:.4} opt rate {:.4}",
                    r.beta, r.upsilon_inv, r.fn_mean, r.fp_mean, r.avg_opt_rate
                );
            }
            for v in trend_violations(&rows) {
                println!("trend: {v}");
            }
            println!("wrote {}", out.display());
        }
        Command::OracleCheck { sizes, q, trials, seed } => {
            let report = oracle_check(&sizes, q.as_deref(), trials, seed)?;
            for f in &report.failures {
                println!("FAIL {f}");
            }
            println!(
                "{} trials, {} sampled-mode evaluations, {}",
                report.trials,
                report.evaluations,
                if report.passed() { "all checks passed" } else { "failures found" }
            );
            return Ok(report.passed());
        }
        Command::Preset { name } => {
            let Some(spec) = preset(&name) else {
                bail!("unknown preset `{name}`; available: {}", PRESETS.join(", "));
            };
            let text = serde_json::to_string_pretty(&spec)?;
            match writeln!(io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
