use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use online_lqr::harness::{self, fmt_num, BeliefRecord, BLOCK_LAYOUT, SCHEMA_VERSION};
use online_lqr::selftest::{run_selftest, Mutation};
use online_lqr::{LqrError, OutputFormat, RunConfig, SweepRow, Trajectory};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "lqr-online", version, about = "Online LQR with an unknown state matrix")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One online run next to the known-model reference.
    Run(IoArgs),
    /// Δt × p refinement study.
    Sweep(IoArgs),
    /// Analytic-oracle checks.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct IoArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Run sweep cells on a thread pool.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(0..=1))]
    parallel: u8,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, hide = true, default_value_t = 0.0)]
    inject_stencil_perturbation: f64,
    #[arg(long, hide = true)]
    inject_asymmetric_riccati: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Both,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
            Format::Both => OutputFormat::Both,
        }
    }
}

/// A failure together with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_FAILURE,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<LqrError> for Failure {
    fn from(e: LqrError) -> Self {
        let code = if e.is_divergence() { EXIT_DIVERGENCE } else { EXIT_CONFIG };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Selftest(args) => cmd_selftest(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(args: &IoArgs) -> Result<(RunConfig, PathBuf, OutputFormat), Failure> {
    let text = fs::read_to_string(&args.config).map_err(|e| Failure {
        code: EXIT_CONFIG,
        message: format!("{}: {e}", args.config.display()),
    })?;
    let config = RunConfig::from_json(&text)?;
    let out = args
        .out
        .clone()
        .or_else(|| config.output_dir().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let format = args
        .format
        .map(OutputFormat::from)
        .or(config.output_format())
        .unwrap_or_default();
    fs::create_dir_all(&out).map_err(|e| Failure::io(&out, e))?;
    Ok((config, out, format))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::io(path, e))?;
    text.push('\n');
    write(path, text.as_bytes())
}

#[derive(Serialize)]
struct TrajectoryJson<'a> {
    side: &'a str,
    times: &'a [f64],
    states: Vec<Vec<f64>>,
    controls: Vec<Vec<f64>>,
}

impl<'a> TrajectoryJson<'a> {
    fn new(side: &'a str, t: &'a Trajectory) -> Self {
        let rows = |v: &[nalgebra::DVector<f64>]| v.iter().map(|x| x.iter().copied().collect()).collect();
        TrajectoryJson {
            side,
            times: &t.times,
            states: rows(&t.states),
            controls: rows(&t.controls),
        }
    }
}

fn beliefs_csv(records: &[BeliefRecord]) -> Result<Vec<u8>, csv::Error> {
    let n = records.first().map_or(0, |r| r.belief.mean_matrix.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["round".to_string(), "t_end".to_string(), "covariance_trace".to_string()];
    header.extend((1..=n).flat_map(|i| (1..=n).map(move |j| format!("a_{i}{j}"))));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.round.to_string(), fmt_num(r.t_end), fmt_num(r.belief.covariance_trace)];
        row.extend(r.belief.mean_matrix.iter().flatten().map(|v| fmt_num(*v)));
        w.write_record(&row)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

fn cmd_run(args: &IoArgs) -> Result<(), Failure> {
    let (config, out, format) = load(args)?;
    let spec = config.spec()?.validate()?;
    let mut resolved = RunConfig::from_spec(&spec.to_spec());
    resolved.output = config.output.clone();
    let outcome = harness::run_pair(&spec, resolved)?;
    let beliefs = outcome.beliefs(&spec);
    let sides = [
        ("online", &outcome.online.trajectory),
        ("reference", &outcome.reference.trajectory),
    ];

    write_json(&out.join("summary.json"), &outcome.report)?;
    if format.json() {
        let trajs: Vec<_> = sides.iter().map(|(s, t)| TrajectoryJson::new(s, t)).collect();
        write_json(&out.join("trajectories.json"), &trajs)?;
        write_json(&out.join("beliefs.json"), &beliefs)?;
    }
    if format.csv() {
        let mut buf = Vec::new();
        harness::write_trajectories_csv(&mut buf, &sides)?;
        write(&out.join("trajectories.csv"), &buf)?;
        let path = out.join("beliefs.csv");
        write(&path, &beliefs_csv(&beliefs).map_err(|e| Failure::io(&path, e))?)?;
    }

    let r = &outcome.report;
    println!("online_cost     {:.6}", r.online_cost);
    println!("reference_cost  {:.6}", r.reference_cost);
    println!("final_a_error   {:.6e}", r.final_a_error);
    println!("rounds          {}", r.rounds);
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    schema_version: &'static str,
    config: &'a RunConfig,
    block_layout: &'static str,
    rows: &'a [SweepRow],
}

fn cmd_sweep(args: &IoArgs) -> Result<(), Failure> {
    let (config, out, format) = load(args)?;
    let (dts, ps) = config.sweep_lists()?;
    let base = config.spec_for(dts[0], ps[0])?;
    let result = harness::run_sweep(&base, &dts, &ps, config.sweep_options(args.parallel == 1))?;

    write_json(
        &out.join("summary.json"),
        &SweepSummary {
            schema_version: SCHEMA_VERSION,
            config: &config,
            block_layout: BLOCK_LAYOUT,
            rows: &result.rows,
        },
    )?;
    if format.csv() {
        let mut buf = Vec::new();
        harness::write_sweep_csv(&mut buf, &result)?;
        write(&out.join("table.csv"), &buf)?;
    }

    println!("{:>8} {:>2} {:>12} {:>12} {:>12} {:>7} {:>12} {:>7}", "dt", "p", "online", "reference", "cost_err", "order", "a_error", "order");
    let cell = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |v| format!("{v:.prec$}"));
    for r in &result.rows {
        match &r.message {
            Some(msg) => println!("{:>8} {:>2} failed: {msg}", r.dt, r.p),
            None => println!(
                "{:>8} {:>2} {:>12} {:>12} {:>12} {:>7} {:>12} {:>7}",
                r.dt,
                r.p,
                cell(r.online_cost, 6),
                cell(r.reference_cost, 6),
                r.cost_error.map_or("-".into(), |v| format!("{v:.3e}")),
                cell(r.cost_order, 2),
                r.a_error.map_or("-".into(), |v| format!("{v:.3e}")),
                cell(r.a_error_order, 2),
            ),
        }
    }
    println!("wrote {}", out.display());

    if result.succeeded() == 0 && !result.rows.is_empty() {
        let diverged = result.rows.iter().any(|r| r.failed_round.is_some());
        return Err(Failure {
            code: if diverged { EXIT_DIVERGENCE } else { EXIT_CONFIG },
            message: "no sweep cell succeeded".into(),
        });
    }
    Ok(())
}

fn cmd_selftest(args: &SelftestArgs) -> Result<(), Failure> {
    let mutation = Mutation {
        stencil_perturbation: args.inject_stencil_perturbation,
        asymmetric_riccati: args.inject_asymmetric_riccati,
    };
    let outcomes = run_selftest(&mutation);
    for c in &outcomes {
        println!("{} {:<24} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = outcomes.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure {
            code: EXIT_FAILURE,
            message: format!("{failed} of {} checks failed", outcomes.len()),
        });
    }
    Ok(())
}
