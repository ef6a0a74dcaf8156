//! `splitting run <scenario.json>` and `splitting list`.
//!
//! Exit codes: 0 all checks pass, 1 some check fails, 2 unreadable or
//! schema-invalid scenario, 3 numerical failure.

use clap::{Parser, Subcommand};
use splitting::normalform::SplittingReport;
use splitting::scenario::{self, RunOptions, Scenario, ScenarioError};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "splitting", version, about = "Build and verify splitting normal forms on coordinate charts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file, or a builtin given by name.
    Run {
        scenario: String,
        /// Integrator tolerance (relative and absolute).
        #[arg(long)]
        tol: Option<f64>,
        /// Sample points for the cheap checks.
        #[arg(long)]
        samples: Option<usize>,
        /// Radius of the sampled ball around N.
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Gauss-Legendre nodes of the first quadrature pass.
        #[arg(long = "quad-nodes")]
        quad_nodes: Option<usize>,
        /// Write the report JSON here (`-` for stdout).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write one row per (check, sample point) here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Add a `timestamp` field (seconds since the epoch) to the report.
        #[arg(long)]
        timestamp: bool,
    },
    /// List the builtin scenarios.
    List {
        #[arg(long)]
        json: bool,
    },
}

fn load(arg: &str) -> Result<Scenario, (u8, String)> {
    let path = Path::new(arg);
    let src = if path.exists() {
        std::fs::read_to_string(path).map_err(|e| (2, format!("cannot read {arg}: {e}")))?
    } else if let Some(src) = scenario::builtin_source(arg) {
        src.to_string()
    } else {
        return Err((2, format!("{arg}: no such file or builtin scenario")));
    };
    Scenario::from_json(&src).map_err(describe)
}

fn describe(e: ScenarioError) -> (u8, String) {
    match e {
        ScenarioError::Schema { path, message } => (2, format!("schema error at `{path}`: {message}")),
        ScenarioError::Numeric(e) => (3, format!("numerical failure: {e}")),
    }
}

fn report_json(r: &SplittingReport, timestamp: bool) -> String {
    let mut v = serde_json::to_value(r).expect("report serializes");
    if timestamp {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        v["timestamp"] = secs.into();
    }
    serde_json::to_string_pretty(&v).expect("report serializes") + "\n"
}

fn write_csv(r: &SplittingReport, dim: usize, path: &Path) -> Result<(), String> {
    let mut w = csv::Writer::from_path(path).map_err(|e| e.to_string())?;
    let mut header = vec!["check".to_string(), "sample".into(), "residual".into(), "pass".into()];
    header.extend((1..=dim).map(|i| format!("w{i}")));
    w.write_record(&header).map_err(|e| e.to_string())?;
    for c in &r.checks {
        for (i, s) in c.residuals.iter().enumerate() {
            let mut row = vec![c.name.clone(), i.to_string(), format!("{:e}", s.residual), (s.residual <= c.tol).to_string()];
            row.extend((0..dim).map(|k| s.point.get(k).map_or(String::new(), |x| format!("{x:e}"))));
            w.write_record(&row).map_err(|e| e.to_string())?;
        }
    }
    w.flush().map_err(|e| e.to_string())
}

fn run(cmd: Command) -> Result<u8, (u8, String)> {
    match cmd {
        Command::List { json } => {
            let cat = scenario::list_builtins();
            if json {
                println!("{}", serde_json::to_string_pretty(&cat).expect("catalog serializes"));
            } else {
                let width = cat.iter().map(|c| c.name.len()).max().unwrap_or(0);
                for c in &cat {
                    println!("{:width$}  {}  [{}]", c.name, c.description, c.anchor);
                }
            }
            Ok(0)
        }
        Command::Run {
            scenario,
            tol,
            samples,
            radius,
            seed,
            quad_nodes,
            report,
            csv,
            timestamp,
        } => {
            let opts = RunOptions {
                tol,
                samples,
                radius,
                seed,
                quad_nodes,
            };
            let s = load(&scenario)?.with_options(&opts).map_err(describe)?;
            let r = scenario::run(&s).map_err(describe)?;
            let to_stdout = report.as_deref() == Some(Path::new("-"));
            if !to_stdout {
                for c in &r.checks {
                    println!(
                        "{} {:24} max {:.3e}  tol {:.0e}  samples {}{}",
                        if c.pass { "PASS" } else { "FAIL" },
                        c.name,
                        c.max_residual,
                        c.tol,
                        c.samples,
                        c.note.as_ref().map_or(String::new(), |n| format!("  ({n})"))
                    );
                }
                println!("{}: {}", r.scenario, if r.verdict { "pass" } else { "FAIL" });
            }
            let json = report_json(&r, timestamp);
            match report.as_deref() {
                Some(p) if p == Path::new("-") => print!("{json}"),
                Some(p) => std::fs::write(p, json).map_err(|e| (3, format!("cannot write {}: {e}", p.display())))?,
                None => {}
            }
            if let Some(p) = csv {
                write_csv(&r, s.dim, &p).map_err(|e| (3, format!("cannot write {}: {e}", p.display())))?;
            }
            Ok(if r.verdict { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
