use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fairledger::harness::{audit, corpus, run, RunReport, Scenario};
use fairledger::simnet::Trace;

#[derive(Parser)]
#[command(name = "fairledger", about = "Simulate and audit FairLedger committees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file (TOML, or JSON by extension).
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the event trace as NDJSON.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Write the report as JSON.
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Re-audit an exported trace.
    Audit { trace: PathBuf },
    /// Run the bundled scenarios.
    Corpus {
        /// Only scenarios whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
    },
}

fn execute(s: &Scenario) -> Result<(RunReport, Trace), String> {
    let r = run(s).map_err(|e| e.to_string())?;
    Ok((RunReport::from_trace(&r.trace), r.trace))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<bool, String> = (|| match cli.command {
        Command::Run { scenario, seed, trace_out, report_out } => {
            let mut s = Scenario::load(&scenario).map_err(|e| e.to_string())?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let (report, trace) = execute(&s)?;
            if let Some(path) = trace_out {
                let f = File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                trace.write_ndjson(std::io::BufWriter::new(f)).map_err(|e| e.to_string())?;
            }
            if let Some(path) = report_out {
                std::fs::write(&path, report.to_json()).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            print!("{}", report.table());
            Ok(report.audit.passed())
        }
        Command::Audit { trace } => {
            let f = File::open(&trace).map_err(|e| format!("{}: {e}", trace.display()))?;
            let t = Trace::read_ndjson(BufReader::new(f)).map_err(|e| format!("{}: {e}", trace.display()))?;
            let report = audit(&t);
            for v in &report.verdicts {
                let mark = if v.passed { "ok" } else { "FAIL" };
                println!("{:<20} {mark} {} {:?}", v.name, v.detail, v.counterexample);
            }
            Ok(report.passed())
        }
        Command::Corpus { filter } => {
            let all = corpus::load_all().map_err(|e| e.to_string())?;
            let mut ok = true;
            for s in all.iter().filter(|s| filter.as_deref().is_none_or(|f| s.name.contains(f))) {
                let (report, _) = execute(s)?;
                let failed: Vec<_> =
                    report.audit.verdicts.iter().filter(|v| !v.passed).map(|v| v.name.as_str()).collect();
                let lat = report.latency.as_ref().map_or("-".into(), |l| format!("{:.1}ms", l.mean / 1000.0));
                println!(
                    "{:<24} {:<4} epochs {:>4}  reconfigs {}  latency {lat}  {}",
                    s.name,
                    if failed.is_empty() { "ok" } else { "FAIL" },
                    report.committed_epochs,
                    report.reconfigurations.len(),
                    failed.join(",")
                );
                ok &= failed.is_empty();
            }
            Ok(ok)
        }
    })();
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
