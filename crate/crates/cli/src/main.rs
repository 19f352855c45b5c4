use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

mod config;
mod generate;
mod report;
mod tasks;

use config::Task;
use generate::Profile;
use report::Report;

#[derive(Parser, Debug)]
#[command(name = "qkzb-lab", version, about = "Numerical checks for elliptic weight functions and qKZB solutions")]
struct Cli {
    task: Task,
    /// JSON configuration file (not needed for generate-params).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. --set plan.M=96 (value parsed as JSON).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Write each report table as CSV into this directory.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Seed for sampled points; overrides the config value.
    #[arg(long)]
    seed: Option<u64>,
    /// Parameter profile for generate-params.
    #[arg(long, value_enum, default_value = "generic")]
    profile: Profile,
}

fn usage_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("qkzb-lab: {msg}");
    ExitCode::from(1)
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
    if let Ok(v) = std::env::var("QKZB_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => return usage_error(format!("QKZB_THREADS must be a positive integer, got {v:?}")),
        }
    }
    let start = Instant::now();

    if cli.task == Task::GenerateParams {
        let seed = cli.seed.unwrap_or(0);
        return match generate::generate(cli.profile, seed) {
            Ok((frag, attempts, margin)) => {
                eprintln!("qkzb-lab: {attempts} draw(s), condition margin {margin:.3e}");
                println!("{}", serde_json::to_string_pretty(&frag).expect("fragment serializes"));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("qkzb-lab: {e}");
                ExitCode::from(2)
            }
        };
    }

    let Some(path) = &cli.config else {
        return usage_error("--config is required");
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return usage_error(format!("{}: {e}", path.display())),
    };
    let mut overrides = cli.set.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    let cfg = match config::load(&text, &overrides) {
        Ok(c) => c,
        Err(e) => return usage_error(format!("{}: {e}", path.display())),
    };
    if let Some(t) = cfg.task {
        if t != cli.task {
            return usage_error(format!("config is for task {t}, not {}", cli.task));
        }
    }
    let out = match tasks::run(cli.task, &cfg) {
        Ok(o) => o,
        Err(e) => return usage_error(e),
    };
    let report = Report::new(cli.task, &cfg, out.checks, out.warnings, out.tables);
    if let Some(dir) = &cli.csv {
        if let Err(e) = report.write_csv(dir) {
            return usage_error(format!("{}: {e}", dir.display()));
        }
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    eprintln!("qkzb-lab: {} finished in {:.2} s", cli.task, start.elapsed().as_secs_f64());
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}
