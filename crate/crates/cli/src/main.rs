use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use qpath::dump::DumpFormat;
use qpath_cli::config::{self, Mode, Resolved};
use qpath_cli::run::{run, RunOptions};
use qpath_cli::validate::{has_errors, validate, Severity};
use serde_json::json;

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Csv,
    Binary,
}

/// Quantum trajectory simulation and path-integral statistics.
#[derive(Debug, Parser)]
#[command(name = "qpath", version)]
struct Cli {
    /// TOML config, or a `.manifest.json` from an earlier run to replay it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Master seed [env: QPATH_SEED].
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads [env: QPATH_WORKERS].
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trajectory dump format; repeat for several.
    #[arg(long, value_enum)]
    format: Vec<FormatArg>,
}

fn fail(code: u8, kind: &str, message: String, extra: serde_json::Value) -> ExitCode {
    let mut rec = json!({ "error": kind, "message": message });
    if let (Some(m), serde_json::Value::Object(x)) = (rec.as_object_mut(), extra) {
        m.extend(x);
    }
    eprintln!("{rec}");
    ExitCode::from(code)
}

fn env_number<T: std::str::FromStr>(name: &str) -> Result<Option<T>, String> {
    match std::env::var(name) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| format!("{name}={v} is not a valid number")),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let resolved = match &cli.config {
        Some(path) => config::load(path, cli.mode),
        None => config::resolve("", cli.mode),
    };
    let Resolved { config: mut cfg, defaulted } = match resolved {
        Ok(r) => r,
        Err(e) => return fail(2, "config", e.to_string(), json!({})),
    };
    let (env_seed, env_workers) = match (env_number::<u64>("QPATH_SEED"), env_number::<usize>("QPATH_WORKERS")) {
        (Ok(s), Ok(w)) => (s, w),
        (Err(e), _) | (_, Err(e)) => return fail(2, "environment", e, json!({})),
    };
    if let Some(seed) = cli.seed.or(env_seed) {
        cfg.ensemble.master_seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output.directory = out;
    }
    if !cli.format.is_empty() {
        cfg.output.formats = cli
            .format
            .iter()
            .map(|f| match f {
                FormatArg::Csv => DumpFormat::Csv,
                FormatArg::Binary => DumpFormat::Binary,
            })
            .collect();
        cfg.output.formats.dedup();
    }
    let workers = cli.workers.or(env_workers);

    let violations = validate(&cfg);
    if has_errors(&violations) {
        let errors: Vec<_> = violations.iter().filter(|v| v.severity == Severity::Error).collect();
        return fail(
            2,
            "validation",
            format!("{} invalid field(s), first `{}`", errors.len(), errors[0].path),
            json!({ "violations": errors }),
        );
    }
    let warnings: Vec<String> = violations
        .iter()
        .map(|v| format!("{}: {}", v.path, v.message))
        .collect();
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let opts = RunOptions { workers, defaulted, warnings };
    match run(&cfg, &opts) {
        Ok(summary) => {
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(1, "runtime", e.to_string(), json!({ "mode": cfg.mode.name() })),
    }
}
