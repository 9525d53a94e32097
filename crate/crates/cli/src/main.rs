//! `grasp` command line: validate, run, resume, and benchmark pipelines.
//!
//! Exit codes: 0 success, 1 run error, 2 config diagnostics (and usage
//! errors). Logs go to stderr; with `--json` the structured run report goes
//! to stdout.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use grasp_core::config::parse_pipeline_config;
use grasp_core::diag::Diagnostic;
use grasp_core::engine::{self, RunOptions, RunReport};
use grasp_core::registry::Registry;
use grasp_core::GraspError;

/// Accepts bare-switch form (`--oasst`) and the paper's token form
/// (`--oasst True` / `--resume False`).
fn boolish(s: &str) -> Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("expected True or False, got {other:?}")),
    }
}

#[derive(Parser)]
#[command(name = "grasp", version, about = "Graph-driven synthetic data pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Resume an interrupted run from its checkpoint.
    Resume(RunArgs),
    /// Measure sequential vs concurrent throughput on the mock backend.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Task name: reads tasks/<name>/config.yaml.
    #[arg(long)]
    task: Option<String>,

    /// Explicit pipeline YAML path (overrides --task).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Resume from the last checkpoint instead of starting fresh.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_parser = boolish)]
    resume: Option<bool>,

    /// Export OASST conversation trees (oasst.jsonl, sft.jsonl, dpo.jsonl).
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_parser = boolish)]
    oasst: Option<bool>,

    /// Attach two-stage quality reports to output records.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_parser = boolish)]
    quality: Option<bool>,

    /// Records in flight at once.
    #[arg(long, default_value_t = 8)]
    concurrency: usize,

    /// Force single-record execution (benchmark baseline).
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_parser = boolish)]
    sequential: Option<bool>,

    /// Run seed (GRASP_RUN_SEED env overrides the default, this flag wins).
    #[arg(long)]
    seed: Option<u64>,

    /// Process at most this many records.
    #[arg(long)]
    limit: Option<u64>,

    /// Parse and compile only; print diagnostics and exit.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_parser = boolish)]
    dry_run: Option<bool>,

    /// On resume, reprocess records that previously failed.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_parser = boolish)]
    retry_failed: Option<bool>,

    /// Resume even when the config hash does not match the checkpoint.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_parser = boolish)]
    force_resume: Option<bool>,

    /// Checkpoint flush interval, in completed records.
    #[arg(long, default_value_t = 50)]
    checkpoint_every: u64,

    /// Machine-readable report on stdout.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_parser = boolish)]
    json: Option<bool>,
}

#[derive(Args, Clone)]
struct BenchArgs {
    #[arg(long, default_value_t = 200)]
    records: u64,

    #[arg(long, default_value_t = 50)]
    latency_ms: u64,

    #[arg(long, default_value_t = 2)]
    calls_per_record: u32,

    #[arg(long, default_value_t = 8)]
    concurrency: usize,

    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_parser = boolish)]
    json: Option<bool>,
}

extern "C" fn on_signal(_: libc::c_int) {
    engine::request_shutdown();
}

fn install_signal_handlers() {
    let handler = on_signal as *const () as libc::sighandler_t;
    unsafe {
        libc::signal(libc::SIGINT, handler);
        libc::signal(libc::SIGTERM, handler);
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    install_signal_handlers();

    let cli = Cli::parse();
    match cli.command {
        Some(Command::Bench(args)) => bench(args),
        Some(Command::Resume(mut args)) => {
            args.resume = Some(true);
            run(args)
        }
        None => run(cli.run),
    }
}

fn print_diags(diags: &[Diagnostic]) {
    for d in diags {
        eprintln!("{d}");
    }
}

/// Resolve the task YAML and its base directory.
fn locate_config(args: &RunArgs) -> Result<(PathBuf, PathBuf), String> {
    if let Some(path) = &args.config {
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        return Ok((path.clone(), base));
    }
    if let Some(task) = &args.task {
        let tasks_root =
            std::env::var("GRASP_TASKS_DIR").unwrap_or_else(|_| "tasks".to_string());
        let dir = PathBuf::from(tasks_root).join(task);
        return Ok((dir.join("config.yaml"), dir));
    }
    Err("either --task or --config is required".to_string())
}

fn run(args: RunArgs) -> ExitCode {
    let (config_path, base) = match locate_config(&args) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let text = match std::fs::read_to_string(&config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", config_path.display());
            return ExitCode::from(2);
        }
    };

    let parsed = match parse_pipeline_config(&text) {
        Ok(p) => p,
        Err(diags) => {
            print_diags(&diags);
            return ExitCode::from(2);
        }
    };
    print_diags(&parsed.diagnostics);
    let pipeline = parsed.config;

    let library = match grasp_core::graph::load_subgraph_library(&base) {
        Ok(l) => l,
        Err(diags) => {
            print_diags(&diags);
            return ExitCode::from(2);
        }
    };
    let registry = Registry::builtin();

    if args.dry_run.unwrap_or(false) {
        return match engine::compile_pipeline(&pipeline, &registry, &library, &base) {
            Ok(compiled) => {
                print_diags(&compiled.diagnostics);
                println!("valid");
                ExitCode::SUCCESS
            }
            Err(diags) => {
                print_diags(&diags);
                ExitCode::from(2)
            }
        };
    }

    let seed = args
        .seed
        .or_else(|| {
            std::env::var("GRASP_RUN_SEED")
                .ok()
                .and_then(|s| s.parse().ok())
        })
        .unwrap_or(0);
    let options = RunOptions {
        concurrency: args.concurrency,
        checkpoint_every: args.checkpoint_every,
        limit: args.limit,
        sequential: args.sequential.unwrap_or(false),
        run_seed: seed,
        oasst: args.oasst.unwrap_or(false),
        quality: args.quality.unwrap_or(false),
        retry_failed: args.retry_failed.unwrap_or(false),
        force_resume: args.force_resume.unwrap_or(false),
        cancel: None,
    };

    let result = if args.resume.unwrap_or(false) {
        engine::resume_pipeline(&pipeline, &registry, &library, &base, options)
    } else {
        engine::run_pipeline(&pipeline, &registry, &library, &base, options)
    };

    match result {
        Ok(report) => {
            emit_report(&report, args.json.unwrap_or(false));
            if report.interrupted {
                eprintln!("interrupted: checkpoint flushed, resume with --resume True");
            }
            ExitCode::SUCCESS
        }
        Err(GraspError::InvalidPipeline(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn emit_report(report: &RunReport, json: bool) {
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(report).unwrap_or_else(|_| "{}".to_string())
        );
    } else {
        println!(
            "run {}: processed {} (succeeded {}, failed {}, skipped {}), total completed {}, wall {} ms",
            report.run_id,
            report.processed,
            report.succeeded,
            report.failed,
            report.skipped,
            report.total_completed,
            report.wall_ms
        );
        println!("output: {}", report.output_path.display());
    }
}

fn bench(args: BenchArgs) -> ExitCode {
    match engine::bench(args.records, args.latency_ms, args.calls_per_record, args.concurrency) {
        Ok(report) => {
            if args.json.unwrap_or(false) {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report).unwrap_or_else(|_| "{}".to_string())
                );
            } else {
                println!(
                    "bench: {} records x {} calls x {} ms, concurrency {}",
                    report.records, report.calls_per_record, report.latency_ms, report.concurrency
                );
                println!(
                    "sequential {} ms (oracle {} ms), concurrent {} ms (oracle {} ms), speedup {:.2}x",
                    report.sequential_wall_ms,
                    report.oracle_sequential_ms,
                    report.concurrent_wall_ms,
                    report.oracle_concurrent_ms,
                    report.speedup
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boolish_accepts_paper_tokens() {
        assert_eq!(boolish("True").unwrap(), true);
        assert_eq!(boolish("False").unwrap(), false);
        assert_eq!(boolish("true").unwrap(), true);
        assert_eq!(boolish("1").unwrap(), true);
        assert!(boolish("maybe").is_err());
    }

    #[test]
    fn cli_parses_paper_style_flags() {
        let cli = Cli::parse_from(["grasp", "--task", "demo", "--resume", "True", "--oasst", "True"]);
        assert_eq!(cli.run.task.as_deref(), Some("demo"));
        assert_eq!(cli.run.resume, Some(true));
        assert_eq!(cli.run.oasst, Some(true));
    }

    #[test]
    fn cli_parses_bare_switches() {
        let cli = Cli::parse_from(["grasp", "--task", "demo", "--dry-run", "--quality"]);
        assert_eq!(cli.run.dry_run, Some(true));
        assert_eq!(cli.run.quality, Some(true));
        assert_eq!(cli.run.resume, None);
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        match Cli::try_parse_from(["grasp", "--task", "demo", "--no-such-flag"]) {
            Err(e) => assert_eq!(e.exit_code(), 2),
            Ok(_) => panic!("unknown flag accepted"),
        }
    }
}
