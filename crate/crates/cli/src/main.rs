use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use ssa_core::checks::{gradient_suite, sparsity_check, GradientSuiteConfig, SparsityCheckConfig};
use ssa_core::training::denoise::{train_denoising, DenoiseConfig};
use ssa_core::training::graph::{ablation, graph_experiment, norm_study_experiment, AblationConfig, GraphConfig};
use ssa_core::training::imbalanced::{train_imbalanced, ImbalancedConfig};
use ssa_core::training::report::write_matrix_csv;
use ssa_core::training::ExperimentReport;

const EXPERIMENTS: [&str; 7] = [
    "graph",
    "denoise",
    "imbalanced",
    "sparsity-check",
    "norm-study",
    "gradcheck",
    "ablate",
];

#[derive(Parser)]
#[command(name = "ssa-lab", version, about = "Selective self-attention experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run(RunArgs),
    /// List experiment names.
    List,
}

#[derive(clap::Args)]
struct RunArgs {
    /// One of: graph, denoise, imbalanced, sparsity-check, norm-study, gradcheck, ablate.
    experiment: String,
    /// JSON file with (possibly dotted) keys overriding the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override one setting, e.g. `--set adam.learning_rate=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Bad input from the user; exit code 1.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::List => {
            for name in EXPERIMENTS {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        Command::Run(args) => match run(&args) {
            Ok(report) if report.failed_checks().is_empty() => ExitCode::SUCCESS,
            Ok(report) => {
                eprintln!("theory check failed: {}", report.failed_checks().join(", "));
                ExitCode::from(2)
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}

fn run(args: &RunArgs) -> anyhow::Result<ExperimentReport> {
    let name = args.experiment.as_str();
    if !EXPERIMENTS.contains(&name) {
        return Err(Usage(format!(
            "unknown experiment `{name}`; valid experiments: {}",
            EXPERIMENTS.join(", ")
        ))
        .into());
    }
    let overrides = collect_overrides(args)?;
    let start = Instant::now();
    let seed = args.seed;
    let mut extra: Vec<(String, ssa_core::Matrix)> = Vec::new();
    let mut report = match name {
        "graph" => {
            let cfg: GraphConfig = resolve(&overrides)?;
            let (report, vanilla, ssa) = graph_experiment(&cfg, seed)?;
            extra.push(("pstar".into(), report.matrices["p_star"].clone()));
            extra.push(("phat".into(), ssa.p_hat));
            extra.push(("phat_vanilla".into(), vanilla.p_hat));
            report
        }
        "denoise" => train_denoising(&resolve::<DenoiseConfig>(&overrides)?, seed)?,
        "imbalanced" => train_imbalanced(&resolve::<ImbalancedConfig>(&overrides)?, seed)?,
        "sparsity-check" => sparsity_check(&resolve::<SparsityCheckConfig>(&overrides)?, seed)?,
        "norm-study" => norm_study_experiment(&resolve::<GraphConfig>(&overrides)?, seed)?,
        "gradcheck" => gradient_suite(&resolve::<GradientSuiteConfig>(&overrides)?, seed)?,
        "ablate" => {
            let cfg: AblationConfig = resolve(&overrides)?;
            ablation(&cfg, seed, thread_cap()?)?
        }
        _ => unreachable!("checked above"),
    };
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    report.ensure_finite()?;
    write_artifacts(&report, &extra, &args.out)?;
    print_summary(&report, &args.out);
    Ok(report)
}

/// `(dotted key, value)` pairs from the config file, then from `--set`.
fn collect_overrides(args: &RunArgs) -> anyhow::Result<Vec<(String, Value)>> {
    let mut out = Vec::new();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let v: Value =
            serde_json::from_str(&text).map_err(|e| Usage(format!("config file {}: {e}", path.display())))?;
        let Value::Object(map) = v else {
            return Err(Usage(format!("config file {} must hold a JSON object", path.display())).into());
        };
        out.extend(map);
    }
    for s in &args.set {
        let (k, raw) = s
            .split_once('=')
            .ok_or_else(|| Usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        out.push((k.trim().to_string(), value));
    }
    Ok(out)
}

/// Applies overrides to the defaults of `C`, rejecting unknown keys and
/// naming the key whose value does not fit.
fn resolve<C: Default + Serialize + DeserializeOwned>(overrides: &[(String, Value)]) -> anyhow::Result<C> {
    let mut v = serde_json::to_value(C::default())?;
    for (key, value) in overrides {
        apply(&mut v, key, key, value.clone())?;
        serde_json::from_value::<C>(v.clone()).map_err(|e| Usage(format!("bad value for `{key}`: {e}")))?;
    }
    Ok(serde_json::from_value(v)?)
}

fn apply(target: &mut Value, full_key: &str, key: &str, value: Value) -> Result<(), Usage> {
    let unknown = || Usage(format!("unknown config key `{full_key}`"));
    let (head, rest) = match key.split_once('.') {
        Some((h, r)) => (h, Some(r)),
        None => (key, None),
    };
    let Value::Object(map) = target else {
        return Err(unknown());
    };
    let slot = map.get_mut(head).ok_or_else(unknown)?;
    match (rest, value) {
        (Some(r), v) => apply(slot, full_key, r, v),
        (None, Value::Object(fields)) if slot.is_object() => {
            for (k, v) in fields {
                let nested = format!("{full_key}.{k}");
                apply(slot, &nested, &k, v)?;
            }
            Ok(())
        }
        (None, v) => {
            *slot = v;
            Ok(())
        }
    }
}

fn thread_cap() -> anyhow::Result<usize> {
    match std::env::var("SSA_LAB_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Usage(format!("SSA_LAB_THREADS must be a positive integer, got `{s}`")).into()),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn write_artifacts(report: &ExperimentReport, matrices: &[(String, ssa_core::Matrix)], out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    report.write_json(&out.join("report.json"))?;
    report.write_timing(&out.join("timing.json"))?;
    report.write_metrics_csv(BufWriter::new(File::create(out.join("metrics.csv"))?))?;
    for (name, table) in &report.tables {
        table.write_csv(BufWriter::new(File::create(out.join(format!("{name}.csv")))?))?;
    }
    for (name, m) in matrices {
        write_matrix_csv(m, BufWriter::new(File::create(out.join(format!("{name}.csv")))?))?;
    }
    Ok(())
}

fn print_summary(report: &ExperimentReport, out: &Path) {
    println!(
        "{} (seed {}) finished in {:.1}s; artifacts in {}",
        report.experiment,
        report.seed,
        report.wall_clock_secs,
        out.display()
    );
    for (name, table) in &report.tables {
        println!("\n{name}:");
        println!("  {}", table.columns.join("  "));
        for row in &table.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Value::Number(n) => n.as_f64().map_or(n.to_string(), |f| format!("{f:.6e}")),
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect();
            println!("  {}", cells.join("  "));
        }
    }
    if report.tables.is_empty() {
        println!();
        for (k, v) in &report.metrics {
            println!("  {k:<36} {v:.6}");
        }
    }
    if !report.checks.is_empty() {
        println!();
        for (k, ok) in &report.checks {
            println!("  [{}] {k}", if *ok { "PASS" } else { "FAIL" });
        }
    }
}
