//! Command-line front end: single runs, sweeps, convergence traces and
//! the validation suite.
//!
//! Exit codes: 0 success, 1 validation/runtime failure, 2 argument or
//! config parse errors. `RTD_WORKERS` bounds the worker pool used for
//! drop-level parallelism.

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::config::SystemConfig;
use crate::harness::{
    run_sweep, write_aggregates_csv, write_plot_data, write_rows_csv, SweepAxis, SweepSpec,
    Variant,
};
use crate::network::generate_channel_set;
use crate::rtd::{run_nonrobust, run_rtd, RtdOptions, RunStatus};
use crate::validate;

#[derive(Parser)]
#[command(
    name = "rtd",
    about = "Worst-case transmission design for D2D-underlaid cellular uplinks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Scenario file (flat key = value; see README for the schema).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario on one channel drop and print a summary.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        /// Drop index (RNG substream).
        #[arg(long, default_value_t = 0)]
        drop: u64,
        /// Run the zero-radius baseline instead of the robust design.
        #[arg(long)]
        nonrobust: bool,
    },
    /// Sweep one parameter over a value list with Monte Carlo drops.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        /// Swept parameter: P_dBm | N | B | mu | a_dBm | D_max.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long)]
        values: String,
        /// Drops per axis value (defaults to mc_drops from the config).
        #[arg(long)]
        drops: Option<usize>,
        /// Comma-separated variants: rtd | nonrobust | cellular_only.
        #[arg(long, default_value = "rtd")]
        variants: String,
        /// Per-run CSV output path.
        #[arg(long, default_value = "results.csv")]
        out: PathBuf,
        /// Optional (x, mean, stderr) plot data path.
        #[arg(long)]
        plot_data: Option<PathBuf>,
        /// Optional per-(value, variant) aggregate CSV path.
        #[arg(long)]
        aggregates: Option<PathBuf>,
    },
    /// Emit per-iteration objective traces for convergence plots.
    Convergence {
        #[command(flatten)]
        config: ConfigArg,
        /// Comma-separated error levels (defaults to the config's mu).
        #[arg(long)]
        mu: Option<String>,
        #[arg(long, default_value_t = 0)]
        drop: u64,
        /// CSV output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suites; exits 0 iff all pass.
    Validate,
}

/// Entry point, parameterized over argv for testability.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    if let Ok(workers) = std::env::var("RTD_WORKERS") {
        if let Ok(n) = workers.parse::<usize>() {
            // ignore failure: the pool may already exist in-process
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run {
            config,
            drop,
            nonrobust,
        } => cmd_run(&config.config, drop, nonrobust),
        Command::Sweep {
            config,
            axis,
            values,
            drops,
            variants,
            out,
            plot_data,
            aggregates,
        } => cmd_sweep(
            &config.config,
            &axis,
            &values,
            drops,
            &variants,
            &out,
            plot_data.as_deref(),
            aggregates.as_deref(),
        ),
        Command::Convergence {
            config,
            mu,
            drop,
            out,
        } => cmd_convergence(&config.config, mu.as_deref(), drop, out.as_deref()),
        Command::Validate => cmd_validate(),
    }
}

fn load_config(path: &std::path::Path) -> Result<SystemConfig, i32> {
    SystemConfig::from_file(path).map_err(|e| {
        eprintln!("error: {e}");
        2
    })
}

fn cmd_run(config: &std::path::Path, drop: u64, nonrobust: bool) -> i32 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let set = match generate_channel_set(&cfg, drop) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let opts = RtdOptions::default();
    let start = std::time::Instant::now();
    let result = if nonrobust {
        run_nonrobust(&cfg, &set, drop, &opts)
    } else {
        run_rtd(&cfg, &set, drop, &opts)
    };
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    println!("scenario: {cfg}");
    println!(
        "drop {drop} variant {}: {} after {} iterations ({} ms)",
        if nonrobust { "nonrobust" } else { "rtd" },
        match result.status {
            RunStatus::Converged => "converged",
            RunStatus::MaxIter => "hit max iterations",
        },
        result.iters_used,
        start.elapsed().as_millis(),
    );
    println!(
        "objective V = {:.6} (lower bound {:.6})",
        result.objective_trace.last().copied().unwrap_or(f64::NAN),
        result.objective_lower_bound,
    );
    println!(
        "certified worst-case rate: {:.4} bits/s/Hz (cellular {:.4}, d2d {:.4})",
        result.surrogate_rate_bits, result.cellular_rate_bits, result.d2d_rate_bits,
    );
    println!(
        "sampled worst-case rate: {:.4} bits/s/Hz",
        result.empirical_worst_rate_bits
    );
    println!(
        "interference caps at true radii: {}",
        if result.cap_exceeded { "EXCEEDED" } else { "ok" }
    );
    0
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    config: &std::path::Path,
    axis: &str,
    values: &str,
    drops: Option<usize>,
    variants: &str,
    out: &std::path::Path,
    plot_data: Option<&std::path::Path>,
    aggregates_path: Option<&std::path::Path>,
) -> i32 {
    let base = match load_config(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let axis = match SweepAxis::parse(axis) {
        Some(a) => a,
        None => {
            eprintln!("error: unknown axis `{axis}` (expected P_dBm | N | B | mu | a_dBm | D_max)");
            return 2;
        }
    };
    let values: Result<Vec<f64>, _> = values
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect();
    let values = match values {
        Ok(v) if !v.is_empty() => v,
        _ => {
            eprintln!("error: --values must be a comma-separated list of numbers");
            return 2;
        }
    };
    let mut parsed_variants = Vec::new();
    for name in variants.split(',') {
        match Variant::parse(name.trim()) {
            Some(v) => parsed_variants.push(v),
            None => {
                eprintln!("error: unknown variant `{name}`");
                return 2;
            }
        }
    }
    let spec = SweepSpec {
        drops: drops.unwrap_or(base.mc_drops),
        base,
        axis,
        values,
        variants: parsed_variants,
        options: RtdOptions::default(),
    };
    let (rows, aggs) = match run_sweep(&spec) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let failed = rows.iter().filter(|r| r.status.starts_with("error")).count();
    if let Err(e) = File::create(out).map_err(Into::into).and_then(|f| write_rows_csv(&rows, f)) {
        eprintln!("error: {e}");
        return 1;
    }
    println!("wrote {} rows to {} ({} failed)", rows.len(), out.display(), failed);
    if let Some(path) = plot_data {
        if let Err(e) = File::create(path)
            .map_err(Into::into)
            .and_then(|f| write_plot_data(&aggs, f))
        {
            eprintln!("error: {e}");
            return 1;
        }
        println!("wrote plot data to {}", path.display());
    }
    if let Some(path) = aggregates_path {
        if let Err(e) = File::create(path)
            .map_err(Into::into)
            .and_then(|f| write_aggregates_csv(&aggs, f))
        {
            eprintln!("error: {e}");
            return 1;
        }
        println!("wrote aggregates to {}", path.display());
    }
    for agg in &aggs {
        println!(
            "{}={} {}: mean certified {:.4} bits (stderr {:.4}), mean sampled {:.4} bits, {} ok / {} failed",
            agg.axis,
            agg.axis_value,
            agg.variant,
            agg.mean_surrogate_bits,
            agg.stderr_surrogate_bits,
            agg.mean_empirical_bits,
            agg.drops_ok,
            agg.drops_failed,
        );
    }
    0
}

fn cmd_convergence(
    config: &std::path::Path,
    mu_list: Option<&str>,
    drop: u64,
    out: Option<&std::path::Path>,
) -> i32 {
    let base = match load_config(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let mus: Vec<f64> = match mu_list {
        None => vec![base.csi_error_level],
        Some(list) => match list.split(',').map(|v| v.trim().parse::<f64>()).collect() {
            Ok(v) => v,
            Err(_) => {
                eprintln!("error: --mu must be a comma-separated list of numbers");
                return 2;
            }
        },
    };
    let mut lines = vec!["mu,iter,objective".to_string()];
    for &mu in &mus {
        let mut cfg = base.clone();
        cfg.csi_error_level = mu;
        if let Err(e) = cfg.validate() {
            eprintln!("error: {e}");
            return 2;
        }
        let set = match generate_channel_set(&cfg, drop) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("error: {e}");
                return 1;
            }
        };
        match run_rtd(&cfg, &set, drop, &RtdOptions::default()) {
            Ok(result) => {
                for (i, v) in result.objective_trace.iter().enumerate() {
                    lines.push(format!("{mu},{},{v}", i + 1));
                }
            }
            Err(e) => {
                eprintln!("error: mu={mu}: {e}");
                return 1;
            }
        }
    }
    let text = lines.join("\n") + "\n";
    match out {
        None => print!("{text}"),
        Some(path) => {
            if let Err(e) = File::create(path).and_then(|mut f| f.write_all(text.as_bytes())) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return 1;
            }
            println!("wrote {} trace points to {}", lines.len() - 1, path.display());
        }
    }
    0
}

fn cmd_validate() -> i32 {
    let results = validate::run_all();
    let mut all_ok = true;
    for r in &results {
        println!(
            "{}: {} ({})",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail
        );
        all_ok &= r.passed;
    }
    if all_ok {
        println!("all {} suites passed", results.len());
        0
    } else {
        1
    }
}
