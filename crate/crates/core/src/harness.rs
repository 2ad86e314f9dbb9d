//! Scenario sweeps, Monte Carlo aggregation and CSV / plot-data output.
//!
//! A sweep runs every `(axis value, drop, variant)` combination on the
//! channel realization generated deterministically from the master seed
//! and the drop index, so variants and axis values stay noise-paired.
//! Rows from failed runs carry an error status and are excluded from the
//! aggregates (and counted). All output is deterministic except the
//! `runtime_ms` column.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{dbm_to_watts, SystemConfig};
use crate::network::generate_channel_set;
use crate::rtd::{run_nonrobust, run_rtd, RtdOptions, RtdResult, RunStatus};

/// Design variants a sweep can compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// The robust design at the scenario's error level.
    Rtd,
    /// Zero-radius design evaluated under the true uncertainty.
    NonRobust,
    /// Conventional cellular network: the same scenario with `N = 0`.
    CellularOnly,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Rtd => "rtd",
            Variant::NonRobust => "nonrobust",
            Variant::CellularOnly => "cellular_only",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s {
            "rtd" => Some(Variant::Rtd),
            "nonrobust" => Some(Variant::NonRobust),
            "cellular_only" => Some(Variant::CellularOnly),
            _ => None,
        }
    }
}

/// Sweepable scenario parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Max transmit power of every user, dBm (`P_dBm`).
    PowerDbm,
    /// D2D pairs per cell (`N`).
    D2dPairs,
    /// BS antennas (`B`).
    Antennas,
    /// CSI error level (`mu`).
    ErrorLevel,
    /// Interference cap, dBm (`a_dBm`).
    CapDbm,
    /// Max D2D pair separation, meters (`D_max`).
    PairDistance,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<SweepAxis> {
        match s {
            "P_dBm" => Some(SweepAxis::PowerDbm),
            "N" => Some(SweepAxis::D2dPairs),
            "B" => Some(SweepAxis::Antennas),
            "mu" => Some(SweepAxis::ErrorLevel),
            "a_dBm" => Some(SweepAxis::CapDbm),
            "D_max" => Some(SweepAxis::PairDistance),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::PowerDbm => "P_dBm",
            SweepAxis::D2dPairs => "N",
            SweepAxis::Antennas => "B",
            SweepAxis::ErrorLevel => "mu",
            SweepAxis::CapDbm => "a_dBm",
            SweepAxis::PairDistance => "D_max",
        }
    }

    /// Apply one axis value to a copy of the base config.
    pub fn apply(self, base: &SystemConfig, value: f64) -> Result<SystemConfig, SweepError> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::PowerDbm => {
                cfg.cu_max_power_w = dbm_to_watts(value);
                cfg.d2d_max_power_w = dbm_to_watts(value);
            }
            SweepAxis::D2dPairs => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(SweepError::BadAxisValue(self.name(), value));
                }
                cfg.d2d_per_cell = value as usize;
            }
            SweepAxis::Antennas => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(SweepError::BadAxisValue(self.name(), value));
                }
                cfg.bs_antennas = value as usize;
            }
            SweepAxis::ErrorLevel => cfg.csi_error_level = value,
            SweepAxis::CapDbm => cfg.interference_cap_w = dbm_to_watts(value),
            SweepAxis::PairDistance => cfg.d2d_max_distance_m = value,
        }
        cfg.validate().map_err(|e| SweepError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid value {1} for axis {0}")]
    BadAxisValue(&'static str, f64),
    #[error("invalid config under sweep: {0}")]
    Config(String),
    #[error("sweep needs at least one drop, one value and one variant")]
    Empty,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// A full sweep description.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: SystemConfig,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub drops: usize,
    pub variants: Vec<Variant>,
    pub options: RtdOptions,
}

/// One (axis value, drop, variant) outcome. Field order is the CSV
/// column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub seed: u64,
    pub variant: String,
    pub cells: usize,
    pub cus_per_cell: usize,
    pub d2d_per_cell: usize,
    pub bs_antennas: usize,
    pub cu_max_power_w: f64,
    pub d2d_max_power_w: f64,
    pub interference_cap_w: f64,
    pub noise_power_w: f64,
    pub csi_error_level: f64,
    pub d2d_max_distance_m: f64,
    pub cell_radius_m: f64,
    pub min_bs_distance_m: f64,
    pub pathloss_exponent: f64,
    pub shadowing_sigma_db: f64,
    pub pl_ref_db: f64,
    pub inter_site_distance_m: f64,
    pub drop: u64,
    pub axis: String,
    pub axis_value: f64,
    pub iters: usize,
    pub status: String,
    pub v_final: f64,
    pub surrogate_rate_bits: f64,
    pub empirical_rate_bits: f64,
    pub cellular_bits: f64,
    pub d2d_bits: f64,
    pub cap_exceeded: bool,
    pub runtime_ms: u64,
}

/// Per (axis value, variant) aggregate over the non-failed drops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub axis: String,
    pub axis_value: f64,
    pub variant: String,
    pub drops_ok: usize,
    pub drops_failed: usize,
    pub mean_surrogate_bits: f64,
    pub stderr_surrogate_bits: f64,
    pub mean_empirical_bits: f64,
    pub stderr_empirical_bits: f64,
    pub mean_cellular_bits: f64,
    pub mean_d2d_bits: f64,
    pub mean_iters: f64,
}

fn row_from_result(
    spec: &SweepSpec,
    cfg: &SystemConfig,
    variant: Variant,
    value: f64,
    drop: u64,
    outcome: Result<RtdResult, String>,
    runtime_ms: u64,
) -> ResultRow {
    let run_id = format!("{}={};drop={};{}", spec.axis.name(), value, drop, variant.name());
    let (iters, status, v_final, surrogate, empirical, cellular, d2d, cap) = match &outcome {
        Ok(r) => (
            r.iters_used,
            match r.status {
                RunStatus::Converged => "converged".to_string(),
                RunStatus::MaxIter => "max_iter".to_string(),
            },
            *r.objective_trace.last().unwrap_or(&f64::NAN),
            r.surrogate_rate_bits,
            r.empirical_worst_rate_bits,
            r.cellular_rate_bits,
            r.d2d_rate_bits,
            r.cap_exceeded,
        ),
        Err(e) => (
            0,
            format!("error:{e}"),
            f64::NAN,
            f64::NAN,
            f64::NAN,
            f64::NAN,
            f64::NAN,
            false,
        ),
    };
    ResultRow {
        run_id,
        seed: cfg.seed,
        variant: variant.name().to_string(),
        cells: cfg.cells,
        cus_per_cell: cfg.cus_per_cell,
        d2d_per_cell: cfg.d2d_per_cell,
        bs_antennas: cfg.bs_antennas,
        cu_max_power_w: cfg.cu_max_power_w,
        d2d_max_power_w: cfg.d2d_max_power_w,
        interference_cap_w: cfg.interference_cap_w,
        noise_power_w: cfg.noise_power_w,
        csi_error_level: cfg.csi_error_level,
        d2d_max_distance_m: cfg.d2d_max_distance_m,
        cell_radius_m: cfg.cell_radius_m,
        min_bs_distance_m: cfg.min_bs_distance_m,
        pathloss_exponent: cfg.pathloss_exponent,
        shadowing_sigma_db: cfg.shadowing_sigma_db,
        pl_ref_db: cfg.pl_ref_db,
        inter_site_distance_m: cfg.inter_site_distance_m,
        drop,
        axis: spec.axis.name().to_string(),
        axis_value: value,
        iters,
        status,
        v_final,
        surrogate_rate_bits: surrogate,
        empirical_rate_bits: empirical,
        cellular_bits: cellular,
        d2d_bits: d2d,
        cap_exceeded: cap,
        runtime_ms,
    }
}

/// The config a variant actually runs: `cellular_only` forces `N = 0`.
pub fn variant_config(cfg: &SystemConfig, variant: Variant) -> SystemConfig {
    let mut out = cfg.clone();
    if variant == Variant::CellularOnly {
        out.d2d_per_cell = 0;
    }
    out
}

fn run_one(cfg: &SystemConfig, variant: Variant, drop: u64, opts: &RtdOptions) -> Result<RtdResult, String> {
    let cfg = variant_config(cfg, variant);
    let set = generate_channel_set(&cfg, drop).map_err(|e| e.to_string())?;
    match variant {
        Variant::NonRobust => run_nonrobust(&cfg, &set, drop, opts).map_err(|e| e.to_string()),
        _ => run_rtd(&cfg, &set, drop, opts).map_err(|e| e.to_string()),
    }
}

/// Run the sweep; rows come back sorted by (axis value index, drop,
/// variant order) and aggregates per (axis value, variant).
pub fn run_sweep(spec: &SweepSpec) -> Result<(Vec<ResultRow>, Vec<AggregateRow>), SweepError> {
    if spec.values.is_empty() || spec.drops == 0 || spec.variants.is_empty() {
        return Err(SweepError::Empty);
    }
    // validate every axis value up front
    let configs: Vec<SystemConfig> = spec
        .values
        .iter()
        .map(|&v| spec.axis.apply(&spec.base, v))
        .collect::<Result<_, _>>()?;

    let mut tasks = Vec::new();
    for (vi, cfg) in configs.iter().enumerate() {
        for drop in 0..spec.drops as u64 {
            for &variant in &spec.variants {
                tasks.push((vi, cfg, drop, variant));
            }
        }
    }
    let rows: Vec<ResultRow> = tasks
        .par_iter()
        .map(|&(vi, cfg, drop, variant)| {
            let start = Instant::now();
            let outcome = run_one(cfg, variant, drop, &spec.options);
            let runtime_ms = start.elapsed().as_millis() as u64;
            row_from_result(spec, cfg, variant, spec.values[vi], drop, outcome, runtime_ms)
        })
        .collect();

    let mut aggregates = Vec::new();
    for (vi, &value) in spec.values.iter().enumerate() {
        for &variant in &spec.variants {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.axis_value == value && r.variant == variant.name())
                .collect();
            debug_assert_eq!(group.len(), spec.drops);
            let ok: Vec<&&ResultRow> = group.iter().filter(|r| !r.status.starts_with("error")).collect();
            let failed = group.len() - ok.len();
            let mean = |f: &dyn Fn(&ResultRow) -> f64| -> f64 {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            let stderr = |f: &dyn Fn(&ResultRow) -> f64| -> f64 {
                if ok.len() < 2 {
                    return 0.0;
                }
                let m = mean(f);
                let var = ok.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / (ok.len() - 1) as f64;
                (var / ok.len() as f64).sqrt()
            };
            aggregates.push(AggregateRow {
                axis: spec.axis.name().to_string(),
                axis_value: value,
                variant: variant.name().to_string(),
                drops_ok: ok.len(),
                drops_failed: failed,
                mean_surrogate_bits: mean(&|r| r.surrogate_rate_bits),
                stderr_surrogate_bits: stderr(&|r| r.surrogate_rate_bits),
                mean_empirical_bits: mean(&|r| r.empirical_rate_bits),
                stderr_empirical_bits: stderr(&|r| r.empirical_rate_bits),
                mean_cellular_bits: mean(&|r| r.cellular_bits),
                mean_d2d_bits: mean(&|r| r.d2d_bits),
                mean_iters: mean(&|r| r.iters as f64),
            });
        }
        let _ = vi;
    }
    Ok((rows, aggregates))
}

/// Write result rows as RFC-4180 CSV with the documented header.
pub fn write_rows_csv(rows: &[ResultRow], out: impl Write) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        // header-only file
        w.write_record([
            "run_id",
            "seed",
            "variant",
            "cells",
            "cus_per_cell",
            "d2d_per_cell",
            "bs_antennas",
            "cu_max_power_w",
            "d2d_max_power_w",
            "interference_cap_w",
            "noise_power_w",
            "csi_error_level",
            "d2d_max_distance_m",
            "cell_radius_m",
            "min_bs_distance_m",
            "pathloss_exponent",
            "shadowing_sigma_db",
            "pl_ref_db",
            "inter_site_distance_m",
            "drop",
            "axis",
            "axis_value",
            "iters",
            "status",
            "v_final",
            "surrogate_rate_bits",
            "empirical_rate_bits",
            "cellular_bits",
            "d2d_bits",
            "cap_exceeded",
            "runtime_ms",
        ])?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read rows back (used by tests and downstream tooling).
pub fn read_rows_csv(input: impl std::io::Read) -> Result<Vec<ResultRow>, SweepError> {
    let mut reader = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record?);
    }
    Ok(rows)
}

/// Plot data: one `(x, mean, stderr)` triple per variant per axis value,
/// for the primary (certified) rate metric.
pub fn write_plot_data(aggregates: &[AggregateRow], out: impl Write) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "x", "mean", "stderr"])?;
    for agg in aggregates {
        w.write_record([
            agg.variant.clone(),
            format!("{}", agg.axis_value),
            format!("{}", agg.mean_surrogate_bits),
            format!("{}", agg.stderr_surrogate_bits),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Write aggregates as CSV.
pub fn write_aggregates_csv(aggregates: &[AggregateRow], out: impl Write) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_writer(out);
    for agg in aggregates {
        w.serialize(agg)?;
    }
    w.flush()?;
    Ok(())
}
