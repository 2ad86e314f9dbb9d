//! The alternating worst-case design loop and the non-robust baseline.
//!
//! One iteration runs, in order: per-cell receive design SDPs (combiner
//! `J` and stream scales `gamma`, hence filters `W = J gamma^-1` and the
//! cellular auxiliaries), closed-form D2D equalizers and auxiliaries at
//! the current powers, per-CU power SDPs, and the joint D2D power SDP.
//! After each full sweep the surrogate objective is re-evaluated at the
//! new powers with the receive side frozen (per-block certification
//! solves); the resulting trace is non-increasing and bounded below by
//! the Cauchy-Schwarz bound, which is how convergence is detected.
//!
//! Channels are rescaled internally so that link amplitudes are O(1) in
//! the solver; every reported metric is invariant under that scaling and
//! the applied factor is recorded on the returned state.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::builders::{
    self, cap_scaled_power, certify_worst_norm_sq, BuildError,
};
use crate::config::SystemConfig;
use crate::conic::{solve, SolveOptions, SolveReport, SolveStatus};
use crate::metrics;
use crate::network::{substream, ChannelSet, Channels, Purpose, Radii};
use crate::worstcase::{interference_weights, worst_case_d2d_coeffs, WorstCaseD2dCoeffs};

/// Options of one design run.
#[derive(Debug, Clone)]
pub struct RtdOptions {
    pub max_iters: usize,
    /// Relative change of the objective that counts as converged.
    pub rel_tol: f64,
    pub solver: SolveOptions,
    /// Tighter settings for the per-block certification solves.
    pub eval_solver: SolveOptions,
    pub trace_enabled: bool,
    /// Ball samples for the sampled worst-case rate.
    pub eval_samples: usize,
}

impl Default for RtdOptions {
    fn default() -> Self {
        RtdOptions {
            max_iters: 50,
            rel_tol: 1e-3,
            solver: SolveOptions::default(),
            eval_solver: SolveOptions {
                tol_gap: 1e-9,
                ..SolveOptions::default()
            },
            trace_enabled: true,
            eval_samples: 200,
        }
    }
}

/// The alternating-optimization variables. Channel-facing quantities
/// (combiners, equalizers) live in the internally rescaled units recorded
/// by `channel_scale`; transmit amplitudes are in sqrt-watts.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignState {
    /// sqrt of CU transmit powers, flat CU order.
    pub cu_q: Vec<f64>,
    /// sqrt of D2D transmit powers.
    pub d2d_q: Vec<f64>,
    /// Scaled combiner `J = W diag(gamma)` per cell (B x M).
    pub combiners: Vec<DMatrix<Complex64>>,
    /// Stream scales `gamma` per cell; strictly positive.
    pub stream_scale: Vec<Vec<f64>>,
    /// Cellular auxiliaries `u = 1 + 2 ln gamma`, flat CU order.
    pub cu_aux: Vec<f64>,
    /// D2D auxiliaries `u = 1 - ln MSE`.
    pub d2d_aux: Vec<f64>,
    /// Single-tap D2D equalizers.
    pub equalizers: Vec<Complex64>,
    /// Channel normalization the state was computed under.
    pub channel_scale: f64,
}

impl DesignState {
    /// Receive filters `W = J diag(gamma)^-1`, per cell and stream.
    pub fn receive_filters(&self) -> Vec<Vec<DVector<Complex64>>> {
        self.combiners
            .iter()
            .zip(&self.stream_scale)
            .map(|(j, gamma)| {
                (0..j.ncols())
                    .map(|m| {
                        DVector::from_fn(j.nrows(), |p, _| j[(p, m)] / Complex64::new(gamma[m], 0.0))
                    })
                    .collect()
            })
            .collect()
    }

    pub fn cu_powers(&self) -> Vec<f64> {
        self.cu_q.iter().map(|q| q * q).collect()
    }

    pub fn d2d_powers(&self) -> Vec<f64> {
        self.d2d_q.iter().map(|q| q * q).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    MaxIter,
}

/// Outcome of one design run.
#[derive(Debug, Clone, PartialEq)]
pub struct RtdResult {
    pub state: DesignState,
    /// Surrogate objective after each full sweep; non-increasing.
    pub objective_trace: Vec<f64>,
    pub iters_used: usize,
    pub status: RunStatus,
    /// Certified worst-case sum rate `-V/ln 2`.
    pub surrogate_rate_bits: f64,
    /// Sampled worst-case rate of the fixed design.
    pub empirical_worst_rate_bits: f64,
    /// Cellular / D2D split of the certified rate.
    pub cellular_rate_bits: f64,
    pub d2d_rate_bits: f64,
    /// Cauchy-Schwarz lower bound on the objective.
    pub objective_lower_bound: f64,
    /// Max violation of power boxes and interference caps seen after any
    /// iteration (should be ~0).
    pub max_constraint_violation: f64,
    /// Set when the design's powers break an interference cap evaluated
    /// at the *true* error radii (non-robust designs can).
    pub cap_exceeded: bool,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("subproblem construction failed: {0}")]
    Build(#[from] BuildError),
    #[error("{stage}: solver returned {status:?} (after retry)")]
    Solver { stage: String, status: SolveStatus },
}

/// Initial powers: full power for every CU; D2D powers scaled down
/// uniformly so every interference cap already holds.
pub fn initial_powers(cfg: &SystemConfig, rho: &[Vec<f64>], caps: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let cu_q = vec![cfg.cu_max_power_w.sqrt(); cfg.total_cus()];
    let p_d2d = cap_scaled_power(rho, caps, cfg.d2d_max_power_w);
    let d2d_q = vec![p_d2d.sqrt(); cfg.total_d2d()];
    (cu_q, d2d_q)
}

/// Everything the iteration needs in rescaled units.
struct Scaled {
    est: Channels,
    radii: Radii,
    set: ChannelSet,
    n0: f64,
    caps: Vec<f64>,
    rho: Vec<Vec<f64>>,
    coeffs: WorstCaseD2dCoeffs,
    scale: f64,
}

fn rescale(cfg: &SystemConfig, set: &ChannelSet) -> Scaled {
    let dims = *set.dims();
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..dims.total_cus() {
        for l in 0..dims.cells {
            sum += set.estimated.h_cu_bs[t][l].norm_squared();
            count += 1;
        }
    }
    for s in 0..dims.total_d2d() {
        for l in 0..dims.cells {
            sum += set.estimated.h_d2d_bs[s][l].norm_squared();
            count += 1;
        }
    }
    let mean = if count > 0 {
        sum / (count * dims.antennas) as f64
    } else {
        0.0
    };
    let scale = if mean > 0.0 { mean.sqrt() } else { 1.0 };

    let shrink = |ch: &Channels| -> Channels {
        let inv = Complex64::new(1.0 / scale, 0.0);
        let mut out = ch.clone();
        for per in &mut out.h_cu_bs {
            for v in per {
                *v *= inv;
            }
        }
        for per in &mut out.h_d2d_bs {
            for v in per {
                *v *= inv;
            }
        }
        for row in &mut out.g_cu_rx {
            for z in row {
                *z *= inv;
            }
        }
        for row in &mut out.g_d2d_rx {
            for z in row {
                *z *= inv;
            }
        }
        out
    };
    let mut radii = set.radii.clone();
    for rows in [&mut radii.h_cu_bs, &mut radii.h_d2d_bs] {
        for row in rows.iter_mut() {
            for e in row {
                *e /= scale;
            }
        }
    }
    for rows in [&mut radii.g_cu_rx, &mut radii.g_d2d_rx] {
        for row in rows.iter_mut() {
            for e in row {
                *e /= scale;
            }
        }
    }
    let est = shrink(&set.estimated);
    let actual = shrink(&set.actual);
    let rho = interference_weights(&est, &radii);
    let coeffs = worst_case_d2d_coeffs(&est, &radii);
    Scaled {
        set: ChannelSet {
            estimated: est.clone(),
            actual,
            radii: radii.clone(),
        },
        est,
        radii,
        n0: cfg.noise_power_w / (scale * scale),
        caps: vec![cfg.interference_cap_w / (scale * scale); cfg.cells],
        rho,
        coeffs,
        scale,
    }
}

fn solve_with_retry(
    problem: &crate::conic::ConicProblem,
    opts: &SolveOptions,
    stage: &str,
) -> Result<SolveReport, RunError> {
    let report = solve(problem, opts);
    if report.status == SolveStatus::Optimal {
        return Ok(report);
    }
    let looser = SolveOptions {
        tol_gap: opts.tol_gap * 10.0,
        ..opts.clone()
    };
    let report = solve(problem, &looser);
    if report.status == SolveStatus::Optimal {
        Ok(report)
    } else {
        Err(RunError::Solver {
            stage: stage.to_string(),
            status: report.status,
        })
    }
}

/// Certified surrogate objective of a frozen design at the given
/// (scaled) channel data: per-cell worst-case scaled-MSE sums through
/// per-block certification solves, plus the D2D auxiliary terms.
struct ObjectiveBreakdown {
    total: f64,
    cellular: f64,
    d2d: f64,
}

/// Certified-term decomposition of the cellular objective part, kept by
/// the descent probes so power moves can be re-priced cheaply: CU terms
/// per (transmitter, cell) -- cross-cell ones scale as `q^2`, the home
/// one is affine in `q` -- and D2D terms per transmitter (pure `q^2`).
struct EvalCache {
    /// `n0 ||J||^2 - sum(2 ln gamma + 1)` over all cells.
    base: f64,
    cu_certify: Vec<Vec<f64>>,
    d2d_certify: Vec<f64>,
}

impl EvalCache {
    fn cellular(&self) -> f64 {
        self.base
            + self.cu_certify.iter().flatten().sum::<f64>()
            + self.d2d_certify.iter().sum::<f64>()
    }
}

/// One CU certified term at amplitude `q` toward `cell`.
fn certify_cu_term(
    state: &DesignState,
    est: &Channels,
    radii: &Radii,
    n0_unused: f64,
    t: usize,
    cell: usize,
    q: f64,
    eval_opts: &SolveOptions,
) -> f64 {
    let _ = n0_unused;
    let dims = est.dims;
    let j = &state.combiners[cell];
    let mut v0 = j.ad_mul(&est.h_cu_bs[t][cell]) * Complex64::new(q, 0.0);
    if dims.cu_cell(t) == cell {
        let m = t - cell * dims.cus_per_cell;
        v0[m] -= Complex64::new(state.stream_scale[cell][m], 0.0);
    }
    let a = j.adjoint() * Complex64::new(q, 0.0);
    certify_worst_norm_sq(&v0, &a, radii.h_cu_bs[t][cell], eval_opts)
}

fn evaluate_design(
    state: &DesignState,
    est: &Channels,
    radii: &Radii,
    coeffs: &WorstCaseD2dCoeffs,
    n0: f64,
    eval_opts: &SolveOptions,
) -> (ObjectiveBreakdown, EvalCache) {
    let dims = est.dims;
    let per_cell: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..dims.cells)
        .into_par_iter()
        .map(|cell| {
            let j = &state.combiners[cell];
            let gamma = &state.stream_scale[cell];
            let mut acc = n0 * j.norm_squared();
            for g in gamma {
                acc -= 2.0 * g.ln() + 1.0;
            }
            let cu_terms: Vec<f64> = (0..dims.total_cus())
                .map(|t| {
                    certify_cu_term(state, est, radii, n0, t, cell, state.cu_q[t], eval_opts)
                })
                .collect();
            let d2d_terms: Vec<f64> = (0..dims.total_d2d())
                .map(|s| {
                    let q = state.d2d_q[s];
                    let v0 = j.ad_mul(&est.h_d2d_bs[s][cell]) * Complex64::new(q, 0.0);
                    let a = j.adjoint() * Complex64::new(q, 0.0);
                    certify_worst_norm_sq(&v0, &a, radii.h_d2d_bs[s][cell], eval_opts)
                })
                .collect();
            (acc, cu_terms, d2d_terms)
        })
        .collect();
    let mut base = 0.0;
    let mut cu_certify = vec![vec![0.0; dims.cells]; dims.total_cus()];
    let mut d2d_certify = vec![0.0; dims.total_d2d()];
    for (cell, (acc, cu_terms, d2d_terms)) in per_cell.into_iter().enumerate() {
        base += acc;
        for (t, v) in cu_terms.into_iter().enumerate() {
            cu_certify[t][cell] = v;
        }
        for (s, v) in d2d_terms.into_iter().enumerate() {
            d2d_certify[s] += v;
        }
    }
    let cache = EvalCache {
        base,
        cu_certify,
        d2d_certify,
    };
    let cellular = cache.cellular();

    let p_cu = state.cu_powers();
    let p_d2d = state.d2d_powers();
    let mut d2d = 0.0;
    for s in 0..dims.total_d2d() {
        let mse = metrics::d2d_mse(state.equalizers[s], coeffs, &p_cu, &p_d2d, n0, s);
        let u = state.d2d_aux[s];
        d2d += (u - 1.0).exp() * mse - u;
    }
    (
        ObjectiveBreakdown {
            total: cellular + d2d,
            cellular,
            d2d,
        },
        cache,
    )
}

/// Re-derive the optimal D2D auxiliaries at the state's current powers:
/// `f` is the MMSE equalizer and `u = 1 - ln MSE`, making each auxiliary
/// term equal `ln MSE`. Never increases the objective.
fn retune_d2d_auxiliaries(state: &mut DesignState, coeffs: &WorstCaseD2dCoeffs, n0: f64) {
    let p_cu = state.cu_powers();
    let p_d2d = state.d2d_powers();
    for s in 0..coeffs.dims.total_d2d() {
        let f = metrics::d2d_mmse_equalizer(coeffs, &p_cu, &p_d2d, n0, s);
        let mse = metrics::d2d_mse(f, coeffs, &p_cu, &p_d2d, n0, s);
        state.equalizers[s] = f;
        state.d2d_aux[s] = metrics::u_star(mse);
    }
}

/// Sum of the optimal D2D auxiliary terms `ln MMSE` at powers `p`.
fn d2d_terms_at_optimum(
    coeffs: &WorstCaseD2dCoeffs,
    p_cu: &[f64],
    p_d2d: &[f64],
    n0: f64,
) -> f64 {
    (0..coeffs.dims.total_d2d())
        .map(|s| {
            let f = metrics::d2d_mmse_equalizer(coeffs, p_cu, p_d2d, n0, s);
            metrics::d2d_mse(f, coeffs, p_cu, p_d2d, n0, s).ln()
        })
        .sum()
}

/// Descent-guarded hard shutdowns: the plain alternation drives a dying
/// D2D link to zero only geometrically (its victims' auxiliaries lag one
/// sweep behind), which drags convergence. Zeroing a transmitter removes
/// its certified interference terms exactly and re-tunes the closed-form
/// auxiliaries; the move is kept only when the objective strictly drops,
/// so the descent argument is untouched. Returns the objective at the
/// (possibly updated) state.
fn shutdown_probe(state: &mut DesignState, sc: &Scaled, cache: &mut EvalCache, current: f64) -> f64 {
    let dims = sc.est.dims;
    let mut best = current;
    loop {
        let p_cu = state.cu_powers();
        let p_d2d = state.d2d_powers();
        let mut improved = None;
        for s in 0..dims.total_d2d() {
            if state.d2d_q[s] == 0.0 {
                continue;
            }
            let mut p_trial = p_d2d.clone();
            p_trial[s] = 0.0;
            let v_trial = cache.cellular() - cache.d2d_certify[s]
                + d2d_terms_at_optimum(&sc.coeffs, &p_cu, &p_trial, sc.n0);
            if v_trial < best - 1e-9 * (1.0 + best.abs()) {
                best = v_trial;
                improved = Some(s);
            }
        }
        match improved {
            Some(s) => {
                state.d2d_q[s] = 0.0;
                cache.d2d_certify[s] = 0.0;
                retune_d2d_auxiliaries(state, &sc.coeffs, sc.n0);
            }
            None => return best,
        }
    }
}

/// Descent-guarded over-relaxation of the joint power step: the
/// auxiliary surrogate is tight only at the previous powers, so each
/// sweep moves the powers a damped fraction of the way to their
/// equilibrium (ill-conditioned CU/D2D seesaws crawl). Probe amplified
/// steps along the sweep's direction (clipped to the boxes, caps
/// checked); cross-cell certified terms re-price as `q^2`, home-cell CU
/// terms re-certify, and the best strictly improving candidate wins.
fn power_overrelax(
    state: &mut DesignState,
    sc: &Scaled,
    cfg: &SystemConfig,
    cache: &mut EvalCache,
    cu_q_old: &[f64],
    d2d_q_old: &[f64],
    eval_opts: &SolveOptions,
    current: f64,
) -> f64 {
    let dims = sc.est.dims;
    let n_cu = dims.total_cus();
    let n_d2d = dims.total_d2d();
    let cu_new = state.cu_q.clone();
    let d2d_new = state.d2d_q.clone();
    let cu_step: Vec<f64> = cu_new.iter().zip(cu_q_old).map(|(a, b)| a - b).collect();
    let d2d_step: Vec<f64> = d2d_new.iter().zip(d2d_q_old).map(|(a, b)| a - b).collect();
    if cu_step.iter().chain(&d2d_step).all(|d| d.abs() < 1e-12) {
        return current;
    }
    let d2d_scale: Vec<f64> = (0..n_d2d)
        .map(|s| {
            if d2d_new[s] > 0.0 {
                cache.d2d_certify[s] / (d2d_new[s] * d2d_new[s])
            } else {
                0.0
            }
        })
        .collect();
    let cu_hi = cfg.cu_max_power_w.sqrt();
    let d2d_hi = cfg.d2d_max_power_w.sqrt();

    let mut best = current;
    let mut best_point: Option<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> = None;
    'candidates: for alpha in [2.0, 4.0, 8.0, 16.0, 32.0] {
        let mut cu_trial = vec![0.0; n_cu];
        for t in 0..n_cu {
            let q = (cu_q_old[t] + alpha * cu_step[t]).clamp(0.0, cu_hi);
            cu_trial[t] = if cu_new[t] == 0.0 { 0.0 } else { q };
        }
        let mut d2d_trial = vec![0.0; n_d2d];
        for s in 0..n_d2d {
            let q = (d2d_q_old[s] + alpha * d2d_step[s]).clamp(0.0, d2d_hi);
            d2d_trial[s] = if d2d_new[s] == 0.0 { 0.0 } else { q };
        }
        for (l, &cap) in sc.caps.iter().enumerate() {
            let load: f64 = (0..n_d2d)
                .map(|s| sc.rho[s][l] * d2d_trial[s] * d2d_trial[s])
                .sum();
            if load > cap {
                continue 'candidates;
            }
        }
        // re-price the cellular certified terms
        let mut cu_cert = cache.cu_certify.clone();
        let mut cellular = cache.base;
        for t in 0..n_cu {
            let home = dims.cu_cell(t);
            let moved = (cu_trial[t] - cu_new[t]).abs() > 1e-14 * (1.0 + cu_new[t]);
            for cell in 0..dims.cells {
                if moved {
                    if cell == home {
                        cu_cert[t][cell] = certify_cu_term(
                            state,
                            &sc.est,
                            &sc.radii,
                            sc.n0,
                            t,
                            cell,
                            cu_trial[t],
                            eval_opts,
                        );
                    } else if cu_new[t] > 0.0 {
                        cu_cert[t][cell] *=
                            (cu_trial[t] * cu_trial[t]) / (cu_new[t] * cu_new[t]);
                    }
                }
                cellular += cu_cert[t][cell];
            }
        }
        let mut d2d_cert = vec![0.0; n_d2d];
        for s in 0..n_d2d {
            d2d_cert[s] = d2d_scale[s] * d2d_trial[s] * d2d_trial[s];
            cellular += d2d_cert[s];
        }
        let p_cu: Vec<f64> = cu_trial.iter().map(|q| q * q).collect();
        let p_d2d: Vec<f64> = d2d_trial.iter().map(|q| q * q).collect();
        let v_trial = cellular + d2d_terms_at_optimum(&sc.coeffs, &p_cu, &p_d2d, sc.n0);
        if v_trial < best - 1e-9 * (1.0 + best.abs()) {
            best = v_trial;
            best_point = Some((cu_trial, d2d_trial, cu_cert, d2d_cert));
        }
    }
    if let Some((cu_q, d2d_q, cu_cert, d2d_cert)) = best_point {
        state.cu_q = cu_q;
        state.d2d_q = d2d_q;
        cache.cu_certify = cu_cert;
        cache.d2d_certify = d2d_cert;
        retune_d2d_auxiliaries(state, &sc.coeffs, sc.n0);
    }
    best
}

/// One full sweep of Algorithm-style updates. Returns the objective at
/// the new point.
fn iterate(
    state: &mut DesignState,
    sc: &Scaled,
    cfg: &SystemConfig,
    opts: &RtdOptions,
    warm: bool,
) -> Result<f64, RunError> {
    let dims = sc.est.dims;

    // receive design per cell
    let receive: Vec<_> = (0..dims.cells)
        .into_par_iter()
        .map(|cell| {
            let (mut problem, layout) = builders::build_receive_design(
                cell,
                &state.cu_q,
                &state.d2d_q,
                &sc.est,
                &sc.radii,
                sc.n0,
            )?;
            if warm {
                problem.initial_point = builders::receive_warm_start(
                    &layout,
                    &state.combiners[cell],
                    &state.stream_scale[cell],
                );
            }
            let report = solve_with_retry(&problem, &opts.solver, &format!("receive cell {cell}"))?;
            Ok(builders::extract_receive_solution(&report, &layout))
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    for (cell, sol) in receive.into_iter().enumerate() {
        state.combiners[cell] = sol.combiner;
        state.stream_scale[cell] = sol.gamma;
        for (m, u) in sol.cu_aux.into_iter().enumerate() {
            state.cu_aux[dims.cu(cell, m)] = u;
        }
    }

    // D2D equalizers and auxiliaries at the current powers
    let p_cu = state.cu_powers();
    let p_d2d = state.d2d_powers();
    for s in 0..dims.total_d2d() {
        let f = metrics::d2d_mmse_equalizer(&sc.coeffs, &p_cu, &p_d2d, sc.n0, s);
        let mse = metrics::d2d_mse(f, &sc.coeffs, &p_cu, &p_d2d, sc.n0, s);
        state.equalizers[s] = f;
        state.d2d_aux[s] = metrics::u_star(mse);
    }
    let gamma_d2d: Vec<f64> = state
        .d2d_aux
        .iter()
        .map(|u| ((u - 1.0) / 2.0).exp())
        .collect();

    // per-CU power updates (independent given everything else)
    let cu_q_before = state.cu_q.clone();
    let new_cu_q: Vec<f64> = (0..dims.total_cus())
        .into_par_iter()
        .map(|t| {
            let k = builders::cu_interference_coeff(t, &gamma_d2d, &state.equalizers, &sc.coeffs);
            let (problem, layout) = builders::build_cu_power(
                t,
                &state.combiners,
                &state.stream_scale,
                k,
                &sc.est,
                &sc.radii,
                cfg.cu_max_power_w,
            )?;
            let report = solve_with_retry(&problem, &opts.solver, &format!("cu power {t}"))?;
            Ok(report.x[layout.var_q()])
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    state.cu_q = new_cu_q;

    // joint D2D power update
    let d2d_q_before = state.d2d_q.clone();
    if dims.total_d2d() > 0 {
        let (theta, phi) =
            builders::d2d_power_coefficients(&gamma_d2d, &state.equalizers, &sc.coeffs);
        let (problem, layout) = builders::build_d2d_power(
            &state.combiners,
            &theta,
            &phi,
            &sc.rho,
            &sc.caps,
            &sc.est,
            &sc.radii,
            cfg.d2d_max_power_w,
        )?;
        let report = solve_with_retry(&problem, &opts.solver, "d2d power")?;
        for s in 0..dims.total_d2d() {
            state.d2d_q[s] = report.x[layout.var_q(s)];
        }
    }

    // Sweep-end refresh: the auxiliaries are recomputed from scratch at
    // the start of the next sweep anyway, so re-deriving them at the new
    // powers only tightens the recorded objective (never increases it).
    retune_d2d_auxiliaries(state, &sc.coeffs, sc.n0);
    let (breakdown, mut cache) = evaluate_design(
        state,
        &sc.est,
        &sc.radii,
        &sc.coeffs,
        sc.n0,
        &opts.eval_solver,
    );
    let mut v = breakdown.total;
    v = power_overrelax(
        state,
        sc,
        cfg,
        &mut cache,
        &cu_q_before,
        &d2d_q_before,
        &opts.eval_solver,
        v,
    );
    v = shutdown_probe(state, sc, &mut cache, v);
    Ok(v)
}

/// Max violation of the power boxes and interference caps at a state.
fn constraint_violation(state: &DesignState, cfg: &SystemConfig, sc: &Scaled) -> f64 {
    let mut worst = 0.0f64;
    for &q in &state.cu_q {
        worst = worst.max(-q).max(q - cfg.cu_max_power_w.sqrt());
    }
    for &q in &state.d2d_q {
        worst = worst.max(-q).max(q - cfg.d2d_max_power_w.sqrt());
    }
    let p_d2d = state.d2d_powers();
    for (l, &cap) in sc.caps.iter().enumerate() {
        let total: f64 = p_d2d.iter().zip(&sc.rho).map(|(p, r)| p * r[l]).sum();
        // normalized to the cap scale
        worst = worst.max((total - cap) / cap.max(f64::MIN_POSITIVE));
    }
    worst
}

/// Run the alternating design on one channel set.
pub fn run_rtd(
    cfg: &SystemConfig,
    set: &ChannelSet,
    drop_index: u64,
    opts: &RtdOptions,
) -> Result<RtdResult, RunError> {
    let sc = rescale(cfg, set);
    let dims = sc.est.dims;
    let (cu_q, d2d_q) = initial_powers(cfg, &sc.rho, &sc.caps);
    let mut state = DesignState {
        cu_q,
        d2d_q,
        combiners: vec![DMatrix::zeros(dims.antennas, dims.cus_per_cell); dims.cells],
        stream_scale: vec![vec![1.0; dims.cus_per_cell]; dims.cells],
        cu_aux: vec![1.0; dims.total_cus()],
        d2d_aux: vec![1.0; dims.total_d2d()],
        equalizers: vec![Complex64::new(0.0, 0.0); dims.total_d2d()],
        channel_scale: sc.scale,
    };

    let mut trace = Vec::new();
    let mut status = RunStatus::MaxIter;
    let mut iters_used = 0;
    let mut max_violation = constraint_violation(&state, cfg, &sc);
    for j in 0..opts.max_iters {
        let v = iterate(&mut state, &sc, cfg, opts, j > 0)?;
        iters_used = j + 1;
        max_violation = max_violation.max(constraint_violation(&state, cfg, &sc));
        let converged = trace
            .last()
            .map(|prev: &f64| (v - prev).abs() <= opts.rel_tol * (1.0 + prev.abs()))
            .unwrap_or(false);
        trace.push(v);
        if converged {
            status = RunStatus::Converged;
            break;
        }
    }

    let result = finish_run(cfg, set, &sc, state, trace, iters_used, status, drop_index, opts);
    Ok(result)
}

/// Assemble the result of a finished run, evaluating the certified and
/// sampled metrics against the channel data in `eval_sc` (for the robust
/// run this is the run's own data).
#[allow(clippy::too_many_arguments)]
fn finish_run(
    cfg: &SystemConfig,
    set: &ChannelSet,
    eval_sc: &Scaled,
    mut state: DesignState,
    trace: Vec<f64>,
    iters_used: usize,
    status: RunStatus,
    drop_index: u64,
    opts: &RtdOptions,
) -> RtdResult {
    // The reported certificate holds for any auxiliaries; the per-link
    // optimum (MMSE equalizer, u = 1 - ln MSE) at the *final* powers and
    // the *evaluation* radii gives the tightest one. This matters for the
    // non-robust baseline, whose loop-time auxiliaries assume zero radii.
    {
        let p_cu = state.cu_powers();
        let p_d2d = state.d2d_powers();
        for s in 0..eval_sc.est.dims.total_d2d() {
            let f = metrics::d2d_mmse_equalizer(&eval_sc.coeffs, &p_cu, &p_d2d, eval_sc.n0, s);
            let mse = metrics::d2d_mse(f, &eval_sc.coeffs, &p_cu, &p_d2d, eval_sc.n0, s);
            state.equalizers[s] = f;
            state.d2d_aux[s] = metrics::u_star(mse);
        }
    }
    let (breakdown, _) = evaluate_design(
        &state,
        &eval_sc.est,
        &eval_sc.radii,
        &eval_sc.coeffs,
        eval_sc.n0,
        &opts.eval_solver,
    );
    let filters = state.receive_filters();
    let mut rng = substream(cfg.seed, drop_index, Purpose::Evaluation);
    let empirical = metrics::empirical_worst_rate(
        &eval_sc.set,
        &filters,
        &state.cu_powers(),
        &state.d2d_powers(),
        eval_sc.n0,
        opts.eval_samples,
        &mut rng,
    );
    let bounds = metrics::sinr_upper_bounds(cfg, set);

    // re-check the caps against the evaluation radii (true uncertainty)
    let p_d2d = state.d2d_powers();
    let mut cap_exceeded = false;
    for (l, &cap) in eval_sc.caps.iter().enumerate() {
        let total: f64 = p_d2d.iter().zip(&eval_sc.rho).map(|(p, r)| p * r[l]).sum();
        if total > cap * (1.0 + 1e-8) {
            cap_exceeded = true;
        }
    }

    let max_constraint_violation = constraint_violation(&state, cfg, eval_sc).max(0.0);
    RtdResult {
        surrogate_rate_bits: metrics::surrogate_rate_bits(breakdown.total),
        cellular_rate_bits: metrics::surrogate_rate_bits(breakdown.cellular),
        d2d_rate_bits: metrics::surrogate_rate_bits(breakdown.d2d),
        empirical_worst_rate_bits: empirical.sum_rate_bits,
        objective_lower_bound: bounds.objective_lower_bound,
        state,
        objective_trace: trace,
        iters_used,
        status,
        max_constraint_violation,
        cap_exceeded,
    }
}

/// The non-robust baseline: run the same algorithm with every radius
/// forced to zero (estimates taken as truth), then evaluate the resulting
/// fixed design under the true uncertainty: certified objective and
/// sampled worst rate at the original radii, plus a cap re-check against
/// the true interference weights.
pub fn run_nonrobust(
    cfg: &SystemConfig,
    set: &ChannelSet,
    drop_index: u64,
    opts: &RtdOptions,
) -> Result<RtdResult, RunError> {
    let zero_set = set.with_zero_radii();
    let inner = run_rtd(cfg, &zero_set, drop_index, opts)?;
    let eval_sc = rescale(cfg, set);
    Ok(finish_run(
        cfg,
        set,
        &eval_sc,
        inner.state,
        inner.objective_trace,
        inner.iters_used,
        inner.status,
        drop_index,
        opts,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::generate_channel_set;

    fn o1_cfg(cells: usize, m: usize, n: usize, b: usize, mu: f64, seed: u64) -> SystemConfig {
        let mut cfg = SystemConfig::desk();
        cfg.cells = cells;
        cfg.cus_per_cell = m;
        cfg.d2d_per_cell = n;
        cfg.bs_antennas = b;
        cfg.csi_error_level = mu;
        cfg.seed = seed;
        cfg
    }

    #[test]
    fn initial_powers_satisfy_caps_by_construction() {
        let cfg = o1_cfg(2, 2, 3, 4, 0.3, 1);
        let set = generate_channel_set(&cfg, 0).unwrap();
        let sc = rescale(&cfg, &set);
        let (cu_q, d2d_q) = initial_powers(&cfg, &sc.rho, &sc.caps);
        for q in cu_q {
            assert!((q - cfg.cu_max_power_w.sqrt()).abs() < 1e-15);
        }
        for (l, &cap) in sc.caps.iter().enumerate() {
            let total: f64 = d2d_q
                .iter()
                .zip(&sc.rho)
                .map(|(q, r)| q * q * r[l])
                .sum();
            assert!(total <= cap * (1.0 + 1e-12), "cap {l}: {total} vs {cap}");
        }
    }

    #[test]
    fn single_link_scalar_network_reaches_full_power_mmse() {
        // mu = 0, one cell, one CU, no D2D, one antenna: the fixed point is
        // full transmit power with the (scalar) MMSE filter, reached in
        // one sweep.
        let mut cfg = o1_cfg(1, 1, 0, 1, 0.0, 3);
        cfg.pl_ref_db = -20.0;
        cfg.pathloss_exponent = 1.0;
        let set = generate_channel_set(&cfg, 0).unwrap();
        let opts = RtdOptions::default();
        let result = run_rtd(&cfg, &set, 0, &opts).unwrap();
        assert_eq!(result.status, RunStatus::Converged);
        let q = result.state.cu_q[0];
        assert!(
            (q - cfg.cu_max_power_w.sqrt()).abs() <= 1e-9,
            "q = {q} vs {}",
            cfg.cu_max_power_w.sqrt()
        );
        // the surrogate equals the nominal rate at the MMSE filter
        let sc = rescale(&cfg, &set);
        let p = [cfg.cu_max_power_w];
        let w = metrics::bs_mmse_filter(&sc.est, &p, &[], sc.n0, 0, 0);
        let sinr = metrics::cellular_sinr(&sc.est, &p, &[], sc.n0, &w, 0, 0);
        let nominal = (1.0 + sinr).log2();
        assert!(
            (result.surrogate_rate_bits - nominal).abs() <= 1e-5 * (1.0 + nominal),
            "surrogate {} vs nominal {nominal}",
            result.surrogate_rate_bits
        );
        // and the filter direction matches the MMSE filter
        let wf = &result.state.receive_filters()[0][0];
        let cos = wf.dotc(&w).norm() / (wf.norm() * w.norm());
        assert!(cos > 1.0 - 1e-8, "cosine {cos}");
    }

    #[test]
    fn desk_run_descends_converges_and_respects_bound() {
        let cfg = o1_cfg(2, 2, 3, 4, 0.3, 7);
        let set = generate_channel_set(&cfg, 0).unwrap();
        let opts = RtdOptions::default();
        let result = run_rtd(&cfg, &set, 0, &opts).unwrap();
        assert_eq!(result.status, RunStatus::Converged);
        assert!(result.iters_used <= 30, "iters {}", result.iters_used);
        for w in result.objective_trace.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-6 * (1.0 + w[0].abs()),
                "trace not monotone: {} -> {}",
                w[0],
                w[1]
            );
        }
        for &v in &result.objective_trace {
            assert!(
                v >= result.objective_lower_bound - 1e-9,
                "objective {v} below bound {}",
                result.objective_lower_bound
            );
        }
        assert!(result.max_constraint_violation <= 1e-8);
        // sampling cannot beat the certified worst case
        assert!(result.empirical_worst_rate_bits >= result.surrogate_rate_bits - 1e-6);

        // determinism: rerun bit-identical
        let again = run_rtd(&cfg, &set, 0, &opts).unwrap();
        assert_eq!(result, again);
    }

    #[test]
    fn zero_error_robust_and_nonrobust_agree_exactly() {
        let cfg = o1_cfg(2, 2, 2, 3, 0.0, 11);
        let set = generate_channel_set(&cfg, 0).unwrap();
        let opts = RtdOptions::default();
        let robust = run_rtd(&cfg, &set, 0, &opts).unwrap();
        let nonrobust = run_nonrobust(&cfg, &set, 0, &opts).unwrap();
        assert_eq!(robust, nonrobust);
    }

    #[test]
    fn nonrobust_is_evaluated_under_true_uncertainty() {
        let cfg = o1_cfg(1, 2, 2, 2, 0.5, 13);
        let set = generate_channel_set(&cfg, 0).unwrap();
        let opts = RtdOptions::default();
        let robust = run_rtd(&cfg, &set, 0, &opts).unwrap();
        let nonrobust = run_nonrobust(&cfg, &set, 0, &opts).unwrap();
        // the robust design never breaks its own caps
        assert!(!robust.cap_exceeded);
        assert!(robust.max_constraint_violation <= 1e-8);
        // certified rates are finite and the robust one cannot be worse
        // than the non-robust certificate by construction at the same
        // channel set (both bound the same worst case, robust optimizes it)
        assert!(robust.surrogate_rate_bits.is_finite());
        assert!(nonrobust.surrogate_rate_bits.is_finite());
        assert!(nonrobust.empirical_worst_rate_bits >= nonrobust.surrogate_rate_bits - 1e-6);
    }
}

