//! Evaluative mathematics shared by the design loop and the test suites:
//! SINRs, MSEs, MMSE filters, the alternating-minimization surrogate
//! objective, its lower bound, and the rate metrics derived from it.
//!
//! The surrogate objective `V` is a sum of per-cell worst-case scaled-MSE
//! terms and per-D2D-link `exp(u-1)*MSE - u` terms; `-V/ln 2` is a
//! certified lower bound on the worst-case sum rate of the design that
//! produced it.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::config::SystemConfig;
use crate::network::{sample_scalar_in_disc, sample_vector_in_ball, ChannelSet, Channels};
use crate::worstcase::WorstCaseD2dCoeffs;

pub const LN_2: f64 = std::f64::consts::LN_2;

/// One transmit link, used as the key of per-link SINR maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LinkId {
    /// CU `user` in `cell`.
    Cellular { cell: usize, user: usize },
    /// D2D pair `pair` in `cell`.
    D2d { cell: usize, pair: usize },
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinkId::Cellular { cell, user } => write!(f, "c{cell}_{user}"),
            LinkId::D2d { cell, pair } => write!(f, "d{cell}_{pair}"),
        }
    }
}

/// Sum rates in bits/s/Hz plus the per-link SINRs they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub sum_rate_bits: f64,
    pub cellular_sum_bits: f64,
    pub d2d_sum_bits: f64,
    pub per_link_sinr: BTreeMap<LinkId, f64>,
}

/// Interference-plus-noise covariance seen by BS `cell` when decoding CU
/// `user`: all other CUs, every D2D transmitter, plus `N0 I`.
pub fn interference_covariance(
    ch: &Channels,
    p_cu: &[f64],
    p_d2d: &[f64],
    n0: f64,
    cell: usize,
    user: usize,
) -> DMatrix<Complex64> {
    let dims = ch.dims;
    let b = dims.antennas;
    let own = dims.cu(cell, user);
    let mut g = DMatrix::from_diagonal_element(b, b, Complex64::new(n0, 0.0));
    for t in 0..dims.total_cus() {
        if t == own {
            continue;
        }
        let h = &ch.h_cu_bs[t][cell];
        g.gerc(Complex64::new(p_cu[t], 0.0), h, h, Complex64::new(1.0, 0.0));
    }
    for s in 0..dims.total_d2d() {
        let h = &ch.h_d2d_bs[s][cell];
        g.gerc(Complex64::new(p_d2d[s], 0.0), h, h, Complex64::new(1.0, 0.0));
    }
    g
}

/// Post-processing SINR of one cellular stream under receive filter `w`.
pub fn cellular_sinr(
    ch: &Channels,
    p_cu: &[f64],
    p_d2d: &[f64],
    n0: f64,
    w: &DVector<Complex64>,
    cell: usize,
    user: usize,
) -> f64 {
    let t = ch.dims.cu(cell, user);
    let own = &ch.h_cu_bs[t][cell];
    let signal = p_cu[t] * w.dotc(own).norm_sqr();
    if signal == 0.0 {
        // silenced transmitter or all-zero filter carries no information
        return 0.0;
    }
    let g = interference_covariance(ch, p_cu, p_d2d, n0, cell, user);
    let denom = w.dotc(&(&g * w)).re;
    signal / denom
}

fn d2d_sinr_from_maps(
    g_cu_rx: &[Vec<Complex64>],
    g_d2d_rx: &[Vec<Complex64>],
    p_cu: &[f64],
    p_d2d: &[f64],
    n0: f64,
    s: usize,
) -> f64 {
    let signal = p_d2d[s] * g_d2d_rx[s][s].norm_sqr();
    let mut denom = n0;
    for (t, row) in g_cu_rx.iter().enumerate() {
        denom += p_cu[t] * row[s].norm_sqr();
    }
    for (k, row) in g_d2d_rx.iter().enumerate() {
        if k != s {
            denom += p_d2d[k] * row[s].norm_sqr();
        }
    }
    signal / denom
}

/// Received SINR at D2D receiver `s` under the given coefficients.
pub fn d2d_sinr(ch: &Channels, p_cu: &[f64], p_d2d: &[f64], n0: f64, s: usize) -> f64 {
    d2d_sinr_from_maps(&ch.g_cu_rx, &ch.g_d2d_rx, p_cu, p_d2d, n0, s)
}

/// Worst-case D2D SINR: the plain SINR evaluated at the worst-case
/// coefficients (shrunk desired link, grown interferers).
pub fn worst_case_d2d_sinr(
    coeffs: &WorstCaseD2dCoeffs,
    p_cu: &[f64],
    p_d2d: &[f64],
    n0: f64,
    s: usize,
) -> f64 {
    d2d_sinr_from_maps(&coeffs.g_cu_rx, &coeffs.g_d2d_rx, p_cu, p_d2d, n0, s)
}

/// MMSE receive filter at BS `cell` for CU `user`:
/// `sqrt(p) (A + G)^{-1} h` with `A = p h h^H`. Always well defined since
/// `N0 > 0` keeps the matrix positive definite.
pub fn bs_mmse_filter(
    ch: &Channels,
    p_cu: &[f64],
    p_d2d: &[f64],
    n0: f64,
    cell: usize,
    user: usize,
) -> DVector<Complex64> {
    let t = ch.dims.cu(cell, user);
    let h = &ch.h_cu_bs[t][cell];
    let mut ag = interference_covariance(ch, p_cu, p_d2d, n0, cell, user);
    ag.gerc(Complex64::new(p_cu[t], 0.0), h, h, Complex64::new(1.0, 0.0));
    let chol = nalgebra::linalg::Cholesky::new(ag).expect("A + G is positive definite");
    chol.solve(h) * Complex64::new(p_cu[t].sqrt(), 0.0)
}

/// Expectation-form MSE of filter `w` on cellular stream (`cell`, `user`):
/// `w^H (A + G) w - 2 sqrt(p) Re(w^H h) + 1`.
pub fn cellular_mse_at_filter(
    ch: &Channels,
    p_cu: &[f64],
    p_d2d: &[f64],
    n0: f64,
    w: &DVector<Complex64>,
    cell: usize,
    user: usize,
) -> f64 {
    let t = ch.dims.cu(cell, user);
    let h = &ch.h_cu_bs[t][cell];
    let g = interference_covariance(ch, p_cu, p_d2d, n0, cell, user);
    let quad = w.dotc(&(&g * w)).re + p_cu[t] * w.dotc(h).norm_sqr();
    quad - 2.0 * p_cu[t].sqrt() * w.dotc(h).re + 1.0
}

/// Single-tap MMSE equalizer at D2D receiver `s` under worst-case
/// coefficients; the denominator includes the own-signal power.
pub fn d2d_mmse_equalizer(
    coeffs: &WorstCaseD2dCoeffs,
    p_cu: &[f64],
    p_d2d: &[f64],
    n0: f64,
    s: usize,
) -> Complex64 {
    let denom = d2d_total_power(coeffs, p_cu, p_d2d, n0, s);
    coeffs.g_d2d_rx[s][s] * (p_d2d[s].sqrt() / denom)
}

fn d2d_total_power(
    coeffs: &WorstCaseD2dCoeffs,
    p_cu: &[f64],
    p_d2d: &[f64],
    n0: f64,
    s: usize,
) -> f64 {
    let mut total = n0;
    for (t, row) in coeffs.g_cu_rx.iter().enumerate() {
        total += p_cu[t] * row[s].norm_sqr();
    }
    for (k, row) in coeffs.g_d2d_rx.iter().enumerate() {
        total += p_d2d[k] * row[s].norm_sqr();
    }
    total
}

/// Worst-case MSE of equalizer `f` at D2D receiver `s`.
pub fn d2d_mse(
    f: Complex64,
    coeffs: &WorstCaseD2dCoeffs,
    p_cu: &[f64],
    p_d2d: &[f64],
    n0: f64,
    s: usize,
) -> f64 {
    let total = d2d_total_power(coeffs, p_cu, p_d2d, n0, s);
    f.norm_sqr() * total - 2.0 * p_d2d[s].sqrt() * (f.conj() * coeffs.g_d2d_rx[s][s]).re + 1.0
}

/// Optimal auxiliary variable for a given MSE: `u* = 1 - ln(MSE)`.
pub fn u_star(mse: f64) -> f64 {
    1.0 - mse.ln()
}

/// Per-stream scaled MSEs of cell `cell` under the scaled combiner `J` and
/// stream scales `gamma`, at explicit channels (estimates plus whatever
/// perturbation the caller baked in). Returns `(gamma_m^2 MSE_m, MSE_m)`
/// per stream, evaluated through the quadratic expansion in `J`.
pub fn cellular_stream_mse(
    j: &DMatrix<Complex64>,
    gamma: &[f64],
    q_cu: &[f64],
    q_d2d: &[f64],
    ch: &Channels,
    n0: f64,
    cell: usize,
) -> (Vec<f64>, Vec<f64>) {
    let dims = ch.dims;
    let m_streams = dims.cus_per_cell;
    let mut scaled = vec![0.0; m_streams];
    for m in 0..m_streams {
        let jm = j.column(m);
        let mut acc = gamma[m] * gamma[m] + n0 * jm.norm_squared();
        for t in 0..dims.total_cus() {
            let inner = jm.dotc(&ch.h_cu_bs[t][cell]);
            acc += q_cu[t] * q_cu[t] * inner.norm_sqr();
            if t == dims.cu(cell, m) {
                acc -= 2.0 * q_cu[t] * gamma[m] * inner.re;
            }
        }
        for s in 0..dims.total_d2d() {
            let inner = jm.dotc(&ch.h_d2d_bs[s][cell]);
            acc += q_d2d[s] * q_d2d[s] * inner.norm_sqr();
        }
        scaled[m] = acc;
    }
    let plain = scaled
        .iter()
        .zip(gamma)
        .map(|(&v, &g)| v / (g * g))
        .collect();
    (scaled, plain)
}

/// The surrogate objective: per-cell worst-case scaled-MSE sums (already
/// certified by the receive-design optimum) plus the D2D auxiliary terms.
pub fn assemble_objective(cell_worst_terms: &[f64], d2d_mses: &[f64], d2d_aux: &[f64]) -> f64 {
    let cells: f64 = cell_worst_terms.iter().sum();
    let d2d: f64 = d2d_mses
        .iter()
        .zip(d2d_aux)
        .map(|(&mse, &u)| (u - 1.0).exp() * mse - u)
        .sum();
    cells + d2d
}

/// Per-link SINR caps and the resulting objective lower bound.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrBounds {
    /// `sigma[t] = (P_c/N0) (||estimate|| + eps)^2` for each CU's own link.
    pub sigma_cu: Vec<f64>,
    /// `sigma[s] = (P_d/N0) |g|^2` at the actual desired coefficient.
    pub sigma_d2d: Vec<f64>,
    /// `sum ln(1/(1+sigma))` over all links; no achievable objective value
    /// can fall below this.
    pub objective_lower_bound: f64,
}

/// Cauchy-Schwarz SINR caps per link and the objective lower bound they
/// imply.
pub fn sinr_upper_bounds(cfg: &SystemConfig, set: &ChannelSet) -> SinrBounds {
    let dims = *set.dims();
    let mut sigma_cu = Vec::with_capacity(dims.total_cus());
    for t in 0..dims.total_cus() {
        let cell = dims.cu_cell(t);
        let grown = set.estimated.h_cu_bs[t][cell].norm() + set.radii.h_cu_bs[t][cell];
        sigma_cu.push(cfg.cu_max_power_w / cfg.noise_power_w * grown * grown);
    }
    let mut sigma_d2d = Vec::with_capacity(dims.total_d2d());
    for s in 0..dims.total_d2d() {
        let g = set.actual.g_d2d_rx[s][s].norm_sqr();
        sigma_d2d.push(cfg.d2d_max_power_w / cfg.noise_power_w * g);
    }
    let objective_lower_bound = sigma_cu
        .iter()
        .chain(sigma_d2d.iter())
        .map(|&s| -(1.0 + s).ln())
        .sum();
    SinrBounds {
        sigma_cu,
        sigma_d2d,
        objective_lower_bound,
    }
}

/// Certified rate from the surrogate objective: `-V / ln 2` bits.
pub fn surrogate_rate_bits(objective: f64) -> f64 {
    -objective / LN_2
}

/// Sum rate report at one concrete channel realization, with fixed
/// per-stream receive filters `filters[cell][user]`.
pub fn rate_report(
    ch: &Channels,
    filters: &[Vec<DVector<Complex64>>],
    p_cu: &[f64],
    p_d2d: &[f64],
    n0: f64,
) -> RateReport {
    let dims = ch.dims;
    let mut per_link_sinr = BTreeMap::new();
    let mut cellular = 0.0;
    for cell in 0..dims.cells {
        for user in 0..dims.cus_per_cell {
            let sinr = cellular_sinr(ch, p_cu, p_d2d, n0, &filters[cell][user], cell, user);
            cellular += (1.0 + sinr).log2();
            per_link_sinr.insert(LinkId::Cellular { cell, user }, sinr);
        }
    }
    let mut d2d = 0.0;
    for s in 0..dims.total_d2d() {
        let sinr = d2d_sinr(ch, p_cu, p_d2d, n0, s);
        d2d += (1.0 + sinr).log2();
        per_link_sinr.insert(
            LinkId::D2d {
                cell: dims.d2d_cell(s),
                pair: s % dims.d2d_per_cell.max(1),
            },
            sinr,
        );
    }
    RateReport {
        sum_rate_bits: cellular + d2d,
        cellular_sum_bits: cellular,
        d2d_sum_bits: d2d,
        per_link_sinr,
    }
}

/// Sampled worst-case rate: draw `n_samples` joint perturbations in the
/// error balls, evaluate the fixed design on each, and keep the worst
/// report. Sampling can never fall below the certified surrogate bound.
pub fn empirical_worst_rate(
    set: &ChannelSet,
    filters: &[Vec<DVector<Complex64>>],
    p_cu: &[f64],
    p_d2d: &[f64],
    n0: f64,
    n_samples: usize,
    rng: &mut impl Rng,
) -> RateReport {
    let mut perturbed = set.estimated.clone();
    let mut worst: Option<RateReport> = None;
    for _ in 0..n_samples.max(1) {
        sample_perturbation(set, &mut perturbed, rng);
        let report = rate_report(&perturbed, filters, p_cu, p_d2d, n0);
        let replace = worst
            .as_ref()
            .map(|w| report.sum_rate_bits < w.sum_rate_bits)
            .unwrap_or(true);
        if replace {
            worst = Some(report);
        }
    }
    worst.expect("n_samples >= 1")
}

/// Overwrite `out` with estimate + a fresh uniform-in-ball perturbation
/// for every link.
pub fn sample_perturbation(set: &ChannelSet, out: &mut Channels, rng: &mut impl Rng) {
    let dims = *set.dims();
    for t in 0..dims.total_cus() {
        for l in 0..dims.cells {
            let eps = set.radii.h_cu_bs[t][l];
            out.h_cu_bs[t][l] =
                &set.estimated.h_cu_bs[t][l] + sample_vector_in_ball(dims.antennas, eps, rng);
        }
    }
    for s in 0..dims.total_d2d() {
        for l in 0..dims.cells {
            let eps = set.radii.h_d2d_bs[s][l];
            out.h_d2d_bs[s][l] =
                &set.estimated.h_d2d_bs[s][l] + sample_vector_in_ball(dims.antennas, eps, rng);
        }
    }
    for t in 0..dims.total_cus() {
        for s in 0..dims.total_d2d() {
            out.g_cu_rx[t][s] =
                set.estimated.g_cu_rx[t][s] + sample_scalar_in_disc(set.radii.g_cu_rx[t][s], rng);
        }
    }
    for s1 in 0..dims.total_d2d() {
        for s2 in 0..dims.total_d2d() {
            out.g_d2d_rx[s1][s2] = set.estimated.g_d2d_rx[s1][s2]
                + sample_scalar_in_disc(set.radii.g_d2d_rx[s1][s2], rng);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{generate_channel_set, substream, Dims, Purpose, Radii};
    use crate::worstcase::worst_case_d2d_coeffs;
    use rand::Rng;

    fn dims_of(cells: usize, m: usize, n: usize, b: usize) -> Dims {
        Dims {
            cells,
            cus_per_cell: m,
            d2d_per_cell: n,
            antennas: b,
        }
    }

    /// Hand-buildable channel container for synthetic cases.
    fn empty_channels(dims: Dims) -> Channels {
        Channels {
            dims,
            h_cu_bs: vec![vec![DVector::zeros(dims.antennas); dims.cells]; dims.total_cus()],
            h_d2d_bs: vec![vec![DVector::zeros(dims.antennas); dims.cells]; dims.total_d2d()],
            g_cu_rx: vec![vec![Complex64::new(0.0, 0.0); dims.total_d2d()]; dims.total_cus()],
            g_d2d_rx: vec![vec![Complex64::new(0.0, 0.0); dims.total_d2d()]; dims.total_d2d()],
        }
    }

    fn small_set(seed: u64, cells: usize, m: usize, n: usize, b: usize, mu: f64) -> ChannelSet {
        let mut cfg = SystemConfig::desk();
        cfg.cells = cells;
        cfg.cus_per_cell = m;
        cfg.d2d_per_cell = n;
        cfg.bs_antennas = b;
        cfg.csi_error_level = mu;
        cfg.seed = seed;
        // O(1) link amplitudes so comparison tolerances bite
        cfg.pl_ref_db = -20.0;
        cfg.pathloss_exponent = 1.0;
        generate_channel_set(&cfg, 0).unwrap()
    }

    #[test]
    fn scalar_cellular_sinr_is_one() {
        let dims = dims_of(1, 1, 0, 1);
        let mut ch = empty_channels(dims);
        ch.h_cu_bs[0][0][0] = Complex64::new(1.0, 0.0);
        let w = DVector::from_element(1, Complex64::new(1.0, 0.0));
        let sinr = cellular_sinr(&ch, &[1.0], &[], 1.0, &w, 0, 0);
        assert!((sinr - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cellular_sinr_invariant_under_filter_scaling() {
        let set = small_set(3, 2, 2, 2, 4, 0.0);
        let p_cu = vec![0.05; 4];
        let p_d2d = vec![0.01; 4];
        let n0 = 1e-3;
        let w = bs_mmse_filter(&set.actual, &p_cu, &p_d2d, n0, 1, 0);
        let base = cellular_sinr(&set.actual, &p_cu, &p_d2d, n0, &w, 1, 0);
        for c in [
            Complex64::new(7.3, 0.0),
            Complex64::new(0.0, 7.3),
            Complex64::new(-2.4, 1.9),
        ] {
            let scaled = w.map(|z| z * c);
            let v = cellular_sinr(&set.actual, &p_cu, &p_d2d, n0, &scaled, 1, 0);
            assert!((v - base).abs() <= 1e-12 * (1.0 + base));
        }
    }

    #[test]
    fn cellular_sinr_matches_naive_quadratic_forms() {
        // Independent oracle: raw loops over complex parts, no linear
        // algebra library involved.
        let set = small_set(11, 2, 2, 3, 4, 0.0);
        let dims = *set.dims();
        let p_cu = vec![0.02, 0.05, 0.08, 0.03];
        let p_d2d = vec![0.01, 0.04, 0.02, 0.06, 0.005, 0.03];
        let n0 = 2e-3;
        let mut rng = substream(4, 0, Purpose::Evaluation);
        let w = DVector::from_fn(4, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let (cell, user) = (1, 1);
        let fast = cellular_sinr(&set.actual, &p_cu, &p_d2d, n0, &w, cell, user);

        let dot = |a: &DVector<Complex64>, b: &DVector<Complex64>| {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..a.len() {
                acc += a[i].conj() * b[i];
            }
            acc
        };
        let own = dims.cu(cell, user);
        let mut denom = n0 * dot(&w, &w).re;
        for t in 0..dims.total_cus() {
            if t != own {
                denom += p_cu[t] * dot(&w, &set.actual.h_cu_bs[t][cell]).norm_sqr();
            }
        }
        for s in 0..dims.total_d2d() {
            denom += p_d2d[s] * dot(&w, &set.actual.h_d2d_bs[s][cell]).norm_sqr();
        }
        let slow = p_cu[own] * dot(&w, &set.actual.h_cu_bs[own][cell]).norm_sqr() / denom;
        assert!((fast - slow).abs() <= 1e-12 * (1.0 + slow));
    }

    #[test]
    fn d2d_sinr_reference_values() {
        let dims = dims_of(1, 1, 1, 1);
        let mut ch = empty_channels(dims);
        ch.g_d2d_rx[0][0] = Complex64::new(0.75, 0.0); // |g|^2 = 0.5625
        ch.g_cu_rx[0][0] = Complex64::new(1.5, 0.0); // interference 2.25
        let sinr = d2d_sinr(&ch, &[1.0], &[1.0], 0.25, 0);
        assert!((sinr - 0.225).abs() < 1e-15);

        // no interferers, p|g|^2 = N0 -> 1
        let mut ch = empty_channels(dims);
        ch.g_d2d_rx[0][0] = Complex64::new(0.5, 0.0);
        let sinr = d2d_sinr(&ch, &[0.0], &[1.0], 0.25, 0);
        assert!((sinr - 1.0).abs() < 1e-15);
    }

    #[test]
    fn d2d_sinr_scale_invariant_without_noise() {
        let dims = dims_of(1, 2, 2, 1);
        let mut ch = empty_channels(dims);
        ch.g_d2d_rx[0][0] = Complex64::new(0.9, 0.2);
        ch.g_d2d_rx[1][0] = Complex64::new(0.3, -0.4);
        ch.g_cu_rx[0][0] = Complex64::new(0.2, 0.1);
        ch.g_cu_rx[1][0] = Complex64::new(-0.1, 0.3);
        let p_cu = [0.4, 0.7];
        let p_d2d = [0.5, 0.6];
        let doubled_cu: Vec<f64> = p_cu.iter().map(|p| 2.0 * p).collect();
        let doubled_d2d: Vec<f64> = p_d2d.iter().map(|p| 2.0 * p).collect();
        let a = d2d_sinr(&ch, &p_cu, &p_d2d, 0.0, 0);
        let b = d2d_sinr(&ch, &doubled_cu, &doubled_d2d, 0.0, 0);
        assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }

    #[test]
    fn worst_case_d2d_sinr_bounds_samples() {
        let set = small_set(21, 1, 2, 2, 2, 0.4);
        let coeffs = worst_case_d2d_coeffs(&set.estimated, &set.radii);
        let p_cu = vec![0.05, 0.02];
        let p_d2d = vec![0.01, 0.03];
        let n0 = 1e-4;
        let worst = worst_case_d2d_sinr(&coeffs, &p_cu, &p_d2d, n0, 1);

        let mut rng = substream(22, 0, Purpose::Evaluation);
        let mut perturbed = set.estimated.clone();
        for _ in 0..1000 {
            sample_perturbation(&set, &mut perturbed, &mut rng);
            let v = d2d_sinr(&perturbed, &p_cu, &p_d2d, n0, 1);
            assert!(worst <= v + 1e-9);
        }

        // zero radii: worst case coincides with the nominal value
        let zero = ChannelSet {
            estimated: set.estimated.clone(),
            actual: set.estimated.clone(),
            radii: Radii::zeros(set.dims()),
        };
        let c0 = worst_case_d2d_coeffs(&zero.estimated, &zero.radii);
        let a = worst_case_d2d_sinr(&c0, &p_cu, &p_d2d, n0, 0);
        let b = d2d_sinr(&set.estimated, &p_cu, &p_d2d, n0, 0);
        assert!((a - b).abs() <= 1e-12 * (1.0 + b));

        // own-link radius at least the magnitude: numerator clamps to zero
        let mut radii = Radii::zeros(set.dims());
        radii.g_d2d_rx[0][0] = set.estimated.g_d2d_rx[0][0].norm() * 1.5;
        let c = worst_case_d2d_coeffs(&set.estimated, &radii);
        assert_eq!(worst_case_d2d_sinr(&c, &p_cu, &p_d2d, n0, 0), 0.0);
    }

    #[test]
    fn scalar_bs_mmse_filter() {
        let dims = dims_of(1, 1, 0, 1);
        let mut ch = empty_channels(dims);
        ch.h_cu_bs[0][0][0] = Complex64::new(1.0, 0.0);
        let w = bs_mmse_filter(&ch, &[1.0], &[], 1.0, 0, 0);
        assert!((w[0] - Complex64::new(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn bs_mmse_filter_beats_perturbed_competitors() {
        let set = small_set(31, 2, 2, 1, 3, 0.0);
        let p_cu = vec![0.1, 0.2, 0.05, 0.15];
        let p_d2d = vec![0.02, 0.08];
        let n0 = 5e-3;
        let w = bs_mmse_filter(&set.actual, &p_cu, &p_d2d, n0, 0, 1);
        let best = cellular_mse_at_filter(&set.actual, &p_cu, &p_d2d, n0, &w, 0, 1);
        let mut rng = substream(32, 0, Purpose::Evaluation);
        for _ in 0..100 {
            let jitter = DVector::from_fn(3, |_, _| {
                Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * 0.3
            });
            let cand = &w + jitter;
            let mse = cellular_mse_at_filter(&set.actual, &p_cu, &p_d2d, n0, &cand, 0, 1);
            assert!(best <= mse + 1e-12);
        }
    }

    #[test]
    fn mmse_filter_sinr_identity() {
        // SINR at the MMSE filter equals p h^H G^{-1} h.
        let set = small_set(41, 2, 2, 2, 4, 0.0);
        let p_cu = vec![0.1, 0.03, 0.07, 0.2];
        let p_d2d = vec![0.01, 0.05, 0.02, 0.04];
        let n0 = 1e-3;
        for (cell, user) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let w = bs_mmse_filter(&set.actual, &p_cu, &p_d2d, n0, cell, user);
            let sinr = cellular_sinr(&set.actual, &p_cu, &p_d2d, n0, &w, cell, user);
            let t = set.dims().cu(cell, user);
            let h = &set.actual.h_cu_bs[t][cell];
            let g = interference_covariance(&set.actual, &p_cu, &p_d2d, n0, cell, user);
            let direct =
                p_cu[t] * h.dotc(&nalgebra::linalg::Cholesky::new(g).unwrap().solve(h)).re;
            assert!((sinr - direct).abs() <= 1e-9 * (1.0 + direct));
        }
    }

    #[test]
    fn d2d_equalizer_reference_value_and_theorem_identity() {
        let dims = dims_of(1, 1, 1, 1);
        let mut ch = empty_channels(dims);
        ch.g_d2d_rx[0][0] = Complex64::new(0.75, 0.0);
        ch.g_cu_rx[0][0] = Complex64::new(1.5, 0.0); // cross power 2.25
        let radii = Radii::zeros(&dims);
        let coeffs = worst_case_d2d_coeffs(&ch, &radii);
        let f = d2d_mmse_equalizer(&coeffs, &[1.0], &[1.0], 0.25, 0);
        // denominator: 2.25 + 0.5625 (own) + 0.25 = 3.0625
        assert!((f.re - 0.75 / 3.0625).abs() < 1e-12);
        assert!(f.im.abs() < 1e-15);

        let mse = d2d_mse(f, &coeffs, &[1.0], &[1.0], 0.25, 0);
        let sinr = worst_case_d2d_sinr(&coeffs, &[1.0], &[1.0], 0.25, 0);
        assert!((mse - 1.0 / (1.0 + sinr)).abs() < 1e-12);

        // zero desired coefficient: equalizer vanishes
        let mut ch0 = ch.clone();
        ch0.g_d2d_rx[0][0] = Complex64::new(0.0, 0.0);
        let c0 = worst_case_d2d_coeffs(&ch0, &radii);
        assert_eq!(
            d2d_mmse_equalizer(&c0, &[1.0], &[1.0], 0.25, 0),
            Complex64::new(0.0, 0.0)
        );
    }

    #[test]
    fn d2d_mse_two_path_and_u_star() {
        assert!((u_star((-1.0f64).exp()) - 2.0).abs() < 1e-15);
        assert!((u_star(1.0) - 1.0).abs() < 1e-15);

        let set = small_set(51, 1, 2, 2, 2, 0.3);
        let coeffs = worst_case_d2d_coeffs(&set.estimated, &set.radii);
        let p_cu = vec![0.1, 0.05];
        let p_d2d = vec![0.04, 0.08];
        let n0 = 1e-3;
        for s in 0..2 {
            let f = d2d_mmse_equalizer(&coeffs, &p_cu, &p_d2d, n0, s);
            let mse = d2d_mse(f, &coeffs, &p_cu, &p_d2d, n0, s);
            // closed form: 1 - p |g|^2 / total received power
            let total = d2d_total_power(&coeffs, &p_cu, &p_d2d, n0, s);
            let direct = 1.0 - p_d2d[s] * coeffs.g_d2d_rx[s][s].norm_sqr() / total;
            assert!((mse - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn stream_mse_expansion_matches_expectation_form() {
        let set = small_set(61, 2, 2, 2, 3, 0.2);
        let dims = *set.dims();
        let n0 = 2e-3;
        let q_cu = vec![0.3, 0.2, 0.25, 0.15];
        let q_d2d = vec![0.1, 0.05, 0.12, 0.2];
        let p_cu: Vec<f64> = q_cu.iter().map(|q| q * q).collect();
        let p_d2d: Vec<f64> = q_d2d.iter().map(|q| q * q).collect();
        let mut rng = substream(62, 0, Purpose::Evaluation);
        let gamma = vec![1.3, 0.8];
        let j = DMatrix::from_fn(3, 2, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        // evaluate at an explicitly perturbed realization
        let mut perturbed = set.estimated.clone();
        sample_perturbation(&set, &mut perturbed, &mut rng);
        for cell in 0..dims.cells {
            let (scaled, plain) =
                cellular_stream_mse(&j, &gamma, &q_cu, &q_d2d, &perturbed, n0, cell);
            for m in 0..dims.cus_per_cell {
                let w = j.column(m) / Complex64::new(gamma[m], 0.0);
                let oracle =
                    cellular_mse_at_filter(&perturbed, &p_cu, &p_d2d, n0, &w.into(), cell, m);
                assert!((plain[m] - oracle).abs() <= 1e-12 * (1.0 + oracle));
                assert!((scaled[m] - gamma[m] * gamma[m] * oracle).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn stream_mse_zero_combiner_gives_gamma_squared() {
        let set = small_set(63, 1, 2, 1, 2, 0.0);
        let j = DMatrix::zeros(2, 2);
        let (scaled, _) = cellular_stream_mse(
            &j,
            &[1.0, 1.0],
            &[0.2, 0.3],
            &[0.1],
            &set.estimated,
            1e-3,
            0,
        );
        for v in scaled {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn objective_assembly_and_monotonicity() {
        // all MSEs = 1, u = 1: every D2D term is exp(0)*1 - 1 = 0.
        let v = assemble_objective(&[0.7, -0.3], &[1.0, 1.0], &[1.0, 1.0]);
        assert!((v - 0.4).abs() < 1e-15);

        let base = assemble_objective(&[0.1], &[0.5, 0.8], &[1.2, 0.9]);
        let bigger = assemble_objective(&[0.1], &[0.6, 0.8], &[1.2, 0.9]);
        assert!(bigger > base);
    }

    #[test]
    fn sinr_bound_reference_value() {
        let mut cfg = SystemConfig::desk();
        cfg.cells = 1;
        cfg.cus_per_cell = 1;
        cfg.d2d_per_cell = 0;
        cfg.bs_antennas = 1;
        cfg.cu_max_power_w = 1e-3;
        cfg.noise_power_w = 1e-3;
        cfg.csi_error_level = 0.0;
        let dims = Dims::from_config(&cfg);
        let mut ch = empty_channels(dims);
        ch.h_cu_bs[0][0][0] = Complex64::new(1.0, 0.0);
        let set = ChannelSet {
            estimated: ch.clone(),
            actual: ch,
            radii: Radii::zeros(&dims),
        };
        let bounds = sinr_upper_bounds(&cfg, &set);
        assert!((bounds.sigma_cu[0] - 1.0).abs() < 1e-12);
        assert!((bounds.objective_lower_bound - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn surrogate_rate_zero_objective() {
        assert_eq!(surrogate_rate_bits(0.0), 0.0);
        assert!((surrogate_rate_bits(-LN_2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rate_report_splits_consistently() {
        let set = small_set(71, 2, 2, 2, 3, 0.0);
        let dims = *set.dims();
        let p_cu = vec![0.1; 4];
        let p_d2d = vec![0.02; 4];
        let n0 = 1e-3;
        let filters: Vec<Vec<DVector<Complex64>>> = (0..dims.cells)
            .map(|cell| {
                (0..dims.cus_per_cell)
                    .map(|user| bs_mmse_filter(&set.actual, &p_cu, &p_d2d, n0, cell, user))
                    .collect()
            })
            .collect();
        let report = rate_report(&set.actual, &filters, &p_cu, &p_d2d, n0);
        let total = report.cellular_sum_bits + report.d2d_sum_bits;
        assert!((report.sum_rate_bits - total).abs() <= 1e-9 * (1.0 + total.abs()));
        assert_eq!(report.per_link_sinr.len(), 8);
    }

    #[test]
    fn zero_error_surrogate_matches_nominal_rate_at_mmse_design() {
        // With mu = 0 the assembled objective at the MMSE design equals
        // sum ln MMSE over links, so -V/ln2 must reproduce the nominal
        // rate at the MMSE receive filters.
        let set = small_set(81, 2, 2, 2, 3, 0.0);
        let dims = *set.dims();
        let p_cu = vec![0.08, 0.12, 0.06, 0.1];
        let p_d2d = vec![0.03, 0.01, 0.05, 0.02];
        let n0 = 1e-3;

        let mut cell_terms = Vec::new();
        let mut filters = Vec::new();
        for cell in 0..dims.cells {
            let mut per_cell = 0.0;
            let mut ws = Vec::new();
            for user in 0..dims.cus_per_cell {
                let w = bs_mmse_filter(&set.estimated, &p_cu, &p_d2d, n0, cell, user);
                let mmse =
                    cellular_mse_at_filter(&set.estimated, &p_cu, &p_d2d, n0, &w, cell, user);
                per_cell += mmse.ln();
                ws.push(w);
            }
            cell_terms.push(per_cell);
            filters.push(ws);
        }
        let coeffs = worst_case_d2d_coeffs(&set.estimated, &set.radii);
        let mut mses = Vec::new();
        let mut aux = Vec::new();
        for s in 0..dims.total_d2d() {
            let f = d2d_mmse_equalizer(&coeffs, &p_cu, &p_d2d, n0, s);
            let mse = d2d_mse(f, &coeffs, &p_cu, &p_d2d, n0, s);
            aux.push(u_star(mse));
            mses.push(mse);
        }
        let v = assemble_objective(&cell_terms, &mses, &aux);
        let surrogate = surrogate_rate_bits(v);
        let nominal = rate_report(&set.estimated, &filters, &p_cu, &p_d2d, n0).sum_rate_bits;
        assert!(
            (surrogate - nominal).abs() <= 1e-6 * (1.0 + nominal.abs()),
            "surrogate {surrogate} vs nominal {nominal}"
        );
    }
}

