//! Closed-form worst-case machinery over norm-bounded CSI error balls:
//! extremal squared norms with their extremizers, worst-case D2D channel
//! coefficients, and the strict per-transmitter interference weights.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::network::{Channels, Dims, Radii};

/// An extremal squared norm over an error ball together with the
/// perturbation that attains it.
#[derive(Debug, Clone, PartialEq)]
pub struct BallExtremum {
    /// The extremal value of `||estimate + delta||^2`.
    pub value: f64,
    /// The attaining perturbation; always satisfies `||delta|| <= eps`.
    pub delta: DVector<Complex64>,
}

/// `min ||h + delta||^2` over `||delta|| <= eps`: value
/// `(max(||h|| - eps, 0))^2`, attained by shrinking `h` toward the origin.
pub fn worst_norm_min(estimate: &DVector<Complex64>, eps: f64) -> BallExtremum {
    assert!(eps >= 0.0, "negative radius");
    let norm = estimate.norm();
    let clipped = (norm - eps).max(0.0);
    let shrink = if norm > 0.0 { (eps / norm).min(1.0) } else { 0.0 };
    BallExtremum {
        value: clipped * clipped,
        delta: estimate.map(|z| -z * shrink),
    }
}

/// `max ||h + delta||^2` over `||delta|| <= eps`: value `(||h|| + eps)^2`,
/// attained by growing along `h`. For `h = 0` any boundary point works; the
/// phase-0 convention puts the whole radius on the first coordinate.
pub fn worst_norm_max(estimate: &DVector<Complex64>, eps: f64) -> BallExtremum {
    assert!(eps >= 0.0, "negative radius");
    let norm = estimate.norm();
    let grown = norm + eps;
    let delta = if norm > 0.0 {
        estimate.map(|z| z * (eps / norm))
    } else {
        let mut d = DVector::zeros(estimate.len().max(1));
        d[0] = Complex64::new(eps, 0.0);
        d
    };
    BallExtremum {
        value: grown * grown,
        delta,
    }
}

/// Strict interference weight for a D2D-Tx-to-BS link:
/// `(||estimate|| + eps)^2`, an upper bound on `||h||^2` over the ball.
pub fn interference_weight(estimate: &DVector<Complex64>, eps: f64) -> f64 {
    assert!(eps >= 0.0, "negative radius");
    let grown = estimate.norm() + eps;
    grown * grown
}

/// `interference_weight` for every (D2D-Tx, BS) pair: `rho[s][l]`.
pub fn interference_weights(est: &Channels, radii: &Radii) -> Vec<Vec<f64>> {
    (0..est.dims.total_d2d())
        .map(|s| {
            (0..est.dims.cells)
                .map(|l| interference_weight(&est.h_d2d_bs[s][l], radii.h_d2d_bs[s][l]))
                .collect()
        })
        .collect()
}

/// Worst-case scalar coefficients seen by the D2D receivers: the desired
/// link shrinks in magnitude (clamped at zero), every cross link grows,
/// both phase-preserving. The layout mirrors the nominal `g` maps so the
/// same SINR/MSE evaluators apply.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCaseD2dCoeffs {
    pub dims: Dims,
    /// `g_cu_rx[t][s]`: grown CU-to-Rx coefficients.
    pub g_cu_rx: Vec<Vec<Complex64>>,
    /// `g_d2d_rx[s1][s2]`: diagonal shrunk, off-diagonal grown.
    pub g_d2d_rx: Vec<Vec<Complex64>>,
}

fn shrink_coeff(estimate: Complex64, eps: f64) -> Complex64 {
    let mag = estimate.norm();
    if mag == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    estimate * (1.0 - (eps / mag).min(1.0))
}

fn grow_coeff(estimate: Complex64, eps: f64) -> Complex64 {
    let mag = estimate.norm();
    if mag == 0.0 {
        // Any phase attains the worst-case magnitude; use phase 0.
        return Complex64::new(eps, 0.0);
    }
    estimate * (1.0 + eps / mag)
}

/// Build the worst-case D2D coefficients from estimates and radii.
pub fn worst_case_d2d_coeffs(est: &Channels, radii: &Radii) -> WorstCaseD2dCoeffs {
    let dims = est.dims;
    let g_cu_rx = (0..dims.total_cus())
        .map(|t| {
            (0..dims.total_d2d())
                .map(|s| grow_coeff(est.g_cu_rx[t][s], radii.g_cu_rx[t][s]))
                .collect()
        })
        .collect();
    let g_d2d_rx = (0..dims.total_d2d())
        .map(|s1| {
            (0..dims.total_d2d())
                .map(|s2| {
                    if s1 == s2 {
                        shrink_coeff(est.g_d2d_rx[s1][s2], radii.g_d2d_rx[s1][s2])
                    } else {
                        grow_coeff(est.g_d2d_rx[s1][s2], radii.g_d2d_rx[s1][s2])
                    }
                })
                .collect()
        })
        .collect();
    WorstCaseD2dCoeffs {
        dims,
        g_cu_rx,
        g_d2d_rx,
    }
}
