//! Topology drops, fading channels and the bounded CSI error model.
//!
//! Channel generation is estimate-first: the fading draw is taken as the
//! channel *estimate*, the error radius is `mu * ||estimate||`, and the
//! actual channel is the estimate plus a perturbation drawn uniformly in
//! the closed error ball. This keeps the radii explicit and makes `mu = 0`
//! reproduce the estimates exactly.
//!
//! All randomness flows through per-(drop, purpose) ChaCha substreams of
//! one master seed, so drops are independently reproducible and parameter
//! sweeps stay noise-paired: e.g. the CU-to-BS draws for drop `i` are
//! identical no matter how many D2D pairs the scenario has.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::config::SystemConfig;

/// Maximum attempts for any rejection-sampled placement.
const PLACEMENT_RETRY_CAP: usize = 10_000;

/// Named RNG substreams. One drop owns one stream per purpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    CuPositions = 0,
    D2dPositions = 1,
    CuBsFading = 2,
    D2dBsFading = 3,
    CuRxFading = 4,
    D2dRxFading = 5,
    CuBsError = 6,
    D2dBsError = 7,
    CuRxError = 8,
    D2dRxError = 9,
    Evaluation = 10,
}

/// Independent substream for `(master seed, drop, purpose)`.
pub fn substream(master_seed: u64, drop: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((drop << 4) | purpose as u64);
    rng
}

/// Problem dimensions, carried alongside channel containers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub cells: usize,
    pub cus_per_cell: usize,
    pub d2d_per_cell: usize,
    pub antennas: usize,
}

impl Dims {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        Dims {
            cells: cfg.cells,
            cus_per_cell: cfg.cus_per_cell,
            d2d_per_cell: cfg.d2d_per_cell,
            antennas: cfg.bs_antennas,
        }
    }

    pub fn total_cus(&self) -> usize {
        self.cells * self.cus_per_cell
    }

    pub fn total_d2d(&self) -> usize {
        self.cells * self.d2d_per_cell
    }

    /// Flat index of CU `m` in cell `l`.
    pub fn cu(&self, cell: usize, user: usize) -> usize {
        cell * self.cus_per_cell + user
    }

    /// Flat index of D2D pair `n` in cell `l`.
    pub fn d2d(&self, cell: usize, pair: usize) -> usize {
        cell * self.d2d_per_cell + pair
    }

    /// Cell that CU with flat index `t` belongs to.
    pub fn cu_cell(&self, t: usize) -> usize {
        t / self.cus_per_cell
    }

    /// Cell that D2D pair with flat index `s` belongs to.
    pub fn d2d_cell(&self, s: usize) -> usize {
        s / self.d2d_per_cell
    }
}

/// A 2-D position in meters.
pub type Position = (f64, f64);

fn distance(a: Position, b: Position) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// One random user placement.
#[derive(Debug, Clone, PartialEq)]
pub struct Drop {
    pub bs_positions: Vec<Position>,
    /// `cu_positions[t]` for flat CU index `t`.
    pub cu_positions: Vec<Position>,
    pub d2d_tx_positions: Vec<Position>,
    pub d2d_rx_positions: Vec<Position>,
}

/// One consistent set of channel coefficients (either the fading draw /
/// estimates, an actual realization, or a sampled perturbation of it).
#[derive(Debug, Clone, PartialEq)]
pub struct Channels {
    pub dims: Dims,
    /// `h_cu_bs[t][l]`: CU `t` to BS `l`, a B-vector.
    pub h_cu_bs: Vec<Vec<DVector<Complex64>>>,
    /// `h_d2d_bs[s][l]`: D2D-Tx `s` to BS `l`.
    pub h_d2d_bs: Vec<Vec<DVector<Complex64>>>,
    /// `g_cu_rx[t][s]`: CU `t` to D2D-Rx `s`.
    pub g_cu_rx: Vec<Vec<Complex64>>,
    /// `g_d2d_rx[s1][s2]`: D2D-Tx `s1` to D2D-Rx `s2`; the diagonal is the
    /// desired link.
    pub g_d2d_rx: Vec<Vec<Complex64>>,
}

/// Error-ball radii per link, mirroring the [`Channels`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Radii {
    pub h_cu_bs: Vec<Vec<f64>>,
    pub h_d2d_bs: Vec<Vec<f64>>,
    pub g_cu_rx: Vec<Vec<f64>>,
    pub g_d2d_rx: Vec<Vec<f64>>,
}

impl Radii {
    pub fn zeros(dims: &Dims) -> Self {
        Radii {
            h_cu_bs: vec![vec![0.0; dims.cells]; dims.total_cus()],
            h_d2d_bs: vec![vec![0.0; dims.cells]; dims.total_d2d()],
            g_cu_rx: vec![vec![0.0; dims.total_d2d()]; dims.total_cus()],
            g_d2d_rx: vec![vec![0.0; dims.total_d2d()]; dims.total_d2d()],
        }
    }

    /// True when every radius is exactly zero.
    pub fn all_zero(&self) -> bool {
        let flat = |v: &Vec<Vec<f64>>| v.iter().flatten().all(|&x| x == 0.0);
        flat(&self.h_cu_bs) && flat(&self.h_d2d_bs) && flat(&self.g_cu_rx) && flat(&self.g_d2d_rx)
    }
}

/// Estimates, actual channels and error radii for every link class.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub estimated: Channels,
    pub actual: Channels,
    pub radii: Radii,
}

impl ChannelSet {
    pub fn dims(&self) -> &Dims {
        &self.estimated.dims
    }

    /// The set a non-robust designer works with: estimates promoted to
    /// ground truth and all radii zero.
    pub fn with_zero_radii(&self) -> ChannelSet {
        ChannelSet {
            estimated: self.estimated.clone(),
            actual: self.estimated.clone(),
            radii: Radii::zeros(&self.estimated.dims),
        }
    }

    /// Order-stable FNV-1a hash of every coefficient bit pattern; used to
    /// assert the paired-seed contract across sweep variants.
    pub fn content_hash(&self) -> u64 {
        let mut h = Fnv::new();
        for ch in [&self.estimated, &self.actual] {
            for per_tx in &ch.h_cu_bs {
                for v in per_tx {
                    for z in v.iter() {
                        h.write_f64(z.re);
                        h.write_f64(z.im);
                    }
                }
            }
            for per_tx in &ch.h_d2d_bs {
                for v in per_tx {
                    for z in v.iter() {
                        h.write_f64(z.re);
                        h.write_f64(z.im);
                    }
                }
            }
            for row in &ch.g_cu_rx {
                for z in row {
                    h.write_f64(z.re);
                    h.write_f64(z.im);
                }
            }
            for row in &ch.g_d2d_rx {
                for z in row {
                    h.write_f64(z.re);
                    h.write_f64(z.im);
                }
            }
        }
        for block in [&self.radii.h_cu_bs, &self.radii.h_d2d_bs] {
            for row in block {
                for &x in row {
                    h.write_f64(x);
                }
            }
        }
        for block in [&self.radii.g_cu_rx, &self.radii.g_d2d_rx] {
            for row in block {
                for &x in row {
                    h.write_f64(x);
                }
            }
        }
        h.finish()
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf29ce484222325)
    }
    fn write_f64(&mut self, x: f64) {
        for b in x.to_bits().to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

/// Errors from topology generation.
#[derive(Debug, Error)]
pub enum DropError {
    #[error("placement rejection cap exceeded ({0}); geometry is infeasible for this config")]
    PlacementFailed(&'static str),
}

/// Draw the random user placement for one drop. BSs sit on a line with
/// `inter_site_distance` spacing; users are uniform in a disc of
/// `cell_radius` around their BS, rejection-sampled to keep at least
/// `min_bs_distance` away; each D2D receiver sits at a distance uniform in
/// `[0, D_max]` from its transmitter, in a uniform direction, re-drawn if
/// it lands inside the BS exclusion radius.
pub fn generate_drop(cfg: &SystemConfig, drop_index: u64) -> Result<Drop, DropError> {
    let dims = Dims::from_config(cfg);
    let bs_positions: Vec<Position> = (0..cfg.cells)
        .map(|l| (l as f64 * cfg.inter_site_distance_m, 0.0))
        .collect();

    let mut cu_rng = substream(cfg.seed, drop_index, Purpose::CuPositions);
    let mut cu_positions = Vec::with_capacity(dims.total_cus());
    for t in 0..dims.total_cus() {
        let bs = bs_positions[dims.cu_cell(t)];
        cu_positions.push(place_in_annulus(&mut cu_rng, bs, cfg)?);
    }

    let mut d2d_rng = substream(cfg.seed, drop_index, Purpose::D2dPositions);
    let mut d2d_tx_positions = Vec::with_capacity(dims.total_d2d());
    let mut d2d_rx_positions = Vec::with_capacity(dims.total_d2d());
    for s in 0..dims.total_d2d() {
        let bs = bs_positions[dims.d2d_cell(s)];
        let tx = place_in_annulus(&mut d2d_rng, bs, cfg)?;
        d2d_tx_positions.push(tx);
        let mut ok = None;
        for _ in 0..PLACEMENT_RETRY_CAP {
            let r = d2d_rng.random::<f64>() * cfg.d2d_max_distance_m;
            let theta = d2d_rng.random::<f64>() * std::f64::consts::TAU;
            let rx = (tx.0 + r * theta.cos(), tx.1 + r * theta.sin());
            if distance(rx, bs) >= cfg.min_bs_distance_m {
                ok = Some(rx);
                break;
            }
        }
        d2d_rx_positions.push(ok.ok_or(DropError::PlacementFailed("d2d receiver"))?);
    }

    Ok(Drop {
        bs_positions,
        cu_positions,
        d2d_tx_positions,
        d2d_rx_positions,
    })
}

fn place_in_annulus(
    rng: &mut ChaCha8Rng,
    bs: Position,
    cfg: &SystemConfig,
) -> Result<Position, DropError> {
    for _ in 0..PLACEMENT_RETRY_CAP {
        let r = cfg.cell_radius_m * rng.random::<f64>().sqrt();
        if r < cfg.min_bs_distance_m {
            continue;
        }
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        return Ok((bs.0 + r * theta.cos(), bs.1 + r * theta.sin()));
    }
    Err(DropError::PlacementFailed("user"))
}

/// Large-scale link gain in dB: `-(pl_ref + 10 * alpha * log10(d))` plus a
/// zero-mean Gaussian shadowing term. Distances below 1 m clamp to 1 m so
/// the gain cannot blow up at co-located nodes.
pub fn link_gain_db(distance_m: f64, cfg: &SystemConfig, rng: &mut ChaCha8Rng) -> f64 {
    let d = distance_m.max(1.0);
    let pl = cfg.pl_ref_db + 10.0 * cfg.pathloss_exponent * d.log10();
    let shadow: f64 = if cfg.shadowing_sigma_db > 0.0 {
        let n: f64 = rng.sample(StandardNormal);
        n * cfg.shadowing_sigma_db
    } else {
        0.0
    };
    -pl + shadow
}

fn small_scale(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn fading_vector(
    dist: f64,
    antennas: usize,
    cfg: &SystemConfig,
    rng: &mut ChaCha8Rng,
) -> DVector<Complex64> {
    let amp = 10f64.powf(link_gain_db(dist, cfg, rng) / 20.0);
    DVector::from_fn(antennas, |_, _| small_scale(rng) * amp)
}

fn fading_scalar(dist: f64, cfg: &SystemConfig, rng: &mut ChaCha8Rng) -> Complex64 {
    let amp = 10f64.powf(link_gain_db(dist, cfg, rng) / 20.0);
    small_scale(rng) * amp
}

/// Draw one consistent fading realization for every link of the drop:
/// entry = sqrt(linear large-scale gain) x unit-variance circularly
/// symmetric complex Gaussian per antenna.
pub fn generate_channels(drop: &Drop, cfg: &SystemConfig, drop_index: u64) -> Channels {
    let dims = Dims::from_config(cfg);
    let b = dims.antennas;

    let mut rng = substream(cfg.seed, drop_index, Purpose::CuBsFading);
    let h_cu_bs = (0..dims.total_cus())
        .map(|t| {
            (0..dims.cells)
                .map(|l| {
                    let d = distance(drop.cu_positions[t], drop.bs_positions[l]);
                    fading_vector(d, b, cfg, &mut rng)
                })
                .collect()
        })
        .collect();

    let mut rng = substream(cfg.seed, drop_index, Purpose::D2dBsFading);
    let h_d2d_bs = (0..dims.total_d2d())
        .map(|s| {
            (0..dims.cells)
                .map(|l| {
                    let d = distance(drop.d2d_tx_positions[s], drop.bs_positions[l]);
                    fading_vector(d, b, cfg, &mut rng)
                })
                .collect()
        })
        .collect();

    let mut rng = substream(cfg.seed, drop_index, Purpose::CuRxFading);
    let g_cu_rx = (0..dims.total_cus())
        .map(|t| {
            (0..dims.total_d2d())
                .map(|s| {
                    let d = distance(drop.cu_positions[t], drop.d2d_rx_positions[s]);
                    fading_scalar(d, cfg, &mut rng)
                })
                .collect()
        })
        .collect();

    let mut rng = substream(cfg.seed, drop_index, Purpose::D2dRxFading);
    let g_d2d_rx = (0..dims.total_d2d())
        .map(|s1| {
            (0..dims.total_d2d())
                .map(|s2| {
                    let d = distance(drop.d2d_tx_positions[s1], drop.d2d_rx_positions[s2]);
                    fading_scalar(d, cfg, &mut rng)
                })
                .collect()
        })
        .collect();

    Channels {
        dims,
        h_cu_bs,
        h_d2d_bs,
        g_cu_rx,
        g_d2d_rx,
    }
}

/// Perturbation uniform in the closed complex ball of radius `eps`:
/// direction uniform on the sphere, magnitude `eps * u^(1/dim)` with
/// `dim` the real dimension.
pub fn sample_vector_in_ball(
    n: usize,
    eps: f64,
    rng: &mut impl Rng,
) -> DVector<Complex64> {
    if eps == 0.0 {
        return DVector::zeros(n);
    }
    let mut dir = DVector::from_fn(n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im)
    });
    let norm = dir.norm();
    if norm == 0.0 {
        dir[0] = Complex64::new(1.0, 0.0);
    } else {
        dir /= Complex64::new(norm, 0.0);
    }
    let u: f64 = rng.random();
    dir * Complex64::new(eps * u.powf(1.0 / (2 * n) as f64), 0.0)
}

/// Scalar counterpart of [`sample_vector_in_ball`] on the complex disc.
pub fn sample_scalar_in_disc(eps: f64, rng: &mut impl Rng) -> Complex64 {
    if eps == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let theta = rng.random::<f64>() * std::f64::consts::TAU;
    let r = eps * rng.random::<f64>().sqrt();
    Complex64::from_polar(r, theta)
}

/// Complete a fading draw into a [`ChannelSet`]: the draw becomes the
/// estimate, radii are `mu * norm`, and the actual channel is the estimate
/// plus a perturbation uniform in the error ball. With `mu = 0` the actual
/// channels equal the estimates bit for bit.
pub fn apply_csi_error_model(
    estimates: Channels,
    mu: f64,
    cfg: &SystemConfig,
    drop_index: u64,
) -> ChannelSet {
    let dims = estimates.dims;
    if mu == 0.0 {
        return ChannelSet {
            actual: estimates.clone(),
            radii: Radii::zeros(&dims),
            estimated: estimates,
        };
    }

    let mut radii = Radii::zeros(&dims);
    let mut actual = estimates.clone();

    let mut rng = substream(cfg.seed, drop_index, Purpose::CuBsError);
    for t in 0..dims.total_cus() {
        for l in 0..dims.cells {
            let eps = mu * estimates.h_cu_bs[t][l].norm();
            radii.h_cu_bs[t][l] = eps;
            actual.h_cu_bs[t][l] += sample_vector_in_ball(dims.antennas, eps, &mut rng);
        }
    }
    let mut rng = substream(cfg.seed, drop_index, Purpose::D2dBsError);
    for s in 0..dims.total_d2d() {
        for l in 0..dims.cells {
            let eps = mu * estimates.h_d2d_bs[s][l].norm();
            radii.h_d2d_bs[s][l] = eps;
            actual.h_d2d_bs[s][l] += sample_vector_in_ball(dims.antennas, eps, &mut rng);
        }
    }
    let mut rng = substream(cfg.seed, drop_index, Purpose::CuRxError);
    for t in 0..dims.total_cus() {
        for s in 0..dims.total_d2d() {
            let eps = mu * estimates.g_cu_rx[t][s].norm();
            radii.g_cu_rx[t][s] = eps;
            actual.g_cu_rx[t][s] += sample_scalar_in_disc(eps, &mut rng);
        }
    }
    let mut rng = substream(cfg.seed, drop_index, Purpose::D2dRxError);
    for s1 in 0..dims.total_d2d() {
        for s2 in 0..dims.total_d2d() {
            let eps = mu * estimates.g_d2d_rx[s1][s2].norm();
            radii.g_d2d_rx[s1][s2] = eps;
            actual.g_d2d_rx[s1][s2] += sample_scalar_in_disc(eps, &mut rng);
        }
    }

    ChannelSet {
        estimated: estimates,
        actual,
        radii,
    }
}

/// Drop + fading + error model in one call.
pub fn generate_channel_set(cfg: &SystemConfig, drop_index: u64) -> Result<ChannelSet, DropError> {
    let drop = generate_drop(cfg, drop_index)?;
    let estimates = generate_channels(&drop, cfg, drop_index);
    Ok(apply_csi_error_model(
        estimates,
        cfg.csi_error_level,
        cfg,
        drop_index,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SystemConfig {
        let mut cfg = SystemConfig::desk();
        cfg.cells = 1;
        cfg.cus_per_cell = 2;
        cfg.d2d_per_cell = 2;
        cfg.bs_antennas = 4;
        cfg
    }

    #[test]
    fn single_cell_distances_respect_bounds() {
        let mut cfg = small_cfg();
        cfg.cell_radius_m = 250.0;
        cfg.min_bs_distance_m = 20.0;
        for drop_index in 0..20 {
            let drop = generate_drop(&cfg, drop_index).unwrap();
            for &p in drop.cu_positions.iter().chain(&drop.d2d_tx_positions) {
                let d = distance(p, drop.bs_positions[0]);
                assert!(d >= 20.0 && d <= 250.0, "distance {d} out of range");
            }
        }
    }

    #[test]
    fn zero_pair_separation_collapses_rx_onto_tx() {
        let mut cfg = small_cfg();
        cfg.d2d_max_distance_m = 0.0;
        let drop = generate_drop(&cfg, 3).unwrap();
        for (tx, rx) in drop.d2d_tx_positions.iter().zip(&drop.d2d_rx_positions) {
            assert_eq!(tx, rx);
        }
    }

    #[test]
    fn linear_layout_positions() {
        let mut cfg = small_cfg();
        cfg.cells = 2;
        cfg.inter_site_distance_m = 500.0;
        let drop = generate_drop(&cfg, 0).unwrap();
        assert_eq!(drop.bs_positions, vec![(0.0, 0.0), (500.0, 0.0)]);
    }

    #[test]
    fn infeasible_geometry_is_reported() {
        let mut cfg = small_cfg();
        cfg.cell_radius_m = 21.0;
        cfg.min_bs_distance_m = 20.9999999;
        // Annulus area ratio ~ 1e-8: the retry cap trips with overwhelming
        // probability, signalling the config instead of hanging.
        assert!(generate_drop(&cfg, 0).is_err());
    }

    #[test]
    fn link_gain_reference_values() {
        let mut cfg = small_cfg();
        cfg.shadowing_sigma_db = 0.0;
        cfg.pl_ref_db = 30.0;
        cfg.pathloss_exponent = 3.7;
        let mut rng = substream(1, 0, Purpose::CuBsFading);
        assert!((link_gain_db(1.0, &cfg, &mut rng) - -30.0).abs() < 1e-12);
        assert!((link_gain_db(10.0, &cfg, &mut rng) - -67.0).abs() < 1e-12);
        let g100 = link_gain_db(100.0, &cfg, &mut rng);
        let g10 = link_gain_db(10.0, &cfg, &mut rng);
        assert!((g100 - g10 + 37.0).abs() < 1e-12, "decade slope");
        // sub-meter distances clamp to 1 m
        assert!((link_gain_db(0.01, &cfg, &mut rng) - -30.0).abs() < 1e-12);
    }

    #[test]
    fn channel_shapes_match_antenna_count() {
        let cfg = small_cfg();
        let drop = generate_drop(&cfg, 0).unwrap();
        let ch = generate_channels(&drop, &cfg, 0);
        assert_eq!(ch.h_cu_bs.len(), 2);
        assert_eq!(ch.h_cu_bs[0][0].len(), 4);
        assert_eq!(ch.g_d2d_rx.len(), 2);
    }

    #[test]
    fn small_scale_energy_and_decorrelation() {
        // E||v||^2 = B for the unit-variance small-scale part, checked by
        // Monte Carlo over 10^4 draws; distinct links are uncorrelated.
        let mut rng = substream(99, 0, Purpose::CuBsFading);
        let b = 4;
        let n = 10_000;
        let mut energy = 0.0;
        let mut cross = Complex64::new(0.0, 0.0);
        let mut pow_a = 0.0;
        let mut pow_b = 0.0;
        for _ in 0..n {
            let va = DVector::from_fn(b, |_, _| small_scale(&mut rng));
            let vb = DVector::from_fn(b, |_, _| small_scale(&mut rng));
            energy += va.norm_squared();
            cross += va.dotc(&vb);
            pow_a += va.norm_squared();
            pow_b += vb.norm_squared();
        }
        let mean_energy = energy / n as f64;
        assert!(
            (mean_energy - b as f64).abs() < 0.05 * b as f64,
            "mean energy {mean_energy}"
        );
        let corr = cross.norm() / (pow_a * pow_b).sqrt();
        assert!(corr < 0.05, "sample correlation {corr}");
    }

    #[test]
    fn error_balls_hold_and_mu_zero_is_exact() {
        let mut cfg = small_cfg();
        cfg.csi_error_level = 0.5;
        let set = generate_channel_set(&cfg, 7).unwrap();
        let dims = *set.dims();
        for t in 0..dims.total_cus() {
            for l in 0..dims.cells {
                let diff = (&set.actual.h_cu_bs[t][l] - &set.estimated.h_cu_bs[t][l]).norm();
                let eps = set.radii.h_cu_bs[t][l];
                assert!(diff <= eps * (1.0 + 1e-12));
                assert!((eps - 0.5 * set.estimated.h_cu_bs[t][l].norm()).abs() <= 1e-15 * eps);
            }
        }
        for s1 in 0..dims.total_d2d() {
            for s2 in 0..dims.total_d2d() {
                let diff = (set.actual.g_d2d_rx[s1][s2] - set.estimated.g_d2d_rx[s1][s2]).norm();
                assert!(diff <= set.radii.g_d2d_rx[s1][s2] * (1.0 + 1e-12));
            }
        }

        cfg.csi_error_level = 0.0;
        let set0 = generate_channel_set(&cfg, 7).unwrap();
        assert_eq!(set0.estimated, set0.actual);
        assert!(set0.radii.all_zero());
    }

    #[test]
    fn same_seed_reproduces_bit_identical_output() {
        let cfg = small_cfg();
        let a = generate_channel_set(&cfg, 11).unwrap();
        let b = generate_channel_set(&cfg, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content_hash(), b.content_hash());
        let c = generate_channel_set(&cfg, 12).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn cu_draws_are_invariant_to_d2d_count() {
        // The paired-seed contract for N-axis sweeps: CU placements and
        // CU-to-BS fading do not depend on how many pairs are drawn.
        let mut cfg_a = small_cfg();
        cfg_a.d2d_per_cell = 1;
        let mut cfg_b = small_cfg();
        cfg_b.d2d_per_cell = 4;
        let da = generate_drop(&cfg_a, 5).unwrap();
        let db = generate_drop(&cfg_b, 5).unwrap();
        assert_eq!(da.cu_positions, db.cu_positions);
        let ca = generate_channels(&da, &cfg_a, 5);
        let cb = generate_channels(&db, &cfg_b, 5);
        assert_eq!(ca.h_cu_bs, cb.h_cu_bs);
    }
}
