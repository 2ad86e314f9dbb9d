//! Scenario parameters and the flat key-value config file format.
//!
//! Power-like quantities live in watts inside [`SystemConfig`]; the file
//! format takes them in dBm (keys suffixed `_dBm`) and converts on load:
//! `x` dBm -> `10^((x-30)/10)` W.

use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Convert a dBm value to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Convert watts to dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// All scenario parameters for one network instance.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SystemConfig {
    /// Number of cells (file key `L`).
    pub cells: usize,
    /// Cellular users per cell (file key `M`).
    pub cus_per_cell: usize,
    /// D2D pairs per cell (file key `N`).
    pub d2d_per_cell: usize,
    /// Antennas per base station (file key `B`); must satisfy `B >= M`.
    pub bs_antennas: usize,
    /// Max CU transmit power in watts (file key `P_c_max_dBm`).
    pub cu_max_power_w: f64,
    /// Max D2D transmit power in watts (file key `P_d_max_dBm`).
    pub d2d_max_power_w: f64,
    /// Per-BS cap on worst-case aggregate D2D interference, watts (file key `a_dBm`).
    pub interference_cap_w: f64,
    /// Noise power in watts (file key `N0_dBm`).
    pub noise_power_w: f64,
    /// CSI error level `mu` in `[0, 1)`; radii are `mu * ||estimate||`.
    pub csi_error_level: f64,
    /// Max D2D transmitter-receiver separation in meters (file key `D_max`).
    pub d2d_max_distance_m: f64,
    /// User drop radius around each BS, meters (file key `cell_radius`).
    pub cell_radius_m: f64,
    /// Minimum user-to-BS distance, meters (file key `min_bs_distance`).
    pub min_bs_distance_m: f64,
    /// Pathloss exponent (file key `pathloss_exponent`).
    pub pathloss_exponent: f64,
    /// Log-normal shadowing standard deviation in dB (file key `shadowing_sigma_dB`).
    pub shadowing_sigma_db: f64,
    /// Pathloss intercept at 1 m, dB (file key `pl_ref_dB`).
    pub pl_ref_db: f64,
    /// Spacing of the linear BS layout, meters (file key `inter_site_distance`).
    pub inter_site_distance_m: f64,
    /// Master RNG seed; per-drop substreams derive from it (file key `seed`).
    pub seed: u64,
    /// Default number of Monte Carlo drops (file key `mc_drops`).
    pub mc_drops: usize,
}

impl SystemConfig {
    /// The desk-scale scenario used throughout the docs and tests:
    /// 2 cells, 2 CUs and 3 D2D pairs per cell, 4 BS antennas,
    /// P = 20 dBm, a = -80 dBm, N0 = -100 dBm, mu = 0.3, D_max = 100 m.
    pub fn desk() -> Self {
        SystemConfig {
            cells: 2,
            cus_per_cell: 2,
            d2d_per_cell: 3,
            bs_antennas: 4,
            cu_max_power_w: dbm_to_watts(20.0),
            d2d_max_power_w: dbm_to_watts(20.0),
            interference_cap_w: dbm_to_watts(-80.0),
            noise_power_w: dbm_to_watts(-100.0),
            csi_error_level: 0.3,
            d2d_max_distance_m: 100.0,
            cell_radius_m: 250.0,
            min_bs_distance_m: 20.0,
            pathloss_exponent: 3.7,
            shadowing_sigma_db: 8.0,
            pl_ref_db: 30.0,
            inter_site_distance_m: 500.0,
            seed: 1,
            mc_drops: 100,
        }
    }

    /// Total number of cellular users in the network.
    pub fn total_cus(&self) -> usize {
        self.cells * self.cus_per_cell
    }

    /// Total number of D2D pairs in the network.
    pub fn total_d2d(&self) -> usize {
        self.cells * self.d2d_per_cell
    }

    /// Check the structural invariants; returns a message on violation.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if self.cells < 1 {
            return fail("L must be >= 1");
        }
        if self.cus_per_cell < 1 {
            return fail("M must be >= 1");
        }
        if self.bs_antennas < self.cus_per_cell {
            return fail("B must be >= M");
        }
        if !(self.csi_error_level >= 0.0 && self.csi_error_level < 1.0) {
            return fail("mu must lie in [0, 1)");
        }
        if !(self.cu_max_power_w > 0.0 && self.d2d_max_power_w > 0.0) {
            return fail("transmit power caps must be positive");
        }
        if !(self.interference_cap_w > 0.0) {
            return fail("interference cap a must be positive");
        }
        if !(self.noise_power_w > 0.0) {
            return fail("noise power N0 must be positive");
        }
        if !(self.cell_radius_m > 0.0) {
            return fail("cell_radius must be positive");
        }
        if self.min_bs_distance_m < 0.0 || self.min_bs_distance_m >= self.cell_radius_m {
            return fail("min_bs_distance must lie in [0, cell_radius)");
        }
        if self.d2d_max_distance_m < 0.0 {
            return fail("D_max must be nonnegative");
        }
        if !(self.pathloss_exponent > 0.0) {
            return fail("pathloss_exponent must be positive");
        }
        if self.shadowing_sigma_db < 0.0 {
            return fail("shadowing_sigma_dB must be nonnegative");
        }
        if self.inter_site_distance_m < 0.0 {
            return fail("inter_site_distance must be nonnegative");
        }
        if self.mc_drops < 1 {
            return fail("mc_drops must be >= 1");
        }
        Ok(())
    }

    /// Parse a flat `key = value` scenario file. Unknown keys and malformed
    /// lines are errors (with line numbers); missing keys fall back to the
    /// desk defaults.
    pub fn from_str_config(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = SystemConfig::desk();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: lineno,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.set_key(key, value).map_err(|msg| ConfigError::Parse {
                line: lineno,
                msg,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a scenario file from disk.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_str_config(&text)
    }

    fn set_key(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn int(v: &str) -> Result<usize, String> {
            v.parse::<usize>()
                .map_err(|_| format!("`{v}` is not a nonnegative integer"))
        }
        fn real(v: &str) -> Result<f64, String> {
            v.parse::<f64>().map_err(|_| format!("`{v}` is not a number"))
        }
        match key {
            "L" => self.cells = int(value)?,
            "M" => self.cus_per_cell = int(value)?,
            "N" => self.d2d_per_cell = int(value)?,
            "B" => self.bs_antennas = int(value)?,
            "P_c_max_dBm" => self.cu_max_power_w = dbm_to_watts(real(value)?),
            "P_d_max_dBm" => self.d2d_max_power_w = dbm_to_watts(real(value)?),
            "a_dBm" => self.interference_cap_w = dbm_to_watts(real(value)?),
            "N0_dBm" => self.noise_power_w = dbm_to_watts(real(value)?),
            "mu" => self.csi_error_level = real(value)?,
            "D_max" => self.d2d_max_distance_m = real(value)?,
            "cell_radius" => self.cell_radius_m = real(value)?,
            "min_bs_distance" => self.min_bs_distance_m = real(value)?,
            "pathloss_exponent" => self.pathloss_exponent = real(value)?,
            "shadowing_sigma_dB" => self.shadowing_sigma_db = real(value)?,
            "pl_ref_dB" => self.pl_ref_db = real(value)?,
            "inter_site_distance" => self.inter_site_distance_m = real(value)?,
            "seed" => {
                self.seed = value
                    .parse::<u64>()
                    .map_err(|_| format!("`{value}` is not a valid seed"))?
            }
            "mc_drops" => self.mc_drops = int(value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }
}

impl fmt::Display for SystemConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "L={} M={} N={} B={} P_c={:.1}dBm P_d={:.1}dBm a={:.1}dBm N0={:.1}dBm mu={} D_max={}m",
            self.cells,
            self.cus_per_cell,
            self.d2d_per_cell,
            self.bs_antennas,
            watts_to_dbm(self.cu_max_power_w),
            watts_to_dbm(self.d2d_max_power_w),
            watts_to_dbm(self.interference_cap_w),
            watts_to_dbm(self.noise_power_w),
            self.csi_error_level,
            self.d2d_max_distance_m,
        )
    }
}

/// Errors from loading or validating a scenario file.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config: {0}")]
    Io(String),
}
