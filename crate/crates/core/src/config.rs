//! System configuration: physical constants, network sizes, battery and
//! solver parameters. Loads from a flat `key = value` text file; unknown keys
//! are rejected so typos cannot silently fall back to defaults.

use crate::error::{Error, Result};
use std::path::Path;

/// All physical and algorithmic parameters of one experiment.
///
/// Two built-in profiles exist: [`SystemConfig::default`] is the desk-scale
/// profile used by the test suite (minutes-scale runtimes), and
/// [`SystemConfig::table1`] is the full-scale profile from the reference
/// deployment. Units are SI throughout (W, J, s, m, Hz) except `carrier_mhz`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Number of APs (must be a perfect square for the ceiling grid).
    pub aps: usize,
    /// Antennas per AP.
    pub antennas: usize,
    /// Total sensor count.
    pub sensors: usize,
    /// Active-set size per slot.
    pub k_active: usize,
    /// Pilot length in symbols.
    pub tau: usize,
    /// Symbols per coherence slot.
    pub t_coherence: usize,
    /// Slot duration in seconds.
    pub slot_secs: f64,
    /// Bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Carrier frequency in MHz.
    pub carrier_mhz: f64,
    /// Pilot transmit power in W.
    pub rho_p: f64,
    /// Maximum uplink transmit power in W.
    pub rho_u: f64,
    /// Maximum downlink transmit power per antenna in W.
    pub rho_d: f64,
    /// Energy conversion efficiency, in (0, 1].
    pub zeta: f64,
    /// Battery capacity in J.
    pub b_max: f64,
    /// Battery threshold in J.
    pub b_0: f64,
    /// Drift-penalty weight.
    pub penalty_w: f64,
    /// Shadowing standard deviation in dB.
    pub sigma_sh_db: f64,
    /// Hall side length in m.
    pub side: f64,
    /// AP height in m.
    pub h_ap: f64,
    /// Sensor height in m.
    pub h_s: f64,
    /// Path-loss breakpoints in m.
    pub d0: f64,
    pub d1: f64,
    /// Number of simulated slots.
    pub t_max: usize,
    /// Root PRNG seed.
    pub seed: u64,
    /// Account rates/energy with one finite-pilot draw per slot instead of
    /// the closed forms.
    pub finite_tau_accounting: bool,
    /// Joules per unit in the virtual-queue and drift arithmetic. Backlogs
    /// are unit-dependent in drift-plus-penalty scheduling; the default
    /// (b_0 / 10) reproduces the reference deployment's milli-Joule-scale
    /// battery numbers at any battery scale, which is the scale the W
    /// weights are calibrated against. Zero means "use b_0 / 10".
    pub energy_unit: f64,

    // Solver knobs.
    /// Fixed-point relative sup-norm tolerance.
    pub fixed_point_tol: f64,
    /// Fixed-point iteration cap.
    pub fixed_point_max_iters: usize,
    /// SCP relative-improvement stop.
    pub scp_obj_tol: f64,
    /// SCP stops when the trust radius shrinks below this.
    pub scp_trust_min: f64,
    /// Initial trust radius as a fraction of max sqrt(gamma_bar).
    pub scp_trust_init_frac: f64,
    pub scp_trust_shrink: f64,
    pub scp_trust_expand: f64,
    /// Hard cap on SCP iterations.
    pub scp_max_iters: usize,
    /// Fractional-programming alternation relative stop.
    pub qt_obj_tol: f64,
    /// Fractional-programming alternation cap.
    pub qt_max_alts: usize,
    /// Points in the geometric budget grid of the uplink solver.
    pub chi_grid_points: usize,
    /// Channel draws per pilot draw in the harvested-energy Monte Carlo.
    pub energy_channel_draws: usize,
}

impl Default for SystemConfig {
    /// Desk-scale profile. Network sizes shrink the reference deployment
    /// (16 APs / 4 antennas vs. 100 / 10), which collapses the coherent
    /// energy-beamforming gain by more than two orders of magnitude, so the
    /// battery economy (threshold, capacity, uplink power) is rescaled to
    /// keep the same dimensionless ratios as the full-scale profile:
    /// one focused harvest slot refills a few thresholds, and one
    /// full-power uplink slot costs roughly 0.3 of a threshold.
    fn default() -> Self {
        SystemConfig {
            aps: 16,
            antennas: 4,
            sensors: 40,
            k_active: 8,
            tau: 24,
            t_coherence: 200,
            slot_secs: 0.2,
            bandwidth_hz: 20e6,
            carrier_mhz: 1900.0,
            rho_p: 2e-4,
            rho_u: 1.6e-5,
            rho_d: 20.0,
            zeta: 1.0,
            b_max: 1.5e-4,
            b_0: 5e-6,
            penalty_w: 10.0,
            sigma_sh_db: 8.0,
            side: 50.0,
            h_ap: 7.0,
            h_s: 1.65,
            d0: 10.0,
            d1: 50.0,
            t_max: 2000,
            seed: 1,
            finite_tau_accounting: false,
            energy_unit: 0.0,
            fixed_point_tol: 1e-10,
            fixed_point_max_iters: 500,
            scp_obj_tol: 1e-6,
            scp_trust_min: 1e-8,
            scp_trust_init_frac: 0.25,
            scp_trust_shrink: 0.5,
            scp_trust_expand: 1.5,
            scp_max_iters: 200,
            qt_obj_tol: 1e-6,
            qt_max_alts: 50,
            chi_grid_points: 16,
            energy_channel_draws: 4,
        }
    }
}

impl SystemConfig {
    /// Full-scale reference profile (Table-I sizes and powers).
    pub fn table1() -> Self {
        SystemConfig {
            aps: 100,
            antennas: 10,
            sensors: 200,
            k_active: 30,
            tau: 60,
            rho_u: 0.02,
            b_max: 0.3,
            b_0: 0.01,
            ..SystemConfig::default()
        }
    }

    /// Fraction of the slot spent on pilots, alpha = tau / T_c.
    pub fn alpha(&self) -> f64 {
        self.tau as f64 / self.t_coherence as f64
    }

    /// Receiver noise power sigma^2 in W (computed once here; see
    /// [`crate::netmodel::noise_power`] for the checked operation).
    pub fn sigma2(&self) -> f64 {
        const K_B: f64 = 1.381e-23;
        const T0: f64 = 290.0;
        let kappa = 10f64.powf(0.9); // 9 dB noise figure
        self.bandwidth_hz * K_B * T0 * kappa
    }

    /// Whitened pilot SNR, E_p = tau * rho_p / sigma^2.
    pub fn pilot_snr(&self) -> f64 {
        self.tau as f64 * self.rho_p / self.sigma2()
    }

    /// Energy one active sensor spends in a full-power uplink slot, J.
    pub fn uplink_slot_energy(&self) -> f64 {
        (1.0 - self.alpha()) * self.slot_secs * self.rho_u
    }

    /// Joules per virtual-queue unit (see `energy_unit`).
    pub fn queue_energy_unit(&self) -> f64 {
        if self.energy_unit > 0.0 {
            self.energy_unit
        } else {
            self.b_0 / 10.0
        }
    }

    /// Checks every structural invariant; call after construction or edits.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.tau == 0 || self.tau >= self.t_coherence {
            return fail(format!("need 0 < tau < t_c, got tau={} t_c={}", self.tau, self.t_coherence));
        }
        let ka_cap = self.sensors.min(self.tau * 4);
        if self.k_active == 0 || self.k_active > ka_cap {
            return fail(format!("need 0 < k_a <= min(k, 4*tau)={}, got {}", ka_cap, self.k_active));
        }
        if !(self.b_0 > 0.0 && self.b_0 < self.b_max) {
            return fail(format!("need 0 < b_0 < b_max, got b_0={} b_max={}", self.b_0, self.b_max));
        }
        for (name, v) in [("rho_p", self.rho_p), ("rho_u", self.rho_u), ("rho_d", self.rho_d)] {
            if !(v > 0.0) {
                return fail(format!("power {name} must be positive, got {v}"));
            }
        }
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return fail(format!("need 0 < zeta <= 1, got {}", self.zeta));
        }
        if !(self.bandwidth_hz > 0.0) {
            return fail(format!("bandwidth must be positive, got {}", self.bandwidth_hz));
        }
        if self.aps == 0 || self.antennas == 0 || self.sensors == 0 {
            return fail("network sizes must be positive".into());
        }
        if !(self.side > 0.0 && self.d0 > 0.0 && self.d1 > self.d0) {
            return fail("need side > 0 and 0 < d0 < d1".into());
        }
        if self.energy_unit < 0.0 {
            return fail(format!("energy_unit must be >= 0, got {}", self.energy_unit));
        }
        Ok(())
    }

    /// Parses a flat `key = value` file on top of the desk-scale defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SystemConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", ln + 1)))?;
            cfg.apply(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", ln + 1, e)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn f(v: &str) -> std::result::Result<f64, String> {
            v.parse::<f64>().map_err(|_| format!("bad float `{v}`"))
        }
        fn u(v: &str) -> std::result::Result<usize, String> {
            v.parse::<usize>().map_err(|_| format!("bad integer `{v}`"))
        }
        match key {
            "l" => self.aps = u(value)?,
            "n" => self.antennas = u(value)?,
            "k" => self.sensors = u(value)?,
            "k_a" => self.k_active = u(value)?,
            "tau" => self.tau = u(value)?,
            "t_c" => self.t_coherence = u(value)?,
            "delta" => self.slot_secs = f(value)?,
            "bandwidth" => self.bandwidth_hz = f(value)?,
            "f" => self.carrier_mhz = f(value)?,
            "rho_p" => self.rho_p = f(value)?,
            "rho_u" => self.rho_u = f(value)?,
            "rho_d" => self.rho_d = f(value)?,
            "zeta" => self.zeta = f(value)?,
            "b_max" => self.b_max = f(value)?,
            "b_0" => self.b_0 = f(value)?,
            "w" => self.penalty_w = f(value)?,
            "sigma_sh" => self.sigma_sh_db = f(value)?,
            "side" => self.side = f(value)?,
            "h_ap" => self.h_ap = f(value)?,
            "h_s" => self.h_s = f(value)?,
            "d0" => self.d0 = f(value)?,
            "d1" => self.d1 = f(value)?,
            "t_max" => self.t_max = u(value)?,
            "seed" => self.seed = value.parse::<u64>().map_err(|_| format!("bad seed `{value}`"))?,
            "finite_tau_accounting" => {
                self.finite_tau_accounting = match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => return Err(format!("bad bool `{value}`")),
                }
            }
            "energy_unit" => self.energy_unit = f(value)?,
            "fixed_point_tol" => self.fixed_point_tol = f(value)?,
            "fixed_point_max_iters" => self.fixed_point_max_iters = u(value)?,
            "scp_obj_tol" => self.scp_obj_tol = f(value)?,
            "scp_trust_min" => self.scp_trust_min = f(value)?,
            "scp_trust_init_frac" => self.scp_trust_init_frac = f(value)?,
            "scp_trust_shrink" => self.scp_trust_shrink = f(value)?,
            "scp_trust_expand" => self.scp_trust_expand = f(value)?,
            "scp_max_iters" => self.scp_max_iters = u(value)?,
            "qt_obj_tol" => self.qt_obj_tol = f(value)?,
            "qt_max_alts" => self.qt_max_alts = u(value)?,
            "chi_grid_points" => self.chi_grid_points = u(value)?,
            "energy_channel_draws" => self.energy_channel_draws = u(value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Applies one `key = value` override and re-validates.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        self.apply(key, value).map_err(Error::Config)?;
        self.validate()
    }

    /// Round-trippable `key = value` dump (also used as the summary echo).
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let mut push = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        push("l", self.aps.to_string());
        push("n", self.antennas.to_string());
        push("k", self.sensors.to_string());
        push("k_a", self.k_active.to_string());
        push("tau", self.tau.to_string());
        push("t_c", self.t_coherence.to_string());
        push("delta", format!("{}", self.slot_secs));
        push("bandwidth", format!("{}", self.bandwidth_hz));
        push("f", format!("{}", self.carrier_mhz));
        push("rho_p", format!("{}", self.rho_p));
        push("rho_u", format!("{}", self.rho_u));
        push("rho_d", format!("{}", self.rho_d));
        push("zeta", format!("{}", self.zeta));
        push("b_max", format!("{}", self.b_max));
        push("b_0", format!("{}", self.b_0));
        push("w", format!("{}", self.penalty_w));
        push("sigma_sh", format!("{}", self.sigma_sh_db));
        push("side", format!("{}", self.side));
        push("h_ap", format!("{}", self.h_ap));
        push("h_s", format!("{}", self.h_s));
        push("d0", format!("{}", self.d0));
        push("d1", format!("{}", self.d1));
        push("t_max", self.t_max.to_string());
        push("seed", self.seed.to_string());
        push("finite_tau_accounting", self.finite_tau_accounting.to_string());
        push("energy_unit", format!("{}", self.energy_unit));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        SystemConfig::default().validate().unwrap();
        SystemConfig::table1().validate().unwrap();
    }

    #[test]
    fn parse_overrides_and_comments() {
        let cfg = SystemConfig::parse("# comment\n l = 4 \n seed = 9 # trailing\n\n w = 2.5\n").unwrap();
        assert_eq!(cfg.aps, 4);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.penalty_w, 2.5);
        assert_eq!(cfg.sensors, SystemConfig::default().sensors);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = SystemConfig::parse("bogus = 3\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"));
    }

    #[test]
    fn invariants_enforced() {
        assert!(SystemConfig::parse("tau = 300\n").is_err()); // tau >= t_c
        assert!(SystemConfig::parse("k_a = 0\n").is_err());
        assert!(SystemConfig::parse("b_0 = 1.0\n").is_err()); // above b_max
        assert!(SystemConfig::parse("zeta = 1.5\n").is_err());
    }

    #[test]
    fn key_values_round_trip() {
        let mut cfg = SystemConfig::default();
        cfg.seed = 77;
        cfg.penalty_w = 42.0;
        let redone = SystemConfig::parse(&cfg.to_key_values()).unwrap();
        assert_eq!(redone, cfg);
    }

    #[test]
    fn derived_fields() {
        let cfg = SystemConfig::table1();
        assert!((cfg.alpha() - 0.3).abs() < 1e-15);
        // sigma^2 = B k_B T0 10^0.9 at 20 MHz
        assert!((cfg.sigma2() - 6.3624e-13).abs() / 6.3624e-13 < 1e-3);
        let ep = cfg.tau as f64 * cfg.rho_p / cfg.sigma2();
        assert!((cfg.pilot_snr() - ep).abs() / ep < 1e-15);
    }
}
