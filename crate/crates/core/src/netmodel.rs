//! Physical scene construction: the AP ceiling grid, sensor placement with
//! wrap-around geometry, the three-slope path-loss model, log-normal
//! shadowing, and thermal noise.

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::Grid;
use rand::Rng;
use rand_distr::StandardNormal;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// AP and sensor positions in metres. APs sit on a uniform square grid on the
/// ceiling (cell centers); sensors are uniform i.i.d. in the hall.
#[derive(Debug, Clone)]
pub struct Topology {
    pub ap_positions: Vec<[f64; 3]>,
    pub sensor_positions: Vec<[f64; 3]>,
    pub side: f64,
}

/// Large-scale fading coefficients beta (linear power gain), L x K, fixed for
/// the whole experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingMap {
    pub beta: Grid,
    pub generated_seed: u64,
}

/// Places the AP grid and the sensors. Fails unless `aps` is a perfect square.
pub fn build_topology(cfg: &SystemConfig, rng: &mut impl Rng) -> Result<Topology> {
    let g = (cfg.aps as f64).sqrt().round() as usize;
    if g * g != cfg.aps {
        return Err(Error::Config(format!(
            "AP count {} is not a perfect square",
            cfg.aps
        )));
    }
    let cell = cfg.side / g as f64;
    let mut ap_positions = Vec::with_capacity(cfg.aps);
    for i in 0..g {
        for j in 0..g {
            ap_positions.push([
                (i as f64 + 0.5) * cell,
                (j as f64 + 0.5) * cell,
                cfg.h_ap,
            ]);
        }
    }
    let mut sensor_positions = Vec::with_capacity(cfg.sensors);
    for _ in 0..cfg.sensors {
        let x: f64 = rng.gen_range(0.0..cfg.side);
        let y: f64 = rng.gen_range(0.0..cfg.side);
        sensor_positions.push([x, y, cfg.h_s]);
    }
    Ok(Topology {
        ap_positions,
        sensor_positions,
        side: cfg.side,
    })
}

/// Horizontal wrap-around distance combined with the fixed height difference.
pub fn wrap_distance(p: [f64; 3], q: [f64; 3], side: f64) -> f64 {
    let mut dx = (p[0] - q[0]).abs() % side;
    if dx > side - dx {
        dx = side - dx;
    }
    let mut dy = (p[1] - q[1]).abs() % side;
    if dy > side - dy {
        dy = side - dy;
    }
    let dz = p[2] - q[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Frequency/height constant of the three-slope model, in dB.
pub fn reference_loss_db(cfg: &SystemConfig) -> f64 {
    let lf = cfg.carrier_mhz.log10();
    46.3 + 33.9 * lf - 13.82 * cfg.h_ap.log10() - (1.1 * lf - 0.7) * cfg.h_s
        + (1.56 * lf - 0.8)
}

/// Three-slope path loss in dB at distance `d` metres.
///
/// The reference constant is a COST-Hata expression whose distance slopes are
/// defined over kilometres, so metre inputs (including the `d0`/`d1`
/// breakpoints) are converted before taking logs.
pub fn path_loss_db(d: f64, cfg: &SystemConfig) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::Domain(format!("path loss needs d > 0, got {d}")));
    }
    let l0 = reference_loss_db(cfg);
    let dk = d / 1000.0;
    let d0k = cfg.d0 / 1000.0;
    let d1k = cfg.d1 / 1000.0;
    let pl = if dk > d1k {
        -l0 - 35.0 * dk.log10()
    } else if dk > d0k {
        -l0 - 15.0 * d1k.log10() - 20.0 * dk.log10()
    } else {
        -l0 - 15.0 * d1k.log10() - 20.0 * d0k.log10()
    };
    Ok(pl)
}

/// Draws the L x K fading map: beta = 10^((PL_dB + sigma_sh * z) / 10) with
/// real standard-normal shadowing z per link. Generated once per experiment.
pub fn draw_fading_map(
    topo: &Topology,
    cfg: &SystemConfig,
    rng: &mut impl Rng,
) -> Result<FadingMap> {
    let l = topo.ap_positions.len();
    let k = topo.sensor_positions.len();
    let mut beta = Grid::zeros(l, k);
    for li in 0..l {
        for ki in 0..k {
            let d = wrap_distance(topo.ap_positions[li], topo.sensor_positions[ki], topo.side);
            let pl = path_loss_db(d, cfg)?;
            let z: f64 = rng.sample(StandardNormal);
            beta.set(li, ki, 10f64.powf((pl + cfg.sigma_sh_db * z) / 10.0));
        }
    }
    Ok(FadingMap {
        beta,
        generated_seed: cfg.seed,
    })
}

/// Noise power sigma^2 = B * k_B * T0 * kappa with a 9 dB noise figure.
pub fn noise_power(cfg: &SystemConfig) -> Result<f64> {
    if !(cfg.bandwidth_hz > 0.0) {
        return Err(Error::Domain(format!(
            "noise power needs bandwidth > 0, got {}",
            cfg.bandwidth_hz
        )));
    }
    Ok(cfg.sigma2())
}

impl FadingMap {
    /// Writes `l,k,beta` rows with 17-significant-digit floats.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "l,k,beta")?;
        for l in 0..self.beta.rows() {
            for k in 0..self.beta.cols() {
                writeln!(out, "{},{},{}", l, k, crate::simctl::fmt_g17(self.beta.at(l, k)))?;
            }
        }
        Ok(())
    }

    /// Reads a CSV written by [`FadingMap::write_csv`].
    pub fn read_csv(path: &Path) -> Result<FadingMap> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        let (mut max_l, mut max_k) = (0usize, 0usize);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != "l,k,beta" {
                    return Err(Error::Config(format!("bad fading CSV header `{line}`")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let mut next_field = || -> Result<&str> {
                parts
                    .next()
                    .ok_or_else(|| Error::Config("short fading CSV row".into()))
            };
            let l: usize = next_field()?
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad l in `{line}`")))?;
            let k: usize = next_field()?
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad k in `{line}`")))?;
            let b: f64 = next_field()?
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad beta in `{line}`")))?;
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::Config(format!("beta must be positive finite in `{line}`")));
            }
            max_l = max_l.max(l + 1);
            max_k = max_k.max(k + 1);
            entries.push((l, k, b));
        }
        let mut beta = Grid::zeros(max_l, max_k);
        for (l, k, b) in entries {
            beta.set(l, k, b);
        }
        Ok(FadingMap { beta, generated_seed: 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamKind};
    use proptest::prelude::*;

    fn cfg() -> SystemConfig {
        SystemConfig::default()
    }

    #[test]
    fn reference_loss_matches_hand_evaluation() {
        // 46.3 + 33.9 log10(1900) - 13.82 log10(7) - (1.1 log10(1900) - 0.7) * 1.65
        //      + (1.56 log10(1900) - 0.8) = 145.28941
        let l0 = reference_loss_db(&cfg());
        assert!((l0 - 145.2894).abs() < 1e-3, "L0 = {l0}");
    }

    #[test]
    fn topology_grid_is_cell_centered() {
        let mut c = cfg();
        c.aps = 4;
        c.side = 50.0;
        let mut r = stream(c.seed, StreamKind::Placement, 0);
        let topo = build_topology(&c, &mut r).unwrap();
        let mut xs: Vec<f64> = topo.ap_positions.iter().map(|p| p[0]).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        assert_eq!(xs, vec![12.5, 37.5]);
        for p in &topo.sensor_positions {
            assert!(p[0] >= 0.0 && p[0] < 50.0 && p[1] >= 0.0 && p[1] < 50.0);
            assert_eq!(p[2], c.h_s);
        }
    }

    #[test]
    fn single_ap_sits_at_center() {
        let mut c = cfg();
        c.aps = 1;
        let mut r = stream(0, StreamKind::Placement, 0);
        let topo = build_topology(&c, &mut r).unwrap();
        assert_eq!(topo.ap_positions[0], [25.0, 25.0, c.h_ap]);
    }

    #[test]
    fn non_square_ap_count_is_config_error() {
        let mut c = cfg();
        c.aps = 3;
        let mut r = stream(0, StreamKind::Placement, 0);
        assert!(matches!(build_topology(&c, &mut r), Err(Error::Config(_))));
    }

    #[test]
    fn wrap_distance_examples() {
        let d = wrap_distance([1.0, 0.0, 0.0], [49.0, 0.0, 0.0], 50.0);
        assert!((d - 2.0).abs() < 1e-12);
        let d = wrap_distance([5.0, 5.0, 7.0], [5.0, 5.0, 1.65], 50.0);
        assert!((d - 5.35).abs() < 1e-12);
        let d = wrap_distance([0.0, 0.0, 0.0], [25.0, 25.0, 0.0], 50.0);
        assert!((d - 25.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn path_loss_flat_below_d0_and_continuous() {
        let c = cfg();
        let below_a = path_loss_db(5.0, &c).unwrap();
        let below_b = path_loss_db(9.99, &c).unwrap();
        assert!((below_a - below_b).abs() < 1e-12, "flat segment below d0");
        // branch agreement at both breakpoints
        for bp in [c.d0, c.d1] {
            let lo = path_loss_db(bp * (1.0 - 1e-12), &c).unwrap();
            let hi = path_loss_db(bp * (1.0 + 1e-12), &c).unwrap();
            assert!((lo - hi).abs() < 1e-6, "discontinuity {lo} vs {hi} at {bp}");
        }
        assert!(matches!(path_loss_db(0.0, &c), Err(Error::Domain(_))));
        assert!(matches!(path_loss_db(-1.0, &c), Err(Error::Domain(_))));
    }

    #[test]
    fn noise_power_value_and_linearity() {
        let c = cfg();
        let s2 = noise_power(&c).unwrap();
        assert!((s2 - 6.3624e-13).abs() / 6.3624e-13 < 1e-3, "sigma2 = {s2:e}");
        let mut c2 = c.clone();
        c2.bandwidth_hz *= 2.0;
        assert!((noise_power(&c2).unwrap() - 2.0 * s2).abs() < 1e-25);
        c2.bandwidth_hz = 0.0;
        assert!(matches!(noise_power(&c2), Err(Error::Domain(_))));
    }

    #[test]
    fn fading_map_deterministic_and_positive() {
        let c = cfg();
        let mut r = stream(c.seed, StreamKind::Placement, 0);
        let topo = build_topology(&c, &mut r).unwrap();
        let fm1 = draw_fading_map(&topo, &c, &mut stream(c.seed, StreamKind::Shadowing, 0)).unwrap();
        let fm2 = draw_fading_map(&topo, &c, &mut stream(c.seed, StreamKind::Shadowing, 0)).unwrap();
        assert_eq!(fm1, fm2);
        for l in 0..c.aps {
            for k in 0..c.sensors {
                let b = fm1.beta.at(l, k);
                assert!(b > 0.0 && b.is_finite());
            }
        }
    }

    #[test]
    fn zero_shadowing_reduces_to_path_loss() {
        let mut c = cfg();
        c.sigma_sh_db = 0.0;
        let mut r = stream(3, StreamKind::Placement, 0);
        let topo = build_topology(&c, &mut r).unwrap();
        let fm = draw_fading_map(&topo, &c, &mut stream(3, StreamKind::Shadowing, 0)).unwrap();
        let d = wrap_distance(topo.ap_positions[0], topo.sensor_positions[0], c.side);
        let expect = 10f64.powf(path_loss_db(d, &c).unwrap() / 10.0);
        assert!((fm.beta.at(0, 0) - expect).abs() / expect < 1e-12);
    }

    #[test]
    fn shadowing_is_zero_mean_gaussian_in_db() {
        // recover z from beta and check the sample mean over >= 1e4 draws
        let mut c = cfg();
        c.aps = 16;
        c.sensors = 700; // 11200 links
        let mut r = stream(11, StreamKind::Placement, 0);
        let topo = build_topology(&c, &mut r).unwrap();
        let fm = draw_fading_map(&topo, &c, &mut stream(11, StreamKind::Shadowing, 0)).unwrap();
        let mut zs = Vec::new();
        for l in 0..c.aps {
            for k in 0..c.sensors {
                let d = wrap_distance(topo.ap_positions[l], topo.sensor_positions[k], c.side);
                let pl = path_loss_db(d, &c).unwrap();
                zs.push((10.0 * fm.beta.at(l, k).log10() - pl) / c.sigma_sh_db);
            }
        }
        let n = zs.len() as f64;
        assert!(n >= 1e4);
        let mean = zs.iter().sum::<f64>() / n;
        let var = zs.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / n;
        let stderr = (var / n).sqrt();
        assert!(mean.abs() < 3.0 * stderr, "mean {mean} stderr {stderr}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn fading_csv_round_trip() {
        let c = cfg();
        let mut r = stream(5, StreamKind::Placement, 0);
        let topo = build_topology(&c, &mut r).unwrap();
        let fm = draw_fading_map(&topo, &c, &mut stream(5, StreamKind::Shadowing, 0)).unwrap();
        let dir = std::env::temp_dir().join("cfiot_fading_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("beta.csv");
        fm.write_csv(&path).unwrap();
        let rd = FadingMap::read_csv(&path).unwrap();
        assert_eq!(rd.beta, fm.beta);
    }

    proptest! {
        #[test]
        fn wrap_distance_symmetric_and_bounded(
            px in 0.0..50.0f64, py in 0.0..50.0f64,
            qx in 0.0..50.0f64, qy in 0.0..50.0f64,
        ) {
            let p = [px, py, 7.0];
            let q = [qx, qy, 1.65];
            let d1 = wrap_distance(p, q, 50.0);
            let d2 = wrap_distance(q, p, 50.0);
            prop_assert!((d1 - d2).abs() < 1e-12);
            let dh: f64 = 7.0 - 1.65;
            let bound = (50.0f64 * 50.0 / 2.0 + dh * dh).sqrt();
            prop_assert!(d1 <= bound + 1e-12);
            prop_assert!(d1 >= dh - 1e-12);
        }
    }
}
