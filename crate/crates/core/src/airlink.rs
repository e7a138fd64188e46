//! Finite-pilot ground truth: random pilot draws, whitened LMMSE channel
//! estimation, and Monte Carlo estimators for the harvested energy and the
//! uplink SINR coefficients. These are the oracles the closed forms in
//! [`crate::detequiv`] are validated against.
//!
//! Received pilots are whitened by the noise standard deviation, so the Gram
//! matrix is Z_l = I + E_p sum_j beta_lj psi_j psi_j^H with E_p = tau rho_p /
//! sigma^2, and the combining vector for sensor k is a_lk = sqrt(E_p) beta_lk
//! Z_l^-1 psi_k.

use crate::config::SystemConfig;
use crate::detequiv::DetEquivSet;
use crate::error::{Error, Result};
use crate::linalg::{dot_h, norm_sqr, CMat, Grid, C64};
use crate::netmodel::FadingMap;
use crate::SlotMode;
use rand::Rng;
use rand_distr::StandardNormal;

/// Draws one complex Gaussian CN(0, var).
#[inline]
pub fn complex_gaussian(rng: &mut impl Rng, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// One tau x K matrix of random pilots, columns i.i.d. CN(0, I/tau).
#[derive(Debug, Clone)]
pub struct PilotSet {
    pub tau: usize,
    pub k: usize,
    /// Column-major tau x K.
    psi: Vec<C64>,
}

impl PilotSet {
    /// Column for sensor `k`.
    pub fn col(&self, k: usize) -> &[C64] {
        &self.psi[k * self.tau..(k + 1) * self.tau]
    }

    /// Builds a pilot set from explicit columns (tests use this to force
    /// orthogonal or unit pilots).
    pub fn from_columns(tau: usize, cols: Vec<Vec<C64>>) -> Self {
        let k = cols.len();
        let mut psi = Vec::with_capacity(tau * k);
        for c in cols {
            assert_eq!(c.len(), tau);
            psi.extend(c);
        }
        PilotSet { tau, k, psi }
    }
}

/// Fresh i.i.d. pilot draw for all K sensors.
pub fn draw_pilots(cfg: &SystemConfig, rng: &mut impl Rng) -> PilotSet {
    let tau = cfg.tau;
    let k = cfg.sensors;
    let var = 1.0 / tau as f64;
    let psi = (0..tau * k).map(|_| complex_gaussian(rng, var)).collect();
    PilotSet { tau, k, psi }
}

/// Whitened LMMSE combining vectors and realized mean-square estimate values
/// for one pilot draw and one active set.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub active: Vec<usize>,
    /// a_lk for (l, position-in-active-set), each of length tau.
    a_cols: Vec<Vec<C64>>,
    /// L x K; zero for inactive sensors by convention.
    pub gamma_emp: Grid,
}

impl EstimationResult {
    pub fn a(&self, l: usize, ki: usize) -> &[C64] {
        &self.a_cols[l * self.active.len() + ki]
    }
}

fn check_active(fading: &FadingMap, active: &[usize]) -> Result<()> {
    if active.is_empty() {
        return Err(Error::Domain("active set must not be empty".into()));
    }
    let k = fading.beta.cols();
    let mut seen = vec![false; k];
    for &s in active {
        if s >= k {
            return Err(Error::Domain(format!("sensor index {s} out of range (K={k})")));
        }
        if seen[s] {
            return Err(Error::Domain(format!("duplicate sensor {s} in active set")));
        }
        seen[s] = true;
    }
    Ok(())
}

/// Forms Z_l per AP, factors it, and returns the combining vectors together
/// with the realized gamma values E_p beta^2 psi^H Z^-1 psi.
pub fn lmmse_estimate(
    pilots: &PilotSet,
    fading: &FadingMap,
    active: &[usize],
    cfg: &SystemConfig,
) -> Result<EstimationResult> {
    check_active(fading, active)?;
    if pilots.tau != cfg.tau || pilots.k < fading.beta.cols() {
        return Err(Error::Domain("pilot set does not match configuration".into()));
    }
    let l_count = fading.beta.rows();
    let m = active.len();
    let e_p = cfg.pilot_snr();
    let mut a_cols = Vec::with_capacity(l_count * m);
    let mut gamma_emp = Grid::zeros(l_count, fading.beta.cols());
    for l in 0..l_count {
        let mut z = CMat::identity(cfg.tau);
        for &j in active {
            z.add_rank1_herm(e_p * fading.beta.at(l, j), pilots.col(j));
        }
        let chol = z
            .cholesky()
            .map_err(|e| Error::Linalg(format!("Z_{l} factorization failed: {e}")))?;
        for &k in active {
            let beta = fading.beta.at(l, k);
            let zinv_psi = chol.solve(pilots.col(k));
            // gamma = E_p beta^2 psi^H Z^-1 psi (real by Hermitian symmetry)
            let quad = dot_h(pilots.col(k), &zinv_psi).re;
            gamma_emp.set(l, k, e_p * beta * beta * quad);
            let scale = e_p.sqrt() * beta;
            a_cols.push(zinv_psi.into_iter().map(|v| v * scale).collect());
        }
    }
    Ok(EstimationResult { active: active.to_vec(), a_cols, gamma_emp })
}

/// Channel estimates for one small-scale draw: ghat[(l, n, ki)] = a_lk^H y_ln
/// with whitened received pilots y.
fn estimate_channels(
    est: &EstimationResult,
    pilots: &PilotSet,
    g: &[C64],   // (l, n, ki) small-scale channels scaled by sqrt(beta)
    l_count: usize,
    n_ant: usize,
    e_p: f64,
    rng: &mut impl Rng,
) -> Vec<C64> {
    let tau = pilots.tau;
    let m = est.active.len();
    let sqrt_ep = e_p.sqrt();
    let mut ghat = vec![C64::new(0.0, 0.0); l_count * n_ant * m];
    let mut y = vec![C64::new(0.0, 0.0); tau];
    for l in 0..l_count {
        for n in 0..n_ant {
            for t in 0..tau {
                y[t] = complex_gaussian(rng, 1.0);
            }
            for (ji, &j) in est.active.iter().enumerate() {
                let gj = g[(l * n_ant + n) * m + ji] * sqrt_ep;
                let psi = pilots.col(j);
                for t in 0..tau {
                    y[t] += gj * psi[t];
                }
            }
            for ki in 0..m {
                ghat[(l * n_ant + n) * m + ki] = dot_h(est.a(l, ki), &y);
            }
        }
    }
    ghat
}

/// Per-sensor harvested-energy statistics from the Monte Carlo, plus the
/// realized closed-form lower bound for this pilot draw.
#[derive(Debug, Clone)]
pub struct EnergyStats {
    /// Mean over channel draws of the exact per-draw energy (expectation over
    /// data symbols and noise taken analytically).
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Lower-bound expression evaluated at the realized gamma values.
    pub lower_bound: Vec<f64>,
}

/// Monte Carlo harvested energy for one pilot draw. Samples small-scale
/// channels and pilot noise; the expectation over downlink data symbols and
/// receiver noise is computed in closed form per draw, which removes their
/// variance contribution.
#[allow(clippy::too_many_arguments)]
pub fn empirical_harvested_energy(
    est: &EstimationResult,
    pilots: &PilotSet,
    fading: &FadingMap,
    eta: &Grid,
    active: &[usize],
    cfg: &SystemConfig,
    mode: SlotMode,
    rng: &mut impl Rng,
    n_channel_draws: usize,
) -> Result<EnergyStats> {
    let m = active.len();
    let l_count = est.gamma_emp.rows();
    if mode == SlotMode::Transmit {
        return Ok(EnergyStats {
            mean: vec![0.0; m],
            std: vec![0.0; m],
            lower_bound: vec![0.0; m],
        });
    }
    // preconditions: eta >= 0 and per-AP sum eta * gamma <= 1
    for l in 0..l_count {
        let mut budget = 0.0;
        for &k in active {
            let e = eta.at(l, k);
            if e < 0.0 {
                return Err(Error::Contract(format!("eta[{l}][{k}] = {e} < 0")));
            }
            budget += e * est.gamma_emp.at(l, k);
        }
        if budget > 1.0 + 1e-9 {
            return Err(Error::Contract(format!(
                "AP {l} downlink budget {budget} exceeds 1"
            )));
        }
    }

    let alpha = cfg.alpha();
    let prefix = (1.0 - alpha) * cfg.slot_secs * cfg.zeta;
    let sigma2 = cfg.sigma2();
    let e_p = cfg.pilot_snr();
    let n_ant = cfg.antennas;

    // realized lower bound from gamma_emp
    let mut lower_bound = vec![0.0; m];
    for (ki, &k) in active.iter().enumerate() {
        let coherent: f64 = (0..l_count)
            .map(|l| eta.at(l, k).sqrt() * est.gamma_emp.at(l, k))
            .sum();
        let n = n_ant as f64;
        lower_bound[ki] = prefix * cfg.rho_d * n * n * coherent * coherent;
    }

    let mut sums = vec![0.0; m];
    let mut sqs = vec![0.0; m];
    let mut g = vec![C64::new(0.0, 0.0); l_count * n_ant * m];
    for _ in 0..n_channel_draws {
        for l in 0..l_count {
            for n in 0..n_ant {
                for (ki, &k) in active.iter().enumerate() {
                    let h = complex_gaussian(rng, 1.0);
                    g[(l * n_ant + n) * m + ki] = h * fading.beta.at(l, k).sqrt();
                }
            }
        }
        let ghat = estimate_channels(est, pilots, &g, l_count, n_ant, e_p, rng);
        for (ki, _) in active.iter().enumerate() {
            // sum over beams j of |sum_l sqrt(eta_lj) g_lk^T ghat_lj^*|^2
            let mut beams = 0.0;
            for (ji, &j) in active.iter().enumerate() {
                let mut s = C64::new(0.0, 0.0);
                for l in 0..l_count {
                    let w = eta.at(l, j).sqrt();
                    if w == 0.0 {
                        continue;
                    }
                    let mut inner = C64::new(0.0, 0.0);
                    for n in 0..n_ant {
                        inner += g[(l * n_ant + n) * m + ki]
                            * ghat[(l * n_ant + n) * m + ji].conj();
                    }
                    s += inner * w;
                }
                beams += s.norm_sqr();
            }
            let val = prefix * (cfg.rho_d * beams + sigma2);
            sums[ki] += val;
            sqs[ki] += val * val;
        }
    }
    let nf = n_channel_draws as f64;
    let mean: Vec<f64> = sums.iter().map(|s| s / nf).collect();
    let std: Vec<f64> = sqs
        .iter()
        .zip(&mean)
        .map(|(&sq, &mu)| ((sq / nf - mu * mu).max(0.0)).sqrt())
        .collect();
    Ok(EnergyStats { mean, std, lower_bound })
}

/// Finite-pilot SINR coefficients for one pilot draw and active set.
#[derive(Debug, Clone)]
pub struct SinrTerms {
    pub active: Vec<usize>,
    pub d: Vec<f64>,
    pub u: Vec<f64>,
    pub n: Vec<f64>,
    /// i[k][j]: interference of active position j onto active position k.
    pub i: Grid,
}

impl SinrTerms {
    fn position(&self, sensor: usize) -> Result<usize> {
        self.active
            .iter()
            .position(|&s| s == sensor)
            .ok_or_else(|| Error::Domain(format!("sensor {sensor} is not active")))
    }

    /// Interference coefficient by sensor id.
    pub fn interference(&self, k: usize, j: usize) -> Result<f64> {
        Ok(self.i.at(self.position(k)?, self.position(j)?))
    }
}

/// Computes the matched-filter SINR coefficients from the realized combining
/// vectors: desired, self-uncertainty, noise, and pairwise interference (the
/// interfering-pilot sum runs over the active set only).
pub fn empirical_sinr_terms(
    est: &EstimationResult,
    pilots: &PilotSet,
    fading: &FadingMap,
    active: &[usize],
    cfg: &SystemConfig,
) -> Result<SinrTerms> {
    check_active(fading, active)?;
    if est.active != active {
        return Err(Error::Domain("estimation result is for a different active set".into()));
    }
    let l_count = fading.beta.rows();
    let m = active.len();
    let e_p = cfg.pilot_snr();
    let sigma2 = cfg.sigma2();
    let n_ant = cfg.antennas as f64;

    // cross[(i, ki, l)] = psi_i^H a_l,ki
    let mut cross = vec![C64::new(0.0, 0.0); m * m * l_count];
    let mut a_norms = vec![0.0; m * l_count];
    for l in 0..l_count {
        for ki in 0..m {
            let a = est.a(l, ki);
            a_norms[ki * l_count + l] = norm_sqr(a);
            for (ii, &i) in active.iter().enumerate() {
                cross[(ii * m + ki) * l_count + l] = dot_h(pilots.col(i), a);
            }
        }
    }

    let mut d = vec![0.0; m];
    let mut u = vec![0.0; m];
    let mut n = vec![0.0; m];
    for (ki, &k) in active.iter().enumerate() {
        let gsum: f64 = (0..l_count).map(|l| est.gamma_emp.at(l, k)).sum();
        d[ki] = cfg.rho_u * n_ant * gsum * gsum;
        u[ki] = cfg.rho_u
            * (0..l_count)
                .map(|l| est.gamma_emp.at(l, k) * fading.beta.at(l, k))
                .sum::<f64>();
        n[ki] = sigma2 * gsum;
    }

    let mut im = Grid::zeros(m, m);
    for (ki, _) in active.iter().enumerate() {
        for (ji, &j) in active.iter().enumerate() {
            if ji == ki {
                continue;
            }
            let mut t1 = 0.0;
            let mut mid = C64::new(0.0, 0.0);
            let mut t3 = 0.0;
            for l in 0..l_count {
                let bj = fading.beta.at(l, j);
                t1 += bj * a_norms[ki * l_count + l];
                mid += cross[(ji * m + ki) * l_count + l] * bj;
                for (ii, &i) in active.iter().enumerate() {
                    let bi = fading.beta.at(l, i);
                    t3 += bj * bi * cross[(ii * m + ki) * l_count + l].norm_sqr();
                }
            }
            im.set(
                ki,
                ji,
                cfg.rho_u * t1 + cfg.rho_u * e_p * n_ant * mid.norm_sqr() + cfg.rho_u * e_p * t3,
            );
        }
    }
    Ok(SinrTerms { active: active.to_vec(), d, u, n, i: im })
}

/// Per-active-sensor rate from realized SINR coefficients; zero on harvest
/// slots and for silent sensors.
pub fn rate_from_terms(terms: &SinrTerms, xi: &[f64], alpha: f64, mode: SlotMode) -> Vec<f64> {
    let m = terms.active.len();
    debug_assert_eq!(xi.len(), m);
    if mode == SlotMode::Harvest {
        return vec![0.0; m];
    }
    (0..m)
        .map(|k| {
            if xi[k] <= 0.0 {
                return 0.0;
            }
            let mut den = terms.u[k] * xi[k] + terms.n[k];
            for j in 0..m {
                if j != k {
                    den += terms.i.at(k, j) * xi[j];
                }
            }
            (1.0 - alpha) * (1.0 + terms.d[k] * xi[k] / den).log2()
        })
        .collect()
}

/// Convenience wrapper: mean of gamma_emp over `trials` fresh pilot draws,
/// used by validation and the acceptance oracles.
pub fn mean_gamma_over_pilots(
    fading: &FadingMap,
    active: &[usize],
    cfg: &SystemConfig,
    seed_stream: impl Fn(u64) -> rand_chacha::ChaCha8Rng + Sync,
    trials: usize,
) -> Result<Grid> {
    use rayon::prelude::*;
    let l_count = fading.beta.rows();
    let grids: Vec<Grid> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed_stream(t);
            let pilots = draw_pilots(cfg, &mut rng);
            lmmse_estimate(&pilots, fading, active, cfg).map(|e| e.gamma_emp)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = Grid::zeros(l_count, fading.beta.cols());
    for g in &grids {
        for l in 0..l_count {
            for &k in active {
                acc.set(l, k, acc.at(l, k) + g.at(l, k));
            }
        }
    }
    let nf = trials as f64;
    for l in 0..l_count {
        for &k in active {
            acc.set(l, k, acc.at(l, k) / nf);
        }
    }
    Ok(acc)
}

/// Uniform downlink control eta = 1 / (K_a * gamma) for the given gamma grid
/// (realized or asymptotic), restricted to the active set.
pub fn uniform_eta(gamma: &Grid, active: &[usize], k_active: usize) -> Grid {
    let mut eta = Grid::zeros(gamma.rows(), gamma.cols());
    for l in 0..gamma.rows() {
        for &k in active {
            let g = gamma.at(l, k);
            if g > 0.0 {
                eta.set(l, k, 1.0 / (k_active as f64 * g));
            }
        }
    }
    eta
}

// The DetEquivSet-aligned gamma grid (L x K scatter) used when building
// uniform controls from closed forms.
pub fn gamma_bar_grid(det: &DetEquivSet, k_total: usize) -> Grid {
    let l_count = det.bar_gamma.rows();
    let mut g = Grid::zeros(l_count, k_total);
    for (ki, &k) in det.active.iter().enumerate() {
        for l in 0..l_count {
            g.set(l, k, det.bar_gamma.at(l, ki));
        }
    }
    g
}
