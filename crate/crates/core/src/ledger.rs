//! State evolution: batteries, the two virtual queues, the per-slot
//! drift-plus-penalty surrogate, and the exact drift with its linear upper
//! bound used for runtime verification.

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::Grid;
use crate::SlotMode;

/// Battery levels and virtual backlogs at the start of slot `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    /// Battery levels in J.
    pub b: Vec<f64>,
    /// Backlogs of the battery-threshold constraint (J units).
    pub x: Vec<f64>,
    /// Backlogs of the rate constraint (bits/s/Hz units).
    pub y: Vec<f64>,
    pub t: usize,
}

impl NetworkState {
    /// Initial state: every battery at the threshold, queues empty.
    pub fn initial(cfg: &SystemConfig) -> Self {
        NetworkState {
            b: vec![cfg.b_0; cfg.sensors],
            x: vec![0.0; cfg.sensors],
            y: vec![0.0; cfg.sensors],
            t: 0,
        }
    }

    /// Lyapunov function: sum of squared backlogs over two.
    pub fn lyapunov(&self) -> f64 {
        let sx: f64 = self.x.iter().map(|v| v * v).sum();
        let sy: f64 = self.y.iter().map(|v| v * v).sum();
        0.5 * (sx + sy)
    }
}

/// One slot's full decision.
#[derive(Debug, Clone)]
pub struct SlotPolicy {
    pub mode: SlotMode,
    /// Sensor activation flags; exactly K_a must be set.
    pub theta: Vec<bool>,
    /// Downlink coefficients, L x K (zero outside the active set).
    pub eta: Grid,
    /// Uplink coefficients in [0, 1], zero outside the active set.
    pub xi: Vec<f64>,
    /// Auxiliary rate in [0, r_max].
    pub r: f64,
}

impl SlotPolicy {
    /// Checks the structural invariants against the current state. The per-AP
    /// downlink budget is evaluated with the supplied gamma grid (closed-form
    /// gamma-bar during planning, realized gamma under finite-pilot
    /// accounting).
    pub fn validate(&self, state: &NetworkState, gamma: &Grid, cfg: &SystemConfig) -> Result<()> {
        let active_count = self.theta.iter().filter(|&&t| t).count();
        if active_count != cfg.k_active {
            return Err(Error::Contract(format!(
                "policy activates {active_count} sensors, expected {}",
                cfg.k_active
            )));
        }
        if self.mode == SlotMode::Harvest {
            for l in 0..self.eta.rows() {
                let mut budget = 0.0;
                for (k, &on) in self.theta.iter().enumerate() {
                    if on {
                        budget += self.eta.at(l, k) * gamma.at(l, k);
                    }
                }
                if budget > 1.0 + 1e-9 {
                    return Err(Error::Contract(format!(
                        "AP {l} downlink budget {budget} exceeds 1"
                    )));
                }
            }
        }
        let cons_unit = cfg.uplink_slot_energy();
        for (k, &on) in self.theta.iter().enumerate() {
            let xi = self.xi[k];
            if !(0.0..=1.0 + 1e-12).contains(&xi) {
                return Err(Error::Contract(format!("xi[{k}] = {xi} outside [0, 1]")));
            }
            if self.mode == SlotMode::Transmit && on {
                let cost = cons_unit * xi;
                if cost > state.b[k] + 1e-15 {
                    return Err(Error::Contract(format!(
                        "sensor {k} consumption {cost} exceeds battery {}",
                        state.b[k]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Battery transition: consume on transmit slots, credit harvested energy on
/// harvest slots, clamp at capacity. `energy` is the per-sensor harvested
/// energy for this slot (zero entries on transmit slots).
pub fn update_battery(
    state: &NetworkState,
    policy: &SlotPolicy,
    energy: &[f64],
    cfg: &SystemConfig,
) -> Result<Vec<f64>> {
    let cons_unit = cfg.uplink_slot_energy();
    let mut next = Vec::with_capacity(state.b.len());
    for k in 0..state.b.len() {
        let drain = match policy.mode {
            SlotMode::Transmit if policy.theta[k] => cons_unit * policy.xi[k],
            _ => 0.0,
        };
        let credit = match policy.mode {
            SlotMode::Harvest => energy[k],
            SlotMode::Transmit => 0.0,
        };
        if drain > state.b[k] + 1e-15 {
            return Err(Error::Contract(format!(
                "sensor {k}: consumption {drain} exceeds battery {}",
                state.b[k]
            )));
        }
        let b = (state.b[k] - drain + credit).min(cfg.b_max);
        next.push(b.max(0.0));
    }
    Ok(next)
}

/// X_k' = max(0, X_k + b_0 - b_k(t+1)).
pub fn update_queue_x(x: f64, b_next: f64, b_0: f64) -> f64 {
    (x + b_0 - b_next).max(0.0)
}

/// Y_k' = max(0, Y_k + r - R_k).
pub fn update_queue_y(y: f64, r: f64, rate: f64) -> f64 {
    (y + r - rate).max(0.0)
}

/// Per-slot surrogate the scheduler maximizes:
/// sum_k [X_k b_k' + Y_k R_k] + (W - sum_k Y_k) r, with batteries expressed
/// in queue units.
pub fn surrogate_objective(
    state: &NetworkState,
    b_next: &[f64],
    rates: &[f64],
    r: f64,
    cfg: &SystemConfig,
) -> f64 {
    let u0 = cfg.queue_energy_unit();
    let mut acc = 0.0;
    let mut y_sum = 0.0;
    for k in 0..state.b.len() {
        acc += state.x[k] * b_next[k] / u0 + state.y[k] * rates[k];
        y_sum += state.y[k];
    }
    acc + (cfg.penalty_w - y_sum) * r
}

/// Exact drift-plus-penalty and its linear upper bound for one transition.
///
/// Returns (Phi, Phi_bar) with Phi = L(t+1) - L(t) - W r and
/// Phi_bar = sum_k { X_k (b_0 - b_k') + C_0 + Y_k (r - R_k) + r_max^2/2 }
/// - W r, where battery terms are expressed in queue units and C_0 is
/// b_max^2/2 in those units. Every simulated slot must satisfy
/// Phi <= Phi_bar.
pub fn exact_drift_and_bound(
    state: &NetworkState,
    state_next: &NetworkState,
    r: f64,
    rates: &[f64],
    b_next: &[f64],
    cfg: &SystemConfig,
    r_max: f64,
) -> (f64, f64) {
    let w = cfg.penalty_w;
    let u0 = cfg.queue_energy_unit();
    let phi = state_next.lyapunov() - state.lyapunov() - w * r;
    let bmax_u = cfg.b_max / u0;
    let c0 = 0.5 * bmax_u * bmax_u;
    let cbar0 = 0.5 * r_max * r_max;
    let mut bound = -w * r;
    for k in 0..state.b.len() {
        bound +=
            state.x[k] * (cfg.b_0 - b_next[k]) / u0 + c0 + state.y[k] * (r - rates[k]) + cbar0;
    }
    (phi, bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg_with(b_0: f64, b_max: f64) -> SystemConfig {
        let mut c = SystemConfig::default();
        c.sensors = 2;
        c.k_active = 1;
        c.b_0 = b_0;
        c.b_max = b_max;
        c
    }

    fn harvest_policy(k: usize, cfg: &SystemConfig) -> SlotPolicy {
        let mut theta = vec![false; cfg.sensors];
        theta[k] = true;
        SlotPolicy {
            mode: SlotMode::Harvest,
            theta,
            eta: Grid::zeros(1, cfg.sensors),
            xi: vec![0.0; cfg.sensors],
            r: 0.0,
        }
    }

    #[test]
    fn battery_credit_and_clamp() {
        let cfg = cfg_with(0.05, 0.3);
        let mut state = NetworkState::initial(&cfg);
        state.b = vec![0.1, 0.29];
        let policy = harvest_policy(0, &cfg);
        let next = update_battery(&state, &policy, &[0.05, 0.05], &cfg).unwrap();
        assert!((next[0] - 0.15).abs() < 1e-15);
        assert!((next[1] - 0.3).abs() < 1e-15, "capacity clamp");
    }

    #[test]
    fn battery_full_depletion_boundary() {
        let mut cfg = cfg_with(0.05, 0.3);
        cfg.tau = 60;
        cfg.t_coherence = 200;
        cfg.slot_secs = 0.2;
        cfg.rho_u = 0.02;
        let mut state = NetworkState::initial(&cfg);
        let cons = cfg.uplink_slot_energy();
        state.b = vec![cons, 0.2];
        let mut theta = vec![false; 2];
        theta[0] = true;
        let policy = SlotPolicy {
            mode: SlotMode::Transmit,
            theta,
            eta: Grid::zeros(1, 2),
            xi: vec![1.0, 0.0],
            r: 0.0,
        };
        let next = update_battery(&state, &policy, &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(next[0], 0.0, "exact depletion");
        assert_eq!(next[1], 0.2);

        // spending more than the battery is a contract error
        state.b[0] = cons * 0.5;
        assert!(matches!(
            update_battery(&state, &policy, &[0.0, 0.0], &cfg),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn queue_updates_match_examples() {
        assert!((update_queue_x(5e-3, 0.008, 0.01) - 7e-3).abs() < 1e-18);
        assert_eq!(update_queue_x(0.0, 0.02, 0.01), 0.0);
        let x = 0.37;
        assert_eq!(update_queue_x(x, 0.01, 0.01), x);

        assert!((update_queue_y(1.0, 2.0, 0.5) - 2.5).abs() < 1e-15);
        assert_eq!(update_queue_y(0.2, 0.0, 1.0), 0.0);
        let y = 1.3;
        assert_eq!(update_queue_y(y, 0.7, 0.7), y);
    }

    #[test]
    fn surrogate_hand_instance() {
        let mut cfg = cfg_with(0.01, 0.3);
        cfg.penalty_w = 10.0;
        cfg.energy_unit = 1.0; // raw Joules for hand arithmetic
        let mut state = NetworkState::initial(&cfg);
        state.x = vec![1.0, 2.0];
        state.y = vec![3.0, 4.0];
        let v = surrogate_objective(&state, &[0.01, 0.02], &[0.5, 0.25], 1.0, &cfg);
        assert!((v - 5.55).abs() < 1e-12, "got {v}");
        // all queues zero -> W r
        let zero = NetworkState::initial(&cfg);
        let v = surrogate_objective(&zero, &[0.0, 0.0], &[0.0, 0.0], 2.0, &cfg);
        assert!((v - 20.0).abs() < 1e-12);
        // r = 0, Y = 0 -> sum X b'
        state.y = vec![0.0, 0.0];
        let v = surrogate_objective(&state, &[0.01, 0.02], &[0.0, 0.0], 0.0, &cfg);
        assert!((v - (0.01 + 0.04)).abs() < 1e-15);
    }

    #[test]
    fn drift_bound_zero_queue_slack() {
        let mut cfg = cfg_with(0.01, 0.3);
        cfg.energy_unit = 1.0;
        let state = NetworkState::initial(&cfg); // queues zero
        let b_next = vec![cfg.b_0; 2];
        let rates = vec![0.0, 0.0];
        let r = 0.0;
        let mut next = state.clone();
        for k in 0..2 {
            next.x[k] = update_queue_x(state.x[k], b_next[k], cfg.b_0);
            next.y[k] = update_queue_y(state.y[k], r, rates[k]);
        }
        next.t = 1;
        let r_max = 4.0;
        let (phi, bound) = exact_drift_and_bound(&state, &next, r, &rates, &b_next, &cfg, r_max);
        assert!(phi >= 0.0);
        let expect = 2.0 * (0.5 * cfg.b_max * cfg.b_max + 0.5 * r_max * r_max);
        assert!((bound - expect).abs() < 1e-12);
        assert!(phi <= bound);
    }

    #[test]
    fn policy_validation_catches_violations() {
        let mut cfg = cfg_with(0.01, 0.3);
        cfg.k_active = 1;
        let state = NetworkState::initial(&cfg);
        let gamma = Grid::from_fn(1, 2, |_, _| 1e-9);
        let mut pol = harvest_policy(0, &cfg);
        pol.validate(&state, &gamma, &cfg).unwrap();
        // wrong activation count
        pol.theta[1] = true;
        assert!(pol.validate(&state, &gamma, &cfg).is_err());
        pol.theta[1] = false;
        // AP budget violation
        pol.eta.set(0, 0, 2e9);
        assert!(pol.validate(&state, &gamma, &cfg).is_err());
    }

    proptest! {
        #[test]
        fn queues_never_go_negative(
            x in 0.0..10.0f64, b_next in 0.0..0.5f64, b0 in 1e-4..0.3f64,
            y in 0.0..50.0f64, r in 0.0..10.0f64, rate in 0.0..10.0f64,
        ) {
            prop_assert!(update_queue_x(x, b_next, b0) >= 0.0);
            prop_assert!(update_queue_y(y, r, rate) >= 0.0);
        }

        #[test]
        fn drift_bound_holds_for_random_transitions(
            x0 in 0.0..5.0f64, x1 in 0.0..5.0f64,
            y0 in 0.0..20.0f64, y1 in 0.0..20.0f64,
            b0 in 0.0..3e-4f64, b1 in 0.0..3e-4f64,
            rate0 in 0.0..3.0f64, rate1 in 0.0..3.0f64,
            fire in proptest::bool::ANY,
        ) {
            let cfg = cfg_with(1e-5, 3e-4);
            let u0 = cfg.queue_energy_unit();
            let r_max = 4.0;
            let r = if fire { r_max } else { 0.0 };
            let mut state = NetworkState::initial(&cfg);
            state.x = vec![x0, x1];
            state.y = vec![y0, y1];
            let b_next = vec![b0, b1];
            let rates = vec![rate0.min(r_max), rate1.min(r_max)];
            let mut next = state.clone();
            for k in 0..2 {
                next.x[k] = update_queue_x(state.x[k], b_next[k] / u0, cfg.b_0 / u0);
                next.y[k] = update_queue_y(state.y[k], r, rates[k]);
            }
            let (phi, bound) = exact_drift_and_bound(&state, &next, r, &rates, &b_next, &cfg, r_max);
            let scale = phi.abs().max(bound.abs()).max(1.0);
            prop_assert!(phi <= bound + 1e-12 * scale);
        }
    }
}
