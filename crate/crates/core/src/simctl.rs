//! Experiment driver: the long-term scheduling loop, the greedy benchmark,
//! Monte Carlo validation of the closed forms, run metrics, and all file
//! output (CSV tables, slot logs, run summaries).

use crate::airlink::{
    draw_pilots, empirical_harvested_energy, empirical_sinr_terms, gamma_bar_grid,
    lmmse_estimate, rate_from_terms, uniform_eta,
};
use crate::config::SystemConfig;
use crate::detequiv::{bar_rate, bar_rate_terms, r_max};
use crate::error::{Error, Result};
use crate::ledger::{
    exact_drift_and_bound, surrogate_objective, update_battery, update_queue_x, update_queue_y,
    NetworkState, SlotPolicy,
};
use crate::linalg::Grid;
use crate::netmodel::{build_topology, draw_fading_map, FadingMap, Topology};
use crate::rng::{stream, StreamKind};
use crate::solvers::{optimal_r, select_active, select_mode, solve_downlink, solve_uplink};
use crate::SlotMode;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// Formats a float with 17 significant digits, round-trip exact.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Fixed physical scene for one experiment: topology, fading map, and the
/// rate cap derived from them.
#[derive(Debug, Clone)]
pub struct Scene {
    pub topology: Topology,
    pub fading: FadingMap,
    pub r_max: f64,
}

/// Builds the scene deterministically from the config seed. Both schedulers
/// consume this same construction, so paired comparisons share fading maps.
pub fn build_scene(cfg: &SystemConfig) -> Result<Scene> {
    let mut placement = stream(cfg.seed, StreamKind::Placement, 0);
    let topology = build_topology(cfg, &mut placement)?;
    let mut shadowing = stream(cfg.seed, StreamKind::Shadowing, 0);
    let fading = draw_fading_map(&topology, cfg, &mut shadowing)?;
    let cap = r_max(&fading, cfg);
    Ok(Scene { topology, fading, r_max: cap })
}

/// Everything recorded about one simulated slot. Queue and battery vectors
/// are the post-update values (state at the start of slot t+1).
#[derive(Debug, Clone)]
pub struct SlotRecord {
    pub t: usize,
    pub mode: SlotMode,
    pub active: Vec<usize>,
    pub r: f64,
    pub rates: Vec<f64>,
    pub b: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub q_prime: f64,
    pub q_doubleprime: f64,
    pub surrogate: f64,
    pub phi: f64,
    pub phi_bar: f64,
    /// Downlink SCP iteration count and objective path for this slot's
    /// harvest candidate (empty for the greedy benchmark).
    pub scp_iterations: usize,
    pub scp_path: Vec<f64>,
    /// Uplink alternation count and reformulated-objective path for this
    /// slot's transmit candidate (empty for the greedy benchmark).
    pub fp_alternations: usize,
    pub fp_path: Vec<f64>,
    /// Wall-clock time spent deciding and applying this slot. Not serialized
    /// (slot logs must be bit-identical across runs of the same seed).
    pub wall_ms: f64,
}

/// Trajectories and counters summarizing one run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub seed: u64,
    pub t_max: usize,
    pub r_max: f64,
    pub harvest_slots: usize,
    pub transmit_slots: usize,
    /// min over sensors of the running time-average rate, per slot.
    pub min_avg_rate: Vec<f64>,
    /// Spread of per-sensor time-average rates around their grand mean.
    pub sigma_hat: Vec<f64>,
    /// Running time-averages of the summed backlogs.
    pub x_bar: Vec<f64>,
    pub y_bar: Vec<f64>,
    pub config_echo: String,
}

fn slot_err(t: usize, e: Error) -> Error {
    Error::Solver(format!("slot {t}: {e}"))
}

#[derive(Default)]
struct SolverTrace {
    scp_iterations: usize,
    scp_path: Vec<f64>,
    fp_alternations: usize,
    fp_path: Vec<f64>,
}

struct SlotOutcome {
    policy: SlotPolicy,
    energy: Vec<f64>,
    rates: Vec<f64>,
    q_prime: f64,
    q_doubleprime: f64,
    gamma_grid: Grid,
    trace: SolverTrace,
}

/// Applies a slot outcome to the state: battery transition, queue updates,
/// drift bookkeeping. Returns the record.
fn apply_slot(
    state: &mut NetworkState,
    out: SlotOutcome,
    cfg: &SystemConfig,
    cap: f64,
    started: Instant,
) -> Result<SlotRecord> {
    let t = state.t;
    out.policy
        .validate(state, &out.gamma_grid, cfg)
        .map_err(|e| slot_err(t, e))?;
    let b_next = update_battery(state, &out.policy, &out.energy, cfg).map_err(|e| slot_err(t, e))?;
    let u0 = cfg.queue_energy_unit();
    let mut next = NetworkState {
        b: b_next.clone(),
        x: vec![0.0; cfg.sensors],
        y: vec![0.0; cfg.sensors],
        t: t + 1,
    };
    for k in 0..cfg.sensors {
        next.x[k] = update_queue_x(state.x[k], b_next[k] / u0, cfg.b_0 / u0);
        next.y[k] = update_queue_y(state.y[k], out.policy.r, out.rates[k]);
    }
    let (phi, phi_bar) =
        exact_drift_and_bound(state, &next, out.policy.r, &out.rates, &b_next, cfg, cap);
    let surrogate = surrogate_objective(state, &b_next, &out.rates, out.policy.r, cfg);
    let record = SlotRecord {
        t,
        mode: out.policy.mode,
        active: out
            .policy
            .theta
            .iter()
            .enumerate()
            .filter_map(|(k, &on)| on.then_some(k))
            .collect(),
        r: out.policy.r,
        rates: out.rates,
        b: b_next,
        x: next.x.clone(),
        y: next.y.clone(),
        q_prime: out.q_prime,
        q_doubleprime: out.q_doubleprime,
        surrogate,
        phi,
        phi_bar,
        scp_iterations: out.trace.scp_iterations,
        scp_path: out.trace.scp_path,
        fp_alternations: out.trace.fp_alternations,
        fp_path: out.trace.fp_path,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    *state = next;
    Ok(record)
}

fn theta_of(active: &[usize], k_total: usize) -> Vec<bool> {
    let mut theta = vec![false; k_total];
    for &k in active {
        theta[k] = true;
    }
    theta
}

fn scatter_eta(det_eta: &Grid, active: &[usize], k_total: usize) -> Grid {
    let mut eta = Grid::zeros(det_eta.rows(), k_total);
    for (ki, &k) in active.iter().enumerate() {
        for l in 0..det_eta.rows() {
            eta.set(l, k, det_eta.at(l, ki));
        }
    }
    eta
}

fn scatter(values: &[f64], active: &[usize], k_total: usize) -> Vec<f64> {
    let mut full = vec![0.0; k_total];
    for (ki, &k) in active.iter().enumerate() {
        full[k] = values[ki];
    }
    full
}

/// One finite-pilot draw for slot-level accounting under
/// `finite_tau_accounting`: realized harvested energy on harvest slots and
/// realized rates on transmit slots. AP downlink budgets are renormalized to
/// the realized gamma so the per-AP power constraint keeps holding.
#[allow(clippy::too_many_arguments)]
fn finite_tau_outcome(
    scene: &Scene,
    cfg: &SystemConfig,
    t: usize,
    mode: SlotMode,
    active: &[usize],
    eta: &mut Grid,
    xi_active: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Grid)> {
    let mut prng = stream(cfg.seed, StreamKind::Pilots, t as u64);
    let pilots = draw_pilots(cfg, &mut prng);
    let est = lmmse_estimate(&pilots, &scene.fading, active, cfg)?;
    match mode {
        SlotMode::Harvest => {
            for l in 0..eta.rows() {
                let mut budget = 0.0;
                for &k in active {
                    budget += eta.at(l, k) * est.gamma_emp.at(l, k);
                }
                if budget > 1.0 {
                    for &k in active {
                        eta.set(l, k, eta.at(l, k) / budget);
                    }
                }
            }
            let mut chrng = stream(cfg.seed, StreamKind::SmallScale, t as u64);
            let stats = empirical_harvested_energy(
                &est,
                &pilots,
                &scene.fading,
                eta,
                active,
                cfg,
                mode,
                &mut chrng,
                1,
            )?;
            Ok((scatter(&stats.mean, active, cfg.sensors), vec![0.0; cfg.sensors], est.gamma_emp))
        }
        SlotMode::Transmit => {
            let terms = empirical_sinr_terms(&est, &pilots, &scene.fading, active, cfg)?;
            let rates = rate_from_terms(&terms, xi_active, cfg.alpha(), mode);
            Ok((vec![0.0; cfg.sensors], scatter(&rates, active, cfg.sensors), est.gamma_emp))
        }
    }
}

/// The long-term scheduling and power-control loop: per slot, pick the
/// auxiliary rate from the backlogs, solve both candidate subproblems
/// (downlink energy transfer over the top-X set, uplink transmission over the
/// top-Y set), adopt the better mode, and roll the state forward.
pub fn run_lyapunov(cfg: &SystemConfig) -> Result<(Vec<SlotRecord>, RunSummary)> {
    cfg.validate()?;
    let scene = build_scene(cfg)?;
    let mut state = NetworkState::initial(cfg);
    let mut records = Vec::with_capacity(cfg.t_max);
    for t in 0..cfg.t_max {
        let started = Instant::now();
        let r = optimal_r(&state.y, cfg.penalty_w, scene.r_max);

        let h_set = select_active(&state, SlotMode::Harvest, cfg.k_active);
        let det_h = bar_rate_terms(&scene.fading, &h_set, cfg).map_err(|e| slot_err(t, e))?;
        let dl = solve_downlink(&state, &det_h, &h_set, cfg).map_err(|e| slot_err(t, e))?;

        let t_set = select_active(&state, SlotMode::Transmit, cfg.k_active);
        let det_t = bar_rate_terms(&scene.fading, &t_set, cfg).map_err(|e| slot_err(t, e))?;
        let ul = solve_uplink(&state, &det_t, &t_set, cfg).map_err(|e| slot_err(t, e))?;

        let mode = select_mode(dl.q_prime, ul.q_doubleprime);
        let trace = SolverTrace {
            scp_iterations: dl.iterations,
            scp_path: dl.objective_path.clone(),
            fp_alternations: ul.alternations,
            fp_path: ul.surrogate_path.clone(),
        };
        let out = match mode {
            SlotMode::Harvest => {
                let mut eta = scatter_eta(&dl.eta, &h_set, cfg.sensors);
                let mut energy = scatter(&dl.energy, &h_set, cfg.sensors);
                let mut gamma = gamma_bar_grid(&det_h, cfg.sensors);
                let mut rates = vec![0.0; cfg.sensors];
                if cfg.finite_tau_accounting {
                    let (e, rr, g) =
                        finite_tau_outcome(&scene, cfg, t, mode, &h_set, &mut eta, &[])
                            .map_err(|e| slot_err(t, e))?;
                    energy = e;
                    rates = rr;
                    gamma = g;
                }
                SlotOutcome {
                    policy: SlotPolicy {
                        mode,
                        theta: theta_of(&h_set, cfg.sensors),
                        eta,
                        xi: vec![0.0; cfg.sensors],
                        r,
                    },
                    energy,
                    rates,
                    q_prime: dl.q_prime,
                    q_doubleprime: ul.q_doubleprime,
                    gamma_grid: gamma,
                    trace: SolverTrace {
                        scp_iterations: trace.scp_iterations,
                        scp_path: trace.scp_path.clone(),
                        fp_alternations: trace.fp_alternations,
                        fp_path: trace.fp_path.clone(),
                    },
                }
            }
            SlotMode::Transmit => {
                let mut rates_active = bar_rate(&det_t, &ul.xi, cfg.alpha(), mode);
                let mut gamma = gamma_bar_grid(&det_t, cfg.sensors);
                let mut eta = Grid::zeros(cfg.aps, cfg.sensors);
                if cfg.finite_tau_accounting {
                    let (_, rr, g) =
                        finite_tau_outcome(&scene, cfg, t, mode, &t_set, &mut eta, &ul.xi)
                            .map_err(|e| slot_err(t, e))?;
                    rates_active = t_set.iter().map(|&k| rr[k]).collect();
                    gamma = g;
                }
                SlotOutcome {
                    policy: SlotPolicy {
                        mode,
                        theta: theta_of(&t_set, cfg.sensors),
                        eta,
                        xi: scatter(&ul.xi, &t_set, cfg.sensors),
                        r,
                    },
                    energy: vec![0.0; cfg.sensors],
                    rates: scatter(&rates_active, &t_set, cfg.sensors),
                    q_prime: dl.q_prime,
                    q_doubleprime: ul.q_doubleprime,
                    gamma_grid: gamma,
                    trace,
                }
            }
        };
        records.push(apply_slot(&mut state, out, cfg, scene.r_max, started)?);
    }
    let summary = compute_metrics(&records, cfg, scene.r_max);
    Ok((records, summary))
}

/// Greedy benchmark: full-power transmission for the best-charged sensors
/// until some battery cannot cover one slot, then uniform-power harvesting
/// for the worst-charged until everyone is back above the threshold.
pub fn run_greedy(cfg: &SystemConfig) -> Result<(Vec<SlotRecord>, RunSummary)> {
    cfg.validate()?;
    let scene = build_scene(cfg)?;
    let mut state = NetworkState::initial(cfg);
    let mut records = Vec::with_capacity(cfg.t_max);
    let cons_unit = cfg.uplink_slot_energy();
    let mut machine = SlotMode::Transmit;
    for t in 0..cfg.t_max {
        let started = Instant::now();
        let r = optimal_r(&state.y, cfg.penalty_w, scene.r_max);
        match machine {
            SlotMode::Transmit => {
                if state.b.iter().any(|&b| b < cons_unit) {
                    machine = SlotMode::Harvest;
                }
            }
            SlotMode::Harvest => {
                if state.b.iter().all(|&b| b >= cfg.b_0) {
                    machine = SlotMode::Transmit;
                }
            }
        }
        let out = match machine {
            SlotMode::Transmit => {
                let mut order: Vec<usize> = (0..cfg.sensors).collect();
                order.sort_by(|&a, &b| state.b[b].total_cmp(&state.b[a]).then(a.cmp(&b)));
                let mut active: Vec<usize> = order.into_iter().take(cfg.k_active).collect();
                active.sort_unstable();
                let det = bar_rate_terms(&scene.fading, &active, cfg).map_err(|e| slot_err(t, e))?;
                let xi_active = vec![1.0; active.len()];
                let rates_active = bar_rate(&det, &xi_active, cfg.alpha(), SlotMode::Transmit);
                SlotOutcome {
                    policy: SlotPolicy {
                        mode: SlotMode::Transmit,
                        theta: theta_of(&active, cfg.sensors),
                        eta: Grid::zeros(cfg.aps, cfg.sensors),
                        xi: scatter(&xi_active, &active, cfg.sensors),
                        r,
                    },
                    energy: vec![0.0; cfg.sensors],
                    rates: scatter(&rates_active, &active, cfg.sensors),
                    q_prime: 0.0,
                    q_doubleprime: 0.0,
                    gamma_grid: gamma_bar_grid(&det, cfg.sensors),
                    trace: SolverTrace::default(),
                }
            }
            SlotMode::Harvest => {
                let mut order: Vec<usize> = (0..cfg.sensors).collect();
                order.sort_by(|&a, &b| state.b[a].total_cmp(&state.b[b]).then(a.cmp(&b)));
                let mut active: Vec<usize> = order.into_iter().take(cfg.k_active).collect();
                active.sort_unstable();
                let det = bar_rate_terms(&scene.fading, &active, cfg).map_err(|e| slot_err(t, e))?;
                // uniform power control: eta * gamma_bar = 1 / K_a
                let ka = cfg.k_active as f64;
                let mut eta_active = Grid::zeros(cfg.aps, active.len());
                for l in 0..cfg.aps {
                    for ki in 0..active.len() {
                        eta_active.set(l, ki, 1.0 / (ka * det.bar_gamma.at(l, ki)));
                    }
                }
                let energy_active: Vec<f64> = (0..active.len())
                    .map(|ki| {
                        let eta_col: Vec<f64> =
                            (0..cfg.aps).map(|l| eta_active.at(l, ki)).collect();
                        crate::detequiv::bar_energy(
                            &eta_col,
                            &det.gamma_col(ki),
                            cfg,
                            SlotMode::Harvest,
                            true,
                        )
                    })
                    .collect();
                SlotOutcome {
                    policy: SlotPolicy {
                        mode: SlotMode::Harvest,
                        theta: theta_of(&active, cfg.sensors),
                        eta: scatter_eta(&eta_active, &active, cfg.sensors),
                        xi: vec![0.0; cfg.sensors],
                        r,
                    },
                    energy: scatter(&energy_active, &active, cfg.sensors),
                    rates: vec![0.0; cfg.sensors],
                    q_prime: 0.0,
                    q_doubleprime: 0.0,
                    gamma_grid: gamma_bar_grid(&det, cfg.sensors),
                    trace: SolverTrace::default(),
                }
            }
        };
        records.push(apply_slot(&mut state, out, cfg, scene.r_max, started)?);
    }
    let summary = compute_metrics(&records, cfg, scene.r_max);
    Ok((records, summary))
}

/// Run metrics: min-over-sensors running time-average rate, the error-bar
/// trajectory, running backlog averages, and mode counts.
pub fn compute_metrics(records: &[SlotRecord], cfg: &SystemConfig, cap: f64) -> RunSummary {
    let k = cfg.sensors;
    let t_max = records.len();
    let mut cum_rate = vec![0.0; k];
    let mut min_avg_rate = Vec::with_capacity(t_max);
    let mut sigma_hat = Vec::with_capacity(t_max);
    let mut x_bar = Vec::with_capacity(t_max);
    let mut y_bar = Vec::with_capacity(t_max);
    let mut cum_x = 0.0;
    let mut cum_y = 0.0;
    let mut harvest = 0usize;
    for (t, rec) in records.iter().enumerate() {
        for kk in 0..k {
            cum_rate[kk] += rec.rates[kk];
        }
        let horizon = (t + 1) as f64;
        let mut min = f64::INFINITY;
        let mut grand = 0.0;
        for &c in &cum_rate {
            let avg = c / horizon;
            min = min.min(avg);
            grand += avg;
        }
        grand /= k as f64;
        let mut var = 0.0;
        for &c in &cum_rate {
            let d = c / horizon - grand;
            var += d * d;
        }
        min_avg_rate.push(min);
        sigma_hat.push((var / k as f64).sqrt());
        cum_x += rec.x.iter().sum::<f64>();
        cum_y += rec.y.iter().sum::<f64>();
        x_bar.push(cum_x / horizon);
        y_bar.push(cum_y / horizon);
        if rec.mode == SlotMode::Harvest {
            harvest += 1;
        }
    }
    RunSummary {
        seed: cfg.seed,
        t_max,
        r_max: cap,
        harvest_slots: harvest,
        transmit_slots: t_max - harvest,
        min_avg_rate,
        sigma_hat,
        x_bar,
        y_bar,
        config_echo: cfg.to_key_values(),
    }
}

/// One row of a validation table: sensor index, closed form, Monte Carlo mean
/// and standard deviation.
#[derive(Debug, Clone)]
pub struct ValidationRow {
    pub sensor: usize,
    pub closed_form: f64,
    pub mc_mean: f64,
    pub mc_std: f64,
}

/// Validation output: per-sensor comparison tables plus the per-link gamma
/// grids (used by the acceptance checks) and the active-set sweep.
#[derive(Debug, Clone)]
pub struct ValidationTables {
    pub active: Vec<usize>,
    pub n_trials: usize,
    pub gamma_rows: Vec<ValidationRow>,
    pub energy_rows: Vec<ValidationRow>,
    pub rate_rows: Vec<ValidationRow>,
    /// k_a -> (average harvested energy, average rate) over random schedules.
    pub ka_rows: Vec<(usize, f64, f64)>,
    /// Per-link closed form and Monte Carlo mean of gamma.
    pub gamma_bar: Grid,
    pub gamma_mc_mean: Grid,
    /// Monte Carlo mean of the full harvested energy (including interference
    /// and estimation-error pickup), for lower-bound checks.
    pub energy_full_mean: Vec<f64>,
}

struct TrialOutput {
    gamma: Grid,
    lb: Vec<f64>,
    full: Vec<f64>,
    rates: Vec<f64>,
}

/// Monte Carlo validation of the asymptotic expressions under a fixed random
/// schedule and uniform power control (downlink eta gamma = 1/K_a per
/// realization, uplink xi = 1).
pub fn validate_asymptotics(cfg: &SystemConfig, n_trials: usize) -> Result<ValidationTables> {
    if n_trials < 100 {
        return Err(Error::Domain(format!(
            "validation needs at least 100 trials, got {n_trials}"
        )));
    }
    cfg.validate()?;
    let scene = build_scene(cfg)?;
    let mut schedule_rng = stream(cfg.seed, StreamKind::Schedule, 0);
    let mut all: Vec<usize> = (0..cfg.sensors).collect();
    all.shuffle(&mut schedule_rng);
    let mut active: Vec<usize> = all.into_iter().take(cfg.k_active).collect();
    active.sort_unstable();

    let det = bar_rate_terms(&scene.fading, &active, cfg)?;
    let m = active.len();
    let l_count = cfg.aps;

    // closed forms under uniform control
    let gamma_bar = gamma_bar_grid(&det, cfg.sensors);
    let eta_bar = uniform_eta(&gamma_bar, &active, cfg.k_active);
    let energy_bar: Vec<f64> = (0..m)
        .map(|ki| {
            let eta_col: Vec<f64> = (0..l_count).map(|l| eta_bar.at(l, active[ki])).collect();
            crate::detequiv::bar_energy(&eta_col, &det.gamma_col(ki), cfg, SlotMode::Harvest, true)
        })
        .collect();
    let rate_bar = bar_rate(&det, &vec![1.0; m], cfg.alpha(), SlotMode::Transmit);

    let trials: Vec<Result<TrialOutput>> = (0..n_trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut prng = stream(cfg.seed, StreamKind::Pilots, t);
            let pilots = draw_pilots(cfg, &mut prng);
            let est = lmmse_estimate(&pilots, &scene.fading, &active, cfg)?;
            let eta = uniform_eta(&est.gamma_emp, &active, cfg.k_active);
            let mut chrng = stream(cfg.seed, StreamKind::SmallScale, t);
            let stats = empirical_harvested_energy(
                &est,
                &pilots,
                &scene.fading,
                &eta,
                &active,
                cfg,
                SlotMode::Harvest,
                &mut chrng,
                cfg.energy_channel_draws,
            )?;
            let terms = empirical_sinr_terms(&est, &pilots, &scene.fading, &active, cfg)?;
            let rates = rate_from_terms(&terms, &vec![1.0; m], cfg.alpha(), SlotMode::Transmit);
            Ok(TrialOutput { gamma: est.gamma_emp, lb: stats.lower_bound, full: stats.mean, rates })
        })
        .collect();

    let mut gamma_mean = Grid::zeros(l_count, cfg.sensors);
    let mut lb_sum = vec![0.0; m];
    let mut lb_sq = vec![0.0; m];
    let mut full_sum = vec![0.0; m];
    let mut rate_sum = vec![0.0; m];
    let mut rate_sq = vec![0.0; m];
    let mut gsum_sum = vec![0.0; m];
    let mut gsum_sq = vec![0.0; m];
    for trial in trials {
        let trial = trial?;
        for (ki, &k) in active.iter().enumerate() {
            let mut gsum = 0.0;
            for l in 0..l_count {
                let g = trial.gamma.at(l, k);
                gamma_mean.set(l, k, gamma_mean.at(l, k) + g);
                gsum += g;
            }
            gsum_sum[ki] += gsum;
            gsum_sq[ki] += gsum * gsum;
            lb_sum[ki] += trial.lb[ki];
            lb_sq[ki] += trial.lb[ki] * trial.lb[ki];
            full_sum[ki] += trial.full[ki];
            rate_sum[ki] += trial.rates[ki];
            rate_sq[ki] += trial.rates[ki] * trial.rates[ki];
        }
    }
    let nf = n_trials as f64;
    for l in 0..l_count {
        for &k in &active {
            gamma_mean.set(l, k, gamma_mean.at(l, k) / nf);
        }
    }
    let std_of = |sum: f64, sq: f64| ((sq / nf - (sum / nf) * (sum / nf)).max(0.0)).sqrt();

    let mut gamma_rows = Vec::with_capacity(m);
    let mut energy_rows = Vec::with_capacity(m);
    let mut rate_rows = Vec::with_capacity(m);
    for (ki, &k) in active.iter().enumerate() {
        gamma_rows.push(ValidationRow {
            sensor: k,
            closed_form: det.gamma_sum(ki),
            mc_mean: gsum_sum[ki] / nf,
            mc_std: std_of(gsum_sum[ki], gsum_sq[ki]),
        });
        energy_rows.push(ValidationRow {
            sensor: k,
            closed_form: energy_bar[ki],
            mc_mean: lb_sum[ki] / nf,
            mc_std: std_of(lb_sum[ki], lb_sq[ki]),
        });
        rate_rows.push(ValidationRow {
            sensor: k,
            closed_form: rate_bar[ki],
            mc_mean: rate_sum[ki] / nf,
            mc_std: std_of(rate_sum[ki], rate_sq[ki]),
        });
    }

    let ka_rows = ka_sweep(&scene, cfg)?;

    Ok(ValidationTables {
        active,
        n_trials,
        gamma_rows,
        energy_rows,
        rate_rows,
        ka_rows,
        gamma_bar,
        gamma_mc_mean: gamma_mean,
        energy_full_mean: full_sum.iter().map(|s| s / nf).collect(),
    })
}

/// Average harvested energy and rate (closed forms, uniform control) over
/// random schedules, for a sweep of active-set sizes.
fn ka_sweep(scene: &Scene, cfg: &SystemConfig) -> Result<Vec<(usize, f64, f64)>> {
    let candidates = [2usize, 4, 8, 12, 16, 24, 32];
    let cap = cfg.sensors.min(cfg.tau * 4);
    let sizes: Vec<usize> = candidates.iter().copied().filter(|&s| s <= cap).collect();
    let n_schedules = 100u64;
    let mut rows = Vec::with_capacity(sizes.len());
    for &ka in &sizes {
        let per: Vec<(f64, f64)> = (0..n_schedules)
            .into_par_iter()
            .map(|s| {
                let mut rng = stream(cfg.seed, StreamKind::Schedule, 1000 + s);
                let mut all: Vec<usize> = (0..cfg.sensors).collect();
                all.shuffle(&mut rng);
                let mut active: Vec<usize> = all.into_iter().take(ka).collect();
                active.sort_unstable();
                let det = bar_rate_terms(&scene.fading, &active, cfg)?;
                let m = active.len();
                let mut e_acc = 0.0;
                for ki in 0..m {
                    let eta_col: Vec<f64> = (0..cfg.aps)
                        .map(|l| 1.0 / (ka as f64 * det.bar_gamma.at(l, ki)))
                        .collect();
                    e_acc += crate::detequiv::bar_energy(
                        &eta_col,
                        &det.gamma_col(ki),
                        cfg,
                        SlotMode::Harvest,
                        true,
                    );
                }
                let rates = bar_rate(&det, &vec![1.0; m], cfg.alpha(), SlotMode::Transmit);
                Ok((e_acc / m as f64, rates.iter().sum::<f64>() / m as f64))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = per.len() as f64;
        let e = per.iter().map(|p| p.0).sum::<f64>() / n;
        let r = per.iter().map(|p| p.1).sum::<f64>() / n;
        rows.push((ka, e, r));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// File output
// ---------------------------------------------------------------------------

/// Writes the slot log. One row per slot; per-sensor vectors are expanded
/// into `rate_<k>`, `b_<k>`, `x_<k>`, `y_<k>` columns and the active set is
/// `|`-joined. Floats carry 17 significant digits; wall-clock time is
/// deliberately excluded so identical seeds produce identical bytes.
pub fn write_slots_csv(path: &Path, records: &[SlotRecord], k: usize) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = String::from("t,delta,r_aux,q_prime,q_doubleprime,surrogate,phi,phi_bar,active");
    for prefix in ["rate", "b", "x", "y"] {
        for kk in 0..k {
            header.push(',');
            header.push_str(&format!("{prefix}_{kk}"));
        }
    }
    writeln!(out, "{header}")?;
    for rec in records {
        let active = rec
            .active
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join("|");
        let mut line = format!(
            "{},{},{},{},{},{},{},{},{}",
            rec.t,
            match rec.mode {
                SlotMode::Harvest => 1,
                SlotMode::Transmit => 0,
            },
            fmt_g17(rec.r),
            fmt_g17(rec.q_prime),
            fmt_g17(rec.q_doubleprime),
            fmt_g17(rec.surrogate),
            fmt_g17(rec.phi),
            fmt_g17(rec.phi_bar),
            active
        );
        for vec in [&rec.rates, &rec.b, &rec.x, &rec.y] {
            for v in vec.iter() {
                line.push(',');
                line.push_str(&fmt_g17(*v));
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Line-delimited per-slot solver trace (iteration counts and objective
/// paths), written when the CLI verbosity flag asks for it.
pub fn write_solver_trace(path: &Path, records: &[SlotRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for rec in records {
        let join = |v: &[f64]| v.iter().map(|x| fmt_g17(*x)).collect::<Vec<_>>().join("|");
        writeln!(
            out,
            "t={} delta={} scp_iters={} scp_path={} fp_alts={} fp_path={}",
            rec.t,
            match rec.mode {
                SlotMode::Harvest => 1,
                SlotMode::Transmit => 0,
            },
            rec.scp_iterations,
            join(&rec.scp_path),
            rec.fp_alternations,
            join(&rec.fp_path)
        )?;
    }
    Ok(())
}

fn json_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n")
}

fn json_array(values: &[f64]) -> String {
    let mut s = String::from("[");
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&fmt_g17(*v));
    }
    s.push(']');
    s
}

/// Writes the run summary as a flat JSON object.
pub fn write_summary_json(path: &Path, summary: &RunSummary) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let final_of = |v: &[f64]| v.last().copied().unwrap_or(0.0);
    writeln!(out, "{{")?;
    writeln!(out, "  \"seed\": {},", summary.seed)?;
    writeln!(out, "  \"t_max\": {},", summary.t_max)?;
    writeln!(out, "  \"r_max\": {},", fmt_g17(summary.r_max))?;
    writeln!(out, "  \"harvest_slots\": {},", summary.harvest_slots)?;
    writeln!(out, "  \"transmit_slots\": {},", summary.transmit_slots)?;
    writeln!(out, "  \"min_avg_rate_final\": {},", fmt_g17(final_of(&summary.min_avg_rate)))?;
    writeln!(out, "  \"sigma_hat_final\": {},", fmt_g17(final_of(&summary.sigma_hat)))?;
    writeln!(out, "  \"x_bar_final\": {},", fmt_g17(final_of(&summary.x_bar)))?;
    writeln!(out, "  \"y_bar_final\": {},", fmt_g17(final_of(&summary.y_bar)))?;
    writeln!(out, "  \"min_avg_rate\": {},", json_array(&summary.min_avg_rate))?;
    writeln!(out, "  \"sigma_hat\": {},", json_array(&summary.sigma_hat))?;
    writeln!(out, "  \"x_bar\": {},", json_array(&summary.x_bar))?;
    writeln!(out, "  \"y_bar\": {},", json_array(&summary.y_bar))?;
    writeln!(out, "  \"config\": \"{}\"", json_escape(&summary.config_echo))?;
    writeln!(out, "}}")?;
    Ok(())
}

fn write_validation_table(path: &Path, rows: &[ValidationRow], n_trials: usize) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "k,closed_form,mc_mean,mc_std,n_trials")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.sensor,
            fmt_g17(row.closed_form),
            fmt_g17(row.mc_mean),
            fmt_g17(row.mc_std),
            n_trials
        )?;
    }
    Ok(())
}

/// Writes `validate_gamma.csv`, `validate_energy.csv`, `validate_rate.csv`
/// and `ka_sweep.csv` into `dir`.
pub fn write_validation_csvs(dir: &Path, tables: &ValidationTables) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_validation_table(&dir.join("validate_gamma.csv"), &tables.gamma_rows, tables.n_trials)?;
    write_validation_table(&dir.join("validate_energy.csv"), &tables.energy_rows, tables.n_trials)?;
    write_validation_table(&dir.join("validate_rate.csv"), &tables.rate_rows, tables.n_trials)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join("ka_sweep.csv"))?);
    writeln!(out, "k_a,avg_energy,avg_rate")?;
    for &(ka, e, r) in &tables.ka_rows {
        writeln!(out, "{},{},{}", ka, fmt_g17(e), fmt_g17(r))?;
    }
    Ok(())
}
