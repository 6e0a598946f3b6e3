//! Receding-horizon economic MPC for zone airflow, optionally co-optimizing
//! battery dispatch against the grid tariff.
//!
//! The decision vector is held in normalized box coordinates `u ∈ [0,1]^d`
//! (one entry per zone per slot, plus one battery entry per slot in
//! integrated mode). The solver is projected gradient descent with central
//! finite-difference gradients and Armijo backtracking, run from several
//! starting points; every run is monotone in the objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::microgrid::{exchange_cost, Battery, MicrogridState, PvPanel};
use crate::thermal::{comfort_factor_unchecked, hvac_power_unchecked, integrate_zone, Building, BuildingState, HvacParams, ZoneParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcParams {
    pub w_energy: f64,
    pub w_comfort: f64,
    pub horizon: usize,
    pub slot_hours: f64,
    /// Iteration cap per projected-gradient run.
    pub iters: usize,
    /// Initial step length in normalized coordinates.
    pub step_size: f64,
    /// Admissible band for an externally supplied comfort weight.
    pub wc_min: f64,
    pub wc_max: f64,
    /// Comfort-factor clamp, °C.
    pub eps_comfort: f64,
    pub fd_step: f64,
    /// Relative objective decrease below which a run stops.
    pub tolerance: f64,
    /// Quadratic penalty on SOC leaving the safe band (integrated mode), per kWh².
    pub soc_band_penalty: f64,
}

impl Default for MpcParams {
    fn default() -> Self {
        Self {
            w_energy: 0.5,
            w_comfort: 0.5,
            horizon: 4,
            slot_hours: 0.5,
            iters: 60,
            step_size: 0.25,
            wc_min: 0.2,
            wc_max: 0.8,
            eps_comfort: 0.1,
            fd_step: 1e-6,
            tolerance: 1e-10,
            soc_band_penalty: 10.0,
        }
    }
}

impl MpcParams {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_energy", self.w_energy), ("w_comfort", self.w_comfort)] {
            if !(w > 0.0 && w < 1.0) {
                return Err(Error::input(format!("MPC {name} must lie in (0,1), got {w}")));
            }
        }
        if !(0.0 < self.wc_min && self.wc_min < self.wc_max && self.wc_max < 1.0) {
            return Err(Error::input("MPC comfort-weight band must satisfy 0 < wc_min < wc_max < 1"));
        }
        if self.horizon == 0 || self.iters == 0 {
            return Err(Error::input("MPC horizon and iteration cap must be >= 1"));
        }
        for (name, v) in [
            ("slot_hours", self.slot_hours),
            ("step_size", self.step_size),
            ("eps_comfort", self.eps_comfort),
            ("fd_step", self.fd_step),
        ] {
            if !(v > 0.0) {
                return Err(Error::input(format!("MPC {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn with_weights(&self, w_energy: f64, w_comfort: f64) -> Self {
        Self {
            w_energy,
            w_comfort,
            ..self.clone()
        }
    }
}

/// Storage side of the integrated (grid-aware) formulation.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageModel {
    pub battery: Battery,
    pub pv: PvPanel,
    pub p_const_kw: f64,
    pub sell_ratio: f64,
}

/// Exogenous inputs over the horizon.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Forecast {
    pub t_out: Vec<f64>,
    pub irradiance: Vec<f64>,
    pub buy_price: Vec<f64>,
}

impl Forecast {
    pub fn len(&self) -> usize {
        self.t_out.len().min(self.irradiance.len()).min(self.buy_price.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcPlan {
    /// `horizon × n_zones` airflow, kg/s.
    pub mdots: Vec<Vec<f64>>,
    /// Battery power per slot, kW; empty unless integrated.
    pub p_ess_plan: Vec<f64>,
    pub objective_value: f64,
}

impl MpcPlan {
    pub fn horizon(&self) -> usize {
        self.mdots.len()
    }

    /// Plan advanced by one slot, last row repeated.
    pub fn shifted(&self) -> MpcPlan {
        let mut mdots: Vec<Vec<f64>> = self.mdots.iter().skip(1).cloned().collect();
        if let Some(last) = self.mdots.last() {
            mdots.push(last.clone());
        }
        let mut p_ess_plan: Vec<f64> = self.p_ess_plan.iter().skip(1).copied().collect();
        if let Some(&last) = self.p_ess_plan.last() {
            p_ess_plan.push(last);
        }
        MpcPlan {
            mdots,
            p_ess_plan,
            objective_value: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub plan: MpcPlan,
    /// Iterations taken by the run that produced the returned plan.
    pub iterations: usize,
    /// Objective at the reference starting point (the warm start if one
    /// was given, otherwise the mid-box cold start).
    pub initial_objective: f64,
}

/// Predicted zone temperatures after each slot of the plan (`horizon × n`).
pub fn predict(building: &Building, initial_temps: &[f64], t_out: &[f64], mdots: &[Vec<f64>], slot_hours: f64) -> Vec<Vec<f64>> {
    let mut temps = initial_temps.to_vec();
    let mut out = Vec::with_capacity(mdots.len());
    for (row, &to) in mdots.iter().zip(t_out) {
        for ((t, z), &m) in temps.iter_mut().zip(&building.zones).zip(row) {
            *t = integrate_zone(z, &building.hvac, *t, to, m, slot_hours);
        }
        out.push(temps.clone());
    }
    out
}

/// Energy/comfort trade-off `w_E·E_H + w_c·Σ_i CR_i / CF_i`.
///
/// `E_H` is HVAC energy over the horizon (kWh). The comfort factor of zone
/// `i` runs over the current temperature and every predicted one, so it has
/// `horizon + 1` terms. Slot `k`'s chiller inlet temperature is taken from
/// the zone temperatures at the start of that slot.
pub fn objective(
    params: &MpcParams,
    hvac: &HvacParams,
    zones: &[ZoneParams],
    initial_temps: &[f64],
    predicted_trajs: &[Vec<f64>],
    mdots: &[Vec<f64>],
) -> Result<f64> {
    let n = zones.len();
    if initial_temps.len() != n {
        return Err(Error::input(format!("{} initial temperatures for {n} zones", initial_temps.len())));
    }
    if predicted_trajs.len() != mdots.len() || predicted_trajs.is_empty() {
        return Err(Error::input(format!(
            "trajectory has {} slots but plan has {}",
            predicted_trajs.len(),
            mdots.len()
        )));
    }
    if predicted_trajs.iter().chain(mdots).any(|row| row.len() != n) {
        return Err(Error::input(format!("every trajectory and airflow row must have {n} entries")));
    }
    Ok(objective_unchecked(params, hvac, zones, initial_temps, predicted_trajs, mdots))
}

fn objective_unchecked(
    params: &MpcParams,
    hvac: &HvacParams,
    zones: &[ZoneParams],
    initial_temps: &[f64],
    predicted_trajs: &[Vec<f64>],
    mdots: &[Vec<f64>],
) -> f64 {
    let (energy, discomfort) = objective_terms(params, hvac, zones, initial_temps, predicted_trajs, mdots);
    params.w_energy * energy + params.w_comfort * discomfort
}

/// `(E_H, Σ_i CR_i / CF_i)` for a predicted plan.
pub fn objective_terms(
    params: &MpcParams,
    hvac: &HvacParams,
    zones: &[ZoneParams],
    initial_temps: &[f64],
    predicted_trajs: &[Vec<f64>],
    mdots: &[Vec<f64>],
) -> (f64, f64) {
    let mut energy = 0.0;
    let mut start = initial_temps;
    for (row, traj) in mdots.iter().zip(predicted_trajs) {
        energy += hvac_power_unchecked(hvac, row, start) * params.slot_hours;
        start = traj;
    }
    let discomfort = zones
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let traj = std::iter::once(initial_temps[i]).chain(predicted_trajs.iter().map(|r| r[i]));
            z.criticality / comfort_factor_unchecked(traj, z.desired_temp_c, params.eps_comfort)
        })
        .sum::<f64>();
    (energy, discomfort)
}

/// Everything the solver needs for one horizon, with box decoding.
struct Problem<'a> {
    building: &'a Building,
    storage: Option<&'a StorageModel>,
    params: &'a MpcParams,
    temps0: &'a [f64],
    soc0: f64,
    t_out: &'a [f64],
    p_solar: Vec<f64>,
    buy: &'a [f64],
    horizon: usize,
    n: usize,
}

impl<'a> Problem<'a> {
    fn dim(&self) -> usize {
        self.horizon * self.n + if self.storage.is_some() { self.horizon } else { 0 }
    }

    fn decode(&self, u: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let h = &self.building.hvac;
        let span = h.mdot_max - h.mdot_min;
        let mdots = (0..self.horizon)
            .map(|k| (0..self.n).map(|i| h.mdot_min + u[k * self.n + i] * span).collect())
            .collect();
        let p_ess = match self.storage {
            Some(s) => {
                let (lo, hi) = (-s.battery.max_discharge_kw, s.battery.max_charge_kw);
                u[self.horizon * self.n..].iter().map(|&x| lo + x * (hi - lo)).collect()
            }
            None => Vec::new(),
        };
        (mdots, p_ess)
    }

    fn encode(&self, plan: &MpcPlan) -> Option<Vec<f64>> {
        if plan.mdots.len() != self.horizon || plan.mdots.iter().any(|r| r.len() != self.n) {
            return None;
        }
        let h = &self.building.hvac;
        let span = h.mdot_max - h.mdot_min;
        let mut u: Vec<f64> = plan
            .mdots
            .iter()
            .flat_map(|r| r.iter().map(|&m| ((m - h.mdot_min) / span).clamp(0.0, 1.0)))
            .collect();
        if let Some(s) = self.storage {
            if plan.p_ess_plan.len() != self.horizon {
                return None;
            }
            let (lo, hi) = (-s.battery.max_discharge_kw, s.battery.max_charge_kw);
            u.extend(plan.p_ess_plan.iter().map(|&p| ((p - lo) / (hi - lo)).clamp(0.0, 1.0)));
        }
        Some(u)
    }

    fn cold_start(&self, level: f64) -> Vec<f64> {
        let mut u = vec![level; self.horizon * self.n];
        if let Some(s) = self.storage {
            let idle = s.battery.max_discharge_kw / (s.battery.max_discharge_kw + s.battery.max_charge_kw);
            u.extend(std::iter::repeat_n(idle, self.horizon));
        }
        u
    }

    /// Start that leaves every zone uncooled except in slot `k`, where each
    /// zone gets the airflow that lands it on its setpoint at the end of the
    /// slot (clamped to the box). One such start per slot seeds each of the
    /// comfort troughs.
    fn setpoint_start(&self, k: usize) -> Vec<f64> {
        let mut u = self.cold_start(0.0);
        let h = &self.building.hvac;
        let dt = self.params.slot_hours;
        for (z, zone) in self.building.zones.iter().enumerate() {
            let mut t = self.temps0[z];
            for kk in 0..k {
                t = integrate_zone(zone, h, t, self.t_out[kk], h.mdot_min, dt);
            }
            let end = |x: f64| integrate_zone(zone, h, t, self.t_out[k], h.mdot_min + x * (h.mdot_max - h.mdot_min), dt);
            // End temperature falls monotonically with airflow.
            let (mut lo, mut hi) = (0.0, 1.0);
            let x = if end(0.0) <= zone.desired_temp_c {
                0.0
            } else if end(1.0) >= zone.desired_temp_c {
                1.0
            } else {
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    if end(mid) > zone.desired_temp_c {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            };
            u[k * self.n + z] = x;
        }
        u
    }

    fn eval(&self, u: &[f64]) -> f64 {
        let (mdots, p_ess) = self.decode(u);
        let traj = predict(self.building, self.temps0, self.t_out, &mdots, self.params.slot_hours);
        self.eval_plan(&mdots, &traj, &p_ess)
    }

    fn eval_plan(&self, mdots: &[Vec<f64>], traj: &[Vec<f64>], p_ess: &[f64]) -> f64 {
        let (e, d) = objective_terms(self.params, &self.building.hvac, &self.building.zones, self.temps0, traj, mdots);
        let mut j = self.params.w_energy * e + self.params.w_comfort * d;
        if let Some(s) = self.storage {
            j += self.storage_cost(s, mdots, traj, p_ess);
        }
        j
    }

    /// Grid cost over the horizon, soft SOC-band penalty, minus the value of
    /// energy left in the battery at the mean horizon price.
    fn storage_cost(&self, s: &StorageModel, mdots: &[Vec<f64>], traj: &[Vec<f64>], p_ess: &[f64]) -> f64 {
        let dt = self.params.slot_hours;
        let (lo, hi) = s.battery.safe_band();
        let mut soc = self.soc0;
        let mut cost = 0.0;
        let mut start = self.temps0;
        for k in 0..self.horizon {
            let p_h = hvac_power_unchecked(&self.building.hvac, &mdots[k], start);
            start = &traj[k];
            let p = s.battery.feasible_power(soc, p_ess[k], dt);
            let p_grid = p_h + s.p_const_kw - self.p_solar[k] + p;
            cost += exchange_cost(p_grid, self.buy[k], s.sell_ratio, dt);
            soc = s.battery.step(soc, p, dt).map(|b| b.soc).unwrap_or(soc);
            let viol = (lo - soc).max(0.0) + (soc - hi).max(0.0);
            cost += self.params.soc_band_penalty * viol * viol;
        }
        let mean_price = self.buy.iter().sum::<f64>() / self.horizon as f64;
        cost - mean_price * s.battery.eta_discharge * (soc - self.soc0)
    }

    /// Objective at `u` with coordinate `i` set to `v`, given `u`'s
    /// predicted trajectory. Zones are thermally independent, so moving
    /// one zone's airflow re-integrates only that zone from that slot on;
    /// the result is bit-identical to a full evaluation.
    fn eval_moved(&self, u: &[f64], traj: &[Vec<f64>], i: usize, v: f64) -> f64 {
        let mut x = u.to_vec();
        x[i] = v;
        let (m, pe) = self.decode(&x);
        if i >= self.horizon * self.n {
            return self.eval_plan(&m, traj, &pe);
        }
        let (k, z) = (i / self.n, i % self.n);
        let mut tr = traj.to_vec();
        let mut t = if k == 0 { self.temps0[z] } else { traj[k - 1][z] };
        for kk in k..self.horizon {
            t = integrate_zone(&self.building.zones[z], &self.building.hvac, t, self.t_out[kk], m[kk][z], self.params.slot_hours);
            tr[kk][z] = t;
        }
        self.eval_plan(&m, &tr, &pe)
    }

    fn trajectory(&self, u: &[f64]) -> Vec<Vec<f64>> {
        let (mdots, _) = self.decode(u);
        predict(self.building, self.temps0, self.t_out, &mdots, self.params.slot_hours)
    }

    /// Central differences.
    fn gradient(&self, u: &[f64], exec: Exec) -> Vec<f64> {
        let h = self.params.fd_step;
        let traj = self.trajectory(u);
        exec.map_range(u.len(), |i| {
            let up = (u[i] + h).min(1.0);
            let dn = (u[i] - h).max(0.0);
            (self.eval_moved(u, &traj, i, up) - self.eval_moved(u, &traj, i, dn)) / (up - dn)
        })
    }

    /// Monotone projected-gradient run; returns `(u, f, iterations)`.
    fn descend(&self, mut u: Vec<f64>, exec: Exec) -> (Vec<f64>, f64, usize) {
        let mut f = self.eval(&u);
        let mut alpha = self.params.step_size;
        let mut iterations = 0;
        for it in 0..self.params.iters {
            iterations = it + 1;
            let g = self.gradient(&u, exec);
            let mut accepted = None;
            for _ in 0..40 {
                let cand: Vec<f64> = u.iter().zip(&g).map(|(x, gi)| (x - alpha * gi).clamp(0.0, 1.0)).collect();
                let dir: f64 = cand.iter().zip(&u).zip(&g).map(|((c, x), gi)| gi * (c - x)).sum();
                if cand == u {
                    break;
                }
                let fc = self.eval(&cand);
                if fc <= f + 1e-4 * dir && fc <= f {
                    accepted = Some((cand, fc));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((cand, fc)) = accepted else { break };
            let gain = f - fc;
            u = cand;
            f = fc;
            alpha = (alpha * 2.0).min(4.0);
            if gain <= self.params.tolerance * f.abs().max(1.0) {
                break;
            }
        }
        (u, f, iterations)
    }

    /// Coordinate sweeps over `SCAN_LEVELS` evenly spaced box levels, to hop
    /// between basins the gradient runs did not start in.
    fn coordinate_scan(&self, mut u: Vec<f64>, mut f: f64) -> (Vec<f64>, f64) {
        for _ in 0..3 {
            let before = f;
            for i in 0..u.len() {
                let traj = self.trajectory(&u);
                let mut best = (u[i], f);
                for k in 0..SCAN_LEVELS {
                    let v = k as f64 / (SCAN_LEVELS - 1) as f64;
                    let fx = self.eval_moved(&u, &traj, i, v);
                    if fx < best.1 {
                        best = (v, fx);
                    }
                }
                (u[i], f) = best;
            }
            if f >= before {
                break;
            }
        }
        (u, f)
    }
}

/// Levels per coordinate in the post-descent scan.
const SCAN_LEVELS: usize = 21;

/// Solves one horizon.
///
/// Runs projected gradient descent from the warm start (if any), a ladder
/// of uniform cold starts and one setpoint-seeking start per slot, keeps the
/// best result and refines it with a coordinate scan. Deterministic for
/// identical inputs under either execution policy.
#[allow(clippy::too_many_arguments)]
pub fn solve(
    building: &Building,
    storage: Option<&StorageModel>,
    state: &BuildingState,
    micro: &MicrogridState,
    params: &MpcParams,
    forecast: &Forecast,
    warm: Option<&MpcPlan>,
    exec: Exec,
) -> Result<MpcSolution> {
    params.validate()?;
    let horizon = params.horizon;
    if forecast.len() < horizon {
        return Err(Error::input(format!(
            "forecast covers {} slots but the horizon is {horizon}",
            forecast.len()
        )));
    }
    if state.n_zones() != building.n_zones() {
        return Err(Error::input(format!(
            "state has {} zones, building has {}",
            state.n_zones(),
            building.n_zones()
        )));
    }
    let p_solar = match storage {
        Some(s) => forecast.irradiance[..horizon]
            .iter()
            .map(|&r| s.pv.power(r.max(0.0)))
            .collect::<Result<Vec<_>>>()?,
        None => vec![0.0; horizon],
    };
    let problem = Problem {
        building,
        storage,
        params,
        temps0: &state.zone_temps_c,
        soc0: micro.soc,
        t_out: &forecast.t_out[..horizon],
        p_solar,
        buy: &forecast.buy_price[..horizon],
        horizon,
        n: building.n_zones(),
    };

    let warm_u = warm.and_then(|p| problem.encode(p));
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = &warm_u {
        starts.push(w.clone());
    }
    for level in [0.5, 0.0, 1.0] {
        starts.push(problem.cold_start(level));
    }
    for k in 0..horizon {
        starts.push(problem.setpoint_start(k));
    }
    let initial_objective = problem.eval(&starts[0]);
    debug_assert_eq!(starts[0].len(), problem.dim());

    // Outer fan-out over starts; gradients inside each run stay sequential
    // so the work is split once.
    let inner = if exec.is_parallel() { Exec::Sequential } else { exec };
    let runs = exec.map(&starts, |u0| problem.descend(u0.clone(), inner));
    let (best_u, best_f, iterations) = runs
        .into_iter()
        .fold(None::<(Vec<f64>, f64, usize)>, |acc, run| match acc {
            Some(a) if a.1 <= run.1 => Some(a),
            _ => Some(run),
        })
        .expect("at least one start");
    let (best_u, best_f) = problem.coordinate_scan(best_u, best_f);

    let (mdots, p_ess_plan) = problem.decode(&best_u);
    Ok(MpcSolution {
        plan: MpcPlan {
            mdots,
            p_ess_plan,
            objective_value: best_f,
        },
        iterations,
        initial_objective,
    })
}

/// First-slot actuation handed to the plant.
#[derive(Debug, Clone, PartialEq)]
pub struct Actuation {
    pub mdots: Vec<f64>,
    pub p_ess: Option<f64>,
}

/// Stateful receding-horizon wrapper: solves, applies row 0, keeps the
/// shifted plan for the next warm start.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub params: MpcParams,
    pub exec: Exec,
    plan: Option<MpcPlan>,
    last_iterations: usize,
}

impl MpcController {
    pub fn new(params: MpcParams, exec: Exec) -> Self {
        Self {
            params,
            exec,
            plan: None,
            last_iterations: 0,
        }
    }

    pub fn reset(&mut self) {
        self.plan = None;
    }

    pub fn current_plan(&self) -> Option<&MpcPlan> {
        self.plan.as_ref()
    }

    pub fn last_iterations(&self) -> usize {
        self.last_iterations
    }

    pub fn receding_step(
        &mut self,
        building: &Building,
        storage: Option<&StorageModel>,
        state: &BuildingState,
        micro: &MicrogridState,
        forecast: &Forecast,
    ) -> Result<Actuation> {
        let warm = self.plan.as_ref().map(MpcPlan::shifted);
        let sol = solve(building, storage, state, micro, &self.params, forecast, warm.as_ref(), self.exec)?;
        self.last_iterations = sol.iterations;
        let act = Actuation {
            mdots: sol.plan.mdots[0].clone(),
            p_ess: sol.plan.p_ess_plan.first().copied(),
        };
        self.plan = Some(sol.plan);
        Ok(act)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_zone(desired: f64) -> Building {
        Building::new(
            vec![ZoneParams {
                desired_temp_c: desired,
                ..ZoneParams::default()
            }],
            HvacParams::default(),
        )
        .unwrap()
    }

    fn flat_forecast(h: usize, t_out: f64) -> Forecast {
        Forecast {
            t_out: vec![t_out; h],
            irradiance: vec![0.0; h],
            buy_price: vec![0.1; h],
        }
    }

    #[test]
    fn objective_degenerate_weights() {
        let b = one_zone(25.0);
        let mdots = vec![vec![0.05], vec![0.08]];
        let traj = predict(&b, &[27.0], &[30.0, 30.0], &mdots, 0.5);
        let p = MpcParams::default();
        let (e, d) = objective_terms(&p, &b.hvac, &b.zones, &[27.0], &traj, &mdots);
        let only_energy = objective(&p.with_weights(0.5, 0.0), &b.hvac, &b.zones, &[27.0], &traj, &mdots).unwrap();
        assert_eq!(only_energy, 0.5 * e);
        let only_comfort = objective(&p.with_weights(0.0, 0.5), &b.hvac, &b.zones, &[27.0], &traj, &mdots).unwrap();
        assert_eq!(only_comfort, 0.5 * d);
    }

    #[test]
    fn objective_hand_computed_one_slot() {
        // One zone, one slot, fixed chiller inlet at 25 °C, supply 15 °C.
        let hvac = HvacParams {
            k_fan: 0.5,
            cop: 3.0,
            cp_air: 1.005,
            supply_temp_c: 15.0,
            return_temp_c: 25.0,
            mdot_min: 0.0,
            mdot_max: 1.0,
            mixed_return: false,
        };
        let zones = [ZoneParams {
            criticality: 0.4,
            desired_temp_c: 24.0,
            ..ZoneParams::default()
        }];
        let params = MpcParams {
            w_energy: 0.3,
            w_comfort: 0.6,
            horizon: 1,
            slot_hours: 0.5,
            ..MpcParams::default()
        };
        // E_H = (0.5·0.2² + 1.005/3·0.2·10)·0.5 = (0.02 + 0.67)·0.5 = 0.345
        // CF = 1/|24−26| + 1/|24−25| = 1.5 ; comfort = 0.4/1.5
        let j = objective(&params, &hvac, &zones, &[26.0], &[vec![25.0]], &[vec![0.2]]).unwrap();
        let expected = 0.3 * 0.345 + 0.6 * (0.4 / 1.5);
        assert!((j - expected).abs() < 1e-9, "{j} vs {expected}");
    }

    #[test]
    fn objective_shape_mismatch() {
        let b = one_zone(25.0);
        let p = MpcParams::default();
        assert!(objective(&p, &b.hvac, &b.zones, &[25.0], &[vec![25.0]], &[vec![0.1], vec![0.1]]).is_err());
        assert!(objective(&p, &b.hvac, &b.zones, &[25.0, 24.0], &[vec![25.0]], &[vec![0.1]]).is_err());
    }

    #[test]
    fn objective_is_permutation_symmetric() {
        let zones = vec![
            ZoneParams {
                criticality: 0.3,
                desired_temp_c: 24.0,
                ..ZoneParams::default()
            },
            ZoneParams {
                criticality: 0.8,
                desired_temp_c: 26.0,
                thermal_capacitance: 0.6,
                ..ZoneParams::default()
            },
        ];
        let b = Building::new(zones.clone(), HvacParams::default()).unwrap();
        let mdots = vec![vec![0.02, 0.1], vec![0.07, 0.03]];
        let t0 = [27.0, 29.0];
        let traj = predict(&b, &t0, &[31.0, 32.0], &mdots, 0.5);
        let p = MpcParams::default();
        let j = objective(&p, &b.hvac, &b.zones, &t0, &traj, &mdots).unwrap();

        let rz: Vec<_> = zones.iter().rev().cloned().collect();
        let rev = |rows: &[Vec<f64>]| rows.iter().map(|r| r.iter().rev().copied().collect()).collect::<Vec<Vec<f64>>>();
        let jr = objective(&p, &b.hvac, &rz, &[29.0, 27.0], &rev(&traj), &rev(&mdots)).unwrap();
        assert!((j - jr).abs() < 1e-12);
    }

    #[test]
    fn at_setpoint_plan_uses_little_air() {
        let b = one_zone(25.0);
        let zone = b.zones[0];
        // Outdoor temperature at which the passive zone sits exactly at 25 °C.
        let t_out = 25.0 - zone.internal_gain_kw * zone.envelope_resistance;
        let state = BuildingState::uniform(1, 25.0);
        let sol = solve(
            &b,
            None,
            &state,
            &MicrogridState::default(),
            &MpcParams::default(),
            &flat_forecast(4, t_out),
            None,
            Exec::Sequential,
        )
        .unwrap();
        for row in &sol.plan.mdots {
            assert!(row[0] < 0.01 * b.hvac.mdot_max + 1e-9, "{row:?}");
        }
    }

    #[test]
    fn solve_respects_bounds_and_improves() {
        let zones: Vec<_> = (0..3)
            .map(|i| ZoneParams {
                desired_temp_c: 24.0 + i as f64,
                criticality: 0.2 + 0.3 * i as f64,
                ..ZoneParams::default()
            })
            .collect();
        let b = Building::new(zones, HvacParams::default()).unwrap();
        let storage = StorageModel {
            battery: Battery::default(),
            pv: PvPanel::default(),
            p_const_kw: 0.5,
            sell_ratio: 0.3,
        };
        let state = BuildingState {
            zone_temps_c: vec![29.0, 27.0, 31.0],
        };
        let micro = MicrogridState {
            soc: 1.0,
            ..Default::default()
        };
        let fc = Forecast {
            t_out: vec![33.0, 34.0, 35.0, 35.0],
            irradiance: vec![0.6, 0.7, 0.8, 0.7],
            buy_price: vec![0.1, 0.1, 0.25, 0.25],
        };
        let params = MpcParams::default();
        let sol = solve(&b, Some(&storage), &state, &micro, &params, &fc, None, Exec::Sequential).unwrap();
        assert!(sol.plan.objective_value <= sol.initial_objective);
        for row in &sol.plan.mdots {
            for &m in row {
                assert!(m >= b.hvac.mdot_min && m <= b.hvac.mdot_max);
            }
        }
        for &p in &sol.plan.p_ess_plan {
            assert!(p >= -storage.battery.max_discharge_kw && p <= storage.battery.max_charge_kw);
        }
        let par = solve(&b, Some(&storage), &state, &micro, &params, &fc, None, Exec::Parallel).unwrap();
        assert_eq!(sol.plan, par.plan);
    }

    #[test]
    fn short_forecast_rejected() {
        let b = one_zone(25.0);
        let err = solve(
            &b,
            None,
            &BuildingState::uniform(1, 26.0),
            &MicrogridState::default(),
            &MpcParams::default(),
            &flat_forecast(2, 30.0),
            None,
            Exec::Sequential,
        );
        assert!(matches!(err, Err(Error::Input(_))));
    }

    #[test]
    fn receding_step_returns_row_zero_and_is_deterministic() {
        let b = one_zone(24.0);
        let state = BuildingState::uniform(1, 28.0);
        let fc = flat_forecast(4, 32.0);
        let mut c1 = MpcController::new(MpcParams::default(), Exec::Sequential);
        let a1 = c1.receding_step(&b, None, &state, &MicrogridState::default(), &fc).unwrap();
        assert_eq!(a1.mdots, c1.current_plan().unwrap().mdots[0]);
        let mut c2 = MpcController::new(MpcParams::default(), Exec::Sequential);
        let a2 = c2.receding_step(&b, None, &state, &MicrogridState::default(), &fc).unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn shift_repeats_last_row() {
        let plan = MpcPlan {
            mdots: vec![vec![1.0], vec![2.0], vec![3.0]],
            p_ess_plan: vec![0.1, 0.2, 0.3],
            objective_value: 0.0,
        };
        let s = plan.shifted();
        assert_eq!(s.mdots, vec![vec![2.0], vec![3.0], vec![3.0]]);
        assert_eq!(s.p_ess_plan, vec![0.2, 0.3, 0.3]);
    }
}
