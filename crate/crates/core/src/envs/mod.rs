//! MDP wrappers over a shared building + microgrid plant.
//!
//! [`Plant`] owns the physics of one slot (HVAC load, PV, battery, diesel,
//! grid exchange, cost, zone temperatures); [`ComboEnv`] and [`PureEnv`]
//! add state assembly, action decoding, and rewards on top. The MPC-only
//! closed loop in the harness drives the same [`Plant`].

mod combo;
mod pure;

pub use combo::{combo_reward, ComboEnv, TimeEncoding};
pub use pure::{comfort_gap, pure_reward, pure_state_assemble, rotate_for_zone, PureEnv};

use serde::{Deserialize, Serialize};

use crate::data::DayData;
use crate::ddpg::ActionBounds;
use crate::error::{Error, Result};
use crate::microgrid::{balance_residual, diesel_step, exchange_cost, grid_exchange, Battery, DieselGen, PvPanel};
use crate::thermal::{Building, BuildingState};

/// `P_net = P_H + P_const − P_solar`; negative means surplus.
pub fn net_demand(p_hvac: f64, p_const: f64, p_solar: f64) -> f64 {
    p_hvac + p_const - p_solar
}

/// Reward shaping constants shared by both DRL scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    /// ε: capacity-scaled penalty for leaving the SOC band.
    pub penalty_epsilon: f64,
    pub kappa_up: f64,
    pub kappa_low: f64,
    pub wc_min: f64,
    pub wc_max: f64,
    /// λ: weight of the comfort-band gap in the pure scenario.
    pub lambda_comfort: f64,
    pub comfort_low_c: f64,
    pub comfort_high_c: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            penalty_epsilon: 0.5,
            kappa_up: 0.5,
            kappa_low: 0.5,
            wc_min: 0.2,
            wc_max: 0.8,
            lambda_comfort: 0.15,
            comfort_low_c: 23.0,
            comfort_high_c: 27.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("penalty_epsilon", self.penalty_epsilon),
            ("kappa_up", self.kappa_up),
            ("kappa_low", self.kappa_low),
            ("wc_min", self.wc_min),
            ("wc_max", self.wc_max),
            ("lambda_comfort", self.lambda_comfort),
        ];
        if let Some((name, v)) = unit.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(format!("reward.{name} = {v} must lie in [0, 1]")));
        }
        if !(self.wc_min < self.wc_max) {
            return Err(Error::Config("reward.wc_min must be below reward.wc_max".into()));
        }
        if !(self.comfort_low_c <= self.comfort_high_c) {
            return Err(Error::Config("comfort band is empty".into()));
        }
        Ok(())
    }
}

/// Initial conditions applied on every episode reset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConditions {
    pub soc_kwh: f64,
    pub zone_temp_c: f64,
    pub p_dg_kw: f64,
}

impl Default for InitialConditions {
    fn default() -> Self {
        Self {
            soc_kwh: 1.0,
            zone_temp_c: 27.0,
            p_dg_kw: 0.0,
        }
    }
}

/// Mutable world carried between slots.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub building: BuildingState,
    pub soc: f64,
    pub p_dg: f64,
    pub slot: usize,
    /// Net demand realized in the previous slot (0 at reset).
    pub last_p_net: f64,
}

/// What a controller asks of the plant for one slot. Out-of-range values are
/// clipped by the plant and the applied values are reported.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotCommand {
    pub mdots: Vec<f64>,
    pub p_ess: f64,
    pub u_dg: f64,
}

/// Everything logged for one simulated slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub day: usize,
    pub slot: usize,
    pub t_out_c: f64,
    pub irradiance_kw_m2: f64,
    pub buy_price: f64,
    /// Applied (clipped) airflows, kg/s.
    pub mdots: Vec<f64>,
    /// Zone temperatures at the end of the slot.
    pub zone_temps_c: Vec<f64>,
    pub p_hvac_kw: f64,
    pub p_solar_kw: f64,
    pub p_const_kw: f64,
    pub p_dg_kw: f64,
    /// Applied battery power, kW (negative = discharge).
    pub p_ess_kw: f64,
    pub p_net_kw: f64,
    pub p_grid_kw: f64,
    /// SOC at the end of the slot, kWh.
    pub soc_kwh: f64,
    pub cost: f64,
    pub reward: Option<f64>,
    pub w_energy: Option<f64>,
    pub w_comfort: Option<f64>,
    pub balance_residual_kw: f64,
}

impl SlotRecord {
    pub fn mean_temp(&self) -> f64 {
        self.zone_temps_c.iter().sum::<f64>() / self.zone_temps_c.len() as f64
    }
}

/// Physical plant: building, air handler, PV, battery, diesel, and tariff
/// constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub building: Building,
    pub battery: Battery,
    pub pv: PvPanel,
    pub diesel: DieselGen,
    pub p_const_kw: f64,
    pub sell_ratio: f64,
    pub slot_hours: f64,
}

impl Plant {
    pub fn validate(&self) -> Result<()> {
        self.battery.validate()?;
        self.pv.validate()?;
        self.diesel.validate()?;
        if !(self.p_const_kw >= 0.0) {
            return Err(Error::Config("constant load must be >= 0".into()));
        }
        if !(self.sell_ratio > 0.0 && self.sell_ratio <= 1.0) {
            return Err(Error::Config("sell ratio must lie in (0, 1]".into()));
        }
        if !(self.slot_hours > 0.0) {
            return Err(Error::Config("slot length must be positive".into()));
        }
        Ok(())
    }

    pub fn reset(&self, init: &InitialConditions) -> Result<WorldState> {
        if !(0.0..=self.battery.capacity_kwh).contains(&init.soc_kwh) {
            return Err(Error::Config(format!(
                "initial SOC {} outside [0, {}]",
                init.soc_kwh, self.battery.capacity_kwh
            )));
        }
        Ok(WorldState {
            building: BuildingState::uniform(self.building.n_zones(), init.zone_temp_c),
            soc: init.soc_kwh,
            p_dg: init.p_dg_kw.clamp(0.0, self.diesel.max_output_kw),
            slot: 0,
            last_p_net: 0.0,
        })
    }

    /// Clips airflows to the air-handler box.
    pub fn clip_mdots(&self, mdots: &[f64]) -> Vec<f64> {
        mdots.iter().map(|&m| self.building.hvac.clip_mdot(m)).collect()
    }

    /// Advances `world` by one slot of `day` under `cmd`.
    pub fn apply(&self, world: &mut WorldState, day: &DayData, cmd: &SlotCommand) -> Result<SlotRecord> {
        let t = world.slot;
        if t >= day.len() {
            return Err(Error::State(format!("slot {t} beyond the loaded day")));
        }
        if cmd.mdots.len() != self.building.n_zones() {
            return Err(Error::input(format!(
                "{} airflows for {} zones",
                cmd.mdots.len(),
                self.building.n_zones()
            )));
        }
        if !cmd.p_ess.is_finite() || !cmd.u_dg.is_finite() || cmd.mdots.iter().any(|m| !m.is_finite()) {
            return Err(Error::input("non-finite command"));
        }
        let dt = self.slot_hours;
        let (t_out, irr, price) = (day.t_out[t], day.irradiance[t], day.buy_price[t]);
        let mdots = self.clip_mdots(&cmd.mdots);
        let p_ess = self.battery.feasible_power(world.soc, cmd.p_ess, dt);

        let p_hvac = self.building.power(&world.building, &mdots)?;
        let p_solar = self.pv.power(irr)?;
        let p_dg = world.p_dg;
        let p_net = net_demand(p_hvac, self.p_const_kw, p_solar);
        let p_grid = grid_exchange(p_net, p_ess, p_dg);
        let cost = exchange_cost(p_grid, price, self.sell_ratio, dt);
        let residual = balance_residual(p_grid, p_solar, p_dg, p_ess, self.p_const_kw, p_hvac);

        world.building = self.building.step(&world.building, t_out, &mdots, dt)?;
        world.soc = self.battery.step(world.soc, p_ess, dt)?.soc;
        world.p_dg = diesel_step(&self.diesel, p_dg, cmd.u_dg.clamp(0.0, self.diesel.max_output_kw))?;
        world.slot += 1;
        world.last_p_net = p_net;

        Ok(SlotRecord {
            day: day.day,
            slot: t,
            t_out_c: t_out,
            irradiance_kw_m2: irr,
            buy_price: price,
            mdots,
            zone_temps_c: world.building.zone_temps_c.clone(),
            p_hvac_kw: p_hvac,
            p_solar_kw: p_solar,
            p_const_kw: self.p_const_kw,
            p_dg_kw: p_dg,
            p_ess_kw: p_ess,
            p_net_kw: p_net,
            p_grid_kw: p_grid,
            soc_kwh: world.soc,
            cost,
            reward: None,
            w_energy: None,
            w_comfort: None,
            balance_residual_kw: residual,
        })
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub record: SlotRecord,
}

/// Episodic environment over whole days of a dataset.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_bounds(&self) -> ActionBounds;
    fn slots_per_episode(&self) -> usize;
    fn num_days(&self) -> usize;
    /// Starts an episode on `day`; returns `s₀`.
    fn reset(&mut self, day: usize) -> Result<Vec<f64>>;
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;
    /// Current slot within the episode.
    fn slot(&self) -> Result<usize>;
}

/// Episode bookkeeping shared by both environments.
#[derive(Debug, Clone)]
pub(crate) struct Episode {
    pub day: DayData,
    pub world: WorldState,
}
