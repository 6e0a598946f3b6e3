//! Direct control: the agent commands battery power and per-zone airflow.
//!
//! The zone temperature block of the state is rotated by the slot's
//! "current" zone `i = (slot mod n) + 1`: for `i = 1` it is
//! `[T_1, …, T_n]`, for `i = 2` it is `[T_n, T_1, …, T_{n−1}]`, and so on.
//! The airflow block of the action uses the same frame, so action position
//! `k` drives the zone whose temperature sits at state position `k`.

use std::sync::Arc;

use super::{Environment, Episode, InitialConditions, Plant, RewardParams, SlotCommand, StepOutcome, WorldState};
use crate::data::Dataset;
use crate::ddpg::ActionBounds;
use crate::error::{Error, Result};

/// `r = −cost − λ·T_δ`.
pub fn pure_reward(power_cost: f64, t_delta: f64, lambda: f64) -> f64 {
    -power_cost - lambda * t_delta
}

/// Mean over zones of the distance from `[low, high]` (zero inside).
pub fn comfort_gap(temps: &[f64], low: f64, high: f64) -> f64 {
    if temps.is_empty() {
        return 0.0;
    }
    temps.iter().map(|&t| (low - t).max(0.0) + (t - high).max(0.0)).sum::<f64>() / temps.len() as f64
}

/// Source index (0-based) of rotated position `k` for 1-based zone `i`.
fn source_index(k: usize, i: usize, n: usize) -> usize {
    (k + n - (i - 1) % n) % n
}

/// Rotates `temps` for 1-based zone index `i`.
pub fn rotate_for_zone<T: Copy>(values: &[T], i: usize) -> Result<Vec<T>> {
    let n = values.len();
    if i == 0 || i > n {
        return Err(Error::input(format!("zone index {i} outside 1..={n}")));
    }
    Ok((0..n).map(|k| values[source_index(k, i, n)]).collect())
}

/// `[soc, v_t, T_all (rotated for zone i), T_δ, T_out]`.
pub fn pure_state_assemble(world: &WorldState, buy_price: f64, t_out: f64, zone_index: usize, band: (f64, f64)) -> Result<Vec<f64>> {
    let temps = &world.building.zone_temps_c;
    let mut s = Vec::with_capacity(temps.len() + 4);
    s.push(world.soc);
    s.push(buy_price);
    s.extend(rotate_for_zone(temps, zone_index)?);
    s.push(comfort_gap(temps, band.0, band.1));
    s.push(t_out);
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct PureEnv {
    plant: Plant,
    data: Arc<Dataset>,
    reward: RewardParams,
    init: InitialConditions,
    slots_per_episode: usize,
    episode: Option<Episode>,
}

impl PureEnv {
    pub fn new(plant: Plant, data: Arc<Dataset>, reward: RewardParams, init: InitialConditions) -> Result<Self> {
        plant.validate()?;
        reward.validate()?;
        Ok(Self {
            slots_per_episode: data.slots_per_day,
            plant,
            data,
            reward,
            init,
            episode: None,
        })
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    fn n(&self) -> usize {
        self.plant.building.n_zones()
    }

    /// 1-based zone index in focus at `slot`.
    pub fn zone_at(&self, slot: usize) -> usize {
        slot % self.n() + 1
    }

    fn episode(&self) -> Result<&Episode> {
        self.episode
            .as_ref()
            .ok_or_else(|| Error::State("environment stepped before reset".into()))
    }

    fn observe(&self) -> Result<Vec<f64>> {
        let ep = self.episode()?;
        let t = ep.world.slot;
        pure_state_assemble(
            &ep.world,
            ep.day.buy_price[t],
            ep.day.t_out[t],
            self.zone_at(t),
            (self.reward.comfort_low_c, self.reward.comfort_high_c),
        )
    }
}

impl Environment for PureEnv {
    fn state_dim(&self) -> usize {
        self.n() + 4
    }

    /// `[P_ESS, ṁ (rotated frame)]`.
    fn action_bounds(&self) -> ActionBounds {
        let b = &self.plant.battery;
        let h = &self.plant.building.hvac;
        let mut low = vec![-b.max_discharge_kw];
        let mut high = vec![b.max_charge_kw];
        low.extend(std::iter::repeat_n(h.mdot_min, self.n()));
        high.extend(std::iter::repeat_n(h.mdot_max, self.n()));
        ActionBounds::new(low, high).expect("validated plant limits")
    }

    fn slots_per_episode(&self) -> usize {
        self.slots_per_episode
    }

    fn num_days(&self) -> usize {
        self.data.num_days()
    }

    fn reset(&mut self, day: usize) -> Result<Vec<f64>> {
        let data = self.data.day(day, 1)?;
        let world = self.plant.reset(&self.init)?;
        self.episode = Some(Episode { day: data, world });
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let bounds = self.action_bounds();
        let n = self.n();
        if action.len() != bounds.dim() {
            return Err(Error::input(format!("pure action has {} entries, got {}", n + 1, action.len())));
        }
        let a = bounds.clip(action);
        let plant = &self.plant;
        let reward_params = &self.reward;
        let slots = self.slots_per_episode;
        let ep = self
            .episode
            .as_mut()
            .ok_or_else(|| Error::State("environment stepped before reset".into()))?;
        let t = ep.world.slot;
        if t >= slots {
            return Err(Error::State("episode already finished".into()));
        }
        let i = t % n + 1;
        let mut mdots = vec![0.0; n];
        for k in 0..n {
            mdots[source_index(k, i, n)] = a[1 + k];
        }
        let cmd = SlotCommand {
            mdots,
            p_ess: a[0],
            u_dg: 0.0,
        };
        let mut rec = plant.apply(&mut ep.world, &ep.day, &cmd)?;
        let gap = comfort_gap(&rec.zone_temps_c, reward_params.comfort_low_c, reward_params.comfort_high_c);
        let reward = pure_reward(rec.cost, gap, reward_params.lambda_comfort);
        rec.reward = Some(reward);
        let done = ep.world.slot >= slots;
        Ok(StepOutcome {
            state: self.observe()?,
            reward,
            done,
            record: rec,
        })
    }

    fn slot(&self) -> Result<usize> {
        Ok(self.episode()?.world.slot)
    }
}
