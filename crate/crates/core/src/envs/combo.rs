//! Battery dispatch plus MPC weight tuning: the agent picks `P_ESS` and the
//! raw weight pair, the MPC turns the weights into airflow.

use std::f64::consts::TAU;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Environment, Episode, InitialConditions, Plant, RewardParams, SlotCommand, StepOutcome};
use crate::data::Dataset;
use crate::ddpg::ActionBounds;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::microgrid::{Battery, MicrogridState};
use crate::mpc::{Forecast, MpcController, MpcParams};

/// Decoded weights are kept strictly inside (0, 1).
const WEIGHT_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeEncoding {
    /// Fraction of the day in `[0, 1)`.
    #[default]
    Fraction,
    /// `(sin, cos)` of the day phase; adds one state dimension.
    SinCos,
}

/// `r = r^b + r^net`.
///
/// The SOC term is charged only when the band is left (edges included):
/// `−(SOC·u + ε·cap)` at the bottom, `−(SOC·u + (1−ε)·cap)` at the top.
/// The net term is `−P_net·u`, minus `κ`-weighted overshoot of the raw
/// comfort weight past `[wc_min, wc_max]`.
pub fn combo_reward(params: &RewardParams, battery: &Battery, soc: f64, p_net: f64, sell_price: f64, w_c_raw: f64) -> f64 {
    let cap = battery.capacity_kwh;
    let (lo, hi) = battery.safe_band();
    let r_b = if soc <= lo {
        -(soc * sell_price + params.penalty_epsilon * cap)
    } else if soc >= hi {
        -(soc * sell_price + (1.0 - params.penalty_epsilon) * cap)
    } else {
        0.0
    };
    let mut r_net = -p_net * sell_price;
    if w_c_raw > params.wc_max {
        r_net -= params.kappa_up * (w_c_raw - params.wc_max);
    } else if w_c_raw < params.wc_min {
        r_net -= params.kappa_low * (params.wc_min - w_c_raw);
    }
    r_b + r_net
}

#[derive(Debug, Clone)]
pub struct ComboEnv {
    plant: Plant,
    data: Arc<Dataset>,
    reward: RewardParams,
    base_mpc: MpcParams,
    mpc: MpcController,
    init: InitialConditions,
    time_encoding: TimeEncoding,
    slots_per_episode: usize,
    episode: Option<Episode>,
    w_comfort: f64,
}

impl ComboEnv {
    pub fn new(
        plant: Plant,
        data: Arc<Dataset>,
        reward: RewardParams,
        mpc: MpcParams,
        init: InitialConditions,
        time_encoding: TimeEncoding,
        exec: Exec,
    ) -> Result<Self> {
        plant.validate()?;
        reward.validate()?;
        mpc.validate()?;
        Ok(Self {
            slots_per_episode: data.slots_per_day,
            w_comfort: mpc.w_comfort,
            mpc: MpcController::new(mpc.clone(), exec),
            base_mpc: mpc,
            plant,
            data,
            reward,
            init,
            time_encoding,
            episode: None,
        })
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    fn episode(&self) -> Result<&Episode> {
        self.episode
            .as_ref()
            .ok_or_else(|| Error::State("environment stepped before reset".into()))
    }

    /// Comfort-criticality weighted mean zone temperature.
    fn weighted_temp(&self, temps: &[f64]) -> f64 {
        let zones = &self.plant.building.zones;
        let wsum: f64 = zones.iter().map(|z| z.criticality).sum();
        zones.iter().zip(temps).map(|(z, t)| z.criticality * t).sum::<f64>() / wsum
    }

    fn observe(&self) -> Result<Vec<f64>> {
        let ep = self.episode()?;
        let w = &ep.world;
        let t = w.slot;
        let mut s = vec![
            w.soc,
            w.last_p_net,
            ep.day.buy_price[t],
            self.weighted_temp(&w.building.zone_temps_c),
            ep.day.t_out[t],
            self.w_comfort,
        ];
        let phase = (t % self.data.slots_per_day) as f64 / self.data.slots_per_day as f64;
        match self.time_encoding {
            TimeEncoding::Fraction => s.push(phase),
            TimeEncoding::SinCos => s.extend([(TAU * phase).sin(), (TAU * phase).cos()]),
        }
        Ok(s)
    }
}

impl Environment for ComboEnv {
    fn state_dim(&self) -> usize {
        match self.time_encoding {
            TimeEncoding::Fraction => 7,
            TimeEncoding::SinCos => 8,
        }
    }

    /// `[P_ESS, w_E_raw, w_c_raw]`.
    fn action_bounds(&self) -> ActionBounds {
        let b = &self.plant.battery;
        ActionBounds::new(vec![-b.max_discharge_kw, 0.0, 0.0], vec![b.max_charge_kw, 1.0, 1.0]).expect("valid battery limits")
    }

    fn slots_per_episode(&self) -> usize {
        self.slots_per_episode
    }

    fn num_days(&self) -> usize {
        self.data.num_days()
    }

    fn reset(&mut self, day: usize) -> Result<Vec<f64>> {
        let data = self.data.day(day, self.base_mpc.horizon)?;
        let world = self.plant.reset(&self.init)?;
        self.mpc.reset();
        self.w_comfort = self.base_mpc.w_comfort;
        self.episode = Some(Episode { day: data, world });
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let bounds = self.action_bounds();
        if action.len() != bounds.dim() {
            return Err(Error::input(format!("combo action has 3 entries, got {}", action.len())));
        }
        let a = bounds.clip(action);
        let w_e = a[1].clamp(WEIGHT_MARGIN, 1.0 - WEIGHT_MARGIN);
        let w_c = a[2].clamp(WEIGHT_MARGIN, 1.0 - WEIGHT_MARGIN);
        let h = self.base_mpc.horizon;
        self.mpc.params = self.base_mpc.with_weights(w_e, w_c);

        let plant = &self.plant;
        let ep = self
            .episode
            .as_mut()
            .ok_or_else(|| Error::State("environment stepped before reset".into()))?;
        let t = ep.world.slot;
        if t >= self.slots_per_episode {
            return Err(Error::State("episode already finished".into()));
        }
        let forecast = Forecast {
            t_out: ep.day.t_out[t..t + h].to_vec(),
            irradiance: ep.day.irradiance[t..t + h].to_vec(),
            buy_price: ep.day.buy_price[t..t + h].to_vec(),
        };
        let micro = MicrogridState {
            soc: ep.world.soc,
            p_dg: ep.world.p_dg,
            ..MicrogridState::default()
        };
        let act = self.mpc.receding_step(&plant.building, None, &ep.world.building, &micro, &forecast)?;
        let cmd = SlotCommand {
            mdots: act.mdots,
            p_ess: a[0],
            u_dg: 0.0,
        };
        let mut rec = plant.apply(&mut ep.world, &ep.day, &cmd)?;
        let reward = combo_reward(
            &self.reward,
            &plant.battery,
            ep.world.soc,
            rec.p_net_kw,
            plant.sell_ratio * rec.buy_price,
            a[2],
        );
        rec.reward = Some(reward);
        rec.w_energy = Some(w_e);
        rec.w_comfort = Some(w_c);
        let done = ep.world.slot >= self.slots_per_episode;
        self.w_comfort = w_c;
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

#[cfg(test)]
mod tests {
    use super::*;

    fn battery(cap: f64, gamma: f64) -> Battery {
        Battery {
            capacity_kwh: cap,
            safety_factor: gamma,
            ..Battery::default()
        }
    }

    #[test]
    fn reward_band_interior_is_cost_only() {
        let p = RewardParams::default();
        let r = combo_reward(&p, &battery(1.0, 0.05), 0.5, 1.7, 0.3, 0.5);
        assert!((r + 1.7 * 0.3).abs() < 1e-12);
    }

    #[test]
    fn reward_low_soc_hand_value() {
        let p = RewardParams {
            penalty_epsilon: 0.5,
            ..RewardParams::default()
        };
        let r = combo_reward(&p, &battery(1.0, 0.05), 0.02, 0.0, 1.0, 0.5);
        assert!((r + 0.52).abs() < 1e-9);
    }

    #[test]
    fn reward_high_soc_literal_branch() {
        let p = RewardParams {
            penalty_epsilon: 0.3,
            ..RewardParams::default()
        };
        let r = combo_reward(&p, &battery(1.0, 0.05), 0.97, 0.0, 1.0, 0.5);
        assert!((r + (0.97 + 0.7)).abs() < 1e-9);
    }

    #[test]
    fn reward_wc_overshoot_hand_value() {
        let p = RewardParams {
            kappa_up: 0.5,
            ..RewardParams::default()
        };
        let r = combo_reward(&p, &battery(1.0, 0.05), 0.5, 2.0, 1.0, p.wc_max + 0.1);
        assert!((r + 2.05).abs() < 1e-9);
    }

    #[test]
    fn reward_continuous_at_wc_edges() {
        let p = RewardParams::default();
        let b = battery(1.0, 0.05);
        for edge in [p.wc_min, p.wc_max] {
            let at = combo_reward(&p, &b, 0.5, 1.0, 0.2, edge);
            for d in [1e-9, -1e-9] {
                assert!((combo_reward(&p, &b, 0.5, 1.0, 0.2, edge + d) - at).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn reward_monotone_in_epsilon_below_band() {
        let b = battery(1.0, 0.05);
        let mut prev = f64::INFINITY;
        for k in 0..=10 {
            let p = RewardParams {
                penalty_epsilon: k as f64 / 10.0,
                ..RewardParams::default()
            };
            let r = combo_reward(&p, &b, 0.01, 0.3, 0.2, 0.5);
            assert!(r < prev);
            prev = r;
        }
    }
}
