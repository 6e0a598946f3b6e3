//! Single-capacitance RC zone model and HVAC electrical power.
//!
//! Units: temperatures in °C, thermal capacitance in kWh/°C, envelope
//! resistance in °C/kW, airflow in kg/s, and `cp_air` in kJ/(kg·°C) so that
//! `cp_air · mdot` is a conductance in kW/°C.
//!
//! Zone balance, integrated with forward Euler on one-minute substeps:
//!
//! ```text
//! C · dT/dt = (T_out − T)/R + cp·mdot·(T_supply − T) + q
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integration substep, in hours.
pub const SUBSTEP_HOURS: f64 = 1.0 / 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZoneParams {
    pub thermal_capacitance: f64,
    pub envelope_resistance: f64,
    pub internal_gain_kw: f64,
    pub desired_temp_c: f64,
    pub criticality: f64,
}

impl Default for ZoneParams {
    fn default() -> Self {
        Self {
            thermal_capacitance: 0.15,
            envelope_resistance: 30.0,
            internal_gain_kw: 0.05,
            desired_temp_c: 25.0,
            criticality: 0.5,
        }
    }
}

impl ZoneParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.thermal_capacitance > 0.0) {
            return Err(Error::input("zone thermal capacitance must be positive"));
        }
        if !(self.envelope_resistance > 0.0) {
            return Err(Error::input("zone envelope resistance must be positive"));
        }
        if !(self.internal_gain_kw >= 0.0) {
            return Err(Error::input("zone internal gain must be >= 0"));
        }
        if !self.desired_temp_c.is_finite() {
            return Err(Error::input("zone desired temperature must be finite"));
        }
        if !(self.criticality > 0.0 && self.criticality < 1.0) {
            return Err(Error::input(format!(
                "zone criticality must lie in (0,1), got {}",
                self.criticality
            )));
        }
        Ok(())
    }

    /// Continuous-time RC time constant, hours.
    pub fn time_constant_hours(&self) -> f64 {
        self.envelope_resistance * self.thermal_capacitance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HvacParams {
    pub k_fan: f64,
    /// Chiller coefficient of performance.
    pub cop: f64,
    pub cp_air: f64,
    /// Chilled supply-air temperature leaving the coil.
    pub supply_temp_c: f64,
    /// Air temperature entering the chiller; used only when
    /// `mixed_return` is off or no air is moving.
    pub return_temp_c: f64,
    pub mdot_min: f64,
    pub mdot_max: f64,
    /// Take the chiller inlet temperature as the airflow-weighted mean of
    /// the zone temperatures.
    #[serde(default = "default_true")]
    pub mixed_return: bool,
}

fn default_true() -> bool {
    true
}

impl Default for HvacParams {
    fn default() -> Self {
        Self {
            k_fan: 2.0,
            cop: 3.0,
            cp_air: 1.005,
            supply_temp_c: 15.0,
            return_temp_c: 26.0,
            mdot_min: 0.0,
            mdot_max: 0.3,
            mixed_return: false,
        }
    }
}

impl HvacParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k_fan", self.k_fan), ("cop", self.cop), ("cp_air", self.cp_air)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::input(format!("HVAC {name} must be positive, got {v}")));
            }
        }
        if !(self.mdot_min >= 0.0 && self.mdot_min < self.mdot_max) {
            return Err(Error::input(format!(
                "HVAC airflow bounds must satisfy 0 <= min < max, got [{}, {}]",
                self.mdot_min, self.mdot_max
            )));
        }
        if !(self.supply_temp_c < self.return_temp_c) {
            return Err(Error::input("HVAC supply temperature must be below return temperature"));
        }
        Ok(())
    }

    pub fn check_mdot(&self, mdot: f64) -> Result<()> {
        if !(mdot >= self.mdot_min && mdot <= self.mdot_max) {
            return Err(Error::input(format!(
                "airflow {mdot} kg/s outside [{}, {}]",
                self.mdot_min, self.mdot_max
            )));
        }
        Ok(())
    }

    pub fn clip_mdot(&self, mdot: f64) -> f64 {
        mdot.clamp(self.mdot_min, self.mdot_max)
    }

    /// Chiller inlet temperature for the given per-zone flows and temperatures.
    pub fn return_air_temp(&self, mdots: &[f64], zone_temps: &[f64]) -> f64 {
        if !self.mixed_return {
            return self.return_temp_c;
        }
        let total: f64 = mdots.iter().sum();
        if total <= 0.0 {
            return self.return_temp_c;
        }
        mdots.iter().zip(zone_temps).map(|(m, t)| m * t).sum::<f64>() / total
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BuildingState {
    pub zone_temps_c: Vec<f64>,
}

impl BuildingState {
    pub fn uniform(n_zones: usize, temp_c: f64) -> Self {
        Self {
            zone_temps_c: vec![temp_c; n_zones],
        }
    }

    pub fn n_zones(&self) -> usize {
        self.zone_temps_c.len()
    }

    pub fn mean_temp(&self) -> f64 {
        self.zone_temps_c.iter().sum::<f64>() / self.zone_temps_c.len() as f64
    }
}

/// Right-hand side of the zone balance, °C per hour.
#[inline]
fn zone_derivative(zone: &ZoneParams, hvac: &HvacParams, t: f64, t_out: f64, mdot: f64) -> f64 {
    ((t_out - t) / zone.envelope_resistance
        + hvac.cp_air * mdot * (hvac.supply_temp_c - t)
        + zone.internal_gain_kw)
        / zone.thermal_capacitance
}

/// Integrates one zone over `dt_hours` with constant boundary conditions.
pub fn zone_step(
    zone: &ZoneParams,
    hvac: &HvacParams,
    t_zone: f64,
    t_out: f64,
    mdot: f64,
    dt_hours: f64,
) -> Result<f64> {
    hvac.check_mdot(mdot)?;
    if !(dt_hours > 0.0) {
        return Err(Error::input(format!("slot length must be positive, got {dt_hours}")));
    }
    Ok(integrate_zone(zone, hvac, t_zone, t_out, mdot, dt_hours))
}

/// Unchecked Euler integration shared by the plant and the MPC predictor.
#[inline]
pub(crate) fn integrate_zone(
    zone: &ZoneParams,
    hvac: &HvacParams,
    t_zone: f64,
    t_out: f64,
    mdot: f64,
    dt_hours: f64,
) -> f64 {
    let n = (dt_hours / SUBSTEP_HOURS).ceil().max(1.0) as usize;
    let h = dt_hours / n as f64;
    let mut t = t_zone;
    for _ in 0..n {
        t += h * zone_derivative(zone, hvac, t, t_out, mdot);
    }
    t
}

/// Fan power `k_f · mdot²`, kW.
pub fn fan_power(hvac: &HvacParams, mdot_total: f64) -> f64 {
    hvac.k_fan * mdot_total * mdot_total
}

/// Chiller power `(cp/COP) · mdot · (T_return − T_supply)` at the configured
/// return temperature, kW.
pub fn chiller_power(hvac: &HvacParams, mdot_total: f64) -> f64 {
    chiller_power_at(hvac, mdot_total, hvac.return_temp_c)
}

pub fn chiller_power_at(hvac: &HvacParams, mdot_total: f64, return_temp_c: f64) -> f64 {
    hvac.cp_air / hvac.cop * mdot_total * (return_temp_c - hvac.supply_temp_c).max(0.0)
}

/// Total HVAC electrical demand `P_H` at the configured return temperature.
pub fn hvac_power(hvac: &HvacParams, mdots: &[f64]) -> Result<f64> {
    for &m in mdots {
        hvac.check_mdot(m)?;
    }
    let total: f64 = mdots.iter().sum();
    Ok(fan_power(hvac, total) + chiller_power(hvac, total))
}

/// `P_H` with the chiller inlet taken from the zone mix (see
/// [`HvacParams::return_air_temp`]).
pub fn hvac_power_mixed(hvac: &HvacParams, mdots: &[f64], zone_temps: &[f64]) -> Result<f64> {
    if mdots.len() != zone_temps.len() {
        return Err(Error::input(format!(
            "{} airflows for {} zones",
            mdots.len(),
            zone_temps.len()
        )));
    }
    for &m in mdots {
        hvac.check_mdot(m)?;
    }
    Ok(hvac_power_unchecked(hvac, mdots, zone_temps))
}

#[inline]
pub(crate) fn hvac_power_unchecked(hvac: &HvacParams, mdots: &[f64], zone_temps: &[f64]) -> f64 {
    let total: f64 = mdots.iter().sum();
    let t_ret = hvac.return_air_temp(mdots, zone_temps);
    fan_power(hvac, total) + chiller_power_at(hvac, total, t_ret)
}

/// Comfort factor `Σ_j 1 / max(|T_desire − T_j|, eps)` over a trajectory.
pub fn comfort_factor(traj: &[f64], desired: f64, eps_comfort: f64) -> Result<f64> {
    if traj.is_empty() {
        return Err(Error::input("comfort factor of an empty trajectory"));
    }
    if !(eps_comfort > 0.0) {
        return Err(Error::input("comfort clamp must be positive"));
    }
    Ok(comfort_factor_unchecked(traj.iter().copied(), desired, eps_comfort))
}

#[inline]
pub(crate) fn comfort_factor_unchecked(traj: impl Iterator<Item = f64>, desired: f64, eps: f64) -> f64 {
    traj.map(|t| 1.0 / (desired - t).abs().max(eps)).sum()
}

/// Zones plus their shared air handler.
#[derive(Debug, Clone, PartialEq)]
pub struct Building {
    pub zones: Vec<ZoneParams>,
    pub hvac: HvacParams,
}

impl Building {
    pub fn new(zones: Vec<ZoneParams>, hvac: HvacParams) -> Result<Self> {
        if zones.is_empty() {
            return Err(Error::input("a building needs at least one zone"));
        }
        for z in &zones {
            z.validate()?;
        }
        hvac.validate()?;
        Ok(Self { zones, hvac })
    }

    pub fn n_zones(&self) -> usize {
        self.zones.len()
    }

    /// Advances every zone by one slot under the commanded flows.
    pub fn step(&self, state: &BuildingState, t_out: f64, mdots: &[f64], dt_hours: f64) -> Result<BuildingState> {
        if state.n_zones() != self.n_zones() || mdots.len() != self.n_zones() {
            return Err(Error::input(format!(
                "building has {} zones, got {} temperatures and {} airflows",
                self.n_zones(),
                state.n_zones(),
                mdots.len()
            )));
        }
        let zone_temps_c = self
            .zones
            .iter()
            .zip(&state.zone_temps_c)
            .zip(mdots)
            .map(|((z, &t), &m)| zone_step(z, &self.hvac, t, t_out, m, dt_hours))
            .collect::<Result<Vec<_>>>()?;
        Ok(BuildingState { zone_temps_c })
    }

    pub fn power(&self, state: &BuildingState, mdots: &[f64]) -> Result<f64> {
        hvac_power_mixed(&self.hvac, mdots, &state.zone_temps_c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOL: f64 = 1e-9;

    fn hvac_fixed() -> HvacParams {
        HvacParams {
            k_fan: 0.5,
            cop: 3.0,
            cp_air: 1.005,
            supply_temp_c: 15.0,
            return_temp_c: 30.0,
            mdot_min: 0.0,
            mdot_max: 5.0,
            mixed_return: false,
        }
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let zone = ZoneParams {
            internal_gain_kw: 0.0,
            ..ZoneParams::default()
        };
        let t = zone_step(&zone, &HvacParams::default(), 31.0, 31.0, 0.0, 0.5).unwrap();
        assert_eq!(t, 31.0);
    }

    #[test]
    fn airflow_cools() {
        let zone = ZoneParams {
            internal_gain_kw: 0.0,
            ..ZoneParams::default()
        };
        let t = zone_step(&zone, &HvacParams::default(), 30.0, 30.0, 0.1, 0.5).unwrap();
        assert!(t < 30.0);
    }

    #[test]
    fn airflow_bounds_enforced() {
        let h = HvacParams::default();
        assert!(zone_step(&ZoneParams::default(), &h, 25.0, 30.0, h.mdot_max + 1e-3, 0.5).is_err());
        assert!(zone_step(&ZoneParams::default(), &h, 25.0, 30.0, -1e-3, 0.5).is_err());
    }

    #[test]
    fn fan_and_chiller_examples() {
        let h = hvac_fixed();
        assert!((fan_power(&h, 2.0) - 2.0).abs() < TOL);
        assert_eq!(fan_power(&h, 0.0), 0.0);
        assert!((fan_power(&h, 1.4) * 4.0 - fan_power(&h, 2.8)).abs() < TOL);
        assert!((chiller_power(&h, 1.0) - 5.025).abs() < TOL);
        assert_eq!(chiller_power(&h, 0.0), 0.0);
        assert!((2.0 * chiller_power(&h, 0.7) - chiller_power(&h, 1.4)).abs() < TOL);
    }

    #[test]
    fn hvac_power_examples() {
        let h = hvac_fixed();
        assert_eq!(hvac_power(&h, &[0.0, 0.0, 0.0]).unwrap(), 0.0);
        let single = hvac_power(&h, &[0.8]).unwrap();
        assert!((single - fan_power(&h, 0.8) - chiller_power(&h, 0.8)).abs() < TOL);
        assert!((hvac_power(&h, &[1.0, 1.0]).unwrap() - 12.05).abs() < TOL);
        assert!(hvac_power(&h, &[1.0, 6.0]).is_err());
    }

    #[test]
    fn mixed_return_uses_flow_weighted_mean() {
        let h = HvacParams {
            mixed_return: true,
            ..hvac_fixed()
        };
        assert!((h.return_air_temp(&[1.0, 3.0], &[20.0, 28.0]) - 26.0).abs() < TOL);
        assert_eq!(h.return_air_temp(&[0.0, 0.0], &[20.0, 28.0]), h.return_temp_c);
        let p = hvac_power_mixed(&h, &[1.0, 1.0], &[30.0, 30.0]).unwrap();
        assert!((p - 12.05).abs() < TOL);
    }

    #[test]
    fn comfort_factor_examples() {
        assert!((comfort_factor(&[27.0], 25.0, 0.1).unwrap() - 0.5).abs() < TOL);
        assert!((comfort_factor(&[25.0, 25.0], 25.0, 0.1).unwrap() - 20.0).abs() < TOL);
        assert!(comfort_factor(&[], 25.0, 0.1).is_err());
        let a = comfort_factor(&[25.5, 24.0, 26.0], 25.0, 0.1).unwrap();
        let b = comfort_factor(&[26.5, 23.0, 27.5], 25.0, 0.1).unwrap();
        assert!(a >= b);
    }

    /// Fine-step reference integration of the same ODE with 1-second Euler
    /// steps, independent of the substep loop in `integrate_zone`.
    fn reference_trajectory(zone: &ZoneParams, hvac: &HvacParams, t0: f64, t_out: f64, mdot: f64, hours: f64) -> f64 {
        let h = 1.0 / 3600.0;
        let steps = (hours / h).round() as usize;
        let (c, r) = (zone.thermal_capacitance, zone.envelope_resistance);
        let mut t = t0;
        for _ in 0..steps {
            let q = (t_out - t) / r + hvac.cp_air * mdot * (hvac.supply_temp_c - t) + zone.internal_gain_kw;
            t += h * q / c;
        }
        t
    }

    #[test]
    fn day_trajectory_matches_fine_reference() {
        let zone = ZoneParams::default();
        let hvac = HvacParams::default();
        let mut t = 29.0;
        for _ in 0..48 {
            t = zone_step(&zone, &hvac, t, 33.0, 0.06, 0.5).unwrap();
        }
        let reference = reference_trajectory(&zone, &hvac, 29.0, 33.0, 0.06, 24.0);
        assert!((t - reference).abs() < 0.05, "{t} vs {reference}");
    }

    proptest! {
        #[test]
        fn passive_zone_contracts_toward_outdoor(t0 in 10.0f64..40.0, t_out in 10.0f64..40.0, dt in 0.01f64..2.0) {
            let zone = ZoneParams { internal_gain_kw: 0.0, ..ZoneParams::default() };
            prop_assume!(dt < zone.time_constant_hours());
            let t1 = zone_step(&zone, &HvacParams::default(), t0, t_out, 0.0, dt).unwrap();
            prop_assert!((t1 - t_out).abs() <= (t0 - t_out).abs() + 1e-12);
        }

        #[test]
        fn hvac_power_increasing_in_flow(m in 0.0f64..0.14, dm in 1e-6f64..0.01) {
            let h = HvacParams::default();
            let temps = [27.0, 25.0];
            let a = hvac_power_mixed(&h, &[m, 0.0], &temps).unwrap();
            let b = hvac_power_mixed(&h, &[m + dm, 0.0], &temps).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!(b > a);
        }

        #[test]
        fn comfort_factor_is_finite(traj in proptest::collection::vec(-50.0f64..50.0, 1..20), d in 15.0f64..30.0) {
            prop_assert!(comfort_factor(&traj, d, 0.1).unwrap().is_finite());
        }

        #[test]
        fn more_airflow_never_warms_steady_state(m in 0.0f64..0.14, dm in 0.0f64..0.01, t_out in 20.0f64..40.0) {
            let zone = ZoneParams::default();
            let hvac = HvacParams::default();
            let steady = |mdot: f64| {
                let mut t = 25.0;
                for _ in 0..400 {
                    t = zone_step(&zone, &hvac, t, t_out, mdot, 0.5).unwrap();
                }
                t
            };
            prop_assume!(hvac.supply_temp_c < 20.0);
            prop_assert!(steady(m + dm) <= steady(m) + 1e-9);
        }
    }
}
