//! Microgrid component dynamics: PV array, battery storage, diesel generator,
//! the bus power balance, and grid electricity cost.
//!
//! Power sign conventions used everywhere in the crate:
//!
//! * `p_ess > 0` charges the battery, `p_ess < 0` discharges it.
//! * `p_grid > 0` imports from the utility, `p_grid < 0` exports to it.
//!
//! SOC is carried in kWh. Battery energy moves by `p·dt` per slot, so the
//! fractional update of the storage equation is recovered by dividing by the
//! capacity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PvPanel {
    pub area_m2: f64,
    /// Module yield (conversion efficiency), in (0, 1].
    #[serde(rename = "yield")]
    pub yield_: f64,
    pub performance_ratio: f64,
}

impl PvPanel {
    pub fn validate(&self) -> Result<()> {
        if !(self.area_m2 > 0.0 && self.area_m2.is_finite()) {
            return Err(Error::input(format!("PV area must be positive, got {}", self.area_m2)));
        }
        if !(self.yield_ > 0.0 && self.yield_ <= 1.0) {
            return Err(Error::input(format!("PV yield must lie in (0,1], got {}", self.yield_)));
        }
        if !(self.performance_ratio > 0.0 && self.performance_ratio <= 1.0) {
            return Err(Error::input(format!(
                "PV performance ratio must lie in (0,1], got {}",
                self.performance_ratio
            )));
        }
        Ok(())
    }

    /// PV output in kW for an irradiance in kW/m²: `A·y·r·R`.
    pub fn power(&self, irradiance_kw_m2: f64) -> Result<f64> {
        pv_power(self, irradiance_kw_m2)
    }
}

impl Default for PvPanel {
    fn default() -> Self {
        Self {
            area_m2: 12.0,
            yield_: 0.18,
            performance_ratio: 0.8,
        }
    }
}

pub fn pv_power(panel: &PvPanel, irradiance_kw_m2: f64) -> Result<f64> {
    if !(irradiance_kw_m2 >= 0.0) {
        return Err(Error::input(format!(
            "irradiance must be non-negative, got {irradiance_kw_m2}"
        )));
    }
    Ok(panel.area_m2 * panel.yield_ * irradiance_kw_m2 * panel.performance_ratio)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Battery {
    pub capacity_kwh: f64,
    pub self_discharge_rate_per_hour: f64,
    pub eta_charge: f64,
    pub eta_discharge: f64,
    pub max_charge_kw: f64,
    pub max_discharge_kw: f64,
    /// SOC safety factor γ; the safe band is `[γ·cap, (1−γ)·cap]`.
    pub safety_factor: f64,
}

impl Default for Battery {
    fn default() -> Self {
        Self {
            capacity_kwh: 2.0,
            self_discharge_rate_per_hour: 0.0005,
            eta_charge: 0.95,
            eta_discharge: 0.95,
            max_charge_kw: 0.9,
            max_discharge_kw: 0.9,
            safety_factor: 0.05,
        }
    }
}

/// Result of one battery update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryStep {
    pub soc: f64,
    /// Set when the raw update left `[0, capacity]` and had to be clamped.
    pub saturated: bool,
}

impl Battery {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("capacity_kwh", self.capacity_kwh),
            ("max_charge_kw", self.max_charge_kw),
            ("max_discharge_kw", self.max_discharge_kw),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::input(format!("battery {name} must be positive, got {v}")));
            }
        }
        if !(self.self_discharge_rate_per_hour >= 0.0) {
            return Err(Error::input("battery self-discharge rate must be >= 0"));
        }
        for (name, v) in [("eta_charge", self.eta_charge), ("eta_discharge", self.eta_discharge)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::input(format!("battery {name} must lie in (0,1], got {v}")));
            }
        }
        if !(self.safety_factor > 0.0 && self.safety_factor < 0.5) {
            return Err(Error::input(format!(
                "battery safety factor must lie in (0,0.5), got {}",
                self.safety_factor
            )));
        }
        Ok(())
    }

    pub fn safe_band(&self) -> (f64, f64) {
        (
            self.safety_factor * self.capacity_kwh,
            (1.0 - self.safety_factor) * self.capacity_kwh,
        )
    }

    pub fn in_safe_band(&self, soc: f64) -> bool {
        soc_in_safe_band(self, soc)
    }

    pub fn clip_power(&self, p_ess: f64) -> f64 {
        p_ess.clamp(-self.max_discharge_kw, self.max_charge_kw)
    }

    /// Largest-magnitude power with the sign of `p_ess` (already within the
    /// rate limits) that keeps the post-step SOC inside `[0, capacity]`.
    pub fn feasible_power(&self, soc: f64, p_ess: f64, dt_hours: f64) -> f64 {
        let p = self.clip_power(p_ess);
        let retained = (1.0 - self.self_discharge_rate_per_hour * dt_hours) * soc;
        if p > 0.0 {
            let room = (self.capacity_kwh - retained).max(0.0);
            p.min(room / (self.eta_charge * dt_hours))
        } else if p < 0.0 {
            let avail = retained.max(0.0);
            p.max(-avail * self.eta_discharge / dt_hours)
        } else {
            0.0
        }
    }

    pub fn step(&self, soc: f64, p_ess: f64, dt_hours: f64) -> Result<BatteryStep> {
        battery_step(self, soc, p_ess, dt_hours)
    }
}

/// Advances the SOC (kWh) by one slot.
///
/// Discharge (`p_ess < 0`) drains `|p|·dt/η_dis`; charge stores `η_ch·p·dt`;
/// self-discharge scales the previous SOC by `1 − δ·dt`.
pub fn battery_step(batt: &Battery, soc: f64, p_ess: f64, dt_hours: f64) -> Result<BatteryStep> {
    if !(p_ess >= -batt.max_discharge_kw && p_ess <= batt.max_charge_kw) {
        return Err(Error::input(format!(
            "battery power {p_ess} kW outside [-{}, {}]",
            batt.max_discharge_kw, batt.max_charge_kw
        )));
    }
    if !(dt_hours > 0.0) {
        return Err(Error::input(format!("slot length must be positive, got {dt_hours}")));
    }
    let retained = (1.0 - batt.self_discharge_rate_per_hour * dt_hours) * soc;
    let raw = if p_ess < 0.0 {
        retained - (-p_ess) * dt_hours / batt.eta_discharge
    } else {
        retained + p_ess * dt_hours * batt.eta_charge
    };
    let clamped = raw.clamp(0.0, batt.capacity_kwh);
    Ok(BatteryStep {
        soc: clamped,
        saturated: clamped != raw,
    })
}

/// Boundary-inclusive check of `γ·cap ≤ soc ≤ (1−γ)·cap`.
pub fn soc_in_safe_band(batt: &Battery, soc: f64) -> bool {
    let (lo, hi) = batt.safe_band();
    soc >= lo && soc <= hi
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DieselGen {
    /// Delivery delay in slots.
    pub tau: f64,
    pub max_output_kw: f64,
}

impl Default for DieselGen {
    fn default() -> Self {
        Self {
            tau: 2.0,
            max_output_kw: 1.5,
        }
    }
}

impl DieselGen {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::input(format!("diesel tau must be positive, got {}", self.tau)));
        }
        if !(self.max_output_kw > 0.0) {
            return Err(Error::input("diesel max output must be positive"));
        }
        Ok(())
    }
}

/// Literal first-order generator recurrence `p' = −p/τ + u/τ`, clamped to
/// `[0, max_output_kw]`. Iterating with constant `u` settles at `u/(τ+1)`
/// when `τ > 1`.
pub fn diesel_step(dg: &DieselGen, p_dg: f64, u_dg: f64) -> Result<f64> {
    if !(u_dg >= 0.0) {
        return Err(Error::input(format!("diesel command must be non-negative, got {u_dg}")));
    }
    if u_dg > dg.max_output_kw {
        return Err(Error::input(format!(
            "diesel command {u_dg} exceeds max output {}",
            dg.max_output_kw
        )));
    }
    Ok(((u_dg - p_dg) / dg.tau).clamp(0.0, dg.max_output_kw))
}

/// Grid exchange that closes the bus balance
/// `P_ut + P_solar + P_DG − P_ESS = P_const + P_H`, with `p_net = P_H + P_const − P_solar`.
pub fn grid_exchange(p_net: f64, p_ess: f64, p_dg: f64) -> f64 {
    p_net + p_ess - p_dg
}

/// Residual of the bus balance; zero up to rounding for any slot produced by
/// [`grid_exchange`].
pub fn balance_residual(p_grid: f64, p_solar: f64, p_dg: f64, p_ess: f64, p_const: f64, p_hvac: f64) -> f64 {
    let charge = p_ess.max(0.0);
    let discharge = (-p_ess).max(0.0);
    p_grid + p_solar + p_dg - charge + discharge - p_const - p_hvac
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MicrogridState {
    pub soc: f64,
    pub p_dg: f64,
    pub p_solar: f64,
    pub p_grid: f64,
}

/// Buy-price series with a constant sell ratio σ (sell price `σ·v_t`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tariff {
    buy_price: Vec<f64>,
    sell_ratio: f64,
}

impl Tariff {
    pub fn new(buy_price: Vec<f64>, sell_ratio: f64) -> Result<Self> {
        if let Some((i, p)) = buy_price.iter().enumerate().find(|(_, p)| !(**p >= 0.0)) {
            return Err(Error::input(format!("buy price at slot {i} is {p}; prices must be >= 0")));
        }
        if !(sell_ratio > 0.0 && sell_ratio <= 1.0) {
            return Err(Error::input(format!("sell ratio must lie in (0,1], got {sell_ratio}")));
        }
        Ok(Self {
            buy_price,
            sell_ratio,
        })
    }

    pub fn len(&self) -> usize {
        self.buy_price.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buy_price.is_empty()
    }

    pub fn sell_ratio(&self) -> f64 {
        self.sell_ratio
    }

    pub fn buy(&self, t: usize) -> Result<f64> {
        self.buy_price.get(t).copied().ok_or_else(|| {
            Error::input(format!("slot {t} outside tariff of {} slots", self.buy_price.len()))
        })
    }

    pub fn sell(&self, t: usize) -> Result<f64> {
        Ok(self.sell_ratio * self.buy(t)?)
    }
}

/// Cost of one slot's grid exchange: imports billed at `v_t`, exports
/// credited at `σ·v_t`.
pub fn slot_cost(p_grid: f64, tariff: &Tariff, t: usize, dt_hours: f64) -> Result<f64> {
    let v = tariff.buy(t)?;
    Ok(exchange_cost(p_grid, v, tariff.sell_ratio, dt_hours))
}

pub(crate) fn exchange_cost(p_grid: f64, buy: f64, sell_ratio: f64, dt_hours: f64) -> f64 {
    buy * p_grid.max(0.0) * dt_hours - sell_ratio * buy * (-p_grid).max(0.0) * dt_hours
}
