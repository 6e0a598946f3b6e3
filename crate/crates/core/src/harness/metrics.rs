//! Comfort-tracking RMSE windows and the mean/σ comparison table.

use serde::{Deserialize, Serialize};

use crate::envs::SlotRecord;
use crate::error::{Error, Result};

pub const RMSE_WINDOW_HOURS: f64 = 3.0;

/// Population mean and standard deviation; `(NaN, NaN)` when empty.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Windowed RMSE of zone temperatures against their set-points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseSeries {
    pub window_hours: f64,
    /// `per_zone[i][w]` for zone `i`, window `w`.
    pub per_zone: Vec<Vec<f64>>,
    /// RMSE pooled over all zones and slots of each window.
    pub all_zone: Vec<f64>,
}

/// `temps[t][i]` is zone `i` at slot `t`. Windows are consecutive blocks
/// of `window_hours / slot_hours` slots; a trailing partial window is an
/// error.
pub fn rmse_windows(temps: &[Vec<f64>], desired: &[f64], slot_hours: f64, window_hours: f64) -> Result<RmseSeries> {
    let per = window_hours / slot_hours;
    let w = per.round() as usize;
    if w == 0 || (per - w as f64).abs() > 1e-9 {
        return Err(Error::input(format!(
            "window of {window_hours} h is not a whole number of {slot_hours} h slots"
        )));
    }
    if temps.len() % w != 0 {
        return Err(Error::input(format!(
            "{} slots do not split into whole {window_hours} h windows",
            temps.len()
        )));
    }
    let n = desired.len();
    if let Some(row) = temps.iter().find(|r| r.len() != n) {
        return Err(Error::input(format!("temperature row has {} zones, expected {n}", row.len())));
    }
    let windows = temps.len() / w;
    let mut per_zone = vec![Vec::with_capacity(windows); n];
    let mut all_zone = Vec::with_capacity(windows);
    for chunk in temps.chunks(w) {
        let mut pooled = 0.0;
        for i in 0..n {
            let sq: f64 = chunk.iter().map(|r| (r[i] - desired[i]).powi(2)).sum();
            pooled += sq;
            per_zone[i].push((sq / w as f64).sqrt());
        }
        all_zone.push((pooled / (w * n) as f64).sqrt());
    }
    Ok(RmseSeries {
        window_hours,
        per_zone,
        all_zone,
    })
}

/// One row of the comparison table: mean and σ of per-slot HVAC power,
/// per-slot all-zone average temperature, and the all-zone RMSE windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub seed: u64,
    pub power_mean_kw: f64,
    pub power_std_kw: f64,
    pub temp_mean_c: f64,
    pub temp_std_c: f64,
    pub rmse_mean_c: f64,
    pub rmse_std_c: f64,
}

impl SummaryRow {
    pub fn from_slots(scenario: &str, seed: u64, slots: &[SlotRecord], desired: &[f64], slot_hours: f64) -> Result<Self> {
        let power: Vec<f64> = slots.iter().map(|s| s.p_hvac_kw).collect();
        let temp: Vec<f64> = slots.iter().map(SlotRecord::mean_temp).collect();
        let temps: Vec<Vec<f64>> = slots.iter().map(|s| s.zone_temps_c.clone()).collect();
        let rmse = rmse_windows(&temps, desired, slot_hours, RMSE_WINDOW_HOURS)?;
        let (power_mean_kw, power_std_kw) = mean_std(&power);
        let (temp_mean_c, temp_std_c) = mean_std(&temp);
        let (rmse_mean_c, rmse_std_c) = mean_std(&rmse.all_zone);
        Ok(Self {
            scenario: scenario.to_string(),
            seed,
            power_mean_kw,
            power_std_kw,
            temp_mean_c,
            temp_std_c,
            rmse_mean_c,
            rmse_std_c,
        })
    }
}

/// Comparison table with one row per report, in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<SummaryRow>,
}

pub fn summarize(rows: &[SummaryRow]) -> ComparisonTable {
    ComparisonTable { rows: rows.to_vec() }
}

impl ComparisonTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invariant(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Invariant(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_offset_gives_constant_rmse() {
        let temps = vec![vec![27.0, 22.0]; 48];
        let r = rmse_windows(&temps, &[25.0, 24.0], 0.5, 3.0).unwrap();
        assert_eq!(r.all_zone.len(), 8);
        assert!(r.all_zone.iter().all(|v| (v - 2.0).abs() < 1e-12));
        assert!(r.per_zone.iter().flatten().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn perfect_tracking_is_zero() {
        let temps = vec![vec![25.0]; 96];
        let r = rmse_windows(&temps, &[25.0], 0.5, 3.0).unwrap();
        assert_eq!(r.all_zone, vec![0.0; 16]);
    }

    #[test]
    fn hand_built_window() {
        let temps: Vec<Vec<f64>> = [1.0, 1.0, 1.0, 1.0, 2.0, 2.0].iter().map(|d| vec![25.0 + d]).collect();
        let r = rmse_windows(&temps, &[25.0], 0.5, 3.0).unwrap();
        assert!((r.all_zone[0] - 2.0f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn partial_window_rejected() {
        assert!(rmse_windows(&vec![vec![25.0]; 7], &[25.0], 0.5, 3.0).is_err());
        assert!(rmse_windows(&vec![vec![25.0]; 6], &[25.0], 0.5, 1.25).is_err());
    }

    #[test]
    fn mean_std_of_constant() {
        assert_eq!(mean_std(&[3.5; 10]), (3.5, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    #[test]
    fn table_has_six_statistics_per_row() {
        let row = SummaryRow {
            scenario: "mpc".into(),
            seed: 0,
            power_mean_kw: 1.0,
            power_std_kw: 0.5,
            temp_mean_c: 25.0,
            temp_std_c: 1.0,
            rmse_mean_c: 0.7,
            rmse_std_c: 0.1,
        };
        let csv = summarize(&[row]).to_csv().unwrap();
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(header.len(), 8);
        assert_eq!(lines.count(), 1);
    }
}
