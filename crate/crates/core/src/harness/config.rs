use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::ddpg::AgentConfig;
use crate::envs::{InitialConditions, Plant, RewardParams, TimeEncoding};
use crate::error::{Error, Result};
use crate::microgrid::{Battery, DieselGen, PvPanel};
use crate::mpc::MpcParams;
use crate::thermal::{Building, HvacParams, ZoneParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Full-model economic MPC.
    Mpc,
    /// DDPG agent dispatching the battery and tuning the MPC weights.
    Combo,
    /// DDPG agent commanding battery power and zone airflow directly.
    Drl,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Mpc, Scenario::Drl, Scenario::Combo];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Mpc => "mpc",
            Scenario::Combo => "combo",
            Scenario::Drl => "drl",
        }
    }

    pub fn is_learning(self) -> bool {
        self != Scenario::Mpc
    }

    pub fn default_epochs(self) -> usize {
        match self {
            Scenario::Mpc => 0,
            Scenario::Combo => 50,
            Scenario::Drl => 100,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mpc" => Ok(Scenario::Mpc),
            "combo" => Ok(Scenario::Combo),
            "drl" => Ok(Scenario::Drl),
            other => Err(Error::Config(format!("unknown scenario `{other}` (expected mpc, combo, or drl)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub weather: Option<PathBuf>,
    pub prices: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildingConfig {
    pub n_zones: usize,
    /// Explicit zone list; when empty, `n_zones` stock zones are generated.
    pub zones: Vec<ZoneParams>,
    pub hvac: HvacParams,
}

impl Default for BuildingConfig {
    fn default() -> Self {
        Self {
            n_zones: 7,
            zones: Vec::new(),
            hvac: HvacParams::default(),
        }
    }
}

/// Stock heterogeneous zones: capacitance, envelope, gains, set-points and
/// criticalities vary in short cycles so zones are not interchangeable.
pub fn default_zones(n: usize) -> Vec<ZoneParams> {
    const CRIT: [f64; 7] = [0.9, 0.7, 0.5, 0.3, 0.6, 0.8, 0.4];
    (0..n)
        .map(|i| ZoneParams {
            thermal_capacitance: 0.12 + 0.02 * (i % 4) as f64,
            envelope_resistance: 26.0 + 4.0 * (i % 3) as f64,
            internal_gain_kw: 0.04 + 0.01 * (i % 3) as f64,
            desired_temp_c: 24.0 + 0.5 * (i % 3) as f64,
            criticality: CRIT[i % CRIT.len()],
        })
        .collect()
}

impl BuildingConfig {
    pub fn zones(&self) -> Vec<ZoneParams> {
        if self.zones.is_empty() {
            default_zones(self.n_zones)
        } else {
            self.zones.clone()
        }
    }

    pub fn build(&self) -> Result<Building> {
        Building::new(self.zones(), self.hvac)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MicrogridConfig {
    pub battery: Battery,
    pub pv: PvPanel,
    pub diesel: DieselGen,
    pub p_const_kw: f64,
    pub sell_ratio: f64,
    /// MPC scenario only: run the diesel generator when the buy price
    /// exceeds this and PV plus battery cannot cover demand.
    pub dg_price_threshold: f64,
}

impl Default for MicrogridConfig {
    fn default() -> Self {
        Self {
            battery: Battery::default(),
            pv: PvPanel::default(),
            diesel: DieselGen::default(),
            p_const_kw: 0.5,
            sell_ratio: 0.3,
            dg_price_threshold: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub seeds: Vec<u64>,
    /// Training episodes; defaults per scenario when absent.
    pub epochs: Option<usize>,
    pub slot_hours: f64,
    pub slots_per_episode: usize,
    /// Days `[0, train_days)` are used for training.
    pub train_days: usize,
    /// The `test_days` days after the training block are used for
    /// evaluation.
    pub test_days: usize,
    pub output_dir: PathBuf,
    /// Parallel execution of independent work (days, seeds, MPC starts).
    pub parallel: bool,
    pub time_encoding: TimeEncoding,
    pub data: DataConfig,
    pub building: BuildingConfig,
    pub microgrid: MicrogridConfig,
    pub mpc: MpcParams,
    pub agent: AgentConfig,
    pub reward: RewardParams,
    pub initial: InitialConditions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: Scenario::Mpc,
            seeds: vec![0],
            epochs: None,
            slot_hours: crate::DEFAULT_SLOT_HOURS,
            slots_per_episode: crate::SLOTS_PER_DAY,
            train_days: 20,
            test_days: 5,
            output_dir: PathBuf::from("runs"),
            parallel: true,
            time_encoding: TimeEncoding::Fraction,
            data: DataConfig::default(),
            building: BuildingConfig::default(),
            microgrid: MicrogridConfig::default(),
            mpc: MpcParams::default(),
            agent: AgentConfig::default(),
            reward: RewardParams::default(),
            initial: InitialConditions::default(),
        }
    }
}

impl ExperimentConfig {
    /// Single-zone, small-network direct-control setup that trains in
    /// well under a minute.
    pub fn toy() -> Self {
        Self {
            scenario: Scenario::Drl,
            epochs: Some(100),
            building: BuildingConfig {
                n_zones: 1,
                zones: vec![ZoneParams {
                    criticality: 0.5,
                    ..ZoneParams::default()
                }],
                hvac: HvacParams::default(),
            },
            agent: AgentConfig {
                hidden: vec![64, 64],
                batch_size: 64,
                tau: 0.005,
                ..AgentConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str, source: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", source.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("serializing config: {e}")))
    }

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(self.scenario.default_epochs())
    }

    pub fn exec(&self) -> crate::Exec {
        if self.parallel {
            crate::Exec::default()
        } else {
            crate::Exec::Sequential
        }
    }

    pub fn train_day_indices(&self) -> Vec<usize> {
        (0..self.train_days).collect()
    }

    pub fn test_day_indices(&self) -> Vec<usize> {
        (self.train_days..self.train_days + self.test_days).collect()
    }

    /// Every problem with the configuration, reported together.
    pub fn validate(&self) -> Result<()> {
        let mut errs: Vec<String> = Vec::new();
        let mut check = |r: Result<()>| {
            if let Err(e) = r {
                errs.push(e.to_string());
            }
        };
        if self.schema_version != SCHEMA_VERSION {
            check(Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ))));
        }
        if self.seeds.is_empty() {
            check(Err(Error::Config("at least one seed is required".into())));
        }
        if self.epochs == Some(0) {
            check(Err(Error::Config("epochs must be positive".into())));
        }
        if !(self.slot_hours > 0.0) || ((self.slots_per_episode as f64) * self.slot_hours - 24.0).abs() > 1e-9 {
            check(Err(Error::Config(format!(
                "{} slots of {} h do not make a 24 h episode",
                self.slots_per_episode, self.slot_hours
            ))));
        }
        if self.test_days == 0 {
            check(Err(Error::Config("test_days must be positive".into())));
        }
        if self.scenario.is_learning() && self.train_days == 0 {
            check(Err(Error::Config("train_days must be positive for learning scenarios".into())));
        }
        for (name, p) in [("data.weather", &self.data.weather), ("data.prices", &self.data.prices)] {
            if let Some(p) = p {
                if !p.is_file() {
                    check(Err(Error::Config(format!("{name}: file {} does not exist", p.display()))));
                }
            }
        }
        if self.data.weather.is_some() != self.data.prices.is_some() {
            check(Err(Error::Config("data.weather and data.prices must be given together".into())));
        }
        if !self.building.zones.is_empty() && self.building.zones.len() != self.building.n_zones {
            check(Err(Error::Config(format!(
                "building.n_zones = {} but {} zones are listed",
                self.building.n_zones,
                self.building.zones.len()
            ))));
        }
        check(self.build_plant().map(|_| ()));
        check(self.mpc.validate().map_err(|e| Error::Config(format!("mpc: {e}"))));
        if (self.mpc.slot_hours - self.slot_hours).abs() > 1e-12 {
            check(Err(Error::Config("mpc.slot_hours must equal slot_hours".into())));
        }
        check(self.agent.validate());
        check(self.reward.validate());
        if self.initial.soc_kwh < 0.0 || self.initial.soc_kwh > self.microgrid.battery.capacity_kwh {
            check(Err(Error::Config("initial.soc_kwh outside the battery capacity".into())));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }

    pub fn build_plant(&self) -> Result<Plant> {
        let plant = Plant {
            building: self
                .building
                .build()
                .map_err(|e| Error::Config(format!("building: {e}")))?,
            battery: self.microgrid.battery,
            pv: self.microgrid.pv,
            diesel: self.microgrid.diesel,
            p_const_kw: self.microgrid.p_const_kw,
            sell_ratio: self.microgrid.sell_ratio,
            slot_hours: self.slot_hours,
        };
        plant
            .validate()
            .map_err(|e| Error::Config(format!("microgrid: {e}")))?;
        Ok(plant)
    }

    /// Weather and prices from explicit paths, else `$COHVAC_DATA_DIR`,
    /// else the bundled synthetic series.
    pub fn load_dataset(&self) -> Result<Arc<Dataset>> {
        let paths = match (&self.data.weather, &self.data.prices) {
            (Some(w), Some(p)) => Some((w.clone(), p.clone())),
            _ => std::env::var_os(data::DATA_DIR_ENV).map(|dir| {
                let dir = PathBuf::from(dir);
                (dir.join("weather.csv"), dir.join("prices.csv"))
            }),
        };
        let ds = match paths {
            Some((w, p)) => Dataset::new(data::load_weather(&w, self.slot_hours)?, data::load_prices(&p, self.slot_hours)?)?,
            None => Dataset::bundled(self.slot_hours)?,
        };
        let needed = self.train_days + self.test_days;
        if ds.num_days() < needed {
            return Err(Error::Config(format!(
                "dataset covers {} days but {} train + {} test days were requested",
                ds.num_days(),
                self.train_days,
                self.test_days
            )));
        }
        Ok(Arc::new(ds))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::toy();
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml_str(&text, Path::new("<mem>")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str("scenario = \"drl\"\nseeds = [3]\n[mpc]\nhorizon = 3\n", Path::new("x")).unwrap();
        assert_eq!(cfg.scenario, Scenario::Drl);
        assert_eq!(cfg.epochs(), 100);
        assert_eq!(cfg.mpc.horizon, 3);
        assert_eq!(cfg.building.n_zones, 7);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unknown_keys_and_versions_rejected() {
        assert!(ExperimentConfig::from_toml_str("bogus = 1\n", Path::new("x")).is_err());
        let cfg = ExperimentConfig::from_toml_str("schema_version = 2\n", Path::new("x")).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn validation_lists_every_problem() {
        let cfg = ExperimentConfig {
            seeds: vec![],
            epochs: Some(0),
            ..ExperimentConfig::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("seed") && msg.contains("epochs"), "{msg}");
    }

    #[test]
    fn missing_data_file_is_config_error() {
        let cfg = ExperimentConfig {
            data: DataConfig {
                weather: Some("/nonexistent/w.csv".into()),
                prices: Some("/nonexistent/p.csv".into()),
            },
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn stock_zones_are_valid() {
        assert!(BuildingConfig::default().build().is_ok());
        assert_eq!(default_zones(7).len(), 7);
    }
}
