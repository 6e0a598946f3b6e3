//! Experiment orchestration: closed-loop MPC runs, DDPG training and
//! deployment for both learning scenarios, invariant checks, metrics, and
//! run-directory artifacts.

mod config;
mod metrics;
pub mod slotlog;

pub use config::{default_zones, BuildingConfig, DataConfig, ExperimentConfig, MicrogridConfig, Scenario, SCHEMA_VERSION};
pub use metrics::{mean_std, rmse_windows, summarize, ComparisonTable, RmseSeries, SummaryRow, RMSE_WINDOW_HOURS};

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::ddpg::{DdpgAgent, TrainingLog};
use crate::envs::{ComboEnv, Environment, Plant, PureEnv, SlotCommand, SlotRecord};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::microgrid::MicrogridState;
use crate::mpc::{Forecast, MpcController, StorageModel};

/// Power-balance tolerance, kW.
pub const BALANCE_TOL_KW: f64 = 1e-9;

/// Checks every slot against the plant's physical envelope.
pub fn check_invariants(plant: &Plant, records: &[SlotRecord]) -> Result<()> {
    let h = &plant.building.hvac;
    let b = &plant.battery;
    for r in records {
        let at = || format!("day {} slot {}", r.day, r.slot);
        if !(r.balance_residual_kw.abs() < BALANCE_TOL_KW) {
            return Err(Error::Invariant(format!("{}: power balance residual {}", at(), r.balance_residual_kw)));
        }
        if !(0.0..=b.capacity_kwh).contains(&r.soc_kwh) {
            return Err(Error::Invariant(format!("{}: SOC {} outside [0, {}]", at(), r.soc_kwh, b.capacity_kwh)));
        }
        if r.mdots.iter().any(|m| !(h.mdot_min..=h.mdot_max).contains(m)) {
            return Err(Error::Invariant(format!("{}: airflow {:?} outside bounds", at(), r.mdots)));
        }
        if !(-b.max_discharge_kw..=b.max_charge_kw).contains(&r.p_ess_kw) {
            return Err(Error::Invariant(format!("{}: battery power {} outside rate limits", at(), r.p_ess_kw)));
        }
        if r.zone_temps_c.iter().any(|t| !t.is_finite()) {
            return Err(Error::Invariant(format!("{}: non-finite zone temperature", at())));
        }
    }
    Ok(())
}

/// Diesel command for the MPC scenario: cover the residual deficit when
/// power is expensive and PV plus the battery fall short.
pub fn diesel_rule(plant: &Plant, threshold: f64, price: f64, p_net: f64, soc: f64) -> f64 {
    if price <= threshold {
        return 0.0;
    }
    let max_discharge = -plant.battery.feasible_power(soc, -plant.battery.max_discharge_kw, plant.slot_hours);
    (p_net - max_discharge).clamp(0.0, plant.diesel.max_output_kw)
}

fn mpc_day(cfg: &ExperimentConfig, plant: &Plant, data: &Dataset, day: usize, exec: Exec) -> Result<Vec<SlotRecord>> {
    let h = cfg.mpc.horizon;
    let d = data.day(day, h)?;
    let mut world = plant.reset(&cfg.initial)?;
    let mut ctl = MpcController::new(cfg.mpc.clone(), exec);
    let storage = StorageModel {
        battery: plant.battery,
        pv: plant.pv,
        p_const_kw: plant.p_const_kw,
        sell_ratio: plant.sell_ratio,
    };
    let mut out = Vec::with_capacity(cfg.slots_per_episode);
    for t in 0..cfg.slots_per_episode {
        let forecast = Forecast {
            t_out: d.t_out[t..t + h].to_vec(),
            irradiance: d.irradiance[t..t + h].to_vec(),
            buy_price: d.buy_price[t..t + h].to_vec(),
        };
        let micro = MicrogridState {
            soc: world.soc,
            p_dg: world.p_dg,
            ..MicrogridState::default()
        };
        let act = ctl.receding_step(&plant.building, Some(&storage), &world.building, &micro, &forecast)?;
        let mdots = plant.clip_mdots(&act.mdots);
        let p_net = plant.building.power(&world.building, &mdots)? + plant.p_const_kw - plant.pv.power(d.irradiance[t])?;
        let u_dg = diesel_rule(plant, cfg.microgrid.dg_price_threshold, d.buy_price[t], p_net, world.soc);
        let cmd = SlotCommand {
            mdots,
            p_ess: act.p_ess.unwrap_or(0.0),
            u_dg,
        };
        out.push(plant.apply(&mut world, &d, &cmd)?);
    }
    Ok(out)
}

/// Closed-loop MPC over `days`; each day starts from the configured
/// initial conditions, so days run independently.
pub fn run_mpc(cfg: &ExperimentConfig, data: &Dataset, days: &[usize]) -> Result<Vec<SlotRecord>> {
    let plant = cfg.build_plant()?;
    let exec = cfg.exec();
    let per_day = exec.map(days, |&d| mpc_day(cfg, &plant, data, d, exec));
    Ok(per_day.into_iter().collect::<Result<Vec<_>>>()?.concat())
}

pub fn combo_env(cfg: &ExperimentConfig, data: Arc<Dataset>) -> Result<ComboEnv> {
    ComboEnv::new(
        cfg.build_plant()?,
        data,
        cfg.reward.clone(),
        cfg.mpc.clone(),
        cfg.initial,
        cfg.time_encoding,
        cfg.exec(),
    )
}

pub fn pure_env(cfg: &ExperimentConfig, data: Arc<Dataset>) -> Result<PureEnv> {
    PureEnv::new(cfg.build_plant()?, data, cfg.reward.clone(), cfg.initial)
}

fn train_on<E: Environment>(cfg: &ExperimentConfig, env: &mut E, seed: u64) -> Result<(DdpgAgent, TrainingLog)> {
    let mut agent = DdpgAgent::new(env.state_dim(), env.action_bounds(), cfg.agent.clone(), seed)?;
    let log = agent.train(env, cfg.epochs(), cfg.slots_per_episode, &cfg.train_day_indices())?;
    Ok((agent, log))
}

/// Trains a fresh agent for a learning scenario.
pub fn train(cfg: &ExperimentConfig, data: Arc<Dataset>, seed: u64) -> Result<(DdpgAgent, TrainingLog)> {
    match cfg.scenario {
        Scenario::Mpc => Err(Error::Config("the mpc scenario has nothing to train".into())),
        Scenario::Combo => train_on(cfg, &mut combo_env(cfg, data)?, seed),
        Scenario::Drl => train_on(cfg, &mut pure_env(cfg, data)?, seed),
    }
}

fn check_agent_fits<E: Environment>(env: &E, agent: &DdpgAgent) -> Result<()> {
    if env.state_dim() != agent.state_dim() || env.action_bounds() != *agent.bounds() {
        return Err(Error::Config(format!(
            "checkpoint expects a {}-dim state and {}-dim action but the configured environment has {} and {}",
            agent.state_dim(),
            agent.action_dim(),
            env.state_dim(),
            env.action_bounds().dim()
        )));
    }
    Ok(())
}

/// Per-slot records of the scenario's controller on `days`.
pub fn evaluate(cfg: &ExperimentConfig, data: Arc<Dataset>, agent: Option<&DdpgAgent>, days: &[usize]) -> Result<Vec<SlotRecord>> {
    let need_agent = || agent.ok_or_else(|| Error::Config(format!("scenario {} needs a trained agent", cfg.scenario)));
    let per_day = match cfg.scenario {
        Scenario::Mpc => return run_mpc(cfg, &data, days),
        Scenario::Combo => {
            let env = combo_env(cfg, data)?;
            check_agent_fits(&env, need_agent()?)?;
            need_agent()?.deploy(&env, days, cfg.exec())?
        }
        Scenario::Drl => {
            let env = pure_env(cfg, data)?;
            check_agent_fits(&env, need_agent()?)?;
            need_agent()?.deploy(&env, days, cfg.exec())?
        }
    };
    Ok(per_day.concat())
}

/// Episode returns of a uniform-random policy over the action box, one
/// episode per entry of `days`.
pub fn random_policy_returns<E: Environment>(env: &mut E, days: &[usize], seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = env.action_bounds();
    days.iter()
        .map(|&d| {
            env.reset(d)?;
            let mut ret = 0.0;
            for _ in 0..env.slots_per_episode() {
                ret += env.step(&bounds.sample_uniform(&mut rng))?.reward;
            }
            Ok(ret)
        })
        .collect()
}

/// Everything one seeded run produces.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub days: Vec<usize>,
    pub slot_hours: f64,
    pub desired_temps_c: Vec<f64>,
    pub slots: Vec<SlotRecord>,
    pub rmse: RmseSeries,
    pub summary: SummaryRow,
    pub data_fingerprint: String,
}

impl MetricsReport {
    pub fn new(cfg: &ExperimentConfig, seed: u64, data: &Dataset, days: Vec<usize>, slots: Vec<SlotRecord>) -> Result<Self> {
        let desired: Vec<f64> = cfg.building.zones().iter().map(|z| z.desired_temp_c).collect();
        let temps: Vec<Vec<f64>> = slots.iter().map(|s| s.zone_temps_c.clone()).collect();
        let rmse = rmse_windows(&temps, &desired, cfg.slot_hours, RMSE_WINDOW_HOURS)?;
        let summary = SummaryRow::from_slots(cfg.scenario.as_str(), seed, &slots, &desired, cfg.slot_hours)?;
        Ok(Self {
            scenario: cfg.scenario,
            seed,
            data_fingerprint: data.fingerprint(&days),
            days,
            slot_hours: cfg.slot_hours,
            desired_temps_c: desired,
            slots,
            rmse,
            summary,
        })
    }

    pub fn digest(&self) -> ReportDigest {
        ReportDigest {
            scenario: self.scenario,
            seed: self.seed,
            days: self.days.clone(),
            slots: self.slots.len(),
            data_fingerprint: self.data_fingerprint.clone(),
            summary: self.summary.clone(),
            rmse: self.rmse.clone(),
        }
    }
}

/// Machine-readable run summary (`summary.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDigest {
    pub scenario: Scenario,
    pub seed: u64,
    pub days: Vec<usize>,
    pub slots: usize,
    pub data_fingerprint: String,
    pub summary: SummaryRow,
    pub rmse: RmseSeries,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub report: MetricsReport,
    pub agent: Option<DdpgAgent>,
    pub training: Option<TrainingLog>,
}

/// Trains (if needed) and evaluates one seed on the held-out days.
pub fn run_scenario(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let data = cfg.load_dataset()?;
    let (agent, training) = if cfg.scenario.is_learning() {
        let (a, l) = train(cfg, data.clone(), seed)?;
        (Some(a), Some(l))
    } else {
        (None, None)
    };
    let days = cfg.test_day_indices();
    let slots = evaluate(cfg, data.clone(), agent.as_ref(), &days)?;
    check_invariants(&cfg.build_plant()?, &slots)?;
    let report = MetricsReport::new(cfg, seed, &data, days, slots)?;
    Ok(SeedRun { report, agent, training })
}

/// All configured seeds; independent seeds run concurrently.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    cfg.exec().map(&cfg.seeds, |&s| run_scenario(cfg, s)).into_iter().collect()
}

pub fn run_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.output_dir.join(format!("{}-seed{seed}", cfg.scenario))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Config snapshot pinned to a single seed.
pub fn snapshot(cfg: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seeds: vec![seed],
        ..cfg.clone()
    }
}

pub fn write_report(dir: &Path, cfg: &ExperimentConfig, report: &MetricsReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    write_file(&dir.join("config.toml"), &snapshot(cfg, report.seed).to_toml()?)?;
    write_file(&dir.join("slots.csv"), &slotlog::slots_to_string(&report.slots)?)?;
    write_file(&dir.join("summary.csv"), &summarize(std::slice::from_ref(&report.summary)).to_csv()?)?;
    write_file(&dir.join("summary.json"), &serde_json::to_string_pretty(&report.digest())?)?;
    write_file(&dir.join("rmse.csv"), &rmse_csv(std::slice::from_ref(&report.digest()))?)?;
    Ok(())
}

/// Writes the full artifact set of a run into `dir`.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, run: &SeedRun) -> Result<()> {
    write_report(dir, cfg, &run.report)?;
    if let Some(agent) = &run.agent {
        agent.save(&dir.join("checkpoint.json"))?;
    }
    if let Some(log) = &run.training {
        log.write_csv(&dir.join("training_log.csv"))?;
    }
    Ok(())
}

/// Long-format windowed RMSE: one row per (run, window, zone), with zone
/// `all` for the pooled series.
pub fn rmse_csv(digests: &[ReportDigest]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scenario", "seed", "window", "start_hour", "zone", "rmse_c"])?;
    for d in digests {
        let wh = d.rmse.window_hours;
        let mut emit = |zone: String, series: &[f64]| -> Result<()> {
            for (k, v) in series.iter().enumerate() {
                w.write_record([
                    d.scenario.to_string(),
                    d.seed.to_string(),
                    k.to_string(),
                    (k as f64 * wh).to_string(),
                    zone.clone(),
                    v.to_string(),
                ])?;
            }
            Ok(())
        };
        for (i, s) in d.rmse.per_zone.iter().enumerate() {
            emit((i + 1).to_string(), s)?;
        }
        emit("all".into(), &d.rmse.all_zone)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invariant(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Invariant(e.to_string()))
}

pub fn load_digest(run: &Path) -> Result<ReportDigest> {
    let path = if run.is_dir() { run.join("summary.json") } else { run.to_path_buf() };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Merges run summaries into one table plus windowed RMSE series. Runs
/// evaluated on different data are refused.
pub fn compare(runs: &[PathBuf], out_dir: &Path) -> Result<ComparisonTable> {
    if runs.len() < 2 {
        return Err(Error::Validation("compare needs at least two reports".into()));
    }
    let digests = runs.iter().map(|r| load_digest(r)).collect::<Result<Vec<_>>>()?;
    if let Some((i, _)) = digests
        .iter()
        .enumerate()
        .find(|(_, d)| d.data_fingerprint != digests[0].data_fingerprint || d.days != digests[0].days)
    {
        return Err(Error::Validation(format!(
            "{} was evaluated on different data than {}",
            runs[i].display(),
            runs[0].display()
        )));
    }
    let table = summarize(&digests.iter().map(|d| d.summary.clone()).collect::<Vec<_>>());
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    write_file(&out_dir.join("comparison.csv"), &table.to_csv()?)?;
    write_file(&out_dir.join("comparison.json"), &table.to_json()?)?;
    write_file(&out_dir.join("rmse_windows.csv"), &rmse_csv(&digests)?)?;
    Ok(table)
}

/// Recomputes `summary.csv` from a run directory's config snapshot and
/// slot log.
pub fn recompute_summary_csv(run: &Path) -> Result<String> {
    let cfg = ExperimentConfig::load(&run.join("config.toml"))?;
    let slots = slotlog::load_slots(&run.join("slots.csv"))?;
    let desired: Vec<f64> = cfg.building.zones().iter().map(|z| z.desired_temp_c).collect();
    let row = SummaryRow::from_slots(cfg.scenario.as_str(), cfg.seeds[0], &slots, &desired, cfg.slot_hours)?;
    summarize(&[row]).to_csv()
}

/// Open-loop stepping with constant commands, for model debugging.
pub fn simulate(cfg: &ExperimentConfig, day: usize, mdot: f64, p_ess: f64, u_dg: f64) -> Result<Vec<SlotRecord>> {
    let plant = cfg.build_plant()?;
    let data = cfg.load_dataset()?;
    let d = data.day(day, 0)?;
    let mut world = plant.reset(&cfg.initial)?;
    let cmd = SlotCommand {
        mdots: vec![mdot; plant.building.n_zones()],
        p_ess,
        u_dg,
    };
    (0..cfg.slots_per_episode).map(|_| plant.apply(&mut world, &d, &cmd)).collect()
}
